"""Parameter containers, Adam, EMA shadows and spectral normalization."""
from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import Tensor, matmul, mul, pow_const


class ParamSet:
    """Ordered, named collection of trainable tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data, dtype=np.float64) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data, dtype=dtype), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def copy_values(self) -> "ParamSet":
        out = ParamSet()
        for name, t in self._params.items():
            out.add(name, t.data.copy(), dtype=t.data.dtype)
        return out

    def state_bytes(self) -> bytes:
        """Concatenated raw bytes of all parameters, for change detection."""
        return b"".join(t.data.tobytes() for t in self._params.values())


class Adam:
    """Bias-corrected Adam over a ParamSet; zeroes gradients after stepping."""

    def __init__(self, lr=2e-4, beta1=0.0, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: ParamSet) -> None:
        for name, p in params:
            if p.grad is None:
                raise ValueError(f"adam step: parameter {name!r} has no gradient")
        self.t += 1
        for name, p in params:
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(p.data)
                self._v[name] = np.zeros_like(p.data)
            kernels.adam_update(
                p.data, p.grad, m, self._v[name], self.t,
                self.lr, self.beta1, self.beta2, self.eps,
            )
        params.zero_grads()

    def state(self):
        return {"t": self.t, "m": dict(self._m), "v": dict(self._v)}

    def load_state(self, state) -> None:
        self.t = int(state["t"])
        self._m = {k: np.array(v) for k, v in state["m"].items()}
        self._v = {k: np.array(v) for k, v in state["v"].items()}


def ema_update(shadow: ParamSet, live: ParamSet, decay: float) -> None:
    """shadow <- decay*shadow + (1-decay)*live, parameter by parameter."""
    if not 0.0 <= decay < 1.0:
        raise ValueError(f"ema decay must be in [0, 1), got {decay}")
    if shadow.names() != live.names():
        raise ValueError("ema update: shadow and live parameter sets differ")
    for name, s in shadow:
        l = live[name]
        if s.data.shape != l.data.shape:
            raise ValueError(f"ema update: shape mismatch for {name!r}")
        kernels.ema_update(s.data, l.data, decay)


SIGMA_FLOOR = 1e-12


def spectral_normalize(w: np.ndarray, u: np.ndarray, n_iter: int = 1):
    """Divide a matrix by its power-iteration top singular value estimate.

    Returns (w_normalized, u_updated, sigma).  A zero matrix gets the
    1e-12 sigma floor instead of an error.
    """
    w = np.asarray(w)
    if w.ndim != 2:
        raise ValueError(f"spectral_normalize: need a matrix, got shape {w.shape}")
    u, _, sigma = _power_iterate(w, u, n_iter)
    return w / max(sigma, SIGMA_FLOOR), u, sigma


def _power_iterate(w: np.ndarray, u: np.ndarray, n_iter: int):
    for _ in range(n_iter):
        v = w.T @ u
        v = v / max(np.linalg.norm(v), SIGMA_FLOOR)
        u = w @ v
        u = u / max(np.linalg.norm(u), SIGMA_FLOOR)
    sigma = float(u @ (w @ v))
    return u, v, sigma


def sn_weight(w: Tensor, u: np.ndarray, update: bool = True) -> Tensor:
    """Spectrally normalized view of a weight for use inside a tape.

    Runs one power iteration on the raw values (updating ``u`` in place
    only when ``update``), then divides the tensor by sigma = u^T W v with
    u, v held constant, so gradients flow through the normalization as
    usual.  Eval-time callers pass update=False, which leaves the stored
    vector untouched and makes repeated calls bit-identical.
    """
    u_new, v, sigma = _power_iterate(w.data, u, 1)
    if update:
        u[:] = u_new
    if sigma < SIGMA_FLOOR:
        return mul(w, np.full((1, 1), 1.0 / SIGMA_FLOOR))
    ut = Tensor(u_new[None, :], dtype=w.data.dtype)
    vt = Tensor(v[:, None], dtype=w.data.dtype)
    sigma_t = matmul(matmul(ut, w), vt)  # (1,1), differentiable in w
    return mul(w, pow_const(sigma_t, -1.0))
