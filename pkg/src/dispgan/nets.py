"""Network architectures.

Generator: MLP with a hierarchical latent (z split into one chunk per
layer plus a trunk chunk) and conditional modulation: each hidden layer is
batch-standardized, then scaled/shifted by a zero-initialized head fed
with that layer's z chunk plus the embedded prior vector.

Discriminator: trunk ``feat = trunk(x)``, unconditional linear head, and a
projection head that scores a prior vector against the trunk features:

    score(x, y) = emb(y) . feat(x) + linear(feat(x))

Feature extractors are frozen plain-numpy forward maps; gradients cannot
reach them by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import Dataset
from .optim import Adam, ParamSet, sn_weight
from .tensor import Tensor

MODULATION_MODES = ("prior", "self_modulation", "per_instance_embedding", "none")


@dataclass
class GeneratorSpec:
    # desk-scale defaults; full-scale practice uses latent 120 and a
    # conditioning width of 128
    latent_dim: int = 16
    n_layers: int = 3
    hidden: int = 64
    out_dim: int = 2
    cond_dim: int = 16
    prior_dim: int = 8
    mode: str = "prior"
    n_instances: int = 0          # table rows for per_instance_embedding
    spectral_norm: bool = True
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.mode not in MODULATION_MODES:
            raise ValueError(f"unknown modulation mode {self.mode!r}")
        if self.latent_dim % (self.n_layers + 1) != 0:
            raise ValueError(
                f"latent_dim {self.latent_dim} must be divisible by "
                f"n_layers+1 = {self.n_layers + 1} for the hierarchical latent"
            )
        if self.mode == "per_instance_embedding" and self.n_instances < 1:
            raise ValueError("per_instance_embedding needs n_instances >= 1")

    @property
    def chunk(self) -> int:
        return self.latent_dim // (self.n_layers + 1)


def _init_matrix(rng, n_in, n_out, gain=1.0):
    return rng.normal(0.0, gain / np.sqrt(n_in), size=(n_in, n_out))


def _unit(rng, n):
    u = rng.normal(size=n)
    return u / np.linalg.norm(u)


class Generator:
    """Conditional generator; parameters live in ``self.params``."""

    def __init__(self, spec: GeneratorSpec, seed: int = 0, dtype=np.float64):
        self.spec = spec
        self.dtype = dtype
        self.params = ParamSet()
        self.sn_u: dict[str, np.ndarray] = {}
        self.running_mean: list[np.ndarray] = []
        self.running_var: list[np.ndarray] = []
        rng = np.random.default_rng(seed)
        s = spec

        if s.mode in ("prior", "per_instance_embedding"):
            self.params.add("g.emb.W", _init_matrix(rng, s.prior_dim, s.cond_dim), dtype)
            self.sn_u["g.emb.W"] = _unit(rng, s.prior_dim)
        if s.mode == "per_instance_embedding":
            self.params.add(
                "g.table", rng.normal(0.0, 1.0, size=(s.n_instances, s.prior_dim)), dtype
            )

        widths = [s.chunk] + [s.hidden] * s.n_layers
        for l in range(1, s.n_layers + 1):
            self.params.add(f"g.layer{l}.W", _init_matrix(rng, widths[l - 1], widths[l]), dtype)
            self.params.add(f"g.layer{l}.b", np.zeros(widths[l]), dtype)
            self.sn_u[f"g.layer{l}.W"] = _unit(rng, widths[l - 1])
            mod_in = self._mod_in_dim()
            if mod_in:
                # zero init: modulation starts as the identity
                self.params.add(f"g.layer{l}.mod.W", np.zeros((mod_in, 2 * widths[l])), dtype)
                self.params.add(f"g.layer{l}.mod.b", np.zeros(2 * widths[l]), dtype)
            self.running_mean.append(np.zeros(widths[l]))
            self.running_var.append(np.ones(widths[l]))
        self.params.add("g.out.W", _init_matrix(rng, s.hidden, s.out_dim), dtype)
        self.params.add("g.out.b", np.zeros(s.out_dim), dtype)
        self.sn_u["g.out.W"] = _unit(rng, s.hidden)

    def _mod_in_dim(self) -> int:
        s = self.spec
        if s.mode in ("prior", "per_instance_embedding"):
            return s.chunk + s.cond_dim
        if s.mode == "self_modulation":
            return s.chunk
        return 0

    def _weight(self, name: str, params: ParamSet, training: bool = True) -> Tensor:
        w = params[name]
        if self.spec.spectral_norm and name in self.sn_u:
            return sn_weight(w, self.sn_u[name], update=training)
        return w

    def embed_prior(self, prior, params: ParamSet | None = None,
                    training: bool = True) -> Tensor:
        params = params or self.params
        prior = prior if isinstance(prior, Tensor) else Tensor(
            np.asarray(prior, dtype=self.dtype))
        if prior.shape[1] != self.spec.prior_dim:
            raise T.ShapeError(
                f"embed_prior: prior dim {prior.shape[1]} != {self.spec.prior_dim}")
        return T.matmul(prior, self._weight("g.emb.W", params, training))

    def forward(self, z, prior=None, training: bool = True,
                params: ParamSet | None = None, layer_conds=None) -> Tensor:
        """Generate a batch.

        ``prior`` is a (b, prior_dim) array or Tensor for the prior and
        per-instance modes (callers resolve instance indices to table rows
        so gradients can reach the table), and is ignored otherwise.
        ``layer_conds`` overrides the embedded prior with one (b, cond_dim)
        tensor per layer (the inversion path).
        """
        params = params or self.params
        s = self.spec
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=self.dtype))
        if z.data.ndim != 2 or z.shape[1] != s.latent_dim:
            raise T.ShapeError(f"gen forward: z shape {z.shape} != (b, {s.latent_dim})")
        b = z.shape[0]

        cond = None
        if layer_conds is None and s.mode in ("prior", "per_instance_embedding"):
            vec = prior if isinstance(prior, Tensor) else Tensor(
                np.asarray(prior, dtype=self.dtype))
            if vec.data.ndim != 2 or vec.shape[0] != b:
                raise T.ShapeError(
                    f"gen forward: prior batch {vec.shape} != ({b}, {s.prior_dim})")
            cond = self.embed_prior(vec, params, training)

        chunks = [T.slice_cols(z, i * s.chunk, (i + 1) * s.chunk)
                  for i in range(s.n_layers + 1)]
        h = chunks[0]
        for l in range(1, s.n_layers + 1):
            w = self._weight(f"g.layer{l}.W", params, training)
            h = T.add(T.matmul(h, w), params[f"g.layer{l}.b"])
            if training:
                h, bm, bv = T.batch_standardize(h, eps=s.bn_eps)
                m = s.bn_momentum
                self.running_mean[l - 1] += m * (bm - self.running_mean[l - 1])
                self.running_var[l - 1] += m * (bv - self.running_var[l - 1])
            else:
                rm = self.running_mean[l - 1]
                rv = self.running_var[l - 1]
                h = T.mul(T.sub(h, Tensor(rm.astype(self.dtype))),
                          Tensor((1.0 / np.sqrt(rv + s.bn_eps)).astype(self.dtype)))
            if s.mode != "none":
                if layer_conds is not None:
                    mod_in = T.concat([chunks[l], layer_conds[l - 1]], axis=1) \
                        if s.mode in ("prior", "per_instance_embedding") else chunks[l]
                elif cond is not None:
                    mod_in = T.concat([chunks[l], cond], axis=1)
                else:
                    mod_in = chunks[l]
                gb = T.add(T.matmul(mod_in, params[f"g.layer{l}.mod.W"]),
                           params[f"g.layer{l}.mod.b"])
                gamma = T.slice_cols(gb, 0, h.shape[1])
                beta = T.slice_cols(gb, h.shape[1], 2 * h.shape[1])
                h = T.scale_shift(h, gamma, beta)
            h = T.relu(h)
        out = T.add(T.matmul(h, self._weight("g.out.W", params, training)),
                    params["g.out.b"])
        return T.tanh(out)


@dataclass
class DiscriminatorSpec:
    # desk-scale defaults; full-scale trunks expose 1024-1536 features
    in_dim: int = 2
    hidden: int = 64
    feat_dim: int = 64
    prior_dim: int = 8
    n_layers: int = 3
    leaky_slope: float = 0.2
    spectral_norm: bool = True


class Discriminator:
    """Projection discriminator D(x, y) = emb(y).feat(x) + linear(feat(x))."""

    def __init__(self, spec: DiscriminatorSpec, seed: int = 0, dtype=np.float64):
        self.spec = spec
        self.dtype = dtype
        self.params = ParamSet()
        self.sn_u: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        widths = [spec.in_dim] + [spec.hidden] * (spec.n_layers - 1) + [spec.feat_dim]
        for l in range(1, spec.n_layers + 1):
            self.params.add(f"d.layer{l}.W", _init_matrix(rng, widths[l - 1], widths[l]), dtype)
            self.params.add(f"d.layer{l}.b", np.zeros(widths[l]), dtype)
            self.sn_u[f"d.layer{l}.W"] = _unit(rng, widths[l - 1])
        self.params.add("d.linear.W", _init_matrix(rng, spec.feat_dim, 1), dtype)
        self.params.add("d.linear.b", np.zeros(1), dtype)
        self.sn_u["d.linear.W"] = _unit(rng, spec.feat_dim)
        # projection head is a pure matrix: emb(0) = 0 keeps the
        # unconditional score exactly equal to the linear head
        self.params.add("d.emb.W", _init_matrix(rng, spec.prior_dim, spec.feat_dim), dtype)
        self.sn_u["d.emb.W"] = _unit(rng, spec.prior_dim)

    def _weight(self, name: str, training: bool = True) -> Tensor:
        w = self.params[name]
        if self.spec.spectral_norm:
            return sn_weight(w, self.sn_u[name], update=training)
        return w

    def features(self, x, training: bool = True) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if x.data.ndim != 2 or x.shape[1] != self.spec.in_dim:
            raise T.ShapeError(f"disc forward: x shape {x.shape} != (b, {self.spec.in_dim})")
        h = x
        for l in range(1, self.spec.n_layers + 1):
            h = T.add(T.matmul(h, self._weight(f"d.layer{l}.W", training)),
                      self.params[f"d.layer{l}.b"])
            h = T.leaky_relu(h, self.spec.leaky_slope)
        return h

    def forward(self, x, prior, training: bool = True):
        """Scores and trunk features: (score (b,1), feat (b,feat_dim))."""
        feat = self.features(x, training)
        prior = prior if isinstance(prior, Tensor) else Tensor(
            np.asarray(prior, dtype=self.dtype))
        if prior.data.ndim != 2 or prior.shape[0] != feat.shape[0] \
                or prior.shape[1] != self.spec.prior_dim:
            raise T.ShapeError(
                f"disc forward: prior shape {prior.shape} != "
                f"({feat.shape[0]}, {self.spec.prior_dim})")
        proj = T.rowwise_inner(T.matmul(prior, self._weight("d.emb.W", training)), feat)
        uncond = T.add(T.matmul(feat, self._weight("d.linear.W", training)),
                       self.params["d.linear.b"])
        return T.add(proj, uncond), feat

    def score_unconditional(self, x) -> np.ndarray:
        """Linear-head score with no projection term (zero prior)."""
        with T.no_grad():
            feat = self.features(x, training=False)
            out = T.add(T.matmul(feat, self._weight("d.linear.W", training=False)),
                        self.params["d.linear.b"])
        return out.data[:, 0]


# ---------------------------------------------------------------------------
# feature extractors


class FeatureExtractor:
    """Frozen map C: R^p -> R^d evaluated with plain numpy."""

    def __init__(self, kind: str, in_dim: int, out_dim: int,
                 weights: list[np.ndarray] | None = None,
                 whiten: tuple | None = None,
                 train_accuracy: float | None = None):
        self.kind = kind
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weights = weights or []   # alternating W, b pairs per layer
        self.whiten = whiten           # (mean, transform) for identity_whitened
        self.train_accuracy = train_accuracy

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"extractor: input shape {x.shape} != (n, {self.in_dim})")
        if self.kind == "identity_whitened":
            mean, transform = self.whiten
            return (x - mean) @ transform
        h = x
        for w, b in zip(self.weights[0::2], self.weights[1::2]):
            h = np.tanh(h @ w + b)
        return h

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        if self.whiten is not None:
            out["whiten.mean"], out["whiten.transform"] = self.whiten
        for i, arr in enumerate(self.weights):
            out[f"layer{i}"] = arr
        return out


@dataclass
class ExtractorSpec:
    out_dim: int = 8
    hidden: int = 32
    n_hidden: int = 2
    steps: int = 1500
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    kind: str = "pretext_classifier"   # or random_frozen / identity_whitened


def pretrain_extractor(source: Dataset, spec: ExtractorSpec) -> FeatureExtractor:
    """Train a small classifier on the source and freeze its feature map.

    ``random_frozen`` skips training; ``identity_whitened`` returns the
    whitening map of the source statistics (requires out_dim == p).
    """
    p = source.p
    if spec.kind == "identity_whitened":
        x = source.x64()
        mean = x.mean(axis=0)
        cov = np.cov(x, rowvar=False, ddof=0)
        evals, evecs = np.linalg.eigh(np.atleast_2d(cov))
        transform = evecs @ np.diag(1.0 / np.sqrt(np.maximum(evals, 1e-12))) @ evecs.T
        return FeatureExtractor("identity_whitened", p, p, whiten=(mean, transform))

    rng = np.random.default_rng(spec.seed)
    dims = [p] + [spec.hidden] * (spec.n_hidden - 1) + [spec.out_dim]
    weights = []
    for a, b in zip(dims[:-1], dims[1:]):
        weights.append(_init_matrix(rng, a, b))
        weights.append(np.zeros(b))

    if spec.kind == "random_frozen":
        return FeatureExtractor("random_frozen", p, spec.out_dim, weights=weights)
    if spec.kind != "pretext_classifier":
        raise ValueError(f"unknown extractor kind {spec.kind!r}")

    if source.labels is None:
        raise ValueError("pretext pretraining needs a labeled source dataset")
    classes = np.unique(source.labels)
    if len(classes) < 2:
        raise ValueError("pretext pretraining needs at least 2 source classes")
    n_classes = int(classes.max()) + 1

    params = ParamSet()
    for i, arr in enumerate(weights):
        params.add(f"c.{i}", arr)
    params.add("c.head.W", _init_matrix(rng, spec.out_dim, n_classes))
    params.add("c.head.b", np.zeros(n_classes))

    x64 = source.x64()
    labels = source.labels.astype(np.int64)
    opt = Adam(lr=spec.lr, beta1=0.9, beta2=0.999)
    n = source.n

    def logits_of(xb):
        h = Tensor(xb)
        for i in range(0, len(weights), 2):
            h = T.tanh(T.add(T.matmul(h, params[f"c.{i}"]), params[f"c.{i + 1}"]))
        return T.add(T.matmul(h, params["c.head.W"]), params["c.head.b"]), h

    for _ in range(spec.steps):
        idx = rng.integers(0, n, size=min(spec.batch_size, n))
        logits, _ = logits_of(x64[idx])
        onehot = np.zeros((len(idx), n_classes))
        onehot[np.arange(len(idx)), labels[idx]] = 1.0
        nll = T.sub(T.logsumexp(logits, axis=1),
                    T.asum(T.mul(logits, Tensor(onehot)), axis=1))
        T.backward(T.mean(nll))
        opt.step(params)

    with T.no_grad():
        logits, _ = logits_of(x64)
    acc = float((logits.data.argmax(axis=1) == labels).mean())
    frozen = [params[f"c.{i}"].data.copy() for i in range(len(weights))]
    return FeatureExtractor("pretext_classifier", p, spec.out_dim,
                            weights=frozen, train_accuracy=acc)
