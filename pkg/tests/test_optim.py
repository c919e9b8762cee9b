"""Adam, EMA and spectral-normalization behavior."""
import numpy as np
import pytest

from dispgan import tensor as T
from dispgan.optim import Adam, ParamSet, ema_update, sn_weight, spectral_normalize


def make_params(values):
    ps = ParamSet()
    for name, v in values.items():
        ps.add(name, v)
    return ps


def test_adam_first_step_is_minus_lr():
    ps = make_params({"w": np.array([0.0])})
    ps["w"].grad = np.array([1.0])
    opt = Adam(lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-12)
    opt.step(ps)
    assert ps["w"].data[0] == pytest.approx(-1e-3, rel=1e-6)


def test_adam_zero_gradient_is_identity():
    ps = make_params({"w": np.array([1.5, -2.0])})
    ps["w"].grad = np.zeros(2)
    Adam(lr=0.1).step(ps)
    assert np.array_equal(ps["w"].data, [1.5, -2.0])


def test_adam_missing_grad_names_parameter():
    ps = make_params({"good": np.ones(2), "bad": np.ones(2)})
    ps["good"].grad = np.ones(2)
    with pytest.raises(ValueError, match="bad"):
        Adam().step(ps)


def test_adam_descends_quadratic():
    # scalar descent oracle: 100 steps on f(w)=w^2 from w=1 reaches |w| < 0.1
    ps = make_params({"w": np.array([1.0])})
    opt = Adam(lr=0.05, beta1=0.9, beta2=0.999)
    for _ in range(100):
        w = ps["w"]
        T.backward(T.asum(T.mul(w, w)))
        opt.step(ps)
    assert abs(ps["w"].data[0]) < 0.1


def test_adam_zeroes_grads_and_counts_steps():
    ps = make_params({"w": np.ones(3)})
    opt = Adam()
    for t in range(1, 4):
        ps["w"].grad = np.ones(3)
        opt.step(ps)
        assert opt.t == t
        assert ps["w"].grad is None


def test_ema_basic_and_geometric_series():
    shadow = make_params({"w": np.zeros(4)})
    live = make_params({"w": np.ones(4)})
    ema_update(shadow, live, 0.999)
    assert np.allclose(shadow["w"].data, 0.001)

    # n updates against a constant live value v: shadow = v*(1 - decay^n)
    shadow = make_params({"w": np.zeros(1)})
    live = make_params({"w": np.full(1, 3.0)})
    decay, n = 0.9, 17
    for _ in range(n):
        ema_update(shadow, live, decay)
    assert shadow["w"].data[0] == pytest.approx(3.0 * (1 - decay**n), rel=1e-12)


def test_ema_decay_zero_copies_live():
    shadow = make_params({"w": np.full(3, 9.0)})
    live = make_params({"w": np.array([1.0, 2.0, 3.0])})
    ema_update(shadow, live, 0.0)
    assert np.allclose(shadow["w"].data, live["w"].data)


def test_ema_structure_mismatch():
    with pytest.raises(ValueError, match="differ"):
        ema_update(make_params({"a": np.ones(2)}), make_params({"b": np.ones(2)}), 0.5)
    bad = make_params({"a": np.ones(3)})
    with pytest.raises(ValueError, match="shape"):
        ema_update(make_params({"a": np.ones(2)}), bad, 0.5)


def test_spectral_normalize_diagonal():
    w = np.diag([3.0, 1.0])
    u = np.array([1.0, 0.0])
    for _ in range(50):
        w_n, u, _ = spectral_normalize(np.diag([3.0, 1.0]), u)
    assert np.linalg.svd(w_n, compute_uv=False)[0] == pytest.approx(1.0, abs=1e-6)


def test_spectral_normalize_unit_sigma_is_noop():
    rng = np.random.default_rng(11)
    q, _ = np.linalg.qr(rng.normal(size=(5, 5)))  # orthogonal: all sigma = 1
    u = rng.normal(size=5)
    u /= np.linalg.norm(u)
    for _ in range(50):
        w_n, u, _ = spectral_normalize(q, u)
    assert np.allclose(w_n, q, atol=1e-6)


def test_spectral_normalize_zero_matrix_floors():
    w_n, u, sigma = spectral_normalize(np.zeros((3, 3)), np.array([1.0, 0.0, 0.0]))
    assert np.array_equal(w_n, np.zeros((3, 3)))
    assert sigma <= 1e-12


def test_power_iteration_matches_eigendecomposition_oracle():
    # oracle: top singular value via eigendecomposition of W^T W
    rng = np.random.default_rng(2024)
    for _ in range(5):
        w = rng.normal(size=(8, 8))
        sigma_true = float(np.sqrt(np.linalg.eigvalsh(w.T @ w).max()))
        u = rng.normal(size=8)
        u /= np.linalg.norm(u)
        sigma = None
        for _ in range(50):
            _, u, sigma = spectral_normalize(w, u)
        assert sigma == pytest.approx(sigma_true, rel=1e-3)


def test_sn_weight_normalizes_and_backprops():
    rng = np.random.default_rng(4)
    w = T.Tensor(rng.normal(size=(6, 4)), requires_grad=True)
    u = rng.normal(size=6)
    u /= np.linalg.norm(u)
    for _ in range(60):
        w_bar = sn_weight(w, u)
    assert np.linalg.svd(w_bar.data, compute_uv=False)[0] == pytest.approx(1.0, abs=1e-4)
    T.backward(T.mean(w_bar))
    assert w.grad is not None and np.all(np.isfinite(w.grad))
