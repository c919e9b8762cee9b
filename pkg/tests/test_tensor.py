"""Autodiff engine tests: op semantics plus the finite-difference oracle."""
import numpy as np
import pytest

from dispgan import tensor as T


def finite_diff_grad(f, arrays, h=1e-5):
    """Central finite differences of a scalar function of several arrays.

    Independent of the tape: evaluates f twice per entry.
    """
    grads = []
    for k, base in enumerate(arrays):
        g = np.zeros_like(base)
        flat = base.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def assert_grads_close(ad, fd, rel=1e-4):
    for a, b in zip(ad, fd):
        denom = np.maximum(np.abs(b), 1.0)
        err = np.abs(a - b) / denom
        assert err.max() < rel, f"max rel err {err.max():.3e}"


# ---------------------------------------------------------------------------
# spec'd single-op values


def test_hinge_margin_satisfied():
    assert T.hinge(T.Tensor(np.array(2.0)), -1).item() == 0.0


def test_softplus_at_zero():
    assert T.softplus(T.Tensor(np.array(0.0))).item() == pytest.approx(np.log(2.0), abs=1e-12)


def test_matmul_identity():
    out = T.matmul(T.Tensor(np.eye(2)), T.Tensor(np.array([[3.0], [4.0]])))
    assert np.array_equal(out.data, np.array([[3.0], [4.0]]))


def test_backward_sum_of_squares():
    w = T.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    T.backward(T.asum(T.mul(w, w)))
    assert np.allclose(w.grad, [2.0, 4.0])


def test_backward_mean():
    w = T.Tensor(np.zeros(4), requires_grad=True)
    T.backward(T.mean(w))
    assert np.allclose(w.grad, [0.25] * 4)


def test_backward_rejects_nonscalar_root():
    w = T.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        T.backward(T.mul(w, w))


def test_shape_error_names_op():
    a = T.Tensor(np.ones((2, 3)))
    b = T.Tensor(np.ones((4, 5)))
    with pytest.raises(T.ShapeError, match="matmul"):
        T.matmul(a, b)
    with pytest.raises(T.ShapeError, match="add"):
        T.add(a, T.Tensor(np.ones((3, 4))))


def test_nonfinite_detection_in_debug_mode():
    T.set_debug_checks(True)
    try:
        x = T.Tensor(np.array([1.0, np.inf]))
        with pytest.raises(T.NonFiniteError):
            T.mul(x, x)
    finally:
        T.set_debug_checks(False)


def test_grad_accumulates_additively():
    w = T.Tensor(np.array([3.0]), requires_grad=True)
    y = T.add(T.mul(w, w), T.scale(w, 2.0))  # w^2 + 2w -> grad 2w + 2
    T.backward(T.asum(y))
    assert np.allclose(w.grad, [8.0])
    # second independent graph accumulates on top
    T.backward(T.asum(T.scale(w, 1.0)))
    assert np.allclose(w.grad, [9.0])


def test_no_grad_suppresses_tape():
    w = T.Tensor(np.ones(2), requires_grad=True)
    with T.no_grad():
        y = T.mul(w, w)
    assert y._backward is None and not y.requires_grad


def test_broadcast_add_unbroadcasts_gradient():
    a = T.Tensor(np.ones((3, 4)), requires_grad=True)
    b = T.Tensor(np.ones(4), requires_grad=True)
    T.backward(T.asum(T.add(a, b)))
    assert a.grad.shape == (3, 4) and np.allclose(a.grad, 1.0)
    assert b.grad.shape == (4,) and np.allclose(b.grad, 3.0)


def test_batch_standardize_values():
    rng = np.random.default_rng(3)
    x = rng.normal(2.0, 3.0, size=(64, 5))
    y, m, v = T.batch_standardize(T.Tensor(x), eps=1e-5)
    assert np.allclose(m, x.mean(axis=0))
    assert np.allclose(v, x.var(axis=0))
    assert np.allclose(y.data.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(y.data.std(axis=0), 1.0, atol=1e-3)


def test_logsumexp_matches_direct():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 7))
    out = T.logsumexp(T.Tensor(x), axis=1)
    assert np.allclose(out.data, np.log(np.exp(x).sum(axis=1)))


def test_scale_shift_matches_formula():
    rng = np.random.default_rng(7)
    h, g, b = rng.normal(size=(3, 2, 5))
    out = T.scale_shift(T.Tensor(h), T.Tensor(g), T.Tensor(b))
    assert np.allclose(out.data, h * (1 + g) + b)


# ---------------------------------------------------------------------------
# finite-difference oracle over random composite graphs


class GraphCase:
    """A reproducible random composite graph over a handful of leaves."""

    UNARY = ("leaky_relu", "tanh", "softplus", "hinge+", "hinge-", "square",
             "scale", "add_const")

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)
        n = int(self.rng.integers(3, 6))
        m = int(self.rng.integers(2, 5))
        k = int(self.rng.integers(2, 5))
        self.leaf_shapes = [(n, m), (m, k), (n, m)]
        self.n_ops = int(self.rng.integers(6, 12))
        self.op_seed = int(self.rng.integers(0, 2**31))
        self.kink_inputs = []

    def leaves(self):
        rng = np.random.default_rng(self.op_seed ^ 0x5EED)
        return [rng.normal(0.0, 1.0, size=s) for s in self.leaf_shapes]

    def build(self, arrays, requires_grad):
        self.kink_inputs = []
        leaves = [T.Tensor(a.copy(), requires_grad=requires_grad) for a in arrays]
        pool = list(leaves)
        rng = np.random.default_rng(self.op_seed)
        for _ in range(self.n_ops):
            op = self.UNARY[int(rng.integers(0, len(self.UNARY)))]
            x = pool[int(rng.integers(0, len(pool)))]
            if op == "leaky_relu":
                self.kink_inputs.append((x.data.copy(), 0.0))
                pool.append(T.leaky_relu(x, 0.2))
            elif op == "tanh":
                pool.append(T.tanh(x))
            elif op == "softplus":
                pool.append(T.softplus(x))
            elif op == "hinge+":
                self.kink_inputs.append((x.data.copy(), -1.0))
                pool.append(T.hinge(x, 1.0))
            elif op == "hinge-":
                self.kink_inputs.append((x.data.copy(), 1.0))
                pool.append(T.hinge(x, -1.0))
            elif op == "square":
                pool.append(T.pow_const(x, 2.0))
            elif op == "scale":
                pool.append(T.scale(x, 0.7))
            elif op == "add_const":
                pool.append(T.add_const(x, 0.3))
            # occasionally mix in structural / binary ops
            r = rng.random()
            same = [t for t in pool if t.shape == x.shape]
            if r < 0.35 and len(same) >= 2:
                a, b = same[0], same[-1]
                pool.append(T.add(T.mul(a, b), a))
            elif r < 0.5 and len(x.shape) == 2:
                pool.append(T.batch_standardize(x, eps=1e-3)[0])
            elif r < 0.6 and len(x.shape) == 2:
                pool.append(T.logsumexp(x, axis=1))
        mm = T.matmul(leaves[0], leaves[1])
        parts = [T.mean(mm)] + [T.mean(t) for t in pool[-3:]] + [
            T.scale(T.mean(l), 0.01) for l in leaves
        ]
        total = parts[0]
        for p in parts[1:]:
            total = T.add(total, p)
        return total, leaves

    def near_kink(self, tol=5e-3):
        return any(np.min(np.abs(x - kink)) < tol for x, kink in self.kink_inputs)


def _graph_value(case, arrays):
    with T.no_grad():
        out, _ = case.build(arrays, requires_grad=False)
    return out.item()


def test_gradcheck_random_composite_graphs():
    checked = 0
    seed = 0
    while checked < 20:
        seed += 1
        case = GraphCase(seed)
        arrays = case.leaves()
        out, leaves = case.build(arrays, requires_grad=True)
        if case.near_kink():
            continue  # finite differences are invalid next to a kink
        T.backward(out)
        ad = [l.grad for l in leaves]
        fd = finite_diff_grad(lambda arrs: _graph_value(case, arrs), arrays)
        assert_grads_close(ad, fd, rel=1e-4)
        checked += 1
    assert checked == 20
