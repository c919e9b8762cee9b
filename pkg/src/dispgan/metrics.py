"""Evaluation suite.

All functions are pure and deterministic given their inputs (and seed,
where one is taken).  Feature clouds are plain (m, q) float64 matrices;
moment-based metrics want m >= q+1 and warn below that.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from . import tensor as T
from .optim import Adam, ParamSet
from .tensor import Tensor

log = logging.getLogger(__name__)


def _cloud(x) -> np.ndarray:
    arr = np.asarray(getattr(x, "x", x), dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"feature cloud must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature cloud contains non-finite entries")
    return arr


# ---------------------------------------------------------------------------
# Frechet distance


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Square root of a symmetric PSD matrix via eigendecomposition."""
    evals, evecs = np.linalg.eigh((mat + mat.T) / 2.0)
    if evals.min() < -1e-8:
        warnings.warn(f"clipping negative eigenvalue {evals.min():.3e} in matrix sqrt")
    evals = np.maximum(evals, 0.0)
    return (evecs * np.sqrt(evals)) @ evecs.T


def fid_from_stats(mu_a, cov_a, mu_b, cov_b) -> float:
    """||mu_a-mu_b||^2 + Tr(cov_a + cov_b - 2(cov_a^0.5 cov_b cov_a^0.5)^0.5)."""
    mu_a, mu_b = np.atleast_1d(mu_a), np.atleast_1d(mu_b)
    cov_a, cov_b = np.atleast_2d(cov_a), np.atleast_2d(cov_b)
    if mu_a.shape != mu_b.shape or cov_a.shape != cov_b.shape:
        raise ValueError("stat dimensions disagree")
    root_a = _sqrtm_psd(cov_a)
    cross = _sqrtm_psd(root_a @ cov_b @ root_a)
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    return max(value, 0.0)


def fid(a, b) -> float:
    """Frechet distance between Gaussian fits to two clouds (ddof=1 stats)."""
    a, b = _cloud(a), _cloud(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"cloud dims differ: {a.shape[1]} vs {b.shape[1]}")
    q = a.shape[1]
    for name, c in (("first", a), ("second", b)):
        if c.shape[0] < 2:
            raise ValueError(f"{name} cloud needs at least 2 rows")
        if c.shape[0] < q + 1:
            warnings.warn(f"{name} cloud has {c.shape[0]} rows < q+1={q + 1}; "
                          "covariance estimate is rank-deficient")
    return fid_from_stats(a.mean(axis=0), np.cov(a, rowvar=False, ddof=1),
                          b.mean(axis=0), np.cov(b, rowvar=False, ddof=1))


# ---------------------------------------------------------------------------
# improved precision / recall


def _knn_radii(cloud: np.ndarray, k: int) -> np.ndarray:
    """Distance of each point to its k-th nearest within-cloud neighbor
    (self excluded)."""
    d2 = kernels.pairwise_sqdist(cloud, cloud)
    np.fill_diagonal(d2, np.inf)
    return np.sqrt(np.partition(d2, k - 1, axis=1)[:, k - 1])


def _covered_fraction(cloud: np.ndarray, radii: np.ndarray, points: np.ndarray) -> float:
    d2 = kernels.pairwise_sqdist(cloud, points)
    covered = (d2 <= radii[:, None] ** 2).any(axis=0)
    return float(covered.mean())


def precision_recall(real, fake, k_precision: int = 10, k_recall: int = 40):
    """k-NN manifold precision (fake covered by real) and recall (vice versa)."""
    real, fake = _cloud(real), _cloud(fake)
    if real.shape[1] != fake.shape[1]:
        raise ValueError("cloud dims differ")
    for k, name in ((k_precision, "k_precision"), (k_recall, "k_recall")):
        if not 1 <= k < min(len(real), len(fake)):
            raise ValueError(f"{name}={k} must be in [1, min cloud size)")
    precision = _covered_fraction(real, _knn_radii(real, k_precision), fake)
    recall = _covered_fraction(fake, _knn_radii(fake, k_recall), real)
    return precision, recall


# ---------------------------------------------------------------------------
# Mann-Whitney and the data-copying statistic


def mann_whitney_z(a, b) -> float:
    """z-statistic of U = #{(a,b): a < b} + 0.5 #ties.

    Positive when values in ``a`` run smaller.  Uses the tie-corrected
    variance; a pooled sample with zero variance gives z = 0.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    m, n = len(a), len(b)
    if m < 1 or n < 1:
        raise ValueError("mann_whitney_z: empty input")
    b_sorted = np.sort(b)
    less = np.searchsorted(b_sorted, a, side="left")      # b values < a
    less_eq = np.searchsorted(b_sorted, a, side="right")  # b values <= a
    # count pairs a < b, plus half the exact ties
    u = float((n - less_eq).sum() + 0.5 * (less_eq - less).sum())
    mean_u = m * n / 2.0
    pooled = np.concatenate([a, b])
    nn = m + n
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = (counts.astype(np.float64) ** 3 - counts).sum()
    var_u = m * n / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)))
    if var_u <= 0.0:
        return 0.0
    return (u - mean_u) / np.sqrt(var_u)


def mann_whitney_u(a, b) -> float:
    """U = #{(a,b): a < b} + 0.5 #ties (the count underlying the z-score)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if len(a) < 1 or len(b) < 1:
        raise ValueError("mann_whitney_u: empty input")
    b_sorted = np.sort(b)
    less = np.searchsorted(b_sorted, a, side="left")
    less_eq = np.searchsorted(b_sorted, a, side="right")
    return float((len(b) - less_eq).sum() + 0.5 * (less_eq - less).sum())


def _kmeans(x: np.ndarray, k: int, seed: int, iters: int = 50) -> np.ndarray:
    rng = np.random.default_rng(seed)
    centers = x[rng.choice(len(x), size=k, replace=False)]
    for _ in range(iters):
        assign = np.argmin(kernels.pairwise_sqdist(x, centers), axis=1)
        new = np.array([x[assign == c].mean(axis=0) if np.any(assign == c) else centers[c]
                        for c in range(k)])
        if np.allclose(new, centers):
            break
        centers = new
    return centers


def ct_statistic(train, test, gen, cells: int | None = None, seed: int = 0) -> float:
    """Data-copying statistic: strongly negative when generated samples sit
    systematically closer to the training set than held-out data does.

    Compares nearest-train-point distances of generated vs test samples
    with a Mann-Whitney z per cell (K-means cells of the training set when
    ``cells`` is given, one global cell otherwise), weighted by test mass.
    """
    train, test, gen = _cloud(train), _cloud(test), _cloud(gen)
    if min(len(train), len(test), len(gen)) < 1:
        raise ValueError("ct_statistic: all three clouds must be non-empty")
    d_test = np.sqrt(kernels.pairwise_sqdist(test, train).min(axis=1))
    d_gen = np.sqrt(kernels.pairwise_sqdist(gen, train).min(axis=1))
    if cells is None:
        # z(test, gen): U counts pairs with test distance below gen distance,
        # so copying (tiny gen distances) drives z negative
        return mann_whitney_z(d_test, d_gen)
    centers = _kmeans(train, cells, seed)
    cell_test = np.argmin(kernels.pairwise_sqdist(test, centers), axis=1)
    cell_gen = np.argmin(kernels.pairwise_sqdist(gen, centers), axis=1)
    zs, weights = [], []
    for c in range(cells):
        in_test = cell_test == c
        in_gen = cell_gen == c
        if not in_test.any() or not in_gen.any():
            log.info("ct_statistic: skipping empty cell %d", c)
            continue
        zs.append(mann_whitney_z(d_test[in_test], d_gen[in_gen]))
        weights.append(in_test.sum())
    if not zs:
        raise ValueError("ct_statistic: every cell was empty")
    weights = np.asarray(weights, dtype=np.float64)
    return float(np.asarray(zs) @ (weights / weights.sum()))


# ---------------------------------------------------------------------------
# inversion


@dataclass
class InversionResult:
    best_x: np.ndarray
    best_objective: float
    z: np.ndarray
    layer_conds: list[np.ndarray]
    trace: list = field(default_factory=list)


def ivom(generator, query: np.ndarray, init_cond: np.ndarray | None = None,
         steps: int = 500, lr: float = 0.1, seed: int = 0) -> InversionResult:
    """Inference-via-optimization: fit z and one conditioning vector per
    modulated layer to reconstruct a query point; returns the best iterate.

    ``init_cond`` is the embedded prior used to initialize every layer's
    vector (for prior-conditioned models pass the embedded prior of the
    query); modes without layer conditioning optimize z alone.
    """
    spec = generator.spec
    query = np.asarray(query, dtype=np.float64).reshape(1, -1)
    if query.shape[1] != spec.out_dim:
        raise ValueError(f"query dim {query.shape[1]} != generator output {spec.out_dim}")
    rng = np.random.default_rng(seed)

    opt_params = ParamSet()
    z = opt_params.add("z", rng.standard_normal((1, spec.latent_dim)))
    conds = []
    if spec.mode in ("prior", "per_instance_embedding"):
        if init_cond is None:
            raise ValueError("prior-conditioned inversion needs init_cond")
        init_cond = np.asarray(init_cond, dtype=np.float64).reshape(1, -1)
        for l in range(spec.n_layers):
            conds.append(opt_params.add(f"cond{l}", init_cond.copy()))

    target = Tensor(query)
    opt = Adam(lr=lr, beta1=0.9, beta2=0.999)
    best_obj = np.inf
    best_x = None
    best_state = None
    trace = []

    for it in range(steps + 1):
        out = generator.forward(z, training=False,
                                layer_conds=conds if conds else None)
        diff = T.sub(out, target)
        obj = T.mean(T.mul(diff, diff))
        val = obj.item()
        if not np.isfinite(val):
            raise FloatingPointError(f"inversion objective non-finite at step {it}: {val}")
        trace.append(val)
        if val < best_obj:
            best_obj = val
            best_x = out.data.copy()
            best_state = (z.data.copy(), [c.data.copy() for c in conds])
        if it == steps:
            break
        T.backward(obj)
        opt.step(opt_params)

    return InversionResult(best_x[0], best_obj, best_state[0],
                           [c for c in best_state[1]], trace)


# ---------------------------------------------------------------------------
# diagnostics


def overfit_gap(disc, train_batch, val_batch, prior_fn) -> float:
    """Mean D(x, prior_fn(x)) on training rows minus held-out rows."""
    train_batch = _cloud(train_batch)
    val_batch = _cloud(val_batch)
    if len(train_batch) < 1 or len(val_batch) < 1:
        raise ValueError("overfit_gap: batches must be non-empty")
    with T.no_grad():
        s_train, _ = disc.forward(train_batch, prior_fn(train_batch), training=False)
        s_val, _ = disc.forward(val_batch, prior_fn(val_batch), training=False)
    return float(s_train.data.mean() - s_val.data.mean())


def zero_prior_fn(dim: int):
    """Prior function returning zeros: scores reduce to the linear head."""
    def fn(x):
        return np.zeros((len(x), dim))
    return fn


def mode_coverage(samples, centers, sigma: float, threshold_sigma: float = 3.0,
                  coverage_min: float = 0.01):
    """Count modes holding at least ``coverage_min`` of the samples within
    ``threshold_sigma * sigma`` of their center; also return the histogram
    of nearest-center assignments."""
    samples, centers = _cloud(samples), _cloud(centers)
    if len(np.unique(centers, axis=0)) != len(centers):
        raise ValueError("mode centers must be distinct")
    d2 = kernels.pairwise_sqdist(samples, centers)
    radius2 = (threshold_sigma * sigma) ** 2
    within = d2 <= radius2
    counts = within.sum(axis=0)
    covered = int((counts >= coverage_min * len(samples)).sum())
    hist = np.bincount(np.argmin(d2, axis=1), minlength=len(centers))
    return covered, hist


def feature_correlation(disc_feats, ref_feats, images, n_pairs: int = 100,
                        seed: int = 0):
    """Pearson correlation between discriminator-feature cosine similarity
    and (a) reference-feature cosine similarity, (b) data-space L2 distance,
    over sampled pairs."""
    disc_feats, ref_feats, images = _cloud(disc_feats), _cloud(ref_feats), _cloud(images)
    if not len(disc_feats) == len(ref_feats) == len(images):
        raise ValueError("feature sets must be row-aligned")
    if n_pairs < 10:
        raise ValueError("need at least 10 pairs")
    rng = np.random.default_rng(seed)
    i = rng.integers(0, len(images), size=n_pairs)
    j = rng.integers(0, len(images), size=n_pairs)
    same = i == j
    j[same] = (j[same] + 1) % len(images)

    def cos(feats):
        x, y = feats[i], feats[j]
        return (x * y).sum(axis=1) / (np.linalg.norm(x, axis=1)
                                      * np.linalg.norm(y, axis=1))

    sim_d = cos(disc_feats)
    sim_ref = cos(ref_feats)
    l2 = np.linalg.norm(images[i] - images[j], axis=1)
    for name, series in (("disc", sim_d), ("reference", sim_ref), ("l2", l2)):
        if np.std(series) == 0.0:
            raise ValueError(f"feature_correlation: zero-variance {name} series")
    r_ref = float(np.corrcoef(sim_d, sim_ref)[0, 1])
    r_l2 = float(np.corrcoef(sim_d, l2)[0, 1])
    return r_ref, r_l2
