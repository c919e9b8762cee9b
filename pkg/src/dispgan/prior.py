"""Prior sets, vicinal mix sampling, and GMM fitting/sampling.

Inference needs a source of prior vectors.  Few-shot runs mix random
pairs of stored priors (lambda ~ U[0,1]); large-scale runs fit a Gaussian
mixture to the prior set (optionally on a seeded subsample) and draw from
that instead.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

EPS_COV = 1e-6


@dataclass
class PriorSet:
    vectors: np.ndarray          # (n, d) float64
    source_hash: str = ""

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise ValueError(f"prior set needs an (n>=1, d) matrix, got {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("prior set contains non-finite vectors")

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def extract_priors(dataset, extractor) -> PriorSet:
    """Apply the frozen extractor to every row of the dataset."""
    x = dataset.x64()
    if x.shape[0] < 1:
        raise ValueError("cannot extract priors from an empty dataset")
    vectors = extractor(x)
    h = hashlib.sha256()
    h.update(x.tobytes())
    for arr in extractor.state_arrays().values():
        h.update(np.ascontiguousarray(arr).tobytes())
    return PriorSet(vectors, source_hash=h.hexdigest())


def vicinal_sample(priors: PriorSet, rng: np.random.Generator, n: int = 1,
                   lam: np.ndarray | float | None = None) -> np.ndarray:
    """Convex mixes lambda*p_i + (1-lambda)*p_j of random prior pairs.

    i, j are drawn uniformly with replacement and lambda ~ U[0,1] unless a
    fixed ``lam`` is given.  Returns an (n, d) array.
    """
    if priors.n < 1:
        raise ValueError("vicinal sampling needs a non-empty prior set")
    i = rng.integers(0, priors.n, size=n)
    j = rng.integers(0, priors.n, size=n)
    if lam is None:
        lam = rng.uniform(0.0, 1.0, size=n)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,))[:, None]
    v = priors.vectors
    return lam * v[i] + (1.0 - lam) * v[j]


# ---------------------------------------------------------------------------
# Gaussian mixture


@dataclass
class GmmModel:
    weights: np.ndarray          # (K,) on the simplex
    means: np.ndarray            # (K, d)
    covs: np.ndarray             # (K, d) diagonal or (K, d, d) full
    cov_type: str = "diag"
    ll_trace: list = field(default_factory=list)

    def __post_init__(self):
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights sum to {self.weights.sum()!r}, not 1")
        floor_ok = (self.covs >= EPS_COV if self.cov_type == "diag"
                    else np.diagonal(self.covs, axis1=1, axis2=2) >= EPS_COV)
        if not np.all(floor_ok):
            raise ValueError("covariance entries below the floor")

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _log_gauss_diag(x, mean, var):
    # (n,) log N(x; mean, diag(var)) for one component
    d = x.shape[1]
    diff = x - mean
    return -0.5 * (d * np.log(2.0 * np.pi) + np.log(var).sum()
                   + (diff * diff / var).sum(axis=1))


def _log_gauss_full(x, mean, cov):
    d = x.shape[1]
    chol = np.linalg.cholesky(cov)
    diff = x - mean
    sol = np.linalg.solve(chol, diff.T)
    logdet = 2.0 * np.log(np.diagonal(chol)).sum()
    return -0.5 * (d * np.log(2.0 * np.pi) + logdet + (sol * sol).sum(axis=0))


def _component_logpdfs(model_covs, cov_type, x, means):
    k = len(means)
    out = np.empty((x.shape[0], k))
    for c in range(k):
        if cov_type == "diag":
            out[:, c] = _log_gauss_diag(x, means[c], model_covs[c])
        else:
            out[:, c] = _log_gauss_full(x, means[c], model_covs[c])
    return out


def gmm_loglik(model: GmmModel, x: np.ndarray) -> float:
    """Average per-row log density under the mixture."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise ValueError(f"gmm loglik: data shape {x.shape} vs model dim {model.dim}")
    lp = _component_logpdfs(model.covs, model.cov_type, x, model.means)
    lp = lp + np.log(model.weights)
    m = lp.max(axis=1, keepdims=True)
    return float((m[:, 0] + np.log(np.exp(lp - m).sum(axis=1))).mean())


def _kmeanspp_centers(x, k, rng):
    n = x.shape[0]
    centers = [x[int(rng.integers(0, n))]]
    for _ in range(1, k):
        d2 = np.min([((x - c) ** 2).sum(axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0.0:
            centers.append(x[int(rng.integers(0, n))])
            continue
        r = rng.uniform(0.0, total)
        centers.append(x[int(np.searchsorted(np.cumsum(d2), r))])
    return np.array(centers)


def gmm_fit(priors, k: int, subset_size: int | None = None, seed: int = 0,
            cov_type: str = "diag", tol: float = 1e-6, max_iter: int = 200,
            eps_cov: float = EPS_COV) -> GmmModel:
    """EM fit with k-means++ seeding.

    Stops when the relative log-likelihood change drops below ``tol`` or
    after ``max_iter`` iterations.  With ``subset_size`` smaller than n the
    fit runs on a seeded uniform subsample; a component that empties is
    reseeded at the datum the mixture explains worst.
    """
    x = priors.vectors if isinstance(priors, PriorSet) else np.asarray(priors, dtype=np.float64)
    if cov_type not in ("diag", "full"):
        raise ValueError(f"unknown covariance type {cov_type!r}")
    if k < 1:
        raise ValueError("need at least one component")
    rng = np.random.default_rng(seed)
    if subset_size is not None and subset_size < x.shape[0]:
        idx = rng.choice(x.shape[0], size=subset_size, replace=False)
        x = x[np.sort(idx)]
    n, d = x.shape
    if n < k:
        raise ValueError(f"cannot fit {k} components to {n} rows")

    means = _kmeanspp_centers(x, k, rng)
    global_var = np.maximum(x.var(axis=0), eps_cov)
    if cov_type == "diag":
        covs = np.tile(global_var, (k, 1))
    else:
        covs = np.tile(np.diag(global_var), (k, 1, 1))
    weights = np.full(k, 1.0 / k)

    trace = []
    prev_ll = -np.inf
    for _ in range(max_iter):
        # E step in the log domain
        lp = _component_logpdfs(covs, cov_type, x, means) + np.log(weights)
        m = lp.max(axis=1, keepdims=True)
        log_norm = m + np.log(np.exp(lp - m).sum(axis=1, keepdims=True))
        resp = np.exp(lp - log_norm)
        ll = float(log_norm.mean())
        trace.append(ll)

        mass = resp.sum(axis=0)
        for c in np.where(mass < 1e-12)[0]:
            worst = int(np.argmin(log_norm[:, 0]))
            log.warning("gmm_fit: reseeding empty component %d at datum %d", c, worst)
            resp[:, c] = 0.0
            resp[worst, :] = 0.0
            resp[worst, c] = 1.0
            mass = resp.sum(axis=0)

        # M step
        weights = mass / n
        means = (resp.T @ x) / mass[:, None]
        if cov_type == "diag":
            for c in range(k):
                diff = x - means[c]
                covs[c] = np.maximum((resp[:, c][:, None] * diff * diff).sum(axis=0)
                                     / mass[c], eps_cov)
        else:
            for c in range(k):
                diff = x - means[c]
                cov = (resp[:, c][:, None] * diff).T @ diff / mass[c]
                cov[np.diag_indices(d)] = np.maximum(np.diagonal(cov), eps_cov)
                covs[c] = cov

        if np.isfinite(prev_ll) and abs(ll - prev_ll) < tol * max(abs(prev_ll), 1.0):
            break
        prev_ll = ll

    weights = weights / weights.sum()  # exact simplex after float noise
    return GmmModel(weights, means, covs, cov_type=cov_type, ll_trace=trace)


def gmm_sample(model: GmmModel, rng: np.random.Generator, n: int = 1) -> np.ndarray:
    """Draw component indices by weight, then from each Gaussian."""
    comp = np.searchsorted(np.cumsum(model.weights), rng.uniform(0.0, 1.0, size=n))
    comp = np.minimum(comp, model.k - 1)
    eps = rng.standard_normal((n, model.dim))
    if model.cov_type == "diag":
        return model.means[comp] + eps * np.sqrt(model.covs[comp])
    out = np.empty((n, model.dim))
    for c in np.unique(comp):
        sel = comp == c
        chol = np.linalg.cholesky(model.covs[c])
        out[sel] = model.means[c] + eps[sel] @ chol.T
    return out
