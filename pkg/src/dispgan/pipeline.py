"""Inference sampling and the full evaluation pipeline over a checkpoint.

Shared by the CLI commands and the acceptance suite so both drive the
same code paths.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from . import tensor as T
from .modelio import GanBundle
from .prior import PriorSet, gmm_sample, vicinal_sample

SAMPLERS = ("vicinal", "gmm", "table")


class SamplerError(ValueError):
    """Requested sampler state is missing from the checkpoint."""


def _prior_rows(bundle: GanBundle) -> np.ndarray:
    if bundle.mode == "per_instance_embedding":
        return bundle.inference_table()
    if bundle.prior_set is None:
        raise SamplerError("checkpoint carries no prior set")
    return bundle.prior_set.vectors


def sample_priors(bundle: GanBundle, sampler: str, rng, n: int) -> np.ndarray | None:
    """Draw conditioning vectors for n samples (None for unconditional)."""
    if bundle.mode in ("self_modulation", "none"):
        return None
    if sampler == "vicinal":
        return vicinal_sample(PriorSet(_prior_rows(bundle)), rng, n)
    if sampler == "table":
        rows = _prior_rows(bundle)
        return rows[rng.integers(0, len(rows), size=n)]
    if sampler == "gmm":
        if bundle.gmm is None:
            raise SamplerError(
                "no mixture model in checkpoint; run `dispgan fit-gmm` first")
        return gmm_sample(bundle.gmm, rng, n)
    raise ValueError(f"unknown sampler {sampler!r} (choose from {SAMPLERS})")


def generate(bundle: GanBundle, n: int, sampler: str = "vicinal",
             seed: int = 0) -> np.ndarray:
    """Generate n points with the checkpoint's EMA weights."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, bundle.gspec.latent_dim))
    priors = sample_priors(bundle, sampler, rng, n)
    gmm_space = bundle.meta.get("gmm", {}).get("space", "raw") if sampler == "gmm" else "raw"
    with T.no_grad():
        if priors is not None and gmm_space == "embedded":
            cond = T.Tensor(priors.astype(bundle.gen.dtype))
            out = bundle.gen.forward(z, training=False, params=bundle.ema_g,
                                     layer_conds=[cond] * bundle.gspec.n_layers)
        else:
            out = bundle.gen.forward(z, priors, training=False, params=bundle.ema_g)
    return out.data.astype(np.float64)


def conditional_prior_fn(bundle: GanBundle):
    """Each model's own conditioning pathway, usable on arbitrary points.

    Prior mode embeds through the frozen extractor; the per-instance
    baseline falls back to the nearest training row's table entry;
    unconditional modes score with a zero prior.
    """
    if bundle.mode == "prior" and bundle.extractor is not None:
        return lambda x: bundle.extractor(x)
    if bundle.mode == "per_instance_embedding":
        table = bundle.inference_table()
        train_x = bundle.train_x

        def nearest_row(x):
            d2 = ((np.asarray(x)[:, None, :] - train_x[None, :, :]) ** 2).sum(-1)
            return table[np.argmin(d2, axis=1)]

        return nearest_row
    return metrics.zero_prior_fn(bundle.dspec.prior_dim)


@dataclass
class EvalSettings:
    n_gen: int = 1000
    sampler: str = "vicinal"
    k_precision: int = 10
    k_recall: int = 40
    threshold_sigma: float = 3.0
    coverage_min: float = 0.01
    ct_cells: int = 0
    ivom_queries: int = 0
    ivom_steps: int = 500
    ivom_lr: float = 0.1
    corr_pairs: int = 100


def _scaled_k(k: int, *cloud_sizes: int) -> int:
    # tiny clouds cannot support the full-scale neighborhood sizes
    return max(1, min(k, min(cloud_sizes) // 4))


def ivom_init_cond(bundle: GanBundle, query: np.ndarray) -> np.ndarray | None:
    if bundle.mode == "prior" and bundle.extractor is not None:
        vec = bundle.extractor(np.asarray(query).reshape(1, -1))
    elif bundle.mode == "per_instance_embedding":
        vec = bundle.inference_table().mean(axis=0, keepdims=True)
    else:
        return None
    with T.no_grad():
        return bundle.gen.embed_prior(vec, params=bundle.ema_g,
                                      training=False).data


def invert(bundle: GanBundle, queries: np.ndarray, steps: int = 500,
           lr: float = 0.1, seed: int = 0) -> list[metrics.InversionResult]:
    # inversion drives the EMA generator the same way sampling does
    gen = bundle.gen
    saved = gen.params
    gen.params = bundle.ema_g
    try:
        results = []
        for qi, query in enumerate(np.asarray(queries, dtype=np.float64)):
            init = ivom_init_cond(bundle, query)
            results.append(metrics.ivom(gen, query, init_cond=init,
                                        steps=steps, lr=lr,
                                        seed=seed + qi))
    finally:
        gen.params = saved
    return results


def evaluate(bundle: GanBundle, test_x: np.ndarray, settings: EvalSettings,
             seed: int = 0) -> dict:
    """Full metric suite; every unavailable metric is null with a reason."""
    test_x = np.asarray(test_x, dtype=np.float64)
    gen_cloud = generate(bundle, settings.n_gen, settings.sampler, seed)
    report: dict = {
        "seed": seed,
        "sampler": settings.sampler,
        "n_gen": settings.n_gen,
        "n_test": int(len(test_x)),
        "fid": metrics.fid(test_x, gen_cloud),
    }

    k_p = _scaled_k(settings.k_precision, len(test_x), len(gen_cloud))
    k_r = _scaled_k(settings.k_recall, len(test_x), len(gen_cloud))
    precision, recall = metrics.precision_recall(test_x, gen_cloud, k_p, k_r)
    report.update(precision=precision, recall=recall, k_precision=k_p, k_recall=k_r)

    report["c_t"] = metrics.ct_statistic(
        bundle.train_x, test_x, gen_cloud,
        cells=settings.ct_cells or None, seed=seed)

    report["overfit_gap"] = metrics.overfit_gap(
        bundle.disc, bundle.train_x, bundle.val_x, conditional_prior_fn(bundle))
    report["overfit_gap_unconditional"] = metrics.overfit_gap(
        bundle.disc, bundle.train_x, bundle.val_x,
        metrics.zero_prior_fn(bundle.dspec.prior_dim))

    centers = bundle.meta.get("mode_centers")
    sigma = bundle.meta.get("mode_sigma")
    if centers is not None and sigma:
        covered, hist = metrics.mode_coverage(
            gen_cloud, np.asarray(centers), sigma,
            threshold_sigma=settings.threshold_sigma,
            coverage_min=settings.coverage_min)
        report["mode_coverage"] = {
            "covered": covered, "n_modes": len(centers),
            "histogram": hist.tolist(),
        }
    else:
        report["mode_coverage"] = None
        report["mode_coverage_reason"] = "checkpoint has no mode geometry"

    if bundle.extractor is not None and len(test_x) >= 10:
        with T.no_grad():
            feats = bundle.disc.features(test_x, training=False).data
        r_ref, r_l2 = metrics.feature_correlation(
            feats, bundle.extractor(test_x), test_x,
            n_pairs=settings.corr_pairs, seed=seed)
        report["feature_correlation"] = {"reference": r_ref, "image_l2": r_l2}
    else:
        report["feature_correlation"] = None
        report["feature_correlation_reason"] = "no extractor in checkpoint"

    if settings.ivom_queries > 0:
        picks = test_x[:settings.ivom_queries]
        results = invert(bundle, picks, settings.ivom_steps, settings.ivom_lr, seed)
        objs = [r.best_objective for r in results]
        report["ivom"] = {
            "median": float(np.median(objs)),
            "mean": float(np.mean(objs)),
            "n_queries": len(objs),
            "steps": settings.ivom_steps,
        }
    else:
        report["ivom"] = None
        report["ivom_reason"] = "not requested (use the invert command or ivom_queries)"
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"
