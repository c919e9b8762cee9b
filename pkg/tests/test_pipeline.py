"""Sampler and evaluation pipeline over loaded checkpoints."""
import numpy as np
import pytest

from dispgan.checkpoint import Checkpoint
from dispgan.data import TransferProtocol, make_transfer
from dispgan.modelio import GanBundle, put_gmm, save_gan
from dispgan.nets import ExtractorSpec, pretrain_extractor
from dispgan.pipeline import (EvalSettings, SamplerError, evaluate, generate,
                              invert, sample_priors)
from dispgan.prior import PriorSet, extract_priors, gmm_fit
from dispgan.train import TrainConfig, TrainState, train_step


@pytest.fixture(scope="module")
def bundle_path(tmp_path_factory):
    ws = tmp_path_factory.mktemp("pipeline")
    proto = TransferProtocol(source_n=400, n_target=32)
    splits = make_transfer(proto, seed=4)
    ext = pretrain_extractor(splits.source, ExtractorSpec(out_dim=8, steps=150, seed=0))
    priors = extract_priors(splits.target_train, ext)
    cfg = TrainConfig(batch_size=8, d_steps=1, total_steps=30, seed=5,
                      g_hidden=16, d_hidden=16, feat_dim=16, cond_dim=8,
                      log_every=0, fid_every=0)
    state = TrainState(cfg, splits.target_train, splits.target_val, priors)
    for _ in range(30):
        train_step(state, cfg)
    path = ws / "m.dspc"
    save_gan(path, state, state.ema_g, state.ema_aux, ext,
             meta={"run_id": "pipe", "snapshot": "final",
                   "mode_centers": proto.target_centers().tolist(),
                   "mode_sigma": proto.target_sigma})
    return path, splits


def test_generate_shapes_and_determinism(bundle_path):
    path, _ = bundle_path
    bundle = GanBundle.load(path)
    a = generate(bundle, 40, "vicinal", seed=3)
    b = generate(GanBundle.load(path), 40, "vicinal", seed=3)
    assert a.shape == (40, 2)
    assert np.array_equal(a, b)


def test_vicinal_single_prior_conditions_everything_identically(bundle_path):
    path, _ = bundle_path
    bundle = GanBundle.load(path)
    bundle.prior_set = PriorSet(bundle.prior_set.vectors[:1])
    rng = np.random.default_rng(0)
    priors = sample_priors(bundle, "vicinal", rng, 16)
    assert np.allclose(priors, priors[0], atol=1e-14)


def test_gmm_sampler_requires_fit_then_works(bundle_path):
    path, _ = bundle_path
    bundle = GanBundle.load(path)
    with pytest.raises(SamplerError, match="fit-gmm"):
        generate(bundle, 8, "gmm", seed=0)
    ckpt = Checkpoint.load(path)
    model = gmm_fit(bundle.prior_set.vectors, k=4, seed=0)
    put_gmm(ckpt, model)
    p2 = path.with_name("with_gmm.dspc")
    ckpt.save(p2)
    out = generate(GanBundle.load(p2), 8, "gmm", seed=0)
    assert out.shape == (8, 2) and np.all(np.isfinite(out))


def test_embedded_space_gmm_sampling(bundle_path):
    path, _ = bundle_path
    bundle = GanBundle.load(path)
    ckpt = Checkpoint.load(path)
    import dispgan.tensor as T
    with T.no_grad():
        emb = bundle.gen.embed_prior(bundle.prior_set.vectors,
                                     params=bundle.ema_g, training=False).data
    put_gmm(ckpt, gmm_fit(emb, k=3, seed=0))
    ckpt.meta["gmm"]["space"] = "embedded"
    p2 = path.with_name("emb_gmm.dspc")
    ckpt.save(p2)
    out = generate(GanBundle.load(p2), 12, "gmm", seed=1)
    assert out.shape == (12, 2) and np.all(np.isfinite(out))


def test_table_sampler_draws_exact_rows(bundle_path):
    path, _ = bundle_path
    bundle = GanBundle.load(path)
    rng = np.random.default_rng(2)
    rows = sample_priors(bundle, "table", rng, 10)
    stored = bundle.prior_set.vectors
    for row in rows:
        assert any(np.array_equal(row, s) for s in stored)


def test_evaluate_full_report(bundle_path):
    path, splits = bundle_path
    bundle = GanBundle.load(path)
    rep = evaluate(bundle, splits.target_test.x64(),
                   EvalSettings(n_gen=64, ivom_queries=2, ivom_steps=10), seed=0)
    assert np.isfinite(rep["fid"])
    assert 0.0 <= rep["precision"] <= 1.0
    assert rep["mode_coverage"]["n_modes"] == 8
    assert rep["ivom"]["n_queries"] == 2
    assert np.isfinite(rep["overfit_gap"])
    assert np.isfinite(rep["overfit_gap_unconditional"])
    assert "feature_correlation" in rep


def test_invert_uses_ema_and_restores_params(bundle_path):
    path, splits = bundle_path
    bundle = GanBundle.load(path)
    live_before = {n: t.data.copy() for n, t in bundle.gen.params}
    results = invert(bundle, splits.target_test.x64()[:2], steps=5, seed=0)
    assert len(results) == 2
    assert all(np.isfinite(r.best_objective) for r in results)
    for n, t in bundle.gen.params:
        assert np.array_equal(t.data, live_before[n])
