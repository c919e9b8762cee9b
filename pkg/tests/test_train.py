"""Training-loop contracts: losses, accounting, determinism, stability."""
import numpy as np
import pytest

import dispgan.train as train_mod
from dispgan import tensor as T
from dispgan.data import TransferProtocol, make_ring, make_transfer
from dispgan.nets import (Discriminator, DiscriminatorSpec, ExtractorSpec,
                          Generator, GeneratorSpec, pretrain_extractor)
from dispgan.prior import extract_priors
from dispgan.tensor import Tensor
from dispgan.train import (TrainConfig, TrainDivergence, TrainHistory,
                           TrainState, disp_loss_d, disp_loss_g, train,
                           train_step)


def tiny_problem(mode="prior", n=32, seed=0):
    proto = TransferProtocol(n_target=n, source_n=400)
    splits = make_transfer(proto, seed=seed)
    ext = pretrain_extractor(splits.source, ExtractorSpec(out_dim=8, steps=200, seed=0))
    priors = extract_priors(splits.target_train, ext) if mode == "prior" else None
    return splits, priors


def tiny_config(mode="prior", steps=3, **kw):
    defaults = dict(batch_size=8, d_steps=2, total_steps=steps, mode=mode,
                    seed=1, log_every=1, fid_every=0, g_hidden=16, d_hidden=16,
                    feat_dim=16, cond_dim=8)
    defaults.update(kw)
    return TrainConfig(**defaults)


# ---------------------------------------------------------------------------
# loss values on stubbed scores


class ScoreStubDisc:
    """Discriminator stand-in returning fixed scores."""

    def __init__(self, real_score, fake_score, prior_dim=8):
        self.real_score = real_score
        self.fake_score = fake_score
        self.spec = DiscriminatorSpec(prior_dim=prior_dim)

    def forward(self, x, prior, training=True):
        n = len(x) if not isinstance(x, Tensor) else x.shape[0]
        half = n // 2
        if half and n % 2 == 0:
            vals = np.concatenate([np.full((half, 1), self.real_score),
                                   np.full((half, 1), self.fake_score)])
        else:
            vals = np.full((n, 1), self.fake_score)
        return Tensor(vals, requires_grad=False), None


class GenStub:
    spec = GeneratorSpec(mode="none")

    def forward(self, z, prior=None, training=True, params=None, layer_conds=None):
        z = np.asarray(z)
        return Tensor(np.zeros((z.shape[0], 2)))


def _loss_d(real, fake, variant):
    disc = ScoreStubDisc(real, fake)
    loss, _ = disp_loss_d(disc, GenStub(), None, np.zeros((4, 2)),
                          np.zeros((4, 16)), variant)
    return loss.item()


def test_hinge_d_loss_margins_met():
    assert _loss_d(2.0, -2.0, "hinge") == 0.0


def test_hinge_d_loss_zero_scores():
    assert _loss_d(0.0, 0.0, "hinge") == pytest.approx(2.0)


def test_non_saturating_d_loss_zero_scores():
    assert _loss_d(0.0, 0.0, "non_saturating") == pytest.approx(2 * np.log(2))


def test_wasserstein_d_loss():
    assert _loss_d(1.5, -0.5, "wasserstein") == pytest.approx(-2.0)


def test_g_loss_values():
    def loss_g(fake_score, variant):
        disc = ScoreStubDisc(fake_score, fake_score)
        loss, _ = disp_loss_g(disc, GenStub(), None, np.zeros((4, 16)), variant)
        return loss.item()

    assert loss_g(0.0, "hinge") == 0.0
    assert loss_g(1.0, "hinge") == pytest.approx(-1.0)
    assert loss_g(0.0, "non_saturating") == pytest.approx(np.log(2))
    assert loss_g(0.5, "wasserstein") == pytest.approx(-0.5)


def test_unknown_variant_rejected():
    with pytest.raises(ValueError, match="loss variant"):
        TrainConfig(loss="relativistic")


# ---------------------------------------------------------------------------
# stepping behavior


def test_zero_lr_leaves_parameters_unchanged():
    splits, priors = tiny_problem()
    cfg = tiny_config(lr=0.0, steps=2)
    state = TrainState(cfg, splits.target_train, splits.target_val, priors)
    g0 = state.gen.params.state_bytes()
    d0 = state.disc.params.state_bytes()
    for _ in range(2):
        train_step(state, cfg)
    assert state.gen.params.state_bytes() == g0
    assert state.disc.params.state_bytes() == d0
    assert np.isfinite(state.last["loss_d"]) and np.isfinite(state.last["loss_g"])


def test_step_consumes_expected_batches(monkeypatch):
    splits, priors = tiny_problem()
    cfg = tiny_config(d_steps=4, steps=1)
    state = TrainState(cfg, splits.target_train, splits.target_val, priors)
    counts = {"data": 0, "latent": 0}
    orig_idx, orig_z = train_mod.sample_indices, train_mod.sample_latent

    def count_idx(rng, n, b):
        counts["data"] += 1
        return orig_idx(rng, n, b)

    def count_z(rng, b, dim, dtype=np.float64):
        counts["latent"] += 1
        return orig_z(rng, b, dim, dtype)

    monkeypatch.setattr(train_mod, "sample_indices", count_idx)
    monkeypatch.setattr(train_mod, "sample_latent", count_z)
    train_step(state, cfg)
    assert counts == {"data": 5, "latent": 5}


def test_phase_isolation_debug_checks():
    splits, priors = tiny_problem()
    cfg = tiny_config(debug=True, steps=2)
    state = TrainState(cfg, splits.target_train, splits.target_val, priors)
    for _ in range(2):
        train_step(state, cfg)  # asserts inside when debug


def test_extractor_untouched_by_training():
    splits, priors = tiny_problem()
    ext = pretrain_extractor(splits.source, ExtractorSpec(out_dim=8, steps=100, seed=3))
    frozen = [w.copy() for w in ext.weights]
    ps = extract_priors(splits.target_train, ext)
    cfg = tiny_config(steps=3)
    train(cfg, splits.target_train, splits.target_val, ps)
    for w0, w1 in zip(frozen, ext.weights):
        assert np.array_equal(w0, w1)


def test_unconditional_mode_leaves_projection_paths_untrained():
    splits, _ = tiny_problem(mode="none")
    cfg = tiny_config(mode="none", steps=3)
    state = TrainState(cfg, splits.target_train, splits.target_val, None)
    demb0 = state.disc.params["d.emb.W"].data.copy()
    for _ in range(3):
        train_step(state, cfg)
    # zero prior -> zero gradient -> Adam identity on the projection head
    assert np.array_equal(state.disc.params["d.emb.W"].data, demb0)
    assert "g.emb.W" not in state.gen.params


def test_determinism_same_seed_bit_identical():
    splits, priors = tiny_problem()
    cfg = tiny_config(steps=4, fid_every=2)
    r1 = train(cfg, splits.target_train, splits.target_val, priors)
    r2 = train(cfg, splits.target_train, splits.target_val, priors)
    assert r1.state.gen.params.state_bytes() == r2.state.gen.params.state_bytes()
    assert r1.state.disc.params.state_bytes() == r2.state.disc.params.state_bytes()
    assert r1.history.records == r2.history.records


def test_divergence_reports_step_and_losses():
    splits, priors = tiny_problem()
    cfg = tiny_config(steps=1, lr=1e250)  # detonate the update
    state = TrainState(cfg, splits.target_train, splits.target_val, priors)
    with np.errstate(all="ignore"), pytest.raises(TrainDivergence, match="step"):
        for _ in range(50):
            train_step(state, cfg)


def test_ema_tracks_generator():
    splits, priors = tiny_problem()
    cfg = tiny_config(steps=1, ema_decay=0.0)  # shadow == live after step
    state = TrainState(cfg, splits.target_train, splits.target_val, priors)
    train_step(state, cfg)
    assert state.ema_g.state_bytes() == state.gen.params.state_bytes()


def test_history_meta_and_stream(tmp_path):
    splits, priors = tiny_problem()
    cfg = tiny_config(steps=3, log_every=1)
    seen = []
    result = train(cfg, splits.target_train, splits.target_val, priors,
                   history_sink=seen.append)
    assert seen[0]["type"] == "meta"
    steps = [r for r in seen if r["type"] == "step"]
    assert [r["step"] for r in steps] == [1, 2, 3]
    text = result.history.to_jsonl()
    back = TrainHistory.from_jsonl(text)
    assert back.records == result.history.records


def test_history_scores_come_from_update_batches():
    # inject a discriminator whose unconditional score identifies rows it saw
    splits, priors = tiny_problem()
    cfg = tiny_config(steps=1, log_every=1)
    state = TrainState(cfg, splits.target_train, splits.target_val, priors)

    seen_batches = []
    orig = state.disc.score_unconditional

    def spy(x):
        seen_batches.append(np.asarray(x).copy())
        return orig(x)

    state.disc.score_unconditional = spy
    train_step(state, cfg)
    x_train_batch = state.train_x[state.last["x_idx"]]
    fake = state.last["fake"]
    state.disc.score_unconditional(x_train_batch)
    state.disc.score_unconditional(fake)
    assert np.array_equal(seen_batches[-2], x_train_batch)
    assert np.array_equal(seen_batches[-1], fake)


def test_wasserstein_and_ns_variants_run_finite():
    splits, priors = tiny_problem()
    for variant in ("non_saturating", "wasserstein"):
        cfg = tiny_config(steps=5, loss=variant)
        res = train(cfg, splits.target_train, splits.target_val, priors)
        assert np.isfinite(res.state.last["loss_d"])
        assert np.isfinite(res.state.last["loss_g"])


def test_hinge_d_loss_nonnegative_throughout():
    splits, priors = tiny_problem()
    cfg = tiny_config(steps=6, log_every=1)
    res = train(cfg, splits.target_train, splits.target_val, priors)
    assert all(r["loss_d"] >= 0.0 for r in res.history.records)


def test_per_instance_table_updates_in_both_phases():
    splits, _ = tiny_problem(mode="per_instance_embedding")
    cfg = tiny_config(mode="per_instance_embedding", steps=1, d_steps=1)
    state = TrainState(cfg, splits.target_train, splits.target_val, None)
    t0 = state.aux_params["g.table"].data.copy()
    n = state.train_x.shape[0]

    idx = train_mod.sample_indices(state.rng, n, cfg.batch_size)
    z = train_mod.sample_latent(state.rng, cfg.batch_size, cfg.latent_dim)
    prior_t = state.batch_priors(idx)
    loss, _ = disp_loss_d(state.disc, state.gen, prior_t, state.train_x[idx], z, "hinge")
    T.backward(loss)
    table_grad = state.aux_params["g.table"].grad
    assert table_grad is not None and np.abs(table_grad).sum() > 0


def test_float32_training_runs_finite():
    splits, priors = tiny_problem()
    cfg = tiny_config(steps=5, dtype="float32")
    res = train(cfg, splits.target_train, splits.target_val, priors)
    assert res.state.gen.params["g.out.W"].data.dtype == np.float32
    assert np.isfinite(res.state.last["loss_d"])
    assert np.isfinite(res.state.last["loss_g"])


def test_trained_generator_responds_to_distinct_priors():
    # modulation is zero-initialized, so distinct priors only start to
    # matter once training moves the heads
    splits, priors = tiny_problem(n=48)
    cfg = tiny_config(steps=200, log_every=0)
    res = train(cfg, splits.target_train, splits.target_val, priors)
    state = res.state
    rng = np.random.default_rng(0)
    z = train_mod.sample_latent(rng, 16, cfg.latent_dim)
    p1 = np.tile(priors.vectors[0], (16, 1))
    p2 = np.tile(priors.vectors[24], (16, 1))
    with T.no_grad():
        o1 = state.gen.forward(z, p1, training=False, params=state.ema_g).data
        o2 = state.gen.forward(z, p2, training=False, params=state.ema_g).data
    assert np.linalg.norm(o1 - o2, axis=1).mean() > 1e-3


def test_training_on_flattened_glyph_images():
    # p=64 smoke: networks and losses handle image-sized rows
    from dispgan.data import make_glyphs
    from dispgan.nets import ExtractorSpec, pretrain_extractor
    from dispgan.prior import extract_priors
    source = make_glyphs(300, classes=8, seed=0, split="source")
    target = make_glyphs(40, classes=4, seed=1)
    val = make_glyphs(10, classes=4, seed=2, split="target_val")
    ext = pretrain_extractor(source, ExtractorSpec(out_dim=8, steps=150, seed=0))
    priors = extract_priors(target, ext)
    cfg = tiny_config(steps=4)
    res = train(cfg, target, val, priors)
    assert np.isfinite(res.state.last["loss_d"])
    fake = res.state.last["fake"]
    assert fake.shape == (cfg.batch_size, 64)
    assert np.abs(fake).max() <= 1.0
