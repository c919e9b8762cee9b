"""Adversarial training loop.

One training step runs ``d_steps`` discriminator updates, each on a fresh
data batch and noise batch, followed by one generator update on another
fresh pair, then an EMA update of the generator-side parameters.  Real and
fake inputs share one discriminator pass per update (concatenated batch),
so spectral norm power-iterates once per update.

Conditioning by mode:
  prior                  frozen extractor features of the batch rows
  per_instance_embedding a learnable table row per training instance,
                         updated during both phases (it feeds both nets)
  self_modulation        modulation from the latent chunks only
  none                   unconditional
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics
from . import tensor as T
from .data import Dataset
from .nets import (Discriminator, DiscriminatorSpec, Generator, GeneratorSpec)
from .optim import Adam, ParamSet, ema_update
from .prior import PriorSet, vicinal_sample
from .tensor import Tensor

LOSS_VARIANTS = ("hinge", "non_saturating", "wasserstein")


class TrainDivergence(FloatingPointError):
    """A loss went non-finite; carries the step index and loss values."""


@dataclass
class TrainConfig:
    batch_size: int = 25
    d_steps: int = 4
    total_steps: int = 20000
    loss: str = "hinge"
    lr: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.999
    adam_eps: float = 1e-8
    ema_decay: float = 0.999
    mode: str = "prior"
    seed: int = 0
    log_every: int = 200
    fid_every: int = 1000
    fid_samples: int = 256
    dtype: str = "float64"
    debug: bool = False
    latent_dim: int = 16
    n_layers: int = 3
    g_hidden: int = 64
    cond_dim: int = 16
    d_hidden: int = 64
    feat_dim: int = 64
    prior_dim: int = 8

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.d_steps < 1:
            raise ValueError("d_steps must be >= 1")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must be in [0, 1)")
        if self.loss not in LOSS_VARIANTS:
            raise ValueError(f"unknown loss variant {self.loss!r}; "
                             f"choose from {LOSS_VARIANTS}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")


@dataclass
class TrainHistory:
    meta: dict
    records: list = field(default_factory=list)

    def append(self, record: dict) -> None:
        if self.records and record["step"] <= self.records[-1]["step"]:
            raise ValueError("history steps must strictly increase")
        self.records.append(record)

    def to_jsonl(self) -> str:
        lines = [json.dumps({"type": "meta", **self.meta}, sort_keys=True)]
        lines += [json.dumps({"type": "step", **r}, sort_keys=True) for r in self.records]
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_jsonl(text: str) -> "TrainHistory":
        meta, records = {}, []
        for line in text.splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            kind = obj.pop("type", "step")
            if kind == "meta":
                meta = obj
            elif kind == "step":
                records.append(obj)
        return TrainHistory(meta, records)


class TrainState:
    def __init__(self, config: TrainConfig, train_ds: Dataset, val_ds: Dataset,
                 prior_set: PriorSet | None):
        cfg = config
        dtype = np.float64 if cfg.dtype == "float64" else np.float32
        if cfg.mode == "prior":
            if prior_set is None:
                raise ValueError("prior mode needs a PriorSet")
            if prior_set.n != train_ds.n:
                raise ValueError("prior set must have one row per training instance")
            prior_dim = prior_set.dim
        else:
            prior_dim = cfg.prior_dim

        self.config = cfg
        self.dtype = dtype
        self.train_x = train_ds.x64().astype(dtype)
        self.val_x = val_ds.x64().astype(dtype)
        self.prior_set = prior_set
        self.priors = None if prior_set is None else prior_set.vectors.astype(dtype)

        gspec = GeneratorSpec(
            latent_dim=cfg.latent_dim, n_layers=cfg.n_layers, hidden=cfg.g_hidden,
            out_dim=train_ds.p, cond_dim=cfg.cond_dim, prior_dim=prior_dim,
            mode=cfg.mode,
            n_instances=train_ds.n if cfg.mode == "per_instance_embedding" else 0,
        )
        dspec = DiscriminatorSpec(in_dim=train_ds.p, hidden=cfg.d_hidden,
                                  feat_dim=cfg.feat_dim, prior_dim=prior_dim)
        ss = np.random.SeedSequence(cfg.seed)
        s_g, s_d, s_rng = [int(c.generate_state(1)[0]) for c in ss.spawn(3)]
        self.gen = Generator(gspec, seed=s_g, dtype=dtype)
        self.disc = Discriminator(dspec, seed=s_d, dtype=dtype)

        # the instance table conditions both networks, so it trains in both
        # phases and lives in its own group
        self.aux_params = ParamSet()
        if cfg.mode == "per_instance_embedding":
            table = self.gen.params["g.table"]
            g_rest = ParamSet()
            for name, t in self.gen.params:
                if name != "g.table":
                    g_rest._params[name] = t
            self.gen.params = g_rest
            self.aux_params._params["g.table"] = table

        self.adam_g = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        self.adam_d = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        self.adam_aux = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        self.ema_g = self.gen.params.copy_values()
        self.ema_aux = self.aux_params.copy_values()
        self.rng = np.random.default_rng(s_rng)
        self.step = 0
        self.last = {}   # diagnostics from the most recent step's batches

    def batch_priors(self, idx) -> Tensor | None:
        """Conditioning vectors for a batch of training-row indices."""
        mode = self.config.mode
        if mode == "prior":
            return Tensor(self.priors[idx], dtype=self.dtype)
        if mode == "per_instance_embedding":
            onehot = np.zeros((len(idx), self.train_x.shape[0]), dtype=self.dtype)
            onehot[np.arange(len(idx)), idx] = 1.0
            return T.matmul(Tensor(onehot), self.aux_params["g.table"])
        return None

    def inference_priors(self, rng, n: int, params_aux: ParamSet | None = None) -> np.ndarray | None:
        """Vicinal samples over the prior set (or the learned table)."""
        mode = self.config.mode
        if mode == "prior":
            return vicinal_sample(self.prior_set, rng, n)
        if mode == "per_instance_embedding":
            table = (params_aux or self.aux_params)["g.table"].data
            return vicinal_sample(PriorSet(table.astype(np.float64)), rng, n)
        return None


def sample_indices(rng, n: int, b: int) -> np.ndarray:
    return rng.integers(0, n, size=b)


def sample_latent(rng, b: int, dim: int, dtype=np.float64) -> np.ndarray:
    return rng.standard_normal((b, dim)).astype(dtype, copy=False)


def disp_loss_d(disc, gen, prior_t, x_batch, z_batch, variant: str):
    """Discriminator loss; the fake path is detached from the generator.

    Unconditional modes score against a zero prior, which reduces exactly
    to the linear head.
    """
    if variant not in LOSS_VARIANTS:
        raise ValueError(f"unknown loss variant {variant!r}")
    with T.no_grad():
        fake = gen.forward(z_batch, prior_t, training=True)
    b = len(x_batch)
    x_cat = np.concatenate([np.asarray(x_batch), fake.data])
    if prior_t is None:
        prior_t = Tensor(np.zeros((b, disc.spec.prior_dim), dtype=fake.data.dtype))
    prior_cat = T.concat([prior_t, prior_t], axis=0)
    scores, _ = disc.forward(x_cat, prior_cat, training=True)
    s_real = T.slice_rows(scores, 0, b)
    s_fake = T.slice_rows(scores, b, 2 * b)
    if variant == "hinge":
        loss = T.add(T.mean(T.hinge(s_real, -1.0)), T.mean(T.hinge(s_fake, 1.0)))
    elif variant == "non_saturating":
        loss = T.add(T.mean(T.softplus(T.scale(s_real, -1.0))),
                     T.mean(T.softplus(s_fake)))
    else:  # wasserstein; spectral norm supplies the Lipschitz constraint
        loss = T.sub(T.mean(s_fake), T.mean(s_real))
    return loss, fake.data


def disp_loss_g(disc, gen, prior_t, z_batch, variant: str):
    """Generator loss; gradients reach the generator (and its embedding)."""
    if variant not in LOSS_VARIANTS:
        raise ValueError(f"unknown loss variant {variant!r}")
    fake = gen.forward(z_batch, prior_t, training=True)
    if prior_t is None:
        prior_t = Tensor(np.zeros((fake.shape[0], disc.spec.prior_dim),
                                  dtype=fake.data.dtype))
    scores, _ = disc.forward(fake, prior_t, training=True)
    if variant == "non_saturating":
        loss = T.mean(T.softplus(T.scale(scores, -1.0)))
    else:
        loss = T.scale(T.mean(scores), -1.0)
    return loss, fake.data


def _check_loss(value: float, step: int, which: str, d_val=None, g_val=None):
    if not np.isfinite(value):
        raise TrainDivergence(
            f"step {step}: non-finite {which} loss "
            f"(L_D={d_val}, L_G={g_val})")


def train_step(state: TrainState, config: TrainConfig) -> None:
    """One full step: d_steps discriminator updates, one generator update,
    then the EMA update."""
    cfg = config
    n = state.train_x.shape[0]
    g_bytes = state.gen.params.state_bytes() if cfg.debug else None

    loss_d_val = None
    for _ in range(cfg.d_steps):
        idx = sample_indices(state.rng, n, cfg.batch_size)
        z = sample_latent(state.rng, cfg.batch_size, cfg.latent_dim, state.dtype)
        prior_t = state.batch_priors(idx)
        loss_d, _ = disp_loss_d(state.disc, state.gen, prior_t,
                                state.train_x[idx], z, cfg.loss)
        loss_d_val = loss_d.item()
        _check_loss(loss_d_val, state.step, "discriminator", d_val=loss_d_val)
        T.backward(loss_d)
        state.adam_d.step(state.disc.params)
        if len(state.aux_params):
            state.adam_aux.step(state.aux_params)
        state.gen.params.zero_grads()

    if cfg.debug:
        assert state.gen.params.state_bytes() == g_bytes, \
            "discriminator phase modified generator parameters"
        d_bytes = state.disc.params.state_bytes()

    idx = sample_indices(state.rng, n, cfg.batch_size)
    z = sample_latent(state.rng, cfg.batch_size, cfg.latent_dim, state.dtype)
    prior_t = state.batch_priors(idx)
    loss_g, fake_data = disp_loss_g(state.disc, state.gen, prior_t, z, cfg.loss)
    loss_g_val = loss_g.item()
    _check_loss(loss_g_val, state.step, "generator", d_val=loss_d_val, g_val=loss_g_val)
    T.backward(loss_g)
    state.adam_g.step(state.gen.params)
    if len(state.aux_params):
        state.adam_aux.step(state.aux_params)
    state.disc.params.zero_grads()

    if cfg.debug:
        assert state.disc.params.state_bytes() == d_bytes, \
            "generator phase modified discriminator parameters"

    ema_update(state.ema_g, state.gen.params, cfg.ema_decay)
    if len(state.aux_params):
        ema_update(state.ema_aux, state.aux_params, cfg.ema_decay)

    state.step += 1
    state.last = {
        "loss_d": loss_d_val,
        "loss_g": loss_g_val,
        "x_idx": idx,
        "fake": fake_data,
    }


def generate_ema(state: TrainState, rng, n: int,
                 ema_g: ParamSet | None = None,
                 ema_aux: ParamSet | None = None) -> np.ndarray:
    """Sample n points with the EMA weights and the mode's inference prior."""
    ema_g = ema_g or state.ema_g
    ema_aux = ema_aux or state.ema_aux
    cfg = state.config
    z = sample_latent(rng, n, cfg.latent_dim, state.dtype)
    priors = state.inference_priors(rng, n, ema_aux)
    with T.no_grad():
        out = state.gen.forward(z, priors, training=False, params=ema_g)
    return out.data.astype(np.float64)


@dataclass
class TrainResult:
    state: TrainState
    history: TrainHistory
    best_ema_g: ParamSet
    best_ema_aux: ParamSet
    best_step: int
    best_fid: float


def train(config: TrainConfig, train_ds: Dataset, val_ds: Dataset,
          prior_set: PriorSet | None = None,
          history_sink=None, extra_meta: dict | None = None) -> TrainResult:
    """Run the full loop; returns final state plus the best-FID snapshot.

    ``history_sink`` is an optional callable receiving each history record
    dict as it is produced (the JSONL streamer in the CLI).
    """
    state = TrainState(config, train_ds, val_ds, prior_set)
    cfg = config
    meta = {"config": asdict(cfg), "run": "train", **(extra_meta or {})}
    history = TrainHistory(meta)
    if history_sink is not None:
        history_sink({"type": "meta", **meta})

    best_fid = np.inf
    best_ema_g = state.ema_g.copy_values()
    best_ema_aux = state.ema_aux.copy_values()
    best_step = 0

    for _ in range(cfg.total_steps):
        train_step(state, cfg)
        step = state.step
        record = None
        if cfg.log_every and (step % cfg.log_every == 0 or step == cfg.total_steps):
            x_train_batch = state.train_x[state.last["x_idx"]]
            record = {
                "step": step,
                "loss_d": state.last["loss_d"],
                "loss_g": state.last["loss_g"],
                "score_train": float(np.mean(
                    state.disc.score_unconditional(x_train_batch))),
                "score_val": float(np.mean(
                    state.disc.score_unconditional(state.val_x))),
                "score_fake": float(np.mean(
                    state.disc.score_unconditional(state.last["fake"]))),
                "fid": None,
            }
        if cfg.fid_every and (step % cfg.fid_every == 0 or step == cfg.total_steps):
            eval_rng = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, step, 0xF1D]).generate_state(1)[0])
            gen_cloud = generate_ema(state, eval_rng, cfg.fid_samples)
            fid_val = metrics.fid(state.val_x.astype(np.float64), gen_cloud)
            if record is None:
                record = {"step": step, "loss_d": state.last["loss_d"],
                          "loss_g": state.last["loss_g"], "fid": None}
            record["fid"] = fid_val
            if fid_val < best_fid:
                best_fid = fid_val
                best_ema_g = state.ema_g.copy_values()
                best_ema_aux = state.ema_aux.copy_values()
                best_step = step
        if record is not None:
            history.append(record)
            if history_sink is not None:
                history_sink({"type": "step", **record})

    if not np.isfinite(best_fid):
        best_ema_g = state.ema_g.copy_values()
        best_ema_aux = state.ema_aux.copy_values()
        best_step = state.step
    return TrainResult(state, history, best_ema_g, best_ema_aux, best_step,
                       float(best_fid))
