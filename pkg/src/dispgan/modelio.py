"""Saving and loading trained models through the checkpoint container.

A GAN checkpoint is self-contained for inference and evaluation: live
parameters, one EMA parameter set (final or best snapshot), normalization
and power-iteration buffers, the prior set, the frozen extractor, the
train/val splits it was fitted on, and (after ``fit-gmm``) a mixture
model.  An extractor checkpoint carries just the frozen feature map.
"""
from __future__ import annotations

import numpy as np

from .checkpoint import Checkpoint, CheckpointError
from .data import Dataset
from .nets import (Discriminator, DiscriminatorSpec, FeatureExtractor,
                   Generator, GeneratorSpec)
from .optim import ParamSet
from .prior import GmmModel, PriorSet
from .train import TrainConfig, TrainState


def _put_params(ckpt: Checkpoint, prefix: str, params: ParamSet) -> None:
    for name, t in params:
        ckpt.put(prefix + name, t.data)


def _load_params(ckpt: Checkpoint, prefix: str) -> ParamSet:
    out = ParamSet()
    for name, arr in ckpt.group(prefix).items():
        out.add(name, arr, dtype=arr.dtype)
    return out


def extractor_to_tensors(ckpt: Checkpoint, ext: FeatureExtractor) -> None:
    for name, arr in ext.state_arrays().items():
        ckpt.put(f"ext/{name}", arr)
    ckpt.meta["extractor"] = {
        "kind": ext.kind, "in_dim": ext.in_dim, "out_dim": ext.out_dim,
        "train_accuracy": ext.train_accuracy,
    }


def extractor_from_tensors(ckpt: Checkpoint) -> FeatureExtractor | None:
    info = ckpt.meta.get("extractor")
    if not info:
        return None
    group = ckpt.group("ext/")
    if info["kind"] == "identity_whitened":
        whiten = (group["whiten.mean"], group["whiten.transform"])
        return FeatureExtractor(info["kind"], info["in_dim"], info["out_dim"],
                                whiten=whiten)
    weights = [group[f"layer{i}"] for i in range(len(group))]
    return FeatureExtractor(info["kind"], info["in_dim"], info["out_dim"],
                            weights=weights, train_accuracy=info.get("train_accuracy"))


def save_extractor(path, ext: FeatureExtractor, meta: dict | None = None) -> None:
    ckpt = Checkpoint({"kind": "extractor", **(meta or {})})
    extractor_to_tensors(ckpt, ext)
    ckpt.save(path)


def load_extractor(path) -> FeatureExtractor:
    ckpt = Checkpoint.load(path)
    if ckpt.meta.get("kind") != "extractor":
        raise CheckpointError(f"{path}: not an extractor checkpoint")
    ext = extractor_from_tensors(ckpt)
    if ext is None:
        raise CheckpointError(f"{path}: extractor payload missing")
    return ext


def save_gan(path, state: TrainState, ema_g: ParamSet, ema_aux: ParamSet,
             extractor: FeatureExtractor | None, meta: dict,
             save_optimizer: bool = False, gmm: GmmModel | None = None) -> None:
    ckpt = Checkpoint({
        "kind": "gan",
        "mode": state.config.mode,
        "dtype": state.config.dtype,
        "gspec": _spec_dict(state.gen.spec),
        "dspec": _spec_dict(state.disc.spec),
        "prior_hash": state.prior_set.source_hash if state.prior_set else "",
        **meta,
    })
    _put_params(ckpt, "param/", state.gen.params)
    _put_params(ckpt, "dparam/", state.disc.params)
    _put_params(ckpt, "aux/", state.aux_params)
    _put_params(ckpt, "ema/", ema_g)
    _put_params(ckpt, "emaaux/", ema_aux)
    for i, (rm, rv) in enumerate(zip(state.gen.running_mean, state.gen.running_var)):
        ckpt.put(f"buf/rm{i}", rm)
        ckpt.put(f"buf/rv{i}", rv)
    for name, u in state.gen.sn_u.items():
        ckpt.put(f"snu_g/{name}", u)
    for name, u in state.disc.sn_u.items():
        ckpt.put(f"snu_d/{name}", u)
    if state.prior_set is not None:
        ckpt.put("prior/vectors", state.prior_set.vectors)
    ckpt.put("data/train_x", state.train_x.astype(np.float32))
    ckpt.put("data/val_x", state.val_x.astype(np.float32))
    if extractor is not None:
        extractor_to_tensors(ckpt, extractor)
    if save_optimizer:
        for tag, opt in (("g", state.adam_g), ("d", state.adam_d),
                         ("aux", state.adam_aux)):
            s = opt.state()
            ckpt.meta[f"adam_{tag}_t"] = s["t"]
            for name, arr in s["m"].items():
                ckpt.put(f"adam/{tag}/m/{name}", arr)
            for name, arr in s["v"].items():
                ckpt.put(f"adam/{tag}/v/{name}", arr)
    if gmm is not None:
        put_gmm(ckpt, gmm)
    ckpt.save(path)


def put_gmm(ckpt: Checkpoint, gmm: GmmModel) -> None:
    ckpt.put("gmm/weights", gmm.weights)
    ckpt.put("gmm/means", gmm.means)
    ckpt.put("gmm/covs", gmm.covs)
    ckpt.meta["gmm"] = {"cov_type": gmm.cov_type, "k": gmm.k}


def _spec_dict(spec) -> dict:
    return {k: v for k, v in vars(spec).items()}


class GanBundle:
    """A loaded GAN checkpoint, reassembled for inference and evaluation."""

    def __init__(self, ckpt: Checkpoint):
        meta = ckpt.meta
        if meta.get("kind") != "gan":
            raise CheckpointError("not a GAN checkpoint")
        self.meta = meta
        self.gspec = GeneratorSpec(**meta["gspec"])
        self.dspec = DiscriminatorSpec(**meta["dspec"])
        dtype = np.float64 if meta.get("dtype", "float64") == "float64" else np.float32
        self.gen = Generator(self.gspec, seed=0, dtype=dtype)
        self.gen.params = _load_params(ckpt, "param/")
        self.disc = Discriminator(self.dspec, seed=0, dtype=dtype)
        self.disc.params = _load_params(ckpt, "dparam/")
        self.aux = _load_params(ckpt, "aux/")
        self.ema_g = _load_params(ckpt, "ema/")
        self.ema_aux = _load_params(ckpt, "emaaux/")
        n_layers = self.gspec.n_layers
        self.gen.running_mean = [ckpt.get(f"buf/rm{i}") for i in range(n_layers)]
        self.gen.running_var = [ckpt.get(f"buf/rv{i}") for i in range(n_layers)]
        for name, u in ckpt.group("snu_g/").items():
            self.gen.sn_u[name] = u
        for name, u in ckpt.group("snu_d/").items():
            self.disc.sn_u[name] = u
        self.prior_set = None
        if "prior/vectors" in ckpt.tensors:
            self.prior_set = PriorSet(ckpt.get("prior/vectors"),
                                      source_hash=meta.get("prior_hash", ""))
        self.train_x = ckpt.get("data/train_x").astype(np.float64)
        self.val_x = ckpt.get("data/val_x").astype(np.float64)
        self.extractor = extractor_from_tensors(ckpt)
        self.gmm = None
        if "gmm" in meta:
            self.gmm = GmmModel(ckpt.get("gmm/weights"), ckpt.get("gmm/means"),
                                ckpt.get("gmm/covs"),
                                cov_type=meta["gmm"]["cov_type"])

    @staticmethod
    def load(path) -> "GanBundle":
        return GanBundle(Checkpoint.load(path))

    @property
    def mode(self) -> str:
        return self.gspec.mode

    def inference_table(self) -> np.ndarray | None:
        if self.mode == "per_instance_embedding":
            return self.ema_aux["g.table"].data.astype(np.float64)
        return None
