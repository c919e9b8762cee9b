"""Command-line interface.

Subcommands cover the full pipeline: pretrain-extractor, train, sample,
fit-gmm, eval, invert, report.  Exit codes: 0 success, 1 usage or input
error, 2 runtime error.  Every command is deterministic given --seed;
wall-clock timing is only recorded when --timing is passed.
"""
from __future__ import annotations

import argparse
import glob as globmod
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import kernels
from .checkpoint import Checkpoint, CheckpointError
from .config import ConfigError, RunConfig
from .data import (Dataset, DatasetIOError, make_transfer, read_dataset,
                   write_dataset)
from .metrics import mode_coverage
from .modelio import (GanBundle, load_extractor, put_gmm, save_extractor,
                      save_gan)
from .nets import ExtractorSpec, pretrain_extractor
from .pipeline import (EvalSettings, SamplerError, evaluate, generate, invert,
                       report_json)
from .prior import extract_priors, gmm_fit
from .report import aggregate
from .train import TrainDivergence, train

USAGE_ERRORS = (ConfigError, DatasetIOError, CheckpointError,
                FileNotFoundError, IsADirectoryError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit2(message)


class SystemExit2(Exception):
    """Usage error carrying the message; mapped to exit code 1."""


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dispgan", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("pretrain-extractor", help="train and freeze a feature extractor")
    pe.add_argument("--source", required=True, help="labeled source dataset file")
    pe.add_argument("--out", required=True, help="extractor checkpoint path")
    pe.add_argument("--mode", default="pretext",
                    choices=["pretext", "random", "identity"])
    pe.add_argument("--dim", type=int, default=8, help="feature dimension")
    pe.add_argument("--hidden", type=int, default=32)
    pe.add_argument("--steps", type=int, default=1500)
    pe.add_argument("--lr", type=float, default=1e-3)
    pe.add_argument("--seed", type=int, default=0)

    tr = sub.add_parser("train", help="run the full training loop")
    tr.add_argument("--config", required=True)
    tr.add_argument("--out", required=True, help="checkpoint path (final weights)")
    tr.add_argument("--history", required=True, help="JSONL history stream path")
    tr.add_argument("--steps", type=int, default=None,
                    help="override total_steps (0 writes an init checkpoint)")
    tr.add_argument("--seed", type=int, default=None, help="override train seed")
    tr.add_argument("--save-optimizer", action="store_true")

    sa = sub.add_parser("sample", help="generate points from a checkpoint")
    sa.add_argument("--ckpt", required=True)
    sa.add_argument("--sampler", default="vicinal", choices=["vicinal", "gmm", "table"])
    sa.add_argument("--n", type=int, required=True)
    sa.add_argument("--out", required=True, help="output dataset file")
    sa.add_argument("--seed", type=int, default=0)

    fg = sub.add_parser("fit-gmm", help="fit a mixture over the stored prior set")
    fg.add_argument("--ckpt", required=True)
    fg.add_argument("--k", type=int, required=True)
    fg.add_argument("--subset", type=int, default=None)
    fg.add_argument("--seed", type=int, default=0)
    fg.add_argument("--cov", default="diag", choices=["diag", "full"])
    fg.add_argument("--space", default="raw", choices=["raw", "embedded"])
    fg.add_argument("--out", default=None, help="default: rewrite --ckpt in place")

    ev = sub.add_parser("eval", help="full metric report against a test set")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--test", required=True)
    ev.add_argument("--report", required=True, help="output JSON path")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--n-gen", type=int, default=1000)
    ev.add_argument("--sampler", default="vicinal", choices=["vicinal", "gmm", "table"])
    ev.add_argument("--ct-cells", type=int, default=0)
    ev.add_argument("--ivom-queries", type=int, default=0)
    ev.add_argument("--ivom-steps", type=int, default=500)
    ev.add_argument("--timing", action="store_true",
                    help="record wall-clock time (breaks byte determinism)")

    iv = sub.add_parser("invert", help="reconstruct query points by optimization")
    iv.add_argument("--ckpt", required=True)
    iv.add_argument("--queries", required=True, help="dataset file of query points")
    iv.add_argument("--report", required=True)
    iv.add_argument("--steps", type=int, default=500)
    iv.add_argument("--lr", type=float, default=0.1)
    iv.add_argument("--seed", type=int, default=0)
    iv.add_argument("--limit", type=int, default=None, help="invert only the first N queries")

    rp = sub.add_parser("report", help="aggregate history files into tables and plots")
    rp.add_argument("--histories", required=True, help="glob of history JSONL files")
    rp.add_argument("--out", required=True, help="output directory")
    return p


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return p


def cmd_pretrain_extractor(args) -> int:
    ds = read_dataset(_require_file(args.source, "source dataset"))
    kind = {"pretext": "pretext_classifier", "random": "random_frozen",
            "identity": "identity_whitened"}[args.mode]
    spec = ExtractorSpec(out_dim=args.dim, hidden=args.hidden, steps=args.steps,
                         lr=args.lr, seed=args.seed, kind=kind)
    ext = pretrain_extractor(ds, spec)
    save_extractor(args.out, ext, meta={"source": str(args.source),
                                        "seed": args.seed})
    if ext.train_accuracy is not None:
        print(f"source accuracy: {ext.train_accuracy:.4f}")
    else:
        print(f"extractor frozen without training (mode={args.mode})")
    print(f"wrote {args.out}")
    return 0


def _resolve_training_inputs(cfg: RunConfig):
    if cfg.paths["train_file"]:
        train_ds = read_dataset(_require_file(cfg.paths["train_file"], "train set"))
        if not cfg.paths["val_file"]:
            raise ConfigError("paths.val_file is required with paths.train_file")
        val_ds = read_dataset(_require_file(cfg.paths["val_file"], "val set"))
        centers, sigma, source = None, None, None
    else:
        splits = make_transfer(cfg.data, cfg.train.seed)
        train_ds, val_ds = splits.target_train, splits.target_val
        centers = cfg.data.target_centers().tolist()
        sigma = cfg.data.target_sigma
        source = splits.source
    extractor = None
    if cfg.train.mode == "prior":
        if cfg.paths["extractor_file"]:
            extractor = load_extractor(
                _require_file(cfg.paths["extractor_file"], "extractor checkpoint"))
        elif source is not None:
            extractor = pretrain_extractor(source, cfg.extractor)
        else:
            raise ConfigError(
                "prior mode with explicit data files needs paths.extractor_file")
    return train_ds, val_ds, extractor, centers, sigma


def cmd_train(args) -> int:
    cfg = RunConfig.load(_require_file(args.config, "config file"))
    if args.steps is not None:
        cfg.train.total_steps = args.steps
    if args.seed is not None:
        cfg.train.seed = args.seed
    train_ds, val_ds, extractor, centers, sigma = _resolve_training_inputs(cfg)
    prior_set = extract_priors(train_ds, extractor) if extractor is not None \
        and cfg.train.mode == "prior" else None

    run_id = f"{cfg.hash()}-s{cfg.train.seed}"
    extra_meta = {"run_id": run_id, "config_hash": cfg.hash(),
                  "n_target": train_ds.n, "backend": kernels.BACKEND}
    history_path = Path(args.history)
    history_path.parent.mkdir(parents=True, exist_ok=True)
    with open(history_path, "w") as hist_fh:
        def sink(record):
            hist_fh.write(json.dumps(record, sort_keys=True) + "\n")

        result = train(cfg.train, train_ds, val_ds, prior_set,
                       history_sink=sink, extra_meta=extra_meta)

        final_line = {"type": "final", "best_step": result.best_step,
                      "best_fid": result.best_fid}
        if centers is not None:
            gen = generate_from_state(result, n=1000, seed=cfg.train.seed)
            covered, hist = mode_coverage(gen, np.asarray(centers), sigma,
                                          threshold_sigma=cfg.eval["threshold_sigma"],
                                          coverage_min=cfg.eval["coverage_min"])
            final_line["coverage"] = covered
            final_line["coverage_histogram"] = hist.tolist()
        hist_fh.write(json.dumps(final_line, sort_keys=True) + "\n")

    meta = {"config_text": cfg.dump(), "config_hash": cfg.hash(),
            "run_id": run_id, "seed": cfg.train.seed,
            "n_target": train_ds.n, "best_step": result.best_step,
            "best_fid": result.best_fid if np.isfinite(result.best_fid) else None,
            "mode_centers": centers, "mode_sigma": sigma}
    out = Path(args.out)
    save_gan(out, result.state, result.state.ema_g, result.state.ema_aux,
             extractor, {**meta, "snapshot": "final"},
             save_optimizer=args.save_optimizer)
    best_path = out.with_name(out.stem + ".best" + (out.suffix or ".ckpt"))
    save_gan(best_path, result.state, result.best_ema_g, result.best_ema_aux,
             extractor, {**meta, "snapshot": "best"},
             save_optimizer=args.save_optimizer)
    print(f"wrote {out} (final) and {best_path} (best @ step {result.best_step})")
    return 0


def generate_from_state(result, n: int, seed: int) -> np.ndarray:
    from .train import generate_ema
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0DE]).generate_state(1)[0])
    return generate_ema(result.state, rng, n)


def cmd_sample(args) -> int:
    bundle = GanBundle.load(_require_file(args.ckpt, "checkpoint"))
    points = generate(bundle, args.n, sampler=args.sampler, seed=args.seed) \
        if args.n > 0 else np.zeros((0, bundle.gspec.out_dim))
    write_dataset(args.out, Dataset(points.astype(np.float32), split="generated"))
    print(f"wrote {args.n} samples to {args.out}")
    return 0


def cmd_fit_gmm(args) -> int:
    path = _require_file(args.ckpt, "checkpoint")
    ckpt = Checkpoint.load(path)
    bundle = GanBundle(ckpt)
    if bundle.mode == "per_instance_embedding":
        vectors = bundle.inference_table()
    elif bundle.prior_set is not None:
        vectors = bundle.prior_set.vectors
    else:
        raise SamplerError("checkpoint has no prior set or table to fit")
    if args.space == "embedded":
        from . import tensor as T
        with T.no_grad():
            vectors = bundle.gen.embed_prior(vectors, params=bundle.ema_g,
                                             training=False).data
    model = gmm_fit(vectors, k=args.k, subset_size=args.subset,
                    seed=args.seed, cov_type=args.cov)
    put_gmm(ckpt, model)
    ckpt.meta["gmm"]["space"] = args.space
    ckpt.meta["gmm"]["seed"] = args.seed
    ckpt.meta["gmm"]["subset"] = args.subset
    out = args.out or path
    ckpt.save(out)
    print(f"fitted k={args.k} mixture ({args.space} space, "
          f"final loglik {model.ll_trace[-1]:.4f}); wrote {out}")
    return 0


def cmd_eval(args) -> int:
    t0 = time.monotonic()
    bundle = GanBundle.load(_require_file(args.ckpt, "checkpoint"))
    test_ds = read_dataset(_require_file(args.test, "test dataset"))
    settings = EvalSettings(n_gen=args.n_gen, sampler=args.sampler,
                            ct_cells=args.ct_cells,
                            ivom_queries=args.ivom_queries,
                            ivom_steps=args.ivom_steps)
    report = evaluate(bundle, test_ds.x64(), settings, seed=args.seed)
    report["run_id"] = bundle.meta.get("run_id")
    report["config_hash"] = bundle.meta.get("config_hash")
    report["snapshot"] = bundle.meta.get("snapshot")
    report["backend"] = kernels.BACKEND
    if args.timing:
        report["wall_clock_s"] = round(time.monotonic() - t0, 3)
    else:
        report["wall_clock_s"] = None
        report["wall_clock_reason"] = "omitted for deterministic output (use --timing)"
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    Path(args.report).write_text(report_json(report))
    print(f"wrote {args.report} (fid={report['fid']:.6g})")
    return 0


def cmd_invert(args) -> int:
    bundle = GanBundle.load(_require_file(args.ckpt, "checkpoint"))
    queries = read_dataset(_require_file(args.queries, "query dataset")).x64()
    if args.limit is not None:
        queries = queries[: args.limit]
    results = invert(bundle, queries, steps=args.steps, lr=args.lr, seed=args.seed)
    objs = [r.best_objective for r in results]
    report = {
        "run_id": bundle.meta.get("run_id"),
        "snapshot": bundle.meta.get("snapshot"),
        "steps": args.steps,
        "lr": args.lr,
        "seed": args.seed,
        "n_queries": len(objs),
        "objectives": objs,
        "median": float(np.median(objs)) if objs else None,
        "mean": float(np.mean(objs)) if objs else None,
    }
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    Path(args.report).write_text(report_json(report))
    print(f"wrote {args.report} (median objective "
          f"{report['median']:.6g})" if objs else f"wrote {args.report}")
    return 0


def cmd_report(args) -> int:
    paths = sorted(globmod.glob(args.histories))
    if not paths:
        raise FileNotFoundError(f"no history files match {args.histories!r}")
    tables = aggregate(paths, args.out)
    print(f"aggregated {len(paths)} runs into {args.out} "
          f"({len(tables)} groups)")
    return 0


COMMANDS = {
    "pretrain-extractor": cmd_pretrain_extractor,
    "train": cmd_train,
    "sample": cmd_sample,
    "fit-gmm": cmd_fit_gmm,
    "eval": cmd_eval,
    "invert": cmd_invert,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit2 as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except SystemExit2 as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainDivergence, SamplerError, FloatingPointError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
