"""Multi-run aggregation: median/IQR tables and SVG line plots.

The SVG writer is deliberately minimal and emits byte-deterministic
output for identical inputs (no timestamps, no ids).
"""
from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path

import numpy as np


def _fmt(x: float) -> str:
    return f"{x:.6g}"


class SvgPlot:
    W, H = 640, 400
    MARGIN = 56
    COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")

    def __init__(self, title: str, xlabel: str, ylabel: str):
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.series: list[tuple[str, np.ndarray, np.ndarray]] = []

    def add(self, label: str, x, y) -> None:
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        keep = np.isfinite(x) & np.isfinite(y)
        if keep.any():
            self.series.append((label, x[keep], y[keep]))

    def _ranges(self):
        xs = np.concatenate([s[1] for s in self.series])
        ys = np.concatenate([s[2] for s in self.series])
        x0, x1 = float(xs.min()), float(xs.max())
        y0, y1 = float(ys.min()), float(ys.max())
        if x1 == x0:
            x0, x1 = x0 - 1.0, x1 + 1.0
        if y1 == y0:
            y0, y1 = y0 - 1.0, y1 + 1.0
        pad = 0.05 * (y1 - y0)
        return x0, x1, y0 - pad, y1 + pad

    def render(self) -> str:
        if not self.series:
            return ('<svg xmlns="http://www.w3.org/2000/svg" width="640" '
                    'height="400"><text x="320" y="200" text-anchor="middle">'
                    "no data</text></svg>\n")
        x0, x1, y0, y1 = self._ranges()
        m, w, h = self.MARGIN, self.W, self.H

        def sx(x):
            return m + (x - x0) / (x1 - x0) * (w - 2 * m)

        def sy(y):
            return h - m - (y - y0) / (y1 - y0) * (h - 2 * m)

        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
            f'viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">',
            f'<rect width="{w}" height="{h}" fill="white"/>',
            f'<text x="{w / 2:.0f}" y="20" text-anchor="middle" '
            f'font-size="14">{self.title}</text>',
            f'<line x1="{m}" y1="{h - m}" x2="{w - m}" y2="{h - m}" stroke="black"/>',
            f'<line x1="{m}" y1="{m}" x2="{m}" y2="{h - m}" stroke="black"/>',
            f'<text x="{w / 2:.0f}" y="{h - 12}" text-anchor="middle">{self.xlabel}</text>',
            f'<text x="16" y="{h / 2:.0f}" text-anchor="middle" '
            f'transform="rotate(-90 16 {h / 2:.0f})">{self.ylabel}</text>',
        ]
        for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
            xv = x0 + frac * (x1 - x0)
            yv = y0 + frac * (y1 - y0)
            parts.append(f'<text x="{sx(xv):.1f}" y="{h - m + 16}" '
                         f'text-anchor="middle">{_fmt(xv)}</text>')
            parts.append(f'<text x="{m - 6}" y="{sy(yv):.1f}" '
                         f'text-anchor="end" dominant-baseline="middle">{_fmt(yv)}</text>')
            if frac > 0.0:
                parts.append(f'<line x1="{m}" y1="{sy(yv):.1f}" x2="{w - m}" '
                             f'y2="{sy(yv):.1f}" stroke="#dddddd"/>')
        for k, (label, xs, ys) in enumerate(self.series):
            color = self.COLORS[k % len(self.COLORS)]
            pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
            parts.append(f'<polyline points="{pts}" fill="none" '
                         f'stroke="{color}" stroke-width="1.5"/>')
            parts.append(f'<text x="{w - m + 4}" y="{m + 16 * k + 12}" '
                         f'fill="{color}">{label}</text>')
        parts.append("</svg>")
        return "\n".join(parts) + "\n"


def load_history_file(path):
    meta, steps, final = {}, [], {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        kind = obj.pop("type", "step")
        if kind == "meta":
            meta = obj
        elif kind == "final":
            final = obj
        else:
            steps.append(obj)
    return {"meta": meta, "steps": steps, "final": final, "path": str(path)}


def _median_iqr(values):
    arr = np.asarray([v for v in values if v is not None and np.isfinite(v)])
    if len(arr) == 0:
        return None
    return {
        "median": float(np.median(arr)),
        "q25": float(np.percentile(arr, 25)),
        "q75": float(np.percentile(arr, 75)),
        "n": int(len(arr)),
    }


def _group_key(meta) -> str:
    cfg = meta.get("config", {})
    parts = [cfg.get("mode", "?"), cfg.get("loss", "?")]
    if "n_target" in meta:
        parts.append(f"n{meta['n_target']}")
    return "/".join(str(p) for p in parts)


def _series_median(histories, field):
    """Per-step medians of a field across runs sharing logging cadence."""
    per_step = defaultdict(list)
    for h in histories:
        for rec in h["steps"]:
            if rec.get(field) is not None:
                per_step[rec["step"]].append(rec[field])
    steps = sorted(per_step)
    return (np.array(steps, dtype=float),
            np.array([np.median(per_step[s]) for s in steps]))


def aggregate(history_paths, out_dir) -> dict:
    """Summarize runs grouped by (mode, loss, budget); write tables + SVGs."""
    if not history_paths:
        raise ValueError("no history files matched")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    histories = [load_history_file(p) for p in sorted(str(p) for p in history_paths)]
    groups = defaultdict(list)
    for h in histories:
        groups[_group_key(h["meta"])].append(h)

    tables = {}
    for key in sorted(groups):
        runs = groups[key]
        fids = [min((r["fid"] for r in h["steps"] if r.get("fid") is not None),
                    default=None) for h in runs]
        last_gap = [
            (h["steps"][-1]["score_train"] - h["steps"][-1]["score_val"])
            if h["steps"] and "score_train" in h["steps"][-1] else None
            for h in runs
        ]
        coverage = [h["final"].get("coverage") for h in runs]
        tables[key] = {
            "runs": len(runs),
            "best_fid": _median_iqr(fids),
            "final_gap_unconditional": _median_iqr(last_gap),
            "coverage": _median_iqr(coverage),
        }

    (out_dir / "tables.json").write_text(
        json.dumps(tables, sort_keys=True, indent=2) + "\n")
    lines = ["| group | runs | best FID median [IQR] | coverage median |",
             "|---|---|---|---|"]
    for key in sorted(tables):
        t = tables[key]
        f = t["best_fid"]
        c = t["coverage"]
        fid_txt = (f"{_fmt(f['median'])} [{_fmt(f['q25'])}, {_fmt(f['q75'])}]"
                   if f else "-")
        cov_txt = _fmt(c["median"]) if c else "-"
        lines.append(f"| {key} | {t['runs']} | {fid_txt} | {cov_txt} |")
    (out_dir / "tables.md").write_text("\n".join(lines) + "\n")

    fid_plot = SvgPlot("FID during training (median over runs)", "step", "FID")
    gap_plot = SvgPlot("Score gap, train minus held-out (median)", "step", "gap")
    fake_plot = SvgPlot("Discriminator scores (median)", "step", "score")
    for key in sorted(groups):
        runs = groups[key]
        steps, fid_med = _series_median(runs, "fid")
        if len(steps):
            fid_plot.add(key, steps, fid_med)
        s2, tr = _series_median(runs, "score_train")
        _, va = _series_median(runs, "score_val")
        if len(s2):
            gap_plot.add(key, s2, tr - va)
            fake_plot.add(key + " real", s2, tr)
        s3, fk = _series_median(runs, "score_fake")
        if len(s3):
            fake_plot.add(key + " fake", s3, fk)
    (out_dir / "fid_vs_step.svg").write_text(fid_plot.render())
    (out_dir / "gap_vs_step.svg").write_text(gap_plot.render())
    (out_dir / "scores_vs_step.svg").write_text(fake_plot.render())

    # coverage / FID versus training budget when several budgets are present
    by_budget = defaultdict(lambda: defaultdict(list))
    for h in histories:
        n_target = h["meta"].get("n_target")
        mode = h["meta"].get("config", {}).get("mode", "?")
        if n_target is None:
            continue
        best = min((r["fid"] for r in h["steps"] if r.get("fid") is not None),
                   default=None)
        by_budget[mode][n_target].append(
            {"fid": best, "coverage": h["final"].get("coverage")})
    if any(len(budgets) > 1 for budgets in by_budget.values()):
        bplot = SvgPlot("Best FID vs training budget (median)", "n_target", "FID")
        cplot = SvgPlot("Coverage vs training budget (median)", "n_target", "modes")
        for mode in sorted(by_budget):
            budgets = sorted(by_budget[mode])
            fmed = [_median_iqr([r["fid"] for r in by_budget[mode][b]]) for b in budgets]
            cmed = [_median_iqr([r["coverage"] for r in by_budget[mode][b]]) for b in budgets]
            xs = [b for b, f in zip(budgets, fmed) if f]
            if xs:
                bplot.add(mode, xs, [f["median"] for f in fmed if f])
            xs = [b for b, c in zip(budgets, cmed) if c]
            if xs:
                cplot.add(mode, xs, [c["median"] for c in cmed if c])
        (out_dir / "fid_vs_budget.svg").write_text(bplot.render())
        (out_dir / "coverage_vs_budget.svg").write_text(cplot.render())
    return tables
