"""Report generation: aggregate tables (CSV), histogram data (JSON), and
rendered figures (PNG), all derived purely from a list of run records so that
re-running on the same records reproduces the report byte for byte.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .records import RunRecord

_METRICS = ("r2", "corr", "mse", "mae")

# Stable method order for tables and figure axes.
_METHOD_ORDER = (
    "in_domain_supervised",
    "out_of_domain_supervised",
    "wdgrl",
    "autoencoder",
    "deep_coral",
    "transfer",
    "dann",
    "dual_adv",
)


def _fmt(x) -> str:
    if x is None:
        return "nan"
    return f"{float(x):.6g}"


def _ordered_methods(methods) -> list[str]:
    known = [m for m in _METHOD_ORDER if m in methods]
    extra = sorted(m for m in methods if m not in _METHOD_ORDER)
    return known + extra


def _metric_values(records: list[RunRecord], name: str) -> np.ndarray:
    vals = []
    for r in records:
        if r.metrics is None:
            continue
        v = getattr(r.metrics, name)
        if v is not None:
            vals.append(float(v))
    return np.array(vals)


def _mean_std(values: np.ndarray) -> tuple[float, float]:
    if values.size == 0:
        return float("nan"), float("nan")
    return float(values.mean()), float(values.std())


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _save_fig(fig, path: Path) -> None:
    fig.savefig(path, dpi=120, metadata={"Software": "fitadapt"})
    plt.close(fig)


def method_comparison_rows(records: list[RunRecord]) -> list[list]:
    by_method = defaultdict(list)
    for r in records:
        by_method[r.method].append(r)
    rows = []
    for method in _ordered_methods(by_method):
        row = [method, len(by_method[method])]
        for metric in _METRICS:
            mean, std = _mean_std(_metric_values(by_method[method], metric))
            row += [_fmt(mean), _fmt(std)]
        rows.append(row)
    return rows


def _comparison_figure(records: list[RunRecord], path: Path) -> None:
    by_method = defaultdict(list)
    for r in records:
        by_method[r.method].append(r)
    methods = _ordered_methods(by_method)
    means, stds = [], []
    for m in methods:
        mean, std = _mean_std(_metric_values(by_method[m], "corr"))
        means.append(mean)
        stds.append(std)
    fig, ax = plt.subplots(figsize=(8, 4))
    x = np.arange(len(methods))
    ax.bar(x, means, yerr=stds, capsize=3, color="#4878b0")
    ax.set_xticks(x)
    ax.set_xticklabels(methods, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("test Pearson correlation")
    ax.set_title("Method comparison (mean over folds and seeds)")
    fig.tight_layout()
    _save_fig(fig, path)


def sweep_rows(records: list[RunRecord]) -> list[list]:
    by_ratio = defaultdict(list)
    for r in records:
        by_ratio[r.injection_frac].append(r)
    rows = []
    for ratio in sorted(by_ratio):
        ok = [r for r in by_ratio[ratio] if r.metrics is not None]
        errs = len(by_ratio[ratio]) - len(ok)
        mse = _metric_values(ok, "mse")
        corr_mean, _ = _mean_std(_metric_values(ok, "corr"))
        if mse.size:
            q25, q50, q75 = np.quantile(mse, [0.25, 0.5, 0.75])
            row = [
                _fmt(ratio),
                _fmt(by_ratio[ratio][0].injection_frac_source),
                len(ok),
                errs,
                _fmt(mse.min()),
                _fmt(q25),
                _fmt(q50),
                _fmt(q75),
                _fmt(mse.max()),
                _fmt(mse.mean()),
                _fmt(corr_mean),
            ]
        else:
            row = [_fmt(ratio), "nan", 0, errs] + ["nan"] * 7
        rows.append(row)
    return rows


def _sweep_figure(records: list[RunRecord], path: Path) -> None:
    by_ratio = defaultdict(list)
    for r in records:
        if r.metrics is not None:
            by_ratio[r.injection_frac].append(float(r.metrics.mse))
    ratios = sorted(by_ratio)
    data = [by_ratio[r] for r in ratios]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.boxplot(data, tick_labels=[f"{r:g}" for r in ratios])
    ax.set_xlabel("injected source fraction of target train")
    ax.set_ylabel("test MSE")
    ax.set_title("Injection-ratio sweep")
    fig.tight_layout()
    _save_fig(fig, path)


def ablation_rows(records: list[RunRecord]) -> list[list]:
    by_arm = defaultdict(list)
    for r in records:
        by_arm[r.arm].append(r)
    rows = []
    for arm in ("coarse_only", "fine_only", "full"):
        if arm not in by_arm:
            continue
        row = [arm, len(by_arm[arm])]
        for metric in _METRICS:
            mean, std = _mean_std(_metric_values(by_arm[arm], metric))
            row += [_fmt(mean), _fmt(std)]
        rows.append(row)
    return rows


def _ablation_figure(records: list[RunRecord], path: Path) -> None:
    rows = ablation_rows(records)
    arms = [r[0] for r in rows]
    corr = [float(r[4]) for r in rows]
    std = [float(r[5]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(np.arange(len(arms)), corr, yerr=std, capsize=3, color="#5f9e6e")
    ax.set_xticks(np.arange(len(arms)))
    ax.set_xticklabels(arms)
    ax.set_ylabel("test Pearson correlation")
    ax.set_title("Discriminator ablation")
    fig.tight_layout()
    _save_fig(fig, path)


def stress_rows(records: list[RunRecord]) -> list[list]:
    by_cell = defaultdict(list)
    for r in records:
        by_cell[(r.shift_offset, r.shift_noise_std, r.method)].append(r)
    rows = []
    for (offset, noise, method) in sorted(by_cell, key=lambda k: (k[0], k[2])):
        cell = by_cell[(offset, noise, method)]
        kls = [r.kl_source_target for r in cell if r.kl_source_target is not None]
        corr_mean, corr_std = _mean_std(_metric_values(cell, "corr"))
        rows.append(
            [
                _fmt(offset),
                _fmt(noise),
                _fmt(np.mean(kls) if kls else None),
                method,
                len(cell),
                _fmt(corr_mean),
                _fmt(corr_std),
            ]
        )
    return rows


def _stress_figure(records: list[RunRecord], path: Path) -> None:
    by_method = defaultdict(dict)
    for row in stress_rows(records):
        offset, noise, kl, method, n, corr_mean, corr_std = row
        by_method[method][float(kl)] = float(corr_mean)
    fig, ax = plt.subplots(figsize=(6, 4))
    for method in _ordered_methods(by_method):
        pts = sorted(by_method[method].items())
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=method)
    ax.set_xlabel("source-target label KL divergence")
    ax.set_ylabel("test Pearson correlation")
    ax.set_title("Label-shift stress test")
    ax.legend()
    fig.tight_layout()
    _save_fig(fig, path)


def _histogram_json(records: list[RunRecord], out: Path) -> None:
    by_method = defaultdict(list)
    for r in records:
        if r.truth_hist is not None and r.pred_hist is not None:
            by_method[r.method].append(r)
    hist_dir = out / "histograms"
    hist_dir.mkdir(parents=True, exist_ok=True)
    for method, recs in sorted(by_method.items()):
        payload = {
            "schema_version": 1,
            "method": method,
            "runs": [
                {
                    "kind": r.kind,
                    "seed": r.seed,
                    "fold": r.fold,
                    "arm": r.arm,
                    "truth": {
                        "bin_edges": [float(e) for e in r.truth_hist.bin_edges],
                        "mass": [float(m) for m in r.truth_hist.mass],
                    },
                    "pred": {
                        "bin_edges": [float(e) for e in r.pred_hist.bin_edges],
                        "mass": [float(m) for m in r.pred_hist.mass],
                    },
                }
                for r in recs
            ],
        }
        with open(hist_dir / f"{method}.json", "w", encoding="utf-8") as f:
            json.dump(payload, f, sort_keys=True, indent=2)
            f.write("\n")


def _histogram_figures(records: list[RunRecord], out: Path) -> None:
    by_method: dict[str, RunRecord] = {}
    for r in records:
        if r.truth_hist is not None and r.method not in by_method:
            by_method[r.method] = r
    for method, r in sorted(by_method.items()):
        edges = r.truth_hist.bin_edges
        centers = 0.5 * (edges[:-1] + edges[1:])
        width = float(edges[1] - edges[0])
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.bar(centers, r.truth_hist.mass, width=width, alpha=0.55, label="ground truth")
        ax.bar(centers, r.pred_hist.mass, width=width, alpha=0.55, label="prediction")
        ax.set_xlabel("fitness label")
        ax.set_ylabel("probability mass")
        ax.set_title(f"Prediction vs truth distribution: {method}")
        ax.legend()
        fig.tight_layout()
        _save_fig(fig, out / f"hist_{method}.png")


def make_report(records: list[RunRecord], output_dir) -> list[str]:
    """Write every table/figure supported by the given records; returns the
    list of files written (relative to ``output_dir``)."""
    if not records:
        raise ValueError("no records to report on")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[str] = []

    def emit(name: str) -> Path:
        written.append(name)
        return out / name

    cv = [r for r in records if r.kind == "cv"]
    sweep = [r for r in records if r.kind == "sweep"]
    abl = [r for r in records if r.kind == "ablation"]
    stress = [r for r in records if r.kind == "stress"]

    header = ["method", "n_runs"]
    for metric in _METRICS:
        header += [f"{metric}_mean", f"{metric}_std"]
    if cv:
        _write_csv(emit("method_comparison.csv"), header, method_comparison_rows(cv))
        _comparison_figure(cv, emit("method_comparison.png"))
    if sweep:
        _write_csv(
            emit("injection_sweep.csv"),
            [
                "injection_frac",
                "injection_frac_source",
                "n_runs",
                "n_errors",
                "mse_min",
                "mse_q25",
                "mse_q50",
                "mse_q75",
                "mse_max",
                "mse_mean",
                "corr_mean",
            ],
            sweep_rows(sweep),
        )
        _sweep_figure(sweep, emit("injection_sweep.png"))
    if abl:
        _write_csv(emit("ablation.csv"), ["arm", "n_runs"] + header[2:], ablation_rows(abl))
        _ablation_figure(abl, emit("ablation.png"))
    if stress:
        _write_csv(
            emit("stress.csv"),
            ["shift_offset", "shift_noise_std", "kl_source_target", "method", "n_runs", "corr_mean", "corr_std"],
            stress_rows(stress),
        )
        _stress_figure(stress, emit("stress.png"))

    hist_records = cv or sweep or abl or stress
    _histogram_json(hist_records, out)
    _histogram_figures(hist_records, out)
    written += sorted(str(p.relative_to(out)) for p in (out / "histograms").glob("*.json"))
    written += sorted(p.name for p in out.glob("hist_*.png"))
    return written
