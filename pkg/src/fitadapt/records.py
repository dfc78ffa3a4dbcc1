"""Run records: one JSON line per evaluated run, schema-versioned.

Record files are a pure function of (config, seed): wall-clock timings are
written to a separate sidecar file so re-running an identical experiment
yields byte-identical records.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .objectives import Histogram, MetricRecord

SCHEMA_VERSION = 1


@dataclass
class RunRecord:
    """One (method, fold, seed) evaluation inside an experiment."""

    kind: str  # cv | sweep | ablation | stress
    method: str
    fold: int
    seed: int
    config_hash: str
    metrics: MetricRecord | None = None
    injection_frac: float = 0.0
    injection_frac_source: float = 0.0
    shift_offset: float = 0.0
    shift_noise_std: float = 0.0
    kl_source_target: float | None = None
    arm: str = ""
    stop_epoch: int = -1
    best_epoch: int = -1
    truth_hist: Histogram | None = None
    pred_hist: Histogram | None = None
    error: str = ""
    wall_time_s: float = 0.0  # sidecar only, never serialized into records


def _hist_obj(h: Histogram | None):
    if h is None:
        return None
    return {"bin_edges": [float(e) for e in h.bin_edges], "mass": [float(m) for m in h.mass]}


def _hist_from(obj) -> Histogram | None:
    if obj is None:
        return None
    return Histogram(np.array(obj["bin_edges"]), np.array(obj["mass"]))


def record_to_obj(r: RunRecord) -> dict:
    m = r.metrics
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": r.kind,
        "method": r.method,
        "fold": r.fold,
        "seed": r.seed,
        "config_hash": r.config_hash,
        "injection_frac": r.injection_frac,
        "injection_frac_source": r.injection_frac_source,
        "shift_offset": r.shift_offset,
        "shift_noise_std": r.shift_noise_std,
        "kl_source_target": r.kl_source_target,
        "arm": r.arm,
        "stop_epoch": r.stop_epoch,
        "best_epoch": r.best_epoch,
        "error": r.error,
        "metrics": None
        if m is None
        else {
            "mse": m.mse,
            "mae": m.mae,
            "r2": m.r2,
            "corr": m.corr,
            "corr_degenerate": m.corr_degenerate,
            "hellinger": m.hellinger,
            "kl": m.kl,
        },
        "truth_hist": _hist_obj(r.truth_hist),
        "pred_hist": _hist_obj(r.pred_hist),
    }


def record_from_obj(obj: dict) -> RunRecord:
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported record schema_version {obj.get('schema_version')!r}")
    m = obj["metrics"]
    metrics = (
        None
        if m is None
        else MetricRecord(
            mse=m["mse"],
            mae=m["mae"],
            r2=m["r2"],
            corr=m["corr"],
            corr_degenerate=m["corr_degenerate"],
            hellinger=m["hellinger"],
            kl=m["kl"],
        )
    )
    return RunRecord(
        kind=obj["kind"],
        method=obj["method"],
        fold=obj["fold"],
        seed=obj["seed"],
        config_hash=obj["config_hash"],
        metrics=metrics,
        injection_frac=obj["injection_frac"],
        injection_frac_source=obj["injection_frac_source"],
        shift_offset=obj["shift_offset"],
        shift_noise_std=obj["shift_noise_std"],
        kl_source_target=obj["kl_source_target"],
        arm=obj["arm"],
        stop_epoch=obj["stop_epoch"],
        best_epoch=obj["best_epoch"],
        truth_hist=_hist_from(obj["truth_hist"]),
        pred_hist=_hist_from(obj["pred_hist"]),
        error=obj["error"],
    )


def _canonical(value):
    """JSON-safe deep copy with NaN mapped to None (strict JSON)."""
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, dict):
        return {k: _canonical(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_canonical(v) for v in value]
    return value


def write_records(path, records: list[RunRecord]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(_canonical(record_to_obj(r)), sort_keys=True) + "\n")


def read_records(path) -> list[RunRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(record_from_obj(json.loads(line)))
    return out


def write_timings(path, records: list[RunRecord]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            row = {
                "kind": r.kind,
                "method": r.method,
                "fold": r.fold,
                "seed": r.seed,
                "arm": r.arm,
                "config_hash": r.config_hash,
                "wall_time_s": round(r.wall_time_s, 3),
            }
            f.write(json.dumps(row, sort_keys=True) + "\n")
