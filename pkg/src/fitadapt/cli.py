"""Command-line interface.

Subcommands: synth, pretrain, adapt, baseline, sweep, ablate, stress, report.
Shared flags (pass after the subcommand): --config <path>, --seed <int>,
--out <dir>. Records are JSON lines under <out>/records/, timings under
<out>/timings/, report tables and figures under <out>/report/.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .cohort import LabelCorruption, corrupt_to_silver, generate_cohort, save_sample_set
from .config import ExperimentConfig, load_config, write_default_config
from .networks import save_checkpoint
from .records import read_records, write_records, write_timings
from .report import make_report
from .seeding import derive_seed


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=None, help="flat key=value config file (defaults used when omitted)")
    common.add_argument("--seed", metavar="INT", type=int, default=None, help="override the config's seed list with this single seed")
    common.add_argument("--out", metavar="DIR", default="runs", help="output directory (default: runs)")
    return common


def _load(args) -> ExperimentConfig:
    return load_config(args.config, seed_override=args.seed)


def _out_dirs(args) -> tuple[Path, Path, Path]:
    out = Path(args.out)
    records_dir = out / "records"
    timings_dir = out / "timings"
    records_dir.mkdir(parents=True, exist_ok=True)
    timings_dir.mkdir(parents=True, exist_ok=True)
    return out, records_dir, timings_dir


def _emit(args, name: str, records) -> None:
    _, records_dir, timings_dir = _out_dirs(args)
    write_records(records_dir / f"{name}.jsonl", records)
    write_timings(timings_dir / f"{name}.jsonl", records)
    n_err = sum(1 for r in records if r.error)
    print(f"wrote {len(records)} records ({n_err} errors) to {records_dir / (name + '.jsonl')}")


def cmd_synth(args) -> int:
    cfg = _load(args)
    out, _, _ = _out_dirs(args)
    synth_dir = out / "synth"
    synth_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg.seeds[0]
    gold = generate_cohort(cfg.source_spec, cfg.source_n, derive_seed(seed, "source-data"), domain=0)
    corruption = LabelCorruption.calibrated(
        gold.y, cfg.corruption_slope, cfg.corruption_mean_bias, cfg.corruption_pearson_r
    )
    silver = corrupt_to_silver(gold, corruption, derive_seed(seed, "silver"))
    target = generate_cohort(cfg.target_spec, cfg.target_n, derive_seed(seed, "target-data"), domain=1)
    save_sample_set(synth_dir / "source_gold.npz", gold)
    save_sample_set(synth_dir / "source_silver.npz", silver)
    save_sample_set(synth_dir / "target_gold.npz", target)
    summary = {
        "seed": seed,
        "config_hash": cfg.hash,
        "source_n": gold.n,
        "target_n": target.n,
        "source_gold_label_mean": float(gold.y.mean()),
        "source_silver_label_mean": float(silver.y.mean()),
        "silver_bias_mean": float((silver.y - gold.y).mean()),
        "target_gold_label_mean": float(target.y.mean()),
        "corruption": {
            "slope": corruption.slope,
            "intercept": corruption.intercept,
            "noise_std": corruption.noise_std,
        },
    }
    with open(synth_dir / "summary.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, sort_keys=True, indent=2)
        f.write("\n")
    print(f"wrote cohorts to {synth_dir}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load(args)
    out, _, _ = _out_dirs(args)
    seed = cfg.seeds[0]
    ctx = experiments.ExperimentContext(cfg)
    model, trace = ctx.pretrained(seed)
    save_checkpoint(out / "pretrained.pt", model)
    trace.to_jsonl(out / "pretrain_trace.jsonl")
    print(
        f"pretrained on seed {seed}: best val MSE "
        f"{min(e.val_mse for e in trace.epochs):.3f} at epoch {trace.best_epoch}; "
        f"checkpoint at {out / 'pretrained.pt'}"
    )
    return 0


def cmd_adapt(args) -> int:
    cfg = _load(args)
    _emit(args, f"cv_{experiments.FLAGSHIP_METHOD}", experiments.run_cv(cfg, experiments.FLAGSHIP_METHOD))
    return 0


def cmd_baseline(args) -> int:
    cfg = _load(args)
    method = args.method
    if method not in experiments.BASELINE_KINDS:
        print(
            f"error: unknown baseline {method!r}; choose from {', '.join(experiments.BASELINE_KINDS)}",
            file=sys.stderr,
        )
        return 2
    _emit(args, f"cv_{method}", experiments.run_cv(cfg, method))
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    _emit(args, "sweep", experiments.injection_sweep(cfg))
    return 0


def cmd_ablate(args) -> int:
    cfg = _load(args)
    _emit(args, "ablation", experiments.ablation(cfg))
    return 0


def cmd_stress(args) -> int:
    cfg = _load(args)
    _emit(args, "stress", experiments.stress_test(cfg))
    return 0


def cmd_report(args) -> int:
    out, records_dir, _ = _out_dirs(args)
    records = []
    for path in sorted(records_dir.glob("*.jsonl")):
        records.extend(read_records(path))
    if not records:
        print(f"error: no records found under {records_dir}", file=sys.stderr)
        return 2
    written = make_report(records, out / "report")
    print(f"report: {len(written)} files under {out / 'report'}")
    for name in written:
        print(f"  {name}")
    return 0


def cmd_write_config(args) -> int:
    write_default_config(args.path)
    print(f"wrote documented default config to {args.path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fitadapt",
        description="Adversarial domain adaptation benchmark for fitness regression under label shift.",
    )
    common = _common_flags()
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="generate and save the synthetic cohorts").set_defaults(fn=cmd_synth)
    sub.add_parser("pretrain", parents=[common], help="pretrain on the silver-labeled source and save a checkpoint").set_defaults(fn=cmd_pretrain)
    sub.add_parser("adapt", parents=[common], help="run cross-validated adversarial adaptation").set_defaults(fn=cmd_adapt)
    p_base = sub.add_parser("baseline", parents=[common], help="run one cross-validated baseline")
    p_base.add_argument("--method", required=True, help=f"one of: {', '.join(experiments.BASELINE_KINDS)}")
    p_base.set_defaults(fn=cmd_baseline)
    sub.add_parser("sweep", parents=[common], help="injection-ratio sweep").set_defaults(fn=cmd_sweep)
    sub.add_parser("ablate", parents=[common], help="discriminator ablation").set_defaults(fn=cmd_ablate)
    sub.add_parser("stress", parents=[common], help="semi-synthetic label-shift stress test").set_defaults(fn=cmd_stress)
    sub.add_parser("report", parents=[common], help="aggregate records into tables and figures").set_defaults(fn=cmd_report)
    p_cfg = sub.add_parser("write-config", help="write the documented default config file")
    p_cfg.add_argument("path", help="destination path")
    p_cfg.set_defaults(fn=cmd_write_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    np.seterr(all="warn")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
