"""Benchmark harness: cross-validated method comparison, injection-ratio
sweep, discriminator ablation, and the semi-synthetic label-shift stress test.

Each experiment seed gets its own cohort draw and 70/30 target splits.
Pretraining (supervised or autoencoder) is computed once per (seed, shift)
and reused across folds and methods; paired experiments (ablation, stress)
share splits and seeds across arms by construction. Training code never sees
target test labels: the test partition is label-stripped before it reaches
any method pipeline, and only the evaluator receives the labeled view.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .baselines import (
    BASELINE_KINDS,
    train_autoencoder_pretrain,
    train_dann,
    train_deep_coral,
    train_supervised,
    train_wdgrl,
)
from .cohort import (
    LabelCorruption,
    SampleSet,
    ShiftSpec,
    apply_label_shift,
    corrupt_to_silver,
    generate_cohort,
)
from .config import ExperimentConfig
from .errors import InvalidStateError
from .features import assemble_features
from .networks import Model, freeze_plan
from .objectives import LossWeights, kl_divergence, shared_histograms
from .records import RunRecord
from .seeding import derive_seed, rng_for
from .training import (
    TrainTrace,
    adversarial_adapt,
    assign_distribution_labels,
    evaluate,
    finetune,
    mix_domains,
    pretrain,
)

FLAGSHIP_METHOD = "dual_adv"
ALL_METHODS = BASELINE_KINDS + (FLAGSHIP_METHOD,)

ABLATION_ARMS = {
    "full": None,  # config weights
    "coarse_only": (1.0, 0.0),
    "fine_only": (0.0, 1.0),
}

MAX_PROBE_SOURCE = 64


@dataclass
class DomainData:
    """One seeded draw of both domains, feature-processed source."""

    source_gold_raw: SampleSet
    source_silver_raw: SampleSet
    source_proc: SampleSet
    target_raw: SampleSet
    shift: ShiftSpec | None


class ExperimentContext:
    """Caches per-seed data draws and pretrained models across methods/folds."""

    def __init__(self, cfg: ExperimentConfig) -> None:
        self.cfg = cfg
        self._data: dict = {}
        self._pretrained: dict = {}
        self._ae_pretrained: dict = {}

    def _shift_key(self, shift: ShiftSpec | None):
        return None if shift is None else (shift.offset, shift.noise_std)

    def domain_data(self, seed: int, shift: ShiftSpec | None = None) -> DomainData:
        key = (seed, self._shift_key(shift))
        if key not in self._data:
            cfg = self.cfg
            gold = generate_cohort(cfg.source_spec, cfg.source_n, derive_seed(seed, "source-data"), domain=0)
            corruption = LabelCorruption.calibrated(
                gold.y,
                slope=cfg.corruption_slope,
                mean_bias=cfg.corruption_mean_bias,
                target_r=cfg.corruption_pearson_r,
            )
            silver = corrupt_to_silver(gold, corruption, derive_seed(seed, "silver"))
            if shift is not None:
                silver = apply_label_shift(silver, shift, derive_seed(seed, "shift"))
            proc = assemble_features(silver, cfg.layout, cfg.thresholds)
            target = generate_cohort(cfg.target_spec, cfg.target_n, derive_seed(seed, "target-data"), domain=1)
            self._data[key] = DomainData(gold, silver, proc, target, shift)
        return self._data[key]

    def pretrained(self, seed: int, shift: ShiftSpec | None = None) -> tuple[Model, TrainTrace]:
        key = (seed, self._shift_key(shift))
        if key not in self._pretrained:
            data = self.domain_data(seed, shift)
            self._pretrained[key] = pretrain(
                data.source_proc, self.cfg.train, derive_seed(seed, "pretrain"), net=self.cfg.net
            )
        return self._pretrained[key]

    def ae_pretrained(self, seed: int) -> tuple[Model, TrainTrace]:
        if seed not in self._ae_pretrained:
            data = self.domain_data(seed)
            self._ae_pretrained[seed] = train_autoencoder_pretrain(
                data.source_proc, self.cfg.train, derive_seed(seed, "ae-pretrain"), net=self.cfg.net
            )
        return self._ae_pretrained[seed]


def split_target(cfg: ExperimentConfig, n: int, seed: int, fold: int) -> tuple[np.ndarray, np.ndarray]:
    """Independent seeded split of the target set into train/test indices."""
    order = rng_for(seed, "target-split", fold).permutation(n)
    n_train = int(round(cfg.split_train_frac * n))
    n_train = min(max(n_train, 1), n - 1)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


@dataclass
class FoldData:
    target_train: SampleSet  # processed, labeled
    target_test_inputs: SampleSet  # processed with the train scaler, labels stripped
    target_test_labeled: SampleSet  # only the evaluator may touch this
    train_idx: np.ndarray
    test_idx: np.ndarray


def prepare_fold(ctx: ExperimentContext, data: DomainData, seed: int, fold: int) -> FoldData:
    cfg = ctx.cfg
    train_idx, test_idx = split_target(cfg, data.target_raw.n, seed, fold)
    train_proc = assemble_features(data.target_raw.subset(train_idx), cfg.layout, cfg.thresholds)
    test_proc = assemble_features(
        data.target_raw.subset(test_idx), cfg.layout, cfg.thresholds, scale=train_proc.meta_scale
    )
    return FoldData(train_proc, test_proc.strip_labels(), test_proc, train_idx, test_idx)


def _probe_pool(data: DomainData, injected: np.ndarray, seed: int) -> SampleSet:
    """Source samples held out of the injection, for discriminator probes."""
    leftover = np.setdiff1d(np.arange(data.source_proc.n), injected)
    k = min(MAX_PROBE_SOURCE, leftover.size)
    pick = np.sort(rng_for(seed, "probe-pool").choice(leftover, size=k, replace=False))
    return data.source_proc.subset(pick)


def _adversarial_pipeline(
    ctx: ExperimentContext,
    data: DomainData,
    fold_data: FoldData,
    seed: int,
    fold: int,
    weights: LossWeights | None,
    use_fine: bool,
) -> tuple[Model, TrainTrace]:
    cfg = ctx.cfg
    model, _ = ctx.pretrained(seed, data.shift)
    frozen = freeze_plan(model)
    mixed, assignment = mix_domains(
        fold_data.target_train, data.source_proc, cfg.injection_frac, derive_seed(seed, "mix", fold)
    )
    assignment = assign_distribution_labels(mixed, assignment)
    probe = _probe_pool(data, assignment.injected_source_indices, derive_seed(seed, "probe", fold))
    run_seed = derive_seed(seed, "adapt", fold)
    train_cfg = cfg.train if weights is None else replace(cfg.train, weights=weights)
    if use_fine:
        return adversarial_adapt(frozen, mixed, assignment, train_cfg, run_seed, probe_source=probe)
    return train_dann(frozen, mixed, assignment, train_cfg, run_seed, probe_source=probe)


def run_method(
    ctx: ExperimentContext,
    method: str,
    data: DomainData,
    fold_data: FoldData,
    seed: int,
    fold: int,
    weights: LossWeights | None = None,
) -> tuple[Model, TrainTrace]:
    """Train one method on one fold. ``fold_data.target_test_inputs`` is
    label-stripped; no pipeline may read test labels."""
    cfg = ctx.cfg
    if fold_data.target_test_inputs.has_labels:
        raise InvalidStateError("test partition reached training with labels attached")
    run_seed = derive_seed(seed, method, fold)
    if method == "in_domain_supervised":
        return train_supervised(fold_data.target_train, cfg.train, run_seed, net=cfg.net)
    if method == "out_of_domain_supervised":
        return ctx.pretrained(seed, data.shift)
    if method == "transfer":
        model, _ = ctx.pretrained(seed, data.shift)
        return finetune(freeze_plan(model), fold_data.target_train, cfg.train, run_seed)
    if method == "autoencoder":
        model, _ = ctx.ae_pretrained(seed)
        return finetune(freeze_plan(model), fold_data.target_train, cfg.train, run_seed)
    if method == "deep_coral":
        return train_deep_coral(
            data.source_proc, fold_data.target_train, cfg.train, cfg.coral_weight, run_seed, net=cfg.net
        )
    if method == "wdgrl":
        return train_wdgrl(
            data.source_proc,
            fold_data.target_train,
            cfg.train,
            cfg.wdgrl_critic_steps,
            cfg.wdgrl_penalty_weight,
            run_seed,
            net=cfg.net,
        )
    if method == "dann":
        return _adversarial_pipeline(ctx, data, fold_data, seed, fold, weights, use_fine=False)
    if method == FLAGSHIP_METHOD:
        return _adversarial_pipeline(ctx, data, fold_data, seed, fold, weights, use_fine=True)
    raise ValueError(f"unknown method {method!r}; expected one of {ALL_METHODS}")


def _make_record(
    ctx: ExperimentContext,
    kind: str,
    method: str,
    seed: int,
    fold: int,
    model: Model,
    trace: TrainTrace,
    fold_data: FoldData,
    wall: float,
    **extra,
) -> RunRecord:
    cfg = ctx.cfg
    result = evaluate(
        model,
        fold_data.target_test_labeled,
        reference_train_labels=fold_data.target_train.y,
        k_bins=cfg.report_bins,
    )
    uses_injection = method in (FLAGSHIP_METHOD, "dann")
    inj = cfg.injection_frac if uses_injection else 0.0
    inj = extra.pop("injection_frac", inj)
    return RunRecord(
        kind=kind,
        method=method,
        fold=fold,
        seed=seed,
        config_hash=cfg.hash,
        metrics=result.metrics,
        injection_frac=inj,
        injection_frac_source=inj * fold_data.target_train.n / max(cfg.source_n, 1),
        stop_epoch=trace.stop_epoch,
        best_epoch=trace.best_epoch,
        truth_hist=result.truth_hist,
        pred_hist=result.pred_hist,
        wall_time_s=wall,
        **extra,
    )


def run_cv(cfg: ExperimentConfig, method: str, ctx: ExperimentContext | None = None) -> list[RunRecord]:
    """Cross-validated evaluation of one method: ``folds`` independent 70/30
    target splits per experiment seed, one record per (seed, fold)."""
    if method not in ALL_METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {ALL_METHODS}")
    ctx = ctx or ExperimentContext(cfg)
    records = []
    for seed in cfg.seeds:
        data = ctx.domain_data(seed)
        for fold in range(cfg.folds):
            fold_data = prepare_fold(ctx, data, seed, fold)
            t0 = time.perf_counter()
            model, trace = run_method(ctx, method, data, fold_data, seed, fold)
            wall = time.perf_counter() - t0
            records.append(
                _make_record(ctx, "cv", method, seed, fold, model, trace, fold_data, wall)
            )
    return records


def injection_sweep(cfg: ExperimentConfig, ctx: ExperimentContext | None = None) -> list[RunRecord]:
    """Flagship method at every injection ratio x seed (one split per seed).
    A ratio that exceeds the source pool yields an error record and the sweep
    continues."""
    if len(cfg.seeds) < 2:
        raise ValueError("injection sweep needs at least 2 seeds")
    ctx = ctx or ExperimentContext(cfg)
    records = []
    for ratio in cfg.injection_fracs:
        for seed in cfg.seeds:
            data = ctx.domain_data(seed)
            fold_data = prepare_fold(ctx, data, seed, fold=0)
            sweep_cfg = replace(cfg, injection_frac=ratio)
            sweep_ctx = _shared_context(ctx, sweep_cfg)
            t0 = time.perf_counter()
            try:
                model, trace = run_method(sweep_ctx, FLAGSHIP_METHOD, data, fold_data, seed, fold=0)
            except ValueError as e:
                records.append(
                    RunRecord(
                        kind="sweep",
                        method=FLAGSHIP_METHOD,
                        fold=0,
                        seed=seed,
                        config_hash=cfg.hash,
                        injection_frac=ratio,
                        error=str(e),
                        wall_time_s=time.perf_counter() - t0,
                    )
                )
                continue
            records.append(
                _make_record(
                    ctx,
                    "sweep",
                    FLAGSHIP_METHOD,
                    seed,
                    0,
                    model,
                    trace,
                    fold_data,
                    time.perf_counter() - t0,
                    injection_frac=ratio,
                )
            )
    return records


def _shared_context(ctx: ExperimentContext, cfg: ExperimentConfig) -> ExperimentContext:
    """A context with modified config that shares the parent's caches (the
    cached data and pretrained models do not depend on the modified fields)."""
    child = ExperimentContext(cfg)
    child._data = ctx._data
    child._pretrained = ctx._pretrained
    child._ae_pretrained = ctx._ae_pretrained
    return child


def ablation(cfg: ExperimentConfig, ctx: ExperimentContext | None = None) -> list[RunRecord]:
    """Three discriminator variants (both, coarse-only, fine-only) at the
    configured injection ratio, sharing splits and seeds across arms."""
    ctx = ctx or ExperimentContext(cfg)
    records = []
    for seed in cfg.seeds:
        data = ctx.domain_data(seed)
        for fold in range(cfg.folds):
            fold_data = prepare_fold(ctx, data, seed, fold)
            for arm, lambdas in ABLATION_ARMS.items():
                weights = (
                    None
                    if lambdas is None
                    else LossWeights(cfg.train.weights.alpha, lambdas[0], lambdas[1])
                )
                t0 = time.perf_counter()
                model, trace = run_method(
                    ctx, FLAGSHIP_METHOD, data, fold_data, seed, fold, weights=weights
                )
                records.append(
                    _make_record(
                        ctx,
                        "ablation",
                        FLAGSHIP_METHOD,
                        seed,
                        fold,
                        model,
                        trace,
                        fold_data,
                        time.perf_counter() - t0,
                        arm=arm,
                    )
                )
    return records


def label_shift_kl(source_labels: np.ndarray, target_labels: np.ndarray, k_bins: int) -> float:
    """Histogram KL divergence of the (possibly shifted) source label
    distribution from the target label distribution."""
    hs, ht = shared_histograms(source_labels, target_labels, k_bins=k_bins)
    return kl_divergence(hs, ht)


def stress_test(cfg: ExperimentConfig, ctx: ExperimentContext | None = None) -> list[RunRecord]:
    """Label-shift robustness: for each shift applied to the source labels,
    run the flagship method and the coarse-only adversarial baseline on
    identical splits and record the measured source-target label KL."""
    if not cfg.stress_offsets:
        raise ValueError("stress test needs at least one shift offset")
    ctx = ctx or ExperimentContext(cfg)
    records = []
    for offset in cfg.stress_offsets:
        shift = ShiftSpec(offset, cfg.stress_noise_std)
        for seed in cfg.seeds:
            data = ctx.domain_data(seed, shift)
            kl = label_shift_kl(data.source_proc.y, data.target_raw.y, cfg.report_bins)
            for fold in range(cfg.folds):
                fold_data = prepare_fold(ctx, data, seed, fold)
                for method in (FLAGSHIP_METHOD, "dann"):
                    t0 = time.perf_counter()
                    model, trace = run_method(ctx, method, data, fold_data, seed, fold)
                    records.append(
                        _make_record(
                            ctx,
                            "stress",
                            method,
                            seed,
                            fold,
                            model,
                            trace,
                            fold_data,
                            time.perf_counter() - t0,
                            arm=f"offset={offset:g}",
                            shift_offset=offset,
                            shift_noise_std=cfg.stress_noise_std,
                            kl_source_target=kl,
                        )
                    )
    return records
