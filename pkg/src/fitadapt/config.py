"""Flat key-value experiment configuration.

Config files are plain text, one ``key = value`` per line, ``#`` comments.
Every key is registered below with its type, default, and a one-line doc;
unknown keys are a hard error. ``write_default_config`` emits a fully
documented file with all defaults.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

from .cohort import CohortSpec, SexParams, source_cohort_spec, target_cohort_spec
from .features import DEFAULT_META_FIELDS, DEFAULT_TS_CHANNELS, FeatureLayout, IntensityThresholds
from .networks import NetConfig
from .objectives import LossWeights
from .training import GLL_TARGET_MODES, TrainConfig

_SEX_ATTRS = ("age", "height", "weight", "rhr", "mvpa", "vpa", "vo2max")
_TS_NOISE = ("accel", "hr", "hrv")


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_list(item):
    def parse(s: str):
        parts = [p.strip() for p in s.split(",") if p.strip()]
        return tuple(item(p) for p in parts)

    return parse


_PARSERS = {
    "int": int,
    "float": float,
    "str": lambda s: s.strip(),
    "bool": _parse_bool,
    "float_list": _parse_list(float),
    "int_list": _parse_list(int),
    "str_list": _parse_list(lambda s: s),
}


@dataclass(frozen=True)
class _Key:
    kind: str
    default: object
    doc: str


def _cohort_keys(prefix: str, spec: CohortSpec) -> dict[str, _Key]:
    study = "source" if prefix == "source" else "target"
    keys = {
        f"{prefix}.n": _Key("int", 2000 if prefix == "source" else 200, f"number of {study} participants"),
        f"{prefix}.male_frac": _Key("float", spec.male_frac, "fraction of male participants"),
        f"{prefix}.series_length_raw": _Key("int", spec.series_length_raw, "raw series length in minutes; must be divisible by features.downsample_ratio"),
    }
    for sex_name, block in (("men", spec.men), ("women", spec.women)):
        for attr in _SEX_ATTRS:
            for stat in ("mean", "std"):
                keys[f"{prefix}.{sex_name}.{attr}_{stat}"] = _Key(
                    "float",
                    getattr(block, f"{attr}_{stat}"),
                    f"{study} {sex_name}: {attr} {stat}",
                )
    for ch, default in zip(_TS_NOISE, spec.ts_noise_std):
        keys[f"{prefix}.ts_noise.{ch}"] = _Key("float", default, f"white-noise scale of the raw {ch} channel")
    return keys


def _registry() -> dict[str, _Key]:
    keys: dict[str, _Key] = {}
    keys.update(_cohort_keys("source", source_cohort_spec()))
    keys.update(_cohort_keys("target", target_cohort_spec()))
    keys.update(
        {
            "corruption.slope": _Key("float", 0.85, "affine slope of the silver-label corruption"),
            "corruption.mean_bias": _Key("float", -2.3, "population mean of silver minus gold labels; intercept is solved from it"),
            "corruption.pearson_r": _Key("float", 0.68, "target Pearson r between silver and gold labels; noise is solved from it"),
            "features.downsample_ratio": _Key("int", 15, "block-mean downsampling ratio for the time series"),
            "features.ts_channels": _Key("str_list", DEFAULT_TS_CHANNELS, "processed time-series channels, in order"),
            "features.meta_fields": _Key("str_list", DEFAULT_META_FIELDS, "processed metadata fields, in order"),
            "thresholds.sedentary_below": _Key("float", 1.0, "METs below which a minute counts as sedentary"),
            "thresholds.mvpa_at_or_above": _Key("float", 1.0, "METs at or above which a minute counts as moderate-to-vigorous"),
            "thresholds.vigorous_at_or_above": _Key("float", 4.15, "METs at or above which a minute counts as vigorous"),
            "net.recurrent_units": _Key("int", 32, "hidden units per direction of each recurrent layer"),
            "net.recurrent_layers": _Key("int", 2, "number of bidirectional recurrent layers"),
            "net.meta_hidden": _Key("int", 128, "width of the metadata dense layer"),
            "net.dropout": _Key("float", 0.3, "dropout rate (embedding and between recurrent layers)"),
            "net.disc_hidden": _Key("int", 64, "hidden width of the discriminator heads"),
            "net.variance_floor": _Key("float", 1e-6, "additive floor on the fine discriminator's predicted variance"),
            "train.learning_rate": _Key("float", 1e-3, "Adam learning rate"),
            "train.batch_size": _Key("int", 8, "mini-batch size"),
            "train.max_epochs": _Key("int", 100, "maximum training epochs"),
            "train.patience": _Key("int", 10, "early-stopping patience in epochs"),
            "train.optimizer": _Key("str", "adam", "optimizer (only adam is supported)"),
            "train.validation_fraction": _Key("float", 0.2, "fraction of the training set held out for early stopping"),
            "train.alpha": _Key("float", 0.01, "weight scaling the prediction loss in the adaptation objective"),
            "train.lambda1": _Key("float", 0.9, "adversarial weight of the coarse discriminator (lambda1+lambda2=1)"),
            "train.lambda2": _Key("float", 0.1, "adversarial weight of the fine discriminator (lambda1+lambda2=1)"),
            "train.gll_target": _Key("str", "domain_mean", f"fine-discriminator NLL target, one of {GLL_TARGET_MODES}"),
            "bench.folds": _Key("int", 3, "number of independent seeded 70/30 target splits"),
            "bench.split_train_frac": _Key("float", 0.7, "fraction of the target set used for training in each fold"),
            "bench.seeds": _Key("int_list", (0, 1, 2), "experiment seeds; each gets its own data draw and splits"),
            "bench.methods": _Key("str_list", (), "methods to run (empty = all); see the method list in the experiments module"),
            "bench.injection_frac": _Key("float", 0.10, "source samples injected into adaptation, as a fraction of target train"),
            "bench.injection_fracs": _Key("float_list", (0.01, 0.05, 0.10, 0.30, 0.50, 1.00), "injection ratios swept by the sweep command"),
            "bench.report_bins": _Key("int", 20, "histogram bins for label-distribution distances"),
            "stress.offsets": _Key("float_list", (0.0, 4.0, 8.0), "label-shift offsets applied to the source for the stress test (positives move the source further from the target)"),
            "stress.noise_std": _Key("float", 1.0, "label-shift Gaussian noise applied to the source for the stress test"),
            "coral.weight": _Key("float", 1.0, "covariance-alignment weight of the deep_coral baseline"),
            "wdgrl.critic_steps": _Key("int", 5, "critic updates per encoder step in the wdgrl baseline"),
            "wdgrl.penalty_weight": _Key("float", 10.0, "gradient-penalty weight of the wdgrl critic"),
        }
    )
    return keys


REGISTRY = _registry()


def default_mapping() -> dict[str, object]:
    return {k: spec.default for k, spec in REGISTRY.items()}


def parse_config_text(text: str) -> dict[str, object]:
    """Resolve a config file's text against the registry (defaults filled in).
    Unknown keys, bad values, and repeated keys are hard errors."""
    values = default_mapping()
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in REGISTRY:
            raise ValueError(f"line {lineno}: unknown config key: {key}")
        if key in seen:
            raise ValueError(f"line {lineno}: duplicate config key: {key}")
        seen.add(key)
        try:
            values[key] = _PARSERS[REGISTRY[key].kind](value.strip())
        except ValueError as e:
            raise ValueError(f"line {lineno}: bad value for {key}: {e}") from None
    return values


def format_config(mapping: dict[str, object] | None = None) -> str:
    """Render a mapping as a documented config file."""
    mapping = mapping or default_mapping()
    lines = []
    for key in sorted(REGISTRY):
        value = mapping[key]
        if isinstance(value, tuple):
            value = ", ".join(str(v) for v in value)
        lines.append(f"# {REGISTRY[key].doc}")
        lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def write_default_config(path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_config())


def config_hash(mapping: dict[str, object]) -> str:
    canonical = "\n".join(f"{k}={mapping[k]!r}" for k in sorted(mapping))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _sex_params(mapping: dict[str, object], prefix: str, sex: str) -> SexParams:
    kwargs = {}
    for attr in _SEX_ATTRS:
        for stat in ("mean", "std"):
            kwargs[f"{attr}_{stat}"] = float(mapping[f"{prefix}.{sex}.{attr}_{stat}"])
    return SexParams(**kwargs)


def _cohort_spec(mapping: dict[str, object], prefix: str) -> CohortSpec:
    return CohortSpec(
        male_frac=float(mapping[f"{prefix}.male_frac"]),
        men=_sex_params(mapping, prefix, "men"),
        women=_sex_params(mapping, prefix, "women"),
        series_length_raw=int(mapping[f"{prefix}.series_length_raw"]),
        ts_noise_std=tuple(float(mapping[f"{prefix}.ts_noise.{ch}"]) for ch in _TS_NOISE),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a benchmark run needs, resolved and validated."""

    source_spec: CohortSpec
    target_spec: CohortSpec
    source_n: int
    target_n: int
    corruption_slope: float
    corruption_mean_bias: float
    corruption_pearson_r: float
    layout: FeatureLayout
    thresholds: IntensityThresholds
    net: NetConfig
    train: TrainConfig
    folds: int
    split_train_frac: float
    seeds: tuple[int, ...]
    methods: tuple[str, ...]
    injection_frac: float
    injection_fracs: tuple[float, ...]
    report_bins: int
    stress_offsets: tuple[float, ...]
    stress_noise_std: float
    coral_weight: float
    wdgrl_critic_steps: int
    wdgrl_penalty_weight: float
    hash: str

    def with_overrides(self, **mapping_overrides) -> "ExperimentConfig":
        """Rebuild from this config's mapping with flat keys replaced."""
        base = dict(self.mapping)
        for k, v in mapping_overrides.items():
            if k not in REGISTRY:
                raise ValueError(f"unknown config key: {k}")
            base[k] = v
        return from_mapping(base)

    @property
    def mapping(self) -> dict[str, object]:
        return dict(self._mapping)


def _validated(key: str, value, check, message: str):
    if not check(value):
        raise ValueError(f"invalid config value for {key}: {message} (got {value!r})")
    return value


def from_mapping(mapping: dict[str, object]) -> ExperimentConfig:
    missing = set(REGISTRY) - set(mapping)
    if missing:
        raise ValueError(f"config mapping is missing keys: {sorted(missing)[:3]}...")
    unknown = set(mapping) - set(REGISTRY)
    if unknown:
        raise ValueError(f"unknown config key: {sorted(unknown)[0]}")

    layout = FeatureLayout(
        ts_channels=tuple(mapping["features.ts_channels"]),
        meta_fields=tuple(mapping["features.meta_fields"]),
        downsample_ratio=int(mapping["features.downsample_ratio"]),
    )
    layout.validate()
    thresholds = IntensityThresholds(
        float(mapping["thresholds.sedentary_below"]),
        float(mapping["thresholds.mvpa_at_or_above"]),
        float(mapping["thresholds.vigorous_at_or_above"]),
    )
    net = NetConfig(
        recurrent_units=int(mapping["net.recurrent_units"]),
        recurrent_layers=int(mapping["net.recurrent_layers"]),
        meta_hidden=int(mapping["net.meta_hidden"]),
        dropout=float(mapping["net.dropout"]),
        disc_hidden=int(mapping["net.disc_hidden"]),
        variance_floor=float(mapping["net.variance_floor"]),
    )
    train = TrainConfig(
        learning_rate=float(mapping["train.learning_rate"]),
        batch_size=int(mapping["train.batch_size"]),
        max_epochs=int(mapping["train.max_epochs"]),
        patience=int(mapping["train.patience"]),
        optimizer=str(mapping["train.optimizer"]),
        weights=LossWeights(
            float(mapping["train.alpha"]),
            float(mapping["train.lambda1"]),
            float(mapping["train.lambda2"]),
        ),
        validation_fraction=float(mapping["train.validation_fraction"]),
        gll_target=str(mapping["train.gll_target"]),
    )
    source_spec = _cohort_spec(mapping, "source")
    target_spec = _cohort_spec(mapping, "target")
    source_spec.validate(layout.downsample_ratio)
    target_spec.validate(layout.downsample_ratio)

    cfg = ExperimentConfig(
        source_spec=source_spec,
        target_spec=target_spec,
        source_n=_validated("source.n", int(mapping["source.n"]), lambda v: v >= 1, "must be >= 1"),
        target_n=_validated("target.n", int(mapping["target.n"]), lambda v: v >= 1, "must be >= 1"),
        corruption_slope=float(mapping["corruption.slope"]),
        corruption_mean_bias=float(mapping["corruption.mean_bias"]),
        corruption_pearson_r=_validated(
            "corruption.pearson_r", float(mapping["corruption.pearson_r"]), lambda v: 0 < v <= 1, "must be in (0, 1]"
        ),
        layout=layout,
        thresholds=thresholds,
        net=net,
        train=train,
        folds=_validated("bench.folds", int(mapping["bench.folds"]), lambda v: v >= 1, "must be >= 1"),
        split_train_frac=_validated(
            "bench.split_train_frac",
            float(mapping["bench.split_train_frac"]),
            lambda v: 0 < v < 1,
            "must be in (0, 1)",
        ),
        seeds=_validated(
            "bench.seeds", tuple(int(s) for s in mapping["bench.seeds"]), lambda v: len(v) > 0, "must be nonempty"
        ),
        methods=tuple(str(m) for m in mapping["bench.methods"]),
        injection_frac=_validated(
            "bench.injection_frac", float(mapping["bench.injection_frac"]), lambda v: v >= 0, "must be >= 0"
        ),
        injection_fracs=tuple(float(f) for f in mapping["bench.injection_fracs"]),
        report_bins=_validated(
            "bench.report_bins", int(mapping["bench.report_bins"]), lambda v: v >= 2, "must be >= 2"
        ),
        stress_offsets=tuple(float(o) for o in mapping["stress.offsets"]),
        stress_noise_std=_validated(
            "stress.noise_std", float(mapping["stress.noise_std"]), lambda v: v >= 0, "must be >= 0"
        ),
        coral_weight=float(mapping["coral.weight"]),
        wdgrl_critic_steps=_validated(
            "wdgrl.critic_steps", int(mapping["wdgrl.critic_steps"]), lambda v: v >= 1, "must be >= 1"
        ),
        wdgrl_penalty_weight=float(mapping["wdgrl.penalty_weight"]),
        hash=config_hash(mapping),
    )
    object.__setattr__(cfg, "_mapping", dict(mapping))
    return cfg


def load_config(path=None, seed_override: int | None = None) -> ExperimentConfig:
    """Load a config file (or pure defaults when ``path`` is None)."""
    if path is None:
        mapping = default_mapping()
    else:
        with open(path, "r", encoding="utf-8") as f:
            mapping = parse_config_text(f.read())
    if seed_override is not None:
        mapping["bench.seeds"] = (int(seed_override),)
    return from_mapping(mapping)


def default_config() -> ExperimentConfig:
    return from_mapping(default_mapping())
