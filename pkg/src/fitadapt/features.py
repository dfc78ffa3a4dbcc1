"""Feature pipeline: block-mean downsampling, per-sample/per-column min-max
scaling, cyclical month encoding, movement-intensity derivation, and assembly
of the model-ready tensor from a raw cohort.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cohort import SampleSet

MET_JOULES_PER_MIN_KG = 71.0
ENMO_SCALE = 0.0060321
ENMO_OFFSET = 0.057

DEFAULT_TS_CHANNELS = ("accel", "hr", "hrv", "enmo")
DEFAULT_META_FIELDS = (
    "age",
    "sex",
    "height",
    "weight",
    "bmi",
    "rhr",
    "sedentary_min",
    "mvpa_min",
    "vpa_min",
    "month_sin",
    "month_cos",
)


@dataclass(frozen=True)
class FeatureLayout:
    """Which channels/fields the processed tensor contains, in order."""

    ts_channels: tuple[str, ...] = DEFAULT_TS_CHANNELS
    meta_fields: tuple[str, ...] = DEFAULT_META_FIELDS
    downsample_ratio: int = 15

    def validate(self) -> None:
        if len(set(self.ts_channels)) != len(self.ts_channels):
            raise ValueError("duplicate time-series channel names")
        if len(set(self.meta_fields)) != len(self.meta_fields):
            raise ValueError("duplicate metadata field names")
        if self.downsample_ratio < 1:
            raise ValueError("downsample_ratio must be >= 1")
        unknown_ts = set(self.ts_channels) - set(DEFAULT_TS_CHANNELS)
        if unknown_ts:
            raise ValueError(f"unknown time-series channels: {sorted(unknown_ts)}")
        unknown_meta = set(self.meta_fields) - set(DEFAULT_META_FIELDS)
        if unknown_meta:
            raise ValueError(f"unknown metadata fields: {sorted(unknown_meta)}")


@dataclass(frozen=True)
class IntensityThresholds:
    """MET cutoffs for sedentary / moderate-to-vigorous / vigorous minutes."""

    sedentary_below: float = 1.0
    mvpa_at_or_above: float = 1.0
    vigorous_at_or_above: float = 4.15

    def __post_init__(self) -> None:
        if not self.sedentary_below <= self.mvpa_at_or_above <= self.vigorous_at_or_above:
            raise ValueError("thresholds must be ordered sedentary <= mvpa <= vigorous")


@dataclass(frozen=True)
class FeatureScale:
    """Fitted per-column metadata min/max, reused on held-out data."""

    meta_min: np.ndarray
    meta_max: np.ndarray


def downsample(series, ratio: int):
    """Block means: output[k] = mean(series[k*ratio : (k+1)*ratio]).

    Works on a 1-D series or on the time axis of an (N, L, C) tensor.
    """
    if ratio < 1:
        raise ValueError("ratio must be >= 1")
    a = np.asarray(series)
    axis = 0 if a.ndim == 1 else 1
    length = a.shape[axis]
    if length == 0:
        raise ValueError("empty series")
    if length % ratio:
        raise ValueError(f"length {length} not divisible by ratio {ratio}")
    if a.ndim == 1:
        return a.reshape(length // ratio, ratio).mean(axis=1)
    if a.ndim == 3:
        n, _, c = a.shape
        return a.reshape(n, length // ratio, ratio, c).mean(axis=2)
    raise ValueError(f"expected 1-D or 3-D input, got {a.ndim}-D")


def scale_unit_interval(values: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """(v - lo) / (hi - lo), with constant spans mapping to all-zeros."""
    span = hi - lo
    safe = np.where(span == 0, 1.0, span)
    out = (values - lo) / safe
    return np.where(span == 0, 0.0, out)


def minmax_scale(sample_set: SampleSet, scale: FeatureScale | None = None) -> SampleSet:
    """Scale time-series channels sequence-wise (per sample, per channel) and
    metadata columns column-wise to [0, 1].

    When ``scale`` is None the column min/max are fitted on this set and
    attached to the result for reuse on held-out data; constant sequences and
    columns map to zeros.
    """
    if sample_set.n == 0:
        raise ValueError("empty sample set")
    X = sample_set.X.astype(np.float32)
    ts_lo = X.min(axis=1, keepdims=True)
    ts_hi = X.max(axis=1, keepdims=True)
    X_scaled = scale_unit_interval(X, ts_lo, ts_hi).astype(np.float32)

    M = sample_set.M.astype(np.float64)
    if scale is None:
        scale = FeatureScale(M.min(axis=0), M.max(axis=0))
    M_scaled = scale_unit_interval(M, scale.meta_min, scale.meta_max)

    out = SampleSet(
        X_scaled,
        M_scaled,
        sample_set._y,
        sample_set.domain,
        sample_set.label_grade,
        True,
        sample_set.ts_names,
        sample_set.meta_names,
        meta_scale=scale,
    )
    return out


def encode_month(month: int) -> tuple[float, float]:
    """Cyclical encoding (sin, cos) of the month number on a 12-month wheel."""
    m = int(month)
    if m != month or not 1 <= m <= 12:
        raise ValueError(f"month must be an integer in 1..12, got {month!r}")
    angle = 2.0 * np.pi * m / 12.0
    return float(np.sin(angle)), float(np.cos(angle))


def accel_to_mets(accel_j_per_min_kg):
    """Movement intensity to METs via 1 MET = 71 J/min/kg."""
    a = np.asarray(accel_j_per_min_kg, dtype=np.float64)
    if np.any(a < 0):
        raise ValueError("movement intensity must be >= 0")
    out = a / MET_JOULES_PER_MIN_KG
    return float(out) if out.ndim == 0 else out


def classify_intensity(mets_series, t: IntensityThresholds) -> tuple[int, int, int]:
    """Counts of (sedentary, moderate-to-vigorous, vigorous) entries.

    Sedentary is strictly below its cutoff; the other two are inclusive at
    theirs, so vigorous <= mvpa always.
    """
    m = np.asarray(mets_series, dtype=np.float64).ravel()
    if m.size and np.any(m < 0):
        raise ValueError("METs must be >= 0")
    sedentary = int((m < t.sedentary_below).sum())
    mvpa = int((m >= t.mvpa_at_or_above).sum())
    vigorous = int((m >= t.vigorous_at_or_above).sum())
    return sedentary, mvpa, vigorous


def derive_enmo(accel_mg):
    """ENMO-like activity measure: accel / 0.0060321 + 0.057."""
    a = np.asarray(accel_mg, dtype=np.float64)
    if np.any(a < 0):
        raise ValueError("acceleration must be >= 0")
    out = a / ENMO_SCALE + ENMO_OFFSET
    return float(out) if out.ndim == 0 else out


def assemble_features(
    raw: SampleSet,
    layout: FeatureLayout | None = None,
    thresholds: IntensityThresholds | None = None,
    scale: FeatureScale | None = None,
) -> SampleSet:
    """Raw cohort to model-ready tensor.

    Downsamples each channel by block means, derives the ENMO channel from
    movement (the formula is affine, so deriving after downsampling is exact),
    computes intensity minute-counts from the raw per-minute movement series,
    adds BMI and the cyclical month encoding, and min-max scales everything.
    Pass ``scale`` to reuse a fitted metadata scaler on held-out data.
    """
    layout = layout or FeatureLayout()
    thresholds = thresholds or IntensityThresholds()
    layout.validate()
    if raw.processed:
        raise ValueError("sample set is already processed")
    if raw.series_length % layout.downsample_ratio:
        raise ValueError(
            f"series length {raw.series_length} not divisible by "
            f"downsample ratio {layout.downsample_ratio}"
        )

    accel_raw = raw.ts_channel("accel")
    mets = accel_to_mets(np.maximum(accel_raw, 0.0))
    counts = np.array(
        [classify_intensity(mets[i], thresholds) for i in range(raw.n)],
        dtype=np.float64,
    )

    down = downsample(raw.X, layout.downsample_ratio)
    raw_index = {name: j for j, name in enumerate(raw.ts_names)}
    channels = []
    for name in layout.ts_channels:
        if name == "enmo":
            channels.append(derive_enmo(np.maximum(down[:, :, raw_index["accel"]], 0.0)))
        else:
            channels.append(down[:, :, raw_index[name]])
    X = np.stack(channels, axis=2).astype(np.float32)

    month = raw.meta_column("month").astype(int)
    month_enc = np.array([encode_month(m) for m in month], dtype=np.float64)
    builders = {
        "age": lambda: raw.meta_column("age"),
        "sex": lambda: raw.meta_column("sex"),
        "height": lambda: raw.meta_column("height"),
        "weight": lambda: raw.meta_column("weight"),
        "bmi": lambda: raw.meta_column("weight") / raw.meta_column("height") ** 2,
        "rhr": lambda: raw.meta_column("rhr"),
        "sedentary_min": lambda: counts[:, 0],
        "mvpa_min": lambda: counts[:, 1],
        "vpa_min": lambda: counts[:, 2],
        "month_sin": lambda: month_enc[:, 0],
        "month_cos": lambda: month_enc[:, 1],
    }
    M = np.column_stack([builders[name]() for name in layout.meta_fields])

    unscaled = SampleSet(
        X,
        M,
        raw._y,
        raw.domain,
        raw.label_grade,
        False,
        layout.ts_channels,
        layout.meta_fields,
    )
    return minmax_scale(unscaled, scale=scale)
