"""Synthetic wearable cohorts with gold labels, silver-label corruption,
and parameterized label shifts.

The real studies behind this problem are private, so cohorts are drawn from
per-sex parameter blocks (defaults below reproduce the published population
characteristics of the two source/target studies). Gold fitness labels come
from a fixed, documented function of the drawn metadata; silver labels are an
affine corruption of gold plus Gaussian noise, calibrated to the published
bias/correlation envelope of submaximal testing.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidStateError
from .seeding import rng_for

RAW_TS_CHANNELS = ("accel", "hr", "hrv")
RAW_META_FIELDS = ("age", "sex", "height", "weight", "rhr", "mvpa", "vpa", "month")

DOMAIN_SOURCE = 0
DOMAIN_TARGET = 1

LABEL_CLIP = (15.0, 70.0)

# Gold-label model: declining in age and resting HR, rising in activity and
# in aerobic efficiency (a weak heart-rate response to movement), anchored at
# the cohort's fitness mean per sex.
AGE_COEF = -0.25
AGE_CENTER = 47.0
RHR_COEF = -0.15
RHR_CENTER = 62.0
MVPA_COEF = 0.08 * 5.0
VPA_COEF = 0.5
LABEL_NOISE_STD = 2.0

# Per-subject heart-rate response to movement (bpm per intensity unit). The
# latent slope drives the coupling between the movement and HR channels and
# feeds the gold label: fitter subjects show a weaker HR response. Reading it
# back out of the signals depends on the cohort's sensor noise, which is what
# makes a source-trained model miscalibrated on a differently-instrumented
# target cohort.
HR_RESPONSE_MEAN = 0.25
HR_RESPONSE_STD = 0.06
HR_RESPONSE_MIN = 0.05
HR_RESPONSE_COEF = -2.0


class SampleSet:
    """A cohort: time series X (N,T,C), metadata M (N,F), labels y (N).

    ``domain`` tags each sample 0=source / 1=target; ``label_grade`` is
    "gold", "silver", or "mixed" (after domain mixing). Labels may be
    stripped (``strip_labels``) to hand a test partition to training code;
    reading ``y`` then raises.
    """

    def __init__(
        self,
        X: np.ndarray,
        M: np.ndarray,
        y: np.ndarray | None,
        domain: np.ndarray,
        label_grade: str,
        processed: bool,
        ts_names: tuple[str, ...],
        meta_names: tuple[str, ...],
        meta_scale=None,
    ) -> None:
        self.X = X
        self.M = M
        self._y = None if y is None else np.asarray(y, dtype=np.float64)
        self.domain = np.asarray(domain, dtype=np.int8)
        self.label_grade = label_grade
        self.processed = processed
        self.ts_names = tuple(ts_names)
        self.meta_names = tuple(meta_names)
        self.meta_scale = meta_scale
        self.validate()

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def series_length(self) -> int:
        return int(self.X.shape[1])

    @property
    def has_labels(self) -> bool:
        return self._y is not None

    @property
    def y(self) -> np.ndarray:
        if self._y is None:
            raise InvalidStateError("labels were stripped from this sample set")
        return self._y

    def validate(self) -> None:
        if self.X.ndim != 3:
            raise ValueError(f"X must be (N,T,C), got shape {self.X.shape}")
        n = self.X.shape[0]
        if self.M.ndim != 2 or self.M.shape[0] != n:
            raise ValueError("M must be (N,F) with N matching X")
        if self.domain.shape != (n,):
            raise ValueError("domain tag must have one entry per sample")
        if self.X.shape[2] != len(self.ts_names):
            raise ValueError("ts_names must match X channels")
        if self.M.shape[1] != len(self.meta_names):
            raise ValueError("meta_names must match M columns")
        if self.label_grade not in ("gold", "silver", "mixed"):
            raise ValueError(f"unknown label grade {self.label_grade!r}")
        if not np.isfinite(self.X).all() or not np.isfinite(self.M).all():
            raise ValueError("non-finite values in X or M")
        if self._y is not None:
            if self._y.shape != (n,):
                raise ValueError("y must have one entry per sample")
            if not np.isfinite(self._y).all():
                raise ValueError("non-finite labels")

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx)
        return SampleSet(
            self.X[idx],
            self.M[idx],
            None if self._y is None else self._y[idx],
            self.domain[idx],
            self.label_grade,
            self.processed,
            self.ts_names,
            self.meta_names,
            self.meta_scale,
        )

    def with_labels(self, y: np.ndarray, label_grade: str | None = None) -> "SampleSet":
        return SampleSet(
            self.X,
            self.M,
            y,
            self.domain,
            label_grade or self.label_grade,
            self.processed,
            self.ts_names,
            self.meta_names,
            self.meta_scale,
        )

    def strip_labels(self) -> "SampleSet":
        """A view of the same data with labels unreadable (for leak-proof
        hand-off of test partitions to training code)."""
        return SampleSet(
            self.X,
            self.M,
            None,
            self.domain,
            self.label_grade,
            self.processed,
            self.ts_names,
            self.meta_names,
            self.meta_scale,
        )

    def meta_column(self, name: str) -> np.ndarray:
        try:
            j = self.meta_names.index(name)
        except ValueError:
            raise KeyError(f"no metadata field {name!r}") from None
        return self.M[:, j]

    def ts_channel(self, name: str) -> np.ndarray:
        try:
            j = self.ts_names.index(name)
        except ValueError:
            raise KeyError(f"no time-series channel {name!r}") from None
        return self.X[:, :, j]

    def equals(self, other: "SampleSet") -> bool:
        """Bit-exact equality of all arrays and tags (determinism checks)."""
        if (self._y is None) != (other._y is None):
            return False
        return (
            np.array_equal(self.X, other.X)
            and np.array_equal(self.M, other.M)
            and (self._y is None or np.array_equal(self._y, other._y))
            and np.array_equal(self.domain, other.domain)
            and self.label_grade == other.label_grade
            and self.processed == other.processed
            and self.ts_names == other.ts_names
            and self.meta_names == other.meta_names
        )


def concat_sets(a: SampleSet, b: SampleSet, label_grade: str) -> SampleSet:
    if a.ts_names != b.ts_names or a.meta_names != b.meta_names:
        raise ValueError("sample sets have different feature layouts")
    if a.processed != b.processed:
        raise ValueError("cannot mix processed and unprocessed sets")
    return SampleSet(
        np.concatenate([a.X, b.X], axis=0),
        np.concatenate([a.M, b.M], axis=0),
        np.concatenate([a.y, b.y]),
        np.concatenate([a.domain, b.domain]),
        label_grade,
        a.processed,
        a.ts_names,
        a.meta_names,
        a.meta_scale,
    )


@dataclass(frozen=True)
class SexParams:
    """Population mean/std per drawn characteristic for one sex."""

    age_mean: float
    age_std: float
    height_mean: float
    height_std: float
    weight_mean: float
    weight_std: float
    rhr_mean: float
    rhr_std: float
    mvpa_mean: float
    mvpa_std: float
    vpa_mean: float
    vpa_std: float
    vo2max_mean: float
    vo2max_std: float

    def validate(self) -> None:
        for name, value in vars(self).items():
            if not np.isfinite(value):
                raise ValueError(f"non-finite cohort parameter {name}")
            if name.endswith("_std") and value < 0:
                raise ValueError(f"negative std for {name}")


# Published population characteristics of the two studies.
SOURCE_MEN = SexParams(47.70, 7.57, 1.78, 0.07, 85.85, 13.83, 61.48, 8.68, 35.87, 22.35, 3.27, 8.57, 41.95, 4.61)
SOURCE_WOMEN = SexParams(47.66, 7.36, 1.64, 0.06, 70.54, 13.92, 64.46, 8.28, 34.40, 22.59, 3.31, 15.67, 37.44, 4.73)
TARGET_MEN = SexParams(53.59, 7.31, 1.79, 0.07, 84.63, 10.15, 59.60, 8.06, 40.97, 25.23, 5.94, 12.61, 35.69, 6.99)
TARGET_WOMEN = SexParams(54.39, 6.63, 1.64, 0.06, 69.31, 10.95, 61.91, 6.93, 41.73, 22.26, 4.21, 8.76, 29.60, 5.80)


@dataclass(frozen=True)
class CohortSpec:
    """Parameters of one synthetic cohort."""

    male_frac: float = 0.47
    men: SexParams = field(default_factory=lambda: SOURCE_MEN)
    women: SexParams = field(default_factory=lambda: SOURCE_WOMEN)
    series_length_raw: int = 9000
    ts_noise_std: tuple[float, float, float] = (8.0, 3.0, 5.0)

    def validate(self, downsample_ratio: int | None = None) -> None:
        if not 0.0 <= self.male_frac <= 1.0:
            raise ValueError(f"male_frac must be in [0,1], got {self.male_frac}")
        self.men.validate()
        self.women.validate()
        if self.series_length_raw < 1:
            raise ValueError("series_length_raw must be positive")
        if len(self.ts_noise_std) != len(RAW_TS_CHANNELS):
            raise ValueError("need one noise scale per raw channel")
        if any(s < 0 or not np.isfinite(s) for s in self.ts_noise_std):
            raise ValueError("ts_noise_std entries must be finite and >= 0")
        if downsample_ratio is not None and self.series_length_raw % downsample_ratio:
            raise ValueError(
                f"series_length_raw={self.series_length_raw} not divisible by "
                f"downsample ratio {downsample_ratio}"
            )


def source_cohort_spec(**overrides) -> CohortSpec:
    return replace(CohortSpec(), **overrides)


def target_cohort_spec(**overrides) -> CohortSpec:
    base = CohortSpec(male_frac=0.54, men=TARGET_MEN, women=TARGET_WOMEN)
    return replace(base, **overrides)


def _smooth_signal(rng: np.random.Generator, n: int, length: int, amplitude: float) -> np.ndarray:
    """Sum of three random low-frequency sinusoids per sample, (n, length)."""
    t = np.arange(length, dtype=np.float32) / max(length, 1)
    out = np.zeros((n, length), dtype=np.float32)
    for k in range(1, 4):
        freq = rng.uniform(1.0, 8.0, size=(n, 1)).astype(np.float32)
        phase = rng.uniform(0.0, 2.0 * np.pi, size=(n, 1)).astype(np.float32)
        out += (amplitude / k) * np.sin(2.0 * np.pi * freq * t[None, :] + phase)
    return out


def gold_label_function(spec: CohortSpec, M: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Ground-truth fitness as a function of metadata plus noise, clipped to
    the physiological range. Anchored at the cohort's per-sex fitness mean."""
    cols = {name: M[:, i] for i, name in enumerate(RAW_META_FIELDS)}
    male = cols["sex"] > 0.5
    base = np.where(male, spec.men.vo2max_mean, spec.women.vo2max_mean)
    mvpa_z = np.where(
        male,
        (cols["mvpa"] - spec.men.mvpa_mean) / max(spec.men.mvpa_std, 1e-9),
        (cols["mvpa"] - spec.women.mvpa_mean) / max(spec.women.mvpa_std, 1e-9),
    )
    vpa_z = np.where(
        male,
        (cols["vpa"] - spec.men.vpa_mean) / max(spec.men.vpa_std, 1e-9),
        (cols["vpa"] - spec.women.vpa_mean) / max(spec.women.vpa_std, 1e-9),
    )
    y = (
        base
        + AGE_COEF * (cols["age"] - AGE_CENTER)
        + RHR_COEF * (cols["rhr"] - RHR_CENTER)
        + MVPA_COEF * mvpa_z
        + VPA_COEF * vpa_z
        + noise
    )
    return np.clip(y, *LABEL_CLIP)


def generate_cohort(
    spec: CohortSpec, n: int, seed: int, domain: int = DOMAIN_SOURCE
) -> SampleSet:
    """Draw an unprocessed gold-labeled cohort of size ``n``.

    Metadata is sampled from the per-sex blocks; the three raw channels are
    smooth random signals whose levels are tied to the metadata (HR to RHR,
    movement to activity minutes, with sparse vigorous bursts so intensity
    counts carry signal). Deterministic given (spec, n, seed).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    spec.validate()
    if domain not in (DOMAIN_SOURCE, DOMAIN_TARGET):
        raise ValueError("domain must be 0 (source) or 1 (target)")

    rng = rng_for(seed, "cohort")
    L = spec.series_length_raw
    male = rng.random(n) < spec.male_frac

    def draw(attr: str) -> np.ndarray:
        m, w = spec.men, spec.women
        mean = np.where(male, getattr(m, f"{attr}_mean"), getattr(w, f"{attr}_mean"))
        std = np.where(male, getattr(m, f"{attr}_std"), getattr(w, f"{attr}_std"))
        return mean + std * rng.standard_normal(n)

    age = draw("age")
    height = np.maximum(draw("height"), 1.2)
    weight = np.maximum(draw("weight"), 35.0)
    rhr = np.clip(draw("rhr"), 38.0, 110.0)
    mvpa = np.maximum(draw("mvpa"), 0.0)
    vpa = np.maximum(draw("vpa"), 0.0)
    month = rng.integers(1, 13, size=n).astype(np.float64)

    M = np.column_stack([age, male.astype(np.float64), height, weight, rhr, mvpa, vpa, month])

    # Movement channel (activity intensity, J/min/kg-like): level tied to
    # MVPA, plus Poisson-placed vigorous bursts scaled by VPA min/day.
    accel_noise, hr_noise, hrv_noise = spec.ts_noise_std
    days = L / 1440.0
    accel = (
        (25.0 + 0.5 * mvpa)[:, None].astype(np.float32)
        + _smooth_signal(rng, n, L, 15.0)
        + accel_noise * rng.standard_normal((n, L)).astype(np.float32)
    )
    n_bursts = rng.poisson(np.maximum(vpa * days, 0.0))
    for i in np.nonzero(n_bursts)[0]:
        k = min(int(n_bursts[i]), L)
        pos = rng.choice(L, size=k, replace=False)
        accel[i, pos] = 320.0 + 30.0 * rng.standard_normal(k).astype(np.float32)
    accel = np.maximum(accel, 0.0)

    hr = (
        rhr[:, None].astype(np.float32)
        + 0.25 * np.maximum(accel - 25.0, 0.0)
        + _smooth_signal(rng, n, L, 4.0)
        + hr_noise * rng.standard_normal((n, L)).astype(np.float32)
    )
    hr = np.maximum(hr, 35.0)

    hrv = (
        55.0
        - 0.35 * (hr - 60.0)
        + _smooth_signal(rng, n, L, 6.0)
        + hrv_noise * rng.standard_normal((n, L)).astype(np.float32)
    )
    hrv = np.maximum(hrv, 0.0)

    X = np.stack([accel, hr, hrv], axis=2)
    y = gold_label_function(spec, M, LABEL_NOISE_STD * rng.standard_normal(n))

    return SampleSet(
        X,
        M,
        y,
        np.full(n, domain, dtype=np.int8),
        "gold",
        False,
        RAW_TS_CHANNELS,
        RAW_META_FIELDS,
    )


@dataclass(frozen=True)
class LabelCorruption:
    """Affine label corruption: y_silver = slope * y_gold + intercept + N(0, noise_std^2)."""

    slope: float
    intercept: float
    noise_std: float

    def __post_init__(self) -> None:
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not all(np.isfinite(v) for v in (self.slope, self.intercept, self.noise_std)):
            raise ValueError("corruption parameters must be finite")

    @staticmethod
    def noise_std_for_r(slope: float, sigma_y: float, r: float) -> float:
        """Noise level giving Pearson(y_silver, y_gold) = r for the affine model:
        r = slope * sigma_y / sqrt(slope^2 sigma_y^2 + noise^2)."""
        if not 0 < r <= 1:
            raise ValueError("r must be in (0, 1]")
        return abs(slope) * sigma_y * np.sqrt(1.0 / r**2 - 1.0)

    @classmethod
    def calibrated(
        cls,
        y_gold: np.ndarray,
        slope: float = 0.85,
        mean_bias: float = -2.3,
        target_r: float = 0.68,
    ) -> "LabelCorruption":
        """Default corruption: intercept solved so the population mean bias is
        ``mean_bias`` and noise solved so the induced Pearson r is ``target_r``
        (midpoints of the published submaximal-test envelope)."""
        y = np.asarray(y_gold, dtype=np.float64)
        intercept = mean_bias - (slope - 1.0) * float(y.mean())
        noise = cls.noise_std_for_r(slope, float(y.std()), target_r)
        return cls(slope, intercept, float(noise))


def corrupt_to_silver(gold: SampleSet, c: LabelCorruption, seed: int) -> SampleSet:
    """Replace gold labels with their silver-standard corruption; X and M are
    shared with the input set."""
    if gold.label_grade != "gold":
        raise InvalidStateError(f"expected gold labels, got {gold.label_grade!r}")
    eps = rng_for(seed, "silver").standard_normal(gold.n)
    y_silver = c.slope * gold.y + c.intercept + c.noise_std * eps
    return gold.with_labels(y_silver, label_grade="silver")


def silver_calibration_check(gold: SampleSet, silver: SampleSet) -> tuple[float, float]:
    """Measured (mean bias, Pearson r) between silver and gold labels."""
    from .objectives import pearson

    bias = float((silver.y - gold.y).mean())
    return bias, pearson(silver.y, gold.y)


@dataclass(frozen=True)
class ShiftSpec:
    """Additive label shift: fixed offset plus Gaussian noise."""

    offset: float = 0.0
    noise_std: float = 0.0

    def __post_init__(self) -> None:
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not np.isfinite(self.offset):
            raise ValueError("offset must be finite")


def apply_label_shift(sample_set: SampleSet, s: ShiftSpec, seed: int) -> SampleSet:
    """Shift every label by ``offset`` plus N(0, noise_std^2); inputs unchanged."""
    eta = rng_for(seed, "shift").standard_normal(sample_set.n)
    return sample_set.with_labels(sample_set.y + s.offset + s.noise_std * eta)


def save_sample_set(path, sample_set: SampleSet) -> None:
    np.savez_compressed(
        path,
        X=sample_set.X,
        M=sample_set.M,
        y=sample_set.y if sample_set.has_labels else np.array([]),
        has_labels=np.array(sample_set.has_labels),
        domain=sample_set.domain,
        label_grade=np.array(sample_set.label_grade),
        processed=np.array(sample_set.processed),
        ts_names=np.array(sample_set.ts_names),
        meta_names=np.array(sample_set.meta_names),
    )


def load_sample_set(path) -> SampleSet:
    z = np.load(path, allow_pickle=False)
    has_labels = bool(z["has_labels"])
    return SampleSet(
        z["X"],
        z["M"],
        z["y"] if has_labels else None,
        z["domain"],
        str(z["label_grade"]),
        bool(z["processed"]),
        tuple(str(s) for s in z["ts_names"]),
        tuple(str(s) for s in z["meta_names"]),
    )
