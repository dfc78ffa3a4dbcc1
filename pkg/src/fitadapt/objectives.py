"""Training losses, regression metrics, and histogram distribution distances.

The loss functions operate on torch tensors so gradients flow through them
during training; they accept plain sequences too and return scalar tensors.
The evaluation metrics and histogram tools are numpy-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import DegenerateInputError

PROB_CLAMP = 1e-7
LAMBDA_SUM_TOL = 1e-12
KL_SMOOTHING = 1e-9


@dataclass(frozen=True)
class LossWeights:
    """Weights of the combined adaptation objective
    ``alpha * L_mse - lambda1 * L_cse - lambda2 * L_gll``."""

    alpha: float = 0.01
    lambda1: float = 0.9
    lambda2: float = 0.1

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and np.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda weights must be nonnegative")
        if abs(self.lambda1 + self.lambda2 - 1.0) > LAMBDA_SUM_TOL:
            raise ValueError(
                f"lambda1 + lambda2 must equal 1, got {self.lambda1 + self.lambda2!r}"
            )


def _as_1d(x, name: str) -> torch.Tensor:
    # Tensors keep their dtype (training stays in float32); plain sequences
    # are promoted to float64 so closed-form checks hold to 1e-12.
    t = x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)
    if t.dim() == 0:
        t = t.reshape(1)
    if t.dim() != 1:
        raise ValueError(f"{name} must be a vector, got shape {tuple(t.shape)}")
    return t


def _paired(y, yhat) -> tuple[torch.Tensor, torch.Tensor]:
    a = _as_1d(y, "y")
    b = _as_1d(yhat, "yhat")
    if a.numel() != b.numel():
        raise ValueError(f"length mismatch: {a.numel()} vs {b.numel()}")
    if a.numel() == 0:
        raise ValueError("empty input")
    return a, b


def mse_loss(y, yhat) -> torch.Tensor:
    """Mean squared residual."""
    a, b = _paired(y, yhat)
    return ((a - b) ** 2).mean()


def mae(y, yhat) -> torch.Tensor:
    """Mean absolute residual."""
    a, b = _paired(y, yhat)
    return (a - b).abs().mean()


def cross_entropy(y_c, p) -> torch.Tensor:
    """Binary cross entropy of domain probabilities against 0/1 labels.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the log so a
    saturated sigmoid cannot produce an infinite loss.
    """
    t, prob = _paired(y_c, p)
    t = t.to(prob.dtype) if prob.is_floating_point() else t.double()
    prob = torch.clamp(prob, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(t * torch.log(prob) + (1.0 - t) * torch.log(1.0 - prob)).mean()


def gaussian_nll(target, mu, var, variance_floor: float = 1e-6) -> torch.Tensor:
    """Gaussian negative log-likelihood, ``0.5 * (ln var + (t - mu)^2 / var)``,
    averaged over the batch. The constant ``0.5 * ln(2 pi)`` is omitted.
    """
    t = _as_1d(target, "target")
    m = _as_1d(mu, "mu")
    v = _as_1d(var, "var")
    if not (t.numel() == m.numel() == v.numel()):
        raise ValueError("target, mu, var must have equal lengths")
    if bool((v < variance_floor).any()):
        raise ValueError(f"variance below floor {variance_floor}")
    return (0.5 * (torch.log(v) + (t - m) ** 2 / v)).mean()


def total_adapt_loss(w: LossWeights, l_mse, l_cse, l_gll):
    """Combined adaptation objective: predictor loss scaled down by alpha,
    discriminator losses subtracted with weights lambda1/lambda2."""
    if abs(w.lambda1 + w.lambda2 - 1.0) > LAMBDA_SUM_TOL:
        raise ValueError("lambda1 + lambda2 must equal 1")
    return w.alpha * l_mse - w.lambda1 * l_cse - w.lambda2 * l_gll


# ---------------------------------------------------------------------------
# Evaluation metrics
# ---------------------------------------------------------------------------


def _metric_pair(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(y, dtype=np.float64).ravel()
    b = np.asarray(yhat, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("need at least 2 samples")
    return a, b


def r_squared(y, yhat) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot."""
    a, b = _metric_pair(y, yhat)
    ss_tot = float(((a - a.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise DegenerateInputError("R^2 undefined for constant targets")
    ss_res = float(((a - b) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def pearson(y, yhat) -> float:
    """Pearson correlation; raises DegenerateInputError when either argument
    has zero variance rather than silently returning 0."""
    a, b = _metric_pair(y, yhat)
    ac = a - a.mean()
    bc = b - b.mean()
    denom = float(np.sqrt((ac**2).sum() * (bc**2).sum()))
    if denom == 0.0:
        raise DegenerateInputError("Pearson undefined for zero-variance input")
    return float(np.clip((ac * bc).sum() / denom, -1.0, 1.0))


@dataclass(frozen=True)
class MetricRecord:
    """One evaluation of a model on a labeled test set. ``corr`` is None when
    the predictions were degenerate (zero variance)."""

    mse: float
    mae: float
    r2: float
    corr: float | None
    corr_degenerate: bool
    hellinger: float
    kl: float


# ---------------------------------------------------------------------------
# Histograms and distribution distances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Histogram:
    """Normalized histogram: K+1 strictly increasing edges, K masses summing to 1."""

    bin_edges: np.ndarray
    mass: np.ndarray

    def __post_init__(self) -> None:
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        mass = np.asarray(self.mass, dtype=np.float64)
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "mass", mass)
        if edges.ndim != 1 or mass.ndim != 1 or edges.size != mass.size + 1:
            raise ValueError("need K+1 edges for K masses")
        if not np.all(np.diff(edges) > 0):
            raise ValueError("bin edges must be strictly increasing")
        if np.any(mass < 0) or abs(float(mass.sum()) - 1.0) > 1e-9:
            raise ValueError("mass must be nonnegative and sum to 1")


def build_histogram(values, k_bins: int, value_range: tuple[float, float]) -> Histogram:
    """Equal-width histogram over [lo, hi]; out-of-range values are clipped
    into the edge bins and mass is normalized to 1."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("empty values")
    lo, hi = float(value_range[0]), float(value_range[1])
    if not lo < hi:
        raise ValueError(f"invalid range ({lo}, {hi})")
    if k_bins < 1:
        raise ValueError("k_bins must be positive")
    counts, edges = np.histogram(np.clip(v, lo, hi), bins=k_bins, range=(lo, hi))
    return Histogram(edges, counts / counts.sum())


def shared_histograms(a, b, k_bins: int = 20) -> tuple[Histogram, Histogram]:
    """Histograms of two samples on identical equal-width bins spanning the
    union of their ranges (widened slightly when the union is a point)."""
    av = np.asarray(a, dtype=np.float64).ravel()
    bv = np.asarray(b, dtype=np.float64).ravel()
    if av.size == 0 or bv.size == 0:
        raise ValueError("empty values")
    lo = float(min(av.min(), bv.min()))
    hi = float(max(av.max(), bv.max()))
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return (
        build_histogram(av, k_bins, (lo, hi)),
        build_histogram(bv, k_bins, (lo, hi)),
    )


def _check_edges(a: Histogram, b: Histogram) -> None:
    if a.bin_edges.size != b.bin_edges.size or not np.array_equal(
        a.bin_edges, b.bin_edges
    ):
        raise ValueError("histograms were built on different bin edges")


def hellinger(a: Histogram, b: Histogram) -> float:
    """Hellinger distance, sqrt(0.5 * sum (sqrt(a_i) - sqrt(b_i))^2), in [0, 1]."""
    _check_edges(a, b)
    h2 = 0.5 * float(((np.sqrt(a.mass) - np.sqrt(b.mass)) ** 2).sum())
    return float(np.sqrt(min(max(h2, 0.0), 1.0)))


def kl_divergence(a: Histogram, b: Histogram) -> float:
    """KL(a || b) with the reference smoothed by 1e-9 per bin and renormalized;
    empty a-bins contribute 0."""
    _check_edges(a, b)
    bm = b.mass + KL_SMOOTHING
    bm = bm / bm.sum()
    pos = a.mass > 0
    kl = float((a.mass[pos] * np.log(a.mass[pos] / bm[pos])).sum())
    return max(kl, 0.0)
