"""Two-phase training: supervised pretraining on the silver-labeled source,
source-sample injection with coarse/fine domain labels, and the alternating
adversarial adaptation loop. Also plain fine-tuning and model evaluation.

Every run is a deterministic function of (data, config, seed): weight init,
splits, batch order, and dropout all derive from the caller's seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .cohort import SampleSet, concat_sets
from .errors import DegenerateInputError, InvalidStateError
from .networks import (
    Model,
    NetConfig,
    _TwoLayerHead,
    _tensors,
    clone_model,
    init_model,
    predict_set,
    require_freeze_plan,
)
from .objectives import (
    Histogram,
    LossWeights,
    MetricRecord,
    build_histogram,
    cross_entropy,
    gaussian_nll,
    hellinger,
    kl_divergence,
    mse_loss,
    pearson,
    r_squared,
    total_adapt_loss,
)
from .seeding import derive_seed, rng_for

GLL_TARGET_MODES = ("domain_mean", "own_label")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 8
    max_epochs: int = 100
    patience: int = 10
    optimizer: str = "adam"
    weights: LossWeights = field(default_factory=LossWeights)
    validation_fraction: float = 0.2
    gll_target: str = "domain_mean"

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")
        if not 1 <= self.patience <= self.max_epochs:
            raise ValueError("patience must be in [1, max_epochs]")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.gll_target not in GLL_TARGET_MODES:
            raise ValueError(f"gll_target must be one of {GLL_TARGET_MODES}")


@dataclass
class DomainAssignment:
    """Per-sample domain labels for the mixed adaptation set.

    ``y_c`` is the binary domain label (0=source, 1=target); ``y_d_mean`` and
    ``y_d_var`` hold the mean/variance of each sample's own-domain training
    label distribution (filled by :func:`assign_distribution_labels`).
    """

    y_c: np.ndarray
    y_d_mean: np.ndarray | None = None
    y_d_var: np.ndarray | None = None
    injected_source_indices: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))

    def subset(self, idx) -> "DomainAssignment":
        idx = np.asarray(idx)
        return DomainAssignment(
            self.y_c[idx],
            None if self.y_d_mean is None else self.y_d_mean[idx],
            None if self.y_d_var is None else self.y_d_var[idx],
            self.injected_source_indices,
        )


@dataclass
class EpochStats:
    l_mse: float
    l_cse: float
    l_gll: float
    l_total: float
    val_mse: float
    disc_acc: float  # NaN when no probe batch is available


@dataclass
class TrainTrace:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    stop_epoch: int = 0

    def val_mse(self) -> np.ndarray:
        return np.array([e.val_mse for e in self.epochs])

    def component(self, name: str) -> np.ndarray:
        return np.array([getattr(e, name) for e in self.epochs])

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for i, e in enumerate(self.epochs):
                row = {
                    "epoch": i,
                    "l_mse": e.l_mse,
                    "l_cse": e.l_cse,
                    "l_gll": e.l_gll,
                    "l_total": e.l_total,
                    "val_mse": e.val_mse,
                    "disc_acc": e.disc_acc,
                    "best_epoch": self.best_epoch,
                    "stop_epoch": self.stop_epoch,
                }
                f.write(json.dumps(row, sort_keys=True) + "\n")


def _validation_split(n: int, frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if n < 2.0 / frac:
        raise ValueError(
            f"need at least {int(np.ceil(2.0 / frac))} samples for a "
            f"{frac:.0%} validation split, got {n}"
        )
    n_val = int(round(frac * n))
    n_val = min(max(n_val, 1), n - 1)
    order = rng_for(seed, "val-split").permutation(n)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def _batches(order: np.ndarray, batch_size: int):
    for i in range(0, order.size, batch_size):
        b = order[i : i + batch_size]
        if b.size > 1:  # batch norm needs more than one row in train mode
            yield b


def _validation_mse(model: Model, x: torch.Tensor, m: torch.Tensor, y: torch.Tensor) -> float:
    model.eval()
    with torch.no_grad():
        pred = model.regress(model.embed(x, m))
        return float(mse_loss(y, pred))


class _EarlyStopper:
    def __init__(self, model: Model, patience: int) -> None:
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = -1
        self.best_state = {k: v.clone() for k, v in model.state_dict().items()}

    def update(self, model: Model, epoch: int, val: float) -> bool:
        """Record epoch result; returns True when training should stop."""
        if val < self.best:
            self.best = val
            self.best_epoch = epoch
            self.best_state = {k: v.clone() for k, v in model.state_dict().items()}
        return epoch - self.best_epoch >= self.patience

    def restore(self, model: Model) -> None:
        model.load_state_dict(self.best_state)


def _fit_regression(
    model: Model,
    train_set: SampleSet,
    val_set: SampleSet,
    cfg: TrainConfig,
    seed: int,
) -> TrainTrace:
    """Mean-squared-error training of the trainable parameters with early
    stopping on the validation set. Mutates and restores ``model`` in place."""
    torch.manual_seed(derive_seed(seed, "torch"))
    x, m = _tensors(train_set)
    y = torch.as_tensor(train_set.y, dtype=torch.float32)
    xv, mv = _tensors(val_set)
    yv = torch.as_tensor(val_set.y, dtype=torch.float32)

    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    order_rng = rng_for(seed, "batch-order")
    stopper = _EarlyStopper(model, cfg.patience)
    trace = TrainTrace()

    for epoch in range(cfg.max_epochs):
        model.train()
        order = order_rng.permutation(train_set.n)
        sum_mse, count = 0.0, 0
        for b in _batches(order, cfg.batch_size):
            idx = torch.as_tensor(b)
            pred = model.regress(model.embed(x[idx], m[idx]))
            loss = mse_loss(y[idx], pred)
            opt.zero_grad()
            loss.backward()
            opt.step()
            sum_mse += float(loss.detach()) * b.size
            count += b.size
        l_mse = sum_mse / max(count, 1)
        val = _validation_mse(model, xv, mv, yv)
        trace.epochs.append(EpochStats(l_mse, 0.0, 0.0, l_mse, val, float("nan")))
        trace.stop_epoch = epoch
        if stopper.update(model, epoch, val):
            break

    trace.best_epoch = stopper.best_epoch
    stopper.restore(model)
    return trace


def pretrain(
    source: SampleSet,
    cfg: TrainConfig,
    seed: int,
    net: NetConfig | None = None,
) -> tuple[Model, TrainTrace]:
    """Phase one: supervised training of encoder and predictor on the
    silver-labeled source, from fresh initialization."""
    if source.label_grade != "silver":
        raise InvalidStateError(f"pretraining expects silver labels, got {source.label_grade!r}")
    if not source.processed:
        raise ValueError("source must be processed through the feature pipeline")
    net = net or NetConfig()
    model = init_model(net, seed, n_ts=source.X.shape[2], n_meta=source.M.shape[1])
    train_idx, val_idx = _validation_split(source.n, cfg.validation_fraction, seed)
    trace = _fit_regression(model, source.subset(train_idx), source.subset(val_idx), cfg, seed)
    return model, trace


def finetune(
    pretrained: Model,
    target_train: SampleSet,
    cfg: TrainConfig,
    seed: int,
) -> tuple[Model, TrainTrace]:
    """Transfer-learning core: MSE training of the unfrozen layers on the
    gold-labeled target. The input model is left untouched."""
    require_freeze_plan(pretrained)
    if not target_train.processed:
        raise ValueError("target set must be processed")
    model = clone_model(pretrained)
    train_idx, val_idx = _validation_split(target_train.n, cfg.validation_fraction, seed)
    trace = _fit_regression(
        model, target_train.subset(train_idx), target_train.subset(val_idx), cfg, seed
    )
    return model, trace


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def mix_domains(
    target_train: SampleSet,
    source_pool: SampleSet,
    injection_frac_of_target: float,
    seed: int,
) -> tuple[SampleSet, DomainAssignment]:
    """Inject ``round(frac * |target_train|)`` source samples (drawn uniformly
    without replacement) into the target training set. Injected samples keep
    their silver labels and get domain label 0; target samples get 1."""
    if injection_frac_of_target < 0:
        raise ValueError("injection fraction must be >= 0")
    k = round_half_up(injection_frac_of_target * target_train.n)
    if k > source_pool.n:
        raise ValueError(
            f"injection needs {k} source samples but the pool has {source_pool.n}"
        )
    if k == 0:
        assignment = DomainAssignment(np.ones(target_train.n))
        return target_train, assignment
    idx = np.sort(rng_for(seed, "inject").choice(source_pool.n, size=k, replace=False))
    injected = source_pool.subset(idx)
    mixed = concat_sets(target_train, injected, label_grade="mixed")
    y_c = np.concatenate([np.ones(target_train.n), np.zeros(k)])
    return mixed, DomainAssignment(y_c, injected_source_indices=idx)


def assign_distribution_labels(
    mixed: SampleSet, assignment: DomainAssignment
) -> DomainAssignment:
    """Fill the fine-grained labels: every sample gets the (mean, population
    variance) of the training labels of its own domain within the mixed set."""
    if assignment.y_c.shape[0] != mixed.n:
        raise ValueError("assignment does not match the mixed set")
    y = mixed.y
    mean = np.empty(mixed.n)
    var = np.empty(mixed.n)
    for d in np.unique(assignment.y_c):
        mask = assignment.y_c == d
        if mask.sum() < 2:
            raise ValueError(f"domain {int(d)} has fewer than 2 samples")
        labels = y[mask]
        v = float(labels.var())
        if v <= 0:
            raise DegenerateInputError(f"domain {int(d)} has zero label variance")
        mean[mask] = float(labels.mean())
        var[mask] = v
    return replace(assignment, y_d_mean=mean, y_d_var=var)


def _probe_accuracy(model: Model, x: torch.Tensor, m: torch.Tensor, y_c: torch.Tensor) -> float:
    model.eval()
    with torch.no_grad():
        p = model.domain_prob(model.embed(x, m))
        return float(((p >= 0.5).to(y_c.dtype) == y_c).double().mean())


def adversarial_adapt(
    pretrained: Model,
    mixed: SampleSet,
    assignment: DomainAssignment,
    cfg: TrainConfig,
    seed: int,
    probe_source: SampleSet | None = None,
) -> tuple[Model, TrainTrace]:
    """Phase two: alternating adversarial adaptation on the mixed set.

    Per mini-batch, (i) the discriminators are updated on detached embeddings
    (binary cross entropy for the coarse head, Gaussian NLL against the
    domain-distribution label for the fine head), then (ii) the unfrozen
    encoder layers and the predictor are updated on the combined objective
    ``alpha * L_mse - lambda1 * L_cse - lambda2 * L_gll``, with the
    discriminators held fixed. A discriminator whose lambda weight is zero is
    skipped entirely. Early stopping monitors prediction MSE on a held-out
    20% of the target samples; ``probe_source`` (optional, never trained on)
    provides the negatives of the held-out batch used for the per-epoch
    discriminator-accuracy diagnostic.
    """
    require_freeze_plan(pretrained)
    if assignment.y_d_mean is None or assignment.y_d_var is None:
        raise ValueError("assignment is missing distribution labels")
    if assignment.y_c.shape[0] != mixed.n:
        raise ValueError("assignment does not match the mixed set")
    w = cfg.weights
    model = clone_model(pretrained)
    torch.manual_seed(derive_seed(seed, "torch"))

    target_rows = np.nonzero(assignment.y_c == 1)[0]
    if target_rows.size < 2.0 / cfg.validation_fraction:
        raise ValueError("too few target samples for the validation split")
    n_val = min(max(int(round(cfg.validation_fraction * target_rows.size)), 1), target_rows.size - 1)
    perm = rng_for(seed, "adapt-val").permutation(target_rows)
    val_rows = np.sort(perm[:n_val])
    train_rows = np.sort(np.setdiff1d(np.arange(mixed.n), val_rows))

    x, m = _tensors(mixed)
    y = torch.as_tensor(mixed.y, dtype=torch.float32)
    y_c = torch.as_tensor(assignment.y_c, dtype=torch.float32)
    if cfg.gll_target == "domain_mean":
        gll_target = torch.as_tensor(assignment.y_d_mean, dtype=torch.float32)
    else:
        gll_target = y
    xv, mv, yv = x[val_rows], m[val_rows], y[val_rows]

    probe = None
    if probe_source is not None and probe_source.n >= 1 and val_rows.size >= 1:
        k = min(val_rows.size, probe_source.n)
        neg_idx = np.sort(rng_for(seed, "probe").choice(probe_source.n, size=k, replace=False))
        xp_neg, mp_neg = _tensors(probe_source.subset(neg_idx))
        pos = val_rows[:k]
        probe = (
            torch.cat([x[pos], xp_neg]),
            torch.cat([m[pos], mp_neg]),
            torch.cat([torch.ones(k), torch.zeros(k)]),
        )

    disc_params = []
    if w.lambda1 > 0:
        disc_params += list(model.disc_c.parameters())
    if w.lambda2 > 0:
        disc_params += list(model.disc_f.parameters())
    gen_params = [
        p
        for name, p in model.named_parameters()
        if p.requires_grad and not name.startswith(("disc_c.", "disc_f."))
    ]
    opt_disc = torch.optim.Adam(disc_params, lr=cfg.learning_rate)
    opt_gen = torch.optim.Adam(gen_params, lr=cfg.learning_rate)

    order_rng = rng_for(seed, "batch-order")
    stopper = _EarlyStopper(model, cfg.patience)
    trace = TrainTrace()

    for epoch in range(cfg.max_epochs):
        model.train()
        order = order_rng.permutation(train_rows)
        sums = np.zeros(3)
        count = 0
        for b in _batches(order, cfg.batch_size):
            idx = torch.as_tensor(b)
            xb, mb, yb = x[idx], m[idx], y[idx]
            ycb, ydb = y_c[idx], gll_target[idx]

            # (i) discriminator step on detached embeddings
            emb_const = model.embed(xb, mb).detach()
            disc_loss = torch.zeros(())
            if w.lambda1 > 0:
                disc_loss = disc_loss + cross_entropy(ycb, model.domain_prob(emb_const))
            if w.lambda2 > 0:
                mu, var = model.domain_moments(emb_const)
                disc_loss = disc_loss + gaussian_nll(ydb, mu, var, model.cfg.variance_floor)
            opt_disc.zero_grad()
            disc_loss.backward()
            opt_disc.step()

            # (ii) adversarial step: encoder + predictor against fixed heads
            emb = model.embed(xb, mb)
            l_mse = mse_loss(yb, model.regress(emb))
            l_cse = (
                cross_entropy(ycb, model.domain_prob(emb))
                if w.lambda1 > 0
                else torch.zeros(())
            )
            if w.lambda2 > 0:
                mu, var = model.domain_moments(emb)
                l_gll = gaussian_nll(ydb, mu, var, model.cfg.variance_floor)
            else:
                l_gll = torch.zeros(())
            total = total_adapt_loss(w, l_mse, l_cse, l_gll)
            opt_gen.zero_grad()
            total.backward()
            opt_gen.step()

            sums += b.size * np.array([float(l_mse.detach()), float(l_cse.detach()), float(l_gll.detach())])
            count += b.size

        l_mse_e, l_cse_e, l_gll_e = (sums / max(count, 1)).tolist()
        # Logged epoch total is the exact weighted combination of the logged
        # components (the optimized per-batch tensors are float32).
        l_total_e = w.alpha * l_mse_e - w.lambda1 * l_cse_e - w.lambda2 * l_gll_e
        val = _validation_mse(model, xv, mv, yv)
        acc = _probe_accuracy(model, *probe) if probe is not None else float("nan")
        trace.epochs.append(EpochStats(l_mse_e, l_cse_e, l_gll_e, l_total_e, val, acc))
        trace.stop_epoch = epoch
        if stopper.update(model, epoch, val):
            break

    trace.best_epoch = stopper.best_epoch
    stopper.restore(model)
    return model, trace


# ---------------------------------------------------------------------------
# Domain-information probes
# ---------------------------------------------------------------------------


def discriminator_accuracy(model: Model, samples: SampleSet, y_c: np.ndarray) -> float:
    """Accuracy of the model's own coarse discriminator on labeled samples."""
    x, m = _tensors(samples)
    return _probe_accuracy(model, x, m, torch.as_tensor(y_c, dtype=torch.float32))


def frozen_probe_accuracy(
    frozen_model: Model,
    train_samples: SampleSet,
    train_y_c: np.ndarray,
    heldout_samples: SampleSet,
    heldout_y_c: np.ndarray,
    seed: int,
    steps: int = 300,
    lr: float = 1e-2,
) -> float:
    """Train a fresh coarse-discriminator head on the frozen model's
    embeddings of ``train_samples`` and report its accuracy on the held-out
    samples. This upper-bounds how much domain information the embedding
    still carries."""
    from .networks import embed_set

    emb_tr = torch.as_tensor(embed_set(frozen_model, train_samples), dtype=torch.float32)
    emb_ho = torch.as_tensor(embed_set(frozen_model, heldout_samples), dtype=torch.float32)
    y_tr = torch.as_tensor(train_y_c, dtype=torch.float32)
    y_ho = torch.as_tensor(heldout_y_c, dtype=torch.float32)

    torch.manual_seed(derive_seed(seed, "probe-head"))
    head = _TwoLayerHead(emb_tr.shape[1], frozen_model.cfg.disc_hidden, 1)
    opt = torch.optim.Adam(head.parameters(), lr=lr)
    for _ in range(steps):
        p = torch.sigmoid(head(emb_tr)).squeeze(-1)
        loss = cross_entropy(y_tr, p)
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        p = torch.sigmoid(head(emb_ho)).squeeze(-1)
        return float(((p >= 0.5).to(y_ho.dtype) == y_ho).double().mean())


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalResult:
    metrics: MetricRecord
    truth_hist: Histogram
    pred_hist: Histogram
    predictions: np.ndarray


def evaluate(
    model: Model,
    test: SampleSet,
    reference_train_labels: np.ndarray | None = None,
    k_bins: int = 20,
) -> EvalResult:
    """Regression metrics plus distribution distances between the test labels
    and the predictions (histograms share equal-width bins over the union
    range; ``reference_train_labels``, when given, only widens that range)."""
    y = test.y
    yhat = predict_set(model, test)
    mse = float(np.mean((y - yhat) ** 2))
    mae_v = float(np.mean(np.abs(y - yhat)))
    r2 = r_squared(y, yhat)
    try:
        corr = pearson(y, yhat)
        degenerate = False
    except DegenerateInputError:
        corr = None
        degenerate = True
    pool = [y, yhat]
    if reference_train_labels is not None:
        pool.append(np.asarray(reference_train_labels, dtype=np.float64))
    lo = float(min(v.min() for v in pool))
    hi = float(max(v.max() for v in pool))
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    truth_hist = build_histogram(y, k_bins, (lo, hi))
    pred_hist = build_histogram(yhat, k_bins, (lo, hi))
    record = MetricRecord(
        mse=mse,
        mae=mae_v,
        r2=r2,
        corr=corr,
        corr_degenerate=degenerate,
        hellinger=hellinger(truth_hist, pred_hist),
        kl=kl_divergence(truth_hist, pred_hist),
    )
    return EvalResult(record, truth_hist, pred_hist, yhat)
