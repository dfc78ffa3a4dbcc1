"""Comparison methods sharing the same encoder, preprocessing, early stopping,
and evaluation path as the adversarial adaptation: supervised training (in- or
out-of-domain), plain transfer learning, recurrent autoencoder pretraining,
covariance alignment, critic-based distance alignment, and the single
coarse-discriminator adversarial variant.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import torch
import torch.nn as nn

from .cohort import SampleSet
from .networks import Model, NetConfig, _TwoLayerHead, _tensors, init_model
from .objectives import LossWeights, mse_loss
from .seeding import derive_seed, rng_for
from .training import (
    DomainAssignment,
    EpochStats,
    TrainConfig,
    TrainTrace,
    _batches,
    _EarlyStopper,
    _fit_regression,
    _validation_mse,
    _validation_split,
    adversarial_adapt,
)

BASELINE_KINDS = (
    "in_domain_supervised",
    "out_of_domain_supervised",
    "transfer",
    "autoencoder",
    "deep_coral",
    "wdgrl",
    "dann",
)


def train_supervised(
    train: SampleSet,
    cfg: TrainConfig,
    seed: int,
    net: NetConfig | None = None,
    val_set: SampleSet | None = None,
) -> tuple[Model, TrainTrace]:
    """MSE-only training from fresh initialization. ``val_set`` overrides the
    default held-out split of ``train`` as the early-stopping monitor."""
    if not train.processed:
        raise ValueError("training set must be processed")
    net = net or NetConfig()
    model = init_model(net, seed, n_ts=train.X.shape[2], n_meta=train.M.shape[1])
    if val_set is None:
        train_idx, val_idx = _validation_split(train.n, cfg.validation_fraction, seed)
        train, val_set = train.subset(train_idx), train.subset(val_idx)
    trace = _fit_regression(model, train, val_set, cfg, seed)
    return model, trace


class _RecurrentDecoder(nn.Module):
    """Mirror of the encoder's time branch: the pooled embedding is repeated
    along time and decoded back to the input channels."""

    def __init__(self, cfg: NetConfig, n_ts: int) -> None:
        super().__init__()
        d = 2 * cfg.recurrent_units
        self.gru = nn.GRU(
            input_size=d,
            hidden_size=cfg.recurrent_units,
            num_layers=cfg.recurrent_layers,
            batch_first=True,
            bidirectional=True,
        )
        self.out = nn.Linear(d, n_ts)

    def forward(self, pooled: torch.Tensor, length: int) -> torch.Tensor:
        rep = pooled.unsqueeze(1).expand(-1, length, -1)
        seq, _ = self.gru(rep)
        return self.out(seq)


def reconstruct(model: Model, decoder: _RecurrentDecoder, x: torch.Tensor) -> torch.Tensor:
    seq, _ = model.encoder.gru(x)
    return decoder(seq.mean(dim=1), x.shape[1])


def train_autoencoder_pretrain(
    source: SampleSet,
    cfg: TrainConfig,
    seed: int,
    net: NetConfig | None = None,
) -> tuple[Model, TrainTrace]:
    """Pretrain the recurrent stack as a sequence autoencoder on the source
    time series; the decoder is discarded. Metadata branch, predictor, and
    discriminators stay at their fresh initialization."""
    if not source.processed:
        raise ValueError("source must be processed")
    net = net or NetConfig()
    model = init_model(net, seed, n_ts=source.X.shape[2], n_meta=source.M.shape[1])
    torch.manual_seed(derive_seed(seed, "decoder"))
    decoder = _RecurrentDecoder(net, source.X.shape[2])

    train_idx, val_idx = _validation_split(source.n, cfg.validation_fraction, seed)
    x, _ = _tensors(source)
    xt, xv = x[torch.as_tensor(train_idx)], x[torch.as_tensor(val_idx)]

    params = list(model.encoder.gru.parameters()) + list(decoder.parameters())
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    order_rng = rng_for(seed, "batch-order")
    stopper = _EarlyStopper(model, cfg.patience)
    trace = TrainTrace()

    for epoch in range(cfg.max_epochs):
        model.train()
        decoder.train()
        order = order_rng.permutation(xt.shape[0])
        sum_loss, count = 0.0, 0
        for b in _batches(order, cfg.batch_size):
            idx = torch.as_tensor(b)
            recon = reconstruct(model, decoder, xt[idx])
            loss = ((recon - xt[idx]) ** 2).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            sum_loss += float(loss.detach()) * b.size
            count += b.size
        model.eval()
        decoder.eval()
        with torch.no_grad():
            val = float(((reconstruct(model, decoder, xv) - xv) ** 2).mean())
        l = sum_loss / max(count, 1)
        trace.epochs.append(EpochStats(l, 0.0, 0.0, l, val, float("nan")))
        trace.stop_epoch = epoch
        if stopper.update(model, epoch, val):
            break

    trace.best_epoch = stopper.best_epoch
    stopper.restore(model)
    return model, trace


def _batch_cov(x: torch.Tensor) -> torch.Tensor:
    xm = x - x.mean(dim=0, keepdim=True)
    return xm.T @ xm / (x.shape[0] - 1)


def coral_loss(emb_s, emb_t) -> torch.Tensor:
    """Squared Frobenius distance of batch covariances, scaled by 1/(4 d^2)."""
    s = torch.as_tensor(emb_s)
    t = torch.as_tensor(emb_t)
    if s.dim() != 2 or t.dim() != 2 or s.shape[1] != t.shape[1]:
        raise ValueError("embeddings must be 2-D with equal width")
    if s.shape[0] < 2 or t.shape[0] < 2:
        raise ValueError("need at least 2 rows per batch for a covariance")
    d = s.shape[1]
    return ((_batch_cov(s) - _batch_cov(t)) ** 2).sum() / (4.0 * d * d)


def _alignment_setup(source, target_train, cfg, seed, net):
    net = net or NetConfig()
    if not (source.processed and target_train.processed):
        raise ValueError("both sets must be processed")
    model = init_model(net, seed, n_ts=source.X.shape[2], n_meta=source.M.shape[1])
    torch.manual_seed(derive_seed(seed, "torch"))
    tr_idx, val_idx = _validation_split(target_train.n, cfg.validation_fraction, seed)
    xs, ms = _tensors(source)
    ys = torch.as_tensor(source.y, dtype=torch.float32)
    xt, mt = _tensors(target_train.subset(tr_idx))
    val = target_train.subset(val_idx)
    xv, mv = _tensors(val)
    yv = torch.as_tensor(val.y, dtype=torch.float32)
    return net, model, (xs, ms, ys), (xt, mt), (xv, mv, yv)


def train_deep_coral(
    source: SampleSet,
    target_train: SampleSet,
    cfg: TrainConfig,
    coral_weight: float = 1.0,
    seed: int = 0,
    net: NetConfig | None = None,
) -> tuple[Model, TrainTrace]:
    """Source-supervised training with a covariance-alignment term between
    per-batch source and target embeddings; target labels are used only by
    the early-stopping monitor. With ``coral_weight=0`` the loop reduces to
    out-of-domain supervised training."""
    if coral_weight < 0:
        raise ValueError("coral_weight must be >= 0")
    _, model, (xs, ms, ys), (xt, mt), (xv, mv, yv) = _alignment_setup(
        source, target_train, cfg, seed, net
    )
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    order_rng = rng_for(seed, "batch-order")
    target_rng = rng_for(seed, "target-order")
    stopper = _EarlyStopper(model, cfg.patience)
    trace = TrainTrace()
    n_t = xt.shape[0]

    for epoch in range(cfg.max_epochs):
        model.train()
        order = order_rng.permutation(xs.shape[0])
        sums = np.zeros(2)
        count = 0
        for b in _batches(order, cfg.batch_size):
            idx = torch.as_tensor(b)
            emb_s = model.embed(xs[idx], ms[idx])
            l_mse = mse_loss(ys[idx], model.regress(emb_s))
            l_coral = torch.zeros(())
            if coral_weight > 0:
                tb = torch.as_tensor(target_rng.choice(n_t, size=max(int(b.size), 2), replace=False))
                emb_t = model.embed(xt[tb], mt[tb])
                l_coral = coral_loss(emb_s, emb_t)
            loss = l_mse + coral_weight * l_coral
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums += b.size * np.array([float(l_mse.detach()), float(l_coral.detach())])
            count += b.size
        l_mse_e, l_coral_e = (sums / max(count, 1)).tolist()
        val = _validation_mse(model, xv, mv, yv)
        trace.epochs.append(
            EpochStats(l_mse_e, l_coral_e, 0.0, l_mse_e + coral_weight * l_coral_e, val, float("nan"))
        )
        trace.stop_epoch = epoch
        if stopper.update(model, epoch, val):
            break

    trace.best_epoch = stopper.best_epoch
    stopper.restore(model)
    return model, trace


def gradient_penalty(critic: nn.Module, emb_s: torch.Tensor, emb_t: torch.Tensor) -> torch.Tensor:
    """Two-sided penalty on the critic's gradient norm at random interpolates
    between source and target embeddings."""
    k = min(emb_s.shape[0], emb_t.shape[0])
    eps = torch.rand(k, 1)
    interp = (eps * emb_s[:k] + (1.0 - eps) * emb_t[:k]).detach().requires_grad_(True)
    score = critic(interp).sum()
    (grad,) = torch.autograd.grad(score, interp, create_graph=True)
    return ((grad.norm(2, dim=1) - 1.0) ** 2).mean()


def train_wdgrl(
    source: SampleSet,
    target_train: SampleSet,
    cfg: TrainConfig,
    critic_steps: int = 5,
    penalty_weight: float = 10.0,
    seed: int = 0,
    net: NetConfig | None = None,
) -> tuple[Model, TrainTrace]:
    """Critic-estimated distance alignment: a scalar critic is trained
    ``critic_steps`` times per encoder step to separate source from target
    embeddings (with a gradient penalty), then the encoder minimizes source
    MSE plus the estimated distance."""
    if critic_steps < 1:
        raise ValueError("critic_steps must be >= 1")
    net, model, (xs, ms, ys), (xt, mt), (xv, mv, yv) = _alignment_setup(
        source, target_train, cfg, seed, net
    )
    torch.manual_seed(derive_seed(seed, "critic"))
    critic = _TwoLayerHead(net.embedding_dim, net.disc_hidden, 1)
    opt_critic = torch.optim.Adam(critic.parameters(), lr=cfg.learning_rate)
    gen_params = [p for p in model.parameters() if p.requires_grad]
    opt_gen = torch.optim.Adam(gen_params, lr=cfg.learning_rate)
    order_rng = rng_for(seed, "batch-order")
    target_rng = rng_for(seed, "target-order")
    stopper = _EarlyStopper(model, cfg.patience)
    trace = TrainTrace()
    n_t = xt.shape[0]

    for epoch in range(cfg.max_epochs):
        model.train()
        critic.train()
        order = order_rng.permutation(xs.shape[0])
        sums = np.zeros(2)
        count = 0
        for b in _batches(order, cfg.batch_size):
            idx = torch.as_tensor(b)
            tb = torch.as_tensor(target_rng.choice(n_t, size=max(int(b.size), 2), replace=False))

            emb_s_const = model.embed(xs[idx], ms[idx]).detach()
            emb_t_const = model.embed(xt[tb], mt[tb]).detach()
            for _ in range(critic_steps):
                wd = critic(emb_s_const).mean() - critic(emb_t_const).mean()
                gp = gradient_penalty(critic, emb_s_const, emb_t_const)
                critic_loss = -wd + penalty_weight * gp
                opt_critic.zero_grad()
                critic_loss.backward()
                opt_critic.step()

            emb_s = model.embed(xs[idx], ms[idx])
            emb_t = model.embed(xt[tb], mt[tb])
            l_mse = mse_loss(ys[idx], model.regress(emb_s))
            wd_est = critic(emb_s).mean() - critic(emb_t).mean()
            loss = l_mse + wd_est
            opt_gen.zero_grad()
            loss.backward()
            opt_gen.step()

            sums += b.size * np.array([float(l_mse.detach()), float(wd_est.detach())])
            count += b.size
        l_mse_e, wd_e = (sums / max(count, 1)).tolist()
        val = _validation_mse(model, xv, mv, yv)
        trace.epochs.append(EpochStats(l_mse_e, wd_e, 0.0, l_mse_e + wd_e, val, float("nan")))
        trace.stop_epoch = epoch
        if stopper.update(model, epoch, val):
            break

    trace.best_epoch = stopper.best_epoch
    stopper.restore(model)
    return model, trace


def train_dann(
    pretrained: Model,
    mixed: SampleSet,
    assignment: DomainAssignment,
    cfg: TrainConfig,
    seed: int,
    probe_source: SampleSet | None = None,
) -> tuple[Model, TrainTrace]:
    """Single coarse-discriminator adversarial adaptation: the same loop with
    the fine discriminator removed (lambda weights (1, 0))."""
    dann_cfg = replace(cfg, weights=LossWeights(cfg.weights.alpha, 1.0, 0.0))
    return adversarial_adapt(pretrained, mixed, assignment, dann_cfg, seed, probe_source)
