"""Differentiable model: shared encoder (bidirectional recurrent stack over
the time series plus a batch-normalized metadata branch), a linear regression
head, a binary domain discriminator, and a distribution-moments discriminator.

All heads read the same concatenated embedding of dimension
``2 * recurrent_units + meta_hidden``.
"""

from __future__ import annotations

import copy
import io
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn

from .cohort import SampleSet
from .errors import InvalidStateError
from .seeding import derive_seed

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    recurrent_units: int = 32
    recurrent_layers: int = 2
    meta_hidden: int = 128
    dropout: float = 0.3
    disc_hidden: int = 64
    variance_floor: float = 1e-6

    def __post_init__(self) -> None:
        if min(self.recurrent_units, self.recurrent_layers, self.meta_hidden, self.disc_hidden) < 1:
            raise ValueError("layer sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.variance_floor <= 0:
            raise ValueError("variance_floor must be > 0")

    @property
    def embedding_dim(self) -> int:
        return 2 * self.recurrent_units + self.meta_hidden


class Encoder(nn.Module):
    """Time branch: bidirectional GRU stack, mean-pooled over time.
    Metadata branch: batch norm, dense layer, ReLU. Outputs their concatenation.
    """

    def __init__(self, cfg: NetConfig, n_ts: int, n_meta: int) -> None:
        super().__init__()
        self.gru = nn.GRU(
            input_size=n_ts,
            hidden_size=cfg.recurrent_units,
            num_layers=cfg.recurrent_layers,
            batch_first=True,
            bidirectional=True,
            dropout=cfg.dropout if cfg.recurrent_layers > 1 else 0.0,
        )
        self.meta_norm = nn.BatchNorm1d(n_meta)
        self.meta_fc = nn.Linear(n_meta, cfg.meta_hidden)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
        seq, _ = self.gru(x)
        pooled = seq.mean(dim=1)
        meta = torch.relu(self.meta_fc(self.meta_norm(m)))
        return self.drop(torch.cat([pooled, meta], dim=1))


class _TwoLayerHead(nn.Module):
    def __init__(self, d_in: int, hidden: int, d_out: int) -> None:
        super().__init__()
        self.fc1 = nn.Linear(d_in, hidden)
        self.fc2 = nn.Linear(hidden, d_out)

    def forward(self, emb: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.relu(self.fc1(emb)))


class Model(nn.Module):
    """Encoder plus the three task heads."""

    def __init__(self, cfg: NetConfig, n_ts: int, n_meta: int) -> None:
        super().__init__()
        self.cfg = cfg
        self.n_ts = n_ts
        self.n_meta = n_meta
        self.encoder = Encoder(cfg, n_ts, n_meta)
        self.predictor = nn.Linear(cfg.embedding_dim, 1)
        self.disc_c = _TwoLayerHead(cfg.embedding_dim, cfg.disc_hidden, 1)
        self.disc_f = _TwoLayerHead(cfg.embedding_dim, cfg.disc_hidden, 2)

    def embed(self, x: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
        if x.dim() != 3 or m.dim() != 2 or x.shape[0] != m.shape[0]:
            raise ValueError(f"bad input shapes {tuple(x.shape)}, {tuple(m.shape)}")
        if x.shape[2] != self.n_ts or m.shape[1] != self.n_meta:
            raise ValueError(
                f"expected {self.n_ts} channels / {self.n_meta} metadata fields, "
                f"got {x.shape[2]} / {m.shape[1]}"
            )
        if not (torch.isfinite(x).all() and torch.isfinite(m).all()):
            raise ValueError("non-finite model input")
        return self.encoder(x, m)

    def regress(self, emb: torch.Tensor) -> torch.Tensor:
        return self.predictor(emb).squeeze(-1)

    def domain_prob(self, emb: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.disc_c(emb)).squeeze(-1)

    def domain_moments(self, emb: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        out = self.disc_f(emb)
        mu = out[:, 0]
        var = torch.exp(out[:, 1]) + self.cfg.variance_floor
        return mu, var


def init_model(cfg: NetConfig, seed: int, n_ts: int = 4, n_meta: int = 11) -> Model:
    """Build a model with deterministic initialization: dense and recurrent
    weights uniform in +-1/sqrt(fan_in), biases zero, batch-norm affine at
    identity."""
    model = Model(cfg, n_ts, n_meta)
    gen = torch.Generator().manual_seed(derive_seed(seed, "init"))
    with torch.no_grad():
        for name, p in model.named_parameters():
            if "meta_norm" in name:
                p.fill_(1.0 if name.endswith("weight") else 0.0)
            elif p.dim() >= 2:
                bound = 1.0 / float(np.sqrt(p.shape[-1]))
                p.uniform_(-bound, bound, generator=gen)
            else:
                p.zero_()
    return model


FROZEN_LAYER_PREFIXES = ("encoder.gru.weight_ih_l0", "encoder.gru.weight_hh_l0",
                         "encoder.gru.bias_ih_l0", "encoder.gru.bias_hh_l0",
                         "encoder.meta_fc.")


def _is_frozen_name(name: str) -> bool:
    return any(name.startswith(p) for p in FROZEN_LAYER_PREFIXES)


def freeze_plan(model: Model) -> Model:
    """A copy of the model with the first recurrent layer and the metadata
    dense layer marked untrainable; everything else stays trainable.
    Idempotent."""
    frozen = clone_model(model)
    for name, p in frozen.named_parameters():
        p.requires_grad = not _is_frozen_name(name)
    return frozen


def has_freeze_plan(model: Model) -> bool:
    flags = [p.requires_grad for n, p in model.named_parameters() if _is_frozen_name(n)]
    return len(flags) > 0 and not any(flags)


def require_freeze_plan(model: Model) -> None:
    if not has_freeze_plan(model):
        raise InvalidStateError("model has no freeze plan applied")


def clone_model(model: Model) -> Model:
    return copy.deepcopy(model)


def frozen_state(model: Model) -> dict[str, torch.Tensor]:
    """Clones of the untrainable parameter tensors, for byte-level checks."""
    return {
        n: p.detach().clone()
        for n, p in model.named_parameters()
        if not p.requires_grad
    }


# ---------------------------------------------------------------------------
# Numpy-facing helpers
# ---------------------------------------------------------------------------


def _tensors(sample_set: SampleSet) -> tuple[torch.Tensor, torch.Tensor]:
    x = torch.as_tensor(np.ascontiguousarray(sample_set.X), dtype=torch.float32)
    m = torch.as_tensor(np.ascontiguousarray(sample_set.M), dtype=torch.float32)
    return x, m


def encode(model: Model, X, M, train_mode: bool = False) -> np.ndarray:
    """Embedding matrix for numpy inputs (inference helper)."""
    x = torch.as_tensor(np.asarray(X), dtype=torch.float32)
    m = torch.as_tensor(np.asarray(M), dtype=torch.float32)
    model.train(train_mode)
    with torch.no_grad():
        emb = model.embed(x, m)
    model.eval()
    return emb.numpy()


def predict_set(model: Model, sample_set: SampleSet, batch_size: int = 256) -> np.ndarray:
    """Label predictions for every sample, in eval mode."""
    x, m = _tensors(sample_set)
    model.eval()
    preds = []
    with torch.no_grad():
        for i in range(0, sample_set.n, batch_size):
            emb = model.embed(x[i : i + batch_size], m[i : i + batch_size])
            preds.append(model.regress(emb).numpy())
    return np.concatenate(preds).astype(np.float64)


def embed_set(model: Model, sample_set: SampleSet, batch_size: int = 256) -> np.ndarray:
    x, m = _tensors(sample_set)
    model.eval()
    out = []
    with torch.no_grad():
        for i in range(0, sample_set.n, batch_size):
            out.append(model.embed(x[i : i + batch_size], m[i : i + batch_size]).numpy())
    return np.concatenate(out)


def save_checkpoint(path, model: Model) -> None:
    """Versioned archive of named parameter/buffer tensors plus the config."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "net_config": asdict(model.cfg),
        "n_ts": model.n_ts,
        "n_meta": model.n_meta,
        "state": model.state_dict(),
        "frozen": [n for n, p in model.named_parameters() if not p.requires_grad],
    }
    torch.save(payload, path)


def load_checkpoint(path) -> Model:
    payload = torch.load(path, weights_only=True)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    model = Model(NetConfig(**payload["net_config"]), payload["n_ts"], payload["n_meta"])
    model.load_state_dict(payload["state"])
    frozen = set(payload["frozen"])
    for name, p in model.named_parameters():
        p.requires_grad = name not in frozen
    return model


def checkpoint_bytes(model: Model) -> bytes:
    buf = io.BytesIO()
    save_checkpoint(buf, model)
    return buf.getvalue()
