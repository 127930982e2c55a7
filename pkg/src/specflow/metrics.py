"""Evaluation scores for generated sequence sets.

All scores are "lower is better" except none; the discriminative score is
|test accuracy - 0.5| of a recurrent real-vs-generated classifier and the
predictive score is the MAE of a recurrent one-step-ahead predictor trained
on generated data and evaluated on real data.  Protocol constants (seeds,
epochs, widths) travel inside each MetricReport so runs stay comparable.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .mmdflow import mmd2


@dataclass
class MetricProtocol:
    seed: int = 0
    repeats: int = 1
    epochs: int = 20
    batch_size: int = 128
    learning_rate: float = 1e-3
    hidden_multiplier: int = 2
    num_layers: int = 2
    train_frac: float = 0.8
    minmax_inputs: bool = True  # scale-sensitive scores run on min-max normalized data

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


@dataclass
class MetricReport:
    name: str
    value: float
    std: float
    protocol: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"non-finite metric value for {self.name}")

    def to_json(self) -> str:
        return json.dumps(
            {"name": self.name, "value": self.value, "std": self.std, "protocol": self.protocol}
        )


def write_report(path, report: MetricReport):
    """Append one metric record to a results log (one JSON object per line)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as fh:
        fh.write(report.to_json() + "\n")


def _values(batch) -> np.ndarray:
    values = np.asarray(getattr(batch, "values", batch), dtype=np.float64)
    if values.ndim != 3:
        raise ValueError("expected sequences [num, N, d]")
    if values.size == 0:
        raise ValueError("empty sequence set")
    return values


def _minmax(values: np.ndarray) -> np.ndarray:
    lo = values.min(axis=(0, 1), keepdims=True)
    hi = values.max(axis=(0, 1), keepdims=True)
    span = np.where(hi - lo == 0, 1.0, hi - lo)
    return (values - lo) / span


def marginal_score(real, gen, bins: int = 50) -> float:
    """Mean absolute difference of per-channel pooled value densities."""
    rv, gv = _values(real), _values(gen)
    if rv.shape[2] != gv.shape[2]:
        raise ValueError("real and generated channel counts differ")
    scores = []
    for c in range(rv.shape[2]):
        r = rv[:, :, c].ravel()
        g = gv[:, :, c].ravel()
        lo = min(r.min(), g.min())
        hi = max(r.max(), g.max())
        if hi == lo:
            scores.append(0.0)
            continue
        hr, _ = np.histogram(r, bins=bins, range=(lo, hi), density=True)
        hg, _ = np.histogram(g, bins=bins, range=(lo, hi), density=True)
        scores.append(np.abs(hr - hg).mean())
    return float(np.mean(scores))


def _corr_matrix(values: np.ndarray) -> np.ndarray:
    flat = values.reshape(-1, values.shape[-1])
    centered = flat - flat.mean(axis=0)
    std = centered.std(axis=0)
    degenerate = std == 0
    if degenerate.any():
        warnings.warn("zero-variance channel; its correlations are defined as 0")
    safe = np.where(degenerate, 1.0, std)
    corr = (centered / safe).T @ (centered / safe) / flat.shape[0]
    corr[degenerate, :] = 0.0
    corr[:, degenerate] = 0.0
    return corr


def correlational_score(real, gen) -> float:
    """Mean absolute entrywise difference of pooled channel cross-correlations."""
    rv, gv = _values(real), _values(gen)
    if rv.shape[2] != gv.shape[2]:
        raise ValueError("real and generated channel counts differ")
    return float(np.abs(_corr_matrix(rv) - _corr_matrix(gv)).mean())


class _GruHead(nn.Module):
    def __init__(self, d_in: int, hidden: int, layers: int, d_out: int):
        super().__init__()
        self.gru = nn.GRU(d_in, hidden, num_layers=layers, batch_first=True)
        self.head = nn.Linear(hidden, d_out)

    def forward(self, x, last_only=True):
        out, _ = self.gru(x)
        return self.head(out[:, -1] if last_only else out)


def _epoch_batches(n: int, batch_size: int, generator: torch.Generator):
    order = torch.randperm(n, generator=generator)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _discriminative_once(rv: np.ndarray, gv: np.ndarray, proto: MetricProtocol, seed: int) -> float:
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    x = torch.as_tensor(np.concatenate([rv, gv]), dtype=torch.float32)
    y = torch.cat([torch.ones(len(rv)), torch.zeros(len(gv))])
    perm = torch.randperm(len(x), generator=gen)
    x, y = x[perm], y[perm]
    n_train = int(round(proto.train_frac * len(x)))
    if n_train == 0 or n_train == len(x):
        raise ValueError("degenerate train/test split")
    hidden = proto.hidden_multiplier * x.shape[-1]
    model = _GruHead(x.shape[-1], hidden, proto.num_layers, 1)
    opt = torch.optim.Adam(model.parameters(), lr=proto.learning_rate)
    loss_fn = nn.BCEWithLogitsLoss()
    for _ in range(proto.epochs):
        for idx in _epoch_batches(n_train, proto.batch_size, gen):
            opt.zero_grad()
            loss = loss_fn(model(x[idx]).squeeze(-1), y[idx])
            loss.backward()
            opt.step()
    with torch.no_grad():
        logits = model(x[n_train:]).squeeze(-1)
        acc = ((logits > 0).float() == y[n_train:]).float().mean().item()
    return abs(acc - 0.5)


def discriminative_score(real, gen, protocol: MetricProtocol | None = None) -> MetricReport:
    """|accuracy - 1/2| of a 2-layer GRU classifying real vs generated."""
    proto = protocol or MetricProtocol()
    rv, gv = _values(real), _values(gen)
    if len(rv) < 64 or len(gv) < 64:
        raise ValueError("need at least 64 sequences per set")
    if proto.minmax_inputs:
        rv, gv = _minmax(rv), _minmax(gv)
    vals = [_discriminative_once(rv, gv, proto, proto.seed + i) for i in range(proto.repeats)]
    return MetricReport(
        name="discriminative",
        value=float(np.mean(vals)),
        std=float(np.std(vals)),
        protocol={**asdict(proto), "n_real": len(rv), "n_gen": len(gv)},
    )


def _predictive_once(rv: np.ndarray, gv: np.ndarray, proto: MetricProtocol, seed: int) -> float:
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    train = torch.as_tensor(gv, dtype=torch.float32)
    test = torch.as_tensor(rv, dtype=torch.float32)
    d = train.shape[-1]
    model = _GruHead(d, proto.hidden_multiplier * d, proto.num_layers, d)
    opt = torch.optim.Adam(model.parameters(), lr=proto.learning_rate)
    for _ in range(proto.epochs):
        for idx in _epoch_batches(len(train), proto.batch_size, gen):
            seqs = train[idx]
            opt.zero_grad()
            pred = model(seqs[:, :-1], last_only=False)
            loss = (pred - seqs[:, 1:]).abs().mean()
            loss.backward()
            opt.step()
    with torch.no_grad():
        pred = model(test[:, :-1], last_only=False)
        return (pred - test[:, 1:]).abs().mean().item()


def predictive_score(real, gen, protocol: MetricProtocol | None = None) -> MetricReport:
    """MAE on real data of a one-step-ahead GRU predictor trained on generated data."""
    proto = protocol or MetricProtocol()
    rv, gv = _values(real), _values(gen)
    if rv.shape[1] < 3:
        raise ValueError("predictive score needs sequences of length >= 3")
    if proto.minmax_inputs:
        rv, gv = _minmax(rv), _minmax(gv)
    vals = [_predictive_once(rv, gv, proto, proto.seed + i) for i in range(proto.repeats)]
    return MetricReport(
        name="predictive",
        value=float(np.mean(vals)),
        std=float(np.std(vals)),
        protocol={**asdict(proto), "n_real": len(rv), "n_gen": len(gv)},
    )


def mmd_report(real, gen, sigma: float = 1.0) -> float:
    """Squared RBF MMD of flattened sequences (each sequence one vector)."""
    rv, gv = _values(real), _values(gen)
    return mmd2(rv.reshape(len(rv), -1), gv.reshape(len(gv), -1), sigma)
