"""Dataset generators, delimited-text ingestion, and sequence transforms."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

MINMAX_01 = "minmax01"
ZSCORE = "zscore"

PENDULUM_GRAVITY = 9.8
PENDULUM_T_MAX = 10.0
PENDULUM_DT = 1e-3
PENDULUM_SAMPLE_EVERY = 0.25
PENDULUM_NOISE = 0.08


@dataclass
class NormalizationRecord:
    """Per-channel affine statistics sufficient to invert a normalization.

    Stats are broadcastable against [batch, N, d]; generators that rescale
    per trajectory store them with a leading batch axis.
    """
    kind: str
    offset: np.ndarray  # subtracted first (min or mean)
    scale: np.ndarray   # divided second (max-min or std)

    def to_jsonable(self) -> dict:
        return {
            "kind": self.kind,
            "offset": self.offset.tolist(),
            "scale": self.scale.tolist(),
            "shape": list(self.offset.shape),
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "NormalizationRecord":
        shape = tuple(obj["shape"])
        return cls(
            kind=obj["kind"],
            offset=np.asarray(obj["offset"], dtype=np.float64).reshape(shape),
            scale=np.asarray(obj["scale"], dtype=np.float64).reshape(shape),
        )


@dataclass
class SequenceBatch:
    """Real-valued sequences [batch, N, d] with optional mask and intervals."""
    values: np.ndarray
    mask: np.ndarray | None = None        # True = observed
    intervals: np.ndarray | None = None   # positive sampling gaps
    norm: NormalizationRecord | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ValueError(f"values must be [batch, N, d], got shape {self.values.shape}")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.values.shape[:2]:
                raise ValueError("mask must be [batch, N]")
            if not self.mask.any(axis=1).all():
                raise ValueError("every sequence needs at least one observed step")
        if self.intervals is not None:
            self.intervals = np.asarray(self.intervals, dtype=np.float32)
            if self.intervals.shape != self.values.shape[:2]:
                raise ValueError("intervals must be [batch, N]")
            if (self.intervals <= 0).any():
                raise ValueError("intervals must be positive")

    @property
    def num_sequences(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


# ---------------------------------------------------------------------------
# generators

_CHECKER_GRID = 4  # 4x4 cells, alternating parity allowed


def checkerboard_in_support(points: np.ndarray, scale: float = 4.5) -> np.ndarray:
    """Membership in the allowed (even-parity) squares of the checkerboard."""
    points = np.asarray(points, dtype=np.float64)
    side = 2.0 * scale / _CHECKER_GRID
    cells = np.floor((points + scale) / side).astype(int)
    cells = np.clip(cells, 0, _CHECKER_GRID - 1)  # boundary points belong to edge cells
    inside = (np.abs(points) <= scale).all(axis=-1)
    return inside & (cells.sum(axis=-1) % 2 == 0)


def gen_checkerboard(n: int, scale: float = 4.5, rng: np.random.Generator | None = None) -> np.ndarray:
    """Uniform samples on the alternating squares of [-scale, scale]^2."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng or np.random.default_rng()
    cells = np.array(
        [(i, j) for i in range(_CHECKER_GRID) for j in range(_CHECKER_GRID) if (i + j) % 2 == 0]
    )
    idx = rng.integers(0, len(cells), n)
    side = 2.0 * scale / _CHECKER_GRID
    return (-scale + (cells[idx] + rng.uniform(0.0, 1.0, (n, 2))) * side).astype(np.float64)


def checkerboard_as_sequences(points: np.ndarray) -> SequenceBatch:
    """View 2-D points as sequences of length 2 with a single channel."""
    return SequenceBatch(values=np.asarray(points)[:, :, None])


def sine_parameters(n: int, channels: int, rng: np.random.Generator):
    """Frequencies w ~ U[0,1] and phases ~ U[-pi,pi], one pair per channel per sequence."""
    omega = rng.uniform(0.0, 1.0, (n, 1, channels))
    phase = rng.uniform(-np.pi, np.pi, (n, 1, channels))
    return omega, phase


def gen_sines(n: int, channels: int = 5, length: int = 24,
              rng: np.random.Generator | None = None) -> SequenceBatch:
    """Sinusoids sin(2*pi*w*step + phase) with independent per-channel parameters."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng or np.random.default_rng()
    omega, phase = sine_parameters(n, channels, rng)
    steps = np.arange(length).reshape(1, length, 1)
    return SequenceBatch(values=np.sin(2.0 * np.pi * omega * steps + phase))


def simulate_pendulum(theta0: np.ndarray, t_max: float = PENDULUM_T_MAX,
                      dt: float = PENDULUM_DT,
                      sample_every: float = PENDULUM_SAMPLE_EVERY,
                      gravity: float = PENDULUM_GRAVITY) -> np.ndarray:
    """Integrate theta'' = -gravity*sin(theta), theta'(0)=0, with fixed-step RK4.

    Returns noiseless samples [num, num_samples, 2] of (theta, theta_dot) on
    the grid 0, sample_every, ..., t_max.
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=np.float64))
    stride = int(round(sample_every / dt))
    total = int(round(t_max / dt))
    state = np.stack([theta0, np.zeros_like(theta0)], axis=1)

    def deriv(s):
        return np.stack([s[:, 1], -gravity * np.sin(s[:, 0])], axis=1)

    samples = [state.copy()]
    for k in range(1, total + 1):
        k1 = deriv(state)
        k2 = deriv(state + 0.5 * dt * k1)
        k3 = deriv(state + 0.5 * dt * k2)
        k4 = deriv(state + dt * k3)
        state = state + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if k % stride == 0:
            samples.append(state.copy())
    return np.stack(samples, axis=1)


def gen_pendulum(n: int, rng: np.random.Generator | None = None,
                 noise: float = PENDULUM_NOISE) -> SequenceBatch:
    """Noisy pendulum trajectories, each rescaled per channel to [0, 1]."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng or np.random.default_rng()
    theta0 = rng.uniform(0.5, 2.7, n)
    traj = simulate_pendulum(theta0)
    traj = traj + rng.normal(0.0, noise, traj.shape)
    lo = traj.min(axis=1, keepdims=True)
    hi = traj.max(axis=1, keepdims=True)
    record = NormalizationRecord(kind=MINMAX_01, offset=lo, scale=hi - lo)
    return SequenceBatch(values=(traj - lo) / (hi - lo), norm=record)


# ---------------------------------------------------------------------------
# sequence transforms

def delay_window_count(length: int, a: int, b: int) -> int:
    if a < 1 or b < 0:
        raise ValueError("need delay a >= 1 and window b >= 0")
    if length < b + 1:
        raise ValueError(f"sequence of length {length} too short for window b={b}")
    return (length - 1 - b) // a + 1


def time_delay(x: np.ndarray, a: int, b: int) -> np.ndarray:
    """Stack delayed windows: row i is concat(x[a*i], ..., x[a*i + b]).

    Lossless (up to the covered prefix) whenever a <= b + 1, since then
    consecutive windows overlap or abut.
    """
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError("x must be [N, d]")
    count = delay_window_count(x.shape[0], a, b)
    return np.stack([x[a * i: a * i + b + 1].reshape(-1) for i in range(count)])


def inverse_time_delay(delayed: np.ndarray, a: int, b: int, channels: int) -> np.ndarray:
    """Reconstruct the covered prefix of the original sequence.

    Overlapping window entries are averaged, which is exact when the windows
    came from a consistent sequence.  The result has a*(count-1) + b + 1
    steps; trailing steps of the original that no window reached cannot be
    recovered.
    """
    delayed = np.asarray(delayed, dtype=np.float64)
    count = delayed.shape[0]
    windows = delayed.reshape(count, b + 1, channels)
    covered = a * (count - 1) + b + 1
    acc = np.zeros((covered, channels))
    hits = np.zeros(covered)
    for i in range(count):
        acc[a * i: a * i + b + 1] += windows[i]
        hits[a * i: a * i + b + 1] += 1.0
    if (hits == 0).any():
        raise ValueError(f"gaps in coverage (a={a} > b+1={b + 1}); cannot reconstruct")
    return acc / hits[:, None]


def drop_irregular(batch: SequenceBatch, p: float,
                   rng: np.random.Generator | None = None) -> SequenceBatch:
    """Mark interior steps unobserved independently with probability p.

    First and last steps stay observed so interpolation has anchors.
    """
    if not (0.0 <= p < 1.0):
        raise ValueError("drop fraction must be in [0, 1)")
    rng = rng or np.random.default_rng()
    num, length = batch.values.shape[:2]
    mask = rng.uniform(0.0, 1.0, (num, length)) >= p
    mask[:, 0] = True
    mask[:, -1] = True
    return SequenceBatch(values=batch.values.copy(), mask=mask, norm=batch.norm)


def interpolate_missing(batch: SequenceBatch) -> SequenceBatch:
    """Fill unobserved steps by per-channel linear interpolation."""
    if batch.mask is None:
        return SequenceBatch(values=batch.values.copy(), norm=batch.norm)
    if not (batch.mask[:, 0].all() and batch.mask[:, -1].all()):
        raise ValueError("interpolation needs observed endpoints")
    values = batch.values.astype(np.float64).copy()
    grid = np.arange(batch.length)
    for i in range(batch.num_sequences):
        obs = np.flatnonzero(batch.mask[i])
        if obs.size == batch.length:
            continue
        for c in range(batch.channels):
            values[i, :, c] = np.interp(grid, obs, values[i, obs, c])
    return SequenceBatch(values=values, norm=batch.norm)


def intervals_as_channel(batch: SequenceBatch) -> SequenceBatch:
    """Compact to observed steps and append the sampling gap as a channel.

    The gap channel holds the distance to the previous observed step, with 0
    at the first observed step.  Sequences are truncated to the shortest
    compacted length so the batch stays rectangular.
    """
    if batch.mask is None:
        raise ValueError("intervals_as_channel needs a mask")
    counts = batch.mask.sum(axis=1)
    keep = int(counts.min())
    out = np.zeros((batch.num_sequences, keep, batch.channels + 1), dtype=np.float64)
    for i in range(batch.num_sequences):
        obs = np.flatnonzero(batch.mask[i])[:keep]
        out[i, :, :-1] = batch.values[i, obs]
        out[i, 1:, -1] = np.diff(obs)
    return SequenceBatch(values=out, norm=batch.norm)


# ---------------------------------------------------------------------------
# normalization

def normalize(batch: SequenceBatch, kind: str) -> tuple[SequenceBatch, NormalizationRecord]:
    """Per-channel affine normalization pooled over batch and time."""
    values = batch.values.astype(np.float64)
    if kind == MINMAX_01:
        lo = values.min(axis=(0, 1), keepdims=True)
        hi = values.max(axis=(0, 1), keepdims=True)
        if np.any(hi - lo == 0):
            raise ValueError("degenerate channel (max == min) under min-max normalization")
        record = NormalizationRecord(MINMAX_01, offset=lo, scale=hi - lo)
    elif kind == ZSCORE:
        mean = values.mean(axis=(0, 1), keepdims=True)
        std = values.std(axis=(0, 1), keepdims=True)
        if np.any(std == 0):
            raise ValueError("degenerate channel (zero variance) under z-score normalization")
        record = NormalizationRecord(ZSCORE, offset=mean, scale=std)
    else:
        raise ValueError(f"unknown normalization kind {kind!r}")
    out = SequenceBatch(
        values=(values - record.offset) / record.scale,
        mask=None if batch.mask is None else batch.mask.copy(),
        intervals=None if batch.intervals is None else batch.intervals.copy(),
        norm=record,
    )
    return out, record


def denormalize(values: np.ndarray, record: NormalizationRecord) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * record.scale + record.offset


# ---------------------------------------------------------------------------
# delimited-text ingestion

def sliding_windows(series: np.ndarray, window: int, stride: int = 1) -> np.ndarray:
    """Cut [T, d] into overlapping windows [num, window, d]."""
    series = np.asarray(series)
    if series.ndim != 2:
        raise ValueError("series must be [T, d]")
    if series.shape[0] < window:
        raise ValueError(f"series of length {series.shape[0]} shorter than window {window}")
    starts = range(0, series.shape[0] - window + 1, stride)
    return np.stack([series[s: s + window] for s in starts])


def load_delimited(path, window: int, stride: int = 1, delimiter: str | None = None,
                   normalize_kind: str | None = MINMAX_01) -> SequenceBatch:
    """Read one-channel-per-column delimited text and cut sliding windows.

    A non-numeric first row is treated as a header and skipped.  The
    benchmark-lineage min-max normalization is applied unless disabled.
    """
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
    sep = delimiter if delimiter is not None else ("," if "," in first else None)
    try:
        [float(tok) for tok in first.replace(",", " ").split()]
        skip = 0
    except ValueError:
        skip = 1
    raw = np.loadtxt(path, delimiter=sep, skiprows=skip, ndmin=2)
    batch = SequenceBatch(values=sliding_windows(raw, window, stride))
    if normalize_kind is not None:
        batch, _ = normalize(batch, normalize_kind)
    return batch
