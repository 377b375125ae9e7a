"""Monte Carlo shelving-readout shots with reproducible per-shot streams.

Each shot draws its randomness from a counter-based generator keyed by
(seed, shot index), so ``simulate_shot(i)`` reproduces row ``i`` of a batch
bit for bit, batches may be sharded across threads without changing any
outcome, and no generator state is carried between shots.

A shot is simulated as: (1) flip the prepared state with the corresponding
preparation error probability, (2) if the effective state is dark, draw the
in-window decay instant under the configured law, (3) draw the total photon
count from a Poisson at the window's integrated rate, and, in trace mode,
(4) place the photons by inverting the cumulative rate profile and sorting.
Step 3 makes the simulated counts marginalize exactly to the closed-form
count distributions when the decay instant is uniform in the window.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np

from ._philox import philox4x64, to_uniform
from .photon_statistics import (
    ZERO_ERRORS,
    DetectionModel,
    ErrorRates,
    poisson_pmf,
)

__all__ = [
    "Prepared",
    "DecayTimeLaw",
    "SimConfig",
    "PhotonTrace",
    "TraceBatch",
    "CountHistogram",
    "simulate_shot",
    "simulate_counts",
    "simulate_histogram",
    "simulate_traces",
    "write_histogram_csv",
    "read_histogram_csv",
    "write_traces_csv",
    "read_traces_csv",
]

# Shots processed per vectorized pass; trace mode uses a smaller chunk since
# each bright shot carries ~mean_bright events.
_COUNT_CHUNK = 1 << 20
_TRACE_CHUNK = 1 << 17


class Prepared(Enum):
    """Intended qubit state for a shot: DOWN fluoresces, UP is shelved."""

    DOWN = "down"
    UP = "up"


class DecayTimeLaw(Enum):
    """Distribution of the dark-state decay instant within the window.

    UNIFORM_FIRST_ORDER draws a decay with probability ``t_det/lifetime`` at
    an instant uniform over the window -- the same first-order treatment as
    the closed-form count distributions, so simulated counts match them
    exactly.  EXPONENTIAL draws the physical exponential decay time and
    truncates it to the window.
    """

    UNIFORM_FIRST_ORDER = "uniform_first_order"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class SimConfig:
    """Everything one simulation needs: physics, errors, size, and seed."""

    model: DetectionModel
    errors: ErrorRates = ZERO_ERRORS
    shots: int = 1
    seed: int = 0
    decay_time_law: DecayTimeLaw = DecayTimeLaw.UNIFORM_FIRST_ORDER

    def __post_init__(self) -> None:
        if self.shots < 1 or int(self.shots) != self.shots:
            raise ValueError(f"shots must be a positive integer, got {self.shots}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.errors.eps_up_tot + self.model.decay_fraction > 1.0:
            raise ValueError("eps_up_tot + t_det/lifetime must not exceed 1")


@dataclass(frozen=True)
class PhotonTrace:
    """Sorted photon arrival times (seconds) of one detection window."""

    timestamps: np.ndarray
    t_det: float

    def __post_init__(self) -> None:
        times = np.asarray(self.timestamps, dtype=float)
        if times.ndim != 1:
            raise ValueError("timestamps must be a 1-D array")
        if times.size and (times.min() < 0.0 or times.max() > self.t_det):
            raise ValueError("timestamps must lie within [0, t_det]")
        if np.any(np.diff(times) < 0.0):
            raise ValueError("timestamps must be sorted")
        object.__setattr__(self, "timestamps", times)

    @property
    def count(self) -> int:
        return self.timestamps.size


@dataclass(frozen=True)
class TraceBatch:
    """Arrival times of many shots, concatenated shot-major.

    ``timestamps[offsets[i]:offsets[i+1]]`` are the (sorted) times of shot
    ``i``.  Iterating yields ``PhotonTrace`` views in shot order.
    """

    timestamps: np.ndarray
    offsets: np.ndarray
    t_det: float

    def __post_init__(self) -> None:
        offsets = np.asarray(self.offsets, dtype=np.int64)
        times = np.asarray(self.timestamps, dtype=float)
        if offsets.ndim != 1 or offsets.size < 1 or offsets[0] != 0:
            raise ValueError("offsets must be 1-D and start at 0")
        if np.any(np.diff(offsets) < 0) or offsets[-1] != times.size:
            raise ValueError("offsets must be non-decreasing and end at len(timestamps)")
        object.__setattr__(self, "timestamps", times)
        object.__setattr__(self, "offsets", offsets)

    @property
    def n_shots(self) -> int:
        return self.offsets.size - 1

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def trace(self, i: int) -> PhotonTrace:
        return PhotonTrace(
            self.timestamps[self.offsets[i] : self.offsets[i + 1]], self.t_det
        )

    def __len__(self) -> int:
        return self.n_shots

    def __iter__(self):
        return (self.trace(i) for i in range(self.n_shots))


@dataclass(frozen=True)
class CountHistogram:
    """Photon-count histogram: ``counts_per_bin[n]`` shots saw ``n`` photons."""

    counts_per_bin: np.ndarray
    total_shots: int

    def __post_init__(self) -> None:
        bins = np.asarray(self.counts_per_bin, dtype=np.int64)
        if bins.ndim != 1 or bins.size == 0 or np.any(bins < 0):
            raise ValueError("counts_per_bin must be a 1-D array of counts >= 0")
        if int(bins.sum()) != self.total_shots:
            raise ValueError("counts_per_bin must sum to total_shots")
        if self.total_shots < 1:
            raise ValueError("histogram must contain at least one shot")
        object.__setattr__(self, "counts_per_bin", bins)

    @classmethod
    def from_counts(cls, counts: np.ndarray, min_length: int = 1) -> CountHistogram:
        counts = np.asarray(counts)
        return cls(np.bincount(counts, minlength=min_length), int(counts.size))

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts_per_bin / self.total_shots


# ---------------------------------------------------------------------------
# Per-shot randomness

# Within a shot, 256-bit block b supplies uniforms 4b..4b+3 of the shot's
# stream.  Block 0 is reserved for the four state draws (flip, decay, decay
# position, total count); blocks 1.. feed arrival-time placement.


def _shot_uniforms(seed: int, shot_indices: np.ndarray):
    w = philox4x64(0, 0, 0, shot_indices, key=seed)
    return tuple(to_uniform(x) for x in w)


def _event_uniforms(seed: int, shot_indices: np.ndarray, n_events: np.ndarray) -> np.ndarray:
    """First ``n_events[i]`` uniforms of each shot's event stream, flattened."""
    n_events = np.asarray(n_events, dtype=np.int64)
    n_blocks = (n_events + 3) // 4
    total_blocks = int(n_blocks.sum())
    if total_blocks == 0:
        return np.empty(0)
    block_shot = np.repeat(shot_indices, n_blocks)
    starts = np.concatenate([[0], np.cumsum(n_blocks)[:-1]])
    block_no = np.arange(total_blocks, dtype=np.int64) - np.repeat(starts, n_blocks) + 1
    words = philox4x64(block_no.astype(np.uint64), 0, 0, block_shot, key=seed)
    u = np.stack([to_uniform(w) for w in words], axis=1).reshape(-1)
    lane_counts = 4 * n_blocks
    lane_starts = np.concatenate([[0], np.cumsum(lane_counts)[:-1]])
    within = np.arange(u.size, dtype=np.int64) - np.repeat(lane_starts, lane_counts)
    return u[within < np.repeat(n_events, lane_counts)]


def _window_profile(prepared: Prepared, config: SimConfig, shot_indices: np.ndarray):
    """Rate-switch instant T and window mean for each shot.

    Every window is modeled as dark rate on [0, T) and bright rate on
    [T, t_det]: an effectively bright shot has T = 0, an undecayed dark shot
    T = t_det.  Returns ``(T, mu, u_count, effective_dark, decayed)`` where
    ``u_count`` is the reserved uniform for the total-count draw.
    """
    u_flip, u_decay, u_pos, u_count = _shot_uniforms(config.seed, shot_indices)
    model = config.model
    t_det = model.t_det
    eps = (
        config.errors.eps_down_tot
        if prepared is Prepared.DOWN
        else config.errors.eps_up_tot
    )
    flipped = u_flip < eps
    effective_dark = flipped if prepared is Prepared.DOWN else ~flipped
    if config.decay_time_law is DecayTimeLaw.UNIFORM_FIRST_ORDER:
        decayed = u_decay < model.decay_fraction
        t_switch = np.where(decayed, u_pos * t_det, t_det)
    else:
        t_raw = -model.lifetime * np.log1p(-u_decay)
        decayed = t_raw < t_det
        t_switch = np.minimum(t_raw, t_det)
    t_switch = np.where(effective_dark, t_switch, 0.0)
    decayed = decayed & effective_dark
    mu = model.rate_dark * t_switch + model.rate_bright * (t_det - t_switch)
    return t_switch, mu, u_count, effective_dark, decayed


def _sampling_support_max(mean: float) -> int:
    # Wider than the analytic support: a quantile draw must never fall off
    # the table (tail beyond 16 sigma is ~1e-40 of the mass).
    return int(np.ceil(mean + 16.0 * np.sqrt(mean))) + 20


def _poisson_quantile(u: np.ndarray, mean: np.ndarray) -> np.ndarray:
    """Exact inverse-CDF Poisson draw, elementwise over (u, mean).

    The quantile is the count of CDF values <= u.  Shots sharing a mean use
    one table with a binary search; heterogeneous means (in-window decays)
    get per-row tables.  Both paths compare the same floating-point CDF
    values, so the result does not depend on which path ran.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    out = np.empty(u.shape, dtype=np.int64)
    unique, inverse, multiplicity = np.unique(
        mean, return_inverse=True, return_counts=True
    )
    if unique.size <= 32:
        tabled = np.ones(unique.size, dtype=bool)
    else:
        # Shared means (undecayed shots) amortize one table over many rows;
        # the long tail of distinct in-window decay means is batched row-wise.
        tabled = multiplicity >= 32
    for g in np.flatnonzero(tabled):
        sel = inverse == g
        m = unique[g]
        cdf = np.cumsum(poisson_pmf(np.arange(_sampling_support_max(m) + 1), m))
        out[sel] = np.searchsorted(cdf, u[sel], side="right")
    rare = ~tabled[inverse]
    if not np.any(rare):
        return out
    idx = np.flatnonzero(rare)
    u_rare, mean_rare = u[idx], mean[idx]
    width = _sampling_support_max(float(mean_rare.max())) + 1
    chunk = max(1, 4_000_000 // width)
    grid = np.arange(width)
    for lo in range(0, idx.size, chunk):
        hi = min(lo + chunk, idx.size)
        mean_c = mean_rare[lo:hi]
        cdf = np.cumsum(poisson_pmf(grid[None, :], mean_c[:, None]), axis=1)
        drawn = (cdf <= u_rare[lo:hi, None]).sum(axis=1)
        own = np.ceil(mean_c + 16.0 * np.sqrt(mean_c)).astype(np.int64) + 20 + 1
        out[idx[lo:hi]] = np.minimum(drawn, own)
    return out


def _event_times(u: np.ndarray, t_switch: np.ndarray, mu: np.ndarray, model: DetectionModel):
    """Map event-stream uniforms through the window's cumulative rate."""
    mass = u * mu
    mass_dark = model.rate_dark * t_switch
    with np.errstate(divide="ignore", invalid="ignore"):
        before = mass / model.rate_dark
    after = t_switch + (mass - mass_dark) / model.rate_bright
    return np.where(mass < mass_dark, before, after)


def _shard_counts(prepared: Prepared, config: SimConfig, lo: int, hi: int, out: np.ndarray):
    for start in range(lo, hi, _COUNT_CHUNK):
        stop = min(start + _COUNT_CHUNK, hi)
        ids = np.arange(start, stop, dtype=np.uint64)
        _, mu, u_count, _, _ = _window_profile(prepared, config, ids)
        out[start:stop] = _poisson_quantile(u_count, mu)


def simulate_counts(prepared: Prepared, config: SimConfig, threads: int = 1) -> np.ndarray:
    """Photon counts of shots ``0..shots-1``, independent of ``threads``."""
    if threads < 1:
        raise ValueError("threads must be >= 1")
    out = np.empty(config.shots, dtype=np.int64)
    if threads == 1 or config.shots < 2 * _COUNT_CHUNK:
        _shard_counts(prepared, config, 0, config.shots, out)
        return out
    bounds = np.linspace(0, config.shots, threads + 1).astype(int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [
            pool.submit(_shard_counts, prepared, config, int(a), int(b), out)
            for a, b in zip(bounds[:-1], bounds[1:])
            if b > a
        ]
        for f in futures:
            f.result()
    return out


def simulate_histogram(prepared: Prepared, config: SimConfig, threads: int = 1) -> CountHistogram:
    """Histogram of simulated photon counts for one prepared state."""
    return CountHistogram.from_counts(simulate_counts(prepared, config, threads))


def _shard_traces(prepared: Prepared, config: SimConfig, lo: int, hi: int):
    times_parts = []
    counts_parts = []
    for start in range(lo, hi, _TRACE_CHUNK):
        stop = min(start + _TRACE_CHUNK, hi)
        ids = np.arange(start, stop, dtype=np.uint64)
        t_switch, mu, u_count, _, _ = _window_profile(prepared, config, ids)
        n = _poisson_quantile(u_count, mu)
        u_ev = _event_uniforms(config.seed, ids, n)
        t_ev = _event_times(u_ev, np.repeat(t_switch, n), np.repeat(mu, n), config.model)
        shot_ev = np.repeat(np.arange(n.size), n)
        order = np.lexsort((t_ev, shot_ev))
        times_parts.append(t_ev[order])
        counts_parts.append(n)
    return np.concatenate(times_parts), np.concatenate(counts_parts)


def simulate_traces(prepared: Prepared, config: SimConfig, threads: int = 1) -> TraceBatch:
    """Time-stamped photon records for every shot, as a ``TraceBatch``.

    The total count of each shot is drawn exactly as in count mode (same
    reserved uniform), so trace counts agree shot-by-shot with
    ``simulate_counts``; the count is then distributed over the window by
    inverse-CDF placement of each photon.
    """
    if threads < 1:
        raise ValueError("threads must be >= 1")
    if threads == 1 or config.shots < 2 * _TRACE_CHUNK:
        shards = [_shard_traces(prepared, config, 0, config.shots)]
    else:
        bounds = np.linspace(0, config.shots, threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_shard_traces, prepared, config, int(a), int(b))
                for a, b in zip(bounds[:-1], bounds[1:])
                if b > a
            ]
            shards = [f.result() for f in futures]
    times = np.concatenate([s[0] for s in shards])
    counts = np.concatenate([s[1] for s in shards])
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return TraceBatch(times, offsets, config.model.t_det)


def simulate_shot(prepared: Prepared, config: SimConfig, shot_index: int) -> PhotonTrace:
    """Regenerate the full photon record of one shot of a batch.

    Bit-identical to ``simulate_traces(...).trace(shot_index)`` for the same
    configuration: the per-shot counter keying makes every shot a pure
    function of (seed, shot index).
    """
    if not 0 <= shot_index < config.shots:
        raise ValueError(f"shot_index must lie in [0, {config.shots}), got {shot_index}")
    ids = np.array([shot_index], dtype=np.uint64)
    t_switch, mu, u_count, _, _ = _window_profile(prepared, config, ids)
    n = _poisson_quantile(u_count, mu)
    u_ev = _event_uniforms(config.seed, ids, n)
    t_ev = _event_times(u_ev, np.repeat(t_switch, n), np.repeat(mu, n), config.model)
    return PhotonTrace(np.sort(t_ev), config.model.t_det)


# ---------------------------------------------------------------------------
# CSV interchange


def write_histogram_csv(
    hist: CountHistogram, path, metadata_lines: Iterable[str] = ()
) -> None:
    """Write ``n,count,frequency`` rows, one per bin including empty bins.

    ``metadata_lines`` become ``#``-prefixed comments that readers skip.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        for line in metadata_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["n", "count", "frequency"])
        for n, c in enumerate(hist.counts_per_bin):
            writer.writerow([n, int(c), repr(int(c) / hist.total_shots)])


def read_histogram_csv(path) -> CountHistogram:
    """Read a histogram written by ``write_histogram_csv``."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        if header != ["n", "count", "frequency"]:
            raise ValueError(f"unexpected histogram header: {header}")
        rows = [(int(n), int(c), float(f)) for n, c, f in reader]
    if not rows:
        raise ValueError("empty histogram file")
    size = max(r[0] for r in rows) + 1
    bins = np.zeros(size, dtype=np.int64)
    for n, c, _ in rows:
        if n < 0:
            raise ValueError("histogram bins must be non-negative counts")
        bins[n] += c
    total = int(bins.sum())
    for n, c, f in rows:
        if total and abs(f - c / total) > 1e-9:
            raise ValueError(f"frequency column inconsistent at n={n}")
    return CountHistogram(bins, total)


def write_traces_csv(
    batch: TraceBatch, path, metadata_lines: Iterable[str] = ()
) -> None:
    """Write ``shot,timestamp_us`` rows; shots without photons emit no rows."""
    path = Path(path)
    shot_ids = np.repeat(np.arange(batch.n_shots), batch.counts)
    with path.open("w", newline="") as fh:
        for line in metadata_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["shot", "timestamp_us"])
        for s, t in zip(shot_ids, batch.timestamps):
            writer.writerow([int(s), repr(float(t) * 1e6)])


def read_traces_csv(path, t_det: float, n_shots: int | None = None) -> TraceBatch:
    """Read traces written by ``write_traces_csv``.

    The CSV carries no window length and no rows for photonless shots, so
    ``t_det`` must be supplied and ``n_shots`` should be when trailing shots
    may be empty (default: highest shot index + 1).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        if header != ["shot", "timestamp_us"]:
            raise ValueError(f"unexpected trace header: {header}")
        rows = [(int(s), float(t)) for s, t in reader]
    if n_shots is None:
        n_shots = (max(r[0] for r in rows) + 1) if rows else 0
    shots = np.array([r[0] for r in rows], dtype=np.int64)
    times = np.array([r[1] for r in rows], dtype=float) * 1e-6
    if rows and (shots.min() < 0 or shots.max() >= n_shots):
        raise ValueError("shot indices out of range")
    order = np.lexsort((times, shots))
    counts = np.bincount(shots, minlength=n_shots) if rows else np.zeros(n_shots, np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return TraceBatch(times[order], offsets, t_det)
