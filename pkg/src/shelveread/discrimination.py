"""State discrimination for shelving readout: thresholds and arrival times.

Two classifiers are provided.  The simple one compares the photon count of a
window against an integer threshold ``n_th`` (counts above the threshold are
called bright).  Its readout error is the average of the two misclassification
probabilities and can be minimized over the (window length, threshold) grid.

The time-resolved classifier uses the full list of photon arrival times.  It
compares the likelihood of the record under (a) fluorescence at the bright
rate for the whole window against (b) a shelved qubit that may decay at an
unknown instant T, marginalized over T with the first-order (flat) decay
prior.  Between consecutive arrivals the likelihood ratio is a pure
exponential in T, so the marginalization integral is evaluated segment by
segment in closed form rather than by quadrature.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.special import logsumexp

from .photon_statistics import (
    CountPMF,
    DetectionModel,
    ErrorRates,
    bright_pdf,
    dark_pdf,
)

__all__ = [
    "State",
    "ThresholdPolicy",
    "ErrorReport",
    "OptimizationGrid",
    "OptimizationResult",
    "classify",
    "mean_error",
    "total_error",
    "optimize",
    "classify_time_resolved",
    "classify_traces",
    "write_error_surface_csv",
    "read_error_surface_csv",
]


class State(Enum):
    """Outcome of one readout: fluorescing or shelved."""

    BRIGHT = "bright"
    DARK = "dark"


@dataclass(frozen=True)
class ThresholdPolicy:
    """A count threshold together with the window it was chosen for."""

    n_th: int
    t_det: float

    def __post_init__(self) -> None:
        if self.n_th < 0 or int(self.n_th) != self.n_th:
            raise ValueError(f"n_th must be a non-negative integer, got {self.n_th}")
        if not self.t_det > 0.0:
            raise ValueError(f"t_det must be positive, got {self.t_det}")


@dataclass(frozen=True)
class ErrorReport:
    """Misclassification probabilities of a threshold policy.

    ``eps_bright`` is the probability a bright qubit is read as dark,
    ``eps_dark`` the reverse; ``eps_mean`` their average.  ``eps_total_mean``
    adds the mean state-preparation/shelving error on top.
    """

    eps_bright: float
    eps_dark: float
    eps_mean: float
    eps_total_mean: float

    def __post_init__(self) -> None:
        for name in ("eps_bright", "eps_dark", "eps_mean", "eps_total_mean"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.eps_mean != 0.5 * (self.eps_bright + self.eps_dark):
            raise ValueError("eps_mean must equal (eps_bright + eps_dark)/2")


@dataclass(frozen=True)
class OptimizationGrid:
    """Strictly increasing (window, threshold) axes for the error surface."""

    t_values: np.ndarray
    n_values: np.ndarray

    def __post_init__(self) -> None:
        t_values = np.asarray(self.t_values, dtype=float)
        n_values = np.asarray(self.n_values, dtype=np.int64)
        if t_values.ndim != 1 or t_values.size == 0 or np.any(t_values <= 0.0):
            raise ValueError("t_values must be a non-empty 1-D array of positive times")
        if np.any(np.diff(t_values) <= 0.0):
            raise ValueError("t_values must be strictly increasing")
        if n_values.ndim != 1 or n_values.size == 0 or np.any(n_values < 0):
            raise ValueError("n_values must be a non-empty 1-D array of thresholds >= 0")
        if np.any(np.diff(n_values) <= 0):
            raise ValueError("n_values must be strictly increasing")
        object.__setattr__(self, "t_values", t_values)
        object.__setattr__(self, "n_values", n_values)

    @classmethod
    def default(cls) -> OptimizationGrid:
        """Window 50-600 us in 5 us steps, thresholds 0-30."""
        return cls(np.arange(50, 601, 5) * 1e-6, np.arange(0, 31))


def classify(count: int, policy: ThresholdPolicy) -> State:
    """Threshold classification: counts above ``n_th`` are bright."""
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    return State.BRIGHT if count > policy.n_th else State.DARK


def _mean_error_from_pdfs(bright: CountPMF, dark: CountPMF, n_th: int) -> tuple[float, float]:
    eps_b = bright.cdf(n_th)
    eps_d = dark.tail(n_th)
    return eps_b, eps_d


def mean_error(
    model: DetectionModel, n_th: int, errors: ErrorRates | None = None
) -> ErrorReport:
    """Average readout error of threshold ``n_th`` under ``model``.

    Uses the ideal-preparation count distributions; if ``errors`` is given,
    ``eps_total_mean`` additionally includes the mean preparation error
    (preparation mistakes flip the qubit before the window, so they add to
    the detection error to first order).
    """
    if n_th < 0 or int(n_th) != n_th:
        raise ValueError(f"n_th must be a non-negative integer, got {n_th}")
    eps_b, eps_d = _mean_error_from_pdfs(bright_pdf(model), dark_pdf(model), int(n_th))
    eps_mean = 0.5 * (eps_b + eps_d)
    extra = errors.mean if errors is not None else 0.0
    return ErrorReport(eps_b, eps_d, eps_mean, eps_mean + extra)


def total_error(eps_mean: float, errors: ErrorRates) -> float:
    """Mean readout error including preparation/shelving errors.

    Preparation mistakes flip the qubit before the window, so to first order
    they add their mean on top of the detection error.
    """
    if not 0.0 <= eps_mean <= 1.0:
        raise ValueError(f"eps_mean must lie in [0, 1], got {eps_mean}")
    return eps_mean + errors.mean


@dataclass(frozen=True)
class OptimizationResult:
    """Grid minimum of the mean readout error.

    ``surface[i, j]`` is the mean error at window ``grid.t_values[i]`` and
    threshold ``grid.n_values[j]``; (``t_det``, ``n_th``) is the grid argmin
    with ties broken toward the smallest window, then the smallest
    threshold.
    """

    t_det: float
    n_th: int
    eps_mean: float
    grid: OptimizationGrid
    surface: np.ndarray

    @property
    def policy(self) -> ThresholdPolicy:
        return ThresholdPolicy(self.n_th, self.t_det)


def optimize(
    rate_bright: float,
    rate_dark: float,
    lifetime: float,
    grid: OptimizationGrid | None = None,
) -> OptimizationResult:
    """Minimize the mean threshold-readout error over a (t_det, n_th) grid.

    Longer windows separate the bright and dark count peaks but expose the
    shelved state to more decay, so the error surface has an interior
    minimum.  The scan is exhaustive; the full surface is returned alongside
    the optimum.
    """
    grid = OptimizationGrid.default() if grid is None else grid
    t_values, n_values = grid.t_values, grid.n_values
    surface = np.empty((t_values.size, n_values.size))
    for i, t in enumerate(t_values):
        model = DetectionModel(rate_bright, rate_dark, lifetime, float(t))
        cdf_b = np.cumsum(bright_pdf(model).probs)
        cdf_d = np.cumsum(dark_pdf(model).probs)
        idx = np.minimum(n_values, cdf_b.size - 1)
        surface[i] = 0.5 * (cdf_b[idx] + (1.0 - cdf_d[idx]))

    # Row-major argmin: first minimum in t-then-n order implements the
    # smallest-t, then smallest-n tie break.
    flat = int(np.argmin(surface))
    i, j = divmod(flat, n_values.size)
    return OptimizationResult(
        t_det=float(t_values[i]),
        n_th=int(n_values[j]),
        eps_mean=float(surface[i, j]),
        grid=grid,
        surface=surface,
    )


# ---------------------------------------------------------------------------
# Time-resolved classification


def _log_expm1_over_x(x: np.ndarray) -> np.ndarray:
    """log(expm1(x)/x), stable for any sign and magnitude; limit 0 at x=0."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-4
    pos = x >= 1e-4
    neg = x <= -1e-4
    # expm1(x)/x = 1 + x/2 + x^2/6 + O(x^3)
    xs = x[small]
    out[small] = np.log1p(xs * (3.0 + xs) / 6.0)
    xp = x[pos]
    out[pos] = xp + np.log1p(-np.exp(-xp)) - np.log(xp)
    xn = x[neg]
    out[neg] = np.log(-np.expm1(xn)) - np.log(-xn)
    return out


def _log_ratio_dark_bright(
    flat_times: np.ndarray,
    offsets: np.ndarray,
    model: DetectionModel,
    chunk_elems: int = 4_000_000,
) -> np.ndarray:
    """log[L(dark, decay marginalized) / L(bright)] for each trace.

    ``flat_times`` holds the arrival times of all traces concatenated;
    ``offsets[i]:offsets[i+1]`` slices trace ``i``.  Within a trace the
    times must be sorted.  Works on zero-padded row blocks so each chunk is
    a single vectorized log-sum-exp.
    """
    n_traces = offsets.size - 1
    lens = np.diff(offsets)
    t_det = model.t_det
    log_rr = np.log(model.rate_dark / model.rate_bright) if model.rate_dark > 0 else -np.inf
    a = model.rate_bright - model.rate_dark - 1.0 / model.lifetime

    def _k_log_rr(k):
        # k photons re-weighted from the bright to the dark rate; with a zero
        # dark rate this is 0*(-inf) at k=0, whose correct limit is 0.
        return np.where(k > 0, k * log_rr, 0.0)

    # Likelihood of "shelved, no decay" relative to all-bright:
    #   exp(-t_det/lifetime) * (rate ratio)^n * exp((rate_bright-rate_dark)*t_det)
    with np.errstate(invalid="ignore"):
        log_no_decay = (
            -model.decay_fraction
            + _k_log_rr(lens)
            + (model.rate_bright - model.rate_dark) * t_det
        )

    out = np.empty(n_traces)
    width_hint = max(int(lens.max(initial=0)) + 1, 1)
    rows_per_chunk = max(1, chunk_elems // width_hint)
    for lo in range(0, n_traces, rows_per_chunk):
        hi = min(lo + rows_per_chunk, n_traces)
        m = hi - lo
        chunk_lens = lens[lo:hi]
        width = int(chunk_lens.max(initial=0))
        # Rows padded with t_det: padded segments have zero length and drop
        # out of the sum as exp(-inf).
        padded = np.full((m, width), t_det)
        cols = np.arange(width)
        mask = cols < chunk_lens[:, None]
        if flat_times.size:
            rows_idx, cols_idx = np.nonzero(mask)
            padded[rows_idx, cols_idx] = flat_times[
                np.repeat(offsets[lo:hi], chunk_lens) + cols_idx
            ]
        starts = np.concatenate([np.zeros((m, 1)), padded], axis=1)
        ends = np.concatenate([padded, np.full((m, 1), t_det)], axis=1)
        delta = ends - starts
        # Segment k sits after k arrivals: the shelved hypothesis explains
        # those k photons at the dark rate instead of the bright rate, and a
        # decay instant inside the segment integrates to a closed form.
        k = np.arange(width + 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_delta = np.where(delta > 0.0, np.log(np.where(delta > 0.0, delta, 1.0)), -np.inf)
            w = _k_log_rr(k) + a * starts + log_delta + _log_expm1_over_x(a * delta)
        w = np.where(delta > 0.0, w, -np.inf)
        log_in_window = -np.log(model.lifetime) + logsumexp(w, axis=1)
        out[lo:hi] = np.logaddexp(log_no_decay[lo:hi], log_in_window)
    return out


def _validate_trace_times(times: np.ndarray, t_det: float) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1:
        raise ValueError("arrival times must be a 1-D array")
    if times.size and (times.min() < 0.0 or times.max() > t_det):
        raise ValueError("arrival times must lie within [0, t_det]")
    if np.any(np.diff(times) < 0.0):
        raise ValueError("arrival times must be sorted")
    return times


def classify_time_resolved(
    trace, model: DetectionModel, errors: ErrorRates | None = None
) -> State:
    """Maximum-likelihood state call from the photon arrival times.

    ``trace`` is anything with ``timestamps`` (sorted arrival times in
    seconds) -- a ``PhotonTrace`` -- or a bare array of times.  The record is
    called dark when the decay-marginalized shelved likelihood is at least
    the bright likelihood.

    Preparation errors mix the same two likelihoods into both hypotheses
    with weights (1-eps) and eps, so they cancel from the equal-prior ratio
    and never change the decision; ``errors`` is accepted and validated for
    interface symmetry with the count classifier.
    """
    if errors is not None and errors.eps_up_tot + model.decay_fraction > 1.0:
        raise ValueError("eps_up_tot + t_det/lifetime must not exceed 1")
    times = getattr(trace, "timestamps", trace)
    times = _validate_trace_times(times, model.t_det)
    offsets = np.array([0, times.size])
    log_ratio = _log_ratio_dark_bright(times, offsets, model)[0]
    return State.DARK if log_ratio >= 0.0 else State.BRIGHT


def classify_traces(
    batch, model: DetectionModel, errors: ErrorRates | None = None
) -> np.ndarray:
    """Vectorized ``classify_time_resolved`` over a ``TraceBatch``.

    Returns a boolean array, True where the trace is called bright.  The
    decisions are identical to calling ``classify_time_resolved`` on each
    trace individually.
    """
    if errors is not None and errors.eps_up_tot + model.decay_fraction > 1.0:
        raise ValueError("eps_up_tot + t_det/lifetime must not exceed 1")
    flat = np.asarray(batch.timestamps, dtype=float)
    offsets = np.asarray(batch.offsets)
    if flat.size and (flat.min() < 0.0 or flat.max() > model.t_det):
        raise ValueError("arrival times must lie within [0, t_det]")
    log_ratio = _log_ratio_dark_bright(flat, offsets, model)
    return log_ratio < 0.0


# ---------------------------------------------------------------------------
# Error-surface CSV export


def write_error_surface_csv(
    result: OptimizationResult, path, metadata_lines: Iterable[str] = ()
) -> None:
    """Write the optimization surface as ``t_det_us,n_th,eps`` rows.

    One row per grid point, window-major; times in microseconds.  Values are
    written with shortest round-trip float formatting.  ``metadata_lines``
    become leading ``#``-prefixed comment lines, which the reader skips.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        for line in metadata_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["t_det_us", "n_th", "eps"])
        for i, t in enumerate(result.grid.t_values):
            for j, n in enumerate(result.grid.n_values):
                writer.writerow([repr(float(t) * 1e6), int(n), repr(float(result.surface[i, j]))])


def read_error_surface_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a surface written by ``write_error_surface_csv``.

    Returns ``(t_values, n_values, surface)`` with times back in seconds.
    The rows must cover a full rectangular grid.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        if header != ["t_det_us", "n_th", "eps"]:
            raise ValueError(f"unexpected error-surface header: {header}")
        rows = [(float(t), int(n), float(e)) for t, n, e in reader]
    if not rows:
        raise ValueError("empty error-surface file")
    t_us = np.array(sorted({r[0] for r in rows}))
    n_values = np.array(sorted({r[1] for r in rows}))
    surface = np.full((t_us.size, n_values.size), np.nan)
    t_index = {t: i for i, t in enumerate(t_us)}
    n_index = {n: j for j, n in enumerate(n_values)}
    for t, n, e in rows:
        surface[t_index[t], n_index[n]] = e
    if np.any(np.isnan(surface)):
        raise ValueError("error-surface rows do not cover a rectangular grid")
    return t_us * 1e-6, n_values, surface
