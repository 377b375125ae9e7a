"""Photon-count statistics for electron-shelving readout.

During a detection window of length ``t_det`` a laser drives the cycling
transition of the bright (ground) state, which scatters photons at rate
``rate_bright``.  A qubit shelved in the metastable dark state produces only
background at ``rate_dark`` -- unless it decays back to the ground state at
some instant ``T`` inside the window, after which it fluoresces at the bright
rate for the remaining ``t_det - T``.  To first order in ``t_det/lifetime``
the decay instant is uniform over the window, which smears part of the dark
count distribution into a plateau between the dark and bright Poisson peaks.

This module provides the closed-form count distributions for both qubit
states, with and without state-preparation errors, on a truncated integer
support chosen so the neglected tail is far below double-precision noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "DetectionModel",
    "ErrorRates",
    "CountPMF",
    "ZERO_ERRORS",
    "poisson_pmf",
    "reg_lower_gamma",
    "count_support_max",
    "decay_mixture_pmf",
    "bright_pdf",
    "dark_pdf",
    "observed_pdf_down",
    "observed_pdf_up",
]

# Fractional window/lifetime ratio above which the first-order treatment of
# metastable decay (single decay, uniform in the window) is no longer trusted.
MAX_DECAY_FRACTION = 0.1


@dataclass(frozen=True)
class DetectionModel:
    """Rates and timing of one fluorescence detection window.

    Parameters
    ----------
    rate_bright : float
        Detected photon rate (counts/s) with the qubit in the bright state.
    rate_dark : float
        Background rate (counts/s) with the qubit shelved in the dark state.
    lifetime : float
        Lifetime (s) of the metastable dark state.
    t_det : float
        Detection window length (s).
    """

    rate_bright: float
    rate_dark: float
    lifetime: float
    t_det: float

    def __post_init__(self) -> None:
        if not (self.rate_bright > self.rate_dark >= 0.0):
            raise ValueError(
                "require rate_bright > rate_dark >= 0, got "
                f"rate_bright={self.rate_bright}, rate_dark={self.rate_dark}"
            )
        if not self.lifetime > 0.0:
            raise ValueError(f"lifetime must be positive, got {self.lifetime}")
        if not self.t_det > 0.0:
            raise ValueError(f"t_det must be positive, got {self.t_det}")
        if not self.t_det / self.lifetime < MAX_DECAY_FRACTION:
            raise ValueError(
                f"t_det/lifetime = {self.t_det / self.lifetime:.3g} >= "
                f"{MAX_DECAY_FRACTION}; the first-order decay model only "
                "holds for windows much shorter than the dark-state lifetime"
            )

    @property
    def mean_bright(self) -> float:
        """Mean photon number for a bright-state window."""
        return self.rate_bright * self.t_det

    @property
    def mean_dark(self) -> float:
        """Mean photon number for a dark-state window absent any decay."""
        return self.rate_dark * self.t_det

    @property
    def decay_fraction(self) -> float:
        """First-order probability that the dark state decays in-window."""
        return self.t_det / self.lifetime


@dataclass(frozen=True)
class ErrorRates:
    """Combined preparation + shelving error probability per prepared state.

    ``eps_down_tot`` is the probability that a qubit meant to stay bright is
    found shelved; ``eps_up_tot`` the probability that the shelving sequence
    leaves a meant-to-be-dark qubit fluorescing.  Only these sums (not the
    preparation/shelving split) are identifiable from count histograms.
    Both must lie in [0, 0.5): beyond that the "prepared" label stops being
    meaningful.
    """

    eps_down_tot: float
    eps_up_tot: float

    def __post_init__(self) -> None:
        for name, value in (
            ("eps_down_tot", self.eps_down_tot),
            ("eps_up_tot", self.eps_up_tot),
        ):
            if not (0.0 <= value < 0.5):
                raise ValueError(f"{name} must lie in [0, 0.5), got {value}")

    @property
    def mean(self) -> float:
        return 0.5 * (self.eps_down_tot + self.eps_up_tot)


ZERO_ERRORS = ErrorRates(0.0, 0.0)


@dataclass(frozen=True)
class CountPMF:
    """Probability mass over photon counts ``n = 0 .. support_max``."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("probs must be a non-empty 1-D array")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0.0):
            raise ValueError("probs must be finite and non-negative")
        object.__setattr__(self, "probs", probs)

    @property
    def support_max(self) -> int:
        return self.probs.size - 1

    def cdf(self, n: int) -> float:
        """P(count <= n).  ``n`` past the support clips to the full sum."""
        if n < 0:
            return 0.0
        return float(self.probs[: n + 1].sum())

    def tail(self, n: int) -> float:
        """P(count > n) on the truncated support."""
        return float(self.probs[n + 1 :].sum())

    def mean(self) -> float:
        return float(np.arange(self.probs.size) @ self.probs)

    def total(self) -> float:
        return float(self.probs.sum())


def poisson_pmf(n, mean):
    """Poisson probability mass, evaluated in log space for large means.

    Parameters
    ----------
    n : int or array of int
        Count value(s); negative entries get probability 0.
    mean : float or array
        Poisson mean(s), broadcast against ``n``.  A mean of exactly 0 puts
        all mass on n = 0.
    """
    n = np.asarray(n)
    mean = np.asarray(mean, dtype=float)
    if np.any(mean < 0.0):
        raise ValueError("Poisson mean must be non-negative")
    n_f = n.astype(float)
    valid = n >= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        log_p = n_f * np.log(mean) - mean - special.gammaln(n_f + 1.0)
        out = np.where(valid, np.exp(log_p), 0.0)
    # mean == 0 makes n*log(mean) ill-defined; the limit is a point mass at 0.
    out = np.where(mean == 0.0, ((n == 0) & valid).astype(float), out)
    if out.ndim == 0:
        return float(out)
    return out


def reg_lower_gamma(x, a):
    """Regularized lower incomplete gamma, integration limit first.

    ``reg_lower_gamma(x, a) = gamma(a, x) / Gamma(a)`` with ``x`` the upper
    integration limit.  For integer ``a = n + 1`` this equals the probability
    that a Poisson variable with mean ``x`` exceeds ``n``.
    """
    return special.gammainc(a, x)


def count_support_max(mean_bright: float) -> int:
    """Largest count kept on the truncated support for a given bright mean.

    Twelve standard deviations past the bright peak plus a small floor; the
    discarded Poisson tail is below 1e-12 of total mass for any mean.
    """
    if mean_bright < 0.0:
        raise ValueError("mean_bright must be non-negative")
    return int(np.ceil(mean_bright + 12.0 * np.sqrt(mean_bright))) + 5


def _support(model: DetectionModel) -> np.ndarray:
    return np.arange(count_support_max(model.mean_bright) + 1)


def decay_mixture_pmf(model: DetectionModel) -> np.ndarray:
    """Count PMF given an in-window decay at a uniform instant.

    A decay at time T yields Poisson counts with mean
    ``rate_dark*T + rate_bright*(t_det - T)``; averaging T uniformly over the
    window gives

        g(n) = [P(n+1, mean_bright) - P(n+1, mean_dark)] / (mean_bright - mean_dark)

    with P the regularized lower incomplete gamma -- i.e. the flat-in-mean
    average of Poisson PMFs between the dark and bright means.  When the two
    means coincide to within 1e-8 relative the difference quotient is
    replaced by its analytic limit, a plain Poisson at the common mean.
    """
    return _decay_mixture_from_means(
        _support(model), model.mean_bright, model.mean_dark
    )


def _decay_mixture_from_means(n, mean_bright: float, mean_dark: float):
    if abs(mean_bright - mean_dark) < 1e-8 * mean_bright:
        return poisson_pmf(n, 0.5 * (mean_bright + mean_dark))
    return (
        reg_lower_gamma(mean_bright, np.asarray(n) + 1.0)
        - reg_lower_gamma(mean_dark, np.asarray(n) + 1.0)
    ) / (mean_bright - mean_dark)


def bright_pdf(model: DetectionModel) -> CountPMF:
    """Count distribution for a bright-state (not shelved) window."""
    return CountPMF(poisson_pmf(_support(model), model.mean_bright))


def dark_pdf(model: DetectionModel) -> CountPMF:
    """Count distribution for a shelved qubit, including in-window decay.

    With probability ``t_det/lifetime`` the dark state decays inside the
    window (uniform instant, first order) and the counts follow the mixed
    distribution ``decay_mixture_pmf``; otherwise they are Poisson at the
    background mean.
    """
    f = model.decay_fraction
    n = _support(model)
    return CountPMF(
        (1.0 - f) * poisson_pmf(n, model.mean_dark) + f * decay_mixture_pmf(model)
    )


def observed_pdf_down(model: DetectionModel, errors: ErrorRates) -> CountPMF:
    """Count distribution for a qubit prepared bright, with shelving errors.

    A fraction ``eps_down_tot`` is erroneously shelved and contributes
    background counts; decay of that (already small) fraction is second
    order and neglected.
    """
    n = _support(model)
    probs = (1.0 - errors.eps_down_tot) * poisson_pmf(n, model.mean_bright) + (
        errors.eps_down_tot
    ) * poisson_pmf(n, model.mean_dark)
    return CountPMF(probs)


def observed_pdf_up(model: DetectionModel, errors: ErrorRates) -> CountPMF:
    """Count distribution for a qubit prepared dark, with shelving errors.

    The shelved population decays in-window with probability
    ``t_det/lifetime``; a fraction ``eps_up_tot`` never shelved and
    fluoresces at the full bright rate.
    """
    f = model.decay_fraction
    w_dark = 1.0 - errors.eps_up_tot - f
    if w_dark < 0.0:
        raise ValueError(
            "eps_up_tot + t_det/lifetime must not exceed 1; got "
            f"{errors.eps_up_tot} + {f:.3g}"
        )
    n = _support(model)
    probs = (
        w_dark * poisson_pmf(n, model.mean_dark)
        + f * decay_mixture_pmf(model)
        + errors.eps_up_tot * poisson_pmf(n, model.mean_bright)
    )
    return CountPMF(probs)
