"""Threshold and arrival-time classification, grid optimization."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import quad

from shelveread.discrimination import (
    ErrorReport,
    OptimizationGrid,
    State,
    ThresholdPolicy,
    classify,
    classify_time_resolved,
    classify_traces,
    mean_error,
    optimize,
    read_error_surface_csv,
    total_error,
    write_error_surface_csv,
)
from shelveread.discrimination import _log_ratio_dark_bright
from shelveread.photon_statistics import (
    DetectionModel,
    ErrorRates,
    bright_pdf,
    dark_pdf,
)


def test_classify_threshold_boundary():
    policy = ThresholdPolicy(n_th=5, t_det=285e-6)
    assert classify(5, policy) is State.DARK  # bright strictly above threshold
    assert classify(6, policy) is State.BRIGHT
    assert classify(0, policy) is State.DARK
    with pytest.raises(ValueError):
        ThresholdPolicy(n_th=-1, t_det=285e-6)
    with pytest.raises(ValueError):
        ThresholdPolicy(n_th=3, t_det=0.0)


def test_mean_error_brute_force(measured_model):
    pb = bright_pdf(measured_model).probs
    pd = dark_pdf(measured_model).probs
    for n_th in (0, 3, 6, 12):
        report = mean_error(measured_model, n_th)
        eps_bright = math.fsum(pb[: n_th + 1])  # bright read as dark
        eps_dark = math.fsum(pd[n_th + 1 :])  # dark read as bright
        assert report.eps_bright == pytest.approx(eps_bright, rel=1e-12)
        assert report.eps_dark == pytest.approx(eps_dark, rel=1e-12)
        assert report.eps_mean == 0.5 * (report.eps_bright + report.eps_dark)


def test_mean_error_frozen_values(measured_model):
    report = mean_error(measured_model, 6)
    assert report.eps_mean == pytest.approx(3.139442200097263e-4, abs=1e-15)
    assert report.eps_bright == pytest.approx(1.2846043265736648e-4, abs=1e-15)
    assert report.eps_dark == pytest.approx(4.994280073620861e-4, abs=1e-15)


def test_error_report_mean_invariant():
    with pytest.raises(ValueError):
        ErrorReport(eps_bright=0.1, eps_dark=0.3, eps_mean=0.21, eps_total_mean=0.21)
    report = ErrorReport(eps_bright=0.1, eps_dark=0.3, eps_mean=0.2, eps_total_mean=0.2)
    assert report.eps_mean == 0.2


def test_total_error(measured_model):
    errors = ErrorRates(6e-4, 10e-4)
    report = mean_error(measured_model, 6, errors)
    assert report.eps_total_mean == pytest.approx(
        report.eps_mean + 8e-4, rel=1e-12
    )
    assert total_error(3e-4, errors) == pytest.approx(3e-4 + 8e-4, rel=1e-12)
    assert report.eps_total_mean == pytest.approx(1.113944220009726e-3, abs=1e-15)


def test_optimize_paper_grid():
    result = optimize(rate_bright=73.5e3, rate_dark=1.75e3, lifetime=0.390)
    assert result.t_det == pytest.approx(280e-6, abs=1e-12)
    assert result.n_th == 5
    assert result.eps_mean == pytest.approx(2.898811280094431e-4, abs=1e-15)
    # default grid bounds: 50..600 us step 5, thresholds 0..30
    assert result.grid.t_values.size == 111
    assert result.grid.n_values.size == 31
    assert result.surface.shape == (111, 31)


def test_optimize_surface_matches_mean_error():
    grid = OptimizationGrid(
        t_values=np.array([100e-6, 200e-6, 300e-6]), n_values=np.arange(0, 9)
    )
    result = optimize(rate_bright=73.5e3, rate_dark=1.75e3, lifetime=0.390, grid=grid)
    for i, t in enumerate(grid.t_values):
        model = DetectionModel(73.5e3, 1.75e3, 0.390, t)
        for j, n_th in enumerate(grid.n_values):
            expected = mean_error(model, int(n_th)).eps_mean
            assert result.surface[i, j] == pytest.approx(expected, rel=1e-10)


def test_optimize_picks_first_flat_minimum():
    result = optimize(rate_bright=73.5e3, rate_dark=1.75e3, lifetime=0.390)
    flat = int(np.argmin(result.surface))
    i, j = np.unravel_index(flat, result.surface.shape)
    assert result.t_det == result.grid.t_values[i]
    assert result.n_th == result.grid.n_values[j]
    # row-major argmin == first minimum scanning windows outward
    mins = np.flatnonzero(result.surface.ravel() == result.surface.min())
    assert flat == mins[0]


def test_optimize_zero_dark_rate():
    result = optimize(rate_bright=73.5e3, rate_dark=0.0, lifetime=0.390)
    assert np.isfinite(result.eps_mean)
    assert 0.0 < result.eps_mean < 2.898811280094431e-4  # easier than with dark counts present


def test_optimization_grid_validation():
    with pytest.raises(ValueError):
        OptimizationGrid(t_values=np.array([2e-4, 1e-4]), n_values=np.arange(3))
    with pytest.raises(ValueError):
        OptimizationGrid(t_values=np.array([1e-4, 2e-4]), n_values=np.array([3, 3]))


# ---------------------------------------------------------------------------
# Time-resolved classification


def _log_ratio_oracle(times: np.ndarray, model: DetectionModel) -> float:
    """Decay-marginalized likelihood ratio by adaptive quadrature."""
    t_det, tau = model.t_det, model.lifetime
    rr = model.rate_dark / model.rate_bright
    a = model.rate_bright - model.rate_dark - 1.0 / tau
    n = times.size

    no_decay = math.exp(-t_det / tau) * rr**n * math.exp(
        (model.rate_bright - model.rate_dark) * t_det
    )

    def integrand(T):
        k = int(np.searchsorted(times, T, side="right"))
        return rr**k * math.exp(a * T)

    total = 0.0
    edges = np.concatenate([[0.0], times, [t_det]])
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi > lo:
            piece, _ = quad(integrand, lo, hi, epsabs=1e-16, epsrel=1e-12, limit=200)
            total += piece
    return math.log(no_decay + total / tau)


def test_log_ratio_matches_quadrature(optimum_model):
    rng = np.random.default_rng(7)
    traces = [np.array([])]
    for n in (1, 2, 3, 5, 8):
        traces.append(np.sort(rng.uniform(0, optimum_model.t_det, n)))
    for times in traces:
        flat = times.astype(float)
        offsets = np.array([0, flat.size])
        got = _log_ratio_dark_bright(flat, offsets, optimum_model)[0]
        expected = _log_ratio_oracle(flat, optimum_model)
        assert got == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_time_resolved_empty_and_busy_traces(optimum_model):
    assert classify_time_resolved(np.array([]), optimum_model) is State.DARK
    busy = np.linspace(0.0, optimum_model.t_det, 22)[1:-1]
    assert classify_time_resolved(busy, optimum_model) is State.BRIGHT


def test_time_resolved_degrades_to_threshold(optimum_model):
    """Evenly spread arrivals: one dark->bright flip near the count threshold."""
    decisions = []
    for n in range(0, 21):
        times = np.linspace(0.0, optimum_model.t_det, n + 2)[1:-1]
        decisions.append(classify_time_resolved(times, optimum_model) is State.BRIGHT)
    flips = [i for i in range(1, len(decisions)) if decisions[i] != decisions[i - 1]]
    assert len(flips) == 1
    assert not decisions[0] and decisions[-1]
    assert 3 <= flips[0] <= 9  # near the optimal threshold of 5


def test_time_resolved_uses_arrival_times(optimum_model):
    # same count (6, above threshold 5), opposite verdicts: photons bunched
    # at the end look like a shelved ion that decayed late in the window,
    # photons bunched at the start can only be a sparse bright record
    early = np.linspace(0.0, 0.05, 6) * optimum_model.t_det
    late = optimum_model.t_det * (1.0 - np.linspace(0.05, 0.0, 6))
    assert classify_time_resolved(early, optimum_model) is State.BRIGHT
    assert classify_time_resolved(late, optimum_model) is State.DARK
    policy = ThresholdPolicy(5, optimum_model.t_det)
    assert classify(6, policy) is State.BRIGHT  # counts alone cannot tell


def test_time_resolved_error_rates_do_not_change_decisions(optimum_model):
    rng = np.random.default_rng(11)
    errors = ErrorRates(6e-4, 10e-4)
    for n in range(0, 12):
        times = np.sort(rng.uniform(0, optimum_model.t_det, n))
        assert classify_time_resolved(times, optimum_model) is classify_time_resolved(
            times, optimum_model, errors
        )


def test_time_resolved_validation(optimum_model):
    with pytest.raises(ValueError):
        classify_time_resolved(np.array([-1e-6]), optimum_model)
    with pytest.raises(ValueError):
        classify_time_resolved(np.array([optimum_model.t_det + 1e-9]), optimum_model)
    with pytest.raises(ValueError):
        classify_time_resolved(np.array([2e-4, 1e-4]), optimum_model)


def test_classify_traces_matches_single(optimum_model, big_ensembles):
    batch = big_ensembles["up"]
    bright_mask = classify_traces(batch, optimum_model)
    assert bright_mask.shape == (len(batch),)
    for i in (0, 1, 1234, 299_999):
        single = classify_time_resolved(batch.trace(i), optimum_model)
        assert bright_mask[i] == (single is State.BRIGHT)


def test_surface_csv_round_trip(tmp_path):
    grid = OptimizationGrid(
        t_values=np.array([100e-6, 150e-6]), n_values=np.arange(0, 4)
    )
    result = optimize(rate_bright=73.5e3, rate_dark=1.75e3, lifetime=0.390, grid=grid)
    path = tmp_path / "surface.csv"
    write_error_surface_csv(result, path, metadata_lines=["tool: test", "seed: 0"])
    text = path.read_text()
    assert text.startswith("# tool: test\n# seed: 0\n")
    t_values, n_values, surface = read_error_surface_csv(path)
    np.testing.assert_allclose(t_values, grid.t_values, rtol=1e-12)
    np.testing.assert_array_equal(n_values, grid.n_values)
    np.testing.assert_allclose(surface, result.surface, rtol=1e-12)
