from __future__ import annotations

import numpy as np
import pytest

from shelveread import DetectionModel, ErrorRates, Prepared, SimConfig
from shelveread.monte_carlo import simulate_traces


@pytest.fixture(scope="session")
def measured_model() -> DetectionModel:
    """Measured operating point: 285 us window."""
    return DetectionModel(
        rate_bright=73.5e3, rate_dark=1.75e3, lifetime=0.390, t_det=285e-6
    )


@pytest.fixture(scope="session")
def optimum_model() -> DetectionModel:
    """Grid-optimal operating point: 280 us window, threshold 5."""
    return DetectionModel(
        rate_bright=73.5e3, rate_dark=1.75e3, lifetime=0.390, t_det=280e-6
    )


@pytest.fixture(scope="session")
def measured_errors() -> ErrorRates:
    return ErrorRates(eps_down_tot=6e-4, eps_up_tot=10e-4)


@pytest.fixture(scope="session")
def big_ensembles(optimum_model, measured_errors):
    """3e5 trace-mode shots per prepared state at the optimum (seeds 42/43).

    Shared by the classification, fitting, and acceptance tests; counts are
    the per-trace photon numbers, identical to count-mode output.
    """
    shots = 300_000
    down = simulate_traces(
        Prepared.DOWN,
        SimConfig(model=optimum_model, errors=measured_errors, shots=shots, seed=42),
        threads=4,
    )
    up = simulate_traces(
        Prepared.UP,
        SimConfig(model=optimum_model, errors=measured_errors, shots=shots, seed=43),
        threads=4,
    )
    return {"down": down, "up": up, "shots": shots}
