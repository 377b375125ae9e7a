"""Qubit state and process tomography from projection measurements.

Projection data arrive as per-axis bright/dark counts: each prepared state
is rotated so the requested measurement axis maps onto the detection basis,
then read out by shelving.  The shelved (dark) outcome corresponds to
|up> = Bloch +z, so an axis projection is p = 1 - 2*(bright fraction); a
perfectly prepared |+z> state that never fluoresces gives p_z = +1.

From the Bloch vectors the module reconstructs density matrices, computes
state fidelities against the six cardinal pure states, and performs process
tomography: the chi matrix in the fixed operator basis {I, sigma_x,
i*sigma_y, sigma_z} is obtained by solving the linear system that the four
input states {+z, -z, +x, +y} impose.  Physicality of the raw chi is
reported, not enforced; the supported correction is nulling the measured
Bloch components orthogonal to each preparation axis before
reconstruction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "PREPARED_LABELS",
    "AXES",
    "BlochVector",
    "DensityMatrix",
    "ChiMatrix",
    "TomographyRecord",
    "pure_state",
    "projections_from_records",
    "reconstruct_state",
    "bloch_from_state",
    "state_fidelity",
    "state_fidelities",
    "average_fidelity",
    "null_orthogonal_projections",
    "reconstruct_chi",
    "chi_from_projections",
    "apply_chi",
    "process_fidelity",
    "trace_preservation_defect",
    "bloch_error_surface",
    "read_records_csv",
    "write_records_csv",
    "write_chi_json",
    "read_chi_json",
    "write_surface_csv",
    "read_surface_csv",
]

PREPARED_LABELS = ("+z", "-z", "+x", "-x", "+y", "-y")
AXES = ("x", "y", "z")
_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}

_I2 = np.eye(2, dtype=complex)
_SIGMA = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)
# Process-matrix operator basis: {I, sigma_x, i*sigma_y, sigma_z} (all real).
CHI_BASIS_LABELS = ("I", "sigma_x", "i*sigma_y", "sigma_z")
_CHI_BASIS = (_I2, _SIGMA[0], 1j * _SIGMA[1], _SIGMA[2])

_CHI_INPUT_LABELS = ("+z", "-z", "+x", "+y")


@dataclass(frozen=True)
class BlochVector:
    """Pauli expectation values (p_x, p_y, p_z) of a qubit state."""

    p_x: float
    p_y: float
    p_z: float

    def __post_init__(self) -> None:
        for name in ("p_x", "p_y", "p_z"):
            value = getattr(self, name)
            if not (np.isfinite(value) and -1.0 - 1e-9 <= value <= 1.0 + 1e-9):
                raise ValueError(f"{name} must lie in [-1, 1], got {value}")

    def as_array(self) -> np.ndarray:
        return np.array([self.p_x, self.p_y, self.p_z])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))

    def is_physical(self, tol: float = 1e-9) -> bool:
        return self.norm <= 1.0 + tol


@dataclass(frozen=True)
class DensityMatrix:
    """2x2 Hermitian, unit-trace matrix.

    Positivity is deliberately not enforced: raw tomographic reconstructions
    may have a slightly negative eigenvalue, which downstream consumers
    inspect via ``eigenvalues``/``is_physical``.
    """

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (2, 2):
            raise ValueError(f"density matrix must be 2x2, got shape {m.shape}")
        if np.max(np.abs(m - m.conj().T)) > 1e-12:
            raise ValueError("density matrix must be Hermitian within 1e-12")
        if abs(np.trace(m).real - 1.0) > 1e-12 or abs(np.trace(m).imag) > 1e-12:
            raise ValueError("density matrix must have unit trace within 1e-12")
        object.__setattr__(self, "matrix", m)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def is_physical(self, tol: float = 1e-9) -> bool:
        return bool(self.eigenvalues.min() >= -tol)


@dataclass(frozen=True)
class ChiMatrix:
    """4x4 process matrix in the basis {I, sigma_x, i*sigma_y, sigma_z}.

    Hermiticity and trace preservation are hard invariants; positive
    semidefiniteness is only reported (``min_eigenvalue``/``is_physical``)
    because reconstructions from noisy data may violate it.
    """

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (4, 4):
            raise ValueError(f"chi matrix must be 4x4, got shape {m.shape}")
        if np.max(np.abs(m - m.conj().T)) > 1e-12:
            raise ValueError("chi matrix must be Hermitian within 1e-12")
        defect = _trace_preservation_defect(m)
        if defect > 1e-9:
            raise ValueError(
                f"chi matrix must be trace-preserving within 1e-9, defect {defect:.3g}"
            )
        object.__setattr__(self, "matrix", m)

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix).min())

    def is_physical(self, tol: float = 1e-9) -> bool:
        return self.min_eigenvalue >= -tol


@dataclass(frozen=True)
class TomographyRecord:
    """One projection measurement: prepared state, axis, and outcome tally."""

    prepared: str
    axis: str
    shots: int
    bright_count: int

    def __post_init__(self) -> None:
        if self.prepared not in PREPARED_LABELS:
            raise ValueError(
                f"prepared must be one of {PREPARED_LABELS}, got {self.prepared!r}"
            )
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        if self.shots < 1:
            raise ValueError(f"shots must be >= 1, got {self.shots}")
        if not 0 <= self.bright_count <= self.shots:
            raise ValueError(
                f"bright_count must lie in [0, shots], got {self.bright_count}"
            )


def _axis_of(label: str) -> tuple[int, float]:
    sign = 1.0 if label[0] == "+" else -1.0
    return _AXIS_INDEX[label[1]], sign


def pure_state(label: str) -> DensityMatrix:
    """The ideal pure state for a cardinal preparation label."""
    if label not in PREPARED_LABELS:
        raise ValueError(f"unknown state label {label!r}")
    index, sign = _axis_of(label)
    p = np.zeros(3)
    p[index] = sign
    return reconstruct_state(BlochVector(*p))


# ---------------------------------------------------------------------------
# Projections and states


def projections_from_records(
    records: Iterable[TomographyRecord],
    fill_missing_orthogonal: bool = False,
) -> dict[str, BlochVector]:
    """Bloch vectors per prepared state from projection tallies.

    Records sharing a (prepared, axis) pair are pooled.  Every prepared
    state present must come with its parallel-axis measurement; missing
    orthogonal axes raise unless ``fill_missing_orthogonal`` is set, in
    which case they are taken as 0 (the ideal value for a cardinal state).
    """
    shots: dict[tuple[str, str], int] = {}
    bright: dict[tuple[str, str], int] = {}
    for record in records:
        key = (record.prepared, record.axis)
        shots[key] = shots.get(key, 0) + record.shots
        bright[key] = bright.get(key, 0) + record.bright_count

    out: dict[str, BlochVector] = {}
    for label in PREPARED_LABELS:
        measured = {axis: (label, axis) in shots for axis in AXES}
        if not any(measured.values()):
            continue
        parallel_axis = label[1]
        if not measured[parallel_axis]:
            raise ValueError(
                f"state {label}: parallel axis {parallel_axis!r} was not measured"
            )
        p = np.zeros(3)
        for axis in AXES:
            key = (label, axis)
            if measured[axis]:
                # Dark (shelved) is the +1 outcome on every mapped axis.
                p[_AXIS_INDEX[axis]] = 1.0 - 2.0 * bright[key] / shots[key]
            elif not fill_missing_orthogonal:
                raise ValueError(
                    f"state {label}: axis {axis!r} missing "
                    "(pass fill_missing_orthogonal=True to assume 0)"
                )
        out[label] = BlochVector(*p)
    return out


def reconstruct_state(p: BlochVector) -> DensityMatrix:
    """Linear reconstruction rho = (I + p . sigma) / 2, no positivity fix."""
    m = _I2.copy()
    for component, pauli in zip(p.as_array(), _SIGMA):
        m = m + component * pauli
    return DensityMatrix(0.5 * m)


def bloch_from_state(rho: DensityMatrix) -> BlochVector:
    """Pauli expectation values Tr(rho sigma_i); inverse of reconstruction."""
    p = [float(np.trace(rho.matrix @ pauli).real) for pauli in _SIGMA]
    return BlochVector(*p)


def state_fidelity(rho_out: DensityMatrix, psi_in: DensityMatrix) -> float:
    """Overlap <psi|rho_out|psi> with a pure target state."""
    eigs = psi_in.eigenvalues
    if abs(eigs.min()) > 1e-9:
        raise ValueError(
            f"target state must be pure (rank 1 within 1e-9), eigenvalues {eigs}"
        )
    return float(np.trace(rho_out.matrix @ psi_in.matrix).real)


def state_fidelities(projections: Mapping[str, BlochVector]) -> dict[str, float]:
    """Fidelity of each measured state against its ideal preparation."""
    return {
        label: state_fidelity(reconstruct_state(p), pure_state(label))
        for label, p in projections.items()
    }


def average_fidelity(fidelities: Mapping[str, float]) -> float:
    """Arithmetic mean over the six cardinal states; all must be present."""
    missing = [label for label in PREPARED_LABELS if label not in fidelities]
    if missing:
        raise ValueError(f"missing fidelities for states: {missing}")
    return float(np.mean([fidelities[label] for label in PREPARED_LABELS]))


def null_orthogonal_projections(
    projections: Mapping[str, BlochVector],
) -> dict[str, BlochVector]:
    """Zero each state's Bloch components orthogonal to its preparation axis.

    The parallel component is untouched.  This is the supported physicality
    correction for process reconstruction: orthogonal projections of
    cardinal states carry no signal, only sampling noise.
    """
    out: dict[str, BlochVector] = {}
    for label, p in projections.items():
        if label not in PREPARED_LABELS:
            raise ValueError(f"unknown state label {label!r}")
        index, _ = _axis_of(label)
        kept = np.zeros(3)
        kept[index] = p.as_array()[index]
        out[label] = BlochVector(*kept)
    return out


# ---------------------------------------------------------------------------
# Process tomography


def _trace_preservation_defect(chi: np.ndarray) -> float:
    acc = np.zeros((2, 2), dtype=complex)
    for m in range(4):
        for n in range(4):
            acc += chi[m, n] * (_CHI_BASIS[n].conj().T @ _CHI_BASIS[m])
    return float(np.max(np.abs(acc - _I2)))


def trace_preservation_defect(chi: ChiMatrix) -> float:
    """Max deviation of sum_mn chi_mn E_n^dag E_m from the identity."""
    return _trace_preservation_defect(chi.matrix)


def reconstruct_chi(outputs: Mapping[str, DensityMatrix]) -> ChiMatrix:
    """Process matrix from the outputs for inputs {+z, -z, +x, +y}.

    Solves the 16x16 linear system stating that the chi representation
    reproduces all four measured output matrices.  Those inputs span the
    Hermitian 2x2 matrices, so the solution is unique; Hermiticity and
    trace preservation then follow from the outputs being valid states.
    """
    missing = [label for label in _CHI_INPUT_LABELS if label not in outputs]
    if missing:
        raise ValueError(f"missing outputs for input states: {missing}")

    system = np.zeros((16, 16), dtype=complex)
    rhs = np.zeros(16, dtype=complex)
    for j, label in enumerate(_CHI_INPUT_LABELS):
        rho_in = pure_state(label).matrix
        rho_out = outputs[label].matrix
        for k in range(2):
            for l in range(2):
                row = 4 * j + 2 * k + l
                rhs[row] = rho_out[k, l]
                for m in range(4):
                    for n in range(4):
                        term = _CHI_BASIS[m] @ rho_in @ _CHI_BASIS[n].conj().T
                        system[row, 4 * m + n] = term[k, l]
    if np.linalg.cond(system) > 1e12:
        raise ValueError("input set is numerically singular")
    chi = np.linalg.solve(system, rhs).reshape(4, 4)
    chi = 0.5 * (chi + chi.conj().T)  # discard solver round-off asymmetry
    return ChiMatrix(chi)


def chi_from_projections(projections: Mapping[str, BlochVector]) -> ChiMatrix:
    """Convenience: reconstruct output states, then the process matrix."""
    outputs = {
        label: reconstruct_state(projections[label])
        for label in _CHI_INPUT_LABELS
        if label in projections
    }
    return reconstruct_chi(outputs)


def apply_chi(chi: ChiMatrix, rho: DensityMatrix) -> DensityMatrix:
    """Forward action sum_mn chi_mn E_m rho E_n^dag."""
    acc = np.zeros((2, 2), dtype=complex)
    for m in range(4):
        for n in range(4):
            acc += chi.matrix[m, n] * (
                _CHI_BASIS[m] @ rho.matrix @ _CHI_BASIS[n].conj().T
            )
    acc = 0.5 * (acc + acc.conj().T)
    return DensityMatrix(acc)


def process_fidelity(chi: ChiMatrix) -> float:
    """Overlap with the ideal identity process: Re(chi[0, 0])."""
    return float(chi.matrix[0, 0].real)


def _affine_from_chi(chi: ChiMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Bloch-sphere affine form of the channel: p -> lam @ p + shift."""
    center = bloch_from_state(apply_chi(chi, DensityMatrix(0.5 * _I2))).as_array()
    lam = np.zeros((3, 3))
    for i in range(3):
        p = np.zeros(3)
        p[i] = 1.0
        out = bloch_from_state(
            apply_chi(chi, reconstruct_state(BlochVector(*p)))
        ).as_array()
        lam[:, i] = out - center
    return lam, center


def bloch_error_surface(
    chi: ChiMatrix,
    theta_deg: np.ndarray | None = None,
    phi_deg: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Detection error of every pure state on a polar/azimuthal grid.

    The state at (theta, phi) is cos(theta/2)|up> + e^{i phi} sin(theta/2)
    |down>; the error is 1 - <psi| chi(|psi><psi|) |psi>.  Defaults to a
    1-degree grid (181 polar x 360 azimuthal).  Returns (theta_deg,
    phi_deg, error) with error shaped (len(theta), len(phi)).
    """
    theta_deg = (
        np.linspace(0.0, 180.0, 181) if theta_deg is None else np.asarray(theta_deg, float)
    )
    phi_deg = (
        np.arange(0.0, 360.0) if phi_deg is None else np.asarray(phi_deg, float)
    )
    if theta_deg.size == 0 or phi_deg.size == 0:
        raise ValueError("angle grids must be nonempty")

    lam, center = _affine_from_chi(chi)
    theta = np.deg2rad(theta_deg)[:, None]
    phi = np.deg2rad(phi_deg)[None, :]
    # Bloch vector of cos(t/2)|up> + e^{i p} sin(t/2)|down>, with |up> at +z.
    rx = np.sin(theta) * np.cos(phi)
    ry = np.sin(theta) * np.sin(phi)
    rz = np.cos(theta) * np.ones_like(phi)
    r = np.stack([rx, ry, rz], axis=-1)
    mapped = r @ lam.T + center
    fidelity = 0.5 * (1.0 + np.einsum("tpi,tpi->tp", r, mapped))
    return theta_deg, phi_deg, 1.0 - fidelity


# ---------------------------------------------------------------------------
# File formats

_RECORDS_HEADER = "prepared,axis,shots,bright_count"


def write_records_csv(
    records: Iterable[TomographyRecord], path, metadata_lines: Iterable[str] = ()
) -> None:
    lines = [f"# {line}" for line in metadata_lines]
    lines.append(_RECORDS_HEADER)
    for record in records:
        lines.append(
            f"{record.prepared},{record.axis},{record.shots},{record.bright_count}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_records_csv(path) -> list[TomographyRecord]:
    lines = [
        line
        for line in Path(path).read_text().splitlines()
        if line.strip() and not line.startswith("#")
    ]
    if not lines or lines[0] != _RECORDS_HEADER:
        raise ValueError(f"expected header {_RECORDS_HEADER!r} in {path}")
    records = []
    for line in lines[1:]:
        prepared, axis, shots, bright = line.split(",")
        records.append(TomographyRecord(prepared, axis, int(shots), int(bright)))
    return records


def write_chi_json(chi: ChiMatrix, path, metadata: dict | None = None) -> None:
    payload = {
        "basis": list(CHI_BASIS_LABELS),
        "real": chi.matrix.real.tolist(),
        "imag": chi.matrix.imag.tolist(),
    }
    if metadata is not None:
        payload["metadata"] = metadata
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def read_chi_json(path) -> ChiMatrix:
    payload = json.loads(Path(path).read_text())
    if tuple(payload["basis"]) != CHI_BASIS_LABELS:
        raise ValueError(f"unexpected operator basis {payload['basis']}")
    matrix = np.array(payload["real"]) + 1j * np.array(payload["imag"])
    return ChiMatrix(matrix)


_SURFACE_HEADER = "theta_deg,phi_deg,error"


def write_surface_csv(
    theta_deg: np.ndarray,
    phi_deg: np.ndarray,
    error: np.ndarray,
    path,
    metadata_lines: Iterable[str] = (),
) -> None:
    lines = [f"# {line}" for line in metadata_lines]
    lines.append(_SURFACE_HEADER)
    for i, theta in enumerate(theta_deg):
        for j, phi in enumerate(phi_deg):
            lines.append(f"{repr(float(theta))},{repr(float(phi))},{repr(float(error[i, j]))}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_surface_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lines = [
        line
        for line in Path(path).read_text().splitlines()
        if line.strip() and not line.startswith("#")
    ]
    if not lines or lines[0] != _SURFACE_HEADER:
        raise ValueError(f"expected header {_SURFACE_HEADER!r} in {path}")
    raw = np.array([[float(x) for x in line.split(",")] for line in lines[1:]])
    theta = np.unique(raw[:, 0])
    phi = np.unique(raw[:, 1])
    if raw.shape[0] != theta.size * phi.size:
        raise ValueError("surface rows do not form a rectangular grid")
    order = np.lexsort((raw[:, 1], raw[:, 0]))
    error = raw[order, 2].reshape(theta.size, phi.size)
    return theta, phi, error
