"""Command-line front end: one JSON config drives every subcommand.

Subcommands::

    shelveread optimize   error-vs-(window, threshold) surface and optimum
    shelveread simulate   photon-count histograms (and optionally traces)
    shelveread fit        maximum-likelihood fit of a histogram pair
    shelveread tomo       state or process tomography from projection records
    shelveread budget     multi-pulse error-budget combination

Every command reads a single self-describing JSON config (``--config``,
defaulting to the bundled example configuration) and writes its artifacts
into ``--out``.  Outputs embed a metadata block — the SHA-256 of the
effective config and the tool version — as a ``"metadata"`` key in JSON
files and as leading ``#`` comment lines in CSV files, so every artifact
records what produced it.  Commands are deterministic: the same config and
seed reproduce byte-identical files.

Times are seconds inside the library; CSV columns and config keys carry
explicit units in their names (``_us``, ``_s``, ``_hz``).

Exit status: 0 on success, 2 on any configuration or validation error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .discrimination import OptimizationGrid, optimize, write_error_surface_csv
from .error_budget import combine, read_budget_json, write_report_json
from .mle_fit import fit, write_fit_json
from .monte_carlo import (
    CountHistogram,
    DecayTimeLaw,
    Prepared,
    SimConfig,
    read_histogram_csv,
    simulate_histogram,
    simulate_traces,
    write_histogram_csv,
    write_traces_csv,
)
from .photon_statistics import DetectionModel, ErrorRates
from .tomography import (
    average_fidelity,
    bloch_error_surface,
    chi_from_projections,
    null_orthogonal_projections,
    process_fidelity,
    projections_from_records,
    read_records_csv,
    state_fidelities,
    trace_preservation_defect,
    write_chi_json,
    write_surface_csv,
)

__all__ = ["main"]

_SEED_MODULUS = 1 << 64


def _bundled(name: str):
    return resources.files("shelveread").joinpath("data", name)


def _load_config(path: str | None) -> dict:
    if path is None:
        text = _bundled("default_config.json").read_text()
    else:
        text = Path(path).read_text()
    config = json.loads(text)
    if not isinstance(config, dict):
        raise ValueError("config must be a JSON object")
    return config


def _require(config: dict, section: str, key: str):
    try:
        value = config[section][key]
    except (KeyError, TypeError):
        raise ValueError(f"config is missing {section}.{key}") from None
    if value is None:
        raise ValueError(f"config entry {section}.{key} must not be null")
    return value


def _model_from_config(config: dict) -> DetectionModel:
    return DetectionModel(
        rate_bright=float(_require(config, "model", "rate_bright_hz")),
        rate_dark=float(_require(config, "model", "rate_dark_hz")),
        lifetime=float(_require(config, "model", "lifetime_s")),
        t_det=float(_require(config, "model", "t_det_s")),
    )


def _errors_from_config(config: dict) -> ErrorRates:
    return ErrorRates(
        eps_down_tot=float(_require(config, "errors", "eps_down_tot")),
        eps_up_tot=float(_require(config, "errors", "eps_up_tot")),
    )


def _metadata(config: dict, command: str) -> dict:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return {
        "tool": "shelveread",
        "version": __version__,
        "command": command,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
    }


def _metadata_lines(metadata: dict) -> list[str]:
    return [f"{key}: {value}" for key, value in metadata.items()]


def _write_json(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_optimize(config: dict, out: Path) -> None:
    t_min = float(_require(config, "optimize", "t_min_us"))
    t_max = float(_require(config, "optimize", "t_max_us"))
    t_step = float(_require(config, "optimize", "t_step_us"))
    n_max = int(_require(config, "optimize", "n_th_max"))
    grid = OptimizationGrid(
        t_values=np.arange(t_min, t_max + 0.5 * t_step, t_step) * 1e-6,
        n_values=np.arange(0, n_max + 1),
    )
    result = optimize(
        rate_bright=float(_require(config, "model", "rate_bright_hz")),
        rate_dark=float(_require(config, "model", "rate_dark_hz")),
        lifetime=float(_require(config, "model", "lifetime_s")),
        grid=grid,
    )
    metadata = _metadata(config, "optimize")
    write_error_surface_csv(result, out / "error_surface.csv", _metadata_lines(metadata))
    _write_json(
        {
            "t_det_s": result.t_det,
            "t_det_us": result.t_det * 1e6,
            "n_th": int(result.n_th),
            "eps_mean": result.eps_mean,
            "metadata": metadata,
        },
        out / "optimum.json",
    )
    print(
        f"optimum: t_det = {result.t_det * 1e6:.1f} us, n_th = {result.n_th}, "
        f"mean error = {result.eps_mean:.4e}"
    )
    print(f"wrote {out / 'error_surface.csv'} and {out / 'optimum.json'}")


def _simulate_one(
    prepared: Prepared,
    sim: SimConfig,
    traces: bool,
    threads: int,
    out: Path,
    lines: list[str],
) -> None:
    tag = prepared.value
    if traces:
        # Trace and count modes share the same per-shot random numbers, so
        # the histogram built from the traces is the count-mode histogram.
        batch = simulate_traces(prepared, sim, threads=threads)
        write_traces_csv(batch, out / f"traces_{tag}.csv", lines)
        hist = CountHistogram.from_counts(batch.counts)
    else:
        hist = simulate_histogram(prepared, sim, threads=threads)
    write_histogram_csv(hist, out / f"hist_{tag}.csv", lines)
    mean = float(
        np.arange(hist.counts_per_bin.size) @ hist.counts_per_bin / hist.total_shots
    )
    print(f"{tag}: {hist.total_shots} shots, mean count {mean:.4f} -> hist_{tag}.csv")


def cmd_simulate(
    config: dict, out: Path, seed_override: int | None, threads: int
) -> None:
    model = _model_from_config(config)
    errors = _errors_from_config(config)
    shots = int(_require(config, "simulate", "shots"))
    seed = int(_require(config, "simulate", "seed")) if seed_override is None else seed_override
    law = DecayTimeLaw(str(_require(config, "simulate", "decay_time_law")))
    traces = bool(config.get("simulate", {}).get("traces", False))
    if seed_override is not None:
        config = dict(config)
        config["simulate"] = dict(config["simulate"], seed=seed)
    metadata = _metadata(config, "simulate")
    lines = _metadata_lines(metadata)
    # Distinct counter-RNG keys per prepared state keep the ensembles independent.
    for prepared, state_seed in (
        (Prepared.DOWN, seed % _SEED_MODULUS),
        (Prepared.UP, (seed + 1) % _SEED_MODULUS),
    ):
        sim = SimConfig(
            model=model, errors=errors, shots=shots, seed=state_seed, decay_time_law=law
        )
        _simulate_one(prepared, sim, traces, threads, out, lines)


def cmd_fit(config: dict, out: Path, seed_override: int | None) -> None:
    model = _model_from_config(config)
    section = config.get("fit", {})
    hist_down_path = section.get("hist_down") or out / "hist_down.csv"
    hist_up_path = section.get("hist_up") or out / "hist_up.csv"
    hist_down = read_histogram_csv(hist_down_path)
    hist_up = read_histogram_csv(hist_up_path)
    bootstrap = int(section.get("bootstrap", 0) or 0)
    result = fit(
        hist_down,
        hist_up,
        t_det=model.t_det,
        lifetime=model.lifetime,
        mode=str(section.get("mode", "joint")),
        bootstrap=bootstrap,
        bootstrap_seed=0 if seed_override is None else seed_override,
    )
    write_fit_json(result, out / "fit.json", metadata=_metadata(config, "fit"))
    print(f"converged: {result.converged} (log-likelihood {result.log_likelihood:.3f})")
    for name in ("mean_bright", "mean_dark", "eps_down_tot", "eps_up_tot"):
        print(
            f"  {name} = {getattr(result, name):.6g} "
            f"+/- {result.std_errors[name]:.2g}"
        )
    print(f"wrote {out / 'fit.json'}")


def cmd_tomo(config: dict, out: Path) -> None:
    section = config.get("tomo", {})
    records_path = section.get("records")
    if records_path is None:
        records = read_records_csv(_bundled("tomography_records.csv"))
    else:
        records = read_records_csv(records_path)
    mode = str(section.get("mode", "state"))
    if mode not in ("state", "process"):
        raise ValueError(f"tomo.mode must be 'state' or 'process', got {mode!r}")
    metadata = _metadata(config, "tomo")
    projections = projections_from_records(records)

    if mode == "state":
        fidelities = state_fidelities(projections)
        payload = {
            "projections": {
                label: [p.p_x, p.p_y, p.p_z] for label, p in projections.items()
            },
            "fidelities": fidelities,
            "metadata": metadata,
        }
        if all(label in fidelities for label in ("+z", "-z", "+x", "-x", "+y", "-y")):
            payload["average_fidelity"] = average_fidelity(fidelities)
            print(f"average state fidelity: {payload['average_fidelity']:.6f}")
        _write_json(payload, out / "state_fidelities.json")
        print(f"wrote {out / 'state_fidelities.json'}")
        return

    if bool(section.get("null_orthogonal", True)):
        projections = null_orthogonal_projections(projections)
    chi = chi_from_projections(projections)
    write_chi_json(chi, out / "chi.json", metadata=metadata)
    _write_json(
        {
            "process_fidelity": process_fidelity(chi),
            "min_eigenvalue": chi.min_eigenvalue,
            "trace_preservation_defect": trace_preservation_defect(chi),
            "physical": chi.is_physical(),
            "metadata": metadata,
        },
        out / "process.json",
    )
    theta = np.linspace(0.0, 180.0, int(section.get("theta_points", 181)))
    phi = np.linspace(0.0, 360.0, int(section.get("phi_points", 360)), endpoint=False)
    surface = bloch_error_surface(chi, theta, phi)
    write_surface_csv(*surface, out / "sphere_error.csv", _metadata_lines(metadata))
    print(f"process fidelity: {process_fidelity(chi):.6f} (physical: {chi.is_physical()})")
    print(f"wrote {out / 'chi.json'}, {out / 'process.json'}, {out / 'sphere_error.csv'}")


def cmd_budget(config: dict, out: Path) -> None:
    entries_path = config.get("budget", {}).get("entries")
    if entries_path is None:
        budgets = read_budget_json(_bundled("shelving_budget.json"))
    else:
        budgets = read_budget_json(entries_path)
    reports = {name: combine(entries) for name, entries in budgets.items()}
    write_report_json(reports, out / "budget_report.json", metadata=_metadata(config, "budget"))
    for name, report in reports.items():
        print(
            f"{name}: initialization {report.initialization_total:.4e}, "
            f"shelving {report.shelving_total:.4e}, overall {report.overall:.4e}"
        )
    print(f"wrote {out / 'budget_report.json'}")


# ---------------------------------------------------------------------------
# Entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shelveread",
        description="Shelving-readout modeling: optimize, simulate, fit, tomo, budget.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("optimize", "compute the error surface and the optimal window/threshold"),
        ("simulate", "generate photon-count histograms for both prepared states"),
        ("fit", "maximum-likelihood fit of a histogram pair"),
        ("tomo", "state or process tomography from projection records"),
        ("budget", "combine an error-budget configuration into totals"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", default=None, help="JSON config (default: bundled example)")
        cmd.add_argument("--out", default=".", help="output directory (default: current)")
        cmd.add_argument("--seed", type=int, default=None, help="override the configured RNG seed")
        cmd.add_argument("--threads", type=int, default=1, help="worker threads for simulation")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < _SEED_MODULUS:
            raise ValueError("--seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise ValueError("--threads must be >= 1")
        config = _load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "optimize":
            cmd_optimize(config, out)
        elif args.command == "simulate":
            cmd_simulate(config, out, args.seed, args.threads)
        elif args.command == "fit":
            cmd_fit(config, out, args.seed)
        elif args.command == "tomo":
            cmd_tomo(config, out)
        else:
            cmd_budget(config, out)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
