"""Compositional error budget for two-pulse shelving plus initialization.

The shelving transfer uses two consecutive pulses, so a shot is lost to a
transfer error only if *both* pulses fail: per-pulse error sources are
summed within each pulse and the two sums are multiplied.  Error sources
that bypass this redundancy (off-resonance excitation of the wrong state,
decay of the shelved level during the sequence) act once per shot and are
added after the product, as are all initialization errors.

Budget rows are data, not physics: values come from apparatus-specific
measurements supplied by the user, and a worked example configuration
ships with the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "PulseGroup",
    "BudgetEntry",
    "BudgetReport",
    "combine",
    "read_budget_json",
    "write_budget_json",
    "write_report_json",
    "read_report_json",
]


class PulseGroup(Enum):
    """Which part of the sequence an error source belongs to."""

    PULSE1 = "pulse1"
    PULSE2 = "pulse2"
    SHARED = "shared"  # spans both pulses; never enters the product
    INITIALIZATION = "initialization"


@dataclass(frozen=True)
class BudgetEntry:
    """One error source: label, sequence position, probability."""

    source: str
    pulse: PulseGroup
    value: float
    excluded_from_product: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.pulse, PulseGroup):
            object.__setattr__(self, "pulse", PulseGroup(self.pulse))
        if not (np.isfinite(self.value) and self.value >= 0.0):
            raise ValueError(f"value must be a finite probability >= 0, got {self.value}")
        if self.pulse is PulseGroup.SHARED:
            # Shared sources act once per shot regardless of pulse redundancy.
            object.__setattr__(self, "excluded_from_product", True)


@dataclass(frozen=True)
class BudgetReport:
    """Combined totals; overall is always the exact sum of the two parts."""

    initialization_total: float
    shelving_total: float
    overall: float | None = None

    def __post_init__(self) -> None:
        for name in ("initialization_total", "shelving_total"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0.0):
                raise ValueError(f"{name} must be >= 0, got {value}")
        expected = self.initialization_total + self.shelving_total
        if self.overall is None:
            object.__setattr__(self, "overall", expected)
        elif self.overall != expected:
            raise ValueError(
                f"overall must equal initialization_total + shelving_total "
                f"({expected}), got {self.overall}"
            )


def combine(entries: Iterable[BudgetEntry]) -> BudgetReport:
    """Apply the two-pulse combination rule to a list of budget entries.

    shelving_total = (sum of pulse-1 sources) * (sum of pulse-2 sources)
    + the sum of all excluded/shared sources.  If only one pulse group has
    non-excluded sources the product degenerates to that group's sum (a
    single-pulse sequence), and with neither it is zero.  Initialization
    entries are purely additive.
    """
    entries = list(entries)
    initialization = 0.0
    pulse_sums = {PulseGroup.PULSE1: 0.0, PulseGroup.PULSE2: 0.0}
    pulse_present = {PulseGroup.PULSE1: False, PulseGroup.PULSE2: False}
    excluded = 0.0
    for entry in entries:
        if entry.pulse is PulseGroup.INITIALIZATION:
            initialization += entry.value
        elif entry.excluded_from_product:
            excluded += entry.value
        else:
            pulse_sums[entry.pulse] += entry.value
            pulse_present[entry.pulse] = True

    if pulse_present[PulseGroup.PULSE1] and pulse_present[PulseGroup.PULSE2]:
        product = pulse_sums[PulseGroup.PULSE1] * pulse_sums[PulseGroup.PULSE2]
    elif pulse_present[PulseGroup.PULSE1]:
        product = pulse_sums[PulseGroup.PULSE1]
    elif pulse_present[PulseGroup.PULSE2]:
        product = pulse_sums[PulseGroup.PULSE2]
    else:
        product = 0.0
    return BudgetReport(
        initialization_total=initialization, shelving_total=product + excluded
    )


# ---------------------------------------------------------------------------
# JSON interchange


def _entry_from_dict(raw: Mapping) -> BudgetEntry:
    return BudgetEntry(
        source=raw["source"],
        pulse=PulseGroup(raw["pulse"]),
        value=raw["value"],
        excluded_from_product=raw.get("excluded_from_product", False),
    )


def _entry_to_dict(entry: BudgetEntry) -> dict:
    return {
        "source": entry.source,
        "pulse": entry.pulse.value,
        "value": entry.value,
        "excluded_from_product": entry.excluded_from_product,
    }


def read_budget_json(path) -> dict[str, list[BudgetEntry]]:
    """Load budget configurations, one entry list per named budget.

    The file holds either an object mapping budget names (e.g. prepared
    states) to entry lists, or a bare entry list, which is keyed "budget".
    """
    payload = json.loads(Path(path).read_text())
    if isinstance(payload, list):
        payload = {"budget": payload}
    if not isinstance(payload, dict):
        raise ValueError("budget JSON must be an object or a list of entries")
    payload.pop("metadata", None)
    budgets: dict[str, list[BudgetEntry]] = {}
    for name, raw_entries in payload.items():
        if not isinstance(raw_entries, list):
            raise ValueError(f"budget {name!r} must map to a list of entries")
        budgets[name] = [_entry_from_dict(raw) for raw in raw_entries]
    return budgets


def write_budget_json(
    budgets: Mapping[str, list[BudgetEntry]], path, metadata: dict | None = None
) -> None:
    payload: dict = {
        name: [_entry_to_dict(entry) for entry in entries]
        for name, entries in budgets.items()
    }
    if metadata is not None:
        payload["metadata"] = metadata
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def write_report_json(
    reports: Mapping[str, BudgetReport], path, metadata: dict | None = None
) -> None:
    payload: dict = {
        name: {
            "initialization_total": report.initialization_total,
            "shelving_total": report.shelving_total,
            "overall": report.overall,
        }
        for name, report in reports.items()
    }
    if metadata is not None:
        payload["metadata"] = metadata
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def read_report_json(path) -> dict[str, BudgetReport]:
    payload = json.loads(Path(path).read_text())
    payload.pop("metadata", None)
    return {
        name: BudgetReport(
            initialization_total=raw["initialization_total"],
            shelving_total=raw["shelving_total"],
            overall=raw["overall"],
        )
        for name, raw in payload.items()
    }
