"""Consumption-based CO2 intensity by flow tracing.

Each area's inflow (local generation plus imports) is treated as perfectly
mixed, and exports leave at that mixed intensity. For one hour this gives
the linear system

    q_a * (G_a + sum_b F_ba) - sum_b F_ba * q_b = sum_t G_at * e_t

over all areas, where ``F`` are net flows (opposing gross flows between a
pair are netted first).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ptxsched.errors import DataError, SingularSystem
from ptxsched.marketdata import EmissionFactorTable, GridSnapshot, HourlySeries, Unit
from ptxsched.timeutil import format_epoch_hour

RESIDUAL_RTOL = 1e-8


@dataclass(frozen=True)
class IntensityResult:
    areas: tuple[str, ...]
    start_epoch_hour: int
    intensity: np.ndarray  # (area, hour), gCO2/kWh
    residual: np.ndarray  # (hour,), max relative residual of the linear solve

    def series(self, area: str) -> HourlySeries:
        try:
            i = self.areas.index(area)
        except ValueError:
            raise DataError(f"unknown area {area!r}") from None
        return HourlySeries(self.start_epoch_hour, self.intensity[i], Unit.G_PER_KWH)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp_utc", "area", "intensity_gco2_kwh"])
            for h in range(self.intensity.shape[1]):
                ts = format_epoch_hour(self.start_epoch_hour + h)
                for a, area in enumerate(self.areas):
                    w.writerow([ts, area, repr(float(self.intensity[a, h]))])


def net_flows(flows: np.ndarray) -> np.ndarray:
    """Net opposing gross flows: ``F_ab = max(f_ab - f_ba, 0)``."""
    return np.maximum(flows - flows.T, 0.0)


def _solve_hour(gen: np.ndarray, flows: np.ndarray, cons: np.ndarray, factors: np.ndarray):
    n = gen.shape[0]
    F = net_flows(flows)
    local_gen = gen.sum(axis=1)
    inflow = local_gen + F.sum(axis=0)
    emissions = gen @ factors

    dark = inflow <= 0.0
    if np.any(dark & (cons > 0)):
        bad = np.flatnonzero(dark & (cons > 0))
        raise DataError(f"area index {bad.tolist()} consumes energy but has no inflow")

    M = np.diag(inflow) - F.T
    rhs = emissions.copy()
    # dark areas: q = 0 by convention, and they export nothing
    M[dark, :] = 0.0
    M[dark, dark] = 1.0
    rhs[dark] = 0.0

    # cyclic flow with no injection leaves the system rank deficient
    scale = max(float(np.abs(M).max()), 1.0)
    if np.linalg.cond(M / scale) > 1e12:
        raise SingularSystem("flow-tracing system is singular (cycle without injection?)")
    q = np.linalg.solve(M, rhs)
    ref = np.maximum(np.abs(M) @ np.abs(q) + np.abs(rhs), 1e-300)
    residual = float(np.max(np.abs(M @ q - rhs) / ref)) if n else 0.0
    return q, residual


def trace_intensity(snapshot: GridSnapshot, factors: EmissionFactorTable, hour: int) -> np.ndarray:
    """Per-area intensity (gCO2/kWh) for one epoch hour, ordered as ``snapshot.areas``."""
    h = snapshot.hour_index(hour)
    e = factors.vector(snapshot.technologies)
    try:
        q, residual = _solve_hour(
            snapshot.generation[:, :, h], snapshot.flows[:, :, h], snapshot.consumption[:, h], e
        )
    except DataError as exc:
        raise exc.with_context(format_epoch_hour(hour))
    if residual > RESIDUAL_RTOL:
        raise SingularSystem(f"{format_epoch_hour(hour)}: residual {residual:.3g} too large")
    return np.maximum(q, 0.0)


def trace_all(snapshot: GridSnapshot, factors: EmissionFactorTable) -> IntensityResult:
    """Solve every hour of the snapshot independently."""
    e = factors.vector(snapshot.technologies)
    q = np.zeros((len(snapshot.areas), snapshot.n_hours))
    res = np.zeros(snapshot.n_hours)
    for h in range(snapshot.n_hours):
        try:
            q[:, h], res[h] = _solve_hour(
                snapshot.generation[:, :, h], snapshot.flows[:, :, h], snapshot.consumption[:, h], e
            )
        except DataError as exc:
            raise exc.with_context(format_epoch_hour(snapshot.start_epoch_hour + h))
        if res[h] > RESIDUAL_RTOL:
            stamp = format_epoch_hour(snapshot.start_epoch_hour + h)
            raise SingularSystem(f"{stamp}: residual {res[h]:.3g} too large")
    # roundoff can leave tiny negatives in areas fed only by clean sources
    np.maximum(q, 0.0, out=q)
    return IntensityResult(snapshot.areas, snapshot.start_epoch_hour, q, res)


def intensity_series(snapshot: GridSnapshot, factors: EmissionFactorTable, area: str) -> HourlySeries:
    return trace_all(snapshot, factors).series(area)
