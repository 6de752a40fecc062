"""Hourly market data: series container, grid snapshots and CSV ingestion.

CSV schemas (comma separated, header row required, UTC timestamps
formatted ``YYYY-MM-DDTHH:00Z``)::

    prices       timestamp_utc,price_eur_mwh
    generation   timestamp_utc,area,technology,generation_mwh
    flows        timestamp_utc,from_area,to_area,flow_mwh
    consumption  timestamp_utc,area,consumption_mwh
    intensity    timestamp_utc,area,intensity_gco2_kwh

Missing hours are an error unless ``allow_gaps=True``, in which case they
come back as NaN and can be repaired with :func:`fill_gaps`.
"""

from __future__ import annotations

import csv
import json
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import yaml

from ptxsched.errors import (
    CoverageError,
    DataError,
    GapDetected,
    GapTooLarge,
    MalformedRow,
    MissingFactor,
    UnitMismatch,
)
from ptxsched.timeutil import format_epoch_hour, parse_timestamp

logger = logging.getLogger(__name__)


class Unit(str, Enum):
    EUR_PER_MWH = "EUR/MWh"
    G_PER_KWH = "gCO2/kWh"
    MWH = "MWh"
    MW = "MW"


@dataclass(frozen=True, eq=False)
class HourlySeries:
    """Uniformly sampled hourly values; index ``i`` is ``start_epoch_hour + i``.

    NaN entries mark gaps. Most consumers call :meth:`require_complete`
    first; :func:`fill_gaps` is the only operation that expects them.
    """

    start_epoch_hour: int
    values: np.ndarray
    unit: Unit

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise DataError("HourlySeries needs a non-empty 1-D value array")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "unit", Unit(self.unit))
        object.__setattr__(self, "start_epoch_hour", int(self.start_epoch_hour))

    def __len__(self) -> int:
        return self.values.size

    @property
    def end_epoch_hour(self) -> int:
        """Exclusive end hour."""
        return self.start_epoch_hour + self.values.size

    @property
    def hours(self) -> np.ndarray:
        return np.arange(self.start_epoch_hour, self.end_epoch_hour)

    @property
    def has_gaps(self) -> bool:
        return bool(np.isnan(self.values).any())

    def require_complete(self) -> HourlySeries:
        if self.has_gaps:
            first = int(np.flatnonzero(np.isnan(self.values))[0])
            raise GapDetected(self.start_epoch_hour + first)
        return self

    def window(self, start: int, length: int) -> HourlySeries:
        """Sub-series covering ``[start, start + length)``."""
        lo = start - self.start_epoch_hour
        if length <= 0 or lo < 0 or lo + length > len(self):
            raise CoverageError(
                f"series covers {format_epoch_hour(self.start_epoch_hour)}.."
                f"{format_epoch_hour(self.end_epoch_hour)} (exclusive), "
                f"requested {length} h from {format_epoch_hour(start)}"
            )
        return HourlySeries(start, self.values[lo : lo + length], self.unit)

    def concat(self, other: HourlySeries) -> HourlySeries:
        self._check_unit(other)
        if other.start_epoch_hour != self.end_epoch_hour:
            raise CoverageError(
                f"cannot concatenate: next series starts at "
                f"{format_epoch_hour(other.start_epoch_hour)}, expected "
                f"{format_epoch_hour(self.end_epoch_hour)}"
            )
        return HourlySeries(
            self.start_epoch_hour, np.concatenate([self.values, other.values]), self.unit
        )

    def _check_unit(self, other: HourlySeries) -> None:
        if self.unit is not other.unit:
            raise UnitMismatch(f"{self.unit.value} vs {other.unit.value}")

    def _binary(self, other, op) -> HourlySeries:
        if isinstance(other, HourlySeries):
            self._check_unit(other)
            if (other.start_epoch_hour, len(other)) != (self.start_epoch_hour, len(self)):
                raise CoverageError("series are not aligned")
            return HourlySeries(self.start_epoch_hour, op(self.values, other.values), self.unit)
        return HourlySeries(self.start_epoch_hour, op(self.values, float(other)), self.unit)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, scalar: float) -> HourlySeries:
        if isinstance(scalar, HourlySeries):
            raise UnitMismatch("multiplying two series changes the unit; use .values")
        return HourlySeries(self.start_epoch_hour, self.values * float(scalar), self.unit)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if not isinstance(other, HourlySeries):
            return NotImplemented
        return (
            self.unit is other.unit
            and self.start_epoch_hour == other.start_epoch_hour
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    __hash__ = None


@dataclass(frozen=True)
class HourlyTable:
    """Keyed hourly values parsed from a long-format CSV (one row per key and hour)."""

    kind: str
    start_epoch_hour: int
    keys: tuple[tuple[str, ...], ...]
    values: np.ndarray  # shape (n_keys, n_hours)

    @property
    def n_hours(self) -> int:
        return self.values.shape[1]

    def series(self, *key: str, unit: Unit) -> HourlySeries:
        try:
            row = self.keys.index(tuple(key))
        except ValueError:
            raise DataError(f"{self.kind} table has no key {key!r}") from None
        return HourlySeries(self.start_epoch_hour, self.values[row], unit)


_SCHEMAS = {
    "price": (("timestamp_utc",), "price_eur_mwh"),
    "generation": (("timestamp_utc", "area", "technology"), "generation_mwh"),
    "flow": (("timestamp_utc", "from_area", "to_area"), "flow_mwh"),
    "consumption": (("timestamp_utc", "area"), "consumption_mwh"),
    "intensity": (("timestamp_utc", "area"), "intensity_gco2_kwh"),
}
_NONNEGATIVE = {"generation", "flow", "consumption", "intensity"}


def _read_rows(path: Path, kind: str):
    key_cols, value_col = _SCHEMAS[kind]
    expected = [*key_cols, value_col]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MalformedRow(path, 1, "empty file, header required") from None
        if header != expected:
            if header[:-1] == list(key_cols) and len(header) == len(expected):
                raise UnitMismatch(f"{path}: value column {header[-1]!r}, expected {value_col!r}")
            raise MalformedRow(path, 1, f"header {header} does not match {expected}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(expected):
                raise MalformedRow(path, lineno, f"expected {len(expected)} fields, got {len(row)}")
            try:
                hour = parse_timestamp(row[0])
                value = float(row[-1])
            except ValueError as exc:
                raise MalformedRow(path, lineno, str(exc)) from None
            if not np.isfinite(value):
                raise MalformedRow(path, lineno, f"non-finite value {row[-1]!r}")
            if kind in _NONNEGATIVE and value < 0:
                raise MalformedRow(path, lineno, f"negative {value_col} {value}")
            yield lineno, hour, tuple(c.strip() for c in row[1:-1]), value


def parse_market_csv(
    path: str | Path | Sequence[str | Path], kind: str, *, allow_gaps: bool = False
) -> HourlySeries | HourlyTable:
    """Read one CSV file (or several, merged) of the given ``kind``.

    Returns an :class:`HourlySeries` for ``kind="price"`` and an
    :class:`HourlyTable` otherwise. Rows may come in any order; the output
    is sorted by hour. Duplicate (key, hour) rows raise :class:`MalformedRow`;
    missing hours raise :class:`GapDetected` unless ``allow_gaps``.
    """
    if kind not in _SCHEMAS:
        raise DataError(f"unknown data kind {kind!r}; choose from {sorted(_SCHEMAS)}")
    paths = [path] if isinstance(path, (str, Path)) else list(path)
    cells: dict[tuple[str, ...], dict[int, float]] = {}
    for p in map(Path, paths):
        for lineno, hour, key, value in _read_rows(p, kind):
            slot = cells.setdefault(key, {})
            if hour in slot:
                raise MalformedRow(p, lineno, f"duplicate timestamp {format_epoch_hour(hour)}")
            slot[hour] = value
    if not cells:
        raise DataError(f"{paths}: no data rows")

    start = min(min(s) for s in cells.values())
    stop = max(max(s) for s in cells.values()) + 1
    keys = tuple(sorted(cells))
    values = np.full((len(keys), stop - start), np.nan)
    for r, key in enumerate(keys):
        for hour, v in cells[key].items():
            values[r, hour - start] = v
    if not allow_gaps and np.isnan(values).any():
        r, c = np.argwhere(np.isnan(values))[0]
        raise GapDetected(start + int(c), "/".join(keys[r]) or None)

    if kind == "price":
        return HourlySeries(start, values[0], Unit.EUR_PER_MWH)
    return HourlyTable(kind, start, keys, values)


def fill_gaps(series: HourlySeries, max_gap: int) -> HourlySeries:
    """Fill NaN runs by linear interpolation; edge runs take the nearest value.

    Raises :class:`GapTooLarge` if any run of missing hours exceeds
    ``max_gap``.
    """
    vals = np.array(series.values, dtype=float)
    missing = np.isnan(vals)
    if not missing.any():
        return series
    if missing.all():
        raise GapTooLarge("series has no observed values")
    # run lengths of consecutive NaNs
    edges = np.diff(np.concatenate([[0], missing.astype(int), [0]]))
    starts, stops = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    longest = int((stops - starts).max())
    if longest > max_gap:
        at = int(starts[np.argmax(stops - starts)])
        raise GapTooLarge(
            f"gap of {longest} h at {format_epoch_hour(series.start_epoch_hour + at)} "
            f"exceeds max_gap={max_gap}"
        )
    idx = np.arange(vals.size)
    # np.interp holds the end values constant outside the observed range
    vals[missing] = np.interp(idx[missing], idx[~missing], vals[~missing])
    return HourlySeries(series.start_epoch_hour, vals, series.unit)


def write_series_csv(series: HourlySeries, path: str | Path, value_column: str = "price_eur_mwh") -> None:
    """Write a series in the ingestion schema; ``repr`` keeps floats bit-exact."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp_utc", value_column])
        for h, v in zip(series.hours, series.values):
            w.writerow([format_epoch_hour(h), repr(float(v))])


def write_table_csv(table: HourlyTable, path: str | Path) -> None:
    key_cols, value_col = _SCHEMAS[table.kind]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*key_cols, value_col])
        for c in range(table.n_hours):
            ts = format_epoch_hour(table.start_epoch_hour + c)
            for r, key in enumerate(table.keys):
                w.writerow([ts, *key, repr(float(table.values[r, c]))])


@dataclass(frozen=True)
class EmissionFactorTable:
    """Technology name to gCO2/kWh."""

    factor: dict[str, float]

    def __post_init__(self) -> None:
        for tech, f in self.factor.items():
            if not np.isfinite(f) or f < 0:
                raise DataError(f"emission factor for {tech!r} must be >= 0, got {f}")

    def vector(self, technologies: Iterable[str]) -> np.ndarray:
        techs = list(technologies)
        missing = [t for t in techs if t not in self.factor]
        if missing:
            raise MissingFactor(f"no emission factor for {', '.join(missing)}")
        return np.array([self.factor[t] for t in techs], dtype=float)

    @classmethod
    def load(cls, path: str | Path) -> EmissionFactorTable:
        """Read a YAML or JSON mapping ``technology: gCO2/kWh``.

        A top-level ``factors`` key is accepted as a wrapper.
        """
        text = Path(path).read_text()
        doc = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        if isinstance(doc, dict) and "factors" in doc:
            doc = doc["factors"]
        if not isinstance(doc, dict):
            raise DataError(f"{path}: expected a mapping of technology to factor")
        return cls({str(k): float(v) for k, v in doc.items()})


@dataclass(frozen=True)
class GridSnapshot:
    """Per-area generation mix, inter-area flows and consumption over contiguous hours.

    Arrays are indexed ``generation[area, tech, hour]``,
    ``flows[from_area, to_area, hour]`` and ``consumption[area, hour]``.
    """

    areas: tuple[str, ...]
    technologies: tuple[str, ...]
    start_epoch_hour: int
    generation: np.ndarray
    flows: np.ndarray
    consumption: np.ndarray
    balance_flags: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        a, t = len(self.areas), len(self.technologies)
        h = self.generation.shape[-1]
        if self.generation.shape != (a, t, h):
            raise DataError(f"generation shape {self.generation.shape} != {(a, t, h)}")
        if self.flows.shape != (a, a, h) or self.consumption.shape != (a, h):
            raise DataError("flows/consumption shapes do not match areas and hours")
        for name in ("generation", "flows", "consumption"):
            arr = getattr(self, name)
            if np.isnan(arr).any() or (arr < 0).any():
                raise DataError(f"{name} must be finite and non-negative")
        if a and np.any(self.flows[np.arange(a), np.arange(a), :] != 0):
            raise DataError("flows from an area to itself must be zero")

    @property
    def n_hours(self) -> int:
        return self.generation.shape[-1]

    @property
    def hours(self) -> np.ndarray:
        return np.arange(self.start_epoch_hour, self.start_epoch_hour + self.n_hours)

    def balance_residual(self) -> np.ndarray:
        """Relative imbalance per (area, hour): (gen + imports - exports - consumption) / scale."""
        gen = self.generation.sum(axis=1)
        imports = self.flows.sum(axis=0)
        exports = self.flows.sum(axis=1)
        scale = np.maximum(np.maximum(gen + imports, self.consumption + exports), 1.0)
        return (gen + imports - exports - self.consumption) / scale

    def unbalanced_hours(self, rtol: float = 1e-6) -> list[int]:
        bad = np.abs(self.balance_residual()) > rtol
        return [int(self.start_epoch_hour + h) for h in np.flatnonzero(bad.any(axis=0))]

    def hour_index(self, hour: int) -> int:
        i = hour - self.start_epoch_hour
        if not 0 <= i < self.n_hours:
            raise CoverageError(f"snapshot does not cover {format_epoch_hour(hour)}")
        return i


def assemble_snapshot(
    generation: HourlyTable,
    flows: HourlyTable | None = None,
    consumption: HourlyTable | None = None,
    *,
    strict: bool = True,
    rtol: float = 1e-6,
) -> GridSnapshot:
    """Combine parsed generation/flow/consumption tables into a snapshot.

    Without a consumption table, consumption is derived from the balance.
    With one, unbalanced hours raise ``DataError`` when ``strict``; otherwise
    they are logged and listed in ``balance_flags``.
    """
    start, n = generation.start_epoch_hour, generation.n_hours
    for tbl in (flows, consumption):
        if tbl is not None and (tbl.start_epoch_hour, tbl.n_hours) != (start, n):
            raise CoverageError(f"{tbl.kind} table does not span the generation hours")

    areas = {k[0] for k in generation.keys}
    if flows is not None:
        areas |= {k[0] for k in flows.keys} | {k[1] for k in flows.keys}
    if consumption is not None:
        areas |= {k[0] for k in consumption.keys}
    areas = tuple(sorted(areas))
    techs = tuple(sorted({k[1] for k in generation.keys}))
    ai = {a: i for i, a in enumerate(areas)}
    ti = {t: i for i, t in enumerate(techs)}

    gen = np.zeros((len(areas), len(techs), n))
    for r, (area, tech) in enumerate(generation.keys):
        gen[ai[area], ti[tech]] = generation.values[r]
    flw = np.zeros((len(areas), len(areas), n))
    if flows is not None:
        for r, (src, dst) in enumerate(flows.keys):
            if src == dst:
                if np.any(flows.values[r] != 0):
                    raise DataError(f"self-flow for area {src!r}")
                continue
            flw[ai[src], ai[dst]] = flows.values[r]
    if consumption is None:
        cons = gen.sum(axis=1) + flw.sum(axis=0) - flw.sum(axis=1)
        if (cons < -rtol * np.maximum(gen.sum(axis=1) + flw.sum(axis=0), 1.0)).any():
            raise DataError("derived consumption is negative: exports exceed supply")
        cons = np.maximum(cons, 0.0)
    else:
        cons = np.zeros((len(areas), n))
        for r, (area,) in enumerate(consumption.keys):
            cons[ai[area]] = consumption.values[r]

    snap = GridSnapshot(areas, techs, start, gen, flw, cons)
    bad = snap.unbalanced_hours(rtol)
    if bad:
        msg = f"{len(bad)} hour(s) violate the energy balance, first {format_epoch_hour(bad[0])}"
        if strict:
            raise DataError(msg)
        logger.warning(msg)
        snap = GridSnapshot(areas, techs, start, gen, flw, cons, tuple(bad))
    return snap
