"""Day-ahead dispatch of a power-to-X plant for the 24 delivery hours of D+1.

The plant buys ``G_E`` MWh over the day, minimising the weighted blend of
normalised price and CO2 intensity, subject to ramp, min-up-time, store
and heat-balance constraints. Index 0 of the returned dispatch is the
previous day's last hour (continuity slot) and is neither costed nor
counted against the budget.

Commitment model per converter with a binary ``u``::

    m*u_i <= g_i <= p*u_i
    g_i - g_{i-1} <= RU*u_{i-1} + RSU*(1 - u_{i-1})      (start-up ramp)
    g_{i-1} - g_i <= RD*u_i     + RSD*(1 - u_i)          (shut-down ramp)
    u_i - u_{i-1} <= u_j   for j in (i, i + MU)          (min up time)

``m`` is a small positive floor so that "on" and "g > 0" coincide.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ptxsched.errors import CoverageError, DataError, Infeasible, SolverError
from ptxsched.forecasting import ForecastPair
from ptxsched.marketdata import HourlySeries, Unit
from ptxsched.milp import MILP, solve_milp
from ptxsched.technologies import (
    ConverterParams,
    Kind,
    Normalization,
    TechnologyNetwork,
    boiler_cost,
    weighted_marginal_cost,
)
from ptxsched.timeutil import format_epoch_hour

logger = logging.getLogger(__name__)

HOURS = 24
# a committed unit runs at least this fraction of p_nom
ON_FRACTION = 1e-3
# secondary objective weight on sum(i * g_i): prefer earlier hours among ties
TIE_BREAK = 1e-9
AUDIT_TOL = 1e-6


def _is_on(g, conv: ConverterParams):
    return np.asarray(g) > 0.5 * ON_FRACTION * conv.p_nom


@dataclass(frozen=True)
class PlantState:
    """Carry-over between days: last dispatch, current on-run length, store levels."""

    levels: dict[str, float]
    up_hours: dict[str, int]
    store_levels: dict[str, float]

    @classmethod
    def initial(cls, network: TechnologyNetwork, g_prev: float = 0.0) -> PlantState:
        levels = {name: 0.0 for name in network.converters}
        levels[network.grid_converter] = float(g_prev)
        # a unit already running is assumed to have served its minimum up time
        up = {
            name: (conv.min_up_time if _is_on(levels[name], conv) else 0)
            for name, conv in network.converters.items()
        }
        stores = {name: s.initial_level for name, s in network.stores.items()}
        return cls(levels, up, stores)


def day_forecast(price, intensity, start_epoch_hour: int = 0) -> ForecastPair:
    """Wrap two 24-value arrays as a forecast for one delivery day."""
    return ForecastPair(
        HourlySeries(start_epoch_hour, price, Unit.EUR_PER_MWH),
        HourlySeries(start_epoch_hour, intensity, Unit.G_PER_KWH),
        start_epoch_hour,
    )


@dataclass(frozen=True)
class DayProblem:
    forecast: ForecastPair
    G_E: float
    alpha: float
    network: TechnologyNetwork
    g_prev: float = 0.0
    norm: Normalization = Normalization()
    state: PlantState | None = None
    # restrict the grid converter to multiples of this many MW
    dispatch_step: float | None = None

    def __post_init__(self) -> None:
        if len(self.forecast.price) != HOURS:
            raise DataError(f"day problem needs a {HOURS}-hour forecast, got {len(self.forecast.price)}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        p = self.network.p_nom
        if not -AUDIT_TOL <= self.G_E <= HOURS * p + AUDIT_TOL:
            raise ValueError(f"G_E={self.G_E} outside [0, {HOURS * p}]")
        if not -AUDIT_TOL <= self.g_prev <= p + AUDIT_TOL:
            raise ValueError(f"g_prev={self.g_prev} outside [0, {p}]")
        if self.state is None:
            object.__setattr__(self, "state", PlantState.initial(self.network, self.g_prev))
        elif abs(self.state.levels[self.network.grid_converter] - self.g_prev) > 1e-12:
            raise ValueError("g_prev disagrees with the plant state")

    @property
    def start_epoch_hour(self) -> int:
        return self.forecast.issued_at

    @property
    def composite(self) -> np.ndarray:
        return weighted_marginal_cost(
            self.alpha, self.forecast.price.values, self.forecast.intensity.values, self.norm
        )


@dataclass(frozen=True)
class DaySchedule:
    g: np.ndarray  # 25 values, MW; g[0] is the continuity slot
    b: np.ndarray  # 24 values, boiler fuel MWh (zeros without a boiler)
    dispatch: dict[str, np.ndarray]
    store_level: dict[str, np.ndarray]
    objective: float
    forecast_cost: float
    forecast_co2: float
    composite: np.ndarray
    start_epoch_hour: int
    G_E: float
    end_state: PlantState
    fuel_cost: float = 0.0
    fuel_co2: float = 0.0
    clamped: bool = False
    nodes: int = field(default=0, compare=False)

    @property
    def market(self) -> np.ndarray:
        """Purchases for the 24 delivery hours."""
        return self.g[1:]

    def write_bids(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp_utc", "quantity_mwh", "composite_marginal_cost"])
            for i in range(HOURS):
                w.writerow(
                    [
                        format_epoch_hour(self.start_epoch_hour + i),
                        f"{self.g[i + 1]:.6f}",
                        f"{self.composite[i]:.9f}",
                    ]
                )


class _Model:
    """Row/column bookkeeping for one day's MILP."""

    def __init__(self) -> None:
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.integer: list[bool] = []
        self.scale: list[float] = []
        self.ub_rows: list[tuple[dict[int, float], float]] = []
        self.eq_rows: list[tuple[dict[int, float], float]] = []

    def add(self, n: int, lb: float, ub: float, integer: bool = False, scale: float = 1.0) -> np.ndarray:
        start = len(self.lb)
        self.lb += [lb / scale] * n
        self.ub += [ub / scale] * n
        self.integer += [integer] * n
        self.scale += [scale] * n
        return np.arange(start, start + n)

    def le(self, coefs: dict[int, float], rhs: float) -> None:
        self.ub_rows.append((coefs, rhs))

    def eq(self, coefs: dict[int, float], rhs: float) -> None:
        self.eq_rows.append((coefs, rhs))

    def _matrix(self, rows):
        n = len(self.lb)
        A = np.zeros((len(rows), n))
        b = np.zeros(len(rows))
        scale = np.asarray(self.scale)
        for r, (coefs, rhs) in enumerate(rows):
            for j, v in coefs.items():
                A[r, j] += v * scale[j]
            b[r] = rhs
        return A, b

    def build(self, cost: np.ndarray) -> MILP:
        A_ub, b_ub = self._matrix(self.ub_rows)
        A_eq, b_eq = self._matrix(self.eq_rows)
        return MILP(
            cost * np.asarray(self.scale),
            A_ub,
            b_ub,
            A_eq,
            b_eq,
            np.asarray(self.lb),
            np.asarray(self.ub),
            np.asarray(self.integer),
        )

    def value(self, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
        return x[idx] * np.asarray(self.scale)[idx]


def _add_converter(m: _Model, conv: ConverterParams, g0: float, up0: int, step: float | None):
    """Dispatch columns and technical rows for one converter; returns (g, u) indices."""
    p = conv.p_nom
    if step is None:
        g = m.add(HOURS, 0.0, p)
    else:
        g = m.add(HOURS, 0.0, step * np.floor(p / step + 1e-9), integer=True, scale=step)
    RU, RD, RSU, RSD = conv.ramp_up_mw, conv.ramp_down_mw, conv.start_up_mw, conv.shut_down_mw

    if not conv.needs_commitment:
        for i in range(HOURS):
            if RU < p:
                m.le({g[i]: 1.0, **({g[i - 1]: -1.0} if i else {})}, RU + (g0 if i == 0 else 0.0))
            if RD < p:
                m.le({g[i]: -1.0, **({g[i - 1]: 1.0} if i else {})}, RD - (g0 if i == 0 else 0.0))
        return g, None

    u = m.add(HOURS, 0.0, 1.0, integer=True)
    u0 = 1.0 if _is_on(g0, conv) else 0.0
    floor = max(conv.min_part_load, ON_FRACTION) * p
    for i in range(HOURS):
        m.le({g[i]: 1.0, u[i]: -p}, 0.0)
        m.le({u[i]: floor, g[i]: -1.0}, 0.0)
        if RU < p or RSU < p:
            if i == 0:
                m.le({g[0]: 1.0}, RSU + g0 + (RU - RSU) * u0)
            else:
                m.le({g[i]: 1.0, g[i - 1]: -1.0, u[i - 1]: -(RU - RSU)}, RSU)
        if RD < p or RSD < p:
            if i == 0:
                m.le({g[0]: -1.0, u[0]: -(RD - RSD)}, RSD - g0)
            else:
                m.le({g[i - 1]: 1.0, g[i]: -1.0, u[i]: -(RD - RSD)}, RSD)

    mu = conv.min_up_time
    if mu > 1:
        for i in range(HOURS):
            for j in range(i + 1, min(i + mu, HOURS)):
                if i == 0:
                    m.le({u[0]: 1.0, u[j]: -1.0}, u0)
                else:
                    m.le({u[i]: 1.0, u[i - 1]: -1.0, u[j]: -1.0}, 0.0)
        if u0 and up0 < mu:
            for j in range(min(mu - up0, HOURS)):
                m.lb[u[j]] = 1.0
    return g, u


def _build(problem_network: TechnologyNetwork, state: PlantState, step: float | None):
    net = problem_network
    m = _Model()
    cols: dict[str, np.ndarray] = {}
    for name, conv in net.converters.items():
        grid = name == net.grid_converter
        g, _ = _add_converter(m, conv, state.levels[name], state.up_hours[name], step if grid else None)
        cols[name] = g

    stores: dict[str, np.ndarray] = {}
    if net.kind is Kind.METHANATION:
        el, re = net.converters["electrolyzer"], "methanation"
        st = net.stores["h2_store"]
        s = m.add(HOURS, 0.0, st.capacity)
        for i in range(HOURS):
            row = {s[i]: 1.0, cols["electrolyzer"][i]: -el.efficiency, cols[re][i]: 1.0 / st.efficiency}
            if i:
                row[s[i - 1]] = -1.0
            m.eq(row, state.store_levels["h2_store"] if i == 0 else 0.0)
        stores["h2_store"] = s
    elif net.kind is Kind.HEATPUMP:
        hp, bo = net.converters["heat_pump"], net.converters["boiler"]
        st = net.stores["heat_store"]
        s = m.add(HOURS, 0.0, st.capacity)
        charge = m.add(HOURS, 0.0, np.inf)
        discharge = m.add(HOURS, 0.0, np.inf)
        for i in range(HOURS):
            m.eq(
                {
                    cols["heat_pump"][i]: hp.efficiency,
                    cols["boiler"][i]: bo.efficiency,
                    discharge[i]: 1.0,
                    charge[i]: -1.0,
                },
                net.heat_load,
            )
            row = {s[i]: 1.0, charge[i]: -1.0, discharge[i]: 1.0 / st.efficiency}
            if i:
                row[s[i - 1]] = -1.0
            m.eq(row, state.store_levels["heat_store"] if i == 0 else 0.0)
        stores["heat_store"] = s
    return m, cols, stores


def _solve(m: _Model, cost: np.ndarray):
    return solve_milp(m.build(cost))


def feasible_energy_bounds(
    network: TechnologyNetwork,
    g_prev: float = 0.0,
    state: PlantState | None = None,
    dispatch_step: float | None = None,
) -> tuple[float, float]:
    """Least and most energy (MWh) the grid converter can buy over the next day."""
    state = state or PlantState.initial(network, g_prev)
    m, cols, _ = _build(network, state, dispatch_step)
    g = cols[network.grid_converter]
    out = []
    for sign in (1.0, -1.0):
        cost = np.zeros(len(m.lb))
        cost[g] = sign
        res = _solve(m, cost)
        if res is None:
            raise Infeasible("plant cannot operate over the day at any energy level", "technical")
        out.append(float(m.value(res.x, g).sum()))
    lo, hi = out
    return max(lo, 0.0), hi


def _end_state(net: TechnologyNetwork, state: PlantState, dispatch, store_level) -> PlantState:
    levels, up = {}, {}
    for name, conv in net.converters.items():
        d = dispatch[name]
        on = _is_on(d, conv)
        levels[name] = float(d[-1]) if on[-1] else 0.0
        if on.all():
            up[name] = state.up_hours[name] + HOURS
        else:
            up[name] = int(HOURS - 1 - np.flatnonzero(~on)[-1])
    return PlantState(levels, up, {k: float(v[-1]) for k, v in store_level.items()})


def schedule_day(problem: DayProblem, *, clamp: bool = False) -> DaySchedule:
    """Optimal purchases for the delivery day.

    With ``clamp=False`` an unreachable ``G_E`` raises :class:`Infeasible`;
    with ``clamp=True`` it is moved to the nearest achievable energy and a
    warning is logged.
    """
    net, state = problem.network, problem.state
    grid = net.grid_converter
    m, cols, stores = _build(net, state, problem.dispatch_step)
    g = cols[grid]

    composite = problem.composite
    cost = np.zeros(len(m.lb))
    cost[g] = composite + TIE_BREAK * np.arange(1, HOURS + 1)
    fuel_weight = 0.0
    if net.kind is Kind.HEATPUMP:
        fuel_weight = boiler_cost(problem.alpha, net.fuel, problem.norm)
        cost[cols["boiler"]] = fuel_weight

    G_E, clamped = problem.G_E, False
    m.eq({j: 1.0 for j in g}, G_E)
    res = _solve(m, cost)
    if res is None:
        lo, hi = feasible_energy_bounds(net, problem.g_prev, state, problem.dispatch_step)
        if lo - AUDIT_TOL <= G_E <= hi + AUDIT_TOL:
            raise Infeasible(
                f"no dispatch meets ramp/min-up/store limits with G_E={G_E:.6g}", "technical"
            )
        if not clamp:
            raise Infeasible(
                f"G_E={G_E:.6g} MWh outside achievable range [{lo:.6g}, {hi:.6g}]", "energy budget"
            )
        G_E = min(max(G_E, lo), hi)
        logger.warning("clamping daily energy %.6g -> %.6g MWh", problem.G_E, G_E)
        clamped = True
        m.eq_rows[-1] = ({j: 1.0 for j in g}, G_E)
        res = _solve(m, cost)
        if res is None:
            raise Infeasible(f"clamped G_E={G_E:.6g} is still infeasible", "technical")

    dispatch = {name: m.value(res.x, idx) for name, idx in cols.items()}
    if problem.dispatch_step is not None:
        dispatch[grid] = problem.dispatch_step * np.round(dispatch[grid] / problem.dispatch_step)
    dispatch = {k: np.clip(v, 0.0, net.converters[k].p_nom) for k, v in dispatch.items()}
    store_level = {name: m.value(res.x, idx) for name, idx in stores.items()}
    gm = dispatch[grid]
    b = dispatch["boiler"] if net.kind is Kind.HEATPUMP else np.zeros(HOURS)

    price = problem.forecast.price.values
    intensity = problem.forecast.intensity.values
    sched = DaySchedule(
        g=np.concatenate([[problem.g_prev], gm]),
        b=b,
        dispatch=dispatch,
        store_level=store_level,
        objective=float(composite @ gm + fuel_weight * b.sum()),
        forecast_cost=float(gm @ price),
        forecast_co2=float(gm @ intensity * 1000.0),
        composite=composite,
        start_epoch_hour=problem.start_epoch_hour,
        G_E=G_E,
        end_state=_end_state(net, state, dispatch, store_level),
        fuel_cost=float(b.sum() * net.fuel.price) if net.fuel else 0.0,
        fuel_co2=float(b.sum() * net.fuel.emission * 1000.0) if net.fuel else 0.0,
        clamped=clamped,
        nodes=res.nodes,
    )
    problems = audit_schedule(replace(problem, G_E=G_E), sched)
    if problems:
        raise SolverError("solution failed audit: " + "; ".join(problems))
    return sched


def audit_schedule(problem: DayProblem, sched: DaySchedule, tol: float = AUDIT_TOL) -> list[str]:
    """Check a schedule against every constraint family; returns violations."""
    net, state = problem.network, problem.state
    issues = []
    if sched.g.shape != (HOURS + 1,):
        return [f"g has shape {sched.g.shape}, expected {(HOURS + 1,)}"]
    if sched.g[0] != problem.g_prev:
        issues.append(f"g[0]={sched.g[0]} != g_prev={problem.g_prev}")
    if abs(sched.market.sum() - problem.G_E) > tol:
        issues.append(f"budget: sum g = {sched.market.sum():.9g} != {problem.G_E:.9g}")

    for name, conv in net.converters.items():
        d = sched.dispatch[name]
        if (d < -tol).any() or (d > conv.p_nom + tol).any():
            issues.append(f"{name}: dispatch outside [0, {conv.p_nom}]")
        g0 = state.levels[name]
        full = np.concatenate([[g0], d])
        on = _is_on(full, conv)
        if on[1:].any() and conv.min_part_load > 0:
            low = d[on[1:]] < conv.min_part_load * conv.p_nom - tol
            if low.any():
                issues.append(f"{name}: below minimum part load")
        for i in range(1, HOURS + 1):
            step = full[i] - full[i - 1]
            if not conv.needs_commitment:
                ok = step <= conv.ramp_up_mw + tol and -step <= conv.ramp_down_mw + tol
            elif on[i - 1] and on[i]:
                ok = step <= conv.ramp_up_mw + tol and -step <= conv.ramp_down_mw + tol
            elif on[i]:
                ok = full[i] <= conv.start_up_mw + tol
            elif on[i - 1]:
                ok = full[i - 1] <= conv.shut_down_mw + tol
            else:
                ok = True
            if not ok:
                issues.append(f"{name}: ramp violated entering hour {i} ({full[i - 1]:.6g} -> {full[i]:.6g})")
        mu = conv.min_up_time
        if mu > 1:
            run = state.up_hours[name] if on[0] else 0
            for i in range(1, HOURS + 1):
                if on[i]:
                    run += 1
                else:
                    if on[i - 1] and run < mu:
                        issues.append(f"{name}: on-run of {run} h ending before hour {i} < min up {mu}")
                    run = 0

    for name, levels in sched.store_level.items():
        cap = net.stores[name].capacity
        if (levels < -tol).any() or (levels > cap + tol).any():
            issues.append(f"{name}: level outside [0, {cap}]")

    if net.kind is Kind.METHANATION:
        st = net.stores["h2_store"]
        prev = np.concatenate([[state.store_levels["h2_store"]], sched.store_level["h2_store"][:-1]])
        inflow = net.converters["electrolyzer"].efficiency * sched.dispatch["electrolyzer"]
        expect = prev + inflow - sched.dispatch["methanation"] / st.efficiency
        if np.abs(expect - sched.store_level["h2_store"]).max() > tol:
            issues.append("h2_store: balance violated")
    elif net.kind is Kind.HEATPUMP:
        st = net.stores["heat_store"]
        level = sched.store_level["heat_store"]
        prev = np.concatenate([[state.store_levels["heat_store"]], level[:-1]])
        produced = (
            net.converters["heat_pump"].efficiency * sched.dispatch["heat_pump"]
            + net.converters["boiler"].efficiency * sched.dispatch["boiler"]
        )
        # net store exchange implied by the heat balance; infeasible if the
        # store would have to change by more than the level change allows
        surplus = produced - net.heat_load
        delta = level - prev
        # charge c and discharge d with c - d = surplus and delta = c - d/eta, c, d >= 0
        d = (surplus - delta) / (1.0 / st.efficiency - 1.0) if st.efficiency < 1 else None
        if d is None:
            if np.abs(delta - surplus).max() > tol:
                issues.append("heat balance violated")
        elif (d < -tol).any() or (surplus + d < -tol).any():
            issues.append("heat balance violated")
    return issues


def realize_day(schedule: DaySchedule, actual_price: HourlySeries, actual_intensity: HourlySeries) -> tuple[float, float]:
    """Realized electricity cost (EUR) and CO2 (g) of the scheduled purchases."""
    try:
        p = actual_price.window(schedule.start_epoch_hour, HOURS).values
        c = actual_intensity.window(schedule.start_epoch_hour, HOURS).values
    except CoverageError as exc:
        raise CoverageError(f"realized data: {exc}") from None
    g = schedule.market
    return float(g @ p), float(g @ c * 1000.0)
