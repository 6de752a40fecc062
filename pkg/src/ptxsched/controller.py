"""Spreading a full-load-hour budget over a month or a year.

Each day at the issue hour the controller

1. estimates tomorrow's share of the budget by solving a stretched
   dispatch problem over trailing history plus the fresh forecast,
2. measures how far the horizon is ahead of or behind pace (``f``),
3. divides the estimate by ``f`` and hands it to the daily scheduler.

Daily horizons skip all of this and request the same FLH every day.
"""

from __future__ import annotations

import calendar
import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from enum import Enum
from pathlib import Path

import highspy
import numpy as np
from scipy import sparse

from ptxsched.errors import (
    CoverageError,
    DataError,
    IncompleteLedger,
    InsufficientHistory,
    PtxError,
    SolverError,
)
from ptxsched.forecasting import HORIZON, ForecastPair, forecast, ideal_forecast
from ptxsched.marketdata import HourlySeries
from ptxsched.scheduler import HOURS, DayProblem, PlantState, realize_day, schedule_day
from ptxsched.technologies import Normalization, TechnologyNetwork, weighted_marginal_cost
from ptxsched.timeutil import epoch_hour

logger = logging.getLogger(__name__)

ISSUE_HOUR = 10  # forecasts and decisions for D+1 are made at 10:00 on D
BID_GATE_HOUR = 12  # bids are timestamped at the 12:00 gate
NORM_HOURS = 28 * 24
# 28 d 10 h of history + 38 h of forecast = 30 days
MONTH_WINDOW_HISTORY = 28 * 24 + ISSUE_HOUR
YEAR_WINDOW_HOURS = 365 * 24
WARMUP_DAYS = 29
TIE_RTOL = 1e-12


class Horizon(str, Enum):
    DAILY = "daily"
    MONTHLY = "monthly"
    YEARLY = "yearly"


class ForecastMode(str, Enum):
    MODEL = "model"
    IDEAL = "ideal"


class ZeroTarget(ValueError):
    """Balancing is undefined for a zero budget; ``f`` is taken as 1."""


class NonpositiveF(ValueError):
    pass


@dataclass(frozen=True)
class HorizonPlan:
    """Budget bookkeeping for the horizon containing the day being planned.

    ``flh_target`` is the horizon's total FLH (per day for daily plans) and
    ``day_index`` the 1-based position of the day being planned.
    """

    horizon: Horizon
    flh_target: float
    n_days: int
    day_index: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "horizon", Horizon(self.horizon))
        if not self.flh_target >= 0:
            raise ValueError(f"flh_target must be >= 0, got {self.flh_target}")
        if self.n_days < 1 or not 1 <= self.day_index <= self.n_days:
            raise ValueError(f"day_index {self.day_index} outside 1..{self.n_days}")

    @property
    def uniform(self) -> float:
        """FLH per day if the budget were spread evenly."""
        return self.flh_target if self.horizon is Horizon.DAILY else self.flh_target / self.n_days


@dataclass(frozen=True)
class MarketData:
    """Aligned realized price and intensity series."""

    price: HourlySeries
    intensity: HourlySeries

    def __post_init__(self) -> None:
        self.price.require_complete()
        self.intensity.require_complete()
        if (self.price.start_epoch_hour, len(self.price)) != (
            self.intensity.start_epoch_hour,
            len(self.intensity),
        ):
            raise DataError("price and intensity series must cover the same hours")

    @property
    def start_epoch_hour(self) -> int:
        return self.price.start_epoch_hour

    @property
    def end_epoch_hour(self) -> int:
        return self.price.end_epoch_hour

    def window(self, start: int, length: int) -> MarketData:
        return MarketData(self.price.window(start, length), self.intensity.window(start, length))


@dataclass(frozen=True)
class LedgerEntry:
    day: date
    flh_requested: float
    flh_scheduled: float
    f_value: float
    realized_cost: float  # EUR, electricity only
    realized_co2: float  # g, electricity only
    price_ref: float
    intensity_ref: float
    # "controller", "warmup" (first days of a run) or "fixed" (daily horizons)
    provenance: str = "controller"
    clamped: bool = False
    fuel_cost: float = 0.0
    fuel_co2: float = 0.0
    energy_mwh: float = 0.0

    @property
    def mean_price_paid(self) -> float:
        return self.realized_cost / self.energy_mwh if self.energy_mwh > 0 else math.nan

    @property
    def mean_intensity(self) -> float:
        """gCO2/kWh of the purchased electricity."""
        return self.realized_co2 / (self.energy_mwh * 1000.0) if self.energy_mwh > 0 else math.nan


LEDGER_COLUMNS = [
    "date",
    "flh_requested",
    "flh_scheduled",
    "f",
    "realized_cost_eur",
    "realized_co2_g",
    "mean_price_paid",
    "mean_intensity",
]


@dataclass
class SimulationLedger:
    horizon: Horizon
    alpha: float
    p_nom: float
    entries: list[LedgerEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def total_flh(self) -> float:
        return float(sum(e.flh_scheduled for e in self.entries))

    @property
    def total_energy(self) -> float:
        return float(sum(e.energy_mwh for e in self.entries))

    @property
    def mean_price(self) -> float:
        """Energy-weighted electricity price paid, EUR/MWh."""
        energy = self.total_energy
        return sum(e.realized_cost for e in self.entries) / energy if energy > 0 else math.nan

    @property
    def mean_intensity(self) -> float:
        """Energy-weighted CO2 intensity of purchases, gCO2/kWh."""
        energy = self.total_energy
        return sum(e.realized_co2 for e in self.entries) / (energy * 1000.0) if energy > 0 else math.nan

    def f_values(self) -> np.ndarray:
        return np.array([e.f_value for e in self.entries])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LEDGER_COLUMNS)
            for e in self.entries:
                w.writerow(
                    [
                        e.day.isoformat(),
                        f"{e.flh_requested:.9f}",
                        f"{e.flh_scheduled:.9f}",
                        f"{e.f_value:.12f}",
                        f"{e.realized_cost:.6f}",
                        f"{e.realized_co2:.3f}",
                        f"{e.mean_price_paid:.6f}",
                        f"{e.mean_intensity:.6f}",
                    ]
                )


def _allocate(cost: np.ndarray, budget: float) -> np.ndarray:
    """Cheapest-first fill of unit-capacity hours; hours tied at the margin share evenly.

    This is the exact optimum of ``min cost @ x`` s.t. ``sum x = budget``,
    ``0 <= x <= 1``, and the even split makes it unique.
    """
    n = cost.size
    budget = min(max(budget, 0.0), float(n))
    x = np.zeros(n)
    if budget == 0.0:
        return x
    order = np.argsort(cost, kind="stable")
    k = int(math.floor(budget))
    if k >= n:
        return np.ones(n)
    marginal = cost[order[k]]
    tol = TIE_RTOL * max(1.0, abs(marginal))
    below = cost < marginal - tol
    tied = np.abs(cost - marginal) <= tol
    x[below] = 1.0
    rest = budget - below.sum()
    x[tied] = rest / tied.sum()
    return x


def ramp_limits(network: TechnologyNetwork | None) -> tuple[float, float]:
    """Per-hour up/down limits of the grid converter in FLH units, commitment relaxed.

    With on/off status continuous, a unit may always move by the looser of
    its running and start/stop ramps.
    """
    if network is None:
        return 1.0, 1.0
    conv = network.converters[network.grid_converter]
    up = max(conv.ramp_up_mw, conv.start_up_mw) / conv.p_nom
    down = max(conv.ramp_down_mw, conv.shut_down_mw) / conv.p_nom
    return min(up, 1.0), min(down, 1.0)


class RampWindowLP:
    """``min cost @ x`` s.t. ``sum x = budget``, ``0 <= x <= 1`` and hourly ramp limits.

    One HiGHS model is kept per window length; successive days only change
    the costs and the budget, so each solve starts from the previous basis.
    """

    def __init__(self, up: float, down: float) -> None:
        self.up, self.down = up, down
        self._models: dict[int, highspy.Highs] = {}

    def _model(self, n: int) -> highspy.Highs:
        if n in self._models:
            return self._models[n]
        diff = sparse.diags([np.ones(n - 1), -np.ones(n - 1)], [1, 0], shape=(n - 1, n))
        A = sparse.vstack([diff, sparse.csr_matrix(np.ones((1, n)))]).tocsc()
        lp = highspy.HighsLp()
        lp.num_col_, lp.num_row_ = n, A.shape[0]
        lp.col_cost_ = np.zeros(n)
        lp.col_lower_, lp.col_upper_ = np.zeros(n), np.ones(n)
        lp.row_lower_ = np.r_[np.full(n - 1, -self.down), 0.0]
        lp.row_upper_ = np.r_[np.full(n - 1, self.up), 0.0]
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.start_, lp.a_matrix_.index_, lp.a_matrix_.value_ = A.indptr, A.indices, A.data
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.passModel(lp)
        self._models[n] = h
        return h

    def solve(self, cost: np.ndarray, budget: float) -> np.ndarray:
        n = cost.size
        budget = min(max(budget, 0.0), float(n))
        # the knapsack optimum is also optimal here whenever it respects the ramps
        x = _allocate(cost, budget)
        steps = np.diff(x)
        if n < 2 or (steps.max(initial=0) <= self.up + 1e-12 and -steps.min(initial=0) <= self.down + 1e-12):
            return x
        h = self._model(n)
        h.changeColsCost(n, np.arange(n, dtype=np.int32), np.asarray(cost, dtype=float))
        h.changeRowBounds(n - 1, budget, budget)
        h.run()
        if h.getModelStatus() != highspy.HighsModelStatus.kOptimal:
            raise SolverError(f"long-window LP: {h.modelStatusToString(h.getModelStatus())}")
        return np.clip(np.array(h.getSolution().col_value), 0.0, 1.0)


def estimate_daily_flh(
    history: MarketData,
    forecast_pair: ForecastPair,
    plan: HorizonPlan,
    alpha: float,
    norm: Normalization = Normalization(),
    network: TechnologyNetwork | None = None,
    solver: RampWindowLP | None = None,
) -> float:
    """Raw FLH estimate for the day after the issue day.

    The dispatch problem is stretched over ``history`` followed by the
    forecast, with the horizon budget scaled to the window length. On/off
    binaries are relaxed; the grid converter's ramp limits are kept when a
    ``network`` (or a prepared ``solver``) is given. The FLH landing in the
    last 24 hours are returned.
    """
    if plan.horizon is Horizon.DAILY:
        raise ValueError("daily plans do not use the long-window estimate")
    if history.end_epoch_hour != forecast_pair.issued_at:
        raise DataError("history must end at the forecast issue hour")
    if len(history.price) < MONTH_WINDOW_HISTORY:
        raise InsufficientHistory(
            f"need {MONTH_WINDOW_HISTORY} h of history, got {len(history.price)}"
        )
    price = np.concatenate([history.price.values, forecast_pair.price.values])
    intensity = np.concatenate([history.intensity.values, forecast_pair.intensity.values])
    cost = weighted_marginal_cost(alpha, price, intensity, norm)
    budget = plan.flh_target * (cost.size / HOURS) / plan.n_days
    solver = solver or RampWindowLP(*ramp_limits(network))
    x = solver.solve(cost, budget)
    return float(x[-HOURS:].sum())


def balance_f(scheduled_flh, plan: HorizonPlan) -> float:
    """Pace ratio over the days already scheduled in the horizon.

    ``scheduled_flh`` holds the FLH of days 1..n and
    ``f = (sum + (N - n)/N * target) / target``.
    """
    done = np.asarray(
        [e.flh_scheduled if isinstance(e, LedgerEntry) else e for e in scheduled_flh], dtype=float
    )
    n, N = done.size, plan.n_days
    if n < 1:
        raise ValueError("balance_f needs at least one scheduled day")
    if n > N:
        raise ValueError(f"{n} scheduled days exceed the horizon length {N}")
    if plan.flh_target == 0:
        raise ZeroTarget("flh_target is 0")
    G = plan.flh_target
    return (done.sum() + (N - n) / N * G) / G


def apply_f(raw_estimate: float, f: float, bounds: tuple[float, float] | None = None) -> float:
    """Correct an estimate by ``1/f``, then clamp to ``bounds`` (FLH) if given."""
    if not f > 0:
        raise NonpositiveF(f"f must be > 0, got {f}")
    value = raw_estimate / f
    if bounds is not None:
        value = min(max(value, bounds[0]), bounds[1])
    return value


def _horizon_span(day: date, horizon: Horizon) -> tuple[date, date]:
    if horizon is Horizon.DAILY:
        return day, day
    if horizon is Horizon.MONTHLY:
        last = calendar.monthrange(day.year, day.month)[1]
        return day.replace(day=1), day.replace(day=last)
    return date(day.year, 1, 1), date(day.year, 12, 31)


def horizon_target(horizon: Horizon, flh_year: float, day: date) -> float:
    """Default horizon budget from a yearly FLH figure (daily: per day)."""
    days_in_year = 366 if calendar.isleap(day.year) else 365
    if horizon is Horizon.DAILY:
        return flh_year / days_in_year
    if horizon is Horizon.MONTHLY:
        return flh_year * calendar.monthrange(day.year, day.month)[1] / days_in_year
    return flh_year


@dataclass(frozen=True)
class SimulationConfig:
    """Run settings.

    ``flh`` is the budget per horizon: per day for daily, per calendar month
    for monthly, per calendar year for yearly. When ``flh_per_year`` is set
    instead, each horizon's budget is derived from it pro rata.
    """

    horizon: Horizon
    alpha: float
    forecast_mode: ForecastMode = ForecastMode.IDEAL
    flh: float | None = None
    flh_per_year: float | None = None
    warmup_days: int = WARMUP_DAYS

    def __post_init__(self) -> None:
        object.__setattr__(self, "horizon", Horizon(self.horizon))
        object.__setattr__(self, "forecast_mode", ForecastMode(self.forecast_mode))
        if (self.flh is None) == (self.flh_per_year is None):
            raise ValueError("give exactly one of flh and flh_per_year")
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    def target(self, day: date) -> float:
        if self.flh is not None:
            return self.flh
        return horizon_target(self.horizon, self.flh_per_year, day)


def _plan_for(cfg: SimulationConfig, day: date, first: date, last: date) -> HorizonPlan:
    """Plan for ``day``; horizons cut by the run span get a pro-rated budget."""
    h0, h1 = _horizon_span(day, cfg.horizon)
    full_days = (h1 - h0).days + 1
    lo, hi = max(h0, first), min(h1, last)
    n_days = (hi - lo).days + 1
    target = cfg.target(day)
    if cfg.horizon is not Horizon.DAILY and n_days < full_days:
        target *= n_days / full_days
    return HorizonPlan(cfg.horizon, target, n_days, (day - lo).days + 1)


def _norm_at(data: MarketData, issue: int) -> Normalization:
    start = max(data.start_epoch_hour, issue - NORM_HOURS)
    if issue - start < HOURS:
        # too little past data: normalize on what is known ahead
        return Normalization.from_history(
            data.price.window(issue, HOURS).values, data.intensity.window(issue, HOURS).values
        )
    w = data.window(start, issue - start)
    return Normalization.from_history(w.price.values, w.intensity.values)


def _forecast_at(data: MarketData, issue: int, mode: ForecastMode) -> ForecastPair:
    if mode is ForecastMode.IDEAL:
        return ideal_forecast(data.price, data.intensity, issue, HORIZON)
    start = data.start_epoch_hour
    hist = data.window(start, issue - start)
    return forecast(hist.price, hist.intensity, issue, HORIZON)


def run_simulation(
    data: MarketData,
    tech: TechnologyNetwork,
    cfg: SimulationConfig,
    first_day: date,
    last_day: date,
    state: PlantState | None = None,
) -> SimulationLedger:
    """Schedule every delivery day from ``first_day`` to ``last_day`` inclusive.

    The decision for day ``d`` is taken at ``ISSUE_HOUR`` on ``d - 1``;
    realized prices and intensities of ``d`` then price the purchases.
    """
    if last_day < first_day:
        raise ValueError("last_day precedes first_day")
    need_end = epoch_hour(last_day + timedelta(days=1))
    if data.end_epoch_hour < need_end:
        raise CoverageError(f"data end before the end of {last_day.isoformat()}")
    first_issue = epoch_hour(first_day - timedelta(days=1), ISSUE_HOUR)
    if data.start_epoch_hour > first_issue:
        raise CoverageError(f"data must start by the first issue hour ({first_day - timedelta(days=1)} 10:00)")

    p_nom = tech.p_nom
    ledger = SimulationLedger(cfg.horizon, cfg.alpha, p_nom)
    state = state or PlantState.initial(tech)
    window_history = (
        YEAR_WINDOW_HOURS - HORIZON if cfg.horizon is Horizon.YEARLY else MONTH_WINDOW_HISTORY
    )
    window_lp = RampWindowLP(*ramp_limits(tech))
    horizon_done: list[float] = []
    current_span = None

    day = first_day
    while day <= last_day:
        issue = epoch_hour(day - timedelta(days=1), ISSUE_HOUR)
        run_day = (day - first_day).days
        try:
            plan = _plan_for(cfg, day, first_day, last_day)
            span = _horizon_span(day, cfg.horizon)
            if span != current_span:
                current_span, horizon_done = span, []
            norm = _norm_at(data, issue)
            fc = _forecast_at(data, issue, cfg.forecast_mode)
            f = 1.0
            if cfg.horizon is Horizon.DAILY:
                request, provenance = plan.flh_target, "fixed"
            elif run_day < cfg.warmup_days:
                request, provenance = plan.uniform, "warmup"
            else:
                start = max(data.start_epoch_hour, issue - window_history)
                raw = estimate_daily_flh(
                    data.window(start, issue - start), fc, plan, cfg.alpha, norm, solver=window_lp
                )
                if horizon_done and plan.flh_target > 0:
                    f = balance_f(horizon_done, plan)
                request, provenance = apply_f(raw, f), "controller"

            g_request = min(max(request, 0.0), float(HOURS)) * p_nom
            day_fc = fc.window(epoch_hour(day), HOURS)
            problem = DayProblem(
                day_fc,
                G_E=g_request,
                alpha=cfg.alpha,
                network=tech,
                g_prev=state.levels[tech.grid_converter],
                norm=norm,
                state=state,
            )
            sched = schedule_day(problem, clamp=True)
            cost, co2 = realize_day(sched, data.price, data.intensity)
        except PtxError as exc:
            raise exc.with_context(day.isoformat())

        flh = sched.G_E / p_nom
        horizon_done.append(flh)
        ledger.entries.append(
            LedgerEntry(
                day=day,
                flh_requested=request,
                flh_scheduled=flh,
                f_value=f,
                realized_cost=cost,
                realized_co2=co2,
                price_ref=norm.price_ref,
                intensity_ref=norm.intensity_ref,
                provenance=provenance,
                clamped=sched.clamped,
                fuel_cost=sched.fuel_cost,
                fuel_co2=sched.fuel_co2,
                energy_mwh=float(sched.market.sum()),
            )
        )
        logger.info(
            "%s: requested %.4f FLH, scheduled %.4f (f=%.4f, %s)", day, request, flh, f, provenance
        )
        state = sched.end_state
        day += timedelta(days=1)
    return ledger


@dataclass(frozen=True)
class HorizonAverages:
    monthly: dict[tuple[int, int], float]
    yearly: dict[int, float]


def horizon_averages(ledger: SimulationLedger | list[LedgerEntry], *, strict: bool = True) -> HorizonAverages:
    """Mean scheduled FLH per day for every calendar month and year in the ledger.

    With ``strict`` every month and year touched by the ledger must be fully
    covered; otherwise partially covered periods are skipped.
    """
    entries = ledger.entries if isinstance(ledger, SimulationLedger) else list(ledger)
    if not entries:
        raise IncompleteLedger("ledger is empty")
    by_day = {}
    for e in entries:
        if e.day in by_day:
            raise IncompleteLedger(f"duplicate ledger day {e.day}")
        by_day[e.day] = e.flh_scheduled

    months: dict[tuple[int, int], list[float]] = {}
    years: dict[int, list[float]] = {}
    for d, v in by_day.items():
        months.setdefault((d.year, d.month), []).append(v)
        years.setdefault(d.year, []).append(v)

    monthly, yearly = {}, {}
    for (y, m), vals in sorted(months.items()):
        n = calendar.monthrange(y, m)[1]
        if len(vals) == n:
            monthly[(y, m)] = math.fsum(vals) / n
        elif strict:
            raise IncompleteLedger(f"{y}-{m:02d} has {len(vals)} of {n} days")
    for y, vals in sorted(years.items()):
        n = 366 if calendar.isleap(y) else 365
        if len(vals) == n:
            yearly[y] = math.fsum(vals) / n
        elif strict:
            raise IncompleteLedger(f"{y} has {len(vals)} of {n} days")
    return HorizonAverages(monthly, yearly)
