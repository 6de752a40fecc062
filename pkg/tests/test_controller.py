import calendar
import math
from datetime import date, timedelta

import numpy as np
import pytest

from oracles import long_window_lp
from ptxsched.controller import (
    LEDGER_COLUMNS,
    Horizon,
    HorizonPlan,
    LedgerEntry,
    MarketData,
    NonpositiveF,
    RampWindowLP,
    SimulationConfig,
    SimulationLedger,
    ZeroTarget,
    _plan_for,
    apply_f,
    balance_f,
    estimate_daily_flh,
    horizon_averages,
    horizon_target,
    ramp_limits,
    run_simulation,
)
from ptxsched.errors import CoverageError, DataError, IncompleteLedger, InsufficientHistory
from ptxsched.forecasting import ForecastPair
from ptxsched.marketdata import HourlySeries, Unit
from ptxsched.technologies import build_technology
from ptxsched.timeutil import epoch_hour

MONTH = HorizonPlan(Horizon.MONTHLY, 300.0, 30)
ISSUE = epoch_hour(date(2019, 3, 1), 10)
FREE = {
    "electrolyzer.ramp_up": None,
    "electrolyzer.ramp_down": None,
    "electrolyzer.ramp_start_up": None,
    "electrolyzer.min_up_time": 0,
}


def window(price, intensity=None, hist_hours=682):
    """Split a 720 h cost profile into history ending at ISSUE and a 38 h forecast."""
    price = np.asarray(price, float)
    intensity = price if intensity is None else np.asarray(intensity, float)
    start = ISSUE - hist_hours
    hist = MarketData(
        HourlySeries(start, price[:hist_hours], Unit.EUR_PER_MWH),
        HourlySeries(start, intensity[:hist_hours], Unit.G_PER_KWH),
    )
    fc = ForecastPair(
        HourlySeries(ISSUE, price[hist_hours:], Unit.EUR_PER_MWH),
        HourlySeries(ISSUE, intensity[hist_hours:], Unit.G_PER_KWH),
        ISSUE,
    )
    return hist, fc


def flat_market(start: date, days: int, price=40.0, intensity=200.0) -> MarketData:
    h0 = epoch_hour(start)
    return MarketData(
        HourlySeries(h0, np.full(days * 24, price), Unit.EUR_PER_MWH),
        HourlySeries(h0, np.full(days * 24, intensity), Unit.G_PER_KWH),
    )


# --- f ratio -----------------------------------------------------------------


def test_balance_f_worked_example():
    plan = HorizonPlan(Horizon.MONTHLY, 300.0, 30, 11)
    done = [12.0] * 10  # 120 FLH in 10 days
    assert balance_f(done, plan) == pytest.approx(320 / 300, abs=1e-12)


def test_balance_f_on_pace():
    plan = HorizonPlan(Horizon.MONTHLY, 300.0, 30)
    assert balance_f([10.0] * 7, plan) == pytest.approx(1.0, abs=1e-12)


def test_balance_f_completed_horizon():
    rng = np.random.default_rng(0)
    done = rng.uniform(0, 24, 365)
    done *= 6000 / done.sum()
    assert abs(balance_f(done, HorizonPlan(Horizon.YEARLY, 6000.0, 365)) - 1.0) <= 1e-9


def test_balance_f_accepts_ledger_entries():
    entries = [LedgerEntry(date(2019, 1, i + 1), 10, 9.0, 1, 0, 0, 1, 1) for i in range(3)]
    assert balance_f(entries, MONTH) == balance_f([9.0] * 3, MONTH)


def test_balance_f_errors():
    with pytest.raises(ValueError):
        balance_f([], MONTH)
    with pytest.raises(ValueError):
        balance_f([1.0] * 31, MONTH)
    with pytest.raises(ZeroTarget):
        balance_f([0.0], HorizonPlan(Horizon.MONTHLY, 0.0, 30))


def test_apply_f():
    assert apply_f(10.0, 1.0) == 10.0
    assert apply_f(10.0, 0.8) == pytest.approx(12.5, abs=1e-12)
    assert apply_f(10.0, 1.25) == pytest.approx(8.0, abs=1e-12)
    assert apply_f(20.0, 0.5, bounds=(0.0, 24.0)) == 24.0
    with pytest.raises(NonpositiveF):
        apply_f(10.0, 0.0)


# --- plans and targets --------------------------------------------------------


def test_horizon_plan_validation():
    with pytest.raises(ValueError):
        HorizonPlan(Horizon.MONTHLY, -1.0, 30)
    with pytest.raises(ValueError):
        HorizonPlan(Horizon.MONTHLY, 10.0, 30, 31)
    assert HorizonPlan(Horizon.DAILY, 16.43, 1).uniform == 16.43
    assert MONTH.uniform == 10.0


def test_horizon_targets():
    assert horizon_target(Horizon.YEARLY, 6000, date(2019, 5, 1)) == 6000
    assert horizon_target(Horizon.MONTHLY, 6000, date(2019, 2, 1)) == pytest.approx(6000 * 28 / 365)
    assert horizon_target(Horizon.DAILY, 6000, date(2020, 2, 1)) == pytest.approx(6000 / 366)
    total = sum(horizon_target(Horizon.MONTHLY, 6000, date(2019, m, 1)) for m in range(1, 13))
    assert total == pytest.approx(6000)


def test_partial_horizon_is_pro_rated():
    cfg = SimulationConfig(Horizon.MONTHLY, 0.5, flh=310.0)
    plan = _plan_for(cfg, date(2019, 1, 12), date(2019, 1, 10), date(2019, 3, 31))
    assert (plan.n_days, plan.day_index) == (22, 3)
    assert plan.flh_target == pytest.approx(220.0)
    full = _plan_for(cfg, date(2019, 2, 5), date(2019, 1, 10), date(2019, 3, 31))
    assert (full.flh_target, full.n_days, full.day_index) == (310.0, 28, 5)


def test_config_needs_one_budget():
    with pytest.raises(ValueError):
        SimulationConfig(Horizon.YEARLY, 0.5)
    with pytest.raises(ValueError):
        SimulationConfig(Horizon.YEARLY, 0.5, flh=1, flh_per_year=1)
    with pytest.raises(ValueError):
        SimulationConfig(Horizon.YEARLY, 1.5, flh=1)


# --- long-window estimate -----------------------------------------------------


def test_flat_window_gives_uniform_estimate():
    hist, fc = window(np.full(720, 40.0))
    assert estimate_daily_flh(hist, fc, MONTH, 0.5) == pytest.approx(10.0, abs=1e-12)
    net = build_technology("electrolyzer")
    assert estimate_daily_flh(hist, fc, MONTH, 0.5, network=net) == pytest.approx(10.0, abs=1e-12)


def test_cheap_next_day_gets_more():
    cost = np.full(720, 50.0)
    cost[-24:] = 20.0
    hist, fc = window(cost)
    assert estimate_daily_flh(hist, fc, MONTH, 0.0) > MONTH.uniform


def test_three_cheap_days_match_lp_oracle():
    rng = np.random.default_rng(4)
    cost = rng.uniform(40, 60, 720)
    days = [3, 17, 29]  # day 29 is the delivery day (last 24 h)
    for d in days:
        cost[24 * d : 24 * d + 24] = rng.uniform(5, 15, 24)
    hist, fc = window(cost)
    budget = 300.0
    ref = long_window_lp(cost, budget)
    np.testing.assert_allclose(ref.reshape(30, 24).sum(axis=1)[days], 24.0, atol=1e-7)
    got = estimate_daily_flh(hist, fc, MONTH, 0.0)
    assert got == pytest.approx(ref[-24:].sum(), abs=1e-7)


def test_ramp_limited_window_matches_lp_oracle():
    rng = np.random.default_rng(5)
    cost = rng.uniform(40, 60, 720)
    cost[-30:-6] = 5.0
    hist, fc = window(cost)
    net = build_technology("electrolyzer")
    up, down = ramp_limits(net)
    assert (up, down) == (0.3, 0.3)
    ref = long_window_lp(cost, 300.0, up, down)
    got = estimate_daily_flh(hist, fc, MONTH, 0.0, network=net)
    assert got == pytest.approx(ref[-24:].sum(), abs=1e-6)
    # a warm-started solver gives the same answer on a second window
    solver = RampWindowLP(up, down)
    estimate_daily_flh(*window(cost[::-1]), MONTH, 0.0, solver=solver)
    assert estimate_daily_flh(hist, fc, MONTH, 0.0, solver=solver) == pytest.approx(got, abs=1e-6)


def test_estimate_preconditions():
    hist, fc = window(np.full(720, 40.0))
    with pytest.raises(InsufficientHistory):
        estimate_daily_flh(*window(np.full(700, 40.0), hist_hours=662), MONTH, 0.5)
    with pytest.raises(ValueError):
        estimate_daily_flh(hist, fc, HorizonPlan(Horizon.DAILY, 10, 1), 0.5)
    with pytest.raises(DataError):
        estimate_daily_flh(hist.window(ISSUE - 700, 690), fc, MONTH, 0.5)


# --- simulation ---------------------------------------------------------------


def test_daily_saturated_budget(market_2019):
    net = build_technology("electrolyzer", FREE)
    first, last = date(2019, 4, 1), date(2019, 4, 3)
    led = run_simulation(market_2019, net, SimulationConfig(Horizon.DAILY, 0.3, flh=24.0), first, last)
    assert [e.flh_scheduled for e in led.entries] == [24.0] * 3
    window_prices = market_2019.price.window(epoch_hour(first), 72).values
    assert sum(e.realized_cost for e in led.entries) == pytest.approx(window_prices.sum(), rel=1e-12)
    assert {e.provenance for e in led.entries} == {"fixed"}
    assert all(e.f_value == 1.0 for e in led.entries)


def test_monthly_flat_data_is_uniform():
    data = flat_market(date(2018, 12, 1), 70)
    cfg = SimulationConfig(Horizon.MONTHLY, 0.5, flh=310.0)
    led = run_simulation(data, build_technology("electrolyzer"), cfg, date(2019, 1, 1), date(2019, 1, 31))
    np.testing.assert_allclose([e.flh_scheduled for e in led.entries], 10.0, atol=1e-9)
    assert led.total_flh == pytest.approx(310.0, abs=1e-9)
    prov = [e.provenance for e in led.entries]
    assert prov[:29] == ["warmup"] * 29 and prov[29:] == ["controller"] * 2


def test_daily_mode_never_uses_controller(market_2019):
    cfg = SimulationConfig(Horizon.DAILY, 0.5, flh=16.43)
    led = run_simulation(market_2019, build_technology("electrolyzer"), cfg, date(2019, 1, 1), date(2019, 1, 5))
    assert all(e.provenance == "fixed" and e.flh_requested == 16.43 for e in led.entries)


@pytest.fixture(scope="module")
def yearly_run(market_2019):
    cfg = SimulationConfig(Horizon.YEARLY, 0.5, flh=6000.0)
    return run_simulation(market_2019, build_technology("electrolyzer"), cfg, date(2019, 1, 1), date(2019, 12, 31))


def test_yearly_budget_and_f_trajectory(yearly_run):
    assert len(yearly_run) == 365
    assert abs(yearly_run.total_flh - 6000) / 6000 <= 0.02
    f = yearly_run.f_values()[30:]
    assert f.min() >= 0.8 and f.max() <= 1.2


def test_scheduled_within_feasible_range(yearly_run):
    flh = np.array([e.flh_scheduled for e in yearly_run.entries])
    assert flh.min() >= 0.0 and flh.max() <= 24.0
    assert all(e.clamped or e.flh_scheduled == pytest.approx(min(max(e.flh_requested, 0), 24), abs=1e-9)
               for e in yearly_run.entries)


def test_simulation_is_deterministic(market_2019):
    cfg = SimulationConfig(Horizon.MONTHLY, 0.7, flh_per_year=5000)
    net = build_technology("electrolyzer")
    a = run_simulation(market_2019, net, cfg, date(2019, 2, 1), date(2019, 3, 10))
    b = run_simulation(market_2019, net, cfg, date(2019, 2, 1), date(2019, 3, 10))
    assert a.entries == b.entries


def test_model_forecast_mode_runs(market_2019):
    cfg = SimulationConfig(Horizon.DAILY, 0.5, forecast_mode="model", flh=12.0)
    led = run_simulation(market_2019, build_technology("electrolyzer"), cfg, date(2019, 6, 1), date(2019, 6, 2))
    assert [e.flh_scheduled for e in led.entries] == [12.0, 12.0]


def test_simulation_coverage(market_2019):
    cfg = SimulationConfig(Horizon.DAILY, 0.5, flh=10.0)
    net = build_technology("electrolyzer")
    with pytest.raises(CoverageError):
        run_simulation(market_2019, net, cfg, date(2019, 12, 30), date(2020, 1, 10))
    with pytest.raises(CoverageError):
        run_simulation(market_2019, net, cfg, date(2018, 1, 1), date(2018, 1, 3))


def test_ledger_csv(tmp_path, market_2019):
    cfg = SimulationConfig(Horizon.DAILY, 0.5, flh=10.0)
    led = run_simulation(market_2019, build_technology("electrolyzer"), cfg, date(2019, 1, 1), date(2019, 1, 2))
    led.to_csv(tmp_path / "ledger.csv")
    lines = (tmp_path / "ledger.csv").read_text().splitlines()
    assert lines[0] == ",".join(LEDGER_COLUMNS)
    assert lines[0] == "date,flh_requested,flh_scheduled,f,realized_cost_eur,realized_co2_g,mean_price_paid,mean_intensity"
    assert len(lines) == 3 and lines[1].startswith("2019-01-01,10.000000000,10.000000000,1.000000000000,")
    e = led.entries[0]
    assert e.mean_price_paid == pytest.approx(e.realized_cost / 10.0)


# --- horizon averages ---------------------------------------------------------


def _entries(start: date, values):
    return [LedgerEntry(start + timedelta(days=i), v, v, 1.0, 0.0, 0.0, 1.0, 1.0) for i, v in enumerate(values)]


def test_constant_month_average():
    entries = _entries(date(2019, 4, 1), [10.0] * 30)
    avg = horizon_averages(entries, strict=False)
    assert avg.monthly == {(2019, 4): 10.0}
    assert avg.yearly == {}
    with pytest.raises(IncompleteLedger, match="2019 has 30 of 365"):
        horizon_averages(entries)


def test_year_of_16_43():
    avg = horizon_averages(_entries(date(2019, 1, 1), [16.43] * 365))
    assert avg.yearly[2019] == pytest.approx(16.43, abs=1e-12)
    assert all(v == pytest.approx(16.43) for v in avg.monthly.values())


def test_averages_match_independent_mean():
    vals = np.random.default_rng(3).uniform(0, 24, 365)
    avg = horizon_averages(_entries(date(2019, 1, 1), vals))
    assert avg.yearly[2019] == pytest.approx(np.mean(vals), rel=1e-12)
    start = 0
    for m in range(1, 13):
        n = calendar.monthrange(2019, m)[1]
        assert avg.monthly[(2019, m)] == pytest.approx(np.mean(vals[start : start + n]), rel=1e-12)
        start += n


def test_incomplete_ledgers():
    with pytest.raises(IncompleteLedger):
        horizon_averages([])
    with pytest.raises(IncompleteLedger):
        horizon_averages(_entries(date(2019, 4, 2), [10.0] * 29))
    with pytest.raises(IncompleteLedger):
        horizon_averages(_entries(date(2019, 4, 1), [1.0]) * 2)
    avg = horizon_averages(_entries(date(2019, 4, 2), [10.0] * 40), strict=False)
    assert avg.monthly == {}
    assert math.isnan(SimulationLedger(Horizon.YEARLY, 0.5, 1.0).mean_price)
