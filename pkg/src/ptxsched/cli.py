"""Command-line front end: ``ptxsched {trace,forecast,schedule-day,simulate,sweep}``.

Settings come from an optional YAML config document, then from flags.
Failures print one JSON line on stderr and exit with 2 (config), 3 (data)
or 4 (infeasible).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ptxsched import __version__
from ptxsched.carbon import trace_all
from ptxsched.controller import (
    ForecastMode,
    Horizon,
    MarketData,
    SimulationConfig,
    run_simulation,
)
from ptxsched.errors import ConfigError, DataError, PtxError
from ptxsched.forecasting import HORIZON, forecast
from ptxsched.marketdata import (
    EmissionFactorTable,
    HourlySeries,
    Unit,
    assemble_snapshot,
    fill_gaps,
    parse_market_csv,
)
from ptxsched.report import SweepRow, series_svg, tradeoff_svg, write_sweep_csv
from ptxsched.scheduler import HOURS, DayProblem, day_forecast, schedule_day
from ptxsched.technologies import Normalization, TechnologyNetwork, build_technology, flatten_config
from ptxsched.timeutil import format_epoch_hour, parse_timestamp

logger = logging.getLogger("ptxsched")

FORECAST_COLUMNS = ["timestamp_utc", "price_forecast", "intensity_forecast"]
DEFAULT_ALPHAS = [round(0.1 * k, 1) for k in range(11)]


@dataclass
class Settings:
    """Merged config document and command-line flags."""

    doc: dict[str, Any] = field(default_factory=dict)
    base: Path = Path(".")

    def section(self, name: str) -> dict[str, Any]:
        sec = self.doc.get(name) or {}
        if not isinstance(sec, dict):
            raise ConfigError(f"config section {name!r} must be a mapping")
        return sec

    def path(self, section: str, key: str, flag: str | None = None) -> Path:
        if flag:
            return Path(flag)
        value = self.section(section).get(key)
        if value is None:
            raise ConfigError(f"missing {section}.{key} (config) or the matching flag")
        p = Path(value)
        return p if p.is_absolute() else self.base / p


def _load_settings(path: str | None) -> Settings:
    if path is None:
        return Settings()
    p = Path(path)
    try:
        doc = yaml.safe_load(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {p} not found") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: {exc}") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{p}: expected a mapping at the top level")
    return Settings(doc, p.parent)


def _parse_set(items: list[str]) -> dict[str, Any]:
    out = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise ConfigError(f"--set expects name=value, got {item!r}")
        out[name.strip()] = value.strip()
    return out


def _technology(settings: Settings, args) -> TechnologyNetwork:
    doc = dict(settings.section("technology"))
    if args.tech:
        if doc.get("kind") not in (None, args.tech):
            doc = {}
        doc["kind"] = args.tech
    doc.setdefault("kind", "electrolyzer")
    kind, overrides = flatten_config(doc)
    overrides.update(_parse_set(args.set))
    return build_technology(kind, overrides)


def _series(path: Path, kind: str, area: str | None, max_gap: int | None) -> HourlySeries:
    allow = max_gap is not None
    if kind == "price":
        s = parse_market_csv(path, "price", allow_gaps=allow)
    else:
        table = parse_market_csv(path, "intensity", allow_gaps=allow)
        areas = [k[0] for k in table.keys]
        if area is None:
            if len(areas) != 1:
                raise ConfigError(f"{path} has areas {areas}; choose one with data.area or --area")
            area = areas[0]
        s = table.series(area, unit=Unit.G_PER_KWH)
    return fill_gaps(s, max_gap) if allow else s


def _market(settings: Settings, args) -> MarketData:
    data = settings.section("data")
    max_gap = data.get("max_gap")
    area = getattr(args, "area", None) or data.get("area")
    price = _series(settings.path("data", "price", getattr(args, "price", None)), "price", None, max_gap)
    intensity = _series(
        settings.path("data", "intensity", getattr(args, "intensity", None)), "intensity", area, max_gap
    )
    start = max(price.start_epoch_hour, intensity.start_epoch_hour)
    end = min(price.end_epoch_hour, intensity.end_epoch_hour)
    if end <= start:
        raise DataError("price and intensity files do not overlap")
    if (price.start_epoch_hour, len(price)) != (intensity.start_epoch_hour, len(intensity)):
        logger.warning(
            "using the common span %s .. %s of price and intensity",
            format_epoch_hour(start),
            format_epoch_hour(end - 1),
        )
    return MarketData(price.window(start, end - start), intensity.window(start, end - start))


def _out_dir(args, settings: Settings) -> Path:
    out = Path(args.out or settings.doc.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _alpha(args, settings: Settings, section: str) -> float:
    if args.alpha is not None:
        return args.alpha
    return float(settings.section(section).get("alpha", 0.5))


def _date(value, name: str) -> date:
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value))
    except ValueError:
        raise ConfigError(f"{name}: expected YYYY-MM-DD, got {value!r}") from None


# -- commands ---------------------------------------------------------------


def cmd_trace(args, settings: Settings) -> int:
    gen = parse_market_csv(settings.path("data", "generation", args.generation), "generation")
    flows_path = args.flows or settings.section("data").get("flows")
    cons_path = args.consumption or settings.section("data").get("consumption")
    flows = parse_market_csv(settings.path("data", "flows", flows_path), "flow") if flows_path else None
    cons = (
        parse_market_csv(settings.path("data", "consumption", cons_path), "consumption")
        if cons_path
        else None
    )
    factors = EmissionFactorTable.load(settings.path("data", "factors", args.factors))
    snapshot = assemble_snapshot(gen, flows, cons)
    result = trace_all(snapshot, factors)
    out = _out_dir(args, settings) / "intensity.csv"
    result.to_csv(out)
    logger.info("wrote %s", out)
    return 0


def cmd_forecast(args, settings: Settings) -> int:
    market = _market(settings, args)
    issue = parse_timestamp(args.issue) if args.issue else market.end_epoch_hour
    start = market.start_epoch_hour
    if issue <= start:
        raise DataError("issue hour must follow the start of the data")
    hist = market.window(start, issue - start)
    fc = forecast(hist.price, hist.intensity, issue, args.hours)
    out = _out_dir(args, settings) / "forecast.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FORECAST_COLUMNS)
        for h, p, c in zip(fc.price.hours, fc.price.values, fc.intensity.values):
            w.writerow([format_epoch_hour(int(h)), f"{p:.6f}", f"{c:.6f}"])
    logger.info("wrote %s", out)
    return 0


def _read_day_forecast(path: Path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = set(FORECAST_COLUMNS)
        if not reader.fieldnames or not need <= set(reader.fieldnames):
            raise DataError(f"{path}: header must contain {sorted(need)}")
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no rows")
    try:
        hours = [parse_timestamp(r["timestamp_utc"]) for r in rows]
        price = np.array([float(r["price_forecast"]) for r in rows])
        intensity = np.array([float(r["intensity_forecast"]) for r in rows])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if hours != list(range(hours[0], hours[0] + len(hours))):
        raise DataError(f"{path}: timestamps must be consecutive hours")
    if len(hours) < HOURS:
        raise DataError(f"{path}: need at least {HOURS} hours, got {len(hours)}")
    # a 38-hour forecast issued at 10:00 ends with the delivery day
    return hours[-HOURS], price[-HOURS:], intensity[-HOURS:]


def cmd_schedule_day(args, settings: Settings) -> int:
    tech = _technology(settings, args)
    sec = settings.section("schedule")
    path = settings.path("schedule", "forecast", args.forecast_file)
    start, price, intensity = _read_day_forecast(path)
    flh = args.flh if args.flh is not None else sec.get("flh")
    if flh is None:
        raise ConfigError("schedule-day needs --flh or schedule.flh")
    g_prev = args.g_prev if args.g_prev is not None else float(sec.get("g_prev", 0.0))
    norm = Normalization.from_history(price, intensity)
    problem = DayProblem(
        day_forecast(price, intensity, start),
        G_E=float(flh) * tech.p_nom,
        alpha=_alpha(args, settings, "schedule"),
        network=tech,
        g_prev=g_prev,
        norm=norm,
    )
    sched = schedule_day(problem)
    out = _out_dir(args, settings)
    sched.write_bids(out / "bids.csv")
    with open(out / "schedule.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        names = sorted(sched.dispatch)
        stores = sorted(sched.store_level)
        w.writerow(["timestamp_utc", *[f"{n}_mw" for n in names], *[f"{s}_mwh" for s in stores]])
        for i in range(HOURS):
            w.writerow(
                [
                    format_epoch_hour(start + i),
                    *[f"{sched.dispatch[n][i]:.6f}" for n in names],
                    *[f"{sched.store_level[s][i]:.6f}" for s in stores],
                ]
            )
    logger.info("objective %.6f, forecast cost %.2f EUR", sched.objective, sched.forecast_cost)
    return 0


def _sim_config(settings: Settings, args, horizon: str | None = None, alpha: float | None = None) -> SimulationConfig:
    sec = settings.section("simulation")
    horizon = horizon or args.horizon or sec.get("horizon", "yearly")
    if horizon not in {h.value for h in Horizon}:
        raise ConfigError(f"unknown horizon {horizon!r}")
    mode = args.forecast or sec.get("forecast", "ideal")
    if mode not in {m.value for m in ForecastMode}:
        raise ConfigError(f"unknown forecast mode {mode!r}")
    alpha = alpha if alpha is not None else _alpha(args, settings, "simulation")
    flh = args.flh if args.flh is not None and args.command == "simulate" else sec.get("flh")
    per_year = sec.get("flh_per_year")
    if args.command == "sweep" and args.flh is not None:
        flh, per_year = None, args.flh
    if flh is not None and args.command == "sweep":
        raise ConfigError("sweeps mix horizons; give simulation.flh_per_year instead of flh")
    if flh is None and per_year is None:
        raise ConfigError("set simulation.flh (per horizon) or simulation.flh_per_year")
    try:
        return SimulationConfig(
            Horizon(horizon),
            float(alpha),
            ForecastMode(mode),
            flh=None if flh is None else float(flh),
            flh_per_year=None if flh is not None else float(per_year),
            warmup_days=int(sec.get("warmup_days", 29)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _span(settings: Settings) -> tuple[date, date]:
    sec = settings.section("simulation")
    if "start" not in sec or "end" not in sec:
        raise ConfigError("simulation.start and simulation.end are required")
    first, last = _date(sec["start"], "simulation.start"), _date(sec["end"], "simulation.end")
    if last < first:
        raise ConfigError("simulation.end precedes simulation.start")
    return first, last


def cmd_simulate(args, settings: Settings) -> int:
    tech = _technology(settings, args)
    market = _market(settings, args)
    cfg = _sim_config(settings, args)
    first, last = _span(settings)
    ledger = run_simulation(market, tech, cfg, first, last)
    out = _out_dir(args, settings)
    ledger.to_csv(out / "ledger.csv")
    series_svg(ledger.f_values(), out / "f_ratio.svg", f"f ratio ({cfg.horizon.value})", "f")
    logger.info(
        "total %.3f FLH, mean price %.4f EUR/MWh, mean intensity %.4f g/kWh",
        ledger.total_flh,
        ledger.mean_price,
        ledger.mean_intensity,
    )
    return 0


def _run_cell(market: MarketData, tech: TechnologyNetwork, cfg: SimulationConfig, first: date, last: date) -> SweepRow:
    try:
        ledger = run_simulation(market, tech, cfg, first, last)
    except PtxError as exc:
        logger.error("sweep cell alpha=%.2f %s failed: %s", cfg.alpha, cfg.horizon.value, exc)
        status = f"failed: {type(exc).__name__}"
        return SweepRow(cfg.alpha, cfg.horizon.value, float("nan"), float("nan"), float("nan"), status)
    return SweepRow(
        cfg.alpha, cfg.horizon.value, ledger.mean_price, ledger.mean_intensity, ledger.total_flh
    )


def run_sweep(settings: Settings, args) -> list[SweepRow]:
    sec = settings.section("sweep")
    alphas = [float(a) for a in sec.get("alphas", DEFAULT_ALPHAS)]
    if args.alpha is not None:
        alphas = [args.alpha]
    horizons = [args.horizon] if args.horizon else list(sec.get("horizons", [h.value for h in Horizon]))
    if not alphas or not horizons:
        raise ConfigError("sweep needs at least one alpha and one horizon")
    tech = _technology(settings, args)
    market = _market(settings, args)
    first, last = _span(settings)
    cells = [_sim_config(settings, args, h, a) for a in alphas for h in horizons]
    parallel = int(sec.get("parallel", 1))
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = [pool.submit(_run_cell, market, tech, cfg, first, last) for cfg in cells]
            return [f.result() for f in futures]
    return [_run_cell(market, tech, cfg, first, last) for cfg in cells]


def cmd_sweep(args, settings: Settings) -> int:
    rows = run_sweep(settings, args)
    out = _out_dir(args, settings)
    write_sweep_csv(rows, out / "sweep.csv")
    tradeoff_svg(rows, out / "tradeoff.svg")
    failed = sum(not r.ok for r in rows)
    if failed:
        logger.warning("%d of %d sweep cells failed", failed, len(rows))
    return 0


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config document")
    common.add_argument("--out", help="output directory (default: config 'out' or .)")
    common.add_argument("--tech", choices=["electrolyzer", "methanation", "heatpump"])
    common.add_argument("--alpha", type=float, help="CO2 weight in [0, 1]")
    common.add_argument("--horizon", choices=[h.value for h in Horizon])
    common.add_argument("--forecast", choices=[m.value for m in ForecastMode])
    common.add_argument("--flh", type=float, help="full-load hours (see command help)")
    common.add_argument(
        "--set", action="append", metavar="NAME=VALUE", help="technology override, e.g. electrolyzer.p_nom=2"
    )
    common.add_argument("--price", help="price CSV (timestamp_utc,price_eur_mwh)")
    common.add_argument("--intensity", help="intensity CSV (timestamp_utc,area,intensity_gco2_kwh)")
    common.add_argument("--area", help="area to read from the intensity file")

    parser = argparse.ArgumentParser(prog="ptxsched", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trace", parents=[common], help="consumption-based CO2 intensity by flow tracing")
    p.add_argument("--generation")
    p.add_argument("--flows")
    p.add_argument("--consumption")
    p.add_argument("--factors", help="YAML/JSON technology -> gCO2/kWh")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("forecast", parents=[common], help="price and intensity forecast")
    p.add_argument("--issue", help="issue timestamp YYYY-MM-DDTHH:00Z (default: end of data)")
    p.add_argument("--hours", type=int, default=HORIZON)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("schedule-day", parents=[common], help="optimal bids for one delivery day")
    p.add_argument("--forecast-file", help="CSV timestamp_utc,price_forecast,intensity_forecast")
    p.add_argument("--g-prev", type=float, help="grid-side dispatch in the previous hour (MW)")
    p.set_defaults(func=cmd_schedule_day)

    p = sub.add_parser("simulate", parents=[common], help="day-by-day simulation with a ledger")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", parents=[common], help="alpha x horizon sweep with trade-off plot")
    p.set_defaults(func=cmd_sweep)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("PTX_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = _load_settings(args.config)
        return args.func(args, settings)
    except PtxError as exc:
        line = {"error": type(exc).__name__, "exit_code": exc.exit_code, "message": str(exc)}
        print(json.dumps(line), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
