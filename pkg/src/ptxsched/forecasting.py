"""Price and CO2-intensity forecasts by moving-average decomposition.

The history is split into trend, seasonal and random parts. The trend is
extrapolated by an AR model on its first differences (re-integrated), the
random part by a plain AR model, and the seasonal part by repeating the
daily profile. The component forecasts are summed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from ptxsched.errors import DataError, InsufficientData, SeriesTooShort
from ptxsched.marketdata import HourlySeries, Unit

logger = logging.getLogger(__name__)

PERIOD = 24
HORIZON = 38
FIT_HOURS = 28 * 24


@dataclass(frozen=True)
class Decomposition:
    trend: HourlySeries
    seasonal: HourlySeries
    random: HourlySeries
    period: int
    # False where the centred average is undefined and the trend was edge-filled
    trend_defined: np.ndarray = field(repr=False)

    @property
    def interior(self) -> slice:
        idx = np.flatnonzero(self.trend_defined)
        return slice(int(idx[0]), int(idx[-1]) + 1)


def centered_moving_average(x: np.ndarray, period: int) -> np.ndarray:
    """Centred MA of width ``period``; NaN where the window does not fit.

    Even periods use the 2 x period convention (half weights on the two
    end points), which centres the window on an observation.
    """
    if period % 2 == 0:
        w = np.r_[0.5, np.ones(period - 1), 0.5] / period
    else:
        w = np.ones(period) / period
    half = len(w) // 2
    out = np.full(x.size, np.nan)
    out[half : x.size - half] = np.convolve(x, w, mode="valid")
    return out


def decompose(series: HourlySeries, period: int = PERIOD) -> Decomposition:
    """Additive decomposition into trend, seasonal and random components.

    The seasonal profile is indexed by ``epoch_hour % period`` so that it
    lines up with the clock rather than with the start of the series.
    """
    x = series.require_complete().values
    if x.size < 2 * period:
        raise SeriesTooShort(f"need at least {2 * period} points, got {x.size}")

    trend = centered_moving_average(x, period)
    defined = ~np.isnan(trend)
    phase = (series.start_epoch_hour + np.arange(x.size)) % period
    detrended = x - trend
    profile = np.array([detrended[defined & (phase == k)].mean() for k in range(period)])
    profile -= profile.mean()
    seasonal = profile[phase]

    first, last = np.flatnonzero(defined)[[0, -1]]
    trend[:first] = trend[first]
    trend[last + 1 :] = trend[last]
    random = x - trend - seasonal

    start, unit = series.start_epoch_hour, series.unit
    return Decomposition(
        HourlySeries(start, trend, unit),
        HourlySeries(start, seasonal, unit),
        HourlySeries(start, random, unit),
        period,
        defined,
    )


@dataclass(frozen=True)
class ARModel:
    """``x_t = intercept + sum_j coef[j] * x_{t-1-j}``."""

    coef: np.ndarray
    intercept: float

    @property
    def order(self) -> int:
        return self.coef.size

    def is_stationary(self) -> bool:
        p = self.order
        if p == 0:
            return True
        companion = np.zeros((p, p))
        companion[0] = self.coef
        companion[1:, :-1] = np.eye(p - 1)
        return bool(np.max(np.abs(np.linalg.eigvals(companion))) < 1.0)

    def predict(self, history: np.ndarray, steps: int) -> np.ndarray:
        """Iterated one-step-ahead prediction continuing ``history``."""
        p = self.order
        buf = list(np.asarray(history, dtype=float)[-p:]) if p else []
        out = np.empty(steps)
        for k in range(steps):
            val = self.intercept
            for j in range(p):
                val += self.coef[j] * buf[-1 - j]
            out[k] = val
            if p:
                buf.append(val)
        return out


def fit_ar(values: np.ndarray | HourlySeries, order: int) -> ARModel:
    """Least-squares AR(order) fit with intercept.

    A constant series has a singular design; it gets an intercept-only
    model that reproduces the constant.
    """
    x = np.asarray(values.values if isinstance(values, HourlySeries) else values, dtype=float)
    if order < 1:
        raise ValueError("order must be >= 1")
    if x.size < 10 * order:
        raise InsufficientData(f"AR({order}) needs {10 * order} points, got {x.size}")
    if np.ptp(x) <= 1e-12 * max(1.0, abs(x.mean())):
        return ARModel(np.zeros(order), float(x.mean()))

    n = x.size
    X = np.column_stack([x[order - 1 - j : n - 1 - j] for j in range(order)] + [np.ones(n - order)])
    y = x[order:]
    sol, *_ = np.linalg.lstsq(X, y, rcond=None)
    return ARModel(sol[:order].copy(), float(sol[order]))


class ComponentForecaster(Protocol):
    def __call__(self, values: np.ndarray, steps: int) -> np.ndarray: ...


@dataclass(frozen=True)
class ARForecaster:
    """AR extrapolation, optionally on first differences (the "I" in ARIMA)."""

    order: int
    difference: bool = False

    def __call__(self, values: np.ndarray, steps: int) -> np.ndarray:
        x = np.diff(values) if self.difference else np.asarray(values, dtype=float)
        model = fit_ar(x, self.order)
        if not model.is_stationary():
            logger.debug("AR(%d) fit is explosive; falling back to the mean", self.order)
            model = ARModel(np.zeros(self.order), float(x.mean()))
        path = model.predict(x, steps)
        return values[-1] + np.cumsum(path) if self.difference else path


@dataclass(frozen=True)
class DecompositionForecaster:
    trend_model: ComponentForecaster = ARForecaster(3, difference=True)
    random_model: ComponentForecaster = ARForecaster(2)
    period: int = PERIOD
    fit_hours: int = FIT_HOURS

    def __call__(self, history: HourlySeries, horizon: int) -> np.ndarray:
        hist = history.require_complete()
        if len(hist) > self.fit_hours:
            hist = hist.window(hist.end_epoch_hour - self.fit_hours, self.fit_hours)
        dec = decompose(hist, self.period)
        x = hist.values
        interior = dec.interior
        tail = x.size - interior.stop

        # extend the trend through the undefined tail, then past the issue hour
        trend_path = self.trend_model(dec.trend.values[interior], tail + horizon)
        seasonal = dec.seasonal.values
        random = np.concatenate(
            [dec.random.values[interior], x[interior.stop :] - trend_path[:tail] - seasonal[interior.stop :]]
        )
        random_path = self.random_model(random, horizon)

        future = history.end_epoch_hour + np.arange(horizon)
        profile = np.empty(self.period)
        phase = (hist.start_epoch_hour + np.arange(x.size)) % self.period
        profile[phase[: self.period]] = seasonal[: self.period]
        return trend_path[tail:] + profile[future % self.period] + random_path


@dataclass(frozen=True)
class ForecastPair:
    price: HourlySeries
    intensity: HourlySeries
    issued_at: int

    def __post_init__(self) -> None:
        for s in (self.price, self.intensity):
            s.require_complete()
            if s.start_epoch_hour != self.issued_at:
                raise DataError("forecast series must start at the issue hour")
        if len(self.price) != len(self.intensity):
            raise DataError("price and intensity forecasts differ in length")

    def window(self, start: int, length: int) -> ForecastPair:
        return ForecastPair(
            self.price.window(start, length), self.intensity.window(start, length), start
        )


def forecast(
    history_price: HourlySeries,
    history_intensity: HourlySeries,
    issue_hour: int,
    horizon: int = HORIZON,
    model: DecompositionForecaster | None = None,
) -> ForecastPair:
    """Decomposition forecast of price and intensity from ``issue_hour`` on.

    Both histories must end at ``issue_hour - 1`` and span at least 28 days.
    Negative intensity forecasts are clamped to 0; prices may go negative.
    """
    model = model or DecompositionForecaster()
    for name, hist in (("price", history_price), ("intensity", history_intensity)):
        if hist.end_epoch_hour != issue_hour:
            raise DataError(f"{name} history must end right before the issue hour")
        if len(hist) < FIT_HOURS:
            raise SeriesTooShort(f"{name} history has {len(hist)} h, need {FIT_HOURS}")
    price = model(history_price, horizon)
    intensity = np.maximum(model(history_intensity, horizon), 0.0)
    return ForecastPair(
        HourlySeries(issue_hour, price, Unit.EUR_PER_MWH),
        HourlySeries(issue_hour, intensity, Unit.G_PER_KWH),
        issue_hour,
    )


def ideal_forecast(
    truth_price: HourlySeries, truth_intensity: HourlySeries, issue_hour: int, horizon: int = HORIZON
) -> ForecastPair:
    """Perfect foresight: the realized values over the forecast window."""
    return ForecastPair(
        truth_price.window(issue_hour, horizon),
        truth_intensity.window(issue_hour, horizon),
        issue_hour,
    )


def persistence_forecast(history: HourlySeries, horizon: int, period: int = PERIOD) -> np.ndarray:
    """Baseline: repeat the last observed day."""
    last = history.values[-period:]
    return np.resize(last, horizon)
