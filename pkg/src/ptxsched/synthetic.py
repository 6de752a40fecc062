"""Synthetic hourly price and CO2-intensity data for demos and tests.

Both series share a wind-like driver (windy hours are cheap and clean) but
also have independent parts: price follows demand with morning and evening
peaks, while intensity dips around midday with solar output. The two are
therefore correlated but far from identical, which is what makes the
price/CO2 trade-off non-trivial.
"""

from __future__ import annotations

from datetime import date

import numpy as np

from ptxsched.controller import MarketData
from ptxsched.marketdata import HourlySeries, Unit
from ptxsched.timeutil import epoch_hour


def _ar1(rng: np.random.Generator, n: int, phi: float, sigma: float) -> np.ndarray:
    eps = rng.normal(0.0, sigma, n)
    out = np.empty(n)
    out[0] = eps[0] / np.sqrt(1 - phi**2)
    for i in range(1, n):
        out[i] = phi * out[i - 1] + eps[i]
    return out


def synthetic_market(start: date, days: int, seed: int = 0) -> MarketData:
    """``days`` days of hourly data starting at midnight UTC on ``start``."""
    rng = np.random.default_rng(seed)
    n = days * 24
    h0 = epoch_hour(start)
    hours = h0 + np.arange(n)
    hod = hours % 24
    # 1970-01-01 was a Thursday; weekday 0 = Monday
    dow = (hours // 24 + 3) % 7
    doy = (hours / 24.0) % 365.25

    wind = np.clip(0.45 + 0.25 * np.cos(2 * np.pi * doy / 365.25) + _ar1(rng, n, 0.97, 0.05), 0.0, 1.0)
    solar = np.clip(np.sin(np.pi * (hod - 6) / 12), 0.0, None) * (
        0.6 - 0.3 * np.cos(2 * np.pi * doy / 365.25)
    )
    weekend = (dow >= 5).astype(float)

    demand = (
        1.0
        + 0.18 * np.exp(-((hod - 8) ** 2) / 6.0)
        + 0.25 * np.exp(-((hod - 18) ** 2) / 5.0)
        - 0.22 * (hod < 5)
        - 0.15 * weekend
    )
    price = 48.0 * demand - 30.0 * wind - 8.0 * solar + 12.0 + _ar1(rng, n, 0.8, 2.5)
    intensity = 420.0 - 260.0 * wind - 220.0 * solar + 60.0 * (demand - 1.0)
    intensity = np.maximum(intensity + _ar1(rng, n, 0.9, 12.0), 5.0)
    return MarketData(
        HourlySeries(h0, price, Unit.EUR_PER_MWH),
        HourlySeries(h0, intensity, Unit.G_PER_KWH),
    )
