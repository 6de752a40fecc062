"""Plant models: stand-alone electrolyzer, electrolyzer + methanation, heat pump + boiler.

Ramp limits are per unit of ``p_nom`` per hour (so 0.3 on a 6 MW unit is
1.8 MW/h) and ``None`` means unlimited. Defaults follow the published
parameter tables; values the tables leave open (reactor size, store sizes,
heat load) are marked below.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ptxsched.errors import ConfigError, InvariantViolation, UnknownParameter


class Kind(str, Enum):
    ELECTROLYZER = "electrolyzer"
    METHANATION = "methanation"
    HEATPUMP = "heatpump"


@dataclass(frozen=True)
class ConverterParams:
    efficiency: float
    p_nom: float
    ramp_up: float | None = None
    ramp_down: float | None = None
    ramp_start_up: float | None = None
    # None: shutting down is limited like any other down-ramp
    ramp_shut_down: float | None = None
    min_up_time: int = 0
    min_part_load: float = 0.0

    def __post_init__(self) -> None:
        if not 0 < self.efficiency <= 3.5:
            raise InvariantViolation(f"efficiency {self.efficiency} outside (0, 3.5]")
        if not self.p_nom > 0:
            raise InvariantViolation(f"p_nom must be > 0, got {self.p_nom}")
        for name in ("ramp_up", "ramp_down", "ramp_start_up", "ramp_shut_down"):
            v = getattr(self, name)
            if v is not None and not v >= 0:
                raise InvariantViolation(f"{name} must be >= 0 or None, got {v}")
        if self.min_up_time < 0 or int(self.min_up_time) != self.min_up_time:
            raise InvariantViolation(f"min_up_time must be a non-negative integer, got {self.min_up_time}")
        object.__setattr__(self, "min_up_time", int(self.min_up_time))
        if not 0 <= self.min_part_load <= 1:
            raise InvariantViolation(f"min_part_load {self.min_part_load} outside [0, 1]")

    def _mw(self, per_unit: float | None) -> float:
        return self.p_nom if per_unit is None else min(per_unit * self.p_nom, self.p_nom)

    @property
    def ramp_up_mw(self) -> float:
        return self._mw(self.ramp_up)

    @property
    def ramp_down_mw(self) -> float:
        return self._mw(self.ramp_down)

    @property
    def start_up_mw(self) -> float:
        return self._mw(self.ramp_start_up)

    @property
    def shut_down_mw(self) -> float:
        return self._mw(self.ramp_shut_down if self.ramp_shut_down is not None else self.ramp_down)

    @property
    def needs_commitment(self) -> bool:
        """Whether on/off status must be modelled with a binary."""
        return (
            self.min_up_time > 1
            or self.min_part_load > 0
            or not math.isclose(self.start_up_mw, self.ramp_up_mw)
            or not math.isclose(self.shut_down_mw, self.ramp_down_mw)
        )


@dataclass(frozen=True)
class StoreParams:
    capacity: float
    efficiency: float = 1.0
    initial_level: float = 0.0

    def __post_init__(self) -> None:
        if not self.capacity >= 0:
            raise InvariantViolation(f"store capacity must be >= 0, got {self.capacity}")
        if not 0 < self.efficiency <= 1:
            raise InvariantViolation(f"store efficiency {self.efficiency} outside (0, 1]")
        if not 0 <= self.initial_level <= self.capacity:
            raise InvariantViolation(
                f"initial level {self.initial_level} outside [0, {self.capacity}]"
            )


@dataclass(frozen=True)
class FuelParams:
    price: float  # EUR/MWh fuel
    emission: float  # gCO2/kWh fuel

    def __post_init__(self) -> None:
        if self.price < 0 or self.emission < 0:
            raise InvariantViolation("fuel price and emission must be >= 0")


@dataclass(frozen=True)
class TechnologyNetwork:
    kind: Kind
    converters: dict[str, ConverterParams]
    stores: dict[str, StoreParams] = field(default_factory=dict)
    fuel: FuelParams | None = None
    heat_load: float = 0.0  # MW heat, uniform (heat pump plant)
    product_price: float | None = None  # EUR/MWh product; does not affect dispatch

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", Kind(self.kind))
        conv, st = set(self.converters), set(self.stores)
        expected = {
            Kind.ELECTROLYZER: ({"electrolyzer"}, set()),
            Kind.METHANATION: ({"electrolyzer", "methanation"}, {"h2_store"}),
            Kind.HEATPUMP: ({"heat_pump", "boiler"}, {"heat_store"}),
        }[self.kind]
        if (conv, st) != expected:
            raise InvariantViolation(
                f"{self.kind.value} network needs converters {sorted(expected[0])} "
                f"and stores {sorted(expected[1])}"
            )
        if self.kind is Kind.HEATPUMP:
            if self.fuel is None:
                raise InvariantViolation("heat pump network needs boiler fuel parameters")
            if not self.heat_load >= 0:
                raise InvariantViolation("heat load must be >= 0")

    @property
    def grid_converter(self) -> str:
        return "heat_pump" if self.kind is Kind.HEATPUMP else "electrolyzer"

    @property
    def p_nom(self) -> float:
        """Grid-facing nominal power; FLH are measured against it."""
        return self.converters[self.grid_converter].p_nom


def _electrolyzer() -> TechnologyNetwork:
    return TechnologyNetwork(
        Kind.ELECTROLYZER,
        {
            "electrolyzer": ConverterParams(
                efficiency=1.0, p_nom=1.0, ramp_up=0.3, ramp_down=0.3, ramp_start_up=0.15, min_up_time=2
            )
        },
    )


def _methanation() -> TechnologyNetwork:
    return TechnologyNetwork(
        Kind.METHANATION,
        {
            "electrolyzer": ConverterParams(
                efficiency=0.70, p_nom=6.0, ramp_up=0.3, ramp_down=0.3, ramp_start_up=0.15, min_up_time=2
            ),
            # reactor size not tabulated: sized to absorb full electrolyzer output (6 MW * 0.70)
            "methanation": ConverterParams(
                efficiency=0.77,
                p_nom=4.2,
                ramp_up=0.04,
                ramp_down=0.0,
                ramp_start_up=0.01,
                min_up_time=2,
                # no modulation downwards while running, but shutdown is immediate
                ramp_shut_down=1.0,
            ),
        },
        {"h2_store": StoreParams(capacity=6.0, efficiency=1.0, initial_level=0.0)},
    )


def _heatpump() -> TechnologyNetwork:
    return TechnologyNetwork(
        Kind.HEATPUMP,
        {
            # tabulated ramp_limit_up = ramp_limit_start_up = 0 read as "instant warm start"
            "heat_pump": ConverterParams(
                efficiency=3.0, p_nom=1.0, ramp_up=None, ramp_down=0.25, ramp_start_up=None, min_up_time=2
            ),
            "boiler": ConverterParams(
                efficiency=0.90, p_nom=1.0, ramp_up=0.004, ramp_down=0.016, ramp_start_up=0.1, min_up_time=2
            ),
        },
        # store size and heat load are not tabulated
        {"heat_store": StoreParams(capacity=12.0, efficiency=0.90, initial_level=6.0)},
        fuel=FuelParams(price=20.1, emission=201.0),
        heat_load=2.1,
    )


_DEFAULTS = {
    Kind.ELECTROLYZER: _electrolyzer,
    Kind.METHANATION: _methanation,
    Kind.HEATPUMP: _heatpump,
}

# parameter-table spellings accepted in config files
_ALIASES = {
    "p_norm": "p_nom",
    "ramp_limit_up": "ramp_up",
    "ramp_limit_down": "ramp_down",
    "ramp_limit_start_up": "ramp_start_up",
    "ramp_limit_shut_down": "ramp_shut_down",
    "p_min_pu": "min_part_load",
}
_NETWORK_SCALARS = {"heat_load", "product_price"}


def _coerce(key: str, value: Any) -> Any:
    if isinstance(value, str):
        low = value.strip().lower()
        if low in ("none", "null", "inf", "unlimited"):
            return None
        if low in ("true", "false"):
            return low == "true"
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{key}: cannot read {value!r} as a number") from None
    return value


def build_technology(kind: str | Kind, overrides: Mapping[str, Any] | None = None) -> TechnologyNetwork:
    """Default network for ``kind`` with dotted-name overrides applied.

    Keys look like ``"electrolyzer.p_nom"``, ``"h2_store.capacity"``,
    ``"fuel.price"`` or a bare ``"heat_load"``.
    """
    try:
        kind = Kind(kind)
    except ValueError:
        raise ConfigError(f"unknown technology {kind!r}; choose from {[k.value for k in Kind]}") from None
    net = _DEFAULTS[kind]()
    if not overrides:
        return net

    converters, stores = dict(net.converters), dict(net.stores)
    fuel, scalars = net.fuel, {}
    for key, raw in overrides.items():
        if key in _NETWORK_SCALARS:
            scalars[key] = _coerce(key, raw)
            continue
        comp, _, name = key.partition(".")
        name = _ALIASES.get(name, name)
        if comp in converters:
            target, kind_fields = converters, ConverterParams
        elif comp in stores:
            target, kind_fields = stores, StoreParams
        elif comp == "fuel" and fuel is not None:
            if name not in {f.name for f in fields(FuelParams)}:
                raise UnknownParameter(key)
            fuel = replace(fuel, **{name: _coerce(key, raw)})
            continue
        else:
            raise UnknownParameter(key)
        if name not in {f.name for f in fields(kind_fields)}:
            raise UnknownParameter(key)
        target[comp] = replace(target[comp], **{name: _coerce(key, raw)})
    return TechnologyNetwork(kind, converters, stores, fuel, **{**_scalars(net), **scalars})


def _scalars(net: TechnologyNetwork) -> dict[str, Any]:
    return {"heat_load": net.heat_load, "product_price": net.product_price}


def flatten_config(doc: Mapping[str, Any]) -> tuple[str, dict[str, Any]]:
    """Turn a nested technology document into ``(kind, dotted overrides)``.

    Accepted shape::

        kind: methanation
        electrolyzer: {efficiency: 0.7, ramp_limit_up: 0.3}
        h2_store: {capacity: 6}
        heat_load: 2.0
    """
    if "kind" not in doc:
        raise ConfigError("technology config needs a 'kind' entry")
    overrides: dict[str, Any] = {}
    for key, val in doc.items():
        if key == "kind":
            continue
        if isinstance(val, Mapping):
            for sub, v in val.items():
                overrides[f"{key}.{sub}"] = v
        else:
            overrides[key] = val
    return str(doc["kind"]), overrides


def load_technology(path: str | Path, extra: Mapping[str, Any] | None = None) -> TechnologyNetwork:
    doc = yaml.safe_load(Path(path).read_text())
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{path}: expected a mapping")
    kind, overrides = flatten_config(doc)
    overrides.update(extra or {})
    return build_technology(kind, overrides)


@dataclass(frozen=True)
class Normalization:
    """Reference magnitudes dividing price and intensity before weighting."""

    price_ref: float = 1.0
    intensity_ref: float = 1.0

    @classmethod
    def from_history(cls, price: np.ndarray, intensity: np.ndarray) -> Normalization:
        """Mean absolute value of each trailing history (1.0 if it is all zeros)."""
        p = float(np.mean(np.abs(price)))
        c = float(np.mean(np.abs(intensity)))
        return cls(p if p > 0 else 1.0, c if c > 0 else 1.0)


def weighted_marginal_cost(alpha, price, intensity, norm: Normalization = Normalization()):
    """``alpha * intensity/I_ref + (1 - alpha) * price/P_ref``; works on arrays."""
    return alpha * np.asarray(intensity) / norm.intensity_ref + (1.0 - alpha) * np.asarray(price) / norm.price_ref


def boiler_cost(alpha: float, fuel: FuelParams, norm: Normalization = Normalization()) -> float:
    """Composite cost per MWh of boiler fuel."""
    return float(weighted_marginal_cost(alpha, fuel.price, fuel.emission, norm))
