"""Epoch-hour helpers. All timestamps are UTC, hour resolution."""

from __future__ import annotations

import re
from datetime import date, datetime, timedelta, timezone

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_TS = re.compile(r"^(\d{4})-(\d{2})-(\d{2})T(\d{2}):00(?::00)?Z$")


def parse_timestamp(text: str) -> int:
    """Parse ``YYYY-MM-DDTHH:00Z`` into hours since the Unix epoch."""
    m = _TS.match(text.strip())
    if m is None:
        raise ValueError(f"not an ISO-8601 UTC hour timestamp: {text!r}")
    y, mo, d, h = (int(g) for g in m.groups())
    dt = datetime(y, mo, d, h, tzinfo=timezone.utc)
    return int((dt - _EPOCH).total_seconds()) // 3600


def format_epoch_hour(hour: int) -> str:
    return (_EPOCH + timedelta(hours=int(hour))).strftime("%Y-%m-%dT%H:00Z")


def date_of(hour: int) -> date:
    return (_EPOCH + timedelta(hours=int(hour))).date()


def epoch_hour(day: date, hour: int = 0) -> int:
    return (day - _EPOCH.date()).days * 24 + hour
