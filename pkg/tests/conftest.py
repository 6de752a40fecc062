from __future__ import annotations

import sys
from datetime import date
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ptxsched.synthetic import synthetic_market  # noqa: E402


@pytest.fixture(scope="session")
def market_2019():
    """2018 as pre-history plus the (non-leap) simulation year 2019 and two spare days."""
    return synthetic_market(date(2018, 1, 1), 365 * 2 + 2, seed=7)


def write_csv(path: Path, header: str, rows) -> Path:
    path.write_text(header + "\n" + "".join(r + "\n" for r in rows))
    return path
