"""Exception hierarchy shared by all modules.

Every error carries an ``exit_code`` so the CLI can map failures to the
documented process exit status without a lookup table.
"""

from __future__ import annotations

from ptxsched.timeutil import format_epoch_hour


class PtxError(Exception):
    exit_code = 1

    def with_context(self, prefix: str) -> PtxError:
        """Prefix the message in place (keeps the type and its attributes)."""
        self.args = (f"{prefix}: {self}",)
        return self


class ConfigError(PtxError):
    exit_code = 2


class UnknownParameter(ConfigError):
    pass


class InvariantViolation(ConfigError):
    pass


class DataError(PtxError):
    exit_code = 3


class MalformedRow(DataError):
    def __init__(self, path, line: int, reason: str) -> None:
        super().__init__(f"{path}:{line}: {reason}")
        self.line = line


class GapDetected(DataError):
    def __init__(self, epoch_hour: int, key: str | None = None) -> None:
        where = f" for {key}" if key else ""
        super().__init__(f"missing hour {format_epoch_hour(epoch_hour)}{where}")
        self.epoch_hour = epoch_hour


class GapTooLarge(DataError):
    pass


class UnitMismatch(DataError):
    pass


class CoverageError(DataError):
    pass


class MissingFactor(DataError):
    pass


class SingularSystem(DataError):
    pass


class SeriesTooShort(DataError):
    pass


class InsufficientData(DataError):
    pass


class InsufficientHistory(DataError):
    pass


class IncompleteLedger(DataError):
    pass


class Infeasible(PtxError):
    """No dispatch satisfies the day's constraints.

    ``family`` names the constraint group found to be binding, e.g.
    ``"energy budget"`` or ``"ramp/min-up"``.
    """

    exit_code = 4

    def __init__(self, message: str, family: str = "unknown") -> None:
        super().__init__(message)
        self.family = family


class SolverError(PtxError):
    """Internal LP failure (unbounded or numerical trouble)."""
