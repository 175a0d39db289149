"""Exception types raised across the pipeline."""


class MrenetError(Exception):
    """Base class for all package errors."""


class ParseError(MrenetError, ValueError):
    """Malformed input row; ``line`` is the 1-based line number in the source."""

    def __init__(self, message, line=None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class DegenerateSessionError(MrenetError, ValueError):
    pass


class UninformativePeriodError(MrenetError, ValueError):
    pass


class JoinError(MrenetError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ConvergenceError(MrenetError, RuntimeError):
    """Coordinate descent hit its sweep limit; ``kkt_violation`` is the residual."""

    def __init__(self, message, kkt_violation=float("nan")):
        self.kkt_violation = kkt_violation
        super().__init__(f"{message} (max KKT violation {kkt_violation:.3e})")
