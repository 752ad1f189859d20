"""Exception hierarchy shared by every module.

Each class carries a stable ``code`` used by the CLI for its single-line
machine-readable error output.
"""


class DtiRegError(Exception):
    code = "DtiRegError"


class NonSymmetric(DtiRegError, ValueError):
    code = "NonSymmetric"


class NearSingular(DtiRegError, ValueError):
    code = "NearSingular"


class GridTooSmall(DtiRegError, ValueError):
    code = "GridTooSmall"


class GridMismatch(DtiRegError, ValueError):
    code = "GridMismatch"


class TimeOutOfRange(DtiRegError, ValueError):
    code = "TimeOutOfRange"


class BoundaryViolation(DtiRegError, ValueError):
    code = "BoundaryViolation"


class LeftDomain(DtiRegError, RuntimeError):
    code = "LeftDomain"


class NoConvergence(DtiRegError, RuntimeError):
    code = "NoConvergence"


class NonPositiveJacobian(DtiRegError, RuntimeError):
    code = "NonPositiveJacobian"


class BudgetExhausted(DtiRegError):
    """Raised only by callers that want the budget case as an exception;
    ``minimize`` itself reports it through ``ObjectiveReport.status``."""

    code = "BudgetExhausted"


class BadMagic(DtiRegError, ValueError):
    code = "BadMagic"


class TruncatedPayload(DtiRegError, ValueError):
    code = "TruncatedPayload"


class NotSpd(DtiRegError, ValueError):
    code = "NotSpd"

    def __init__(self, index, message=None):
        self.index = tuple(int(i) for i in index)
        super().__init__(message or f"voxel {self.index} is not SPD")


class BadParams(DtiRegError, ValueError):
    code = "BadParams"


class BadConfig(DtiRegError, ValueError):
    code = "BadConfig"
