"""Exception types shared across the package.

Every error carries a stable ``code`` string so the CLI and tests can match
on it without parsing messages.
"""


class GridrouteError(Exception):
    code = "ERROR"

    def __init__(self, message=""):
        super().__init__(message or self.code)
        self.message = message or self.code


class ParseError(GridrouteError):
    code = "PARSE_ERROR"


class ValidationError(GridrouteError):
    code = "VALIDATION_ERROR"

    def __init__(self, report, message=""):
        super().__init__(message or "system failed validation")
        self.report = report


class UnknownCase(GridrouteError):
    code = "UNKNOWN_CASE"


class DimensionMismatch(GridrouteError):
    code = "DIMENSION_MISMATCH"


class InfeasibleDispatch(GridrouteError):
    code = "INFEASIBLE_DISPATCH"


class NotRadial(GridrouteError):
    code = "NOT_RADIAL"


class Degeneracy(GridrouteError):
    code = "DEGENERACY"


class SingularAggregation(GridrouteError):
    code = "SINGULAR_M"


class DegeneratePattern(GridrouteError):
    code = "DEGENERATE_PATTERN"


class InvalidRange(GridrouteError):
    code = "INVALID_RANGE"


class MalformedCsv(GridrouteError):
    code = "MALFORMED_CSV"


class PreconditionFailed(GridrouteError):
    code = "PRECONDITION"


class SolverFailure(GridrouteError):
    code = "SOLVER_FAILURE"
