"""Exception types shared by the fingerexo modules.

Every error carries a short machine-readable ``code`` so the command line
runner can emit a parsable one-line failure.
"""


class FingerExoError(Exception):
    code = "ERROR"


class ConfigError(FingerExoError, ValueError):
    code = "CONFIG_ERROR"

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class PreconditionError(FingerExoError, ValueError):
    code = "PRECONDITION"


class NonConvergence(FingerExoError):
    code = "NON_CONVERGENCE"

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class InfeasiblePose(FingerExoError):
    code = "INFEASIBLE_POSE"

    def __init__(self, message, bound=None, state=None):
        super().__init__(message)
        self.bound = bound
        self.state = state


class AmbiguousBranch(FingerExoError):
    code = "AMBIGUOUS_BRANCH"

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class GeometryDegenerate(FingerExoError):
    code = "GEOMETRY_DEGENERATE"

    def __init__(self, message, triangle=None):
        super().__init__(message)
        self.triangle = triangle


class ImplausibleLength(FingerExoError):
    code = "IMPLAUSIBLE_LENGTH"


class SingularConstraintBlock(FingerExoError):
    code = "SINGULAR_CONSTRAINT_BLOCK"

    def __init__(self, message, condition=float("inf"), pose=None):
        super().__init__(message)
        self.condition = condition
        self.pose = pose


class SingularJacobian(FingerExoError):
    code = "SINGULAR_JACOBIAN"


class DegeneratePassiveColumn(FingerExoError):
    code = "DEGENERATE_PASSIVE_COLUMN"


class DegenerateK(FingerExoError):
    code = "DEGENERATE_K"


class RankDeficientMapping(FingerExoError):
    code = "RANK_DEFICIENT_MAPPING"


class RankDeficientNonactuated(FingerExoError):
    code = "RANK_DEFICIENT_NONACTUATED"


class EmptySeries(FingerExoError, ValueError):
    code = "EMPTY_SERIES"


class ParseError(FingerExoError, ValueError):
    code = "PARSE_ERROR"

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row
