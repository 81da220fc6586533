"""Exception types shared across the package."""


class DynographError(Exception):
    pass


class ModelError(DynographError, ValueError):
    """Structurally invalid model or call on an unsuitable model."""


class TimeInhomogeneousError(ModelError):
    """Deterministic system whose drift depends explicitly on time."""


class EvaluationError(DynographError, ArithmeticError):
    """Expression produced a non-finite value.

    ``kind`` is one of ``"div0"``, ``"overflow"`` or ``"nonfinite"``.
    """

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class QueryError(DynographError, ValueError):
    """Ill-posed graph query (unknown node, diagonal pair, bad blockers)."""


class SimulationError(DynographError, RuntimeError):
    """A replicate blew up.  Carries where it happened."""

    def __init__(self, kind: str, replicate: int, step: int, component: str):
        super().__init__(
            f"{kind} in replicate {replicate} at step {step} (component {component})")
        self.kind = kind
        self.replicate = replicate
        self.step = step
        self.component = component
