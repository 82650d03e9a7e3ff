"""Exception hierarchy shared by the simulator, the generators and the solver."""


class OffloadError(Exception):
    """Base class for every error raised by convoffload."""


class ShapeError(OffloadError, ValueError):
    pass


class StepError(OffloadError):
    """A step breaks the execution semantics.

    ``kind`` is the violation kind (same vocabulary as the validator) and
    ``step`` the 1-based step index, or ``None`` when not attached to a step.
    """

    kind = "step_error"

    def __init__(self, message, step=None, kind=None):
        if kind is not None:
            self.kind = kind
        self.step = step
        prefix = f"step {step}: " if step is not None else ""
        super().__init__(prefix + message)


class FreeAbsent(StepError):
    kind = "free_absent"


class RedundantLoad(StepError):
    kind = "redundant_load"


class CapacityExceeded(StepError):
    kind = "capacity_exceeded"


class OpsBudgetExceeded(StepError):
    kind = "ops_exceeded"


class WriteUncomputed(StepError):
    kind = "write_uncomputed"


class LoadNotConsumed(StepError):
    kind = "load_not_consumed"


class ComputeNotResident(StepError):
    kind = "compute_not_resident"


class MismatchError(OffloadError):
    """The step-by-step output differs from the reference convolution."""


class AcceleratorTooSmall(OffloadError, ValueError):
    pass


class ScheduleError(OffloadError, ValueError):
    """A group schedule is not an admissible partition of the patches."""


class Infeasible(OffloadError):
    pass


class SolverTimeout(OffloadError):
    """Budget exhausted before any feasible solution was found."""


class InstanceTooLarge(OffloadError, ValueError):
    pass


class ParseError(OffloadError, ValueError):
    pass


STEP_ERRORS = {
    cls.kind: cls
    for cls in (FreeAbsent, RedundantLoad, CapacityExceeded, OpsBudgetExceeded,
                WriteUncomputed, LoadNotConsumed, ComputeNotResident)
}
