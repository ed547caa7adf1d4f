"""Exception hierarchy shared by every module."""


class AllocationError(Exception):
    """Base class for all allocsim errors."""


class UndefinedProportionError(AllocationError, ValueError):
    pass


class UnsupportedArityError(AllocationError, ValueError):
    pass


class NeedsHistoryError(AllocationError, ValueError):
    pass


class InvalidRuleError(AllocationError, ValueError):
    pass


class DomainError(AllocationError, ValueError):
    pass


class NotMonotoneError(AllocationError, ValueError):
    def __init__(self, message, witnesses=()):
        super().__init__(message)
        self.witnesses = list(witnesses)


class BoundaryDowncrossingError(AllocationError, ValueError):
    pass


class ConvergenceError(AllocationError, RuntimeError):
    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class InvalidWitnessError(AllocationError, ValueError):
    pass


class ModelInputError(AllocationError, ValueError):
    pass


class InsufficientDataError(AllocationError, ValueError):
    pass


class SingularDesignError(AllocationError, ValueError):
    pass


class TargetRangeError(AllocationError, ValueError):
    pass


class DegenerateModelError(AllocationError, ValueError):
    pass


class InvalidDistributionError(AllocationError, ValueError):
    pass


class ConfigurationError(AllocationError, ValueError):
    pass


class MissingDiagnosticError(AllocationError, ValueError):
    pass


class ShapeError(AllocationError, ValueError):
    pass


class ReplicationError(AllocationError, RuntimeError):
    def __init__(self, message, replication):
        super().__init__(message)
        self.replication = replication
