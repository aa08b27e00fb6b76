class HFLError(Exception):
    """Base class for all library errors."""


class DomainError(HFLError, ValueError):
    pass


class ResourceLimitError(HFLError):
    pass


class PreconditionError(HFLError, ValueError):
    pass


class ConstructionFailure(HFLError):
    """A construction stopped early. ``partial`` holds whatever was built."""

    outcome = "construction-failed"

    def __init__(self, message, *, partial=None, diagnostics=None):
        super().__init__(message)
        self.partial = partial
        self.diagnostics = diagnostics or {}


class InsufficientDepth(ConstructionFailure):
    outcome = "insufficient-depth"


class InsufficientCarleson(ConstructionFailure):
    outcome = "insufficient-carleson"


class NeumannBoundViolated(ConstructionFailure):
    outcome = "neumann-bound-violated"
