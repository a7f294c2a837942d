"""Exception taxonomy shared by all pipeline stages.

Each exception carries an ``exit_code`` so the command line front end can map
failures onto scriptable process exit statuses without inspecting messages.
"""


class ReconstructionError(RuntimeError):
    """Base class for every error raised by this package."""

    exit_code = 1
    category = "error"


class InputError(ReconstructionError, ValueError):
    """Invalid argument, malformed file or inconsistent configuration."""

    exit_code = 2
    category = "input"


class CapabilityError(ReconstructionError):
    """The requested operation is not supported for this manifold or bundle."""

    exit_code = 2
    category = "capability"


class DomainError(ReconstructionError, ValueError):
    """A query point lies outside the neighbourhood where a formula is valid."""

    exit_code = 2
    category = "domain"


class SelectionError(ReconstructionError):
    """A data-driven selection (annulus, time grid) came back empty."""

    exit_code = 3
    category = "selection"


class AlignmentError(ReconstructionError):
    """No measurement point passed the almost-minimizing alignment test."""

    exit_code = 3
    category = "alignment"


class StepSearchError(ReconstructionError):
    """No distance vector passed the step-element criteria."""

    exit_code = 3
    category = "step_search"


class FrameError(ReconstructionError):
    """No candidate tuple produced a well conditioned Gram matrix."""

    exit_code = 3
    category = "frame"

    def __init__(self, message, best_det=None, best_tuple=None):
        super().__init__(message)
        self.best_det = best_det
        self.best_tuple = best_tuple


class SamplingError(ReconstructionError):
    """Too few valid random configurations could be drawn."""

    exit_code = 3
    category = "sampling"


class ResourceError(ReconstructionError):
    """A configured size cap would be exceeded."""

    exit_code = 4
    category = "resource"
