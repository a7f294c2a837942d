"""Reconstruction of distances on a manifold from noisy distance vectors and
from noisy heat kernels."""

from .errors import (
    AlignmentError,
    CapabilityError,
    DomainError,
    FrameError,
    InputError,
    ReconstructionError,
    ResourceError,
    SamplingError,
    SelectionError,
    StepSearchError,
)

__version__ = "0.1.0"
