"""Exception types raised across the package."""


class PixHomogError(Exception):
    """Base class for all package errors."""


class ParseError(PixHomogError):
    """Malformed image, material table or config file."""


class UnmappedPhase(PixHomogError):
    """A pixel value or blend weight refers to a phase the material table lacks."""


class GenerationFailure(PixHomogError):
    """A synthetic microstructure could not be generated with the requested parameters."""


class IncompressibleLimit(PixHomogError):
    """Poisson ratio too close to 0.5 for a plane-strain stiffness."""


class OddDimension(PixHomogError):
    """Uniform coarsening needs even pixel counts in both directions."""


class DiscreteOnly(PixHomogError):
    """Operation requires a grid without blend cells."""


class PeriodicMismatch(PixHomogError):
    """Opposite boundary node layouts cannot be related by interpolation."""


class DegenerateElement(PixHomogError):
    """Element with non-positive Jacobian determinant."""


class SingularSystem(PixHomogError):
    """The constrained saddle-point system is singular.

    ``null_space`` holds an approximate basis of the near-null space when it
    could be computed (small systems only), otherwise ``None``.
    """

    def __init__(self, message, null_space=None):
        super().__init__(message)
        self.null_space = null_space


class NotNested(PixHomogError):
    """A coarse mesh is not an exact union of reference pixels."""


class ConfigError(PixHomogError):
    """Invalid run configuration."""
