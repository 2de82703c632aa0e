"""Exception hierarchy shared by every module."""


class RcmError(Exception):
    """Base class for all library errors."""


class ParameterError(RcmError, ValueError):
    """A parameter is outside its documented range."""


class UnsupportedError(RcmError):
    """The operation is not defined for this input (e.g. shifting an open box)."""


class FormatError(RcmError):
    """A snapshot file has the wrong magic bytes or version."""


class SnapshotIOError(RcmError, OSError):
    """A snapshot file is truncated or its header disagrees with its length."""


class MembershipError(RcmError, KeyError):
    """A vertex is not part of the graph it was looked up in."""

    def __str__(self):
        return str(self.args[0]) if self.args else "vertex not in graph"


class ContainmentError(RcmError, ValueError):
    """A vertex set is not contained in its ambient set."""


class DomainError(RcmError, ValueError):
    """An average or estimate was requested over an empty domain."""


class StructureError(RcmError, ValueError):
    """A graph or vertex set is not connected where connectivity is required."""


class SolverError(RcmError, ArithmeticError):
    """The conjugate gradient solver hit its iteration cap."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class CoverageError(RcmError, KeyError):
    """A trajectory visits a vertex with no solved corrector value."""

    def __str__(self):
        return str(self.args[0]) if self.args else "vertex not covered"


class SampleSizeError(RcmError):
    """Too many walks were censored to run a statistical test."""


class PreconditionError(RcmError, ValueError):
    """An inequality check was called outside its hypotheses."""


class ValidationError(RcmError, ValueError):
    """An experiment configuration failed validation."""
