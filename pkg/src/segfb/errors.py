"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: config errors -> 2,
non-convergence -> 3, precondition violations -> 4.
"""


class SegfbError(Exception):
    """Base class for all package errors."""


class ConfigError(SegfbError):
    """Malformed or inconsistent experiment configuration."""


class PreconditionError(SegfbError):
    """An operation was invoked outside its documented domain of validity."""


class SingularEvaluationError(PreconditionError):
    """Closed-form evaluation requested at a singular point (e.g. the edge r=0)."""


class NoRootError(PreconditionError):
    """A domain-variation root solve found no root; the flatness sandwich fails there."""


class NonConvergenceError(SegfbError):
    """An iteration stagnated before reaching its tolerance."""
