"""Exception types shared across the package.

Argument validation raises plain ``ValueError``; the classes below cover the
two failure modes that deserve their own type.
"""


class InvalidStateError(RuntimeError):
    """An operation was called on an object in the wrong state
    (e.g. corrupting an already-silver sample set, adapting an unfrozen model,
    or reading labels from a label-stripped set)."""


class DegenerateInputError(ValueError):
    """Statistically degenerate input: a metric or moment that would silently
    return a meaningless value (zero-variance Pearson, zero-variance domain
    label distribution) raises this instead."""
