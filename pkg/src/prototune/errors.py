"""Exception types shared across the package.

Every error raised by prototune code derives from :class:`PrototuneError`,
with builtin mixins so generic ``except ValueError`` style handling keeps
working for callers that do not care about the finer taxonomy.
"""


class PrototuneError(Exception):
    """Base class for all prototune errors."""


class DataFormatError(PrototuneError):
    """File does not look like the expected binary format (magic, version)."""


class DataCorruptionError(PrototuneError):
    """File structure is recognized but internally inconsistent."""


class ValidationError(PrototuneError, ValueError):
    """Value-level invariant violated (dims, zero vectors, duplicates...)."""


class ScheduleError(PrototuneError, ValueError):
    """Phase schedule arguments are inconsistent (divisibility, counts)."""


class ParameterError(PrototuneError, ValueError):
    """A function argument is out of its documented domain."""


class StateError(PrototuneError, RuntimeError):
    """Operation invalid for the current object state."""


class ContractError(PrototuneError, RuntimeError):
    """A documented caller-side precondition was violated."""


class MathDomainError(PrototuneError, ValueError):
    """Mathematical operation undefined for the given input."""
