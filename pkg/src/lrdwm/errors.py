"""Exception hierarchy.

The CLI maps ``UsageError`` to exit code 1 and every other ``LRDWMError``
to exit code 2.
"""


class LRDWMError(Exception):
    """Base class for all package errors."""


class UsageError(LRDWMError):
    """An operation was called in a state that does not allow it."""


class DomainError(LRDWMError, ValueError):
    """A token id lies outside the vocabulary."""


class ConfigError(LRDWMError, ValueError):
    pass


class DataError(LRDWMError, ValueError):
    pass


class InputError(LRDWMError, ValueError):
    pass


class AttackError(LRDWMError, ValueError):
    pass


class ResourceError(LRDWMError):
    pass
