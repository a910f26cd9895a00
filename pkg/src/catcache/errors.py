"""Exception types shared across the package."""


class CatCacheError(Exception):
    """Base class for all package errors."""


class UsageError(CatCacheError, ValueError):
    """A caller violated an operation's precondition."""


class ValidationError(CatCacheError, ValueError):
    """A configuration or input document failed validation.

    ``constraint`` names the violated rule (e.g. ``quota_sum_exceeded``) so
    callers such as the HTTP layer can report it verbatim.
    """

    def __init__(self, constraint: str, message: str = ""):
        self.constraint = constraint
        super().__init__(f"{constraint}: {message}" if message else constraint)


class DomainError(CatCacheError, ValueError):
    """A numeric argument lies outside the domain of a closed-form model."""


class StorageError(CatCacheError, OSError):
    """A document-store backend failed to read or write."""


class DocNotFound(CatCacheError, KeyError):
    """The requested document id is not present in the store."""
