"""Exception types raised across the package."""


class DuplicateItemError(ValueError):
    """An item was rated twice within one history."""


class ExhaustedItemsError(RuntimeError):
    """No unrated items are left to select from."""


class ProtocolViolation(RuntimeError):
    """A policy asked for an item the user has already rated."""


class TreeStructureError(ValueError):
    """A decision tree is cyclic, has dangling children or repeats a path item."""


class SchemaError(ValueError):
    """A persisted file does not match the expected layout."""
