"""Exception types shared across storage-backed modules."""


class StorageError(Exception):
    """A durable-storage operation failed (unreadable, unwritable, corrupt)."""
