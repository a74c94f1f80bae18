"""Exception types shared across the package."""

from __future__ import annotations


class InvalidArgument(ValueError):
    """An argument violates an operation's precondition."""


class ConfigError(InvalidArgument):
    """A run or sweep configuration failed validation.

    ``field`` names the offending entry (dotted path for nested keys).
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class DivergedError(RuntimeError):
    """An iterate became non-finite or exceeded the divergence threshold."""

    def __init__(self, epoch: int, message: str | None = None):
        super().__init__(message or f"iterate diverged during epoch {epoch}")
        self.epoch = epoch
