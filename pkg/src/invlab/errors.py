"""Exception types shared across the package.

Every error raised on a documented failure path carries a stable ``code``
string so callers (and the CLI) can branch on the failure kind without
parsing messages.
"""

from __future__ import annotations


class InvLabError(Exception):
    """Error with a machine-readable ``code`` and a human-readable message."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


class ValidationErrors(InvLabError):
    """Aggregate of configuration validation failures (all of them, not just the first)."""

    def __init__(self, errors: list[str]):
        super().__init__("VALIDATION_ERRORS", "; ".join(errors))
        self.errors = list(errors)
