"""Shared error base class.

Every domain module defines its own exception types; they all derive from
:class:`CakeError` so callers (and the CLI exit-code mapping) can catch the
whole family at once.
"""


class CakeError(Exception):
    """Base class for all errors raised by this package."""
