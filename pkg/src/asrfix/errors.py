"""Shared exception types.

The CLI maps ConfigError to exit code 2 and DataError to exit code 3; every
other module raises subclasses of these two so callers can distinguish
"your configuration is wrong" from "your input data is bad".
"""

from __future__ import annotations


class AsrfixError(Exception):
    """Base class for all package errors."""


class ConfigError(AsrfixError):
    """Invalid configuration: bad parameter values, malformed config files."""


class DataError(AsrfixError):
    """Invalid input data: malformed corpus rows, KB files, audio, etc."""
