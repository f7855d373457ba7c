#!/usr/bin/env python3
"""
Exception types shared across the FreGrad vocoder package.

The CLI maps ConfigError (and subclasses) to exit code 2 and every other
FreGradError to exit code 1.
"""

from typing import List, Optional


class FreGradError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(FreGradError):
    """Invalid or unreadable run configuration."""

    def __init__(self, message: str, errors: Optional[List[str]] = None):
        super().__init__(message)
        self.errors = list(errors or [])


class DatasetError(ConfigError):
    """Dataset directory missing or holding no usable audio."""


class CheckpointMismatchError(ConfigError):
    """Checkpoint config disagrees with the requested run config."""

    def __init__(self, differing_fields: List[str]):
        super().__init__(
            "Checkpoint/config mismatch in fields: " + ", ".join(differing_fields),
            differing_fields,
        )
        self.differing_fields = list(differing_fields)


class WavFormatError(FreGradError, ValueError):
    """WAV file is empty or not 16-bit PCM mono."""


class AudioIOError(FreGradError, OSError):
    """Audio file could not be read or written."""


class ContainerError(FreGradError, ValueError):
    """FGR1 container is truncated, corrupt or of the wrong kind."""
