# errors.py
from typing import Optional


class EndoSimError(Exception):
    """Base class for simulator errors."""


class ConfigError(EndoSimError):
    """
    Invalid configuration or usage: bad scenario keys/values, frame index out
    of range, non-positive time step. `line` points into the source file when known.
    """

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.line = line
        self.path = path

    def __str__(self) -> str:
        if self.path and self.line is not None:
            return f"{self.path}:{self.line}: {self.message}"
        if self.line is not None:
            return f"line {self.line}: {self.message}"
        return self.message


class GeometryError(EndoSimError):
    """Degenerate geometry: zero-length shaft, marker behind the camera or off-image."""
