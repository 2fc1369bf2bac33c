"""Errors shared across the toolkit."""

from __future__ import annotations


class NumericError(RuntimeError):
    """A coefficient returned a non-finite value; the message names the coefficient."""


class BlowUpError(RuntimeError):
    """A simulated state left the finite/bounded region.

    Attributes:
        step: time-step index at which the bound was violated.
        particle: particle index, or None for single-path simulations.
    """

    def __init__(self, step: int, particle: int | None = None, detail: str = ""):
        self.step = step
        self.particle = particle
        where = f"step {step}" if particle is None else f"step {step}, particle {particle}"
        super().__init__(f"state blow-up at {where}" + (f": {detail}" if detail else ""))


class ConfigError(ValueError):
    """Invalid experiment configuration (maps to exit code 2 in the CLI)."""
