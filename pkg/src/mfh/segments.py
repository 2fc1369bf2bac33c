"""Discretized segment processes.

A segment is the trailing window of a path over a delay horizon of length
``r``, sampled on a uniform grid and valued in R^(m+d).  The first ``m``
coordinates are the position block, the last ``d`` the momentum block.
Distances between segments use the sup-over-time Euclidean norm, which is the
cost underlying every optimal-transport quantity in this package.

All types are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid with a delay window.

    The delay window holds ``n_lag + 1`` points spanning ``r = n_lag * dt``
    (``n_lag = 0`` degenerates to a point state, no delay).  The simulation
    horizon is ``T = n_steps * dt``.  ``r`` and ``T`` are derived, never
    stored, so the window can not drift from the grid.
    """

    dt: float
    n_lag: int
    n_steps: int

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if self.n_lag < 0:
            raise ValueError(f"n_lag must be >= 0, got {self.n_lag}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def r(self) -> float:
        return self.n_lag * self.dt

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    @property
    def window(self) -> int:
        """Number of points in one segment (n_lag + 1)."""
        return self.n_lag + 1

    @property
    def path_len(self) -> int:
        """Number of grid points of a full path record, from -r to T."""
        return self.n_lag + self.n_steps + 1

    def times(self) -> np.ndarray:
        """Grid times 0, dt, ..., T at which segments are defined."""
        return np.arange(self.n_steps + 1) * self.dt

    @classmethod
    def from_times(cls, dt: float, r: float, T: float, rel_tol: float = 1e-9) -> "TimeGrid":
        """Build a grid from continuous (dt, r, T).

        ``r`` and ``T`` must be exact multiples of ``dt`` (within ``rel_tol``);
        anything else is rejected rather than rounded.
        """
        n_lag = _exact_multiple(r, dt, "r", rel_tol)
        n_steps = _exact_multiple(T, dt, "T", rel_tol)
        if n_steps < 1:
            raise ValueError(f"horizon T={T} must be at least one step of dt={dt}")
        return cls(dt=dt, n_lag=n_lag, n_steps=n_steps)


def _exact_multiple(value: float, dt: float, name: str, rel_tol: float) -> int:
    if value < 0:
        raise ValueError(f"{name} must be >= 0, got {value}")
    n = int(round(value / dt))
    if abs(n * dt - value) > rel_tol * max(dt, abs(value)):
        raise ValueError(f"{name}={value} is not an exact multiple of dt={dt}")
    return n


@dataclass(frozen=True)
class Segment:
    """One path window: ``values[i]`` is the state at time ``-r + i*dt``.

    ``values`` has shape (n_lag + 1, m + d); row -1 is the time-0 state.
    """

    values: np.ndarray
    m: int
    d: int

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[1] != self.m + self.d:
            raise ValueError(f"segment values must have shape (n_lag+1, {self.m + self.d}), got {v.shape}")
        if v.shape[0] < 1:
            raise ValueError("segment must hold at least one point")
        if not np.isfinite(v).all():
            raise ValueError("segment contains non-finite entries")

    @classmethod
    def _wrap(cls, values: np.ndarray, m: int, d: int) -> "Segment":
        # Hot-path constructor: skips validation. Callers guarantee shape and
        # finiteness (the solver's blow-up guard covers the latter).
        seg = object.__new__(cls)
        object.__setattr__(seg, "values", values)
        object.__setattr__(seg, "m", m)
        object.__setattr__(seg, "d", d)
        return seg

    @classmethod
    def constant(cls, state: np.ndarray, n_lag: int, m: int, d: int) -> "Segment":
        state = np.asarray(state, dtype=float)
        return cls(np.tile(state, (n_lag + 1, 1)), m, d)

    @property
    def n_lag(self) -> int:
        return self.values.shape[0] - 1

    @property
    def current(self) -> np.ndarray:
        """State at time 0 (the newest point)."""
        return self.values[-1]

    @property
    def oldest(self) -> np.ndarray:
        """State at time -r (the oldest point)."""
        return self.values[0]

    def first_block(self) -> np.ndarray:
        """Position rows, shape (n_lag+1, m)."""
        return self.values[:, : self.m]

    def second_block(self) -> np.ndarray:
        """Momentum rows, shape (n_lag+1, d)."""
        return self.values[:, self.m :]


@dataclass(frozen=True)
class PathRecord:
    """A full trajectory on the grid, from time -r through T.

    ``states[n_lag + k]`` is the state at time ``k * dt``; rows before that
    hold the initial segment.
    """

    states: np.ndarray
    grid: TimeGrid
    m: int
    d: int

    def __post_init__(self):
        if self.states.shape != (self.grid.path_len, self.m + self.d):
            raise ValueError(
                f"path states must have shape ({self.grid.path_len}, {self.m + self.d}), got {self.states.shape}"
            )
        if not np.isfinite(self.states).all():
            raise ValueError("path contains non-finite entries")

    def state_at(self, step: int) -> np.ndarray:
        """State at grid time ``step * dt``, 0 <= step <= n_steps."""
        if not 0 <= step <= self.grid.n_steps:
            raise IndexError(f"step {step} outside [0, {self.grid.n_steps}]")
        return self.states[self.grid.n_lag + step]


def segment_at(path: PathRecord, step: int) -> Segment:
    """Segment of ``path`` anchored at grid time ``step * dt``.

    Windows ``path.states[step : step + n_lag + 1]``; stepping forward drops
    the oldest point and appends one new point.
    """
    if not 0 <= step <= path.grid.n_steps:
        raise IndexError(f"step {step} outside [0, {path.grid.n_steps}]")
    window = path.states[step : step + path.grid.window]
    return Segment._wrap(window, path.m, path.d)


def sup_norm(seg: Segment) -> float:
    """Largest Euclidean state norm over the window."""
    return float(np.sqrt((seg.values**2).sum(axis=1)).max())


def segment_distance(a: Segment, b: Segment) -> float:
    """Sup-over-time Euclidean distance between two segments on the same grid."""
    if a.values.shape != b.values.shape:
        raise ValueError(f"segment shape mismatch: {a.values.shape} vs {b.values.shape}")
    if (a.m, a.d) != (b.m, b.d):
        raise ValueError(f"segment dims mismatch: {(a.m, a.d)} vs {(b.m, b.d)}")
    diff = a.values - b.values
    return float(np.sqrt((diff**2).sum(axis=1)).max())


def sup_norms(atoms: np.ndarray) -> np.ndarray:
    """Vectorized sup-norm for a stack of segments, shape (N, n_lag+1, dim) -> (N,)."""
    return np.sqrt((atoms**2).sum(axis=2)).max(axis=1)
