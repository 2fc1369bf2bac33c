"""Empirical measures on segment space and Wasserstein distances between them.

An empirical measure is a uniform-weight cloud of N segments sharing one grid.
``wasserstein_exact`` solves the N-by-N assignment problem on sup-norm segment
costs and is exact by construction; ``wasserstein_sliced`` is a fast projected
surrogate for monitoring large clouds and is never a substitute for the exact
value in a quantitative claim.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import linear_sum_assignment

from .segments import Segment, sup_norms

# Largest cloud the exact assignment solver accepts (cubic worst case).
EXACT_CAP = 2048


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform-weight empirical measure over segments.

    ``atoms`` is the stacked array of shape (N, n_lag+1, m+d).  Models must
    read the measure only through the declared functionals below (means,
    moments, kernel expectations); each of them is Lipschitz with respect to
    the Wasserstein distance with an auditable constant.
    """

    atoms: np.ndarray
    m: int
    d: int
    theta_hint: float = 2.0

    def __post_init__(self):
        a = self.atoms
        if a.ndim != 3 or a.shape[2] != self.m + self.d:
            raise ValueError(f"atoms must have shape (N, n_lag+1, {self.m + self.d}), got {a.shape}")
        if a.shape[0] < 1:
            raise ValueError("an empirical measure needs at least one atom")
        if self.theta_hint < 1:
            raise ValueError(f"theta_hint must be >= 1, got {self.theta_hint}")
        if not np.isfinite(a).all():
            raise ValueError("atoms contain non-finite entries")

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def window(self) -> int:
        return self.atoms.shape[1]

    def segment(self, i: int) -> Segment:
        return Segment._wrap(self.atoms[i], self.m, self.d)

    @classmethod
    def from_segments(cls, segments, theta_hint: float = 2.0) -> "EmpiricalMeasure":
        segments = list(segments)
        first = segments[0]
        return cls(np.stack([s.values for s in segments]), first.m, first.d, theta_hint)

    @classmethod
    def from_constant_states(cls, states: np.ndarray, n_lag: int, m: int, d: int,
                             theta_hint: float = 2.0) -> "EmpiricalMeasure":
        """Atoms that are constant-in-time segments at the given states (N, m+d)."""
        states = np.asarray(states, dtype=float)
        atoms = np.repeat(states[:, None, :], n_lag + 1, axis=1)
        return cls(atoms, m, d, theta_hint)

    # --- declared measure functionals (all 1-Lipschitz w.r.t. W_theta, theta >= 1,
    # --- except moment/mean_sup_norm whose constants depend on the clip) ---

    @cached_property
    def _sup_norms(self) -> np.ndarray:
        return sup_norms(self.atoms)

    @cached_property
    def mean_state(self) -> np.ndarray:
        """Mean of the time-0 state over atoms."""
        return self.atoms[:, -1, :].mean(axis=0)

    @cached_property
    def mean_second_block(self) -> np.ndarray:
        """Mean of the time-0 momentum block over atoms."""
        return self.atoms[:, -1, self.m :].mean(axis=0)

    @cached_property
    def mean_sup_norm(self) -> float:
        return float(self._sup_norms.mean())

    def moment(self, theta: float) -> float:
        """Mean of sup_norm(atom)**theta."""
        if theta < 0:
            raise ValueError(f"theta must be >= 0, got {theta}")
        return float((self._sup_norms**theta).mean())

    def expectation(self, kernel) -> np.ndarray:
        """Mean over atoms of ``kernel(segment)``."""
        vals = [np.asarray(kernel(self.segment(i)), dtype=float) for i in range(self.n_atoms)]
        return np.mean(vals, axis=0)

    def subsample(self, n: int, seed: int) -> "EmpiricalMeasure":
        """I.i.d. (with replacement) subsample of n atoms; seeded, reproducible."""
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5AB5]))
        idx = rng.integers(0, self.n_atoms, size=n)
        return EmpiricalMeasure(self.atoms[idx].copy(), self.m, self.d, self.theta_hint)


def moment(a: EmpiricalMeasure, theta: float) -> float:
    return a.moment(theta)


def segment_cost_matrix(a_atoms: np.ndarray, b_atoms: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Pairwise sup-norm segment distances, shape (N_a, N_b).

    Chunked over rows to bound the (N, N, window, dim) broadcast temporaries.
    """
    na = a_atoms.shape[0]
    out = np.empty((na, b_atoms.shape[0]))
    for i0 in range(0, na, chunk):
        i1 = min(i0 + chunk, na)
        diff = a_atoms[i0:i1, None, :, :] - b_atoms[None, :, :, :]
        out[i0:i1] = np.sqrt((diff**2).sum(axis=3)).max(axis=2)
    return out


def assignment_value(cost: np.ndarray, theta: float) -> float:
    """((1/N) * sum of optimally assigned cost**theta) ** (1/theta)."""
    rows, cols = linear_sum_assignment(cost**theta)
    return float((cost[rows, cols] ** theta).mean() ** (1.0 / theta))


def wasserstein_exact(a: EmpiricalMeasure, b: EmpiricalMeasure, theta: float,
                      cap: int = EXACT_CAP) -> float:
    """Exact Wasserstein-theta distance between equal-size empirical measures.

    Minimizes the mean theta-power sup-norm segment cost over bijections via a
    shortest-augmenting-path assignment solver, then takes the 1/theta root.
    """
    if theta < 1:
        raise ValueError(f"theta must be >= 1, got {theta}")
    if a.atoms.shape[1:] != b.atoms.shape[1:]:
        raise ValueError(f"measures live on different grids: {a.atoms.shape[1:]} vs {b.atoms.shape[1:]}")
    if a.n_atoms != b.n_atoms:
        raise ValueError(
            f"unequal atom counts ({a.n_atoms} vs {b.n_atoms}) are unsupported; "
            "subsample to a common N upstream (EmpiricalMeasure.subsample)"
        )
    if a.n_atoms > cap:
        raise ValueError(f"N={a.n_atoms} exceeds the exact-solver cap {cap}; use wasserstein_sliced")
    cost = segment_cost_matrix(a.atoms, b.atoms)
    return assignment_value(cost, theta)


def wasserstein_sliced(a: EmpiricalMeasure, b: EmpiricalMeasure, theta: float,
                       n_projections: int = 64, seed: int = 0) -> float:
    """Sliced surrogate: average 1-d Wasserstein-theta over random directions.

    Segments are flattened to R^((n_lag+1)(m+d)) for the projections only; the
    1-d distance per direction is the sorted-matching closed form.  This is a
    different metric from ``wasserstein_exact`` (bounded by sqrt(window) times
    it) and is used only for monitoring.
    """
    if theta < 1:
        raise ValueError(f"theta must be >= 1, got {theta}")
    if a.atoms.shape[1:] != b.atoms.shape[1:]:
        raise ValueError(f"measures live on different grids: {a.atoms.shape[1:]} vs {b.atoms.shape[1:]}")
    if a.n_atoms != b.n_atoms:
        raise ValueError("sliced distance requires equal atom counts; subsample upstream")
    flat_a = a.atoms.reshape(a.n_atoms, -1)
    flat_b = b.atoms.reshape(b.n_atoms, -1)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x51CE]))
    dirs = rng.standard_normal((n_projections, flat_a.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa = np.sort(flat_a @ dirs.T, axis=0)
    pb = np.sort(flat_b @ dirs.T, axis=0)
    per_dir = (np.abs(pa - pb) ** theta).mean(axis=0) ** (1.0 / theta)
    return float(per_dir.mean())
