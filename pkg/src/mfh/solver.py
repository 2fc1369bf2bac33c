"""Euler-Maruyama simulation on segment state with reproducible noise streams.

Noise contract: the Gaussian increment consumed by stream ``(master_seed,
stream_id)`` at step ``k`` is a pure function of those three integers.  It is
implemented with the Philox counter-based generator keyed by (master_seed,
stream_id) and jumped to a per-step counter block, with normals produced by
inverse-CDF so each consumes exactly one 64-bit word.  Whole-path tables and
per-step draws therefore agree bit for bit, and ensembles are reproducible
under any execution order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from .errors import BlowUpError
from .measure import EmpiricalMeasure
from .model import ModelSpec, eval_diffusion, eval_drift
from .segments import PathRecord, Segment, TimeGrid

DEFAULT_BLOWUP_BOUND = 1e12

_U64 = np.uint64
_TO_UNIT = 2.0**-53  # maps the top 53 bits of a word into (0, 1)


def _words_per_step(d: int) -> int:
    # each Philox counter block yields 4 words; pad steps to whole blocks so
    # step k starts exactly at counter k * blocks_per_step
    return 4 * ((d + 3) // 4)


def _philox(master_seed: int, stream_id: int, counter_blocks: int) -> np.random.Philox:
    key = np.array([master_seed, stream_id], dtype=_U64)
    return np.random.Philox(counter=int(counter_blocks), key=key)


def _words_to_normals(words: np.ndarray) -> np.ndarray:
    u = ((words >> _U64(11)).astype(np.float64) + 0.5) * _TO_UNIT
    return ndtri(u)


@dataclass(frozen=True)
class NoiseStream:
    """Counter-based Gaussian increment stream for one particle."""

    master_seed: int
    stream_id: int

    def increments(self, step: int, d: int, dt: float) -> np.ndarray:
        """N(0, dt I_d) increment for one step."""
        wps = _words_per_step(d)
        bit = _philox(self.master_seed, self.stream_id, step * (wps // 4))
        words = bit.random_raw(d)
        return _words_to_normals(words) * np.sqrt(dt)

    def increment_table(self, n_steps: int, d: int, dt: float) -> np.ndarray:
        """All increments for steps 0..n_steps-1 in one draw, shape (n_steps, d).

        Row k equals ``increments(k, d, dt)`` exactly.
        """
        wps = _words_per_step(d)
        bit = _philox(self.master_seed, self.stream_id, 0)
        words = bit.random_raw(n_steps * wps).reshape(n_steps, wps)[:, :d]
        return _words_to_normals(words) * np.sqrt(dt)


def gaussian_increments(stream: NoiseStream, step: int, d: int, dt: float) -> np.ndarray:
    return stream.increments(step, d, dt)


@dataclass(frozen=True)
class FrozenFlow:
    """A time-indexed family of empirical measures, one per grid time 0..T.

    Freezing the measure argument turns the distribution-dependent equation
    into an ordinary functional SDE; the fixed-point solver iterates on these.
    """

    measures: tuple

    def __post_init__(self):
        if len(self.measures) < 1:
            raise ValueError("a flow needs at least one measure")
        shape = self.measures[0].atoms.shape[1:]
        for i, mu in enumerate(self.measures):
            if mu.atoms.shape[1:] != shape:
                raise ValueError(f"flow measure {i} lives on a different grid: {mu.atoms.shape[1:]} vs {shape}")

    def __len__(self) -> int:
        return len(self.measures)

    def __getitem__(self, k: int) -> EmpiricalMeasure:
        return self.measures[k]

    @classmethod
    def constant(cls, mu: EmpiricalMeasure, n_steps: int) -> "FrozenFlow":
        return cls(tuple([mu] * (n_steps + 1)))

    @classmethod
    def from_states(cls, states: np.ndarray, grid: TimeGrid, m: int, d: int,
                    theta_hint: float = 2.0) -> "FrozenFlow":
        """Flow of segment clouds read off an ensemble array (N, path_len, m+d)."""
        states = np.asarray(states)
        window = grid.window
        measures = tuple(
            EmpiricalMeasure(states[:, k : k + window, :], m, d, theta_hint)
            for k in range(grid.n_steps + 1)
        )
        return cls(measures)


def euler_step(spec: ModelSpec, t: float, seg: Segment, mu_t: EmpiricalMeasure,
               dW: np.ndarray, dt: float) -> np.ndarray:
    """One explicit step from the segment's time-0 state.

    Returns state + drift*dt + (0, sigma dW); the position block never sees
    the increment.
    """
    state = seg.current
    drift = eval_drift(spec, t, state, seg, mu_t)
    sig = eval_diffusion(spec, t, state, mu_t)
    nxt = state + dt * drift
    nxt[spec.m :] += sig @ dW
    return nxt


def _advance(spec: ModelSpec, buf: np.ndarray, dWs: np.ndarray, flow: FrozenFlow,
             grid: TimeGrid, bound: float, particle: int | None) -> None:
    """Fill ``buf[n_lag+1:]`` in place from the initial window ``buf[:n_lag+1]``."""
    window = grid.window
    dt = grid.dt
    for k in range(grid.n_steps):
        seg = Segment._wrap(buf[k : k + window], spec.m, spec.d)
        nxt = euler_step(spec, k * dt, seg, flow[k], dWs[k], dt)
        # a NaN fails the comparison, so this one guard covers non-finites too
        if not np.abs(nxt).max() <= bound:
            raise BlowUpError(step=k, particle=particle)
        buf[k + window] = nxt


def simulate_path(spec: ModelSpec, init: Segment, flow: FrozenFlow, stream: NoiseStream,
                  grid: TimeGrid, blowup_bound: float = DEFAULT_BLOWUP_BOUND) -> PathRecord:
    """Simulate one path of the frozen-measure equation from an initial segment."""
    if init.values.shape != (grid.window, spec.dim):
        raise ValueError(f"initial segment shape {init.values.shape} does not match grid/model")
    if len(flow) != grid.n_steps + 1:
        raise ValueError(f"flow has {len(flow)} measures, grid needs {grid.n_steps + 1}")
    buf = np.empty((grid.path_len, spec.dim))
    buf[: grid.window] = init.values
    dWs = stream.increment_table(grid.n_steps, spec.d, grid.dt)
    _advance(spec, buf, dWs, flow, grid, blowup_bound, particle=None)
    return PathRecord(states=buf, grid=grid, m=spec.m, d=spec.d)


def simulate_ensemble(spec: ModelSpec, inits: Sequence[Segment], flow: FrozenFlow,
                      streams: Sequence[NoiseStream], grid: TimeGrid,
                      blowup_bound: float = DEFAULT_BLOWUP_BOUND) -> list[PathRecord]:
    """Independent copies of the frozen-measure equation, one stream each.

    Element i equals ``simulate_path(spec, inits[i], flow, streams[i], grid)``
    exactly; the result does not depend on evaluation order.
    """
    if len(inits) != len(streams):
        raise ValueError(f"{len(inits)} initial segments but {len(streams)} streams")
    out = []
    for i, (init, stream) in enumerate(zip(inits, streams)):
        try:
            out.append(simulate_path(spec, init, flow, stream, grid, blowup_bound))
        except BlowUpError as err:
            raise BlowUpError(step=err.step, particle=i) from None
    return out


def ensemble_states(spec: ModelSpec, init_values: np.ndarray, flow: FrozenFlow,
                    streams: Sequence[NoiseStream], grid: TimeGrid,
                    blowup_bound: float = DEFAULT_BLOWUP_BOUND) -> np.ndarray:
    """Stacked-path variant of :func:`simulate_ensemble`.

    ``init_values`` has shape (N, n_lag+1, m+d); returns (N, path_len, m+d)
    with row i bitwise equal to the states of the corresponding single-path
    simulation.
    """
    n = init_values.shape[0]
    if n != len(streams):
        raise ValueError(f"{n} initial segments but {len(streams)} streams")
    out = np.empty((n, grid.path_len, spec.dim))
    for i in range(n):
        out[i, : grid.window] = init_values[i]
        dWs = streams[i].increment_table(grid.n_steps, spec.d, grid.dt)
        _advance(spec, out[i], dWs, flow, grid, blowup_bound, particle=i)
    return out
