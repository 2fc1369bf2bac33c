"""Mean-field solvers: Picard fixed-point on measure flows, interacting
particles, and the coupled convergence experiment.

The fixed-point iteration simulates an ensemble of decoupled paths against a
frozen measure flow and feeds the resulting segment clouds back in as the next
flow.  With common random numbers across iterations the map is deterministic,
so the fixed point is detectable at tolerance instead of drowning in Monte
Carlo noise.

The chaos experiment couples, increment by increment, the non-interacting
system driven by a large-ensemble reference flow with the N-particle
interacting system started from the same segments.  Particle pools are nested
across N within a replicate (the first N of one pool), which keeps the
error-versus-N curve on common random numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import maximum_filter1d

from .errors import ConfigError
from .measure import (EXACT_CAP, EmpiricalMeasure, assignment_value,
                      segment_cost_matrix, wasserstein_exact, wasserstein_sliced)
from .model import ModelSpec
from .segments import PathRecord, Segment, TimeGrid, sup_norms
from .solver import (DEFAULT_BLOWUP_BOUND, FrozenFlow, NoiseStream,
                     ensemble_states)

# sub-seed purposes, mixed with the master seed through SeedSequence
_P_PICARD_INIT = 1
_P_PICARD_NOISE = 2
_P_METRIC = 3
_P_CHAOS_REF = 4
_P_CHAOS_INIT = 5
_P_CHAOS_NOISE = 6
_P_CHAOS_GAP = 7


def derive_seed(master_seed: int, *purpose: int) -> int:
    """Stable 64-bit sub-seed for a named purpose under one master seed."""
    ss = np.random.SeedSequence([int(master_seed), *map(int, purpose)])
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# Wasserstein profiles along a flow
# ---------------------------------------------------------------------------

def cost_matrix_at(states_a: np.ndarray, states_b: np.ndarray, k: int, window: int) -> np.ndarray:
    """Pairwise segment distances between the two clouds anchored at step k."""
    return segment_cost_matrix(states_a[:, k : k + window, :], states_b[:, k : k + window, :])


def exact_wasserstein_profile(states_a: np.ndarray, states_b: np.ndarray, window: int,
                              theta: float, time_block: int = 32,
                              row_chunk: int = 512) -> np.ndarray:
    """W_theta between the segment clouds of two ensembles at every grid time.

    Equivalent to calling ``wasserstein_exact`` on the extracted measures time
    by time, but shares work across times: per-state-row distance matrices are
    built once (time-major, one coordinate at a time) and the max over each
    delay window is taken with a sliding maximum filter.
    """
    n, path_len, dim = states_a.shape
    n_times = path_len - window + 1
    ta = np.ascontiguousarray(states_a.transpose(1, 0, 2))
    tb = np.ascontiguousarray(states_b.transpose(1, 0, 2))
    prof = np.empty(n_times)
    for k0 in range(0, n_times, time_block):
        k1 = min(k0 + time_block, n_times)
        nblk = k1 - k0
        slab_len = nblk + window - 1
        costs = np.empty((nblk, n, n))
        for i0 in range(0, n, row_chunk):
            i1 = min(i0 + row_chunk, n)
            dst = np.empty((slab_len, i1 - i0, n))
            for s in range(slab_len):
                row = k0 + s
                acc = (ta[row, i0:i1, 0, None] - tb[row, None, :, 0]) ** 2
                for cdim in range(1, dim):
                    acc += (ta[row, i0:i1, cdim, None] - tb[row, None, :, cdim]) ** 2
                np.sqrt(acc, out=dst[s])
            if window == 1:
                costs[:, i0:i1, :] = dst
            else:
                # centered filter: max over rows [j, j+window) sits at j + window//2
                mx = maximum_filter1d(dst, size=window, axis=0, mode="nearest")
                off = window // 2
                costs[:, i0:i1, :] = mx[off : off + nblk]
        for j in range(nblk):
            prof[k0 + j] = assignment_value(costs[j], theta)
    return prof


def sliced_wasserstein_profile(states_a: np.ndarray, states_b: np.ndarray, window: int,
                               theta: float, m: int, d: int,
                               n_projections: int = 64, seed: int = 0) -> np.ndarray:
    """Sliced surrogate of :func:`exact_wasserstein_profile` for large ensembles.

    Uses one fixed direction set for every time point so successive profiles
    are comparable.
    """
    n, path_len, dim = states_a.shape
    n_times = path_len - window + 1
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x51CE]))
    dirs = rng.standard_normal((n_projections, window * dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    prof = np.empty(n_times)
    for k in range(n_times):
        fa = states_a[:, k : k + window, :].reshape(n, -1)
        fb = states_b[:, k : k + window, :].reshape(n, -1)
        pa = np.sort(fa @ dirs.T, axis=0)
        pb = np.sort(fb @ dirs.T, axis=0)
        per_dir = (np.abs(pa - pb) ** theta).mean(axis=0) ** (1.0 / theta)
        prof[k] = per_dir.mean()
    return prof


# ---------------------------------------------------------------------------
# Picard fixed point
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PicardConfig:
    """Fixed-point iteration controls.

    ``delta0`` is the discount rate of the weighted flow metric
    ``sup_t exp(-delta0 t) W_theta(flow_t, flow'_t)``; ``None`` selects it
    adaptively as twice the observed growth rate of the first iterate gap.
    ``reuse_noise=True`` fixes one noise stream per sample across iterations.
    """

    M: int
    max_iter: int = 25
    tol: float = 1e-3
    delta0: Optional[float] = None
    reuse_noise: bool = True

    def __post_init__(self):
        if self.M < 2:
            raise ValueError(f"M must be >= 2, got {self.M}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.delta0 is not None and self.delta0 < 0:
            raise ValueError(f"delta0 must be >= 0, got {self.delta0}")


@dataclass(frozen=True)
class PicardResult:
    """Outcome of the fixed-point iteration.

    ``trace[j]`` is the weighted metric between iterates j+1 and j+2 (the
    initial guess is iterate 0 and never enters the trace).  Non-convergence
    is reported through ``converged=False`` rather than an exception.
    """

    flow: FrozenFlow
    trace: tuple
    converged: bool
    delta0: float
    n_iter: int


def _estimate_delta0(profile: np.ndarray, times: np.ndarray) -> float:
    """Twice the fitted exponential growth rate of the iterate gap profile."""
    pos = profile > 0
    if pos.sum() < 2:
        return 0.0
    slope = np.polyfit(times[pos], np.log(profile[pos]), 1)[0]
    return 2.0 * max(0.0, float(slope))


def picard_solve(spec: ModelSpec, init: EmpiricalMeasure, grid: TimeGrid, cfg: PicardConfig,
                 master_seed: int = 0, exact_cap: int = EXACT_CAP,
                 blowup_bound: float = DEFAULT_BLOWUP_BOUND) -> PicardResult:
    """Solve the distribution-dependent equation by fixed point on measure flows.

    Starting from the constant-in-time flow of the initial cloud, each
    iteration simulates ``cfg.M`` decoupled paths against the frozen previous
    flow and collects their segment clouds into the next flow.  Stops when the
    weighted sup-in-time Wasserstein gap between successive flows falls below
    ``cfg.tol``.  Beyond ``exact_cap`` samples the stopping metric switches to
    the sliced surrogate (monitoring only; quantitative runs should keep
    ``M <= exact_cap``).
    """
    if init.window != grid.window:
        raise ValueError(f"initial measure window {init.window} does not match grid window {grid.window}")
    theta = spec.theta
    if init.n_atoms == cfg.M:
        init_values = init.atoms.copy()
    else:
        init_values = init.subsample(cfg.M, seed=derive_seed(master_seed, _P_PICARD_INIT)).atoms

    noise_seed = derive_seed(master_seed, _P_PICARD_NOISE)
    metric_seed = derive_seed(master_seed, _P_METRIC)

    def streams_for(iteration: int) -> list[NoiseStream]:
        base = 0 if cfg.reuse_noise else iteration * cfg.M
        return [NoiseStream(noise_seed, base + i) for i in range(cfg.M)]

    def profile_between(sa: np.ndarray, sb: np.ndarray) -> np.ndarray:
        if cfg.M <= exact_cap:
            return exact_wasserstein_profile(sa, sb, grid.window, theta)
        return sliced_wasserstein_profile(sa, sb, grid.window, theta, spec.m, spec.d,
                                          seed=metric_seed)

    flow0 = FrozenFlow.constant(EmpiricalMeasure(init_values, spec.m, spec.d, theta), grid.n_steps)
    states_prev = ensemble_states(spec, init_values, flow0, streams_for(0), grid, blowup_bound)

    times = grid.times()
    delta0 = cfg.delta0
    trace: list[float] = []
    converged = False
    states_cur = states_prev
    for j in range(1, cfg.max_iter + 1):
        flow_prev = FrozenFlow.from_states(states_prev, grid, spec.m, spec.d, theta)
        states_cur = ensemble_states(spec, init_values, flow_prev, streams_for(j), grid, blowup_bound)
        prof = profile_between(states_prev, states_cur)
        if delta0 is None:
            delta0 = _estimate_delta0(prof, times)
        metric = float((np.exp(-delta0 * times) * prof).max())
        trace.append(metric)
        states_prev = states_cur
        if metric < cfg.tol:
            converged = True
            break

    return PicardResult(
        flow=FrozenFlow.from_states(states_cur, grid, spec.m, spec.d, theta),
        trace=tuple(trace),
        converged=converged,
        delta0=float(delta0 if delta0 is not None else 0.0),
        n_iter=len(trace),
    )


# ---------------------------------------------------------------------------
# Interacting particles
# ---------------------------------------------------------------------------

def particle_states(spec: ModelSpec, init_values: np.ndarray, grid: TimeGrid,
                    streams: Sequence[NoiseStream],
                    blowup_bound: float = DEFAULT_BLOWUP_BOUND) -> np.ndarray:
    """Synchronous interacting-particle simulation, stacked states (N, path_len, dim).

    At every step the empirical measure of the pre-step segment clouds drives
    all particles; updates land in rows no particle reads during the step, so
    the result is independent of the particle evaluation order.
    """
    from .errors import BlowUpError
    from .solver import euler_step

    n = init_values.shape[0]
    if n != len(streams):
        raise ValueError(f"{n} initial segments but {len(streams)} streams")
    window, dt = grid.window, grid.dt
    states = np.empty((n, grid.path_len, spec.dim))
    states[:, :window] = init_values
    tables = [streams[i].increment_table(grid.n_steps, spec.d, dt) for i in range(n)]
    for k in range(grid.n_steps):
        mu = EmpiricalMeasure(states[:, k : k + window, :], spec.m, spec.d, spec.theta)
        t = k * dt
        for i in range(n):
            seg = Segment._wrap(states[i, k : k + window], spec.m, spec.d)
            nxt = euler_step(spec, t, seg, mu, tables[i][k], dt)
            if not np.abs(nxt).max() <= blowup_bound:
                raise BlowUpError(step=k, particle=i)
            states[i, k + window] = nxt
    return states


def particle_solve(spec: ModelSpec, inits: Sequence[Segment], grid: TimeGrid,
                   streams: Sequence[NoiseStream],
                   blowup_bound: float = DEFAULT_BLOWUP_BOUND) -> list[PathRecord]:
    """Interacting-particle simulation returning one path record per particle."""
    init_values = np.stack([s.values for s in inits])
    states = particle_states(spec, init_values, grid, streams, blowup_bound)
    return [PathRecord(states=states[i].copy(), grid=grid, m=spec.m, d=spec.d)
            for i in range(len(inits))]


# ---------------------------------------------------------------------------
# Propagation-of-chaos experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChaosRow:
    N: int
    error_estimate: float       # mean_i sup_t |X_i - X_i^N|^theta, replicate average
    std_error: float            # replicate-level standard error of the above
    wasserstein_gap: float      # W_theta(interacting cloud at T, reference cloud at T)


@dataclass(frozen=True)
class ChaosReport:
    """Coupling error of the interacting system against the mean-field limit.

    ``slope`` is the fitted log-log rate of the strong error norm
    ``error_estimate ** (1/theta)`` against N; ``slope_raw_moment`` is the
    slope of the theta-power moment itself (steeper by the factor theta).
    ``tail_monitor[N]`` lists (threshold, mean tail mass) pairs for the
    uniform-integrability proxy; monitored, never asserted.
    """

    rows: tuple
    slope: float
    slope_raw_moment: float
    theta: float
    M_ref: int
    replicates: int
    ref_converged: bool
    ref_trace: tuple
    tail_monitor: dict = field(default_factory=dict)

    def __post_init__(self):
        ns = [row.N for row in self.rows]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError(f"N values must be strictly increasing, got {ns}")
        if any(row.error_estimate < 0 for row in self.rows):
            raise ValueError("error estimates must be nonnegative")


_TAIL_THRESHOLDS = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0)


def chaos_experiment(spec: ModelSpec, init: EmpiricalMeasure, Ns: Sequence[int],
                     M_ref: int, replicates: int, grid: TimeGrid, theta: float,
                     master_seed: int = 0, picard_cfg: Optional[PicardConfig] = None,
                     blowup_bound: float = DEFAULT_BLOWUP_BOUND) -> ChaosReport:
    """Measure the particle-system coupling error against a reference flow.

    For every replicate one pool of ``max(Ns)`` initial segments and noise
    streams is drawn; each N uses the first N of the pool.  The
    non-interacting system runs against the fixed-point reference flow and the
    interacting system runs from the same segments with the same increments,
    so their gap isolates the mean-field approximation error.
    """
    Ns = [int(n) for n in Ns]
    if any(b <= a for a, b in zip(Ns, Ns[1:])) or len(Ns) < 1:
        raise ConfigError(f"Ns must be strictly increasing and nonempty, got {Ns}")
    if M_ref <= max(Ns):
        raise ConfigError(f"M_ref={M_ref} must exceed max(Ns)={max(Ns)}")
    if replicates < 1:
        raise ConfigError("replicates must be >= 1")
    if theta < 1:
        raise ConfigError(f"theta must be >= 1, got {theta}")
    if spec.sigma_measure_dependent and theta < 2:
        raise ConfigError("theta >= 2 is required when the diffusion is measure dependent")

    cfg = picard_cfg or PicardConfig(M=M_ref, max_iter=20, tol=1e-3)
    if cfg.M != M_ref:
        raise ConfigError(f"picard_cfg.M={cfg.M} must equal M_ref={M_ref}")
    ref = picard_solve(spec, init, grid, cfg, master_seed=derive_seed(master_seed, _P_CHAOS_REF),
                       blowup_bound=blowup_bound)

    n_max = max(Ns)
    window = grid.window
    errors = {n: [] for n in Ns}
    gaps = {n: [] for n in Ns}
    tail_sums = {n: [] for n in Ns}

    for rep in range(replicates):
        pool = init.subsample(n_max, seed=derive_seed(master_seed, _P_CHAOS_INIT, rep))
        noise_seed = derive_seed(master_seed, _P_CHAOS_NOISE, rep)
        streams = [NoiseStream(noise_seed, i) for i in range(n_max)]
        for n in Ns:
            inits = pool.atoms[:n]
            strms = streams[:n]
            free = ensemble_states(spec, inits, ref.flow, strms, grid, blowup_bound)
            inter = particle_states(spec, inits, grid, strms, blowup_bound)
            diff = free[:, grid.n_lag :, :] - inter[:, grid.n_lag :, :]
            sup_dev = np.sqrt((diff**2).sum(axis=2)).max(axis=1)
            errors[n].append(float((sup_dev**theta).mean()))

            cloud_T = EmpiricalMeasure(inter[:, grid.n_steps :, :], spec.m, spec.d, theta)
            ref_T = ref.flow[grid.n_steps].subsample(n, seed=derive_seed(master_seed, _P_CHAOS_GAP, rep))
            gaps[n].append(wasserstein_exact(cloud_T, ref_T, theta))

            tail_sums[n].append(float((sup_norms(inter) ** theta).mean()))

    rows = []
    for n in Ns:
        vals = np.array(errors[n])
        se = float(vals.std(ddof=1) / math.sqrt(replicates)) if replicates > 1 else 0.0
        rows.append(ChaosRow(N=n, error_estimate=float(vals.mean()), std_error=se,
                             wasserstein_gap=float(np.mean(gaps[n]))))

    errs = np.array([row.error_estimate for row in rows])
    if len(rows) >= 2 and (errs > 0).all():
        log_n = np.log([row.N for row in rows])
        slope_raw = float(np.polyfit(log_n, np.log(errs), 1)[0])
        slope = float(np.polyfit(log_n, np.log(errs ** (1.0 / theta)), 1)[0])
    else:
        slope = slope_raw = float("nan")

    tail_monitor = {}
    for n in Ns:
        s = np.array(tail_sums[n])
        tail_monitor[n] = [(thr, float(np.mean(np.where(s >= thr, s, 0.0)))) for thr in _TAIL_THRESHOLDS]

    return ChaosReport(rows=tuple(rows), slope=slope, slope_raw_moment=slope_raw,
                       theta=theta, M_ref=M_ref, replicates=replicates,
                       ref_converged=ref.converged, ref_trace=ref.trace,
                       tail_monitor=tail_monitor)
