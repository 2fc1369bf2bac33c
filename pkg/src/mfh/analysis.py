"""Ergodicity-rate estimation and change-of-measure / entropy certificates.

``contraction_rate`` drives two interacting particle systems (optionally with
synchronous coupling, i.e. shared increments) and fits an exponential decay
rate to the Wasserstein-2 distance between their segment clouds.

``girsanov_certificate`` simulates the frozen-flow equation under one flow and
accumulates the exponential-martingale density against the other flow, along
with the drift discrepancy process it exponentiates.  The Monte Carlo outputs
come with the identities they must satisfy (unit mean, entropy identity) so a
run certifies itself.

``sigma_certificate`` and ``entropy_bound`` are closed-form; the constant in
front of the hypoelliptic term is unknown, so that term is reported in units
of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .meanfield import cost_matrix_at, derive_seed, particle_states
from .measure import EXACT_CAP, EmpiricalMeasure, assignment_value
from .model import HamiltonianForm, ModelSpec
from .segments import Segment, TimeGrid
from .solver import DEFAULT_BLOWUP_BOUND, FrozenFlow, NoiseStream, euler_step

_P_ERGO_A = 20
_P_ERGO_B = 21
_P_ERGO_NOISE = 22
_P_GIRSANOV_INIT = 23
_P_GIRSANOV_NOISE = 24

KAPPA_DEGENERATE = float("inf")


@dataclass(frozen=True)
class ErgodicityReport:
    """Wasserstein-2 decay between two particle clouds and its fitted rate.

    ``kappa_hat`` is minus the least-squares slope of log W2 over the tail fit
    window, ``c_hat`` the fitted prefactor at t=0.  ``coupling_curve`` is the
    index-aligned synchronous-coupling cost, an upper bound for ``w2_curve``
    by optimality of the transport plan.  A run from identical clouds under
    shared noise is flagged ``degenerate`` and gets the +inf rate sentinel.
    """

    times: np.ndarray
    w2_curve: np.ndarray
    coupling_curve: np.ndarray
    kappa_hat: float
    c_hat: float
    fit_r2: float
    degenerate: bool


def contraction_rate(spec: ModelSpec, mu0: EmpiricalMeasure, nu0: EmpiricalMeasure,
                     grid: TimeGrid, N: int, shared_noise: bool = True, seed: int = 0,
                     report_every: int = 5, fit_start_frac: float = 0.5,
                     blowup_bound: float = DEFAULT_BLOWUP_BOUND) -> ErgodicityReport:
    """Evolve two interacting systems and fit the exponential contraction rate.

    The clouds start from ``mu0`` and ``nu0`` (resampled to N atoms each) and
    are compared by exact optimal transport at every ``report_every``-th grid
    time; the rate is fitted on the log curve over ``[fit_start_frac * T, T]``.
    """
    if N > EXACT_CAP:
        raise ConfigError(f"N={N} exceeds the exact transport cap {EXACT_CAP}")
    init_a = mu0.subsample(N, seed=derive_seed(seed, _P_ERGO_A)).atoms
    init_b = nu0.subsample(N, seed=derive_seed(seed, _P_ERGO_B)).atoms

    noise = derive_seed(seed, _P_ERGO_NOISE)
    streams_a = [NoiseStream(noise, i) for i in range(N)]
    streams_b = streams_a if shared_noise else [NoiseStream(noise, N + i) for i in range(N)]

    sa = particle_states(spec, init_a, grid, streams_a, blowup_bound)
    sb = particle_states(spec, init_b, grid, streams_b, blowup_bound)

    idx = np.arange(0, grid.n_steps + 1, report_every)
    if idx[-1] != grid.n_steps:
        idx = np.append(idx, grid.n_steps)
    times = idx * grid.dt
    w2 = np.empty(len(idx))
    coupling = np.empty(len(idx))
    for j, k in enumerate(idx):
        cost = cost_matrix_at(sa, sb, int(k), grid.window)
        w2[j] = assignment_value(cost, 2.0)
        coupling[j] = math.sqrt(float((np.diagonal(cost) ** 2).mean()))

    tail = times >= fit_start_frac * grid.T
    positive = w2 > 0
    usable = tail & positive
    if usable.sum() < 2:
        return ErgodicityReport(times=times, w2_curve=w2, coupling_curve=coupling,
                                kappa_hat=KAPPA_DEGENERATE, c_hat=0.0, fit_r2=1.0,
                                degenerate=True)
    logw = np.log(w2[usable])
    slope, intercept = np.polyfit(times[usable], logw, 1)
    pred = slope * times[usable] + intercept
    ss_res = float(((logw - pred) ** 2).sum())
    ss_tot = float(((logw - logw.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return ErgodicityReport(times=times, w2_curve=w2, coupling_curve=coupling,
                            kappa_hat=float(-slope), c_hat=float(np.exp(intercept)),
                            fit_r2=r2, degenerate=False)


def estimate_growth_rate(spec: ModelSpec, mu0: EmpiricalMeasure, nu0: EmpiricalMeasure,
                         grid: TimeGrid, N: int, seed: int = 0) -> float:
    """Short-horizon expansion rate of the flow map, max(0, d/dt log W_2).

    Used as the declared growth constant when the model author does not supply
    one; for contractive systems it returns 0.
    """
    report = contraction_rate(spec, mu0, nu0, grid, N, shared_noise=True, seed=seed,
                              report_every=1, fit_start_frac=0.0)
    if report.degenerate:
        return 0.0
    return max(0.0, -report.kappa_hat)


# ---------------------------------------------------------------------------
# Exponential-martingale certificate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GirsanovCertificate:
    """Monte Carlo change-of-measure diagnostics between two frozen flows.

    ``e_r`` estimates the density mean (must be 1), ``e_r_log_r`` the relative
    entropy of the tilted path law, and ``half_int_gamma_sq_q`` the
    density-weighted half integral of the squared drift discrepancy; the
    entropy identity says the last two agree up to Monte Carlo error after
    doubling the former.  ``ess`` is the effective sample size of the weights;
    below 10 the result is flagged degenerate.
    """

    e_r: float
    se_r: float
    e_r_log_r: float
    se_r_log_r: float
    half_int_gamma_sq_q: float
    se_half_int: float
    gamma_sup: float
    ess: float
    degenerate: bool
    n_paths: int


def girsanov_certificate(ham: HamiltonianForm, flow_mu: FrozenFlow, flow_nu: FrozenFlow,
                         n_paths: int, grid: TimeGrid, seed: int = 0,
                         blowup_bound: float = DEFAULT_BLOWUP_BOUND) -> GirsanovCertificate:
    """Simulate under ``flow_mu`` and certify the density against ``flow_nu``.

    Along each path the drift discrepancy
    ``gamma_k = sigma^{-1} [(Z + B)(flow_mu_k) - (Z + B)(flow_nu_k)]``
    is accumulated with the left-point stochastic integral on the simulation's
    own increments, and the exponential-martingale density
    ``R = exp(-sum <gamma, dW> - 1/2 sum |gamma|^2 dt)`` is formed at T.
    """
    if len(flow_mu) != grid.n_steps + 1 or len(flow_nu) != grid.n_steps + 1:
        raise ValueError("flows and grid disagree on the number of time points")
    sigma_inv = np.linalg.inv(ham.sigma)
    spec = ham.to_model_spec()
    m, window, dt = spec.m, grid.window, grid.dt

    init = flow_mu[0].subsample(n_paths, seed=derive_seed(seed, _P_GIRSANOV_INIT))
    noise = derive_seed(seed, _P_GIRSANOV_NOISE)

    ito = np.zeros(n_paths)       # sum <gamma, dW>
    quad = np.zeros(n_paths)      # sum |gamma|^2 dt
    gamma_sup = 0.0
    buf = np.empty((grid.path_len, spec.dim))
    for i in range(n_paths):
        buf[:window] = init.atoms[i]
        dWs = NoiseStream(noise, i).increment_table(grid.n_steps, spec.d, dt)
        for k in range(grid.n_steps):
            seg = Segment._wrap(buf[k : k + window], spec.m, spec.d)
            state = seg.current
            mu_k, nu_k = flow_mu[k], flow_nu[k]
            gamma = sigma_inv @ (ham.Z(state, mu_k) + ham.B(seg, mu_k)
                                 - ham.Z(state, nu_k) - ham.B(seg, nu_k))
            gnorm = float(np.sqrt(gamma @ gamma))
            if gnorm > gamma_sup:
                gamma_sup = gnorm
            ito[i] += float(gamma @ dWs[k])
            quad[i] += gnorm**2 * dt
            nxt = euler_step(spec, k * dt, seg, mu_k, dWs[k], dt)
            if not np.isfinite(nxt).all() or np.abs(nxt).max() > blowup_bound:
                from .errors import BlowUpError
                raise BlowUpError(step=k, particle=i)
            buf[k + window] = nxt

    R = np.exp(-ito - 0.5 * quad)
    RlogR = R * np.log(R)
    weighted_half = R * 0.5 * quad
    ess = float(R.sum() ** 2 / (R**2).sum())

    def mean_se(x: np.ndarray) -> tuple[float, float]:
        return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))

    e_r, se_r = mean_se(R)
    e_rlr, se_rlr = mean_se(RlogR)
    half, se_half = mean_se(weighted_half)
    return GirsanovCertificate(e_r=e_r, se_r=se_r, e_r_log_r=e_rlr, se_r_log_r=se_rlr,
                               half_int_gamma_sq_q=half, se_half_int=se_half,
                               gamma_sup=gamma_sup, ess=ess, degenerate=ess < 10.0,
                               n_paths=n_paths)


def flow_distance_max(flow_a: FrozenFlow, flow_b: FrozenFlow, theta: float) -> float:
    """max over grid times of the exact Wasserstein distance between two flows."""
    from .measure import wasserstein_exact

    return max(wasserstein_exact(flow_a[k], flow_b[k], theta) for k in range(len(flow_a)))


# ---------------------------------------------------------------------------
# Closed-form certificates
# ---------------------------------------------------------------------------

def sigma_certificate(T: float, r: float, M_norm: float, k: int) -> float:
    """Hypoelliptic smoothing cost (in units of the unknown constant).

    ``(1/((T-r) ^ 1) + M/((T-r)^(4k+3) ^ 1)) + (1 + M/((T-r)^(2k+1) ^ 1))^2``
    where ``x ^ 1`` denotes min(x, 1); requires T > r and the rank-condition
    depth k >= 0.
    """
    if not T > r:
        raise ValueError(f"requires T > r, got T={T}, r={r}")
    if k < 0 or int(k) != k:
        raise ValueError(f"k must be a nonnegative integer, got {k}")
    if M_norm < 0:
        raise ValueError(f"M_norm must be >= 0, got {M_norm}")
    gap = T - r
    first = 1.0 / min(gap, 1.0) + M_norm / min(gap ** (4 * k + 3), 1.0)
    second = (1.0 + M_norm / min(gap ** (2 * k + 1), 1.0)) ** 2
    return first + second


def exp_growth_integral(K: float, T: float) -> float:
    """integral_0^T exp(2 K s) ds, with a series branch near K = 0."""
    if T < 0:
        raise ValueError(f"T must be >= 0, got {T}")
    if abs(K) < 1e-8:
        u = 2.0 * K * T
        return T * (1.0 + u / 2.0 + u * u / 6.0 + u**3 / 24.0)
    return (math.exp(2.0 * K * T) - 1.0) / (2.0 * K)


@dataclass(frozen=True)
class EntropyCertificate:
    """Upper bound on the relative entropy between two time-T laws.

    ``first_term`` is the camera-ready Girsanov cost
    ``|sigma^{-1}|^2 (K_Z + K_B)^2 integral_0^T e^{2Ks} ds * wtilde0^2``;
    ``sigma_term_over_C`` multiplies :func:`sigma_certificate` by ``w2_0^2``
    and is reported in units of the unknown constant.
    """

    first_term: float
    sigma_term_over_C: float
    inputs: dict

    def __post_init__(self):
        if self.first_term < 0 or self.sigma_term_over_C < 0:
            raise ValueError("certificate terms must be nonnegative")


def entropy_bound(sigma_inv_norm: float, K_Z: float, K_B: float, K: float, T: float,
                  r: float, M_norm: float, k: int, wtilde0: float, w2_0: float) -> EntropyCertificate:
    """Assemble the relative-entropy certificate from declared constants.

    ``wtilde0`` is the initial combined (Wasserstein + total variation)
    distance, supplied by the caller: the total-variation part is never
    estimated here (0 for equal initial laws, 2 is always a valid bound).
    ``w2_0`` is the initial Wasserstein-2 distance.  Requires T > r.
    """
    if not T > r:
        raise ValueError(f"requires T > r, got T={T}, r={r}")
    for name, v in [("sigma_inv_norm", sigma_inv_norm), ("K_Z", K_Z), ("K_B", K_B),
                    ("wtilde0", wtilde0), ("w2_0", w2_0)]:
        if v < 0:
            raise ValueError(f"{name} must be >= 0, got {v}")
    first = sigma_inv_norm**2 * (K_Z + K_B) ** 2 * exp_growth_integral(K, T) * wtilde0**2
    sigma_term = sigma_certificate(T, r, M_norm, k) * w2_0**2
    return EntropyCertificate(
        first_term=first,
        sigma_term_over_C=sigma_term,
        inputs={"sigma_inv_norm": sigma_inv_norm, "K_Z": K_Z, "K_B": K_B, "K": K,
                "T": T, "r": r, "M_norm": M_norm, "k": k,
                "wtilde0": wtilde0, "w2_0": w2_0},
    )
