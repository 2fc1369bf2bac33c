"""SDE coefficient declarations and assumption checkers.

Two coefficient forms are supported:

* the structured Hamiltonian form: positions move by ``dX = (A X + M Y) dt``,
  momenta by ``dY = (Z + B) dt + sigma dW`` with constant invertible ``sigma``,
  state-and-measure drift ``Z`` and segment-and-measure delay drift ``B``;
* the general form: drifts ``b``, ``b_hat`` on the full state, a momentum-only
  delay drift ``B``, and a state/measure dependent diffusion ``sigma``; noise
  enters only the momentum block.

Lipschitz-type constants are declared by the model author (they feed the
certificates); a sampling falsifier is provided for the dissipativity
condition, which is the one inequality cheap enough to probe numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NumericError
from .measure import EmpiricalMeasure, wasserstein_exact
from .segments import Segment


@dataclass(frozen=True)
class LipschitzConstants:
    """Author-declared constants used by the certificates (never estimated)."""

    K_Z: float = 0.0
    K_B: float = 0.0
    K_sigma: float = 0.0
    C_H: float = 0.0


@dataclass(frozen=True)
class ModelSpec:
    """General-form coefficients on R^(m+d).

    Coefficient callables must be pure functions of their arguments:

    * ``drift_b(t, x, mu)``, ``drift_bhat(t, x, mu)`` -> R^(m+d)
    * ``drift_B(t, seg, mu)`` -> R^d (enters only the momentum block)
    * ``diffusion_sigma(t, x, mu)`` -> (d, d) matrix

    ``mu`` is always an :class:`~mfh.measure.EmpiricalMeasure`; models read it
    through its declared functionals only, so the measure-Lipschitz dependence
    stays auditable.
    """

    m: int
    d: int
    drift_b: Callable
    drift_bhat: Callable
    drift_B: Callable
    diffusion_sigma: Callable
    theta: float = 2.0
    lip: LipschitzConstants = field(default_factory=LipschitzConstants)
    sigma_measure_dependent: bool = False
    name: str = ""

    def __post_init__(self):
        if self.m < 1 or self.d < 1:
            raise ValueError(f"dimensions must satisfy m,d >= 1, got m={self.m}, d={self.d}")
        if self.theta < 1:
            raise ValueError(f"theta must be >= 1, got {self.theta}")

    @property
    def dim(self) -> int:
        return self.m + self.d


@dataclass(frozen=True)
class HamiltonianForm:
    """Structured kinetic form; converts losslessly into a :class:`ModelSpec`.

    ``Z(x, mu)`` -> R^d, ``B(seg, mu)`` -> R^d; ``sigma`` is a constant (d, d)
    matrix.  ``K_Z`` and ``K_B`` bound the declared state/segment and measure
    Lipschitz constants of ``Z`` and ``B``.
    """

    A: np.ndarray
    M: np.ndarray
    sigma: np.ndarray
    Z: Callable
    B: Callable
    K_Z: float
    K_B: float
    theta: float = 2.0
    name: str = ""

    def __post_init__(self):
        m = self.A.shape[0]
        d = self.sigma.shape[0]
        if self.A.shape != (m, m):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.M.shape != (m, d):
            raise ValueError(f"M must be ({m}, {d}), got {self.M.shape}")
        if self.sigma.shape != (d, d):
            raise ValueError(f"sigma must be square, got {self.sigma.shape}")

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.sigma.shape[0]

    def to_model_spec(self) -> ModelSpec:
        A, M, sig = self.A, self.M, self.sigma
        m = self.m

        def drift_b(t, x, mu, _A=A, _M=M, _Z=self.Z, _m=m):
            out = np.empty(x.shape[0])
            out[:_m] = _A @ x[:_m] + _M @ x[_m:]
            out[_m:] = _Z(x, mu)
            return out

        def drift_bhat(t, x, mu):
            return 0.0

        def drift_B(t, seg, mu, _B=self.B):
            return _B(seg, mu)

        def diffusion_sigma(t, x, mu, _sig=sig):
            return _sig

        return ModelSpec(
            m=self.m,
            d=self.d,
            drift_b=drift_b,
            drift_bhat=drift_bhat,
            drift_B=drift_B,
            diffusion_sigma=diffusion_sigma,
            theta=self.theta,
            lip=LipschitzConstants(K_Z=self.K_Z, K_B=self.K_B,
                                   K_sigma=0.0, C_H=0.0),
            sigma_measure_dependent=False,
            name=self.name,
        )


@dataclass(frozen=True)
class DissipativityParams:
    """Claimed dissipativity constants: rates lambda1 > 0, lambda2/lambda3 >= 0
    against the segment sup-norm and the measure distance, at delay r."""

    lambda1: float
    lambda2: float
    lambda3: float
    r: float

    def __post_init__(self):
        if not self.lambda1 > 0:
            raise ValueError(f"lambda1 must be > 0, got {self.lambda1}")
        if self.lambda2 < 0 or self.lambda3 < 0 or self.r < 0:
            raise ValueError("lambda2, lambda3, r must be >= 0")


def _finite_or_raise(value: np.ndarray, coefficient: str) -> np.ndarray:
    value = np.asarray(value, dtype=float)
    if not np.isfinite(value).all():
        raise NumericError(f"coefficient '{coefficient}' returned a non-finite value: {value}")
    return value


def eval_drift(spec: ModelSpec, t: float, state: np.ndarray, seg: Segment,
               mu: EmpiricalMeasure) -> np.ndarray:
    """Total drift b + b_hat + (0-block, B); positions never see B."""
    b = spec.drift_b(t, state, mu)
    bhat = spec.drift_bhat(t, state, mu)
    B = spec.drift_B(t, seg, mu)
    out = np.array(b, dtype=float)
    if not (np.isscalar(bhat) and bhat == 0.0):
        out = out + np.asarray(bhat, dtype=float)
    out[spec.m :] += B
    if not np.isfinite(out).all():
        # name the culprit on the slow path only
        _finite_or_raise(b, "drift_b")
        _finite_or_raise(bhat, "drift_bhat")
        _finite_or_raise(B, "drift_B")
        raise NumericError("drift sum is non-finite although every coefficient is finite")
    return out


def eval_diffusion(spec: ModelSpec, t: float, state: np.ndarray,
                   mu: EmpiricalMeasure) -> np.ndarray:
    """Diffusion matrix (d, d); the solver routes it to the momentum block only."""
    sig = _finite_or_raise(spec.diffusion_sigma(t, state, mu), "diffusion_sigma")
    if sig.shape != (spec.d, spec.d):
        raise ValueError(f"diffusion must return a ({spec.d}, {spec.d}) matrix, got {sig.shape}")
    return sig


@dataclass(frozen=True)
class RankResult:
    """Outcome of the block rank condition Rank[M, AM, ..., A^k M] = m.

    ``satisfied`` with the minimal such ``k`` in [0, m-1], or a typed failure
    (``satisfied=False``, ``k=None``) when the full block is rank deficient;
    powers beyond m-1 add nothing to the column space.
    """

    satisfied: bool
    k: Optional[int]
    rank: int


def check_rank_condition(A: np.ndarray, M: np.ndarray) -> RankResult:
    A = np.asarray(A, dtype=float)
    M = np.asarray(M, dtype=float)
    m = A.shape[0]
    if A.shape != (m, m) or M.shape[0] != m:
        raise ValueError(f"incompatible shapes A {A.shape}, M {M.shape}")
    blocks = []
    power = M
    rank = 0
    for k in range(m):
        blocks.append(power)
        rank = np.linalg.matrix_rank(np.hstack(blocks))
        if rank == m:
            return RankResult(satisfied=True, k=k, rank=m)
        power = A @ power
    return RankResult(satisfied=False, k=None, rank=int(rank))


def sup_delta_exp(lambda1: float, r: float) -> float:
    """max over delta in [0, lambda1] of delta * exp(-delta * r), closed form.

    The maximizer is min(lambda1, 1/r); r = 0 degenerates to lambda1.
    """
    if not lambda1 > 0:
        raise ValueError(f"lambda1 must be > 0, got {lambda1}")
    if r < 0:
        raise ValueError(f"r must be >= 0, got {r}")
    if r == 0.0:
        return lambda1
    if lambda1 <= 1.0 / r:
        return lambda1 * math.exp(-lambda1 * r)
    return math.exp(-1.0) / r


def check_condition_C(p: DissipativityParams) -> bool:
    """Feasibility of the claimed rates: lambda2 + lambda3 <= sup_delta_exp."""
    return p.lambda2 + p.lambda3 <= sup_delta_exp(p.lambda1, p.r)


@dataclass(frozen=True)
class DissipativityViolation:
    """A counterexample to a claimed dissipativity inequality: the sampled
    inputs together with both side values (lhs > rhs)."""

    xi: Segment
    xi_bar: Segment
    gamma: EmpiricalMeasure
    gamma_bar: EmpiricalMeasure
    lhs: float
    rhs: float


def falsify_condition_C_by_sampling(ham: HamiltonianForm, p: DissipativityParams,
                                    n_trials: int = 1000, seed: int = 0,
                                    scale: float = 1.0,
                                    n_measure_atoms: int = 3) -> Optional[DissipativityViolation]:
    """Search for a counterexample to the claimed dissipativity inequality.

    Samples random segment pairs and small empirical-measure pairs and compares

        <A dx(0) + M dy(0), dx(0)> + <Z(xi(0),g) - Z(xib(0),gb) + B(xi,g) - B(xib,gb), dy(0)>

    against ``-lambda1 |d(0)|^2 + lambda2 sup|d|^2 + lambda3 W_2(g, gb)^2``.

    A returned violation proves the claim false; ``None`` after ``n_trials``
    proves nothing.
    """
    m, d = ham.m, ham.d
    dim = m + d
    n_lag = 4 if p.r > 0 else 0
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC04D]))
    tol = 1e-12

    for _ in range(n_trials):
        vals_a = rng.normal(0.0, scale, size=(n_lag + 1, dim))
        vals_b = rng.normal(0.0, scale, size=(n_lag + 1, dim))
        xi = Segment(vals_a, m, d)
        xi_bar = Segment(vals_b, m, d)
        ga = EmpiricalMeasure(rng.normal(0.0, scale, size=(n_measure_atoms, n_lag + 1, dim)), m, d)
        gb = EmpiricalMeasure(rng.normal(0.0, scale, size=(n_measure_atoms, n_lag + 1, dim)), m, d)

        dx0 = xi.current[:m] - xi_bar.current[:m]
        dy0 = xi.current[m:] - xi_bar.current[m:]
        drift_gap = (ham.Z(xi.current, ga) - ham.Z(xi_bar.current, gb)
                     + ham.B(xi, ga) - ham.B(xi_bar, gb))
        lhs = float((ham.A @ dx0 + ham.M @ dy0) @ dx0 + drift_gap @ dy0)

        d0_sq = float(dx0 @ dx0 + dy0 @ dy0)
        sup_sq = float(((xi.values - xi_bar.values) ** 2).sum(axis=1).max())
        w2 = wasserstein_exact(ga, gb, theta=2.0)
        rhs = -p.lambda1 * d0_sq + p.lambda2 * sup_sq + p.lambda3 * w2**2
        if lhs > rhs + tol * max(1.0, abs(rhs)):
            return DissipativityViolation(xi, xi_bar, ga, gb, lhs, rhs)
    return None


# ---------------------------------------------------------------------------
# Built-in model gallery
# ---------------------------------------------------------------------------

def linear_kinetic_delay(m: int = 1, d: int = 1, alpha: float = 1.0, beta: float = 2.0,
                         kappa: float = 1.0, a: float = 0.5, c: float = 0.25,
                         sigma: float = 0.5) -> HamiltonianForm:
    """Linear kinetic model with delayed momentum feedback and mean coupling.

    Positions: dX = (-alpha X + M Y) dt.  Momenta:
    dY = (-kappa X - beta Y + a * mean_mu[Y(0)] + c * Y(-r)) dt + sigma dW.
    Both the state drift and the measure coupling are globally Lipschitz,
    so the declared constants below are exact.
    """
    A = -alpha * np.eye(m)
    M = np.eye(m, d)
    sig = sigma * np.eye(d)

    def Z(x, mu, _kappa=kappa, _beta=beta, _a=a, _m=m):
        return -_kappa * x[:_m] - _beta * x[_m:] + _a * mu.mean_second_block

    def B(seg, mu, _c=c, _m=m):
        return _c * seg.oldest[_m:]

    return HamiltonianForm(
        A=A, M=M, sigma=sig, Z=Z, B=B,
        K_Z=max(math.hypot(kappa, beta), abs(a)),
        K_B=abs(c),
        theta=2.0,
        name="linear_kinetic_delay",
    )


def linear_kinetic_delay_dissipativity(alpha: float, beta: float, kappa: float,
                                       a: float, c: float, r: float) -> DissipativityParams:
    """Rates for :func:`linear_kinetic_delay` derived by Young's inequality.

    Requires m = d (M is the identity).  The cross term (1 - kappa) <dx, dy>
    and the coupling terms are absorbed at rate 1/2 each, giving
    lambda1 = min(alpha, beta) - (|1 - kappa| + |a| + |c|) / 2,
    lambda2 = |c| / 2, lambda3 = |a| / 2.
    """
    lam1 = min(alpha, beta) - (abs(1.0 - kappa) + abs(a) + abs(c)) / 2.0
    if lam1 <= 0:
        raise ValueError(
            f"derived lambda1 = {lam1} is not positive; increase alpha/beta or shrink couplings"
        )
    return DissipativityParams(lambda1=lam1, lambda2=abs(c) / 2.0, lambda3=abs(a) / 2.0, r=r)


def holder_kinetic(m: int = 1, d: int = 1, alpha_exp: float = 0.75, beta: float = 1.0,
                   kappa: float = 1.0, c: float = 0.25, sigma: float = 0.5) -> ModelSpec:
    """Kinetic model whose momentum drift is only Holder in the position block.

    The momentum drift carries a sign(x)|x|^alpha_exp term with
    alpha_exp in (2/3, 1]; positions still move by dX = Y dt, so the noise
    stays degenerate while the drift regularity is genuinely sub-Lipschitz.
    """
    if not (2.0 / 3.0 < alpha_exp <= 1.0):
        raise ValueError(f"alpha_exp must lie in (2/3, 1], got {alpha_exp}")

    def drift_b(t, x, mu, _m=m):
        out = np.empty(_m + d)
        out[:_m] = x[_m:]
        xm = x[:_m]
        out[_m:] = -kappa * np.sign(xm) * np.abs(xm) ** alpha_exp - beta * x[_m:]
        return out

    def drift_bhat(t, x, mu):
        return 0.0

    def drift_B(t, seg, mu, _m=m):
        # bounded, 'c'-Lipschitz delay feedback
        tail = seg.oldest[_m:]
        return c * np.tanh(tail)

    def diffusion_sigma(t, x, mu, _sig=sigma * np.eye(d)):
        return _sig

    return ModelSpec(
        m=m, d=d, drift_b=drift_b, drift_bhat=drift_bhat, drift_B=drift_B,
        diffusion_sigma=diffusion_sigma, theta=2.0,
        lip=LipschitzConstants(K_Z=max(kappa, beta), K_B=abs(c)),
        name="holder_kinetic",
    )


def measure_diffusion(m: int = 1, d: int = 1, alpha: float = 1.0, beta: float = 2.0,
                      kappa: float = 1.0, a: float = 0.25, sigma0: float = 0.5,
                      sigma_gain: float = 0.5) -> ModelSpec:
    """Linear kinetic drift with a diffusion modulated by a measure moment.

    sigma(t, x, mu) = sigma0 * (1 + sigma_gain * min(1, mean_mu sup-norm)) * I;
    the modulating functional is 1-Lipschitz in Wasserstein-1 and clipped, so
    the declared K_sigma is exact.  Intended for theta >= 2 experiments.
    """

    def drift_b(t, x, mu, _m=m):
        out = np.empty(_m + d)
        out[:_m] = -alpha * x[:_m] + x[_m:]
        out[_m:] = -kappa * x[:_m] - beta * x[_m:] + a * mu.mean_second_block
        return out

    def drift_bhat(t, x, mu):
        return 0.0

    def drift_B(t, seg, mu):
        return np.zeros(d)

    def diffusion_sigma(t, x, mu, _eye=np.eye(d)):
        level = min(1.0, mu.mean_sup_norm)
        return sigma0 * (1.0 + sigma_gain * level) * _eye

    return ModelSpec(
        m=m, d=d, drift_b=drift_b, drift_bhat=drift_bhat, drift_B=drift_B,
        diffusion_sigma=diffusion_sigma, theta=2.0,
        lip=LipschitzConstants(K_Z=max(math.hypot(kappa, beta), abs(a)),
                               K_B=0.0, K_sigma=sigma0 * sigma_gain),
        sigma_measure_dependent=True,
        name="measure_diffusion",
    )


GALLERY = {
    "linear_kinetic_delay": linear_kinetic_delay,
    "holder_kinetic": holder_kinetic,
    "measure_diffusion": measure_diffusion,
}


def build_model(model_id: str, params: dict) -> HamiltonianForm | ModelSpec:
    """Instantiate a gallery model by string id with named numeric parameters."""
    if model_id not in GALLERY:
        raise ValueError(f"unknown model id '{model_id}'; choose from {sorted(GALLERY)}")
    try:
        return GALLERY[model_id](**params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for model '{model_id}': {exc}") from exc


def as_model_spec(model: HamiltonianForm | ModelSpec) -> ModelSpec:
    return model.to_model_spec() if isinstance(model, HamiltonianForm) else model
