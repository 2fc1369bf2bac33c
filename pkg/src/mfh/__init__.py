"""Simulation and verification toolkit for path-distribution dependent
stochastic Hamiltonian systems: delay-SDE solvers with degenerate noise,
fixed-point and particle mean-field approximations, exact optimal-transport
diagnostics, and ergodicity / change-of-measure certificates."""

__version__ = "0.1.0"

from .analysis import (EntropyCertificate, ErgodicityReport, GirsanovCertificate,
                       contraction_rate, entropy_bound, estimate_growth_rate,
                       flow_distance_max, girsanov_certificate, sigma_certificate)
from .errors import BlowUpError, ConfigError, NumericError
from .meanfield import (ChaosReport, ChaosRow, PicardConfig, PicardResult,
                        chaos_experiment, derive_seed, exact_wasserstein_profile,
                        particle_solve, particle_states, picard_solve)
from .measure import (EXACT_CAP, EmpiricalMeasure, moment, wasserstein_exact,
                      wasserstein_sliced)
from .model import (DissipativityParams, HamiltonianForm, LipschitzConstants,
                    ModelSpec, RankResult, as_model_spec, build_model,
                    check_condition_C, check_rank_condition, eval_diffusion,
                    eval_drift, falsify_condition_C_by_sampling,
                    holder_kinetic, linear_kinetic_delay,
                    linear_kinetic_delay_dissipativity, measure_diffusion,
                    sup_delta_exp)
from .segments import (PathRecord, Segment, TimeGrid, segment_at,
                       segment_distance, sup_norm, sup_norms)
from .solver import (FrozenFlow, NoiseStream, ensemble_states, euler_step,
                     gaussian_increments, simulate_ensemble, simulate_path)
