"""Declarative experiment runner.

``mfh <kind> --config cfg.json [--out DIR] [--seed U64] [--threads N]`` runs
one experiment and writes a manifest, CSV data, and (via ``mfh report``) SVG
plots.  Configs are strict JSON: unknown keys are rejected so sweep typos die
loudly.  Exit codes: 0 success, 2 config error, 3 numeric blow-up, 4
non-convergence.

Everything downstream of (config, master_seed) is deterministic; ``--threads``
(or MFH_THREADS) is recorded in the manifest but cannot change any output
byte, because all computation is orchestrated on a single thread.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .analysis import (GirsanovCertificate, contraction_rate, entropy_bound,
                       estimate_growth_rate, flow_distance_max,
                       girsanov_certificate, sigma_certificate)
from .errors import BlowUpError, ConfigError
from .meanfield import (ChaosReport, PicardConfig, chaos_experiment,
                        derive_seed, particle_states, picard_solve)
from .measure import EmpiricalMeasure, wasserstein_exact
from .model import (DissipativityParams, HamiltonianForm, as_model_spec,
                    build_model, check_condition_C, check_rank_condition,
                    falsify_condition_C_by_sampling,
                    linear_kinetic_delay_dissipativity)
from .segments import TimeGrid
from .solver import FrozenFlow, NoiseStream, ensemble_states
from .svgplot import line_plot

KINDS = ("check", "simulate", "picard", "particles", "chaos", "ergodicity", "certify")

_P_INIT_MU = 30
_P_INIT_NU = 31
_P_SIM = 32
_P_FALSIFY = 33
_P_KEST = 34


# ---------------------------------------------------------------------------
# config parsing (strict)
# ---------------------------------------------------------------------------

def _check_keys(section: dict, allowed: dict, where: str) -> None:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}; allowed: {sorted(allowed)}")
    missing = [k for k, required in allowed.items() if required and k not in section]
    if missing:
        raise ConfigError(f"missing required key(s) {missing} in {where}")


_PARAM_KEYS = {
    "check": {"n_trials": False, "lambda1": False, "lambda2": False, "lambda3": False},
    "simulate": {"n_paths": True},
    "picard": {"M": True, "max_iter": False, "tol": False, "delta0": False, "reuse_noise": False},
    "particles": {"N": True},
    "chaos": {"Ns": True, "M_ref": True, "replicates": True, "theta": True,
              "picard_max_iter": False, "picard_tol": False},
    "ergodicity": {"N": True, "init_nu": True, "shared_noise": False,
                   "report_every": False, "fit_start_frac": False},
    "certify": {"n_paths": True, "M": True, "init_nu": True, "K": False,
                "tv_slack": False, "picard_max_iter": False, "picard_tol": False},
}


def load_config(path: str, kind: str) -> dict:
    try:
        with open(path) as f:
            cfg = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(cfg, {"kind": True, "model": True, "grid": True, "init": True,
                      "params": True, "master_seed": False, "out_dir": False}, "config")
    if cfg["kind"] != kind:
        raise ConfigError(f"config kind '{cfg['kind']}' does not match command '{kind}'")
    _check_keys(cfg["model"], {"id": True, "params": False}, "config.model")
    _check_keys(cfg["grid"], {"dt": True, "r": True, "T": True}, "config.grid")
    _check_keys(cfg["init"], {"kind": True, "mean": True, "std": False}, "config.init")
    _check_keys(cfg["params"], _PARAM_KEYS[kind], "config.params")
    if kind in ("ergodicity", "certify"):
        _check_keys(cfg["params"]["init_nu"], {"kind": True, "mean": True, "std": False},
                    "config.params.init_nu")
    return cfg


def _build_grid(grid_cfg: dict) -> TimeGrid:
    try:
        return TimeGrid.from_times(float(grid_cfg["dt"]), float(grid_cfg["r"]), float(grid_cfg["T"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _build_init(init_cfg: dict, n: int, grid: TimeGrid, m: int, d: int,
                seed: int, purpose: int) -> EmpiricalMeasure:
    dim = m + d
    mean = init_cfg["mean"]
    mean_vec = np.full(dim, float(mean)) if np.isscalar(mean) else np.asarray(mean, dtype=float)
    if mean_vec.shape != (dim,):
        raise ConfigError(f"init mean must be a scalar or a length-{dim} list")
    if init_cfg["kind"] == "gaussian":
        std = float(init_cfg.get("std", 1.0))
        if std <= 0:
            raise ConfigError(f"init std must be > 0, got {std}")
        rng = np.random.default_rng(np.random.SeedSequence([derive_seed(seed, purpose)]))
        states = rng.normal(0.0, std, size=(n, dim)) + mean_vec
    elif init_cfg["kind"] == "point":
        states = np.tile(mean_vec, (n, 1))
    else:
        raise ConfigError(f"unknown init kind '{init_cfg['kind']}' (use 'gaussian' or 'point')")
    return EmpiricalMeasure.from_constant_states(states, grid.n_lag, m, d)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _fmt_cell(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return f"{float(v):.17g}"


def write_csv(path: str, header: list[str], rows: list) -> None:
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt_cell(v) for v in row) + "\n")


def _write_manifest(out_dir: str, kind: str, cfg: dict, master_seed: int,
                    threads: int | None, resolved: dict) -> None:
    manifest = {
        "tool": "mfh",
        "version": __version__,
        "kind": kind,
        "config": cfg,
        "master_seed": master_seed,
        "threads": threads,
        "resolved": resolved,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", newline="") as f:
        f.write(json.dumps(manifest, indent=2, sort_keys=True, allow_nan=True) + "\n")


# ---------------------------------------------------------------------------
# experiment bodies
# ---------------------------------------------------------------------------

def _run_check(model, cfg, grid, seed, out_dir) -> dict:
    p = cfg["params"]
    rows = []
    resolved: dict = {}
    if isinstance(model, HamiltonianForm):
        cond = float(np.linalg.cond(model.sigma))
        ok = math.isfinite(cond)
        rows.append(("sigma_invertible", "pass" if ok else "fail", f"condition number {cond:.6g}"))
        rank = check_rank_condition(model.A, model.M)
        rows.append(("rank_condition", "pass" if rank.satisfied else "fail",
                     f"k={rank.k}" if rank.satisfied else f"rank {rank.rank} < m"))
        resolved["rank_k"] = rank.k
        resolved["sigma_cond"] = cond

        diss = None
        if all(k in p for k in ("lambda1", "lambda2", "lambda3")):
            diss = DissipativityParams(p["lambda1"], p["lambda2"], p["lambda3"], grid.r)
        elif model.name == "linear_kinetic_delay":
            mp = cfg["model"].get("params", {})
            try:
                diss = linear_kinetic_delay_dissipativity(
                    mp.get("alpha", 1.0), mp.get("beta", 2.0), mp.get("kappa", 1.0),
                    mp.get("a", 0.5), mp.get("c", 0.25), grid.r)
            except ValueError as exc:
                rows.append(("dissipativity", "fail", str(exc)))
        if diss is not None:
            feasible = check_condition_C(diss)
            rows.append(("dissipativity_rates", "pass" if feasible else "fail",
                         f"lambda=({diss.lambda1:.6g},{diss.lambda2:.6g},{diss.lambda3:.6g}), r={diss.r:.6g}"))
            resolved["condition_C"] = feasible
            violation = falsify_condition_C_by_sampling(
                model, diss, n_trials=int(p.get("n_trials", 1000)),
                seed=derive_seed(seed, _P_FALSIFY))
            if violation is None:
                rows.append(("dissipativity_sampling", "pass",
                             f"no counterexample in {int(p.get('n_trials', 1000))} trials"))
                resolved["falsified"] = False
            else:
                rows.append(("dissipativity_sampling", "fail",
                             f"counterexample lhs={violation.lhs:.6g} > rhs={violation.rhs:.6g}"))
                resolved["falsified"] = True
        else:
            rows.append(("dissipativity_rates", "unknown", "no rates declared"))
    else:
        spec = as_model_spec(model)
        mu = _build_init(cfg["init"], 8, grid, spec.m, spec.d, seed, _P_INIT_MU)
        sig = spec.diffusion_sigma(0.0, np.zeros(spec.dim), mu)
        cond = float(np.linalg.cond(sig))
        rows.append(("sigma_invertible", "pass" if math.isfinite(cond) else "fail",
                     f"condition number at reference point {cond:.6g}"))
        rows.append(("rank_condition", "unknown", "general-form model"))
        rows.append(("dissipativity_rates", "unknown", "no rates declared"))
        resolved["sigma_cond"] = cond
    write_csv(os.path.join(out_dir, "check.csv"), ["assumption", "status", "detail"], rows)
    for name, status, detail in rows:
        print(f"{name}: {status} ({detail})")
    return resolved


def _run_simulate(model, cfg, grid, seed, out_dir) -> dict:
    spec = as_model_spec(model)
    n = int(cfg["params"]["n_paths"])
    init = _build_init(cfg["init"], n, grid, spec.m, spec.d, seed, _P_INIT_MU)
    flow = FrozenFlow.constant(init, grid.n_steps)
    streams = [NoiseStream(derive_seed(seed, _P_SIM), i) for i in range(n)]
    states = ensemble_states(spec, init.atoms, flow, streams, grid)
    rows = []
    for i in range(n):
        for k in range(grid.n_steps + 1):
            rows.append((i, k * grid.dt, *states[i, grid.n_lag + k, :]))
    header = ["particle", "t"] + [f"c{j}" for j in range(spec.dim)]
    write_csv(os.path.join(out_dir, "paths.csv"), header, rows)
    return {"n_paths": n}


def _picard_cfg_from(p: dict, M: int) -> PicardConfig:
    return PicardConfig(
        M=M,
        max_iter=int(p.get("max_iter", p.get("picard_max_iter", 25))),
        tol=float(p.get("tol", p.get("picard_tol", 1e-3))),
        delta0=p.get("delta0"),
        reuse_noise=bool(p.get("reuse_noise", True)),
    )


def _run_picard(model, cfg, grid, seed, out_dir) -> dict:
    spec = as_model_spec(model)
    p = cfg["params"]
    pcfg = _picard_cfg_from(p, int(p["M"]))
    init = _build_init(cfg["init"], pcfg.M, grid, spec.m, spec.d, seed, _P_INIT_MU)
    result = picard_solve(spec, init, grid, pcfg, master_seed=seed)
    write_csv(os.path.join(out_dir, "picard.csv"), ["iteration", "metric"],
              [(j + 1, v) for j, v in enumerate(result.trace)])
    return {"converged": result.converged, "delta0": result.delta0, "n_iter": result.n_iter}


def _run_particles(model, cfg, grid, seed, out_dir) -> dict:
    spec = as_model_spec(model)
    n = int(cfg["params"]["N"])
    init = _build_init(cfg["init"], n, grid, spec.m, spec.d, seed, _P_INIT_MU)
    streams = [NoiseStream(derive_seed(seed, _P_SIM), i) for i in range(n)]
    states = particle_states(spec, init.atoms, grid, streams)
    rows = []
    for k in range(grid.n_steps + 1):
        cloud = states[:, grid.n_lag + k, :]
        rows.append((k * grid.dt, *cloud.mean(axis=0), *np.sqrt((cloud**2).mean(axis=0))))
    header = (["t"] + [f"mean_c{j}" for j in range(spec.dim)]
              + [f"rms_c{j}" for j in range(spec.dim)])
    write_csv(os.path.join(out_dir, "particles.csv"), header, rows)
    return {"N": n}


def _run_chaos(model, cfg, grid, seed, out_dir) -> dict:
    spec = as_model_spec(model)
    p = cfg["params"]
    m_ref = int(p["M_ref"])
    init = _build_init(cfg["init"], m_ref, grid, spec.m, spec.d, seed, _P_INIT_MU)
    pcfg = _picard_cfg_from({k: v for k, v in p.items() if k.startswith("picard_")}, m_ref)
    report = chaos_experiment(spec, init, [int(x) for x in p["Ns"]], m_ref,
                              int(p["replicates"]), grid, float(p["theta"]),
                              master_seed=seed, picard_cfg=pcfg)
    write_csv(os.path.join(out_dir, "chaos.csv"), ["N", "error", "stderr", "w_gap"],
              [(r.N, r.error_estimate, r.std_error, r.wasserstein_gap) for r in report.rows])
    resolved = {"slope": report.slope, "slope_raw_moment": report.slope_raw_moment,
                "ref_converged": report.ref_converged, "ref_trace": list(report.ref_trace)}
    if not report.ref_converged:
        raise _NonConvergence("reference fixed-point iteration did not converge", resolved)
    return resolved


def _run_ergodicity(model, cfg, grid, seed, out_dir) -> dict:
    spec = as_model_spec(model)
    p = cfg["params"]
    n = int(p["N"])
    mu0 = _build_init(cfg["init"], n, grid, spec.m, spec.d, seed, _P_INIT_MU)
    nu0 = _build_init(p["init_nu"], n, grid, spec.m, spec.d, seed, _P_INIT_NU)
    report = contraction_rate(spec, mu0, nu0, grid, n,
                              shared_noise=bool(p.get("shared_noise", True)), seed=seed,
                              report_every=int(p.get("report_every", 5)),
                              fit_start_frac=float(p.get("fit_start_frac", 0.5)))
    write_csv(os.path.join(out_dir, "ergodicity.csv"), ["t", "w2", "coupling"],
              list(zip(report.times, report.w2_curve, report.coupling_curve)))
    return {"kappa_hat": report.kappa_hat, "c_hat": report.c_hat,
            "fit_r2": report.fit_r2, "degenerate": report.degenerate}


def _run_certify(model, cfg, grid, seed, out_dir) -> dict:
    if not isinstance(model, HamiltonianForm):
        raise ConfigError("certify requires a structured (Hamiltonian-form) model with constant sigma")
    spec = model.to_model_spec()
    p = cfg["params"]
    M = int(p["M"])
    mu0 = _build_init(cfg["init"], M, grid, spec.m, spec.d, seed, _P_INIT_MU)
    nu0 = _build_init(p["init_nu"], M, grid, spec.m, spec.d, seed, _P_INIT_NU)
    pcfg = _picard_cfg_from({k: v for k, v in p.items() if k.startswith("picard_")}, M)
    res_mu = picard_solve(spec, mu0, grid, pcfg, master_seed=derive_seed(seed, 1))
    res_nu = picard_solve(spec, nu0, grid, pcfg, master_seed=derive_seed(seed, 2))
    if not (res_mu.converged and res_nu.converged):
        raise _NonConvergence("fixed-point flows did not converge", {})

    cert = girsanov_certificate(model, res_mu.flow, res_nu.flow, int(p["n_paths"]), grid,
                                seed=derive_seed(seed, 3))
    w2_0 = wasserstein_exact(mu0, nu0, 2.0)
    tv_slack = float(p.get("tv_slack", 0.0))
    wtilde0 = w2_0 + tv_slack
    if "K" in p:
        K = float(p["K"])
    else:
        K = estimate_growth_rate(spec, mu0, nu0, grid, min(M, 256), seed=derive_seed(seed, _P_KEST))
    rank = check_rank_condition(model.A, model.M)
    if not rank.satisfied:
        raise ConfigError("rank condition fails; the smoothing certificate is undefined")
    m_norm = float(np.linalg.norm(model.M, 2))
    sigma_inv_norm = float(np.linalg.norm(np.linalg.inv(model.sigma), 2))
    try:
        ent = entropy_bound(sigma_inv_norm, model.K_Z, model.K_B, K, grid.T, grid.r,
                            m_norm, rank.k, wtilde0, w2_0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    fdist = flow_distance_max(res_mu.flow, res_nu.flow, spec.theta)

    rows = [
        ("e_r", cert.e_r, cert.se_r),
        ("e_r_log_r", cert.e_r_log_r, cert.se_r_log_r),
        ("half_int_gamma_sq_q", cert.half_int_gamma_sq_q, cert.se_half_int),
        ("gamma_sup", cert.gamma_sup, 0.0),
        ("ess", cert.ess, 0.0),
        ("flow_distance_max", fdist, 0.0),
        ("w2_0", w2_0, 0.0),
        ("wtilde0", wtilde0, 0.0),
        ("K", K, 0.0),
        ("sigma_certificate_over_C", sigma_certificate(grid.T, grid.r, m_norm, rank.k), 0.0),
        ("entropy_first_term", ent.first_term, 0.0),
        ("entropy_sigma_term_over_C", ent.sigma_term_over_C, 0.0),
    ]
    write_csv(os.path.join(out_dir, "certificates.csv"), ["quantity", "value", "stderr"], rows)
    return {"degenerate_weights": cert.degenerate, "ess": cert.ess, "rank_k": rank.k, "K": K}


_RUNNERS = {
    "check": _run_check,
    "simulate": _run_simulate,
    "picard": _run_picard,
    "particles": _run_particles,
    "chaos": _run_chaos,
    "ergodicity": _run_ergodicity,
    "certify": _run_certify,
}


class _NonConvergence(Exception):
    def __init__(self, msg: str, resolved: dict):
        super().__init__(msg)
        self.resolved = resolved


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------

def run(config_path: str, kind: str, out: str | None = None, seed: int | None = None,
        threads: int | None = None) -> int:
    try:
        cfg = load_config(config_path, kind)
        grid = _build_grid(cfg["grid"])
        model = build_model(cfg["model"]["id"], cfg["model"].get("params", {}))
        master_seed = int(seed if seed is not None else cfg.get("master_seed", 0))
        out_dir = out or cfg.get("out_dir")
        if not out_dir:
            raise ConfigError("no output directory: set config out_dir or pass --out")
        os.makedirs(out_dir, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if threads is None:
        env = os.environ.get("MFH_THREADS")
        threads = int(env) if env else None

    try:
        resolved = _RUNNERS[kind](model, cfg, grid, master_seed, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BlowUpError as exc:
        print(f"numeric blow-up: {exc}", file=sys.stderr)
        _write_manifest(out_dir, kind, cfg, master_seed, threads,
                        {"error": "blow-up", "step": exc.step, "particle": exc.particle})
        return 3
    except _NonConvergence as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        _write_manifest(out_dir, kind, cfg, master_seed, threads,
                        dict(exc.resolved, error="non-convergence"))
        return 4

    if kind == "picard" and not resolved.get("converged", True):
        _write_manifest(out_dir, kind, cfg, master_seed, threads, resolved)
        print("non-convergence: fixed-point iteration hit max_iter above tolerance", file=sys.stderr)
        return 4

    _write_manifest(out_dir, kind, cfg, master_seed, threads, resolved)
    return 0


def _read_csv(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        rows = list(reader)
    return rows[0], rows[1:]


def _require_columns(header: list[str], needed: list[str], path: str) -> None:
    missing = [c for c in needed if c not in header]
    if missing:
        raise ConfigError(f"{path} is missing column(s) {missing}")


def report(results_dir: str) -> int:
    """Render SVG plots from the CSV files found in a results directory."""
    try:
        made_any = False
        chaos_path = os.path.join(results_dir, "chaos.csv")
        if os.path.exists(chaos_path):
            header, rows = _read_csv(chaos_path)
            _require_columns(header, ["N", "error"], chaos_path)
            ns = [float(r[header.index("N")]) for r in rows]
            errs = [float(r[header.index("error")]) for r in rows]
            fit = None
            pos = [(n, e) for n, e in zip(ns, errs) if n > 0 and e > 0]
            if len(pos) >= 2:
                lx = np.log10([p[0] for p in pos])
                ly = np.log10([p[1] for p in pos])
                slope, intercept = np.polyfit(lx, ly, 1)
                fit = (float(slope), float(intercept))
            svg = line_plot([("coupling error", ns, errs)], "Interacting-particle coupling error",
                            "N", "error", logx=True, logy=True, fit_line=fit,
                            annotation=None if pos else "degenerate: zero errors")
            with open(os.path.join(results_dir, "chaos.svg"), "w", newline="") as f:
                f.write(svg)
            made_any = True

        ergo_path = os.path.join(results_dir, "ergodicity.csv")
        if os.path.exists(ergo_path):
            header, rows = _read_csv(ergo_path)
            _require_columns(header, ["t", "w2"], ergo_path)
            ts = [float(r[header.index("t")]) for r in rows]
            ws = [float(r[header.index("w2")]) for r in rows]
            degenerate = all(w <= 0 for w in ws)
            fit = None
            if not degenerate:
                tail = [(t, w) for t, w in zip(ts, ws) if w > 0 and t >= ts[-1] / 2]
                if len(tail) >= 2:
                    slope, intercept = np.polyfit([p[0] for p in tail],
                                                  np.log10([p[1] for p in tail]), 1)
                    fit = (float(slope), float(intercept))
            svg = line_plot([("W2 between clouds", ts, ws)], "Cloud contraction",
                            "t", "W2", logy=True, fit_line=fit,
                            annotation="flagged degenerate: all distances zero" if degenerate else None)
            with open(os.path.join(results_dir, "ergodicity.svg"), "w", newline="") as f:
                f.write(svg)
            made_any = True

        picard_path = os.path.join(results_dir, "picard.csv")
        if os.path.exists(picard_path):
            header, rows = _read_csv(picard_path)
            _require_columns(header, ["iteration", "metric"], picard_path)
            its = [float(r[header.index("iteration")]) for r in rows]
            ms = [float(r[header.index("metric")]) for r in rows]
            svg = line_plot([("iterate gap", its, ms)], "Fixed-point iteration",
                            "iteration", "weighted sup-t gap", logy=True,
                            annotation=None if any(m > 0 for m in ms) else "degenerate: zero gaps")
            with open(os.path.join(results_dir, "picard.svg"), "w", newline="") as f:
                f.write(svg)
            made_any = True

        if not made_any:
            raise ConfigError(f"no plottable CSV files found in {results_dir}")
    except (ConfigError, OSError, ValueError, IndexError) as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mfh",
                                     description="mean-field stochastic Hamiltonian experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind, help=f"run a '{kind}' experiment")
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None)
    rp = sub.add_parser("report", help="render SVG plots from a results directory")
    rp.add_argument("--in", dest="results_dir", required=True)
    args = parser.parse_args(argv)
    if args.command == "report":
        return report(args.results_dir)
    return run(args.config, kind=args.command, out=args.out, seed=args.seed, threads=args.threads)


if __name__ == "__main__":
    sys.exit(main())
