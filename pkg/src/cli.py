"""
Command-line entry point for chainlab.
Dispatches subcommands, writes their tables under the output directory and
records every run in the artifact index.
"""

import argparse
import json
import math
import os
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

# Ensure the repository root is importable when run as a script
root_dir = str(Path(__file__).parent.parent)
if root_dir not in sys.path:
    sys.path.append(root_dir)

from src import __version__
from src.artifact_store import ArtifactStore, emit_table
from src.config import SUBCOMMANDS, ExperimentConfig, build_params, build_potential, load_config, to_dict
from src.errors import AssumptionError, ChainlabError, ConfigError
from src.gaussian import brascamp_bound, build_gaussian_model, covariance_Hinv, gamma_gauss, gaussian_g
from src.ground_state import bulk_spacing_a, convergence_study_e0, minimize_EN
from src.logger import get_logger
from src.potentials import validate
from src.quadrature import build_quadrature
from src.sampler import (correlation_function, kernel_chain_run, marginal_distance_histogram, occupation_test,
                         pool_runs, run_chains, tail_check)
from src.surface import (adaptive_surface, coercivity_constants, h_hat_grid_scan, minimize_Esurf,
                         surface_energy_extension, value_iteration_u)
from src.transfer import (assemble_T, equation_of_state, g_surf, gibbs_free_energy, marginal_density,
                          mean_spacing, solve_spectrum, spectral_correlation_rate)
from src.verify import format_table, run_verify

logger = get_logger()

FLAG_PATHS = {
    "m": "model.m",
    "p": "model.p",
    "beta": "spectrum.beta",
    "N": "sampler.N",
    "K": "surface.K",
    "nodes": "grid.order",
    "steps": "sampler.steps",
    "seed": "sampler.seed",
    "output_dir": "output.directory",
}


class _Run:
    """Collects the files one subcommand writes, all tagged with the same provenance."""

    def __init__(self, name: str, config: ExperimentConfig):
        self.name = name
        self.config = config
        self.directory = os.path.join(config.output.directory, name)
        self.provenance = {"subcommand": name, "version": __version__, "config": to_dict(config)}
        self.files: List[str] = []

    def table(self, stem: str, rows: Sequence[Dict[str, Any]], columns: Optional[Sequence[str]] = None) -> str:
        path = os.path.join(self.directory, f"{stem}.{self.config.output.format}")
        self.files.append(emit_table(rows, path, columns=columns, provenance=self.provenance))
        return path

    def summary(self, payload: Dict[str, Any], stem: str = "summary") -> str:
        path = os.path.join(self.directory, f"{stem}.json")
        self.files.append(emit_table([payload], path, fmt="json", provenance=self.provenance))
        return path


def _cmd_validate(run: _Run) -> int:
    config = run.config
    report = validate(build_potential(config), config.model.p)
    run.table("assumptions", report.rows(), columns=["check", "passed", "margin", "detail"])
    run.summary({"z_min": report.z_min, "z_max": report.z_max, "p_star": report.p_star, "p": report.p,
                 "alpha1": report.alpha1, "alpha2": report.alpha2, "s": report.s, "passed": report.passed})
    for row in report.rows():
        status = "ok  " if row["passed"] else "FAIL"
        print(f"  [{status}] {row['check']:<24} margin={row['margin']:.6g} {row['detail']}")
    if not report.passed:
        raise AssumptionError(f"assumptions fail at p={config.model.p}: {report.describe_failures()}")
    return 0


def _cmd_ground_state(run: _Run) -> int:
    config = run.config
    params = build_params(config)
    bulk = bulk_spacing_a(params)
    rows = convergence_study_e0(params, sorted(config.surface.N_list), bulk)
    run.table("convergence_e0", rows)
    res = minimize_EN(config.sampler.N, params, bulk=bulk)
    run.table("profile", [{"k": k + 1, "z_k": float(z), "z_k_minus_a": float(z - bulk.a)}
                          for k, z in enumerate(res.spacings)])
    run.summary({"a": bulk.a, "e0": bulk.e0, "a0": bulk.a0, "z_min": params.z_min, "z_max": params.z_max,
                 "N": res.N, "energy": res.energy, "excess": res.energy - res.N * bulk.e0,
                 "grad_norm": res.grad_norm, "iterations": res.iterations, "tail_bound": res.tail_bound})
    print(f"  a={bulk.a:.15g} e0={bulk.e0:.15g} a0={bulk.a0:.15g}")
    return 0


def _cmd_surface(run: _Run) -> int:
    config = run.config
    params = build_params(config)
    bulk = bulk_spacing_a(params)
    sc = config.surface
    if sc.K is None:
        result = adaptive_surface(params, bulk, tol=sc.tol, K_max=sc.K_max)
    else:
        result = minimize_Esurf(max(sc.K, params.range), params, bulk)
    c1, c2 = coercivity_constants(params, bulk, result)
    run.table("profile", result.rows(bulk.a))
    summary = {"K": result.tail_K, "min_Esurf": result.min_Esurf, "e_surf": result.e_surf,
               "e_clamp": result.e_clamp, "extension_value": surface_energy_extension(result.profile, params, bulk),
               "c1": c1, "c2": c2, "iterations": result.iterations}
    if params.finite and params.block_dim <= 2:
        vf = value_iteration_u(params, bulk, n_points=config.grid.value_points, eps=config.grid.value_eps,
                               tol=config.grid.value_tol)
        scan = h_hat_grid_scan(vf)
        summary.update({"value_iterations": vf.iterations, "value_residual": vf.residual,
                        "min_u": float(vf.u_values.min()), "h_hat_min": scan.min_value,
                        "h_hat_near_zero": len(scan.near_zero)})
        if vf.d == 1:
            run.table("value_function", [{"x": float(x), "u": float(u), "w": float(w)}
                                         for x, u, w in zip(vf.nodes, vf.u_values, vf.w_values)])
    run.summary(summary)
    print(f"  min E_surf={result.min_Esurf:.15g} e_surf={result.e_surf:.15g} (K={result.tail_K})")
    return 0


def _cmd_spectrum(run: _Run) -> int:
    config = run.config
    params = build_params(config)
    bulk = bulk_spacing_a(params)
    model = build_gaussian_model(params, bulk)
    need_vf = config.spectrum.with_K and params.block_dim <= 2
    vf = value_iteration_u(params, bulk, n_points=config.grid.value_points, eps=config.grid.value_eps,
                           tol=config.grid.value_tol) if need_vf else None
    rows = []
    for beta in sorted(set(config.spectrum.betas)):
        grid = build_quadrature(params, bulk, beta, order=config.grid.order)
        tm = assemble_T(params, grid, beta)
        spec = solve_spectrum(tm, model=model)
        free = gibbs_free_energy(params, grid, beta, vf, spectral_T=spec, model=model)
        rate = spectral_correlation_rate(spec)
        rows.append({"beta": beta, "log_lambda0": spec.log_lambda0, "lambda1_ratio": spec.lambda1_ratio,
                     "g": spec.g_beta, "g_K": free.g_K if free.g_K is not None else math.nan,
                     "g_gauss": gaussian_g(beta, bulk, model), "ell": mean_spacing(tm, spec),
                     "g_surf": g_surf(params, spec), "gamma_per_spacing": rate["gamma_per_spacing"],
                     "nodes": grid.n})
        if beta == config.spectrum.beta:
            marginal = marginal_density(tm, spec, 1)
            run.table("marginal", [dict({f"x{i + 1}": float(c) for i, c in enumerate(x)}, density=float(r))
                                   for x, r in zip(marginal.points, marginal.density)])
    run.table("free_energy", rows)
    if config.spectrum.pressures:
        run.table("equation_of_state", equation_of_state(params, config.spectrum.beta, config.spectrum.pressures,
                                                         order=config.grid.order))
    for row in rows:
        print(f"  beta={row['beta']:<6g} g={row['g']:.12g} ratio={row['lambda1_ratio']:.4e} ell={row['ell']:.10g}")
    return 0


def _cmd_gaussian(run: _Run) -> int:
    config = run.config
    params = build_params(config)
    bulk = bulk_spacing_a(params)
    model = build_gaussian_model(params, bulk)
    gc = config.gaussian
    summary = dict(model.to_dict())
    summary["gamma_gauss"] = gamma_gauss(model)
    summary["g_gauss"] = gaussian_g(config.spectrum.beta, bulk, model)
    report = brascamp_bound(params, N=gc.brascamp_N, fit_range=tuple(gc.fit_range))
    summary.update({"rho": report.rho, "eta": report.eta, "decay_exponent": report.exponent,
                    "bound_constant": report.bound_constant})
    run.summary(summary)
    run.table("covariance", [{"n": n, "Hinv_0n": covariance_Hinv(model, 0, n, L=gc.L)} for n in range(21)])
    run.table("toeplitz_decay", report.decay_rows)
    print(f"  d={model.d} C={json.dumps(model.C.tolist())} det C={model.det_C:.15g}")
    return 0


def _cmd_sample(run: _Run) -> int:
    config = run.config
    sc = config.sampler
    params = build_params(config)
    beta = config.sample_beta
    runs = run_chains(sc.chains, sc.N, params, beta, sc.steps, sc.seed, workers=sc.workers,
                      burn_in=sc.burn_in, thinning=sc.thinning, max_lag=sc.max_lag, tail_r=sc.tail_r)
    first = runs[0]
    fit = correlation_function(first, sc.max_lag)
    summary: Dict[str, Any] = {"pooled": pool_runs(runs), "chains": [r.summary() for r in runs],
                               "correlation_rate": fit.rate, "correlation_rate_is_lower_bound": fit.lower_bound}
    run.table("histogram", first.histogram_rows())
    run.table("correlation", first.correlation_rows())
    run.table("tails", tail_check(first))
    if params.finite:
        bulk = bulk_spacing_a(params)
        model = build_gaussian_model(params, bulk)
        if model.d == 1:
            dist = marginal_distance_histogram(first, model, beta)
            summary["marginal_l1"] = {"fine": dist.distance, "coarse": dist.coarse_distance, "se": dist.se}
        if sc.kernel_steps > 0:
            grid = build_quadrature(params, bulk, beta, order=config.grid.order)
            tm = assemble_T(params, grid, beta)
            spec = solve_spectrum(tm, model=model)
            kernel = kernel_chain_run(params, tm, spec, sc.kernel_steps, sc.seed, max_lag=sc.max_lag,
                                      tail_r=sc.tail_r)
            chi2, pvalue = occupation_test(kernel, marginal_density(tm, spec, 1).masses)
            summary["kernel_chain"] = dict(kernel.summary(), chi2=chi2, pvalue=pvalue,
                                           correlation_rate=correlation_function(kernel, sc.max_lag).rate,
                                           spectral_rate=spectral_correlation_rate(spec)["gamma_per_spacing"])
    run.summary(summary)
    pooled = summary["pooled"]
    print(f"  mean spacing={pooled['mean_spacing']:.10g} +/- {pooled['mean_spacing_se']:.2e} "
          f"acceptance={pooled['acceptance']:.3f}")
    return 0


def _cmd_verify(run: _Run) -> int:
    results = run_verify(run.config)
    run.table("verify", [r.row() for r in results])
    print(format_table(results))
    return 0 if all(r.passed for r in results) else 1


COMMANDS: Dict[str, Callable[[_Run], int]] = {
    "validate": _cmd_validate,
    "ground-state": _cmd_ground_state,
    "surface": _cmd_surface,
    "spectrum": _cmd_spectrum,
    "gaussian": _cmd_gaussian,
    "sample": _cmd_sample,
    "verify": _cmd_verify,
}


def run_subcommand(name: str, config: ExperimentConfig) -> int:
    """Run one subcommand and record it; returns the process exit status."""
    if name not in COMMANDS:
        raise ConfigError("subcommand", f"must be one of {', '.join(SUBCOMMANDS)}")
    run = _Run(name, config)
    store = ArtifactStore(config.output.directory)
    status = 1
    try:
        with logger.stage(f"subcommand_{name}"):
            status = COMMANDS[name](run)
        return status
    finally:
        store.record_run(name, run.provenance["config"], run.files, status="ok" if status == 0 else "failed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chainlab", description="Numerical lab for pair-potential chains")
    parser.add_argument("--version", action="version", version=f"chainlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML experiment file")
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--m", type=int)
        p.add_argument("--p", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--N", type=int)
        p.add_argument("--K", type=int)
        p.add_argument("--nodes", type=int, help="Gauss-Legendre nodes per panel")
        p.add_argument("--steps", type=int)
        p.add_argument("--seed", type=int)
        if name == "verify":
            p.add_argument("--quick", action="store_true")
            p.add_argument("--criteria", type=int, nargs="+")
            p.add_argument("--workers", type=int)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    out = {path: getattr(args, flag) for flag, path in FLAG_PATHS.items()}
    if args.beta is not None:
        out["spectrum.betas"] = [args.beta]
    if args.command == "verify":
        out["verify.quick"] = True if args.quick else None
        out["verify.criteria"] = args.criteria
        out["verify.workers"] = args.workers
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Console entry point; returns 0 on success, 1 on numerical failure, 2 on config errors."""
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, _overrides(args))
    except ConfigError as e:
        print(f"[chainlab] configuration error: {e}", file=sys.stderr)
        logger.error(f"Failed to load configuration: {str(e)}", exc_info=False)
        return 2
    print(f"[chainlab] {args.command} (output: {config.output.directory})")
    try:
        return run_subcommand(args.command, config)
    except ConfigError as e:
        print(f"[chainlab] configuration error: {e}", file=sys.stderr)
        return 2
    except ChainlabError as e:
        print(f"[chainlab] {type(e).__name__}: {e}", file=sys.stderr)
        logger.error(f"Failed to run {args.command}: {str(e)}", exc_info=False)
        return 1


if __name__ == "__main__":
    sys.exit(main())
