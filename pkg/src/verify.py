"""
Acceptance suite: thirteen cross-oracle checks run against the configured
potential. Each criterion returns a CriterionResult; failures never raise.
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from src.config import ExperimentConfig, build_params
from src.gaussian import brascamp_bound, build_gaussian_model, gaussian_g
from src.ground_state import ModelParams, bulk_spacing_a, minimize_EN
from src.logger import get_logger
from src.quadrature import build_quadrature
from src.sampler import correlation_function, marginal_distance_quadrature, metropolis_run, tail_check
from src.surface import e_surf, h_hat, h_hat_grid_scan, value_iteration_u
from src.transfer import (assemble_T, brute_force_extrapolation, g_surf, gibbs_free_energy,
                          ldp_rate_check, marginal_density, mean_spacing, nearest_neighbor_gas,
                          solve_spectrum, spectral_correlation_rate)

logger = get_logger()


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    metrics: Dict[str, object] = field(default_factory=dict)
    elapsed_s: float = 0.0

    def row(self) -> Dict[str, object]:
        return {"criterion": self.number, "name": self.name, "passed": self.passed,
                "elapsed_s": round(self.elapsed_s, 3), "detail": self.detail}


def _spectrum(params: ModelParams, beta: float, order=None, with_second: bool = True):
    bulk = bulk_spacing_a(params)
    grid = build_quadrature(params, bulk, beta, order=order)
    tm = assemble_T(params, grid, beta)
    model = build_gaussian_model(params, bulk)
    return bulk, grid, tm, solve_spectrum(tm, with_second=with_second, model=model)


def _strictly_decreasing(values: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(values[:-1], values[1:]))


def _sampler_steps(config: ExperimentConfig, quick: bool, cap: int) -> Tuple[int, int]:
    steps = min(config.sampler.steps, cap)
    if quick:
        steps = min(steps, 20_000)
    return steps, steps // 10


def nearest_neighbor_oracle(config: ExperimentConfig, quick: bool) -> CriterionResult:
    beta = 5.0
    params = build_params(config, m=1)
    bulk, grid, tm, spec = _spectrum(params, beta, with_second=False)
    ell = mean_spacing(tm, spec)
    gas = nearest_neighbor_gas(params, beta)
    steps, burn = _sampler_steps(config, quick, 200_000)
    run = metropolis_run(min(config.sampler.N, 128), params, beta, steps, config.sampler.seed,
                         burn_in=burn, thinning=config.sampler.thinning, progress=False)
    dg, dl = abs(spec.g_beta - gas.g), abs(ell - gas.ell)
    dmc = abs(run.mean_spacing - gas.ell)
    ok = dg < 1e-8 and dl < 1e-8 and dmc <= 3.0 * run.mean_spacing_se
    return CriterionResult(1, "nearest-neighbour closed forms", ok,
                           f"|dg|={dg:.2e} |dl|={dl:.2e} |l_mc - l|={dmc:.2e} (3 SE={3 * run.mean_spacing_se:.2e})",
                           {"g": spec.g_beta, "g_closed": gas.g, "ell": ell, "ell_closed": gas.ell,
                            "ell_mc": run.mean_spacing})


def bulk_periodicity(config: ExperimentConfig, quick: bool) -> CriterionResult:
    params = build_params(config)
    bulk = bulk_spacing_a(params)
    res = minimize_EN(200, params, bulk=bulk)
    z = res.spacings
    inside = bool(np.all(z >= params.z_min - 1e-12) and np.all(z <= params.z_max + 1e-12))
    dev = abs(z[99] - bulk.a)
    return CriterionResult(2, "bulk periodicity", inside and dev < 1e-5,
                           f"window ok={inside} |z_100 - a|={dev:.2e}",
                           {"a": bulk.a, "z_100": float(z[99])})


def surface_equality(config: ExperimentConfig, quick: bool) -> CriterionResult:
    params = build_params(config)
    bulk = bulk_spacing_a(params)
    N = 200 if quick else 400
    res = minimize_EN(N, params, bulk=bulk)
    # quick runs use a fixed window, full runs double K until the minimum is stable
    es = e_surf(params, bulk, K=60 if quick else None)
    excess = res.energy - N * bulk.e0
    diff = abs(excess - es)
    return CriterionResult(3, "surface energy equality", diff < 1e-6,
                           f"E_N - N e0={excess:.12g} e_surf={es:.12g} diff={diff:.2e}",
                           {"excess": excess, "e_surf": es})


def zero_temperature_limits(config: ExperimentConfig, quick: bool) -> CriterionResult:
    params = build_params(config)
    bulk = bulk_spacing_a(params)
    es = e_surf(params, bulk, K=60 if quick else None)
    betas = sorted(config.spectrum.betas)[:3] if quick else sorted(config.spectrum.betas)
    gaps, surf_gaps, consts = [], [], []
    for beta in betas:
        _, _, _, spec = _spectrum(params, beta, with_second=False)
        gap = abs(spec.g_beta - bulk.e0)
        gaps.append(gap)
        consts.append(gap * beta / math.log(beta))
        surf_gaps.append(abs(g_surf(params, spec) - es))
    tail = consts[-3:]
    stable = max(tail) <= 1.2 * min(tail) if len(tail) == 3 else True
    ok = (_strictly_decreasing(gaps) and _strictly_decreasing(surf_gaps) and stable
          and surf_gaps[-1] < 0.1 * abs(es))
    return CriterionResult(4, "zero-temperature limits", ok,
                           f"|g-e0|={['%.3e' % g for g in gaps]} C={['%.3f' % c for c in consts]} "
                           f"|g_surf-e_surf|={['%.3e' % g for g in surf_gaps]}",
                           {"betas": betas, "g_gap": gaps, "C": consts, "g_surf_gap": surf_gaps, "e_surf": es})


def gaussian_free_energy(config: ExperimentConfig, quick: bool) -> CriterionResult:
    params = build_params(config)
    bulk = bulk_spacing_a(params)
    model = build_gaussian_model(params, bulk)
    betas = (20.0, 40.0) if quick else (20.0, 40.0, 80.0)
    scaled = []
    for beta in betas:
        _, _, _, spec = _spectrum(params, beta, with_second=False)
        scaled.append(beta * abs(spec.g_beta - gaussian_g(beta, bulk, model)))
    ok = _strictly_decreasing(scaled) and (quick or scaled[-1] < 0.05)
    return CriterionResult(5, "Gaussian free energy", ok, f"beta|g - g_gauss|={['%.4e' % s for s in scaled]}",
                           {"betas": list(betas), "scaled_gap": scaled})


def gaussian_marginal_distance(config: ExperimentConfig, quick: bool) -> CriterionResult:
    params = build_params(config)
    bulk = bulk_spacing_a(params)
    model = build_gaussian_model(params, bulk)
    betas = (20.0, 40.0) if quick else (20.0, 40.0, 80.0)
    dists = []
    for beta in betas:
        _, grid, tm, spec = _spectrum(params, beta, with_second=False)
        marginal = marginal_density(tm, spec, 1)
        dists.append(marginal_distance_quadrature(marginal, model, beta, grid.point_weights))
    ok = _strictly_decreasing(dists) and (quick or dists[-1] < 0.05)
    return CriterionResult(6, "Gaussian marginals", ok, f"L1={['%.4e' % x for x in dists]}",
                           {"betas": list(betas), "l1": dists})


def spectral_correlations(config: ExperimentConfig, quick: bool) -> CriterionResult:
    beta = 20.0
    params = build_params(config)
    _, _, _, spec = _spectrum(params, beta)
    predicted = spectral_correlation_rate(spec)["gamma_per_spacing"]
    steps, burn = _sampler_steps(config, quick, config.sampler.steps)
    run = metropolis_run(config.sampler.N, params, beta, steps, config.sampler.seed, burn_in=burn,
                         thinning=config.sampler.thinning, progress=False)
    fit = correlation_function(run, 8)
    rel = abs(fit.rate - predicted) / predicted if math.isfinite(predicted) else math.inf
    ok = not fit.lower_bound and rel < 0.2
    return CriterionResult(7, "spectral vs empirical correlations", ok,
                           f"fitted={fit.rate:.4f} spectral={predicted:.4f} rel={rel:.3f}"
                           + (" (lower bound only)" if fit.lower_bound else ""),
                           {"fitted_rate": fit.rate, "spectral_rate": predicted})


def tail_inequality(config: ExperimentConfig, quick: bool) -> CriterionResult:
    beta = 10.0
    params = build_params(config)
    steps, burn = _sampler_steps(config, quick, config.sampler.steps)
    levels = (0.5, 1.0, 2.0, 4.0)
    run = metropolis_run(config.sampler.N, params, beta, steps, config.sampler.seed + 1, burn_in=burn,
                         thinning=config.sampler.thinning, tail_r=levels, progress=False)
    rows = tail_check(run, levels)
    ok = all(r["ok"] for r in rows)
    return CriterionResult(8, "tail inequality", ok,
                           "; ".join(f"r={r['r']}: {r['frequency']:.3e} <= {r['bound']:.3e}" for r in rows),
                           {"rows": rows})


def riccati_identities(config: ExperimentConfig, quick: bool) -> CriterionResult:
    params = build_params(config)
    bulk = bulk_spacing_a(params)
    model = build_gaussian_model(params, bulk)
    C, B = model.C, model.B
    sCs = C[::-1, ::-1]
    N1 = sCs - B @ np.linalg.solve(C, B.T)
    N2 = C - B.T @ np.linalg.solve(sCs, B)
    n_gap = float(np.max(np.abs(N1 - N2)))
    beta = 20.0
    grid = build_quadrature(params, bulk, beta)
    vf = value_iteration_u(params, bulk, n_points=config.grid.value_points, eps=config.grid.value_eps,
                           tol=config.grid.value_tol)
    free = gibbs_free_energy(params, grid, beta, vf, model=model)
    log_gap = abs(free.log_lambda0_K - (beta * grid.d * bulk.e0 + free.log_lambda0_T))
    ok = model.riccati_residual < 1e-12 and n_gap < 1e-12 and log_gap < 1e-8
    return CriterionResult(9, "Riccati and matrix identities", ok,
                           f"residual={model.riccati_residual:.2e} |N1-N2|={n_gap:.2e} "
                           f"|log L0(K) - beta d e0 - log L0(T)|={log_gap:.2e}",
                           {"riccati_residual": model.riccati_residual, "n_gap": n_gap, "lambda_log_gap": log_gap})


def brascamp_decay(config: ExperimentConfig, quick: bool) -> CriterionResult:
    params = build_params(config, m=None)
    report = brascamp_bound(params, N=config.gaussian.brascamp_N, fit_range=tuple(config.gaussian.fit_range))
    bound = report.kappa_bound(params.potential, params.z_min)
    slack = float(np.min(bound - report.kappa))
    ok = report.eta > 0 and report.exponent >= 5.5 and slack >= 0
    return CriterionResult(10, "Toeplitz covariance decay", ok,
                           f"rho={report.rho:.6g} eta={report.eta:.6g} exponent={report.exponent:.3f} "
                           f"kappa_slack={slack:.3e}",
                           {"rho": report.rho, "eta": report.eta, "exponent": report.exponent, "kappa_slack": slack})


def bellman_fixed_point(config: ExperimentConfig, quick: bool) -> CriterionResult:
    params = build_params(config)
    bulk = bulk_spacing_a(params)
    vf = value_iteration_u(params, bulk, n_points=config.grid.value_points, eps=config.grid.value_eps,
                           tol=config.grid.value_tol)
    a = vf.a_block
    at_a = float(h_hat(a, a, vf))
    scan = h_hat_grid_scan(vf, stride=2 if quick else 1)
    X = np.stack(np.meshgrid(*([vf.nodes[::4]] * vf.d), indexing="ij"), axis=-1).reshape(-1, vf.d)
    rng = np.random.default_rng(config.sampler.seed)
    i, j = rng.integers(0, X.shape[0], size=(2, min(200, X.shape[0] ** 2)))
    sym = float(np.max(np.abs(h_hat(X[i], X[j], vf) - h_hat(X[j][:, ::-1], X[i][:, ::-1], vf))))
    ok = vf.residual < 1e-10 and abs(at_a) < 1e-8 and scan.min_value >= -1e-8 and sym < 1e-8
    return CriterionResult(11, "Bellman fixed point", ok,
                           f"residual={vf.residual:.2e} H(a,a)={at_a:.2e} min H={scan.min_value:.2e} "
                           f"symmetry={sym:.2e} near-zero pairs={len(scan.near_zero)}",
                           {"residual": vf.residual, "h_aa": at_a, "h_min": scan.min_value, "symmetry": sym})


def _rate_points(vf, lo: float = 0.01, hi: float = 2.0, count: int = 5) -> np.ndarray:
    flat_w = vf.w_values.reshape(-1)
    X = np.stack(np.meshgrid(*([vf.nodes] * vf.d), indexing="ij"), axis=-1).reshape(-1, vf.d)
    keep = np.nonzero((flat_w >= lo) & (flat_w <= hi))[0]
    if keep.size == 0:
        return X[:0]
    order = keep[np.argsort(flat_w[keep])]
    pick = order[np.linspace(0, order.size - 1, min(count, order.size)).astype(int)]
    return X[pick]


def rate_function_diagnostic(config: ExperimentConfig, quick: bool) -> CriterionResult:
    params = build_params(config)
    bulk = bulk_spacing_a(params)
    vf = value_iteration_u(params, bulk, n_points=config.grid.value_points, eps=config.grid.value_eps,
                           tol=config.grid.value_tol)
    xs = _rate_points(vf, lo=0.05)
    gaps = {}
    for beta in (20.0, 40.0):
        _, _, _, spec = _spectrum(params, beta, with_second=False)
        rows = ldp_rate_check(params, spec, vf, xs)
        gaps[beta] = [r["relative_gap"] for r in rows]
    worst40 = max(gaps[40.0]) if gaps[40.0] else math.inf
    ok = xs.shape[0] == 5 and worst40 < 0.15 and np.mean(gaps[40.0]) < np.mean(gaps[20.0])
    return CriterionResult(12, "rate-function diagnostic", ok,
                           f"max relative gap beta=40: {worst40:.3f}; mean 20/40: "
                           f"{np.mean(gaps[20.0]):.3f}/{np.mean(gaps[40.0]):.3f}",
                           {"points": xs.tolist(), "gap_20": gaps[20.0], "gap_40": gaps[40.0]})


def brute_force_oracle(config: ExperimentConfig, quick: bool) -> CriterionResult:
    beta = 2.0
    params = build_params(config, m=2)
    _, _, _, spec = _spectrum(params, beta, with_second=False)
    brute = brute_force_extrapolation(params, beta, N_max=5 if quick else 6)
    dg = abs(brute.g - spec.g_beta)
    ds = abs(brute.g_surf - g_surf(params, spec))
    return CriterionResult(13, "brute-force Gibbs oracle", dg < 1e-4 and ds < 1e-4,
                           f"|dg|={dg:.2e} |dg_surf|={ds:.2e}",
                           {"g_transfer": spec.g_beta, "g_brute": brute.g, "g_surf_brute": brute.g_surf})


CRITERIA: Dict[int, Callable[[ExperimentConfig, bool], CriterionResult]] = {
    1: nearest_neighbor_oracle,
    2: bulk_periodicity,
    3: surface_equality,
    4: zero_temperature_limits,
    5: gaussian_free_energy,
    6: gaussian_marginal_distance,
    7: spectral_correlations,
    8: tail_inequality,
    9: riccati_identities,
    10: brascamp_decay,
    11: bellman_fixed_point,
    12: rate_function_diagnostic,
    13: brute_force_oracle,
}


def run_criterion(number: int, config: ExperimentConfig, quick: bool = False) -> CriterionResult:
    check = CRITERIA[number]
    name = check.__name__
    started = time.perf_counter()
    try:
        with logger.stage(f"verify_{number}_{name}"):
            result = check(config, quick)
    except Exception as e:
        logger.error(f"Failed to evaluate criterion {number} ({name}): {str(e)}")
        return CriterionResult(number, name.replace("_", " "), False, f"{type(e).__name__}: {e}",
                               elapsed_s=time.perf_counter() - started)
    elapsed = time.perf_counter() - started
    return CriterionResult(result.number, result.name, result.passed, result.detail, result.metrics, elapsed)


def _job(args) -> CriterionResult:
    return run_criterion(*args)


def run_verify(config: ExperimentConfig) -> List[CriterionResult]:
    """Run the selected criteria, concurrently when verify.workers > 1."""
    numbers = list(config.verify.criteria) or sorted(CRITERIA)
    quick = config.verify.quick
    jobs = [(n, config, quick) for n in numbers]
    if config.verify.workers > 1:
        with ProcessPoolExecutor(max_workers=config.verify.workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    passed = sum(r.passed for r in results)
    logger.info(f"verify: {passed}/{len(results)} criteria passed")
    return results


def format_table(results: Sequence[CriterionResult]) -> str:
    width = max((len(r.name) for r in results), default=4)
    lines = [f"{'#':>3}  {'criterion':<{width}}  {'status':<6}  {'time':>8}  detail"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.number:>3}  {r.name:<{width}}  {status:<6}  {r.elapsed_s:>7.2f}s  {r.detail}")
    return "\n".join(lines)
