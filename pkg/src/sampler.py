"""
Monte Carlo cross-checks: single-site Metropolis sampling of the finite
chain, Markov chains driven by the transfer kernel, and the estimators built
on them (mean spacing, tails, correlations, marginal distances).
"""

import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats
from tqdm import tqdm

from src._accel import KIND_LJ, KIND_SPLINE, _metropolis_sweep, _walk
from src.errors import SamplerError
from src.gaussian import GaussianModel, gaussian_marginals
from src.ground_state import ModelParams, bulk_spacing_a
from src.logger import get_logger
from src.potentials import PotentialKind, PotentialSpec, evaluate
from src.transfer import MarginalDensity, SpectralResult, TransferMatrix, marginal_density

logger = get_logger()

N_BATCHES = 20
TARGET_ACCEPTANCE = 0.4
MIN_ACCEPTANCE = 0.05
TUNE_EVERY = 50
DEFAULT_TAIL_R = (0.0, 0.5, 1.0, 2.0, 4.0)

SeedLike = Union[int, np.random.SeedSequence]


def make_rng(seed: SeedLike) -> np.random.Generator:
    """Counter-based Philox stream."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def _seed_label(seed: SeedLike) -> str:
    if isinstance(seed, np.random.SeedSequence):
        return f"{seed.entropy}:{'/'.join(map(str, seed.spawn_key))}"
    return str(seed)


def _kernel_arrays(potential: PotentialSpec):
    if potential.kind is PotentialKind.LENNARD_JONES:
        return KIND_LJ, potential.scale, potential.r_hc, np.zeros(1), np.zeros((4, 1))
    spline = potential.spline
    return KIND_SPLINE, potential.scale, potential.r_hc, np.ascontiguousarray(spline.x), \
        np.ascontiguousarray(spline.c)


class _OnlineStats:
    """Per-batch sums for spacing moments, lag products, tails and a histogram."""

    def __init__(self, n_batches: int, max_lag: int, edges: np.ndarray, tail_levels: np.ndarray):
        self.n_batches = n_batches
        self.max_lag = max_lag
        self.edges = edges
        self.tail_levels = tail_levels
        self.sites = np.zeros(n_batches)
        self.sum_z = np.zeros(n_batches)
        self.sum_z2 = np.zeros(n_batches)
        self.lag_sum = np.zeros((n_batches, max_lag + 1))
        self.lag_count = np.zeros((n_batches, max_lag + 1))
        self.centre = np.zeros((n_batches, 3))
        self.tail = np.zeros((n_batches, tail_levels.size))
        self.hist = np.zeros((n_batches, edges.size - 1))

    def add(self, z: np.ndarray, batch: int, centre: Optional[float] = None) -> None:
        self.sites[batch] += z.size
        self.sum_z[batch] += z.sum()
        self.sum_z2[batch] += z @ z
        for lag in range(min(self.max_lag, z.size - 1) + 1):
            self.lag_sum[batch, lag] += z[:z.size - lag] @ z[lag:]
            self.lag_count[batch, lag] += z.size - lag
        if centre is not None:
            self.centre[batch] += (1.0, centre, centre * centre)
        self.tail[batch] += np.count_nonzero(z[:, None] >= self.tail_levels[None, :], axis=0)
        self.hist[batch] += np.histogram(z, bins=self.edges)[0]

    def correlations(self, sums: slice = slice(None)) -> np.ndarray:
        n = self.sites[sums].sum()
        mu = self.sum_z[sums].sum() / n
        var = self.sum_z2[sums].sum() / n - mu * mu
        lagged = self.lag_sum[sums].sum(axis=0) / np.maximum(self.lag_count[sums].sum(axis=0), 1)
        return (lagged - mu * mu) / var if var > 0 else np.full(self.max_lag + 1, np.nan)


def _batch_se(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    return float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else math.nan


@dataclass(frozen=True)
class SampleRun:
    kind: str
    N: int
    beta: float
    steps: int
    burn_in: int
    thinning: int
    seed: str
    acceptance: float
    width: float
    n_samples: int
    mean_spacing: float
    mean_spacing_se: float
    centre_mean: float
    centre_se: float
    corr: np.ndarray = field(repr=False)
    corr_se: np.ndarray = field(repr=False)
    lag_counts: np.ndarray = field(repr=False)
    tail_r: np.ndarray = field(repr=False)
    tail_freq: np.ndarray = field(repr=False)
    tail_se: np.ndarray = field(repr=False)
    hist_edges: np.ndarray = field(repr=False)
    hist_density: np.ndarray = field(repr=False)
    hist_batches: np.ndarray = field(repr=False)
    out_of_range: float
    z_max: float
    p: float
    occupation: Optional[np.ndarray] = field(default=None, repr=False)

    def summary(self) -> Dict[str, object]:
        return {
            "kind": self.kind, "N": self.N, "beta": self.beta, "steps": self.steps, "burn_in": self.burn_in,
            "thinning": self.thinning, "seed": self.seed, "acceptance": self.acceptance, "width": self.width,
            "n_samples": self.n_samples, "mean_spacing": self.mean_spacing,
            "mean_spacing_se": self.mean_spacing_se, "centre_mean": self.centre_mean,
            "centre_se": self.centre_se, "out_of_range": self.out_of_range,
        }

    def histogram_rows(self) -> List[Dict[str, float]]:
        return [{"left": float(l), "right": float(r), "density": float(d)}
                for l, r, d in zip(self.hist_edges[:-1], self.hist_edges[1:], self.hist_density)]

    def correlation_rows(self) -> List[Dict[str, float]]:
        return [{"lag": n, "c": float(c), "se": float(s)} for n, (c, s) in enumerate(zip(self.corr, self.corr_se))]


def _finalise(acc: _OnlineStats, **meta) -> SampleRun:
    sites = acc.sites
    used = sites > 0
    if not np.any(used):
        raise SamplerError("no samples were recorded")
    batch_means = acc.sum_z[used] / sites[used]
    mean = float(acc.sum_z.sum() / sites.sum())
    corr = acc.correlations()
    per_batch = np.array([acc.correlations(slice(b, b + 1)) for b in np.nonzero(used)[0]])
    corr_se = np.std(per_batch, axis=0, ddof=1) / math.sqrt(per_batch.shape[0]) \
        if per_batch.shape[0] > 1 else np.full(corr.size, np.nan)
    corr_se[0] = 0.0
    tail_batches = acc.tail[used] / sites[used, None]
    tail_freq = acc.tail.sum(axis=0) / sites.sum()
    tail_se = np.std(tail_batches, axis=0, ddof=1) / math.sqrt(tail_batches.shape[0])
    widths = np.diff(acc.edges)
    in_range = acc.hist.sum(axis=1)
    hist_batches = np.where(in_range[:, None] > 0, acc.hist / np.maximum(in_range[:, None], 1) / widths, 0.0)
    density = acc.hist.sum(axis=0) / max(in_range.sum(), 1) / widths
    centre_n = acc.centre[:, 0]
    if centre_n.sum() > 0:
        centre_mean = float(acc.centre[:, 1].sum() / centre_n.sum())
        centre_se = _batch_se(acc.centre[used, 1] / np.maximum(centre_n[used], 1))
    else:
        centre_mean, centre_se = mean, _batch_se(batch_means)
    return SampleRun(mean_spacing=mean, mean_spacing_se=_batch_se(batch_means), centre_mean=centre_mean,
                     centre_se=centre_se, corr=corr, corr_se=corr_se, lag_counts=acc.lag_count.sum(axis=0),
                     tail_r=acc.tail_levels - meta["z_max"], tail_freq=tail_freq, tail_se=tail_se,
                     hist_edges=acc.edges, hist_density=density, hist_batches=hist_batches[used],
                     out_of_range=float(1.0 - in_range.sum() / sites.sum()), **meta)


def default_edges(params: ModelParams, beta: float, a: float, bins: int = 200) -> np.ndarray:
    width = 1.0 / math.sqrt(beta * float(evaluate(params.potential, a, 2)))
    lo = max(params.potential.r_hc + 1e-12, a - 10.0 * width)
    return np.linspace(lo, a + 10.0 * width, bins + 1)


def metropolis_run(N: int, params: ModelParams, beta: float, steps: int, seed: SeedLike,
                   burn_in: Optional[int] = None, thinning: int = 10, max_lag: int = 8,
                   tail_r: Sequence[float] = DEFAULT_TAIL_R, edges: Optional[np.ndarray] = None,
                   progress: bool = True) -> SampleRun:
    """
    Sequential single-site Gaussian-proposal Metropolis targeting exp(-beta E_N).
    One step is one sweep; statistics are taken over the bulk window that
    excludes N/4 spacings at each end.
    """
    if N < 3:
        raise ValueError(f"N must be >= 3, got {N}")
    if steps < N_BATCHES * thinning:
        raise ValueError(f"steps must be >= {N_BATCHES * thinning}")
    burn_in = steps // 10 if burn_in is None else burn_in
    rng = make_rng(seed)
    bulk = bulk_spacing_a(params)
    n = N - 1
    z = np.full(n, bulk.a)
    kind, scale, r_hc, knots, coeffs = _kernel_arrays(params.potential)
    R = params.range
    width = 0.5 / math.sqrt(beta * float(evaluate(params.potential, bulk.a, 2)))
    lo, hi = n // 4, n - n // 4
    edges = default_edges(params, beta, bulk.a) if edges is None else np.asarray(edges, dtype=float)
    acc = _OnlineStats(N_BATCHES, max_lag, edges, params.z_max + np.asarray(tail_r, dtype=float))
    n_samples = steps // thinning
    per_batch = n_samples // N_BATCHES
    show = progress and sys.stdout.isatty()

    def sweep() -> int:
        normals = rng.standard_normal(n)
        log_u = np.log(rng.random(n))
        return _metropolis_sweep(z, beta, params.p, R, width, normals, log_u, kind, scale, r_hc, knots, coeffs)

    with logger.stage(f"metropolis N={N} beta={beta}"):
        accepted = 0
        for t in tqdm(range(burn_in), desc="burn-in", disable=not show):
            accepted += sweep()
            if (t + 1) % TUNE_EVERY == 0:
                rate = accepted / (TUNE_EVERY * n)
                width *= min(2.0, max(0.5, rate / TARGET_ACCEPTANCE))
                accepted = 0

        accepted = 0
        recorded = 0
        for t in tqdm(range(steps), desc="sampling", disable=not show):
            accepted += sweep()
            if (t + 1) % thinning == 0:
                batch = recorded // per_batch
                if batch < N_BATCHES:
                    acc.add(z[lo:hi].copy(), batch, centre=float(z[n // 2]))
                recorded += 1
        acceptance = accepted / (steps * n)

    if acceptance < MIN_ACCEPTANCE:
        raise SamplerError(f"acceptance {acceptance:.4f} below {MIN_ACCEPTANCE} after tuning (width={width:.3e})")
    logger.info(f"Metropolis run: N={N} beta={beta} acceptance={acceptance:.3f} width={width:.4e}")
    return _finalise(acc, kind="metropolis", N=N, beta=beta, steps=steps, burn_in=burn_in, thinning=thinning,
                     seed=_seed_label(seed), acceptance=acceptance, width=width, n_samples=per_batch * N_BATCHES,
                     z_max=params.z_max, p=params.p)


def transition_matrix(tm: TransferMatrix, spectral: SpectralResult) -> np.ndarray:
    """P_ij = M_ij psi_j / (lambda psi_i), renormalised so each row sums to one."""
    lam = math.exp(spectral.log_lambda0 - tm.log_shift)
    P = tm.matrix * spectral.psi_right[None, :] / (lam * spectral.psi_right[:, None])
    return P / P.sum(axis=1, keepdims=True)


def kernel_chain_run(params: ModelParams, tm: TransferMatrix, spectral: SpectralResult, steps: int,
                     seed: SeedLike, burn_in: int = 1000, max_lag: int = 8,
                     tail_r: Sequence[float] = DEFAULT_TAIL_R, edges: Optional[np.ndarray] = None) -> SampleRun:
    """Discrete-state chain on the quadrature blocks with the transfer-kernel transition matrix."""
    if steps < N_BATCHES:
        raise ValueError(f"steps must be >= {N_BATCHES}")
    rng = make_rng(seed)
    P = transition_matrix(tm, spectral)
    cumulative = np.cumsum(P, axis=1)
    cumulative[:, -1] = 1.0
    masses = marginal_density(tm, spectral, 1).masses
    start = int(rng.choice(masses.size, p=masses / masses.sum()))
    states = np.empty(burn_in + steps, dtype=np.int64)
    with logger.stage(f"kernel chain steps={steps}"):
        _walk(cumulative, start, rng.random(burn_in + steps), states)
    states = states[burn_in:]
    points = spectral.grid.points
    bulk = bulk_spacing_a(params)
    edges = default_edges(params, spectral.beta, bulk.a) if edges is None else np.asarray(edges, dtype=float)
    acc = _OnlineStats(N_BATCHES, max_lag, edges, params.z_max + np.asarray(tail_r, dtype=float))
    per_batch = steps // N_BATCHES
    for b in range(N_BATCHES):
        block = states[b * per_batch:(b + 1) * per_batch]
        acc.add(points[block].ravel(), b)
    occupation = np.bincount(states[:per_batch * N_BATCHES], minlength=masses.size)
    return _finalise(acc, kind="kernel", N=0, beta=spectral.beta, steps=steps, burn_in=burn_in, thinning=1,
                     seed=_seed_label(seed), acceptance=1.0, width=0.0, n_samples=per_batch * N_BATCHES,
                     z_max=params.z_max, p=params.p, occupation=occupation)


def occupation_test(run: SampleRun, masses: np.ndarray, min_expected: float = 5.0) -> Tuple[float, float]:
    """Chi-square statistic and p-value of the visited states against the invariant masses."""
    if run.occupation is None:
        raise ValueError("run carries no occupation counts")
    observed = run.occupation.astype(float)
    expected = masses / masses.sum() * observed.sum()
    small = expected < min_expected
    obs = np.concatenate([observed[~small], [observed[small].sum()]]) if np.any(small) else observed
    exp = np.concatenate([expected[~small], [expected[small].sum()]]) if np.any(small) else expected
    keep = exp > 0
    result = stats.chisquare(obs[keep], exp[keep] * obs[keep].sum() / exp[keep].sum())
    return float(result.statistic), float(result.pvalue)


def tail_check(run: SampleRun, r_grid: Optional[Sequence[float]] = None) -> List[Dict[str, float]]:
    """P(z_k >= z_max + r) against exp(-beta p r) with a 3 SE allowance."""
    levels = run.tail_r if r_grid is None else np.asarray(r_grid, dtype=float)
    rows = []
    for r in levels:
        hit = np.nonzero(np.isclose(run.tail_r, r, rtol=0, atol=1e-12))[0]
        if hit.size == 0:
            raise ValueError(f"tail level r={r} was not recorded by this run")
        i = int(hit[0])
        bound = math.exp(-run.beta * run.p * float(r))
        freq, se = float(run.tail_freq[i]), float(run.tail_se[i])
        ok = freq <= bound + 3.0 * (se if math.isfinite(se) else 0.0)
        if not ok:
            logger.warning(f"tail bound violated at r={r}: {freq:.4e} > {bound:.4e} + 3*{se:.2e}")
        rows.append({"r": float(r), "frequency": freq, "se": se, "bound": bound, "ok": ok})
    return rows


@dataclass(frozen=True)
class CorrelationFit:
    lags: np.ndarray
    c: np.ndarray
    se: np.ndarray
    rate: float
    lower_bound: bool
    significant: np.ndarray
    flagged: List[int]


def correlation_function(run: SampleRun, max_lag: Optional[int] = None) -> CorrelationFit:
    """c(n) with batch-means errors and an exponential rate fitted through the origin."""
    top = run.corr.size - 1 if max_lag is None else min(max_lag, run.corr.size - 1)
    lags = np.arange(top + 1)
    c, se = run.corr[:top + 1], run.corr_se[:top + 1]
    significant = (c > 3.0 * se) & (c > 0)
    significant[0] = True
    flagged = [int(n) for n in lags[1:] if run.lag_counts[n] < 10 * N_BATCHES or not significant[n]]
    use = significant & (lags >= 1)
    if np.any(use):
        n = lags[use].astype(float)
        rate = float(-np.sum(n * np.log(c[use])) / np.sum(n * n))
        lower = False
    else:
        se1 = float(se[1]) if top >= 1 else math.nan
        rate = -math.log(3.0 * se1) if se1 > 0 else math.inf
        lower = True
        logger.info(f"no significant correlation beyond lag 0; rate >= {rate:.3f}")
    return CorrelationFit(lags=lags, c=c, se=se, rate=rate, lower_bound=lower, significant=significant,
                          flagged=flagged)


@dataclass(frozen=True)
class MarginalDistance:
    distance: float
    coarse_distance: float
    se: float

    @property
    def binning_sensitivity(self) -> float:
        return abs(self.distance - self.coarse_distance)


def _binned_l1(density: np.ndarray, edges: np.ndarray, cdf) -> float:
    p_hist = density * np.diff(edges)
    p_gauss = np.diff(cdf(edges))
    outside = 1.0 - float(p_gauss.sum())
    return float(np.sum(np.abs(p_hist - p_gauss)) + outside)


def marginal_distance_histogram(run: SampleRun, model: GaussianModel, beta: Optional[float] = None) -> MarginalDistance:
    """L1 distance between the spacing histogram and the one-block Gaussian marginal."""
    if model.d != 1:
        raise ValueError("the histogram path compares single spacings (d = 1)")
    beta = beta or run.beta
    sd = 1.0 / math.sqrt(beta * float(model.N[0, 0]))
    cdf = lambda x: stats.norm.cdf(x, loc=model.a, scale=sd)
    edges = run.hist_edges
    fine = _binned_l1(run.hist_density, edges, cdf)
    n_bins = (edges.size - 1) // 2 * 2
    coarse_edges = edges[:n_bins + 1:2]
    widths = np.diff(edges[:n_bins + 1])
    mass = run.hist_density[:n_bins] * widths
    coarse_density = (mass[0::2] + mass[1::2]) / np.diff(coarse_edges)
    coarse = _binned_l1(coarse_density, coarse_edges, cdf)
    per_batch = [_binned_l1(h, edges, cdf) for h in run.hist_batches]
    return MarginalDistance(distance=fine, coarse_distance=coarse, se=_batch_se(per_batch))


def marginal_distance_quadrature(marginal: MarginalDensity, model: GaussianModel, beta: float,
                                 weights: np.ndarray) -> float:
    """L1 distance between a transfer marginal and the Gaussian marginal of the same blocks."""
    gauss = gaussian_marginals(model, beta, marginal.n_blocks)
    if marginal.n_blocks == 1:
        pts = marginal.points
        w = weights
        rho = marginal.density
    else:
        pts2 = marginal.points
        pts = np.concatenate([np.repeat(pts2, pts2.shape[0], axis=0), np.tile(pts2, (pts2.shape[0], 1))], axis=1)
        w = np.outer(weights, weights).ravel()
        rho = marginal.density.ravel()
    return float(np.sum(w * np.abs(rho - gauss.density(pts))))


def _run_one(args) -> SampleRun:
    N, params, beta, steps, seed, kwargs = args
    return metropolis_run(N, params, beta, steps, seed, **{**kwargs, "progress": False})


def run_chains(n_chains: int, N: int, params: ModelParams, beta: float, steps: int, seed: int,
               workers: int = 1, **kwargs) -> List[SampleRun]:
    """Independent chains on spawned Philox streams, optionally in a process pool."""
    seeds = np.random.SeedSequence(seed).spawn(n_chains)
    jobs = [(N, params, beta, steps, s, kwargs) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(job) for job in jobs]


def pool_runs(runs: Sequence[SampleRun]) -> Dict[str, float]:
    """Average the headline estimates of independent chains."""
    if not runs:
        raise ValueError("no runs to pool")
    k = len(runs)
    mean = float(np.mean([r.mean_spacing for r in runs]))
    se = math.sqrt(sum(r.mean_spacing_se ** 2 for r in runs)) / k
    centre = float(np.mean([r.centre_mean for r in runs]))
    centre_se = math.sqrt(sum(r.centre_se ** 2 for r in runs)) / k
    return {"chains": k, "mean_spacing": mean, "mean_spacing_se": se, "centre_mean": centre,
            "centre_se": centre_se, "acceptance": float(np.mean([r.acceptance for r in runs]))}


def metropolis_transition_matrix(weights: Sequence[Fraction]) -> List[List[Fraction]]:
    """
    Exact Metropolis kernel for a uniform proposal over the other states,
    with acceptance min(1, pi_j / pi_i).
    """
    w = [Fraction(x) for x in weights]
    if len(w) < 2 or any(x <= 0 for x in w):
        raise ValueError("need at least two positive weights")
    k = len(w)
    propose = Fraction(1, k - 1)
    P = [[Fraction(0)] * k for _ in range(k)]
    for i in range(k):
        for j in range(k):
            if i != j:
                P[i][j] = propose * min(Fraction(1), w[j] / w[i])
        P[i][i] = 1 - sum(P[i][j] for j in range(k) if j != i)
    return P
