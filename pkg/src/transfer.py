"""
Positive-temperature layer for finite range m.

Nystrom discretisation of the block transfer operators T, K and the Gaussian
operator G, power iteration with deflation for the two leading eigenvalues,
and the thermodynamic quantities read off the principal pair.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import integrate, optimize
from scipy.special import logsumexp, zeta

from src.blocks import block_energy, cross_energy
from src.errors import GridError, SpectralError
from src.gaussian import GaussianModel
from src.ground_state import BulkConstants, ModelParams, bulk_spacing_a
from src.logger import get_logger
from src.potentials import evaluate
from src.quadrature import QuadratureGrid, build_quadrature, integration_cutoff
from src.surface import ValueFunction, asymmetry_g, rate_function_w

logger = get_logger()

POWER_TOL = 1e-12
POWER_MAX_ITER = 20_000
GAP_COLLAPSE = 1e-10
MARGINAL_MAX_ENTRIES = 2e7


@dataclass(frozen=True)
class TransferMatrix:
    """
    exp(log_shift) * matrix is the quadrature similarity sqrt(w_i) k(x_i, x_j) sqrt(w_j)
    of the kernel named by kind.
    """
    matrix: np.ndarray = field(repr=False)
    log_shift: float
    grid: QuadratureGrid = field(repr=False)
    kind: str
    beta: float
    d: int
    energy_offset: float = 0.0


def _log_sqrt_weights(grid: QuadratureGrid) -> np.ndarray:
    return 0.5 * np.log(grid.point_weights)


def _finish(log_kernel: np.ndarray, grid: QuadratureGrid, kind: str, beta: float, d: int,
            offset: float = 0.0) -> TransferMatrix:
    sw = _log_sqrt_weights(grid)
    L = log_kernel + sw[:, None] + sw[None, :]
    shift = float(np.max(L))
    if not math.isfinite(shift):
        raise GridError(f"{kind} kernel has no finite entries on the grid")
    M = np.exp(L - shift)
    return TransferMatrix(matrix=M, log_shift=shift, grid=grid, kind=kind, beta=beta, d=d,
                          energy_offset=offset)


def _symmetric_exponent(params: ModelParams, X: np.ndarray):
    R, pot, p = params.range, params.potential, params.p
    V = block_energy(X, pot, p, R)
    W = cross_energy(X[:, None, :], X[None, :, :], pot, R)
    return V, W


def assemble_T(params: ModelParams, grid: QuadratureGrid, beta: float) -> TransferMatrix:
    """T(x, y) = exp(-beta (V(x)/2 + W(x, y) + V(y)/2))."""
    X = grid.points
    V, W = _symmetric_exponent(params, X)
    log_k = -beta * (0.5 * V[:, None] + W + 0.5 * V[None, :])
    logger.debug(f"assembled T: size={X.shape[0]} beta={beta}")
    return _finish(log_k, grid, "T", beta, grid.d)


def assemble_K(params: ModelParams, grid: QuadratureGrid, beta: float, vf: ValueFunction) -> TransferMatrix:
    """K(x, y) = exp(-beta H-hat(x, y)), with g taken at the projection onto the value-function hull."""
    X = grid.points
    V, W = _symmetric_exponent(params, X)
    g = asymmetry_g(X, vf, clamp=True)
    h = 0.5 * V[:, None] + W + 0.5 * V[None, :] - grid.d * vf.bulk.e0 - g[:, None] + g[None, :]
    return _finish(-beta * h, grid, "K", beta, grid.d, offset=vf.bulk.e0)


def assemble_G(model: GaussianModel, beta: float, grid: QuadratureGrid) -> TransferMatrix:
    """G(x, y) = exp(-beta/2 Q-hat(x - a, y - a)) with Q-hat the form of M-hat."""
    X = grid.points - model.a
    d = model.d
    P = model.M_hat
    xx = np.einsum("ni,ij,nj->n", X, P[:d, :d], X)
    yy = np.einsum("ni,ij,nj->n", X, P[d:, d:], X)
    xy = X @ P[:d, d:] @ X.T
    q = xx[:, None] + 2.0 * xy + yy[None, :]
    return _finish(-0.5 * beta * q, grid, "G", beta, d)


def gaussian_seed(grid: QuadratureGrid, model: GaussianModel, beta: float) -> np.ndarray:
    """Gaussian principal eigenfunction times sqrt(w), a starting vector for power iteration."""
    X = grid.points - model.a
    quad = np.einsum("ni,ij,nj->n", X, 0.5 * model.N, X)
    return np.sqrt(grid.point_weights) * np.exp(-0.5 * beta * quad)


def _power(apply, x0: np.ndarray, tol: float, max_iter: int, label: str):
    x = x0 / np.linalg.norm(x0)
    lam = 0.0
    for it in range(1, max_iter + 1):
        y = apply(x)
        norm = float(np.linalg.norm(y))
        if norm == 0.0:
            return 0.0, x, it
        new_lam = float(x @ y)
        y /= norm
        if it > 1 and abs(new_lam - lam) <= tol * max(abs(new_lam), 1e-300) \
                and np.linalg.norm(y - x) < 1e-9:
            return new_lam, y, it
        lam, x = new_lam, y
    raise SpectralError(f"{label}: power iteration did not converge in {max_iter} steps")


def principal_eig(matrix: np.ndarray, seed: Optional[np.ndarray] = None,
                  tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER):
    """
    Largest eigenvalue of a nonnegative matrix with positive right and left
    eigenvectors normalised so that <left, right> = 1.
    """
    lam, right, left, _ = _principal(matrix, seed, tol, max_iter)
    return lam, right, left


def _principal(matrix: np.ndarray, seed: Optional[np.ndarray], tol: float, max_iter: int):
    M = np.asarray(matrix, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if np.any(M < 0):
        raise ValueError("matrix must be nonnegative")
    start = np.ones(M.shape[0]) if seed is None else np.abs(np.asarray(seed, dtype=float)) + 1e-300
    lam, right, it_r = _power(lambda v: M @ v, start, tol, max_iter, "principal right")
    if np.allclose(M, M.T, rtol=0, atol=1e-15 * np.max(M)):
        left, it_l = right.copy(), 0
    else:
        _, left, it_l = _power(lambda v: M.T @ v, start, tol, max_iter, "principal left")
    right, left = np.abs(right), np.abs(left)
    overlap = float(left @ right)
    if overlap <= 0:
        raise SpectralError("principal eigenvectors are orthogonal; matrix not irreducible")
    left = left / overlap
    logger.debug(f"principal eigenvalue {lam:.17g} after {it_r}+{it_l} iterations")
    return lam, right, left, it_r


def second_eig(matrix: np.ndarray, lam0: float, right: np.ndarray, left: np.ndarray,
               tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER) -> float:
    """
    |Lambda_1| by power iteration on M - lam0 * right left^T / <left, right>.
    An oscillating Rayleigh estimate triggers a restart on the squared operator.
    """
    M = np.asarray(matrix, dtype=float)
    proj = np.outer(right, left) / float(left @ right)
    Dm = M - lam0 * proj
    n = M.shape[0]
    # deterministic start with components along most eigenvectors
    x0 = np.cos(np.arange(n) * 1.618033988749895) + 0.5
    x0 = x0 - proj @ x0
    if np.linalg.norm(Dm @ x0) <= 1e-14 * lam0 * np.linalg.norm(x0):
        return 0.0
    try:
        lam, _, _ = _power(lambda v: Dm @ v, x0, tol, 2000, "deflated")
        return abs(lam)
    except SpectralError:
        logger.info("deflated power iteration oscillates; restarting on the squared operator")
    D2 = Dm @ Dm
    x = x0 / np.linalg.norm(x0)
    ratio = 0.0
    for it in range(1, max_iter + 1):
        y = D2 @ x
        new_ratio = float(np.linalg.norm(y))
        if new_ratio == 0.0:
            return 0.0
        y /= new_ratio
        if abs(new_ratio - ratio) <= tol * new_ratio and min(np.linalg.norm(y - x), np.linalg.norm(y + x)) < 1e-8:
            return math.sqrt(new_ratio)
        ratio, x = new_ratio, y
    raise SpectralError("second eigenvalue: squared-operator iteration did not converge")


@dataclass(frozen=True)
class SpectralResult:
    kind: str
    beta: float
    d: int
    log_lambda0: float
    lambda1_ratio: float
    g_beta: float
    phi_right: np.ndarray = field(repr=False)
    phi_left: np.ndarray = field(repr=False)
    psi_right: np.ndarray = field(repr=False)
    psi_left: np.ndarray = field(repr=False)
    grid: QuadratureGrid = field(repr=False)
    iterations: int = 0

    @property
    def lambda0(self) -> float:
        return math.exp(self.log_lambda0)

    @property
    def lambda1(self) -> float:
        return self.lambda1_ratio * self.lambda0

    @property
    def gap_ratio(self) -> float:
        return self.lambda1_ratio


def solve_spectrum(tm: TransferMatrix, seed: Optional[np.ndarray] = None,
                   with_second: bool = True, model: Optional[GaussianModel] = None) -> SpectralResult:
    """
    Principal pair, and optionally |Lambda1|, of a discretised operator. With a
    Gaussian model of matching block dimension the power iteration starts from
    its principal eigenfunction.
    """
    if seed is None and model is not None and model.d == tm.d:
        seed = gaussian_seed(tm.grid, model, tm.beta)
    with logger.stage(f"spectrum_{tm.kind}"):
        lam, psi_r, psi_l, iterations = _principal(tm.matrix, seed, POWER_TOL, POWER_MAX_ITER)
        lam1 = second_eig(tm.matrix, lam, psi_r, psi_l) if with_second else math.nan
    if lam <= 0:
        raise SpectralError(f"{tm.kind}: non-positive principal eigenvalue")
    ratio = lam1 / lam
    if ratio > 1.0 - GAP_COLLAPSE:
        raise SpectralError(f"{tm.kind}: spectral gap collapsed (ratio {ratio:.12g})")
    log_l0 = math.log(lam) + tm.log_shift
    g = tm.energy_offset - log_l0 / (tm.beta * tm.d)
    sw = np.sqrt(tm.grid.point_weights)
    logger.info(f"spectrum {tm.kind}: log Lambda0={log_l0:.12g} ratio={ratio:.6e} g={g:.12g}")
    return SpectralResult(kind=tm.kind, beta=tm.beta, d=tm.d, log_lambda0=log_l0, lambda1_ratio=ratio,
                          g_beta=g, phi_right=psi_r / sw, phi_left=psi_l / sw,
                          psi_right=psi_r, psi_left=psi_l, grid=tm.grid, iterations=iterations)


@dataclass(frozen=True)
class FreeEnergy:
    g_T: float
    g_K: Optional[float]
    log_lambda0_T: float
    log_lambda0_K: Optional[float]

    @property
    def agree(self) -> bool:
        return self.g_K is None or abs(self.g_T - self.g_K) <= 1e-8 * max(1.0, abs(self.g_T))


def gibbs_free_energy(params: ModelParams, grid: QuadratureGrid, beta: float,
                      vf: Optional[ValueFunction] = None,
                      spectral_T: Optional[SpectralResult] = None,
                      model: Optional[GaussianModel] = None) -> FreeEnergy:
    """g = -(beta d)^-1 log Lambda0(T); with a value function also e0 - (beta d)^-1 log Lambda0(K)."""
    spec_T = spectral_T or solve_spectrum(assemble_T(params, grid, beta), with_second=False, model=model)
    if vf is None:
        return FreeEnergy(spec_T.g_beta, None, spec_T.log_lambda0, None)
    spec_K = solve_spectrum(assemble_K(params, grid, beta, vf), with_second=False, model=model)
    result = FreeEnergy(spec_T.g_beta, spec_K.g_beta, spec_T.log_lambda0, spec_K.log_lambda0)
    if not result.agree:
        logger.warning(f"T and K free energies disagree: {result.g_T:.15g} vs {result.g_K:.15g}")
    return result


@dataclass(frozen=True)
class NearestNeighborGas:
    g: float
    ell: float
    log_Z: float


def nearest_neighbor_gas(params: ModelParams, beta: float) -> NearestNeighborGas:
    """Closed forms for independent bonds: Z = int exp(-beta (v(r) + p r)) dr."""
    if params.p <= 0:
        raise GridError("the single-bond integral diverges at zero pressure")
    pot, p = params.potential, params.p
    phi = lambda r: float(evaluate(pot, r, 0)) + p * r
    res = optimize.minimize_scalar(phi, bounds=(0.9 * params.z_min, 1.1 * params.z_max), method="bounded",
                                   options={"xatol": 1e-12})
    c = float(res.fun)
    lo = integration_cutoff(params, beta)
    pieces = [lo, params.z_max, params.z_max + 50.0 / (beta * p)]

    def integral(weight):
        f = lambda r: weight(r) * math.exp(-beta * (phi(r) - c))
        total = 0.0
        for a, b in zip(pieces[:-1], pieces[1:]):
            total += integrate.quad(f, a, b, epsabs=0.0, epsrel=1e-13, limit=400)[0]
        total += integrate.quad(f, pieces[-1], np.inf, epsabs=0.0, epsrel=1e-13, limit=400)[0]
        return total

    Z0 = integral(lambda r: 1.0)
    Z1 = integral(lambda r: r)
    log_Z = math.log(Z0) - beta * c
    return NearestNeighborGas(g=-log_Z / beta, ell=Z1 / Z0, log_Z=log_Z)


@dataclass(frozen=True)
class MarginalDensity:
    n_blocks: int
    points: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)
    masses: np.ndarray = field(repr=False)

    @property
    def total(self) -> float:
        return float(np.sum(self.masses))


def marginal_density(tm: TransferMatrix, spectral: SpectralResult, n_blocks: int = 1) -> MarginalDensity:
    """
    Bulk Gibbs marginal of n consecutive blocks on the tensor of quadrature
    nodes, psi_l(x1) T(x1, x2) ... T(x_{n-1}, x_n) psi_r(x_n) / Lambda0^(n-1).
    masses has shape (P,) * n with P = grid.size, so memory grows as P^n.
    """
    if n_blocks < 1:
        raise ValueError(f"n_blocks must be >= 1, got {n_blocks}")
    grid = spectral.grid
    if float(grid.size) ** n_blocks > MARGINAL_MAX_ENTRIES:
        raise ValueError(f"{n_blocks}-block marginal needs {grid.size}^{n_blocks} entries, "
                         f"above {MARGINAL_MAX_ENTRIES:.0e}")
    lam = math.exp(spectral.log_lambda0 - tm.log_shift)
    masses = spectral.psi_left
    weights = grid.point_weights
    for _ in range(n_blocks - 1):
        masses = masses[..., None] * tm.matrix / lam
        weights = np.multiply.outer(weights, grid.point_weights)
    masses = masses * spectral.psi_right
    return MarginalDensity(n_blocks, grid.points, masses / weights, masses)


def mean_spacing(tm: TransferMatrix, spectral: SpectralResult) -> float:
    """Mean of the first spacing of a block under the bulk measure."""
    m = marginal_density(tm, spectral, 1)
    return float(np.sum(m.masses * m.points[:, 0]) / m.total)


def g_surf(params: ModelParams, spectral: SpectralResult) -> float:
    """
    -g - beta^-1 log mu(exp(beta W0)). The two-block marginal integrates
    exp(beta W) to <phi_l, exp(-beta V/2)> <exp(-beta V/2), phi_r> / Lambda0.
    """
    if spectral.kind != "T":
        raise ValueError("g_surf expects the spectrum of T")
    grid = spectral.grid
    beta = spectral.beta
    V = block_energy(grid.points, params.potential, params.p, params.range)
    log_sw = _log_sqrt_weights(grid)
    with np.errstate(divide="ignore"):
        left = logsumexp(log_sw + np.log(spectral.psi_left) - 0.5 * beta * V)
        right = logsumexp(log_sw + np.log(spectral.psi_right) - 0.5 * beta * V)
    log_mu = left + right - spectral.log_lambda0
    return -spectral.g_beta - log_mu / beta


def spectral_correlation_rate(spectral: SpectralResult) -> Dict[str, float]:
    """gamma = -log(Lambda1 / Lambda0) per block and per spacing; +inf for a rank-one kernel."""
    ratio = spectral.lambda1_ratio
    if not ratio < 1.0 - GAP_COLLAPSE:
        raise SpectralError(f"gap collapse: ratio {ratio:.12g}")
    gamma = math.inf if ratio <= 0 else -math.log(ratio)
    return {"gamma": gamma, "gamma_per_spacing": gamma / spectral.d, "ratio": ratio}


def eigenfunction_at(points: np.ndarray, params: ModelParams, spectral: SpectralResult,
                     side: str = "right") -> np.ndarray:
    """log phi(x) off the nodes via phi(x) = Lambda0^-1 sum_j w_j T(x, x_j) phi(x_j)."""
    if spectral.kind != "T":
        raise ValueError("eigenfunction extension expects the spectrum of T")
    x = np.atleast_2d(np.asarray(points, dtype=float))
    grid = spectral.grid
    X = grid.points
    beta, R, pot, p = spectral.beta, params.range, params.potential, params.p
    Vx = block_energy(x, pot, p, R)
    Vn = block_energy(X, pot, p, R)
    if side == "right":
        W = cross_energy(x[:, None, :], X[None, :, :], pot, R)
        psi = spectral.psi_right
    elif side == "left":
        W = cross_energy(X[None, :, :], x[:, None, :], pot, R)
        psi = spectral.psi_left
    else:
        raise ValueError("side must be 'right' or 'left'")
    with np.errstate(divide="ignore"):
        log_psi = np.log(psi)
    log_terms = (-beta * (0.5 * Vx[:, None] + W + 0.5 * Vn[None, :])
                 + _log_sqrt_weights(grid)[None, :] + log_psi[None, :])
    return logsumexp(log_terms, axis=1) - spectral.log_lambda0


def log_density_at(points: np.ndarray, params: ModelParams, spectral: SpectralResult) -> np.ndarray:
    """log of the one-block marginal phi_l(x) phi_r(x) at arbitrary blocks."""
    return (eigenfunction_at(points, params, spectral, "left")
            + eigenfunction_at(points, params, spectral, "right"))


def ldp_rate_check(params: ModelParams, spectral: SpectralResult, vf: ValueFunction,
                   xs: Sequence) -> List[Dict[str, float]]:
    """Rows (x, -beta^-1 log[rho(x)/rho(a)], w(x))."""
    x = np.atleast_2d(np.asarray(xs, dtype=float))
    if x.shape[-1] != spectral.d:
        x = x.reshape(-1, spectral.d)
    a = vf.a_block[None, :]
    log_rho = log_density_at(x, params, spectral)
    log_rho_a = float(log_density_at(a, params, spectral)[0])
    empirical = -(log_rho - log_rho_a) / spectral.beta
    w = rate_function_w(x, vf)
    rows = []
    for xi, e, wi in zip(x, empirical, w):
        rows.append({
            "x": float(xi[0]) if xi.size == 1 else tuple(float(c) for c in xi),
            "empirical_rate": float(e),
            "w": float(wi),
            "relative_gap": float(abs(e - wi) / abs(wi)) if wi != 0 else math.nan,
        })
    return rows


def variation_tail_Cq(params: ModelParams, q: int, lower: Optional[float] = None,
                      beta: Optional[float] = None) -> float:
    """Bound on sum_{k>q} var_k(h) with var_k(h) <= 2 alpha1 sum_{j>k} (j l0)^-s."""
    if q < 0:
        raise ValueError("q must be >= 0")
    pot = params.potential
    if lower is None:
        lower = integration_cutoff(params, beta or params.beta or 1.0)
    pref = 2.0 * pot.alpha1 * lower ** -pot.s
    s = pot.s
    if params.finite:
        return float(sum(pref * zeta(s, k + 1) for k in range(q + 1, params.m)))
    return float(pref * (zeta(s - 1.0, q + 2) - (q + 1) * zeta(s, q + 2)))


def _simpson(a: float, b: float, h: float):
    n = max(2, int(math.ceil((b - a) / h)))
    n += n % 2
    x = np.linspace(a, b, n + 1)
    w = np.full(n + 1, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return x, w * (b - a) / (3.0 * n)


def nested_partition_function(params: ModelParams, beta: float, N: int, h_core: float = 0.004,
                              h_tail: float = 0.1) -> float:
    """
    log Q_N by eliminating spacings one at a time on composite Simpson grids.
    Limited to nearest and next-nearest interactions.
    """
    if params.range > 2:
        raise ValueError("nested integration handles m <= 2 only")
    if N < 2:
        raise ValueError("N must be >= 2")
    if params.p <= 0:
        raise GridError("Q_N diverges at zero pressure")
    lo = integration_cutoff(params, beta)
    mid = params.z_max + 4.0
    hi = params.z_max + 32.24 / (beta * params.p)
    x1, w1 = _simpson(lo, mid, h_core)
    if hi > mid:
        x2, w2 = _simpson(mid, hi, h_tail)
        w1 = w1.copy()
        w1[-1] += w2[0]
        x = np.concatenate([x1, x2[1:]])
        w = np.concatenate([w1, w2[1:]])
    else:
        x, w = x1, w1
    pot, p = params.potential, params.p
    # per-site energies measured from p z_max + v(z_max)
    c = p * params.z_max + float(evaluate(pot, params.z_max, 0))
    site = np.exp(-beta * (evaluate(pot, x, 0) + p * x - c))
    site_shift = -beta * c
    if params.range == 2:
        pair = np.exp(-beta * evaluate(pot, x[:, None] + x[None, :], 0))
    f = site.copy()
    log_scale = site_shift
    for _ in range(N - 2):
        if params.range == 2:
            f = site * ((f * w) @ pair)
        else:
            f = site * float(np.sum(f * w))
        norm = float(np.max(f))
        f /= norm
        log_scale += math.log(norm) + site_shift
    return math.log(float(np.sum(f * w))) + log_scale


@dataclass(frozen=True)
class BruteForceEstimate:
    rows: List[Dict[str, float]]
    g: float
    g_surf: float


def brute_force_extrapolation(params: ModelParams, beta: float, N_max: int = 6,
                              **grid_kwargs) -> BruteForceEstimate:
    """g from log Q_{N+1} - log Q_N and g_surf from -beta^-1 log Q_N - N g."""
    logs = {N: nested_partition_function(params, beta, N, **grid_kwargs) for N in range(2, N_max + 1)}
    rows = []
    g_est = math.nan
    for N in range(2, N_max + 1):
        row = {"N": N, "log_Q": logs[N]}
        if N > 2:
            g_est = -(logs[N] - logs[N - 1]) / beta
            row["g"] = g_est
            row["g_surf"] = -logs[N] / beta - N * g_est
        rows.append(row)
    return BruteForceEstimate(rows=rows, g=g_est, g_surf=-logs[N_max] / beta - N_max * g_est)


def equation_of_state(params: ModelParams, beta: float, p_values: Sequence[float],
                      order: Optional[int] = None, dp: float = 1e-5) -> List[Dict[str, float]]:
    """Rows (p, l(beta), dg/dp, a0) with dg/dp by central differences on a shared grid."""
    rows = []
    for p in sorted(p_values):
        if p - dp <= 0:
            raise ValueError("pressures must exceed the difference step")
        centre = params.with_pressure(p)
        bulk = bulk_spacing_a(centre)
        grid = build_quadrature(params.with_pressure(p - dp), bulk, beta, order=order)
        tm = assemble_T(centre, grid, beta)
        spec = solve_spectrum(tm, with_second=False)
        ell = mean_spacing(tm, spec)
        g_plus = solve_spectrum(assemble_T(params.with_pressure(p + dp), grid, beta), with_second=False).g_beta
        g_minus = solve_spectrum(assemble_T(params.with_pressure(p - dp), grid, beta), with_second=False).g_beta
        dg = (g_plus - g_minus) / (2.0 * dp)
        rows.append({"p": p, "ell": ell, "dg_dp": dg, "g": spec.g_beta, "a": bulk.a, "a0": bulk.a0,
                     "below_a0": bool(ell < bulk.a0)})
    return rows
