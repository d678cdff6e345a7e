"""
Surface layer: the half-infinite functional E_surf, its minimiser and e_surf,
and the Bellman value function u together with the two-block energies
built from it.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from src.blocks import block_energy, cross_energy, reverse
from src.errors import ConvergenceError, GridError
from src.ground_state import BulkConstants, ModelParams, minimize_box, window_energy
from src.logger import get_logger
from src.potentials import clause_iv_margin, evaluate

logger = get_logger()

STABILITY_TOL = 1e-10
DEFAULT_POINTS = {1: 257, 2: 65}
CHUNK_ENTRIES = 4_000_000
CACHE_ENTRIES = 12_000_000


@dataclass(frozen=True)
class SurfaceResult:
    profile: np.ndarray = field(repr=False)
    min_Esurf: float
    e_surf: float
    e_clamp: float
    beta_coeffs: np.ndarray = field(repr=False)
    tail_K: int
    iterations: int = 0
    grad_norm: float = 0.0

    def rows(self, a: float) -> List[Dict[str, float]]:
        return [{"j": j + 1, "z_j": float(z), "z_j_minus_a": float(z - a)}
                for j, z in enumerate(self.profile)]


def _padded(profile: np.ndarray, params: ModelParams, bulk: BulkConstants) -> np.ndarray:
    return np.concatenate([np.asarray(profile, dtype=float), np.full(params.range, bulk.a)])


def surface_energy(profile, params: ModelParams, bulk: BulkConstants) -> float:
    """sum_{j<=K} (h_j - e0) for a profile continued by the bulk spacing a."""
    profile = np.asarray(profile, dtype=float)
    if np.any(profile <= params.potential.r_hc):
        return math.inf
    K = profile.size
    if K == 0:
        return 0.0
    return window_energy(_padded(profile, params, bulk), params, K, K, 0) - K * bulk.e0


def beta_coefficients(params: ModelParams, bulk: BulkConstants, K: int) -> np.ndarray:
    """beta_j = sum_{k=j+1}^{R} (k - j) v'(k a) for j = 1..K."""
    R = params.range
    k = np.arange(1, R + 1, dtype=float)
    dv = evaluate(params.potential, k * bulk.a, 1)
    out = np.zeros(K)
    for j in range(1, min(K, R - 1) + 1):
        mask = k > j
        out[j - 1] = float(np.sum((k[mask] - j) * dv[mask]))
    return out


def surface_energy_extension(profile, params: ModelParams, bulk: BulkConstants) -> float:
    """
    E_surf as -sum beta_j (z_j - a) plus the Taylor remainders of every window,
    v(w) - v(k a) - v'(k a)(w - k a).
    """
    profile = np.asarray(profile, dtype=float)
    K = profile.size
    if K == 0:
        return 0.0
    y = _padded(profile, params, bulk)
    S = np.concatenate([[0.0], np.cumsum(y)])
    total = -float(beta_coefficients(params, bulk, K) @ (profile - bulk.a))
    pot = params.potential
    for k in range(1, params.range + 1):
        w = S[k:k + K] - S[:K]
        ka = k * bulk.a
        rem = evaluate(pot, w, 0) - evaluate(pot, ka, 0) - evaluate(pot, ka, 1) * (w - ka)
        total += float(np.sum(rem))
    return total


def e_clamp(params: ModelParams, bulk: BulkConstants) -> float:
    """-p a - sum_k k v(k a); e_surf = 2 min E_surf + e_clamp."""
    k = np.arange(1, params.range + 1, dtype=float)
    return float(-params.p * bulk.a - np.sum(k * evaluate(params.potential, k * bulk.a, 0)))


def minimize_Esurf(K: int, params: ModelParams, bulk: BulkConstants,
                   pinned: Optional[Mapping[int, float]] = None,
                   x0: Optional[np.ndarray] = None, max_iter: int = 200) -> SurfaceResult:
    """Minimiser of the K-truncated surface functional over [z_min, z_max]^K."""
    if K < params.range:
        raise ValueError(f"K must be >= m={params.range}, got {K}")
    if x0 is None:
        x0 = np.full(K, bulk.a)
    tail = np.full(params.range, bulk.a)

    def objective(x, order):
        y = np.concatenate([x, tail])
        if order == 0:
            if np.any(x <= params.potential.r_hc):
                return math.inf
            return window_energy(y, params, K, K, 0) - K * bulk.e0
        out = window_energy(y, params, K, K, order)
        return (out[0] - K * bulk.e0,) + tuple(out[1:])

    try:
        x, f, pg, its, _ = minimize_box(objective, x0, np.full(K, params.z_min), np.full(K, params.z_max),
                                        pinned, max_iter, "E_surf")
    except ConvergenceError as e:
        logger.error(f"Failed to minimise E_surf with K={K}: {str(e)}")
        raise
    clamp = e_clamp(params, bulk)
    return SurfaceResult(profile=x, min_Esurf=f, e_surf=2.0 * f + clamp, e_clamp=clamp,
                         beta_coeffs=beta_coefficients(params, bulk, K), tail_K=K,
                         iterations=its, grad_norm=pg)


def adaptive_surface(params: ModelParams, bulk: BulkConstants, K0: Optional[int] = None,
                     tol: float = STABILITY_TOL, K_max: int = 4096) -> SurfaceResult:
    """Double K until the minimum moves by less than tol."""
    K = max(K0 or 2 * params.range, params.range, 4)
    result = minimize_Esurf(K, params, bulk)
    while True:
        K2 = 2 * K
        if K2 > K_max:
            raise ConvergenceError(f"surface minimum not stable up to K={K_max}", last_iterate=result.profile)
        x0 = np.concatenate([result.profile, np.full(K2 - K, bulk.a)])
        nxt = minimize_Esurf(K2, params, bulk, x0=x0)
        change = abs(nxt.min_Esurf - result.min_Esurf)
        logger.debug(f"adaptive surface: K={K2} min={nxt.min_Esurf:.17g} change={change:.3e}")
        if change < tol:
            return nxt
        result, K = nxt, K2


def e_surf(params: ModelParams, bulk: BulkConstants, K: Optional[int] = None) -> float:
    """2 min E_surf - p a - sum_k k v(k a)."""
    result = minimize_Esurf(K, params, bulk) if K else adaptive_surface(params, bulk)
    return result.e_surf


def coercivity_constants(params: ModelParams, bulk: BulkConstants,
                         result: Optional[SurfaceResult] = None) -> Tuple[float, float]:
    """
    (c1, c2) with E_surf(z) >= c1 |z - a|^2 - c2 on the box.

    The curvature lower bound eta = v''(z_max) + sum n^2 v''(n z_min) comes from
    a Gershgorin row bound of the Hessian.
    """
    eta = clause_iv_margin(params.potential, params.z_min)
    if eta <= 0:
        raise GridError(f"curvature margin eta={eta:.6g} is not positive")
    result = result or adaptive_surface(params, bulk)
    offset = float(np.sum((result.profile - bulk.a) ** 2))
    c1 = eta / 4.0
    c2 = max(0.0, -result.min_Esurf) + 0.5 * eta * offset
    return c1, c2


@dataclass(frozen=True)
class ValueFunction:
    """u on the tensor grid over [z_min, z_max + eps]^d, normalised by u(a, ..., a) = 0."""
    params: ModelParams = field(repr=False)
    bulk: BulkConstants
    d: int
    eps: float
    nodes: np.ndarray = field(repr=False)
    u_values: np.ndarray = field(repr=False)
    w_values: np.ndarray = field(repr=False)
    residual: float
    iterations: int
    W_aa: float
    interpolator: RegularGridInterpolator = field(repr=False, compare=False)

    @property
    def hull(self) -> Tuple[float, float]:
        return float(self.nodes[0]), float(self.nodes[-1])

    @property
    def a_block(self) -> np.ndarray:
        return np.full(self.d, self.bulk.a)

    def clamp(self, x: np.ndarray) -> np.ndarray:
        lo, hi = self.hull
        return np.clip(x, lo, hi)

    def u(self, x, clamp: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if clamp:
            x = self.clamp(x)
        try:
            return self.interpolator(x)
        except ValueError as e:
            raise GridError(f"point outside the value-function hull {self.hull}: {str(e)}") from e


def _grid_nodes(params: ModelParams, bulk: BulkConstants, n_points: int, eps: float) -> np.ndarray:
    lo, hi = params.z_min, params.z_max + eps
    h = (hi - lo) / (n_points - 1)
    k_lo = math.ceil((lo - bulk.a) / h - 1e-9)
    k_hi = math.floor((hi - bulk.a) / h + 1e-9)
    return bulk.a + h * np.arange(k_lo, k_hi + 1)


def _tensor_points(nodes: np.ndarray, d: int) -> np.ndarray:
    mesh = np.meshgrid(*([nodes] * d), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def value_iteration_u(params: ModelParams, bulk: BulkConstants, n_points: Optional[int] = None,
                      eps: Optional[float] = None, tol: float = 1e-10,
                      max_iter: int = 500) -> ValueFunction:
    """
    Relative value iteration for u(x) = min_y [V(x) + W(x; y) - d e0 + u(y)]
    over grid nodes, normalised so that u vanishes at the bulk block.
    """
    d = params.block_dim
    R = params.range
    n_points = n_points or DEFAULT_POINTS.get(d, 17)
    eps = 0.1 * (params.z_max - params.z_min) if eps is None else eps
    if eps <= 0:
        raise ValueError("eps must be positive")
    nodes = _grid_nodes(params, bulk, n_points, eps)
    n = nodes.size
    X = _tensor_points(nodes, d)
    n_states = X.shape[0]
    a_index = int(np.argmin(np.sum((X - bulk.a) ** 2, axis=1)))
    pot, p = params.potential, params.p
    V = block_energy(X, pot, p, R)
    shift = d * bulk.e0
    rows_per_chunk = max(1, CHUNK_ENTRIES // n_states)
    chunks = [slice(i, min(i + rows_per_chunk, n_states)) for i in range(0, n_states, rows_per_chunk)]
    cache = n_states * n_states <= CACHE_ENTRIES
    stored = {}

    def cost(chunk: slice) -> np.ndarray:
        if chunk.start in stored:
            return stored[chunk.start]
        c = V[chunk, None] + cross_energy(X[chunk, None, :], X[None, :, :], pot, R) - shift
        if cache:
            stored[chunk.start] = c
        return c

    u = np.zeros(n_states)
    residual = math.inf
    with logger.stage("value_iteration"):
        for it in range(1, max_iter + 1):
            new = np.empty(n_states)
            for chunk in chunks:
                new[chunk] = np.min(cost(chunk) + u[None, :], axis=1)
            new -= new[a_index]
            residual = float(np.max(np.abs(new - u)))
            u = new
            logger.debug(f"value iteration: iter={it} residual={residual:.3e}")
            if residual < tol:
                break
        else:
            raise ConvergenceError(f"value iteration residual {residual:.3e} after {max_iter} sweeps",
                                   last_iterate=u, iterations=max_iter)

        arg = np.empty(n_states, dtype=int)
        for chunk in chunks:
            arg[chunk] = np.argmin(cost(chunk) + u[None, :], axis=1)
        idx = np.stack(np.unravel_index(arg, (n,) * d), axis=-1)
        on_edge = np.any((idx == 0) | (idx == n - 1), axis=1)
        if np.any(on_edge):
            raise GridError(f"Bellman minimiser on the grid boundary for {int(on_edge.sum())} nodes; enlarge eps")

    u_grid = u.reshape((n,) * d)
    u_rev = np.transpose(u_grid, axes=tuple(reversed(range(d))))
    W_aa = float(cross_energy(np.full(d, bulk.a), np.full(d, bulk.a), pot, R))
    w_grid = u_grid + u_rev - V.reshape((n,) * d) + shift - W_aa
    interp = RegularGridInterpolator(tuple([nodes] * d), u_grid, method="linear", bounds_error=True)
    logger.info(f"value iteration converged: d={d} nodes={n} iterations={it} residual={residual:.3e}")
    return ValueFunction(params=params, bulk=bulk, d=d, eps=eps, nodes=nodes, u_values=u_grid,
                         w_values=w_grid, residual=residual, iterations=it, W_aa=W_aa, interpolator=interp)


def _pair(x, y, vf: ValueFunction) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != vf.d or y.shape[-1] != vf.d:
        raise ValueError(f"blocks must have {vf.d} coordinates")
    return x, y


def asymmetry_g(x, vf: ValueFunction, clamp: bool = False) -> np.ndarray:
    """g(x) = (u(x) - u(sigma x)) / 2."""
    x = np.asarray(x, dtype=float)
    if vf.d == 1:
        return np.zeros(x.shape[:-1])
    return 0.5 * (vf.u(x, clamp) - vf.u(reverse(x), clamp))


def h_hat(x, y, vf: ValueFunction, clamp: bool = False) -> np.ndarray:
    """-g(x) + V(x)/2 + W(x, y) + V(y)/2 - d e0 + g(y)."""
    x, y = _pair(x, y, vf)
    if not clamp:
        lo, hi = vf.hull
        if np.any(x < lo) or np.any(x > hi) or np.any(y < lo) or np.any(y > hi):
            raise GridError(f"block outside the value-function hull {vf.hull}")
    params = vf.params
    R, pot, p = params.range, params.potential, params.p
    sym = (0.5 * block_energy(x, pot, p, R) + cross_energy(x, y, pot, R)
           + 0.5 * block_energy(y, pot, p, R) - vf.d * vf.bulk.e0)
    return sym - asymmetry_g(x, vf, clamp) + asymmetry_g(y, vf, clamp)


def h_full(x, y, vf: ValueFunction) -> np.ndarray:
    """H(x, y) = u(sigma x) + W(x, y) + u(y) - W(a, a)."""
    x, y = _pair(x, y, vf)
    params = vf.params
    return vf.u(reverse(x)) + cross_energy(x, y, params.potential, params.range) + vf.u(y) - vf.W_aa


def rate_function_w(x, vf: ValueFunction) -> np.ndarray:
    """w(x) = u(x) + u(sigma x) - V(x) + d e0 - W(a, a); vanishes at the bulk block."""
    x = np.asarray(x, dtype=float)
    params = vf.params
    V = block_energy(x, params.potential, params.p, params.range)
    return vf.u(x) + vf.u(reverse(x)) - V + vf.d * vf.bulk.e0 - vf.W_aa


@dataclass(frozen=True)
class HatScan:
    min_value: float
    argmin: Tuple[np.ndarray, np.ndarray]
    near_zero: List[Tuple[np.ndarray, np.ndarray, float]]


def h_hat_grid_scan(vf: ValueFunction, tol: float = 1e-6, stride: int = 1) -> HatScan:
    """
    Evaluate H-hat over node pairs. Reports the global minimum and every pair
    away from (a, a) whose value is below tol.
    """
    nodes = vf.nodes[::stride]
    X = _tensor_points(nodes, vf.d)
    n_states = X.shape[0]
    spacing = float(nodes[1] - nodes[0]) if nodes.size > 1 else 0.0
    rows_per_chunk = max(1, CHUNK_ENTRIES // n_states)
    best, best_pair = math.inf, (vf.a_block, vf.a_block)
    near: List[Tuple[np.ndarray, np.ndarray, float]] = []
    a = vf.bulk.a
    for start in range(0, n_states, rows_per_chunk):
        xs = X[start:start + rows_per_chunk]
        vals = h_hat(xs[:, None, :], X[None, :, :], vf)
        i, j = np.unravel_index(int(np.argmin(vals)), vals.shape)
        if vals[i, j] < best:
            best, best_pair = float(vals[i, j]), (xs[i], X[j])
        far = (np.max(np.abs(xs - a), axis=1)[:, None] > 2 * spacing) | \
              (np.max(np.abs(X - a), axis=1)[None, :] > 2 * spacing)
        for i, j in zip(*np.nonzero((vals < tol) & far)):
            near.append((xs[i], X[j], float(vals[i, j])))
    if near:
        logger.warning(f"H-hat has {len(near)} near-zero values away from the bulk pair")
    return HatScan(min_value=best, argmin=best_pair, near_zero=near)
