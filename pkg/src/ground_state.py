"""
Zero-temperature layer: the chain energy E_N, its banded derivatives,
box-constrained projected Newton minimisation and the bulk constants.
"""

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize, special

from src.blocks import block_dim
from src.errors import AssumptionError, ConvergenceError
from src.logger import get_logger
from src.potentials import AssumptionReport, PotentialSpec, evaluate, validate

logger = get_logger()

GRAD_TOL = 1e-10
STEP_TOL = 1e-12
ARMIJO = 1e-4


@dataclass(frozen=True)
class ModelParams:
    """Interaction range m (None for infinite), pressure p and the spacing window."""
    potential: PotentialSpec
    p: float
    m: Optional[int]
    z_min: float
    z_max: float
    m_cut: int = 50
    beta: Optional[float] = None

    def __post_init__(self) -> None:
        if not (self.p >= 0 and math.isfinite(self.p)):
            raise ValueError(f"pressure must be finite and >= 0, got {self.p}")
        if self.m is not None:
            if self.m < 1:
                raise ValueError(f"m must be >= 1, got {self.m}")
            object.__setattr__(self, "m_cut", int(self.m))
        if self.m_cut < 1:
            raise ValueError(f"m_cut must be >= 1, got {self.m_cut}")
        if self.beta is not None and not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.z_min < self.z_max:
            raise ValueError("z_min must be below z_max")

    @property
    def range(self) -> int:
        return self.m if self.m is not None else self.m_cut

    @property
    def block_dim(self) -> int:
        return block_dim(self.m)

    @property
    def finite(self) -> bool:
        return self.m is not None

    def with_beta(self, beta: float) -> "ModelParams":
        return replace(self, beta=beta)

    def with_pressure(self, p: float) -> "ModelParams":
        return replace(self, p=p)


@lru_cache(maxsize=64)
def _cached_report(potential: PotentialSpec, p: float) -> AssumptionReport:
    return validate(potential, p)


def build_model(potential: PotentialSpec, p: float, m: Optional[int], m_cut: int = 50,
                beta: Optional[float] = None, strict: bool = True) -> ModelParams:
    """Validate the potential at pressure p and attach the derived window."""
    report = _cached_report(potential, p)
    if not report.passed:
        message = f"assumptions fail at p={p}: {report.describe_failures()}"
        if strict or math.isnan(report.z_min):
            raise AssumptionError(message)
        logger.warning(message)
    return ModelParams(potential=potential, p=p, m=m, z_min=report.z_min, z_max=report.z_max,
                       m_cut=m_cut, beta=beta)


@dataclass(frozen=True)
class GroundStateResult:
    spacings: np.ndarray = field(repr=False)
    energy: float
    grad_norm: float
    iterations: int
    n_active: int = 0
    tail_bound: float = 0.0

    @property
    def N(self) -> int:
        return self.spacings.size + 1


@dataclass(frozen=True)
class BulkConstants:
    a: float
    e0: float
    a0: float
    tail_bound: float = 0.0


def window_energy(y: np.ndarray, params: ModelParams, n_starts: int, n_vars: int,
                  order: int = 0):
    """
    Sum over window starts i < n_starts of p*y_i + sum_{k<=R} v(y_i + ... + y_{i+k-1}).

    order 0 returns the value; order 1 adds the gradient in the first n_vars
    coordinates; order 2 adds the upper banded Hessian of those coordinates.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    R = min(params.range, n)
    u = R - 1
    S = np.concatenate([[0.0], np.cumsum(y)])
    value = params.p * float(np.sum(y[:n_starts]))
    grad = np.zeros(n) if order >= 1 else None
    if grad is not None:
        grad[:n_starts] += params.p
    ab = np.zeros((u + 1, n)) if order >= 2 else None
    for k in range(1, R + 1):
        n_k = min(n_starts, n - k + 1)
        if n_k <= 0:
            break
        sums = S[k:k + n_k] - S[:n_k]
        value += float(np.sum(evaluate(params.potential, sums, 0)))
        if order >= 1:
            d1 = evaluate(params.potential, sums, 1)
            grad[:n_k + k - 1] += np.convolve(d1, np.ones(k))
        if order >= 2:
            d2 = evaluate(params.potential, sums, 2)
            for o in range(k):
                band = np.convolve(d2, np.ones(k - o))
                ab[u - o, o:o + band.size] += band
    if order == 0:
        return value
    if order == 1:
        return value, grad[:n_vars]
    return value, grad[:n_vars], ab[:, :n_vars]


def energy(z: Sequence[float], params: ModelParams) -> float:
    """E_N of the spacing vector z; +inf when a spacing sits in the hard core."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= params.potential.r_hc):
        return math.inf
    return window_energy(z, params, z.size, z.size, 0)


def gradient(z: Sequence[float], params: ModelParams) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return window_energy(z, params, z.size, z.size, 1)[1]


def hessian(z: Sequence[float], params: ModelParams) -> np.ndarray:
    """Hessian in upper banded storage (scipy.linalg.solveh_banded layout), bandwidth min(m, N-1)."""
    z = np.asarray(z, dtype=float)
    return window_energy(z, params, z.size, z.size, 2)[2]


def banded_to_dense(ab: np.ndarray) -> np.ndarray:
    u, n = ab.shape[0] - 1, ab.shape[1]
    H = np.zeros((n, n))
    for o in range(u + 1):
        diag = ab[u - o, o:]
        H[np.arange(n - o), np.arange(o, n)] = diag
        H[np.arange(o, n), np.arange(n - o)] = diag
    return H


def _neutralise(ab: np.ndarray, fixed: np.ndarray) -> np.ndarray:
    ab = ab.copy()
    u, n = ab.shape[0] - 1, ab.shape[1]
    idx = np.nonzero(fixed)[0]
    ab[u, idx] = 1.0
    for o in range(1, u + 1):
        cols = np.arange(o, n)
        hit = fixed[cols] | fixed[cols - o]
        ab[u - o, cols[hit]] = 0.0
    return ab


def minimize_box(objective, x0: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                 pinned: Optional[Mapping[int, float]] = None, max_iter: int = 200,
                 label: str = "E_N") -> Tuple[np.ndarray, float, float, int, int]:
    """
    Projected Newton with Armijo backtracking inside a box.

    objective(x, order) follows window_energy's return convention. Pinned
    coordinates are held at their values. Returns (x, f, projected grad norm,
    iterations, active count).
    """
    x = np.clip(np.asarray(x0, dtype=float).copy(), lower, upper)
    pin = np.zeros(x.size, dtype=bool)
    for i, value in (pinned or {}).items():
        if not 0 <= i < x.size:
            raise ValueError(f"pinned index {i} outside 0..{x.size - 1}")
        x[i] = value
        pin[i] = True
    lo = np.where(pin, x, lower)
    hi = np.where(pin, x, upper)

    pg_norm = math.inf
    for it in range(1, max_iter + 1):
        f, g, ab = objective(x, 2)
        pg = x - np.clip(x - g, lo, hi)
        pg[pin] = 0.0
        pg_norm = float(np.max(np.abs(pg), initial=0.0))
        active = ((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0))
        fixed = active | pin
        rhs = np.where(fixed, 0.0, -g)
        try:
            step = linalg.solveh_banded(_neutralise(ab, fixed), rhs)
        except linalg.LinAlgError:
            logger.debug(f"{label}: Hessian not positive definite at iteration {it}, gradient step")
            step = rhs

        t = 1.0
        for _ in range(60):
            trial = np.clip(x + t * step, lo, hi)
            predicted = float(g @ (trial - x))
            if abs(predicted) < 1e-13 * (1.0 + abs(f)):
                break
            if objective(trial, 0) <= f + ARMIJO * predicted:
                break
            t *= 0.5
        else:
            raise ConvergenceError(f"{label}: line search failed", last_iterate=x, iterations=it)

        moved = float(np.max(np.abs(trial - x), initial=0.0))
        x = trial
        logger.debug(f"{label}: iter={it} f={f:.17g} pg={pg_norm:.3e} step={moved:.3e}")
        if pg_norm < GRAD_TOL and moved < STEP_TOL:
            f = objective(x, 0)
            return x, f, pg_norm, it, int(np.count_nonzero(active & ~pin))

    raise ConvergenceError(f"{label}: no convergence after {max_iter} iterations (pg={pg_norm:.3e})",
                           last_iterate=x, iterations=max_iter)


def truncation_tail(params: ModelParams, n_sites: int, spacing: Optional[float] = None) -> float:
    """Bound on the energy dropped by cutting an infinite range at m_cut."""
    if params.finite:
        return 0.0
    r = params.z_min if spacing is None else spacing
    pot = params.potential
    return float(pot.alpha1 * n_sites * r ** -pot.s * special.zeta(pot.s, params.m_cut + 1))


def minimize_EN(N: int, params: ModelParams, pinned: Optional[Mapping[int, float]] = None,
                x0: Optional[np.ndarray] = None, max_iter: int = 200,
                bulk: Optional[BulkConstants] = None) -> GroundStateResult:
    """Unique minimiser of E_N over [z_min, z_max]^(N-1), optionally with pinned spacings."""
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    n = N - 1
    if x0 is None:
        guess = (bulk or bulk_spacing_a(params)).a
        x0 = np.full(n, guess)
    lower = np.full(n, params.z_min)
    upper = np.full(n, params.z_max)

    def objective(x, order):
        if order == 0:
            return energy(x, params)
        return window_energy(x, params, n, n, order)

    try:
        x, f, pg, its, n_active = minimize_box(objective, x0, lower, upper, pinned, max_iter, "E_N")
    except ConvergenceError as e:
        logger.error(f"Failed to minimise E_N for N={N}: {str(e)}")
        raise
    logger.debug(f"E_N minimised: N={N} E={f:.17g} iterations={its}")
    return GroundStateResult(spacings=x, energy=f, grad_norm=pg, iterations=its, n_active=n_active,
                             tail_bound=truncation_tail(params, N))


def _bulk_density(r: float, p: float, params: ModelParams, order: int) -> float:
    k = np.arange(1, params.range + 1, dtype=float)
    if order == 0:
        return float(p * r + np.sum(evaluate(params.potential, k * r, 0)))
    if order == 1:
        return float(p + np.sum(k * evaluate(params.potential, k * r, 1)))
    return float(np.sum(k * k * evaluate(params.potential, k * r, 2)))


def _argmin_density(p: float, params: ModelParams) -> float:
    lo = max(params.potential.r_hc * (1 + 1e-9), 0.99 * params.z_min)
    hi = 1.01 * params.z_max
    res = optimize.minimize_scalar(lambda r: _bulk_density(r, p, params, 0), bounds=(lo, hi),
                                   method="bounded", options={"xatol": 1e-10})
    r = float(res.x)
    for _ in range(50):
        step = _bulk_density(r, p, params, 1) / _bulk_density(r, p, params, 2)
        r -= step
        if abs(step) < 1e-15 * max(1.0, r):
            break
    return r


def bulk_spacing_a(params: ModelParams) -> BulkConstants:
    """a = argmin p r + sum_{k<=R} v(k r), e0 its minimum, a0 the zero-pressure minimiser."""
    a = _argmin_density(params.p, params)
    e0 = _bulk_density(a, params.p, params, 0)
    a0 = a if params.p == 0 else _argmin_density(0.0, params)
    tail = truncation_tail(params, 1, a)
    if not params.z_min < a <= params.z_max * (1 + 1e-12):
        logger.warning(f"bulk spacing a={a:.12g} outside ({params.z_min:.12g}, {params.z_max:.12g}]")
    if abs(a - params.z_max) < 1e-12:
        logger.info("bulk spacing coincides with z_max within tolerance")
    return BulkConstants(a=a, e0=e0, a0=a0, tail_bound=tail)


def convergence_study_e0(params: ModelParams, N_list: Sequence[int],
                         bulk: Optional[BulkConstants] = None) -> List[Dict[str, float]]:
    """Rows (N, E_N/N, E_N - N e0) and the lower bound E_N >= (N-1) e0."""
    if list(N_list) != sorted(N_list):
        raise ValueError("N_list must be ascending")
    bulk = bulk or bulk_spacing_a(params)
    rows = []
    with logger.stage("convergence_study_e0"):
        for N in N_list:
            res = minimize_EN(N, params, bulk=bulk)
            rows.append({
                "N": int(N),
                "energy": res.energy,
                "energy_per_particle": res.energy / N,
                "excess": res.energy - N * bulk.e0,
                "lower_bound_ok": bool(res.energy >= (N - 1) * bulk.e0 - 1e-9 * max(1.0, abs(res.energy))),
                "iterations": res.iterations,
            })
    return rows
