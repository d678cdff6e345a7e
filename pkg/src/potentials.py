"""
Pair potentials for chainlab.
Evaluates v, v' and v'', validates the structural assumptions on v and the
pressure, and derives the landmarks z_max, z_min and p*.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
from scipy import optimize, special
from scipy.interpolate import CubicSpline

from src.errors import AssumptionError
from src.logger import get_logger

logger = get_logger()

ArrayLike = Union[float, np.ndarray]

SERIES_TOL = 1e-14
ZMIN_RTOL = 1e-12
# smallest relative tolerance scipy root finders accept
BRENT_RTOL = 4 * np.finfo(float).eps
ZMIN_SHRINK_STEPS = 10_000
MONOTONE_GRID = 10_000


class PotentialKind(str, Enum):
    LENNARD_JONES = "lennard_jones"
    TABULATED = "tabulated"


@dataclass(frozen=True)
class PotentialSpec:
    """
    Immutable description of a pair potential.

    alpha1 and alpha2 default to the tightest constants found by scanning
    sup(-v(r) r^s) and sup(-v''(r) r^(s+2)) on a log grid.
    """
    kind: PotentialKind = PotentialKind.LENNARD_JONES
    r_hc: float = 0.0
    alpha1: Optional[float] = None
    alpha2: Optional[float] = None
    s: float = 6.0
    scale: float = 1.0
    table_r: Optional[Tuple[float, ...]] = field(default=None, repr=False)
    table_v: Optional[Tuple[float, ...]] = field(default=None, repr=False)
    source: Optional[str] = None

    def __post_init__(self) -> None:
        kind = PotentialKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if not self.s > 2:
            raise ValueError(f"decay exponent s must exceed 2, got {self.s}")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.r_hc < 0:
            raise ValueError(f"r_hc must be >= 0, got {self.r_hc}")
        if kind is PotentialKind.TABULATED:
            if self.table_r is None or self.table_v is None:
                raise ValueError("tabulated potential needs table_r and table_v")
            r = np.asarray(self.table_r, dtype=float)
            if r.size < 4 or np.any(np.diff(r) <= 0):
                raise ValueError("tabulated abscissae must be strictly increasing (>= 4 rows)")
            # the hard core sits at the first abscissa
            object.__setattr__(self, "r_hc", float(max(self.r_hc, r[0])))
        if self.alpha1 is None or self.alpha2 is None:
            a1, a2 = scan_growth_constants(self)
            if self.alpha1 is None:
                object.__setattr__(self, "alpha1", a1)
            if self.alpha2 is None:
                object.__setattr__(self, "alpha2", a2)

    @cached_property
    def spline(self) -> Optional[CubicSpline]:
        if self.kind is not PotentialKind.TABULATED:
            return None
        r = np.asarray(self.table_r, dtype=float)
        v = self.scale * np.asarray(self.table_v, dtype=float)
        return CubicSpline(r, v)

    @property
    def r_table_max(self) -> float:
        if self.kind is PotentialKind.TABULATED:
            return float(self.table_r[-1])
        return math.inf

    @cached_property
    def z_max(self) -> float:
        return locate_zmax(self)

    def v(self, r: ArrayLike) -> ArrayLike:
        return evaluate(self, r, 0)

    def dv(self, r: ArrayLike) -> ArrayLike:
        return evaluate(self, r, 1)

    def d2v(self, r: ArrayLike) -> ArrayLike:
        return evaluate(self, r, 2)

    def scaled(self, factor: float) -> "PotentialSpec":
        """Copy of this potential multiplied by factor; growth constants rescale."""
        return PotentialSpec(
            kind=self.kind,
            r_hc=self.r_hc,
            alpha1=None if self.alpha1 is None else self.alpha1 * factor,
            alpha2=None if self.alpha2 is None else self.alpha2 * factor,
            s=self.s,
            scale=self.scale * factor,
            table_r=self.table_r,
            table_v=self.table_v,
            source=self.source,
        )


def lennard_jones(scale: float = 1.0) -> PotentialSpec:
    """v(r) = scale * (r^-12 - r^-6) with r_hc = 0 and s = 6."""
    return PotentialSpec(kind=PotentialKind.LENNARD_JONES, r_hc=0.0, s=6.0, scale=scale)


def load_tabulated(path: str, s: float = 6.0, scale: float = 1.0) -> PotentialSpec:
    """Load a two-column (r, v(r)) text file into a C2 cubic-spline potential."""
    try:
        data = np.loadtxt(path, dtype=float, comments="#", ndmin=2)
    except Exception as e:
        logger.error(f"Failed to read potential table {path}: {str(e)}")
        raise
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns, found {data.shape[1]}")
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: table contains non-finite values")
    logger.info(f"Loaded tabulated potential with {data.shape[0]} rows from {path}")
    return PotentialSpec(
        kind=PotentialKind.TABULATED,
        s=s,
        scale=scale,
        table_r=tuple(data[:, 0].tolist()),
        table_v=tuple(data[:, 1].tolist()),
        source=str(path),
    )


def _lj(r: np.ndarray, order: int, scale: float) -> np.ndarray:
    inv6 = r ** -6
    if order == 0:
        return scale * (inv6 * inv6 - inv6)
    if order == 1:
        return scale * (-12.0 * inv6 * inv6 + 6.0 * inv6) / r
    return scale * (156.0 * inv6 * inv6 - 42.0 * inv6) / (r * r)


def evaluate(spec: PotentialSpec, r: ArrayLike, order: int = 0) -> ArrayLike:
    """
    v, v' or v'' at r.

    Returns +inf (order 0) or nan (orders 1, 2) at or below the hard core.
    Tabulated potentials vanish identically beyond their last abscissa.
    """
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    arr = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("r must be finite")
    out = np.empty(arr.shape, dtype=float)
    inside = arr > spec.r_hc
    out[~inside] = math.inf if order == 0 else math.nan
    if np.any(inside):
        ri = arr[inside]
        if spec.kind is PotentialKind.LENNARD_JONES:
            out[inside] = _lj(ri, order, spec.scale)
        else:
            vals = np.zeros_like(ri)
            within = ri < spec.r_table_max
            if np.any(within):
                vals[within] = spec.spline(ri[within], order)
            out[inside] = vals
    if out.ndim == 0:
        return float(out)
    return out


def scan_growth_constants(spec: PotentialSpec) -> Tuple[float, float]:
    """Tightest (alpha1, alpha2) on a log grid reaching far into the tail."""
    lo = spec.r_hc * (1.0 + 1e-9) if spec.r_hc > 0 else 0.5
    hi = min(spec.r_table_max, 1e4)
    r = np.geomspace(lo, hi, 20_001)[1:]
    v = evaluate(spec, r, 0)
    v2 = evaluate(spec, r, 2)
    alpha1 = float(np.max(-v * r ** spec.s))
    alpha2 = float(np.max(-v2 * r ** (spec.s + 2.0)))
    return max(alpha1, 0.0), max(alpha2, 0.0)


def series_sum(term: Callable[[np.ndarray], np.ndarray], start: int, bound_prefactor: float,
               s: float, tol: float = SERIES_TOL, chunk: int = 4096) -> Tuple[float, float]:
    """
    Sum term(n) for n >= start with a certified tail.

    |term(n)| <= bound_prefactor * n^-s, so the tail past n = M is bounded by
    bound_prefactor * M^(1-s) / (s-1). Summation stops once that bound is below
    tol * max(1, |partial sum|).
    """
    total = 0.0
    n0 = start
    while True:
        n = np.arange(n0, n0 + chunk, dtype=float)
        total += float(np.sum(term(n)))
        last = n0 + chunk - 1
        tail = bound_prefactor * last ** (1.0 - s) / (s - 1.0)
        if tail < tol * max(1.0, abs(total)):
            return total, tail
        n0 += chunk
        if n0 > 10 ** 8:
            raise AssumptionError("series failed to reach its tail tolerance")


def locate_zmax(spec: PotentialSpec, r_search: Optional[float] = None) -> float:
    """Minimiser of v: root of v' bracketed on a log grid, polished by Brent's method."""
    lo = spec.r_hc * (1.0 + 1e-9) if spec.r_hc > 0 else 0.5
    hi = r_search or min(spec.r_table_max, 50.0)
    r = np.geomspace(lo, hi, 4001)
    dv = evaluate(spec, r, 1)
    sign_change = np.nonzero((dv[:-1] < 0) & (dv[1:] >= 0))[0]
    if sign_change.size == 0:
        raise AssumptionError(f"no bracket for the minimiser of v on ({lo:.4g}, {hi:.4g})")
    i = int(sign_change[0])
    z = optimize.brentq(lambda x: evaluate(spec, x, 1), r[i], r[i + 1], xtol=1e-15, rtol=BRENT_RTOL)
    if not evaluate(spec, z, 2) > 0:
        raise AssumptionError(f"stationary point {z:.12g} of v is not a strict minimum")
    return float(z)


def p_star(spec: PotentialSpec) -> float:
    zmax = spec.z_max
    return abs(evaluate(spec, zmax, 0)) / zmax


def _clause_ii_margin(spec: PotentialSpec, z: ArrayLike) -> ArrayLike:
    # v(z) + v(z_max) - 2 alpha1 sum_{n>=2} (n z)^-s, the sum via Hurwitz zeta
    z = np.asarray(z, dtype=float)
    tail = special.zeta(spec.s, 2.0)
    return evaluate(spec, z, 0) + evaluate(spec, spec.z_max, 0) - 2.0 * spec.alpha1 * tail * z ** -spec.s


def clause_iv_margin(spec: PotentialSpec, z: float) -> float:
    """v''(z_max) + sum_{n>=2} n^2 v''(n z)."""
    prefactor = spec.alpha2 * z ** (-spec.s - 2.0)
    total, _ = series_sum(lambda n: n * n * evaluate(spec, n * z, 2), 2, prefactor, spec.s,
                          tol=ZMIN_RTOL)
    return float(evaluate(spec, spec.z_max, 2) + total)


def find_zmin(spec: PotentialSpec) -> float:
    """
    Largest z < z_max for which the clause (ii) inequality holds on all of
    (r_hc, z] and the clause (iv) series inequality holds at z.
    """
    zmax = spec.z_max
    lo = spec.r_hc * (1.0 + 1e-9) if spec.r_hc > 0 else 0.25 * zmax
    grid = np.linspace(lo, zmax, 8001)
    f2 = _clause_ii_margin(spec, grid)
    bad = np.nonzero(~(f2 > 0))[0]
    if bad.size == 0:
        raise AssumptionError("clause (ii) margin stays positive up to z_max")
    k = int(bad[0])
    if k == 0:
        raise AssumptionError("clause (ii) fails immediately above the hard core")
    z2 = optimize.bisect(lambda x: float(_clause_ii_margin(spec, x)), grid[k - 1], grid[k],
                         xtol=1e-15, rtol=ZMIN_RTOL)
    # step inside the open set where the strict inequality holds
    z2 = float(z2) * (1.0 - 4 * ZMIN_RTOL)
    candidate = z2
    if clause_iv_margin(spec, candidate) <= 0:
        down = np.linspace(lo, z2, 2001)[::-1]
        margins = np.array([clause_iv_margin(spec, x) for x in down])
        ok = np.nonzero(margins > 0)[0]
        if ok.size == 0:
            raise AssumptionError("no z_min satisfies the clause (iv) series inequality")
        j = int(ok[0])
        candidate = float(optimize.bisect(lambda x: clause_iv_margin(spec, x), down[j], down[j - 1],
                                          xtol=1e-15, rtol=ZMIN_RTOL))
        candidate *= (1.0 - 4 * ZMIN_RTOL)
        for _ in range(ZMIN_SHRINK_STEPS):
            if clause_iv_margin(spec, candidate) > 0:
                break
            candidate *= (1.0 - 1e-10)
        else:
            raise AssumptionError(f"clause (iv) margin stays non-positive below z={candidate:.12g}")
    if not zmax < 2.0 * candidate:
        raise AssumptionError(f"z_min={candidate:.10g} violates z_max < 2 z_min")
    if not candidate > spec.r_hc:
        raise AssumptionError(f"z_min={candidate:.10g} is inside the hard core")
    return candidate


ASSUMPTION_LABELS = {
    "minimum_exists": "pair potential has a minimum z_max",
    "unique_minimum": "pair potential has a single well",
    "growth_v": "power-law decay of v",
    "growth_v2": "power-law decay of v''",
    "z_min_feasible": "admissible lower spacing z_min",
    "removal_series": "removal inequality below z_min",
    "curvature_shape": "shape of v'' on the window",
    "curvature_series": "curvature series positive at z_min",
    "window_geometry": "window r_hc < z_min < z_max < 2 z_min",
    "pressure_below_p_star": "pressure 0 <= p < p*",
}


@dataclass(frozen=True)
class CheckResult:
    passed: bool
    margin: float
    detail: str = ""


@dataclass(frozen=True)
class AssumptionReport:
    z_min: float
    z_max: float
    p_star: float
    p: float
    alpha1: float
    alpha2: float
    s: float
    checks: Dict[str, CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    @property
    def failures(self) -> Tuple[str, ...]:
        return tuple(name for name, c in self.checks.items() if not c.passed)

    def describe_failures(self) -> str:
        """One clause per failed check, naming the assumption and its detail."""
        parts = []
        for name in self.failures:
            c = self.checks[name]
            parts.append(f"{ASSUMPTION_LABELS.get(name, name)} violated [{name}: {c.detail}, margin={c.margin:.6g}]")
        return "; ".join(parts)

    def rows(self) -> list:
        return [
            {"check": name, "passed": c.passed, "margin": c.margin, "detail": c.detail}
            for name, c in self.checks.items()
        ]


def validate(spec: PotentialSpec, p: float) -> AssumptionReport:
    """Evaluate every structural assumption; failures are carried in the report."""
    checks: Dict[str, CheckResult] = {}

    try:
        zmax = spec.z_max
    except AssumptionError as e:
        checks["minimum_exists"] = CheckResult(False, math.nan, str(e))
        return AssumptionReport(math.nan, math.nan, math.nan, p, spec.alpha1, spec.alpha2, spec.s, checks)

    vmax = evaluate(spec, zmax, 0)
    pstar = abs(vmax) / zmax
    lo = spec.r_hc * (1.0 + 1e-6) if spec.r_hc > 0 else 0.5 * zmax
    hi = min(spec.r_table_max, 20.0 * zmax)
    r = np.geomspace(lo, hi, MONOTONE_GRID)
    v = evaluate(spec, r, 0)
    v2 = evaluate(spec, r, 2)

    left, right = r < zmax, r > zmax
    dec = np.diff(v[left])
    inc = np.diff(v[right])
    violation = max(float(np.max(dec, initial=-math.inf)), float(np.max(-inc, initial=-math.inf)),
                    float(np.max(v[right], initial=-math.inf)), 0.0)
    monotone = violation == 0.0 and vmax < 0
    checks["unique_minimum"] = CheckResult(
        monotone, -vmax if monotone else -violation,
        "v decreasing below z_max, increasing and non-positive above")

    growth1 = float(np.min(v + spec.alpha1 * r ** -spec.s))
    checks["growth_v"] = CheckResult(growth1 >= -1e-12 * spec.alpha1, growth1, "v >= -alpha1 r^-s")
    growth2 = float(np.min(v2 + spec.alpha2 * r ** (-spec.s - 2.0)))
    checks["growth_v2"] = CheckResult(growth2 >= -1e-12 * spec.alpha2, growth2, "v'' >= -alpha2 r^-(s+2)")

    try:
        zmin = find_zmin(spec)
    except AssumptionError as e:
        checks["z_min_feasible"] = CheckResult(False, math.nan, str(e))
        checks["pressure_below_p_star"] = CheckResult(0 <= p < pstar, pstar - p, f"p={p:.6g} p*={pstar:.12g}")
        logger.warning(f"Assumption report failed: {str(e)}")
        return AssumptionReport(math.nan, zmax, pstar, p, spec.alpha1, spec.alpha2, spec.s, checks)

    checks["z_min_feasible"] = CheckResult(True, zmin, "largest admissible z_min")
    below = np.linspace(lo, zmin, 2000, endpoint=False)
    m2 = float(np.min(_clause_ii_margin(spec, below)))
    checks["removal_series"] = CheckResult(m2 > 0, m2, "v(z)+v(z_max)-2 alpha1 sum (n z)^-s > 0 below z_min")

    core = np.linspace(zmin, zmax, 2000)
    d_core = np.diff(evaluate(spec, core, 2))
    tail_r = r[r >= 2.0 * zmin]
    tail_v2 = evaluate(spec, tail_r, 2)
    convex_violation = max(float(np.max(d_core, initial=-math.inf)),
                           float(np.max(-np.diff(tail_v2), initial=-math.inf)),
                           float(np.max(tail_v2, initial=-math.inf)), 0.0)
    checks["curvature_shape"] = CheckResult(
        convex_violation == 0.0, -convex_violation,
        "v'' decreasing on [z_min, z_max]; increasing, non-positive beyond 2 z_min")

    m4 = clause_iv_margin(spec, zmin)
    checks["curvature_series"] = CheckResult(m4 > 0, m4, "v''(z_max) + sum n^2 v''(n z_min) > 0")

    geometry = spec.r_hc < zmin < zmax < 2.0 * zmin
    checks["window_geometry"] = CheckResult(geometry, 2.0 * zmin - zmax, "r_hc < z_min < z_max < 2 z_min")
    checks["pressure_below_p_star"] = CheckResult(0 <= p < pstar, pstar - p, f"p={p:.6g} p*={pstar:.12g}")

    report = AssumptionReport(zmin, zmax, pstar, p, spec.alpha1, spec.alpha2, spec.s, checks)
    if report.passed:
        logger.info(f"Assumptions hold: z_min={zmin:.10f} z_max={zmax:.10f} p*={pstar:.10f}")
    else:
        logger.warning(f"Assumption checks failed: {', '.join(report.failures)}")
    return report
