"""
Composite Gauss-Legendre grids for the block transfer operators.
Panels are fine around the bulk spacing, scaled by the thermal width, and
grow geometrically into the pressure-controlled tail.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.special import roots_legendre

from src.errors import GridError
from src.ground_state import BulkConstants, ModelParams
from src.logger import get_logger
from src.potentials import evaluate

logger = get_logger()

TAIL_TAU = 14.0 * math.log(10.0)
CORE_EXPONENT = 690.8
CORE_BREAKS = {1: (0.5, 1.5, 3.0, 6.0, 12.0, 24.0)}
COARSE_BREAKS = (1.0, 3.0, 8.0, 20.0)
DEFAULT_ORDER = {1: 8}
WEIGHT_SUM_RTOL = 1e-9


@dataclass(frozen=True)
class QuadratureGrid:
    d: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    lower: float
    upper: float
    tail_mass: float
    order: int

    def __post_init__(self) -> None:
        if self.nodes.shape != self.weights.shape or self.nodes.ndim != 1:
            raise GridError(f"nodes {self.nodes.shape} and weights {self.weights.shape} must be matching 1-D arrays")
        if not self.upper > self.lower:
            raise GridError(f"empty interval [{self.lower:.6g}, {self.upper:.6g}]")
        if np.any(self.weights <= 0) or np.any(self.nodes < self.lower) or np.any(self.nodes > self.upper):
            raise GridError("nodes must lie in [l0, l1] with positive weights")
        # sum of the tensor weights is (sum w)^d, so one axis suffices
        length = self.upper - self.lower
        total = float(np.sum(self.weights))
        if abs(total - length) > WEIGHT_SUM_RTOL * length:
            raise GridError(f"weights sum to {total:.12g}^{self.d}, "
                            f"expected (l1 - l0)^{self.d} = {length:.12g}^{self.d}")

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def points(self) -> np.ndarray:
        """Tensor nodes, shape (n^d, d), first coordinate slowest."""
        mesh = np.meshgrid(*([self.nodes] * self.d), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    @property
    def point_weights(self) -> np.ndarray:
        w = self.weights
        for _ in range(self.d - 1):
            w = np.outer(w, self.weights).ravel()
        return w

    @property
    def size(self) -> int:
        return self.n ** self.d


def integration_cutoff(params: ModelParams, beta: float, z_max: Optional[float] = None) -> float:
    """Lower edge where exp(-beta v) has fallen below exp(-690.8), capped at 0.7."""
    pot = params.potential
    zmax = params.z_max if z_max is None else z_max
    target = CORE_EXPONENT / beta
    lo = pot.r_hc * (1 + 1e-12) if pot.r_hc > 0 else 1e-3 * zmax
    if evaluate(pot, lo, 0) <= target:
        return max(pot.r_hc, min(0.7, lo))
    r = optimize.brentq(lambda x: evaluate(pot, x, 0) - target, lo, zmax, xtol=1e-14)
    return max(pot.r_hc, min(0.7, float(r)))


def _panel_edges(params: ModelParams, bulk: BulkConstants, beta: float, d: int,
                 lower: float, upper: float) -> np.ndarray:
    curvature = float(evaluate(params.potential, bulk.a, 2))
    width = 1.0 / math.sqrt(beta * max(curvature, 1e-12))
    scales = CORE_BREAKS.get(d, COARSE_BREAKS)
    edges = [bulk.a] + [bulk.a + s * width for s in scales] + [bulk.a - s * width for s in scales]
    edges = [e for e in edges if lower < e < upper]
    cap = (4.0 if d == 1 else 8.0) / (beta * max(params.p, 1e-300))

    right = max(edges) if edges else lower
    step = max(scales[-1] - scales[-2], 1.0) * width
    while right + step < upper:
        step = min(2.0 * step, cap)
        right = right + step
        if right < upper:
            edges.append(right)

    left = min(edges) if edges else upper
    step = max(scales[-1] - scales[-2], 1.0) * width
    while left - step > lower:
        step *= 2.0
        left = left - step
        if left > lower:
            edges.append(left)

    edges = np.unique(np.array(edges + [lower, upper]))
    return edges[(edges >= lower) & (edges <= upper)]


def build_quadrature(params: ModelParams, bulk: BulkConstants, beta: float,
                     order: Optional[int] = None, lower: Optional[float] = None,
                     upper: Optional[float] = None) -> QuadratureGrid:
    """Tensor Gauss-Legendre grid on [l0, l1]^d with l1 set by the pressure tail."""
    if params.p <= 0:
        raise GridError("a zero pressure leaves the spacing tail unbounded; no finite grid exists")
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    d = params.block_dim
    order = order or DEFAULT_ORDER.get(d, 4)
    lo = integration_cutoff(params, beta) if lower is None else float(lower)
    hi = params.z_max + TAIL_TAU / (beta * params.p) if upper is None else float(upper)
    if lo < params.potential.r_hc:
        raise GridError(f"lower edge {lo:.6g} inside the hard core")
    tail_mass = math.exp(-beta * params.p * (hi - params.z_max))
    if tail_mass > 1e-14 * (1.0 + 1e-9):
        raise GridError(f"tail criterion unmet: exp(-beta p (l1 - z_max)) = {tail_mass:.3e}")

    edges = _panel_edges(params, bulk, beta, d, lo, hi)
    x, w = roots_legendre(order)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    logger.debug(f"quadrature: d={d} panels={edges.size - 1} nodes={nodes.size} "
                 f"range=[{lo:.6g}, {hi:.6g}]")
    return QuadratureGrid(d=d, nodes=nodes, weights=weights, lower=lo, upper=hi,
                          tail_mass=tail_mass, order=order)
