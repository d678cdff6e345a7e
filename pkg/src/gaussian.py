"""
Harmonic approximation around the bulk ground state.

Hessian blocks A and B of the block chain, the Riccati fixed point C, the
derived matrices N, D, M and M-hat, Gaussian free energy and marginals, the
truncated inverse Hessian and the Toeplitz covariance bound.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg

from src.blocks import window_hessian
from src.errors import AssumptionError, ConvergenceError, GridError, InconsistencyError
from src.ground_state import BulkConstants, ModelParams
from src.logger import get_logger
from src.potentials import evaluate, series_sum

logger = get_logger()

RICCATI_TOL = 1e-13
IDENTITY_TOL = 1e-12


def _sigma(X: np.ndarray) -> np.ndarray:
    return X[::-1, ::-1]


@dataclass(frozen=True)
class BlockCurvature:
    V_xx: np.ndarray
    W_xx: np.ndarray
    W_yy: np.ndarray
    W_xy: np.ndarray


def interaction_blocks(params: ModelParams, bulk: BulkConstants) -> BlockCurvature:
    """Second derivatives of V and W at the bulk pair, read off the 2d-spacing Hessian."""
    d, R = params.block_dim, params.range
    H2 = window_hessian(np.full(2 * d, bulk.a), params.potential, R)
    V_xx = window_hessian(np.full(d, bulk.a), params.potential, R)
    return BlockCurvature(V_xx=V_xx, W_xx=H2[:d, :d] - V_xx, W_yy=H2[d:, d:] - V_xx, W_xy=H2[:d, d:])


def hessian_blocks(params: ModelParams, bulk: BulkConstants) -> Tuple[np.ndarray, np.ndarray]:
    """A = W_yy + V_xx + W_xx and B = -W_xy at (a, a)."""
    c = interaction_blocks(params, bulk)
    A = c.W_yy + c.V_xx + c.W_xx
    return 0.5 * (A + A.T), -c.W_xy


def riccati_residual(A: np.ndarray, B: np.ndarray, C: np.ndarray) -> float:
    return float(np.linalg.norm(C - A + B @ np.linalg.solve(C, B.T), "fro"))


def solve_riccati(A: np.ndarray, B: np.ndarray, C0: Optional[np.ndarray] = None,
                  tol: float = RICCATI_TOL, max_iter: int = 10_000) -> Tuple[np.ndarray, int]:
    """Fixed point of C = A - B C^-1 B^T from C0 = A; returns (C, iterations)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = A.copy() if C0 is None else np.atleast_2d(np.asarray(C0, dtype=float)).copy()
    for it in range(1, max_iter + 1):
        try:
            linalg.cholesky(C)
        except linalg.LinAlgError:
            raise ConvergenceError(f"Riccati iterate lost positivity at step {it}", last_iterate=C,
                                   iterations=it)
        nxt = A - B @ np.linalg.solve(C, B.T)
        nxt = 0.5 * (nxt + nxt.T)
        change = float(np.max(np.abs(nxt - C)))
        C = nxt
        if change < 0.1 * tol and riccati_residual(A, B, C) < tol:
            logger.debug(f"Riccati converged in {it} iterations")
            return C, it
        if not np.all(np.isfinite(C)):
            break
    raise ConvergenceError(f"Riccati iteration did not converge in {max_iter} steps",
                           last_iterate=C, iterations=max_iter)


def matrices_NDM(A: np.ndarray, B: np.ndarray, C: np.ndarray, W_yy: Optional[np.ndarray] = None):
    """(N, D, M, M_hat); D is None without W_yy."""
    sCs = _sigma(C)
    N1 = sCs - B @ np.linalg.solve(C, B.T)
    N2 = C - B.T @ np.linalg.solve(sCs, B)
    gap = float(np.max(np.abs(N1 - N2)))
    if gap > IDENTITY_TOL * max(1.0, float(np.max(np.abs(N1)))):
        raise InconsistencyError(f"the two expressions for N differ by {gap:.3e}")
    N = 0.5 * (N1 + N1.T)
    D = None if W_yy is None else C - W_yy
    M = np.block([[sCs, -B], [-B.T, C]])
    zero = np.zeros_like(N)
    M_hat = M - np.block([[0.5 * N, zero], [zero, 0.5 * N]])
    # same matrix written through J = C - sigma C sigma
    J = C - sCs
    M_hat_J = np.block([[0.5 * (A - J), -B], [-B.T, 0.5 * (A + J)]])
    mismatch = float(np.max(np.abs(M_hat - M_hat_J)))
    if mismatch > IDENTITY_TOL * max(1.0, float(np.max(np.abs(A)))):
        raise InconsistencyError(f"M-hat and its J-form differ by {mismatch:.3e}")
    return N, D, M, M_hat


@dataclass(frozen=True)
class GaussianModel:
    d: int
    a: float
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    N: np.ndarray
    D: Optional[np.ndarray]
    M: np.ndarray
    M_hat: np.ndarray
    det_C: float
    riccati_residual: float
    iterations: int = 0

    def to_dict(self) -> Dict[str, object]:
        return {
            "d": self.d, "a": self.a, "A": self.A.tolist(), "B": self.B.tolist(), "C": self.C.tolist(),
            "N": self.N.tolist(), "det_C": self.det_C, "riccati_residual": self.riccati_residual,
        }


def build_gaussian_model(params: ModelParams, bulk: BulkConstants) -> GaussianModel:
    curv = interaction_blocks(params, bulk)
    A, B = hessian_blocks(params, bulk)
    C, its = solve_riccati(A, B)
    N, D, M, M_hat = matrices_NDM(A, B, C, curv.W_yy)
    try:
        linalg.cholesky(M_hat)
    except linalg.LinAlgError as e:
        raise InconsistencyError("M-hat is not positive definite") from e
    model = GaussianModel(d=A.shape[0], a=bulk.a, A=A, B=B, C=C, N=N, D=D, M=M, M_hat=M_hat,
                          det_C=float(np.linalg.det(C)), riccati_residual=riccati_residual(A, B, C),
                          iterations=its)
    logger.info(f"Gaussian model: d={model.d} det C={model.det_C:.12g} residual={model.riccati_residual:.2e}")
    return model


def gaussian_g(beta: float, bulk: BulkConstants, model: GaussianModel) -> float:
    """e0 - beta^-1 log sqrt(2 pi / (beta det(C)^(1/d)))."""
    return bulk.e0 - math.log(math.sqrt(2.0 * math.pi / (beta * model.det_C ** (1.0 / model.d)))) / beta


@dataclass(frozen=True)
class GaussianPrincipal:
    lambda0: float
    mean: np.ndarray
    precision: np.ndarray
    norm: float

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """L2-normalised eigenfunction exp(-x^T precision x / 2) around the mean."""
        xi = np.asarray(x, dtype=float) - self.mean
        return self.norm * np.exp(-0.5 * np.einsum("...i,ij,...j->...", xi, self.precision, xi))


def gaussian_principal(beta: float, model: GaussianModel) -> GaussianPrincipal:
    d = model.d
    lam = math.sqrt((2.0 * math.pi) ** d / (beta ** d * model.det_C))
    half_N = 0.5 * model.N
    norm = (beta ** d * float(np.linalg.det(half_N)) / math.pi ** d) ** 0.25
    return GaussianPrincipal(lambda0=lam, mean=np.full(d, model.a), precision=beta * half_N, norm=norm)


def gamma_gauss(model: GaussianModel) -> float:
    """Spectral radius of C^-1 B^T, the zero-temperature limit of Lambda1/Lambda0."""
    return float(np.max(np.abs(np.linalg.eigvals(np.linalg.solve(model.C, model.B.T)))))


def chain_precision(model: GaussianModel, n: int, beta: float = 1.0) -> np.ndarray:
    """
    Precision of n consecutive blocks: N for one block, M for two, and the
    tridiagonal chain with end blocks sigma C sigma and C otherwise.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    d = model.d
    if n == 1:
        return beta * model.N
    P = np.zeros((n * d, n * d))
    for i in range(n):
        blk = slice(i * d, (i + 1) * d)
        P[blk, blk] = _sigma(model.C) if i == 0 else (model.C if i == n - 1 else model.A)
        if i + 1 < n:
            nxt = slice((i + 1) * d, (i + 2) * d)
            P[blk, nxt] = -model.B
            P[nxt, blk] = -model.B.T
    return beta * P


@dataclass(frozen=True)
class GaussianMarginal:
    n: int
    mean: np.ndarray
    precision: np.ndarray = field(repr=False)
    covariance: np.ndarray = field(repr=False)

    def density(self, x: np.ndarray) -> np.ndarray:
        xi = np.asarray(x, dtype=float) - self.mean
        k = self.mean.size
        sign, logdet = np.linalg.slogdet(self.precision)
        log_norm = 0.5 * logdet - 0.5 * k * math.log(2.0 * math.pi)
        return np.exp(log_norm - 0.5 * np.einsum("...i,ij,...j->...", xi, self.precision, xi))


def gaussian_marginals(model: GaussianModel, beta: float, n: int = 1) -> GaussianMarginal:
    P = chain_precision(model, n, beta)
    return GaussianMarginal(n=n, mean=np.full(n * model.d, model.a), precision=P, covariance=np.linalg.inv(P))


def _chain_banded(model: GaussianModel, L: int) -> np.ndarray:
    """Upper banded storage of the (2L+1)-block matrix with blocks (-B^T, A, -B)."""
    d = model.d
    n_blocks = 2 * L + 1
    H = np.zeros((n_blocks * d, n_blocks * d))
    for i in range(n_blocks):
        blk = slice(i * d, (i + 1) * d)
        H[blk, blk] = model.A
        if i + 1 < n_blocks:
            nxt = slice((i + 1) * d, (i + 2) * d)
            H[blk, nxt] = -model.B
            H[nxt, blk] = -model.B.T
    u = 2 * d - 1
    ab = np.zeros((u + 1, H.shape[0]))
    for o in range(u + 1):
        ab[u - o, o:] = np.diagonal(H, o)
    return ab


def covariance_Hinv(model: GaussianModel, i: int, j: int, L: int = 200, check: bool = True) -> float:
    """(H^-1)_{ij} for spacing offsets i, j from the centre of a truncated block chain."""
    d = model.d

    def entry(n_half: int) -> float:
        if max(abs(i), abs(j)) > n_half * d:
            raise ValueError(f"offsets must satisfy |i|, |j| <= {n_half * d}")
        ab = _chain_banded(model, n_half)
        centre = n_half * d
        rhs = np.zeros(ab.shape[1])
        rhs[centre + j] = 1.0
        return float(linalg.solveh_banded(ab, rhs)[centre + i])

    value = entry(L)
    if check:
        wider = entry(L + 10)
        if abs(wider - value) > 1e-10:
            raise GridError(f"(H^-1)_{{{i},{j}}} unstable under truncation: {value:.3e} vs {wider:.3e}")
    return value


@dataclass(frozen=True)
class BrascampReport:
    rho: float
    kappa: np.ndarray = field(repr=False)
    eta: float
    A_N: np.ndarray = field(repr=False)
    decay_rows: List[Dict[str, float]]
    exponent: float
    bound_constant: float

    def kappa_bound(self, potential, z_min: float) -> np.ndarray:
        """Upper bound alpha2 / (s z_min^(s+2) l^s) on each kappa_l."""
        l = np.arange(1, self.kappa.size + 1, dtype=float)
        return potential.alpha2 / (potential.s * z_min ** (potential.s + 2.0) * l ** potential.s)


def _curvature_sum(params: ModelParams, start: int, weight) -> float:
    """sum_{n>=start} weight(n) |v''(n z_min)|, finite for finite range."""
    pot, z = params.potential, params.z_min
    if params.finite:
        n = np.arange(start, params.range + 1, dtype=float)
        if n.size == 0:
            return 0.0
        return float(np.sum(weight(n) * np.abs(evaluate(pot, n * z, 2))))
    pref = pot.alpha2 * z ** (-pot.s - 2.0)
    total, _ = series_sum(lambda n: weight(n) * np.abs(evaluate(pot, n * z, 2)), start, pref, pot.s + 1.0)
    return total


def brascamp_bound(params: ModelParams, N: int = 128, fit_range: Tuple[int, int] = (2, 20)) -> BrascampReport:
    """
    Toeplitz lower bound A_N of the chain Hessian with diagonal rho and
    off-diagonals -kappa_l, and the decay of its inverse from the centre row.
    """
    pot = params.potential
    rho = float(evaluate(pot, params.z_max, 2)) - _curvature_sum(params, 2, lambda n: n)
    kappa = np.array([_curvature_sum(params, l + 1, lambda n, l=l: n - l) for l in range(1, N)])
    eta = rho - 2.0 * float(np.sum(kappa))
    if eta <= 0:
        raise AssumptionError(f"curvature margin eta={eta:.6g} is not positive")
    A_N = linalg.toeplitz(np.concatenate([[rho], -kappa]))
    centre = N // 2
    rhs = np.zeros(N)
    rhs[centre] = 1.0
    column = linalg.solve(A_N, rhs, assume_a="pos")
    rows = []
    for n in range(2, N // 4 + 1):
        if centre + n >= N:
            break
        val = float(column[centre + n])
        rows.append({"n": n, "inverse_entry": val, "scaled": val * n ** pot.s})
    lo, hi = fit_range
    sel = [r for r in rows if lo <= r["n"] <= hi and r["inverse_entry"] > 0]
    if len(sel) < 2:
        raise GridError("too few positive entries to fit the decay exponent")
    slope = np.polyfit(np.log([r["n"] for r in sel]), np.log([r["inverse_entry"] for r in sel]), 1)[0]
    bound = max(r["scaled"] for r in rows) if rows else math.nan
    logger.info(f"Toeplitz bound: rho={rho:.10g} eta={eta:.10g} decay exponent={-slope:.4f}")
    return BrascampReport(rho=rho, kappa=kappa, eta=eta, A_N=A_N, decay_rows=rows, exponent=float(-slope),
                          bound_constant=float(bound))
