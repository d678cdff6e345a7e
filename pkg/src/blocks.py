"""
Block algebra shared by the value function, the transfer operators and the
harmonic approximation. A block is d = max(m - 1, 1) consecutive spacings.
"""

from typing import Optional

import numpy as np

from src.potentials import PotentialSpec, evaluate


def block_dim(m: Optional[int]) -> int:
    if m is None:
        raise ValueError("block algebra needs a finite interaction range")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    return max(m - 1, 1)


def reverse(x: np.ndarray) -> np.ndarray:
    """Coordinate reversal sigma on the last axis."""
    return np.asarray(x)[..., ::-1]


def _prefix(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    zero = np.zeros(x.shape[:-1] + (1,))
    return np.concatenate([zero, np.cumsum(x, axis=-1)], axis=-1)


def block_energy(x: np.ndarray, potential: PotentialSpec, p: float, R: int) -> np.ndarray:
    """V(x): every window of length <= R inside the block plus the pressure term."""
    x = np.asarray(x, dtype=float)
    S = _prefix(x)
    d = x.shape[-1]
    total = p * S[..., d]
    for i in range(d):
        for j in range(i + 1, min(i + R, d) + 1):
            total = total + evaluate(potential, S[..., j] - S[..., i], 0)
    return total


def cross_energy(x: np.ndarray, y: np.ndarray, potential: PotentialSpec, R: int) -> np.ndarray:
    """W(x, y): windows with t >= 1 trailing spacings of x and h >= 1 leading spacings of y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    Sx, Sy = _prefix(x), _prefix(y)
    d = x.shape[-1]
    shape = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
    total = np.zeros(shape)
    for t in range(1, d + 1):
        tail = Sx[..., d] - Sx[..., d - t]
        for h in range(1, min(d, R - t) + 1):
            total = total + evaluate(potential, tail + Sy[..., h], 0)
    return total


def window_hessian(z: np.ndarray, potential: PotentialSpec, R: int) -> np.ndarray:
    """Dense Hessian of the windowed pair energy of a short spacing vector."""
    z = np.asarray(z, dtype=float)
    n = z.size
    S = _prefix(z)
    H = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, min(i + R, n) + 1):
            H[i:j, i:j] += evaluate(potential, S[j] - S[i], 2)
    return H
