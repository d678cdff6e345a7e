"""
Compiled inner loops for the sampler.
numba is optional; without it the kernels run as plain Python.
"""

import math

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True

except ImportError:
    print("Warning: numba is not found in your environment, sampler kernels will run uncompiled.")
    HAVE_NUMBA = False
    # njit as an empty decorator
    from functools import wraps

    def njit(cache=True):
        def decorator(func):
            @wraps(func)
            def wrapper(*args, **kwargs):
                return func(*args, **kwargs)
            return wrapper
        return decorator


KIND_LJ = 0
KIND_SPLINE = 1


@njit(cache=True)
def _pair_energy(r, kind, scale, r_hc, knots, coeffs):
    if r <= r_hc:
        return math.inf
    if kind == KIND_LJ:
        inv6 = r ** -6
        return scale * (inv6 * inv6 - inv6)
    n = knots.shape[0]
    if r >= knots[n - 1]:
        return 0.0
    i = np.searchsorted(knots, r) - 1
    if i < 0:
        i = 0
    dx = r - knots[i]
    # CubicSpline.c layout, highest power first; scale is folded into coeffs
    return ((coeffs[0, i] * dx + coeffs[1, i]) * dx + coeffs[2, i]) * dx + coeffs[3, i]


@njit(cache=True)
def _local_delta(z, i, delta, R, kind, scale, r_hc, knots, coeffs):
    """Change in the windowed pair energy when z[i] moves by delta."""
    n = z.shape[0]
    total = 0.0
    lo = i - R + 1
    if lo < 0:
        lo = 0
    for j in range(lo, i + 1):
        s = 0.0
        for t in range(j, i):
            s += z[t]
        end = j + R - 1
        if end > n - 1:
            end = n - 1
        for e in range(i, end + 1):
            s += z[e]
            new = _pair_energy(s + delta, kind, scale, r_hc, knots, coeffs)
            if new == math.inf:
                return math.inf
            total += new - _pair_energy(s, kind, scale, r_hc, knots, coeffs)
    return total


@njit(cache=True)
def _metropolis_sweep(z, beta, p, R, width, normals, log_uniforms, kind, scale, r_hc, knots, coeffs):
    """One sequential single-site sweep in place; returns the number of accepted moves."""
    accepted = 0
    for i in range(z.shape[0]):
        proposal = z[i] + width * normals[i]
        if proposal <= r_hc:
            continue
        delta = proposal - z[i]
        d_energy = p * delta + _local_delta(z, i, delta, R, kind, scale, r_hc, knots, coeffs)
        if d_energy == math.inf:
            continue
        if log_uniforms[i] < -beta * d_energy:
            z[i] = proposal
            accepted += 1
    return accepted


@njit(cache=True)
def _walk(cumulative, start, uniforms, out):
    """Discrete Markov chain driven by row-cumulative transition probabilities."""
    state = start
    n_states = cumulative.shape[0]
    for t in range(uniforms.shape[0]):
        nxt = np.searchsorted(cumulative[state], uniforms[t], side='right')
        if nxt >= n_states:
            nxt = n_states - 1
        state = nxt
        out[t] = state
    return state
