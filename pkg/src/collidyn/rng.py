"""Counter-based random numbers for reproducible parallel Monte Carlo.

Every Gaussian increment used by the simulation engine is a pure function of
the tuple (seed, replicate, side, particle, coordinate, step).  A Philox-4x32
block cipher maps that tuple to 128 random bits, two 32-bit words are glued
into a 53-bit uniform, and the inverse normal CDF turns it into a standard
normal draw.  Because no generator state is carried between calls, replicates
can run on any number of threads, in any order, and still produce bit-identical
streams.
"""

import math

import numpy as np
from numba import njit, uint32, uint64

_M0 = uint64(0xD2511F53)
_M1 = uint64(0xCD9E8D57)
_W0 = uint64(0x9E3779B9)  # Weyl constants of the Philox key schedule
_W1 = uint64(0xBB67AE85)
_MASK32 = uint64(0xFFFFFFFF)


@njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """One Philox-4x32-10 block: 128-bit counter, 64-bit key, 128-bit output."""
    c0 = uint64(c0) & _MASK32
    c1 = uint64(c1) & _MASK32
    c2 = uint64(c2) & _MASK32
    c3 = uint64(c3) & _MASK32
    k0 = uint64(k0) & _MASK32
    k1 = uint64(k1) & _MASK32
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> uint64(32)
        lo0 = p0 & _MASK32
        hi1 = p1 >> uint64(32)
        lo1 = p1 & _MASK32
        n0 = hi1 ^ c1 ^ k0
        n1 = lo1
        n2 = hi0 ^ c3 ^ k1
        n3 = lo0
        c0, c1, c2, c3 = n0, n1, n2, n3
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


@njit(cache=True, inline="always")
def uniform53(w0, w1):
    """Strictly interior uniform in (0, 1) from two 32-bit words."""
    z = (uint64(w0) << uint64(21)) ^ (uint64(w1) >> uint64(11))  # 53 bits
    return (np.float64(z) + 0.5) * (2.0 ** -53)


# Acklam's rational approximation of the inverse normal CDF, polished by one
# Halley step through erfc (full double precision; validated against scipy).
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425
_SQRT2PI = math.sqrt(2.0 * math.pi)


@njit(cache=True, inline="always")
def ndtri(p):
    """Inverse of the standard normal CDF for p strictly inside (0, 1)."""
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q
             + _C[5]) / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r
             + _A[5]) * q / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r
                              + _B[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q
              + _C[5]) / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    # Halley refinement
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * _SQRT2PI * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@njit(cache=True, inline="always")
def normal_at(seed, replicate, side, particle, coord, step):
    """Standard normal draw keyed by (seed, replicate, side, particle, coord, step)."""
    w0, w1, _, _ = philox4x32(
        uint64(step),
        uint64(particle),
        uint64(side) + uint64(2) * uint64(coord),
        uint64(replicate),
        uint64(seed) & _MASK32,
        (uint64(seed) >> uint64(32)) & _MASK32,
    )
    return ndtri(uniform53(w0, w1))


@njit(cache=True)
def normals_block(seed, replicate, side, n_particles, dim, step, out):
    """Fill out[p, k] with the normals of one side at one step, fixed particle order."""
    for p in range(n_particles):
        for k in range(dim):
            out[p, k] = normal_at(seed, replicate, side, p, k, step)
    return out


def normals(seed, replicate, side, n_particles, dim, step):
    """Array-returning wrapper around :func:`normals_block` (reference path)."""
    out = np.empty((n_particles, dim))
    return normals_block(
        np.uint64(seed), np.uint64(replicate), np.uint64(side),
        n_particles, dim, np.uint64(step), out,
    )


def spawn_stream_seed(base_seed: int, index: int) -> int:
    """Derive an independent 64-bit stream seed (splitmix64 finalizer).

    Used to give every sigma row of a sweep its own Philox key; replicates
    within a row are separated through the counter instead.
    """
    z = (int(base_seed) + (index + 1) * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)
