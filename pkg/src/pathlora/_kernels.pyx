# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: xoshiro256** block generation and Jacobi sweeps."""

from libc.math cimport sqrt, fabs
from libc.stdint cimport uint64_t

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline uint64_t _rotl(uint64_t x, int k) nogil:
    return (x << k) | (x >> (64 - k))


def xoshiro_fill(cnp.uint64_t[::1] state, cnp.uint64_t[::1] out):
    """Advance ``state`` in place, writing ``len(out)`` raw 64-bit outputs."""
    cdef uint64_t s0 = state[0], s1 = state[1], s2 = state[2], s3 = state[3]
    cdef uint64_t t
    cdef Py_ssize_t i, n = out.shape[0]
    with nogil:
        for i in range(n):
            out[i] = _rotl(s1 * 5, 7) * 9
            t = s1 << 17
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = _rotl(s3, 45)
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3


cdef int _sweeps(double[:, ::1] ut, double[:, ::1] vt, cnp.intp_t[::1] ring,
                 double tol, int max_sweeps) noexcept nogil:
    cdef Py_ssize_t n = ut.shape[0], m = ut.shape[1], nv = vt.shape[1]
    cdef Py_ssize_t npad = ring.shape[0]
    cdef Py_ssize_t step, k, i, j, r
    cdef int sweep
    cdef double a, b, g, zeta, t, c, s, x, y
    cdef cnp.intp_t last
    cdef bint rotated
    for sweep in range(max_sweeps):
        rotated = False
        for step in range(npad - 1):
            for k in range(npad // 2):
                i = ring[k]
                j = ring[npad - 1 - k]
                if i >= n or j >= n:
                    continue
                if i > j:
                    i, j = j, i
                a = 0.0
                b = 0.0
                g = 0.0
                for r in range(m):
                    x = ut[i, r]
                    y = ut[j, r]
                    a += x * x
                    b += y * y
                    g += x * y
                if a == 0.0 or b == 0.0:
                    continue
                if fabs(g) <= tol * sqrt(a) * sqrt(b):
                    continue
                rotated = True
                zeta = (b - a) / (2.0 * g)
                if zeta >= 0:
                    t = 1.0 / (zeta + sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + sqrt(1.0 + zeta * zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for r in range(m):
                    x = ut[i, r]
                    y = ut[j, r]
                    ut[i, r] = c * x - s * y
                    ut[j, r] = s * x + c * y
                for r in range(nv):
                    x = vt[i, r]
                    y = vt[j, r]
                    vt[i, r] = c * x - s * y
                    vt[j, r] = s * x + c * y
            # keep slot 0 fixed, rotate the rest by one
            last = ring[npad - 1]
            for k in range(npad - 1, 1, -1):
                ring[k] = ring[k - 1]
            ring[1] = last
        if not rotated:
            return sweep + 1
    return -1


def jacobi_sweeps(double[:, ::1] ut, double[:, ::1] vt, double tol, int max_sweeps):
    """One-sided Jacobi on the rows of ``ut`` (columns of the working matrix).

    Rotations are accumulated into the rows of ``vt``. Pairs are visited in
    round-robin order so each step touches disjoint rows. Returns the number
    of sweeps used, or -1 when ``max_sweeps`` is exhausted.
    """
    cdef Py_ssize_t n = ut.shape[0]
    if n < 2:
        return 0
    cdef cnp.intp_t[::1] ring = np.arange(n + (n % 2), dtype=np.intp)
    cdef int used
    with nogil:
        used = _sweeps(ut, vt, ring, tol, max_sweeps)
    return used
