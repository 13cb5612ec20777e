"""Pure-Python/numpy versions of the compiled kernels.

Same signatures and in-place semantics as ``_kernels``. Used when the
extension is not built or ``PATHLORA_PURE_PYTHON=1`` is set.
"""

import numpy as np

_MASK = (1 << 64) - 1


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK


def xoshiro_fill(state, out):
    s0, s1, s2, s3 = (int(v) for v in state)
    for i in range(out.shape[0]):
        out[i] = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
    state[:] = (s0, s1, s2, s3)


def _round_robin(n):
    npad = n + (n % 2)
    ring = list(range(npad))
    steps = []
    for _ in range(npad - 1):
        pairs = []
        for k in range(npad // 2):
            i, j = ring[k], ring[npad - 1 - k]
            if i < n and j < n:
                pairs.append((min(i, j), max(i, j)))
        steps.append(pairs)
        ring = [ring[0], ring[-1]] + ring[1:-1]
    return [(np.array([p[0] for p in s], dtype=np.intp),
             np.array([p[1] for p in s], dtype=np.intp)) for s in steps if s]


def jacobi_sweeps(ut, vt, tol, max_sweeps):
    n = ut.shape[0]
    if n < 2:
        return 0
    schedule = _round_robin(n)
    for sweep in range(max_sweeps):
        rotated = False
        for ii, jj in schedule:
            xi, xj = ut[ii], ut[jj]
            a = np.einsum("ij,ij->i", xi, xi)
            b = np.einsum("ij,ij->i", xj, xj)
            g = np.einsum("ij,ij->i", xi, xj)
            live = (a != 0.0) & (b != 0.0) & (np.abs(g) > tol * np.sqrt(a) * np.sqrt(b))
            if not live.any():
                continue
            rotated = True
            ii, jj, a, b, g = ii[live], jj[live], a[live], b[live], g[live]
            zeta = (b - a) / (2.0 * g)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = (c * t)[:, None]
            c = c[:, None]
            for mat in (ut, vt):
                x, y = mat[ii], mat[jj]
                mat[ii] = c * x - s * y
                mat[jj] = s * x + c * y
        if not rotated:
            return sweep + 1
    return -1
