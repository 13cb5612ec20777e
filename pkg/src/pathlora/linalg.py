"""Dense matrix helpers, one-sided Jacobi SVD and the seeded PRNG.

Matrices are plain ``float64`` numpy arrays. The SVD and the PRNG inner
loops run in the compiled kernel when it is available.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ._backend import jacobi_sweeps, xoshiro_fill
from .errors import DimensionError, NonFiniteError, SvdConvergenceError

JACOBI_TOL = 1e-14
JACOBI_MAX_SWEEPS = 60


def as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    return m


def check_finite(x, what="result"):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contains non-finite entries")
    return x


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    return check_finite(out, "matmul")


def frobenius_norm(m) -> float:
    m = as_matrix(m)
    return float(np.sqrt(np.sum(m * m)))


@dataclass(frozen=True)
class SvdView:
    """Thin factorization ``p @ diag(lam) @ q`` with orthonormal p columns / q rows."""

    p: np.ndarray
    lam: np.ndarray
    q: np.ndarray

    @property
    def rank(self) -> int:
        return self.lam.shape[0]

    @property
    def shape(self):
        return self.p.shape[0], self.q.shape[1]

    def reconstruct(self) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            return (self.p * self.lam) @ self.q

    def residuals(self, source=None):
        """(reconstruction, p-orthogonality, q-orthogonality) residuals."""
        eye = np.eye(self.rank)
        out = [
            float(np.max(np.abs(self.p.T @ self.p - eye))),
            float(np.max(np.abs(self.q @ self.q.T - eye))),
        ]
        if source is not None:
            source = as_matrix(source)
            err = frobenius_norm(self.reconstruct() - source) / max(1.0, frobenius_norm(source))
            out.insert(0, err)
        return tuple(out)


def _complete_columns(u, missing):
    """Replace the columns listed in ``missing`` with unit vectors orthogonal to the rest."""
    keep = [j for j in range(u.shape[1]) if j not in set(missing)]
    basis = [u[:, j] for j in keep]
    candidates = iter(np.eye(u.shape[0]))
    for j in missing:
        for e in candidates:
            v = e.copy()
            for _ in range(2):
                for b in basis:
                    v -= (b @ v) * b
            nv = np.linalg.norm(v)
            if nv > 0.5:
                v /= nv
                u[:, j] = v
                basis.append(v)
                break
    return u


def svd_thin(m, tol=JACOBI_TOL, max_sweeps=JACOBI_MAX_SWEEPS) -> SvdView:
    """Thin SVD by one-sided Jacobi, singular values sorted descending.

    Returns ``min(d1, d2)`` triplets; exact zeros get orthonormal completion
    vectors so the factor invariants hold for rank-deficient input.
    """
    m = check_finite(as_matrix(m), "svd input")
    d1, d2 = m.shape
    flip = d1 < d2
    work = m.T if flip else m
    ut = np.array(work.T, dtype=np.float64, order="C", copy=True)
    vt = np.eye(ut.shape[0])
    used = jacobi_sweeps(ut, vt, tol, max_sweeps)
    if used < 0:
        raise SvdConvergenceError(max_sweeps)
    sigma = np.sqrt(np.einsum("ij,ij->i", ut, ut))
    zero = sigma == 0.0
    safe = np.where(zero, 1.0, sigma)
    u = (ut / safe[:, None]).T.copy()
    if zero.any():
        u = _complete_columns(u, list(np.flatnonzero(zero)))
    order = np.argsort(-sigma, kind="stable")
    u, sigma, v = u[:, order], sigma[order], vt[order]
    if flip:
        return SvdView(p=np.ascontiguousarray(v.T), lam=sigma, q=np.ascontiguousarray(u.T))
    return SvdView(p=u, lam=sigma, q=np.ascontiguousarray(v))


def svd_product(a, b, **kw) -> SvdView:
    """Rank-r SVD of ``a @ b`` through QR of the thin factors."""
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    check_finite(a, "svd input")
    check_finite(b, "svd input")
    r = a.shape[1]
    if r > min(a.shape[0], b.shape[1]):
        return svd_thin(a @ b, **kw)
    qa, ra = np.linalg.qr(a)
    qb, rb = np.linalg.qr(b.T)
    with np.errstate(over="ignore", invalid="ignore"):
        core_in = ra @ rb.T
    core = svd_thin(core_in, **kw)
    return SvdView(p=qa @ core.p, lam=core.lam, q=core.q @ qb.T)


def canonicalize(view: SvdView) -> SvdView:
    """Sort triplets by descending singular value (stable) and fix signs.

    Each p column is flipped, with its q row, so that its largest-magnitude
    entry is positive; the first such entry wins ties.
    """
    order = np.argsort(-view.lam, kind="stable")
    p = view.p[:, order].copy()
    q = view.q[order].copy()
    lam = view.lam[order].copy()
    pivots = np.argmax(np.abs(p), axis=0)
    neg = p[pivots, np.arange(p.shape[1])] < 0
    p[:, neg] *= -1.0
    q[neg] *= -1.0
    return SvdView(p=p, lam=lam, q=q)


# --- PRNG -------------------------------------------------------------------

_M64 = (1 << 64) - 1


def _splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _M64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return x, z ^ (z >> 31)


def _label_hash(label: str) -> int:
    return int.from_bytes(hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "little")


class Prng:
    """xoshiro256** stream seeded through splitmix64.

    Streams are named: ``Prng(seed, "a").split("b")`` is the same stream as
    ``Prng(seed, "a/b")`` and independent of its parent.
    """

    def __init__(self, seed: int, label: str = ""):
        self.seed = int(seed) & _M64
        self.label = label
        x = self.seed ^ _label_hash(label)
        words = []
        for _ in range(4):
            x, z = _splitmix64(x)
            words.append(z)
        self._state = np.array(words, dtype=np.uint64)

    @classmethod
    def from_state(cls, words):
        g = cls.__new__(cls)
        g.seed, g.label = None, "<raw>"
        g._state = np.array(words, dtype=np.uint64)
        return g

    def split(self, label: str) -> "Prng":
        return Prng(self.seed, f"{self.label}/{label}")

    def next_u64(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.uint64)
        xoshiro_fill(self._state, out)
        return out

    def random(self, n: int) -> np.ndarray:
        """Uniform doubles on [0, 1) with 53 random bits."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def integers(self, low: int, high: int, n: int) -> np.ndarray:
        """Uniform integers on [low, high) by rejection, no modulo bias."""
        span = high - low
        if span < 1:
            raise ValueError("empty integer range")
        limit = (1 << 64) - ((1 << 64) % span)
        out = []
        while len(out) < n:
            for x in self.next_u64(n - len(out)).tolist():
                if x < limit:
                    out.append(low + x % span)
        return np.array(out, dtype=np.int64)

    def normal(self, n: int) -> np.ndarray:
        """Standard normals by Box-Muller, one pair of uniforms per draw."""
        u = self.random(2 * n).reshape(2, n)
        return np.sqrt(-2.0 * np.log1p(-u[0])) * np.cos(2.0 * np.pi * u[1])
