"""Small dense linear algebra and seeded randomness.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. The helpers
here add the shape/finiteness checks and the rank threshold the rest of the
package relies on.

Randomness comes from :class:`Rng`, a thin wrapper around numpy's ``PCG64``
bit generator. PCG64 (permuted congruential generator, 128-bit state, XSL-RR
output) produces the same stream on every platform for a given seed, and
numpy guarantees stream stability of ``standard_normal`` (ziggurat) and
``random`` (53-bit uniform) for a fixed bit generator.
"""

from __future__ import annotations

import numpy as np

from .errors import ConvergenceError, DimensionError, RankDeficientError

PIVOT_THRESHOLD = 1e-10


class Rng:
    """Seeded random stream; single owner, never shared between runs."""

    def __init__(self, seed: int):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def uniform(self, lo=0.0, hi=1.0, size=None):
        return lo + (hi - lo) * self._gen.random(size)

    def random(self, size=None):
        return self._gen.random(size)

    def integers(self, lo, hi, size=None):
        """Integers in the half-open range [lo, hi).

        Drawn as ``lo + floor(u * (hi - lo))`` from 53-bit uniforms, which is
        much cheaper than ``Generator.integers`` for the tiny batches the
        simulator draws every step; the bias is below ``(hi - lo) / 2**53``.
        """
        if hi <= lo:
            raise ValueError(f"empty range [{lo}, {hi})")
        u = self._gen.random(size)
        out = lo + np.floor(u * (hi - lo)).astype(np.int64)
        return int(out) if size is None else out

    def choice(self, n, p=None, size=None):
        """Indices ``0..n-1``, uniform or with probabilities ``p`` (inverse CDF)."""
        if p is None:
            return self.integers(0, n, size)
        cdf = np.cumsum(np.asarray(p, dtype=np.float64))
        cdf /= cdf[-1]
        idx = np.searchsorted(cdf, self._gen.random(size), side="right")
        idx = np.minimum(idx, n - 1)
        return int(idx) if size is None else idx

    def permutation(self, n):
        return self._gen.permutation(n)

    def next_seed(self) -> int:
        return int(self._gen.integers(0, 2**63))

    def spawn(self, label: str) -> "Rng":
        """Independent child stream keyed by ``label``.

        Children depend only on the parent seed and the label, not on how
        many draws the parent has made, so named streams stay aligned across
        runs that consume other streams differently.
        """
        key = [ord(c) for c in label]
        seq = np.random.SeedSequence([self.seed & 0xFFFFFFFF, self.seed >> 32, *key])
        return Rng(int(seq.generate_state(2, np.uint64)[0]))


def _as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def mat_mul(a, b):
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("matrix product has non-finite entries")
    return out


def solve_least_squares(a, b, form: str = "column"):
    """Least-squares solve with an explicit rank check.

    ``form="column"`` minimises ``||a x - b||``; ``form="row"`` minimises
    ``||x^T a - b^T||``, i.e. solves against ``a.T``. Returns ``(x, residual)``
    where residual is the 2-norm of the misfit.

    Uses Householder QR; a diagonal entry of R below ``PIVOT_THRESHOLD``
    times the largest one means the matrix is numerically rank deficient.
    """
    a = _as_matrix(a, "a")
    if form == "row":
        a = a.T
    elif form != "column":
        raise ValueError(f"form must be 'column' or 'row', got {form!r}")
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    m, n = a.shape
    if b.shape[0] != m:
        raise DimensionError(f"right-hand side has length {b.shape[0]}, expected {m}")
    if m < n:
        raise RankDeficientError(f"{m}x{n} system cannot have full column rank")
    q, r = np.linalg.qr(a, mode="reduced")
    diag = np.abs(np.diag(r))
    scale = diag.max() if diag.size else 0.0
    if scale == 0.0 or diag.min() <= PIVOT_THRESHOLD * scale:
        pivot = float(diag.min()) if diag.size else 0.0
        raise RankDeficientError(
            f"matrix is rank deficient (smallest pivot {pivot:.3e})", pivot=pivot
        )
    x = np.linalg.solve(r, q.T @ b)
    residual = float(np.linalg.norm(a @ x - b))
    return x, residual


def norm_inf_rows(a) -> float:
    """Largest row l1 norm (the induced infinity norm)."""
    a = _as_matrix(a)
    if a.size == 0:
        return 0.0
    return float(np.abs(a).sum(axis=1).max())


def norm_2inf_rows(a) -> float:
    """Largest row l2 norm."""
    a = _as_matrix(a)
    if a.size == 0:
        return 0.0
    return float(np.sqrt((a * a).sum(axis=1)).max())


def gaussian_matrix(rows: int, cols: int, rng: Rng):
    return rng.normal((rows, cols))


def uniform_vector(n: int, lo: float, hi: float, rng: Rng):
    return rng.uniform(lo, hi, n)


def power_iteration_lmax(a, iters: int = 20000, tol: float = 1e-6) -> float:
    """Largest eigenvalue of a symmetric positive semidefinite matrix.

    Stops once the eigen-residual ``||a v - lam v||`` is at most
    ``tol * lam``, which bounds the distance from ``lam`` to the spectrum.
    """
    a = _as_matrix(a)
    n = a.shape[0]
    if a.shape[1] != n:
        raise DimensionError(f"power iteration needs a square matrix, got {a.shape}")
    if not np.any(a):
        return 0.0
    # fixed start vector so results do not depend on caller rng state
    v = np.random.Generator(np.random.PCG64(0x5EED)).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = a @ v
        lam = float(v @ w)
        if lam <= 0.0:
            # start vector fell into the null space; rotate it
            v = np.roll(v, 1) + 1.0 / np.sqrt(n)
            v /= np.linalg.norm(v)
            continue
        if np.linalg.norm(w - lam * v) <= tol * lam:
            return lam
        v = w / np.linalg.norm(w)
    raise ConvergenceError(
        f"power iteration did not converge in {iters} iterations", best=lam
    )
