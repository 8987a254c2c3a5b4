"""Gradient coding for one partition's workers.

Worker ``j`` sends the coded gradient ``sum_l B[j, l] * grad f_l``. For any
set of ``n - s`` responding workers there is a row of ``A`` supported on that
set with ``A[row] @ B == 1``, so the partition gradient is recovered from
the responses alone.

``B`` follows the cyclic construction (``s + 1`` consecutive nonzeros per
row, all rows in the null space of a random ``s x n`` matrix whose rows sum
to zero). ``A`` holds one least-squares fitted row per ``(n - s)``-subset.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from math import comb

import numpy as np

from .errors import DecodeError, RankDeficientError, SchemeError
from .linalg import Rng, norm_2inf_rows, norm_inf_rows, solve_least_squares

FIT_TOLERANCE = 1e-8
MAX_SUBSETS = 10**6
MAX_RETRIES = 8
MAX_REDRAWS = 64
MAX_CODING_CONSTANT = 1e3


@dataclass(frozen=True)
class StragglerSet:
    connected: tuple
    total: int

    def __post_init__(self):
        conn = tuple(sorted(int(j) for j in self.connected))
        if len(set(conn)) != len(conn):
            raise ValueError(f"duplicate worker indices in {conn}")
        if conn and (conn[0] < 0 or conn[-1] >= self.total):
            raise ValueError(f"worker index out of range for {self.total} workers: {conn}")
        object.__setattr__(self, "connected", conn)

    @property
    def stragglers(self) -> tuple:
        live = set(self.connected)
        return tuple(j for j in range(self.total) if j not in live)

    @property
    def n_stragglers(self) -> int:
        return self.total - len(self.connected)


@dataclass(frozen=True)
class CodingScheme:
    n_workers: int
    s: int
    B: np.ndarray
    A: np.ndarray
    subset_index: dict = field(repr=False)

    @property
    def subsets(self) -> list:
        return list(self.subset_index)

    @cached_property
    def a_inf(self) -> float:
        return norm_inf_rows(self.A)

    @cached_property
    def b_2inf(self) -> float:
        return norm_2inf_rows(self.B)

    def to_text(self) -> str:
        return (
            f"# B {self.n_workers}x{self.n_workers} s={self.s}\n"
            + format_matrix(self.B)
            + f"# A {self.A.shape[0]}x{self.A.shape[1]}\n"
            + format_matrix(self.A)
        )


def format_matrix(m) -> str:
    """One row per line, space separated, round-trippable decimals."""
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    return "".join(" ".join(f"{v:.17g}" for v in row) + "\n" for row in m)


def build_b_cyc(n_workers: int, s: int, rng: Rng) -> np.ndarray:
    if not 0 <= s < n_workers:
        raise ValueError(f"need 0 <= s < n_workers, got s={s}, n_workers={n_workers}")
    n = n_workers
    for _ in range(MAX_RETRIES + 1):
        h = rng.normal((s, n))
        if s:
            h[:, n - 1] = -h[:, : n - 1].sum(axis=1)
        b = np.zeros((n, n))
        try:
            for i in range(n):
                support = [(i + t) % n for t in range(s + 1)]
                b[i, support[0]] = 1.0
                if s:
                    coef, _ = solve_least_squares(h[:, support[1:]], h[:, support[0]])
                    b[i, support[1:]] = -coef
        except RankDeficientError:
            continue
        return b
    raise SchemeError(f"could not draw a nonsingular cyclic scheme after {MAX_RETRIES} retries")


def build_a(b, s: int):
    """Decode matrix with one row per ``(n - s)``-subset, lexicographic order."""
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    if comb(n, s) > MAX_SUBSETS:
        raise SchemeError(f"C({n}, {s}) exceeds the {MAX_SUBSETS} subset cap")
    rows = []
    index = {}
    ones = np.ones(b.shape[1])
    for r, subset in enumerate(itertools.combinations(range(n), n - s)):
        try:
            x, residual = solve_least_squares(b[list(subset), :], ones, form="row")
        except RankDeficientError as exc:
            raise SchemeError(f"rows {subset} of B are rank deficient", subset=subset) from exc
        if residual > FIT_TOLERANCE:
            raise SchemeError(
                f"decode fit for subset {subset} has residual {residual:.3e}", subset=subset
            )
        row = np.zeros(n)
        row[list(subset)] = x
        rows.append(row)
        index[subset] = r
    return np.array(rows), index


def build_scheme(n_workers: int, s: int, rng: Rng,
                 max_constant: float | None = MAX_CODING_CONSTANT) -> CodingScheme:
    """Cyclic ``B`` plus its decode matrix.

    ``B`` is redrawn if a decode fit fails or if ``||A||_inf * ||B||_2,inf``
    exceeds ``max_constant`` (``None`` accepts any valid draw). Near-singular
    draws give huge coefficients that amplify stale-gradient errors.
    """
    last = None
    for _ in range(MAX_REDRAWS):
        b = build_b_cyc(n_workers, s, rng)
        try:
            a, index = build_a(b, s)
        except SchemeError as exc:
            last = exc
            continue
        scheme = CodingScheme(n_workers, s, b, a, index)
        c = scheme.a_inf * scheme.b_2inf
        if max_constant is not None and c > max_constant:
            last = f"coding constant {c:.3g} above {max_constant:.3g}"
            continue
        return scheme
    raise SchemeError(f"no valid scheme for n={n_workers}, s={s}: {last}")


def select_decode_row(scheme: CodingScheme, connected, fallback=()):
    """Pick the decode row for a set of responding workers.

    With at least ``n - s`` responders the row of the lexicographically
    smallest responding subset is used. Otherwise the smallest subset that
    contains every responder is used (preferring subsets that cover more of
    ``fallback``, the workers with usable cached gradients), and only the
    responders are active.

    Returns ``(row, active)``.
    """
    if isinstance(connected, StragglerSet):
        connected = connected.connected
    conn = tuple(sorted(set(int(j) for j in connected)))
    need = scheme.n_workers - scheme.s
    if len(conn) >= need:
        subset = conn[:need]
        return scheme.subset_index[subset], subset
    extra = set(fallback) - set(conn)
    best = None
    best_cover = -1
    for subset, row in scheme.subset_index.items():
        if not set(conn) <= set(subset):
            continue
        cover = len(extra & set(subset))
        if cover > best_cover:
            best, best_cover = row, cover
    return best, conn


def decode(scheme: CodingScheme, row: int, coded_gradients, active) -> np.ndarray:
    missing = [j for j in active if j not in coded_gradients]
    if missing:
        raise DecodeError(f"no coded gradient from active workers {missing}")
    if not active:
        raise DecodeError("cannot decode from an empty active set")
    weights = scheme.A[row, list(active)]
    return weights @ np.array([coded_gradients[j] for j in active], dtype=np.float64)


def verify_scheme(scheme: CodingScheme) -> float:
    return float(np.abs(scheme.A @ scheme.B - 1.0).max())
