"""Distributed least-squares instances.

The global objective is ``f(x) = ||G x - y||^2`` (no 1/2 factor). Rows of
``G`` are cut contiguously into ``p`` partitions and each partition into
``n_i`` equal worker blocks, so ``f = sum_i f_i`` and ``f_i = sum_l f_il``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coding import format_matrix
from .errors import DimensionError, RankDeficientError
from .linalg import Rng, gaussian_matrix, power_iteration_lmax, solve_least_squares, uniform_vector


@dataclass(frozen=True)
class Partition:
    index: int
    blocks: list = field(repr=False)
    L: float

    @property
    def G(self):
        return np.vstack([g for g, _ in self.blocks])

    @property
    def y(self):
        return np.concatenate([y for _, y in self.blocks])

    @property
    def n_workers(self):
        return len(self.blocks)


@dataclass(frozen=True)
class Problem:
    G: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    x0: np.ndarray = field(repr=False)
    x_star: np.ndarray = field(repr=False)
    partitions: list = field(repr=False)

    @property
    def M(self):
        return self.G.shape[0]

    @property
    def N(self):
        return self.G.shape[1]

    @property
    def p(self):
        return len(self.partitions)

    @property
    def L(self):
        """Single Lipschitz constant covering every partition gradient."""
        return max(part.L for part in self.partitions)


def _slice_partitions(G, y, p, workers):
    M = G.shape[0]
    rows = M // (p * workers)
    parts = []
    for i in range(p):
        blocks = []
        for l in range(workers):
            start = (i * workers + l) * rows
            blocks.append((G[start : start + rows].copy(), y[start : start + rows].copy()))
        gi = np.vstack([g for g, _ in blocks])
        parts.append(Partition(i, blocks, 2.0 * power_iteration_lmax(gi.T @ gi)))
    return parts


def from_arrays(G, y, p: int, workers_per_partition: int, x0=None) -> Problem:
    """Wrap existing data; ``x0`` defaults to the least-squares solution."""
    G = np.asarray(G, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    M, N = G.shape
    if y.shape[0] != M:
        raise DimensionError(f"y has length {y.shape[0]}, G has {M} rows")
    if M % (p * workers_per_partition):
        raise DimensionError(
            f"M={M} is not divisible by p*workers={p * workers_per_partition}"
        )
    x_star, _ = solve_least_squares(G, y)
    if x0 is None:
        x0 = x_star.copy()
    return Problem(G, y, np.asarray(x0, dtype=np.float64), x_star,
                   _slice_partitions(G, y, p, workers_per_partition))


def generate(M: int, N: int, p: int, workers_per_partition: int, rng: Rng,
             scale: float | None = None, noise: float = 0.0) -> Problem:
    """Random planted instance: ``G`` Gaussian, ``x0 ~ U[-1, 1]``, ``y = G x0``.

    ``scale`` multiplies ``G`` (``None`` keeps standard normal entries).
    ``noise > 0`` adds Gaussian noise to ``y`` so the partitions disagree on
    their minimisers.
    """
    if M % (p * workers_per_partition):
        raise DimensionError(
            f"M={M} is not divisible by p*workers={p * workers_per_partition}"
        )
    if M <= N:
        raise DimensionError(f"need an overdetermined system, got M={M}, N={N}")
    for attempt in range(2):
        G = gaussian_matrix(M, N, rng)
        if scale is not None:
            G *= scale
        x0 = uniform_vector(N, -1.0, 1.0, rng)
        y = G @ x0
        if noise:
            y = y + noise * rng.normal(M)
        try:
            return from_arrays(G, y, p, workers_per_partition, x0=x0)
        except RankDeficientError:
            if attempt:
                raise
    raise AssertionError("unreachable")


def sub_gradient(problem: Problem, i: int, l: int, x) -> np.ndarray:
    g, y = problem.partitions[i].blocks[l]
    return 2.0 * g.T @ (g @ x - y)


def partition_gradient(problem: Problem, i: int, x) -> np.ndarray:
    part = problem.partitions[i]
    return sum(sub_gradient(problem, i, l, x) for l in range(part.n_workers))


def full_gradient(problem: Problem, x) -> np.ndarray:
    return sum(partition_gradient(problem, i, x) for i in range(problem.p))


def objective(problem: Problem, x) -> float:
    r = problem.G @ x - problem.y
    return float(r @ r)


def block_objective(problem: Problem, i: int, l: int, x) -> float:
    g, y = problem.partitions[i].blocks[l]
    r = g @ x - y
    return float(r @ r)


def partition_objective(problem: Problem, i: int, x) -> float:
    return sum(block_objective(problem, i, l, x)
               for l in range(problem.partitions[i].n_workers))


def lipschitz(problem: Problem, i: int) -> float:
    return problem.partitions[i].L


def partition_minimizer(problem: Problem, i: int) -> np.ndarray:
    part = problem.partitions[i]
    x, _ = solve_least_squares(part.G, part.y)
    return x


def strong_convexity(problem: Problem, i: int) -> tuple:
    """``(sigma_min, sigma_max)`` of ``f_i``: twice the extreme eigenvalues of ``G_i^T G_i``."""
    gi = problem.partitions[i].G
    h = gi.T @ gi
    top = power_iteration_lmax(h)
    bottom = top - power_iteration_lmax(top * np.eye(h.shape[0]) - h)
    return 2.0 * max(bottom, 0.0), 2.0 * top


def star_gradient_norm(problem: Problem, i: int) -> float:
    """``sqrt(sum_l ||grad f_il(x*)||^2)``; zero for consistent data."""
    return float(np.sqrt(sum(
        np.sum(sub_gradient(problem, i, l, problem.x_star) ** 2)
        for l in range(problem.partitions[i].n_workers)
    )))


def to_text(problem: Problem) -> str:
    p = problem.p
    workers = problem.partitions[0].n_workers
    return (
        f"srdo-problem {problem.M} {problem.N} {p} {workers}\n"
        + format_matrix(problem.G)
        + format_matrix(problem.y[None, :])
        + format_matrix(problem.x0[None, :])
    )


def from_text(text: str) -> Problem:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    tag, M, N, p, workers = lines[0].split()
    if tag != "srdo-problem":
        raise ValueError("not a problem bundle")
    M, N, p, workers = int(M), int(N), int(p), int(workers)
    rows = [np.array(ln.split(), dtype=np.float64) for ln in lines[1:]]
    if len(rows) != M + 2:
        raise DimensionError(f"expected {M + 2} data lines, got {len(rows)}")
    G = np.vstack(rows[:M])
    return from_arrays(G, rows[M], p, workers, x0=rows[M + 1])
