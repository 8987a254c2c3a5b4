"""Parameter-server topology: partition choice, stragglers, delays, mixing."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from .coding import StragglerSet
from .errors import GraphError
from .linalg import Rng

log = logging.getLogger(__name__)

SCENARIOS = ("scenario1", "scenario2", "scenario3")
MIXING_KINDS = ("doubly_stochastic_metropolis", "row_stochastic_column_bounded")


def complete_graph(n: int) -> np.ndarray:
    adj = np.ones((n, n), dtype=bool)
    np.fill_diagonal(adj, False)
    return adj


def graph_from_edges(n: int, edges) -> np.ndarray:
    adj = np.zeros((n, n), dtype=bool)
    for a, b in edges:
        if a == b:
            continue
        adj[a, b] = adj[b, a] = True
    return adj


def is_connected(adj) -> bool:
    n = adj.shape[0]
    if n == 0:
        return False
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adj[u]):
            if v not in seen:
                seen.add(int(v))
                queue.append(int(v))
    return len(seen) == n


@dataclass(frozen=True)
class Topology:
    n_servers: int
    p_partitions: int
    gamma: tuple
    server_graph: np.ndarray
    fixed_assignment: tuple | None = None

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=np.float64)
        if g.shape != (self.p_partitions + 1,):
            raise ValueError(f"gamma needs {self.p_partitions + 1} entries, got {g.size}")
        if np.any(g < 0) or abs(g.sum() - 1.0) > 1e-12:
            raise ValueError(f"gamma must be a probability vector, got {tuple(g)}")
        object.__setattr__(self, "gamma", tuple(float(v) for v in g))
        adj = np.asarray(self.server_graph, dtype=bool)
        if adj.shape != (self.n_servers, self.n_servers):
            raise ValueError("server graph does not match the number of servers")
        if not is_connected(adj):
            raise GraphError("server graph is disconnected")
        object.__setattr__(self, "server_graph", adj)
        if self.fixed_assignment is not None:
            fa = tuple(int(v) for v in self.fixed_assignment)
            if len(fa) != self.n_servers or any(not 0 <= v <= self.p_partitions for v in fa):
                raise ValueError(f"invalid fixed assignment {fa}")
            object.__setattr__(self, "fixed_assignment", fa)

    @property
    def gamma_min(self) -> float:
        """Smallest nonzero partition probability; the no-partition entry is excluded."""
        nz = [g for g in self.gamma[1:] if g > 0]
        return min(nz) if nz else 0.0

    @property
    def gamma_max(self) -> float:
        return max(self.gamma[1:])

    def warn_if_p_too_large(self) -> bool:
        gmin = self.gamma_min
        if gmin > 0 and self.p_partitions >= 1.0 / gmin:
            log.warning("p=%d violates p < 1/gamma_min=%.4g", self.p_partitions, 1.0 / gmin)
            return True
        return False


def uniform_topology(n_servers: int, p: int, fixed: bool = True, graph=None) -> Topology:
    gamma = (0.0,) + (1.0 / p,) * p
    fa = tuple((i % p) + 1 for i in range(n_servers)) if fixed else None
    adj = complete_graph(n_servers) if graph is None else graph
    return Topology(n_servers, p, gamma, adj, fa)


def sample_assignment(topology: Topology, k: int, rng: Rng) -> np.ndarray:
    """Partition id per server (1-based, 0 means no partition this step)."""
    if topology.fixed_assignment is not None:
        return np.array(topology.fixed_assignment)
    return np.asarray(rng.choice(topology.p_partitions + 1, p=topology.gamma,
                                 size=topology.n_servers))


@dataclass(frozen=True)
class StragglerModel:
    s_per_partition: tuple
    T: int = 0
    H: int = 0
    mode: str = "scenario1"
    straggle_prob: float = 0.0
    fresh_push: bool = False

    def __post_init__(self):
        if self.mode not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.mode!r}")
        if not 0.0 <= self.straggle_prob <= 1.0:
            raise ValueError("straggle_prob must lie in [0, 1]")
        if self.H < 0 or self.T < 0:
            raise ValueError("H and T must be non-negative")
        object.__setattr__(self, "s_per_partition", tuple(int(s) for s in self.s_per_partition))


def _clamp(mask, priority, s):
    idx = mask.nonzero()[0]
    if idx.size <= s:
        return mask
    keep = idx[np.argsort(priority[idx], kind="stable")[:s]]
    out = np.zeros_like(mask)
    out[keep] = True
    return out


def sample_stragglers(model: StragglerModel, partition: int, n_workers: int, k: int,
                      rng: Rng) -> StragglerSet:
    """Responding workers of one partition at step ``k``.

    Every call draws the same number of variates whatever the mode, so runs
    that differ only in scenario see the same underlying straggler process.
    Scenario 1 clamps each step to at most ``s`` stragglers; scenarios 2 and
    3 clamp only the first step of each length-``T`` window (``T <= 1``
    clamps every step).
    """
    s = model.s_per_partition[partition]
    u = rng.random(2 * n_workers)
    mask = u[:n_workers] < model.straggle_prob
    if model.mode == "scenario1" or model.T <= 1 or k % model.T == 0:
        mask = _clamp(mask, u[n_workers:], s)
    return StragglerSet(tuple((~mask).nonzero()[0].tolist()), n_workers)


def sample_delay(model: StragglerModel, rng: Rng) -> int:
    return int(sample_delays(model, rng, 1)[0])


def sample_delays(model: StragglerModel, rng: Rng, size: int) -> np.ndarray:
    """Push staleness for ``size`` workers, uniform on ``0..H``."""
    d = rng.integers(0, model.H + 1, size=size)
    return np.zeros(size, dtype=int) if model.fresh_push else d


@dataclass(frozen=True)
class MixingPolicy:
    kind: str = "doubly_stochastic_metropolis"
    mu: float = 0.0
    nu: float | None = None

    def __post_init__(self):
        if self.kind not in MIXING_KINDS:
            raise ValueError(f"unknown mixing policy {self.kind!r}")
        if not 0.0 <= self.mu < 1.0:
            raise ValueError("mu must lie in [0, 1)")
        if self.nu is not None and not 0.0 < self.nu < 1.0:
            raise ValueError("nu must lie in (0, 1)")


def build_w(policy: MixingPolicy, server_graph, k: int = 0) -> np.ndarray:
    """Consensus weights for step ``k`` (the graph is static, so ``k`` is unused).

    Metropolis: ``w_ij = 1 / (1 + max(deg_i, deg_j))`` on edges, remainder on
    the diagonal; symmetric and doubly stochastic. Row-stochastic variant:
    equal-neighbour weights ``1 / (1 + deg_i)``; rows sum to one, columns do
    not.
    """
    adj = np.asarray(server_graph, dtype=bool)
    if not is_connected(adj):
        raise GraphError("server graph is disconnected")
    n = adj.shape[0]
    deg = adj.sum(axis=1)
    if policy.kind == "doubly_stochastic_metropolis":
        w = np.where(adj, 1.0 / (1.0 + np.maximum.outer(deg, deg)), 0.0)
    else:
        w = np.where(adj, 1.0 / (1.0 + deg)[:, None], 0.0)
    np.fill_diagonal(w, 0.0)
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    nu = policy.nu if policy.nu is not None else 1.0 / n
    if w[w > 0].min() < nu - 1e-12:
        raise ValueError(f"mixing weight {w[w > 0].min():.3g} below floor nu={nu:.3g}")
    return w


def mixing_report(w, policy: MixingPolicy) -> dict:
    """Largest deviations from the policy's invariants."""
    n = w.shape[0]
    nu = policy.nu if policy.nu is not None else 1.0 / n
    cols = w.sum(axis=0)
    out = {
        "row_sum_dev": float(np.abs(w.sum(axis=1) - 1.0).max()),
        "min_positive": float(w[w > 0].min()),
        "nu": nu,
    }
    if policy.kind == "doubly_stochastic_metropolis":
        out["col_sum_dev"] = float(np.abs(cols - 1.0).max())
    else:
        out["col_sum_excess"] = float((cols - (1.0 - policy.mu)).max())
    return out
