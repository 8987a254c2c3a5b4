"""The SRDO iteration: push, coded worker gradients, pull/decode, step, consensus.

One call to :meth:`Simulation.step` performs, for iteration ``k``:

1. push: every worker receives ``v_q(k - k')`` from a source server ``q``
   with staleness ``k' <= H`` (clamped to ``k`` early on);
2. workers compute coded gradients ``g_j = sum_l B[j, l] grad f_l``;
3. each server draws a partition and decodes from the responding workers
   according to the gradient-computation scenario;
4. ``x_i(k+1) = v_i(k) - alpha_k * decoded`` (or ``v_i(k)`` when nothing
   could be decoded);
5. ``v(k+1) = W x(k+1)``.

Alongside the iterate it records the perturbation
``R_i(k) = x_i(k+1) - (v_i(k) - alpha_k grad f_i(v_i(k)))`` and the
Cauchy-Schwarz bound on its norm.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .coding import CodingScheme, StragglerSet, decode, select_decode_row
from .errors import DivergenceError
from .linalg import Rng
from .metrics import IterationRecord, Trace, mean_state
from .network import (
    MixingPolicy,
    StragglerModel,
    Topology,
    build_w,
    sample_assignment,
    sample_delays,
    sample_stragglers,
)
from .problem import Problem, star_gradient_norm, sub_gradient


@dataclass
class ServerState:
    x: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class StepSchedule:
    """``alpha_k = (k + a) ** -theta``, optionally capped from above."""

    a: float = 1.0
    theta: float = 1.0
    cap: float | None = None

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must lie in (0, 1], got {self.theta}")
        if self.a <= 0.0:
            raise ValueError(f"offset a must be positive, got {self.a}")
        if self.cap is not None and self.cap <= 0.0:
            raise ValueError("step cap must be positive")

    def __call__(self, k: int) -> float:
        alpha = (k + self.a) ** -self.theta
        return min(alpha, self.cap) if self.cap is not None else alpha

    @staticmethod
    def cap_for(mu: float, gamma0: float, L: float) -> float:
        """Largest step with ``alpha^2 <= mu (1 - gamma0)^2 / (8 L^2)``."""
        return float(np.sqrt(mu * (1.0 - gamma0) ** 2 / (8.0 * L**2)))


@dataclass
class CacheEntry:
    g: np.ndarray
    source: int
    t_eval: int

    def staleness(self, k: int) -> int:
        return k - self.t_eval


@dataclass
class WorkerCache:
    """Last coded gradient delivered by each worker of one worker group."""

    entries: dict = field(default_factory=dict)

    def put(self, j: int, g, source: int, t_eval: int):
        self.entries[j] = CacheEntry(g, source, t_eval)

    def valid(self, k: int, H: int) -> dict:
        """Entries no older than ``H``; older ones are evicted."""
        for j in [j for j, e in self.entries.items() if e.staleness(k) > H]:
            del self.entries[j]
        return self.entries


def init(problem: Problem, topology: Topology, rng: Rng, common_init: bool = False):
    n, N = topology.n_servers, problem.N
    if common_init:
        v0 = rng.uniform(-1.0, 1.0, N)
        vs = [v0.copy() for _ in range(n)]
    else:
        vs = [rng.uniform(-1.0, 1.0, N) for _ in range(n)]
    return [ServerState(v.copy(), v) for v in vs]


def push(k: int, history, n_workers: int, model: StragglerModel, rng: Rng,
         n_servers: int, source: int | None = None):
    """Source server and staleness for each worker of one group.

    ``history`` holds ``v(k - len + 1) .. v(k)``, either as a sequence of
    server-state arrays or stacked into one ``(len, n, N)`` array. Returns
    ``(sources, delays, points)``.
    """
    sources = rng.integers(0, n_servers, size=n_workers)
    if source is not None:
        sources = np.full(n_workers, source)
    depth = len(history)
    delays = np.minimum(sample_delays(model, rng, n_workers), depth - 1)
    if not isinstance(history, np.ndarray):
        history = np.stack(list(history))
    points = history[depth - 1 - delays, sources]
    return sources, delays, points


def worker_gradient(problem: Problem, scheme: CodingScheme, partition: int, worker: int, v):
    row = scheme.B[worker]
    out = np.zeros(problem.N)
    for l in np.flatnonzero(row):
        out += row[l] * sub_gradient(problem, partition, int(l), v)
    return out


@dataclass
class DecodeResult:
    gradient: np.ndarray | None
    mode: str
    row: int | None = None
    active: tuple = ()
    missing: tuple = ()
    points: dict = field(default_factory=dict)


def pull_and_decode(k: int, scenario: str, scheme: CodingScheme, stragglers: StragglerSet,
                    fresh: dict, cache: WorkerCache | None = None, H: int = 0,
                    fresh_points: dict | None = None) -> DecodeResult:
    """Decode one partition gradient from the responding workers.

    ``fresh`` maps responding worker -> coded gradient. ``fresh_points``
    optionally maps worker -> ``(source, t_eval)``; it is carried through to
    ``DecodeResult.points`` for perturbation bookkeeping.

    ``mode`` is ``"full"`` when a whole ``n - s`` subset was used,
    ``"stale"`` when cached gradients completed the subset, ``"partial"``
    when terms are missing and ``"hold"`` when nothing could be decoded.
    """
    need = scheme.n_workers - scheme.s
    conn = stragglers.connected
    fresh_points = fresh_points or {}
    if len(conn) >= need:
        row, active = select_decode_row(scheme, conn)
        grads = {j: fresh[j] for j in active}
        pts = {j: fresh_points.get(j) for j in active}
        return DecodeResult(decode(scheme, row, grads, active), "full", row, active, (), pts)
    if scenario == "scenario1":
        raise AssertionError(
            f"scenario 1 needs at least {need} responders, got {len(conn)} at k={k}"
        )
    stale = {}
    if scenario == "scenario3" and cache is not None:
        stale = {j: e for j, e in cache.valid(k, H).items() if j not in conn}
    row, _ = select_decode_row(scheme, conn, fallback=stale)
    subset = scheme.subsets[row]
    used_stale = tuple(j for j in subset if j in stale)
    active = tuple(sorted(set(conn) | set(used_stale)))
    if not active:
        return DecodeResult(None, "hold")
    grads = {j: fresh[j] for j in conn}
    grads.update({j: stale[j].g for j in used_stale})
    pts = {j: fresh_points.get(j) for j in conn}
    pts.update({j: (stale[j].source, stale[j].t_eval) for j in used_stale})
    missing = tuple(j for j in subset if j not in active)
    mode = "partial" if missing else ("stale" if used_stale else "full")
    return DecodeResult(decode(scheme, row, grads, active), mode, row, active, missing, pts)


def _row_norms(a):
    return np.sqrt(np.einsum("ij,ij->i", a, a))


class Simulation:
    """One deterministic SRDO run.

    ``schemes[i]`` is the coding scheme of partition ``i``; a list of schemes
    per partition gives that many independent worker groups (replicas) for
    the partition, and server ``m`` pulling partition ``i`` uses replica
    ``m % replicas``.
    """

    def __init__(self, problem: Problem, topology: Topology, schemes, model: StragglerModel,
                 policy: MixingPolicy, schedule: StepSchedule, rng: Rng, *,
                 common_init: bool = False, push_source: str = "uniform", tol: float = 0.0,
                 audit: bool = False, diverge_ae: float = 1e12):
        if topology.p_partitions != problem.p:
            raise ValueError("topology and problem disagree on the number of partitions")
        self.problem = problem
        self.topology = topology
        self.model = model
        self.policy = policy
        self.schedule = schedule
        self.tol = tol
        self.audit = audit
        self.diverge_ae = diverge_ae
        if push_source not in ("uniform", "assigned"):
            raise ValueError(f"unknown push source {push_source!r}")
        self.push_source = push_source
        groups = [s if isinstance(s, (list, tuple)) else [s] for s in schemes]
        if len(groups) != problem.p:
            raise ValueError("need one scheme (or replica list) per partition")
        self.replicas = len(groups[0])
        if any(len(g) != self.replicas for g in groups):
            raise ValueError("every partition needs the same number of replicas")
        self.groups = [(i, sch) for i, g in enumerate(groups) for sch in g]
        for i, sch in self.groups:
            if sch.n_workers != problem.partitions[i].n_workers:
                raise ValueError(f"scheme for partition {i} has the wrong worker count")

        self.streams = {name: rng.spawn(name)
                        for name in ("init", "push", "straggle", "assign")}
        states = init(problem, topology, self.streams["init"], common_init)
        self.X = np.vstack([s.x for s in states])
        self.V = np.vstack([s.v for s in states])
        self.history = deque([self.V.copy()], maxlen=model.H + 1)
        self.caches = [WorkerCache() for _ in self.groups]
        self.W = build_w(policy, topology.server_graph, 0)
        self.k = 0
        self.L = problem.L

        # 2 G_l^T G_l and 2 G_l^T y_l per block, folded through B per worker
        self._hess = []
        self._lin = []
        self._coded_h = []
        self._coded_c = []
        for i, sch in self.groups:
            blocks = problem.partitions[i].blocks
            q = np.stack([2.0 * g.T @ g for g, _ in blocks])
            c = np.stack([2.0 * g.T @ y for g, y in blocks])
            self._hess.append(q)
            self._lin.append(c)
            self._coded_h.append(np.einsum("jl,lnm->jnm", sch.B, q))
            self._coded_c.append(sch.B @ c)
        self._part_h = [q.sum(axis=0) for q in self._hess]
        self._part_c = [c.sum(axis=0) for c in self._lin]
        self._star = [star_gradient_norm(problem, i) for i in range(problem.p)]
        self._x0_norm = float(np.linalg.norm(problem.x0))
        if self._x0_norm == 0.0:
            raise ValueError("reference vector x0 is zero; AE and CE are undefined")
        self._assigned_source = {}
        if topology.fixed_assignment is not None:
            for m, pid in enumerate(topology.fixed_assignment):
                if pid:
                    self._assigned_source.setdefault(pid - 1, m)

    @property
    def states(self):
        return [ServerState(x.copy(), v.copy()) for x, v in zip(self.X, self.V)]

    def partition_grad(self, g: int, x):
        return self._part_h[g] @ x - self._part_c[g]

    def coded_grads(self, g: int, points):
        """Coded gradient of every worker in group ``g`` at its own point."""
        return np.einsum("jnm,jm->jn", self._coded_h[g], points) - self._coded_c[g]

    def step(self) -> IterationRecord:
        k = self.k
        prob, model = self.problem, self.model
        n = self.topology.n_servers
        alpha = self.schedule(k)
        V = self.V

        window = np.stack(self.history)
        diff = window - prob.x_star
        d_window = float(np.sqrt(np.einsum("hnd,hnd->hn", diff, diff).max()))

        # push and worker computation, one pass per worker group
        group_info = []
        for gi, (i, sch) in enumerate(self.groups):
            src = self._assigned_source.get(i) if self.push_source == "assigned" else None
            sources, delays, points = push(k, window, sch.n_workers, model,
                                           self.streams["push"], n, src)
            grads = self.coded_grads(gi, points)
            strag = sample_stragglers(model, i, sch.n_workers, k, self.streams["straggle"])
            group_info.append((sources, delays, points, grads, strag))

        assignment = sample_assignment(self.topology, k, self.streams["assign"])

        X_new = V.copy()
        r_norm = np.zeros(n)
        r_bound = np.zeros(n)
        gaps = [0.0]
        modes = []
        grad_max = 0.0
        for m in range(n):
            pid = int(assignment[m])
            if pid == 0:
                modes.append("hold")
                continue
            i = pid - 1
            gi = i * self.replicas + (m % self.replicas)
            sch = self.groups[gi][1]
            sources, delays, points, grads, strag = group_info[gi]
            fresh = {j: grads[j] for j in strag.connected}
            fpts = {j: (int(sources[j]), k - int(delays[j])) for j in strag.connected}
            res = pull_and_decode(k, model.mode, sch, strag, fresh, self.caches[gi],
                                  model.H, fpts)
            modes.append(res.mode)
            if res.gradient is None:
                continue
            v_m = V[m]
            X_new[m] = v_m - alpha * res.gradient
            exact = self.partition_grad(gi, v_m)
            grad_max = max(grad_max, float(np.sqrt(exact @ exact)))
            r = X_new[m] - (v_m - alpha * exact)
            r_norm[m] = np.sqrt(r @ r)
            r_bound[m] = self._r_bound(alpha, sch, res, i, v_m, d_window)
            if self.audit:
                gaps.append(self._r_formula_gap(alpha, gi, sch, res, v_m, r))

        if model.mode == "scenario3":
            # workers that responded refresh their cache entries
            for gi, (sources, delays, _points, grads, strag) in enumerate(group_info):
                for j in strag.connected:
                    self.caches[gi].put(j, grads[j], int(sources[j]), k - int(delays[j]))

        V_new = self.W @ X_new
        if not (np.all(np.isfinite(X_new)) and np.all(np.isfinite(V_new))):
            raise DivergenceError(k, float("nan"))
        strag_counts = np.array([info[4].n_stragglers for info in group_info])
        xbar = mean_state(X_new)
        x_err = _row_norms(X_new - prob.x0)
        rec = IterationRecord(
            k=k,
            alpha=alpha,
            ae=float(x_err.max()) / self._x0_norm,
            ce=float(_row_norms(X_new - xbar).max()) / self._x0_norm,
            objective=float(np.sum((prob.G @ xbar - prob.y) ** 2)),
            x_err=x_err,
            v_err=_row_norms(V_new - prob.x0),
            r_norm=r_norm,
            r_bound=r_bound,
            eps_norm=_row_norms(X_new - V),
            partition=np.asarray(assignment).copy(),
            stragglers=strag_counts,
            mode=tuple(modes),
            v_sq_dist=float(np.sum((V_new - prob.x_star) ** 2)),
            eps_max=float(_row_norms(V_new - V).max()),
            r_formula_gap=max(gaps),
            grad_norm_max=grad_max,
        )
        if rec.ae > self.diverge_ae:
            raise DivergenceError(k, rec.ae, reason=f"AE above {self.diverge_ae:.3g}")
        self.X, self.V = X_new, V_new
        self.history.append(V_new.copy())
        self.k += 1
        return rec

    def _r_bound(self, alpha, sch, res: DecodeResult, i, v_m, d_window):
        """Cauchy-Schwarz bound on ``||R||`` for the decode that was used.

        Complete decodes: ``alpha ||A||_inf ||B||_2,inf 2 L max ||v_q - x*||``
        over the staleness window. Decodes with missing terms add
        ``alpha |A_missing| ||B||_2,inf (L ||v_i - x*|| + G*)`` and use the
        received coefficients only for the first term; ``G*`` is the
        block-gradient norm at ``x*`` (zero for consistent data).
        """
        b = sch.b_2inf
        L = self.L
        if res.mode in ("full", "stale"):
            return alpha * sch.a_inf * b * 2.0 * L * d_window
        a_row = np.abs(sch.A[res.row])
        a_recv = float(a_row[list(res.active)].sum())
        a_miss = float(a_row[list(res.missing)].sum())
        diff = v_m - self.problem.x_star
        d_self = float(np.sqrt(diff @ diff))
        return alpha * b * (a_recv * 2.0 * L * d_window
                            + a_miss * (L * d_self + self._star[i]))

    def _r_formula_gap(self, alpha, gi, sch, res: DecodeResult, v_m, r_def):
        """Distance between ``R`` by definition and by the decode expansion."""
        a_row = sch.A[res.row]
        here = self.coded_grads(gi, np.broadcast_to(v_m, (sch.n_workers, v_m.size)))
        r = np.zeros_like(v_m)
        for j in res.active:
            src, t_eval = res.points[j]
            point = self.history[-1 - (self.k - t_eval)][src]
            there = self._coded_h[gi][j] @ point - self._coded_c[gi][j]
            r -= alpha * a_row[j] * (there - here[j])
        for j in res.missing:
            r += alpha * a_row[j] * here[j]
        scale = max(float(np.linalg.norm(r_def)), 1.0)
        return float(np.linalg.norm(r - r_def)) / scale

    def run(self, max_iters: int) -> Trace:
        trace = Trace(self.problem, self.schedule,
                      meta={"schemes": [s for _, s in self.groups], "L": self.L})
        for _ in range(max_iters):
            try:
                rec = self.step()
            except DivergenceError as exc:
                trace.status = "diverged"
                exc.trace = trace
                raise
            trace.records.append(rec)
            if self.tol > 0 and rec.eps_max <= self.tol:
                trace.status = "converged"
                return trace
        trace.status = "max_iters"
        return trace
