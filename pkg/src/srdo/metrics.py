"""Error metrics, traces, and numeric checkers for the convergence bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SrdoError


def ae(states, x0) -> float:
    """Absolute error ``max_i ||x_i - x0|| / ||x0||``."""
    x = _stack(states)
    scale = float(np.linalg.norm(x0))
    if scale == 0.0:
        raise SrdoError("absolute error is undefined for a zero reference vector")
    return float(np.linalg.norm(x - np.asarray(x0), axis=1).max() / scale)


def ce(states, x0) -> float:
    """Consensus error ``max_i ||x_i - mean(x)|| / ||x0||``."""
    x = _stack(states)
    scale = float(np.linalg.norm(x0))
    if scale == 0.0:
        raise SrdoError("consensus error is undefined for a zero reference vector")
    return float(np.linalg.norm(x - mean_state(x), axis=1).max() / scale)


def mean_state(x) -> np.ndarray:
    """Row mean, exact when all rows are equal (shifted by the first row)."""
    return x[0] + (x - x[0]).mean(axis=0)


def _stack(states):
    if isinstance(states, np.ndarray):
        return np.atleast_2d(states)
    return np.vstack([getattr(s, "x", s) for s in states])


@dataclass
class IterationRecord:
    k: int
    alpha: float
    ae: float
    ce: float
    objective: float
    x_err: np.ndarray
    v_err: np.ndarray
    r_norm: np.ndarray
    r_bound: np.ndarray
    eps_norm: np.ndarray
    partition: np.ndarray
    stragglers: np.ndarray
    mode: tuple
    v_sq_dist: float
    eps_max: float
    r_formula_gap: float
    grad_norm_max: float

    @property
    def max_r(self) -> float:
        return float(self.r_norm.max()) if self.r_norm.size else 0.0

    @property
    def max_r_bound(self) -> float:
        return float(self.r_bound.max()) if self.r_bound.size else 0.0

    @property
    def total_stragglers(self) -> int:
        return int(self.stragglers.sum())

    @property
    def decodes(self) -> int:
        return sum(m != "hold" for m in self.mode)

    @property
    def r_violations(self) -> int:
        slack = 1e-9 * np.maximum(self.r_bound, 1e-300) + 1e-15
        return int(np.sum(self.r_norm > self.r_bound + slack))


@dataclass
class Trace:
    problem: object = field(repr=False)
    schedule: object
    records: list = field(default_factory=list)
    status: str = "running"
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    @property
    def ae(self) -> np.ndarray:
        return self.series("ae")

    @property
    def ce(self) -> np.ndarray:
        return self.series("ce")

    @property
    def final_ae(self) -> float:
        return self.records[-1].ae if self.records else math.nan

    @property
    def final_ce(self) -> float:
        return self.records[-1].ce if self.records else math.nan

    @property
    def r_violations(self) -> int:
        return sum(r.r_violations for r in self.records)


# --- martingale lemma checkers -------------------------------------------------


@dataclass(frozen=True)
class MartingaleParams:
    a1: float
    a2: tuple
    a3: float = 0.0
    B: int = 0
    k_star: int = 0

    def __post_init__(self):
        a2 = tuple(float(v) for v in self.a2)
        object.__setattr__(self, "a2", a2)
        if self.a1 < 0 or self.a3 < 0 or any(v < 0 for v in a2):
            raise ValueError("martingale coefficients must be non-negative")
        if any(b > a + 1e-15 for a, b in zip(a2, a2[1:])):
            raise ValueError("a2 must be non-increasing")
        if a2 and self.a1 + a2[0] > 1.0 + 1e-15:
            raise ValueError("need a1 + a2[0] <= 1")
        if self.B < 0:
            raise ValueError("window length B must be non-negative")

    def a2_at(self, k: int) -> float:
        return self.a2[min(k, len(self.a2) - 1)]

    @property
    def q(self) -> float:
        """``a1 + a2`` at the start index; dominates every later step."""
        return self.a1 + self.a2_at(self.k_star)

    @property
    def rho(self) -> float:
        return self.q ** (1.0 / (self.B + 1))

    @property
    def eta(self) -> float:
        if self.a3 == 0.0:
            return 0.0
        if self.q >= 1.0:
            return math.inf
        return self.a3 / (1.0 - self.q)


@dataclass
class MartingaleReport:
    ok: bool
    rho: float
    eta: float
    V0: float
    hypothesis_violation: int | None = None
    envelope_violation: int | None = None
    checked: int = 0

    @property
    def kind(self) -> str:
        if self.hypothesis_violation is not None:
            return "hypothesis"
        if self.envelope_violation is not None:
            return "envelope"
        return "ok"


def check_martingale_decay(v, params: MartingaleParams, u=None, rtol: float = 1e-12):
    """Check the windowed geometric decay of a non-negative sequence.

    Hypothesis, for every ``k >= k_star``::

        v[k+1] <= a1 v[k] + a2[k] max(u[k-B..k]) + a3

    with ``u`` defaulting to ``v``. If it holds, the envelope
    ``v[k] <= rho**(k - k_star) * V0 + eta`` must hold for every
    ``k >= k_star - B`` (on ``max(v, u)`` when ``u`` is given), where
    ``rho = (a1 + a2[k_star])**(1/(B+1))``, ``eta = a3 / (1 - a1 - a2[k_star])`` and ``V0`` is the smallest constant
    that makes the base window ``k_star-B..k_star`` satisfy it.

    Returns a :class:`MartingaleReport`; a failing hypothesis is reported as
    such and the envelope is not evaluated.
    """
    v = np.asarray(v, dtype=np.float64)
    u = v if u is None else np.asarray(u, dtype=np.float64)
    p = params
    ks, B = p.k_star, p.B
    rho, eta = p.rho, p.eta
    for k in range(ks, len(v) - 1):
        lo = max(0, k - B)
        rhs = p.a1 * v[k] + p.a2_at(k) * u[lo : k + 1].max() + p.a3
        if v[k + 1] > rhs + rtol * max(abs(rhs), 1.0):
            return MartingaleReport(False, rho, eta, math.nan, hypothesis_violation=k)
    base = range(max(0, ks - B), min(ks, len(v) - 1) + 1)
    v0 = 0.0
    for j in base:
        excess = max(v[j], u[j]) - eta
        if excess > 0:
            v0 = max(v0, excess / rho ** (j - ks)) if rho > 0 else max(v0, excess)
    w = np.maximum(v, u)
    checked = 0
    for k in range(max(0, ks - B), len(v)):
        env = (rho ** (k - ks) if rho > 0 else float(k <= ks)) * v0 + eta
        checked += 1
        if w[k] > env + rtol * max(env, 1.0):
            return MartingaleReport(False, rho, eta, v0, envelope_violation=k, checked=checked)
    return MartingaleReport(True, rho, eta, v0, checked=checked)


def simulate_windowed_recursion(v_init, params: MartingaleParams, steps: int):
    """Drive ``v[k+1] = a1 v[k] + a2[k] max(v[k-B..k]) + a3`` at equality."""
    v = list(np.asarray(v_init, dtype=np.float64))
    for k in range(len(v) - 1, len(v) - 1 + steps):
        lo = max(0, k - params.B)
        v.append(params.a1 * v[k] + params.a2_at(k) * max(v[lo : k + 1]) + params.a3)
    return np.array(v)


# --- rate envelopes ------------------------------------------------------------


def coding_constant(schemes) -> float:
    """``max_i ||A_i||_inf * ||B_i||_{2,inf}`` over partition schemes."""
    return max(s.a_inf * s.b_2inf for s in schemes)


def type1_factor(alpha, L: float, mu: float, gamma, c_ab: float):
    """Per-step factor ``1 - mu + 4 L a c (1 + 2 L a c) / (sum gamma)^2``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    g = sum(gamma[1:])
    t = L * alpha * c_ab
    return 1.0 - mu + 4.0 * t * (1.0 + 2.0 * t) / g**2


@dataclass
class EnvelopeReport:
    factor: np.ndarray
    envelope: np.ndarray
    measured: np.ndarray
    V0: float
    k0: int
    exceed: list

    @property
    def contracting_from(self):
        idx = np.flatnonzero(self.factor < 1.0)
        return int(idx[0]) if idx.size else None


def rate_envelope_type1(trace: Trace, L: float, mu: float, gamma, schemes=None,
                        c_ab: float | None = None, k0: int = 0) -> EnvelopeReport:
    """Multiplicative rate envelope for ``sum_i ||v_i(k) - x*||^2``.

    ``V0`` is fitted so the envelope matches the measurement at ``k0``.
    Iterations where the measurement exceeds the envelope are listed in
    ``exceed``; this is a diagnostic, not an assertion.
    """
    if c_ab is None:
        c_ab = coding_constant(schemes)
    alpha = trace.series("alpha")
    measured = trace.series("v_sq_dist")
    factor = type1_factor(alpha, L, mu, gamma, c_ab)
    env = np.full_like(measured, np.nan)
    exceed = []
    if len(measured) > k0:
        v0 = float(measured[k0])
        env[k0] = v0
        with np.errstate(over="ignore"):
            for k in range(k0 + 1, len(measured)):
                env[k] = env[k - 1] * factor[k]
        exceed = [int(k) for k in range(k0, len(measured)) if measured[k] > env[k] * (1 + 1e-12)]
    else:
        v0 = math.nan
    return EnvelopeReport(factor, env, measured, v0, k0, exceed)


def eta_estimate(*, n: int, p: int, alpha: float, L: float, mu: float, gamma,
                 sigma_min: float, sigma_max: float, c_ab: float, spread_sq: float,
                 n_offset: int) -> float:
    """Closed-form limit bound for ``sum_i ||v_i - x*||^2`` (inconsistent partitions).

    ``spread_sq`` is ``max_i ||x_i_min - x*||^2`` over the partition
    minimisers and ``n_offset`` the number of partitions whose minimum value
    lies strictly below their value at ``x*``. ``sigma_min`` is accepted for
    signature symmetry with the strong-convexity moduli; the closed form uses
    only ``sigma_max``.
    """
    g = np.asarray(gamma, dtype=np.float64)
    parts = g[1:]
    gmax = float(parts.max())
    nz = parts[parts > 0]
    gmin = float(nz.min()) if nz.size else 0.0
    one_minus_g0 = 1.0 - float(g[0])
    t = L * alpha * c_ab
    denom = mu - 4.0 * t * (1.0 + 2.0 * t) / one_minus_g0**2
    if not denom > 0.0:
        raise SrdoError(f"eta formula needs a positive denominator, got {denom:.4g}")
    numer = (
        2.0 * n * alpha * L * min(n_offset * gmax, 1.0)
        + alpha * p * gmin * n * sigma_max
        + 2.0 * L * n * min(p * gmax, 1.0) * alpha**2 / one_minus_g0**2
    ) * spread_sq
    return numer / denom


# --- scenario comparison ---------------------------------------------------------


@dataclass
class OrderingReport:
    mean_ae: dict
    per_seed: dict
    ordered: bool
    per_seed_ordered: dict

    def lines(self):
        out = [f"{name}: mean final AE {val:.6e}" for name, val in self.mean_ae.items()]
        out.append("ordering scenario1 <= scenario3 <= scenario2: "
                   + ("holds" if self.ordered else "VIOLATED"))
        bad = [s for s, ok in self.per_seed_ordered.items() if not ok]
        if bad:
            out.append(f"per-seed ordering violated for seeds {bad}")
        return out


def scenario_residual_compare(final_ae: dict) -> OrderingReport:
    """``final_ae`` maps scenario name to ``{seed: final AE}``."""
    names = ("scenario1", "scenario3", "scenario2")
    mean = {s: float(np.mean(list(final_ae[s].values()))) for s in names}
    seeds = sorted(final_ae["scenario1"])
    per_seed_ok = {
        seed: final_ae["scenario1"][seed] <= final_ae["scenario3"][seed] <= final_ae["scenario2"][seed]
        for seed in seeds
    }
    ordered = mean["scenario1"] <= mean["scenario3"] <= mean["scenario2"]
    return OrderingReport(mean, final_ae, ordered, per_seed_ok)
