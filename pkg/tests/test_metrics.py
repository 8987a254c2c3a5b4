import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srdo.coding import build_scheme
from srdo.engine import Simulation, StepSchedule
from srdo.errors import SrdoError
from srdo.linalg import Rng
from srdo.metrics import (
    MartingaleParams,
    ae,
    ce,
    check_martingale_decay,
    coding_constant,
    eta_estimate,
    rate_envelope_type1,
    scenario_residual_compare,
    simulate_windowed_recursion,
    type1_factor,
)
from srdo.network import MixingPolicy, StragglerModel, graph_from_edges, uniform_topology
from srdo.problem import generate, partition_minimizer, strong_convexity


# --- AE / CE ---------------------------------------------------------------------------


def test_ae_ce_at_solution(rng):
    x0 = rng.normal(4)
    states = [x0.copy() for _ in range(3)]
    assert ae(states, x0) == 0.0 and ce(states, x0) == 0.0


def test_ce_zero_without_optimality(rng):
    x0 = rng.normal(4)
    states = np.tile(x0 + 1.0, (3, 1))
    assert ce(states, x0) == 0.0 and ae(states, x0) > 0.0


def test_symmetric_pair():
    x0 = np.array([1.0, 0.0])
    delta = 0.25
    states = [x0 + [delta, 0], x0 - [delta, 0]]
    assert ae(states, x0) == pytest.approx(delta)
    assert ce(states, x0) == pytest.approx(delta)


def test_zero_reference_rejected():
    with pytest.raises(SrdoError):
        ae([np.ones(2)], np.zeros(2))
    with pytest.raises(SrdoError):
        ce([np.ones(2)], np.zeros(2))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**32))
def test_ae_ce_permutation_invariant(n, dim, seed):
    r = Rng(seed)
    x = r.normal((n, dim))
    x0 = r.normal(dim) + 0.1
    perm = r.permutation(n)
    assert ae(x[perm], x0) == pytest.approx(ae(x, x0), rel=1e-15)
    assert ce(x[perm], x0) == pytest.approx(ce(x, x0), rel=1e-12, abs=1e-15)
    assert ae(x, x0) >= 0 and ce(x, x0) >= 0


# --- martingale lemmas ------------------------------------------------------------------


def test_martingale_tight_geometric():
    p = MartingaleParams(0.5, (0.25,), 0.0, 0, 0)
    v = 0.75 ** np.arange(50)
    rep = check_martingale_decay(v, p)
    assert rep.ok and rep.rho == pytest.approx(0.75) and rep.V0 == pytest.approx(1.0)


def test_martingale_fixed_point():
    p = MartingaleParams(0.3, (0.2,), 0.5, 2, 0)
    assert p.eta == pytest.approx(1.0)
    rep = check_martingale_decay(np.full(40, p.eta), p)
    assert rep.ok and rep.V0 == 0.0


def test_martingale_hypothesis_failure_is_named():
    p = MartingaleParams(0.5, (0.25,), 0.0, 0, 0)
    v = np.array([1.0, 0.75, 0.9, 0.5])
    rep = check_martingale_decay(v, p)
    assert not rep.ok and rep.kind == "hypothesis" and rep.hypothesis_violation == 1


def test_martingale_envelope_failure_is_detected():
    # a sequence that ignores the hypothesis check cannot be built, so feed
    # one where u lies while v alone would pass
    p = MartingaleParams(0.0, (0.5,), 0.0, 0, 0)
    v = np.array([1.0, 0.5, 0.25, 0.125])
    u = np.array([1.0, 0.5, 0.25, 10.0])
    rep = check_martingale_decay(v, p, u=u)
    assert rep.kind == "envelope" and rep.envelope_violation == 3


def test_martingale_params_validation():
    with pytest.raises(ValueError):
        MartingaleParams(0.6, (0.5,))
    with pytest.raises(ValueError):
        MartingaleParams(0.1, (0.1, 0.2))
    with pytest.raises(ValueError):
        MartingaleParams(-0.1, (0.1,))
    assert MartingaleParams(0.5, (0.5,), 1.0).eta == math.inf


def random_params(r, B, with_a3):
    a1 = r.uniform(0.0, 0.9)
    start = r.uniform(0.0, 1.0 - a1)
    a2 = tuple(np.sort(r.uniform(0.0, start, 30))[::-1])
    a2 = (start,) + a2
    a3 = r.uniform(0.0, 1.0) if with_a3 else 0.0
    return MartingaleParams(a1, a2, a3, B, int(r.integers(0, 5)) + B)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 5), st.booleans(), st.integers(0, 2**32))
def test_martingale_boundary_recursions_never_violate(B, with_a3, seed):
    r = Rng(seed)
    p = random_params(r, B, with_a3)
    v = simulate_windowed_recursion(r.uniform(0.0, 5.0, p.k_star + 1), p, 40)
    rep = check_martingale_decay(v, p, rtol=1e-9)
    assert rep.ok, rep


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 3), st.integers(0, 2**32))
def test_martingale_slack_sequences_never_violate(B, seed):
    r = Rng(seed)
    p = random_params(r, B, True)
    v = list(r.uniform(0.0, 5.0, p.k_star + 1))
    for k in range(p.k_star, p.k_star + 40):
        rhs = p.a1 * v[k] + p.a2_at(k) * max(v[max(0, k - B) : k + 1]) + p.a3
        v.append(rhs * r.uniform(0.0, 1.0))
    assert check_martingale_decay(np.array(v), p, rtol=1e-9).ok


# --- rate envelope and eta ----------------------------------------------------------------


def test_type1_factor_limits():
    gamma = (0.0, 0.5, 0.5)
    assert type1_factor(0.0, 2.0, 0.3, gamma, 5.0) == pytest.approx(0.7)
    assert type1_factor(1e-12, 2.0, 0.3, gamma, 5.0) == pytest.approx(0.7)
    assert np.all(type1_factor(np.linspace(0, 1, 20), 2.0, 0.0, gamma, 5.0) >= 1.0)


def small_run(seed=1, iters=800, graph=None, noise=0.0, s=2):
    rng = Rng(seed)
    problem = generate(250, 20, 5, 5, rng.spawn("problem"), scale=1 / np.sqrt(250), noise=noise)
    schemes = [build_scheme(5, s, rng.spawn("coding")) for _ in range(5)]
    sim = Simulation(problem, uniform_topology(5, 5, graph=graph), schemes,
                     StragglerModel((s,) * 5), MixingPolicy(), StepSchedule(300, 0.55),
                     rng.spawn("run"))
    return sim.run(iters), schemes


def test_rate_envelope_on_scenario1_run():
    trace, schemes = small_run()
    rep = rate_envelope_type1(trace, trace.meta["L"], 0.0, (0.0,) + (0.2,) * 5, schemes)
    assert rep.contracting_from is None
    assert rep.exceed == []
    assert rep.V0 == trace.records[0].v_sq_dist
    again = rate_envelope_type1(trace, trace.meta["L"], 0.0, (0.0,) + (0.2,) * 5, schemes)
    assert np.array_equal(rep.envelope, again.envelope)


def test_eta_zero_numerator_and_guard():
    kw = dict(n=3, p=3, alpha=1e-3, L=1.0, mu=0.5, gamma=(0.0, 1 / 3, 1 / 3, 1 / 3),
              sigma_min=0.1, sigma_max=2.0, c_ab=1.0, n_offset=3)
    assert eta_estimate(spread_sq=0.0, **kw) == 0.0
    with pytest.raises(SrdoError):
        eta_estimate(spread_sq=1.0, **{**kw, "mu": 0.0})
    with pytest.raises(SrdoError):
        eta_estimate(spread_sq=1.0, **{**kw, "alpha": 10.0})


@pytest.mark.parametrize("seed", range(3))
def test_eta_bounds_type2_run(seed):
    rng = Rng(seed)
    problem = generate(60, 4, 3, 1, rng.spawn("p"), scale=1 / np.sqrt(60), noise=0.5)
    schemes = [build_scheme(1, 0, rng) for _ in range(3)]
    path = graph_from_edges(3, [(0, 1), (1, 2)])
    sim = Simulation(problem, uniform_topology(3, 3, graph=path), schemes,
                     StragglerModel((0,) * 3), MixingPolicy(), StepSchedule(300, 0.55),
                     rng.spawn("r"))
    trace = sim.run(3000)
    measured = trace.series("v_sq_dist")[-500:].max()
    spread = max(np.sum((partition_minimizer(problem, i) - problem.x_star) ** 2)
                 for i in range(3))
    eta = eta_estimate(
        n=3, p=3, alpha=trace.records[-1].alpha, L=problem.L, mu=0.5,
        gamma=(0.0, 1 / 3, 1 / 3, 1 / 3), sigma_min=0.0,
        sigma_max=max(strong_convexity(problem, i)[1] for i in range(3)),
        c_ab=coding_constant(schemes), spread_sq=spread, n_offset=3)
    assert 0 < measured <= 2 * eta


# --- scenario comparison ---------------------------------------------------------------------


def test_scenarios_coincide_without_stragglers():
    final = {}
    for mode in ("scenario1", "scenario2", "scenario3"):
        rng = Rng(2)
        problem = generate(90, 6, 3, 3, rng.spawn("problem"), scale=1 / np.sqrt(90))
        schemes = [build_scheme(3, 1, rng.spawn("coding")) for _ in range(3)]
        sim = Simulation(problem, uniform_topology(3, 3), schemes,
                         StragglerModel((1,) * 3, T=10, H=3, mode=mode), MixingPolicy(),
                         StepSchedule(300, 0.55), rng.spawn("run"))
        final[mode] = {2: sim.run(300).final_ae}
    rep = scenario_residual_compare(final)
    vals = list(rep.mean_ae.values())
    assert max(vals) - min(vals) <= 1e-12
    assert rep.ordered


def test_scenario_compare_flags_per_seed():
    final = {
        "scenario1": {1: 0.1, 2: 0.3},
        "scenario3": {1: 0.2, 2: 0.2},
        "scenario2": {1: 0.3, 2: 0.4},
    }
    rep = scenario_residual_compare(final)
    assert rep.ordered
    assert rep.per_seed_ordered == {1: True, 2: False}
    assert any("seeds [2]" in line for line in rep.lines())
