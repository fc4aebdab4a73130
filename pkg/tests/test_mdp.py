import itertools

import numpy as np
import pytest

from cogarq.channel import AvgSnrConfig, RatePair, RegionProbabilities, region_probabilities
from cogarq.mdp import (
    AccessPolicy,
    BeliefEscapeError,
    InfeasibleConstraintError,
    Kernel,
    MdpState,
    build_kernel,
    enumerate_space,
    evaluate_policy,
    solve_constrained,
    stationary_distribution,
)
from cogarq.pu_system import PuConfig, saturating_arrivals
from cogarq.virtual_state import ChainDecodingModel, point_belief

from _oracles import lp_constrained_solve

PROBS = RegionProbabilities(0.06, 0.15, 0.07, 0.26, 0.20, 0.10, 0.16)
RHO = (0.62, 0.32)


def make_space(r_max=5, d_max=5, q_max=1, probs=PROBS, rho=RHO, policy=None):
    pol = policy or (lambda t, d, q: 1.0)
    cfg = PuConfig(r_max, d_max, q_max, saturating_arrivals(q_max), pol)
    model = ChainDecodingModel(cfg)
    space = enumerate_space(model, cfg, probs, rho)
    return space, build_kernel(space)


def test_kernel_rows_sum_to_one():
    space, kernel = make_space()
    assert np.allclose(kernel.p.sum(axis=2), 1.0, atol=1e-12)


def test_space_size_is_phase_times_arq_product():
    space, _ = make_space(r_max=5)
    # backlogged chain: (t, d) = (k, k) plus the empty-queue start, times
    # the R_max + 2 decoding phases
    assert len(space.arq_triples) == 6
    assert space.n == 6 * (5 + 2)


def test_single_try_deadline_funnels_to_cycle_start():
    # with a one-transmission deadline every PU slot completes, so from any
    # state where the backlogged PU actually transmits (saturated belief)
    # the next state sits in the unknown phase at t = 0
    space, kernel = make_space(r_max=1, d_max=2)
    saturated = point_belief(1, 1)
    idx_ok = {
        j for j, s in enumerate(space.states) if s.cd == ("U", 0) and s.t == 0
    }
    checked = 0
    for i, s in enumerate(space.states):
        if s.belief != saturated:
            continue
        for a in (0, 1):
            support = set(np.nonzero(kernel.p[i, a])[0])
            assert support <= idx_ok
            checked += 1
    assert checked > 0


def test_stationary_two_state_symmetric():
    p = np.array([[0.5, 0.5], [0.5, 0.5]])
    assert np.allclose(stationary_distribution(p), [0.5, 0.5])
    p2 = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert np.allclose(stationary_distribution(p2), [0.5, 0.5])


def test_always_idle_policy_earns_nothing():
    space, kernel = make_space()
    res = evaluate_policy(space, kernel, np.zeros(space.n))
    assert res.su_throughput == pytest.approx(0.0, abs=1e-12)
    assert res.pu_reward.throughput == pytest.approx(RHO[0], abs=1e-9)


def test_policy_vector_shape_checked():
    space, kernel = make_space()
    with pytest.raises(ValueError):
        evaluate_policy(space, kernel, np.zeros(space.n - 1))


def test_access_policy_validation():
    s = MdpState(("U", 0), 0, 0, (1.0,))
    with pytest.raises(ValueError):
        AccessPolicy({s: 1.5})


def test_vacuous_constraint_returns_unconstrained_optimum():
    space, kernel = make_space()
    rep = solve_constrained(space, kernel, 0.0)
    assert rep.multiplier == 0.0
    lp_val, _ = lp_constrained_solve(kernel, None)
    assert rep.su_throughput == pytest.approx(lp_val, abs=1e-9)


def test_silent_pu_transmit_everywhere():
    space, kernel = make_space(policy=lambda t, d, q: 0.0)
    rep = solve_constrained(space, kernel, 0.0)
    # exhaustive check over deterministic policies on the recurrent states
    recurrent = np.nonzero(rep.stationary > 1e-12)[0]
    best = -1.0
    for assign in itertools.product((0.0, 1.0), repeat=len(recurrent)):
        mu = np.zeros(space.n)
        mu[recurrent] = assign
        val = evaluate_policy(space, kernel, mu).su_throughput
        best = max(best, val)
    assert rep.su_throughput == pytest.approx(best, abs=1e-9)
    for i in recurrent:
        assert rep.policy.probs[space.states[i]] == 1.0


def test_constrained_solve_matches_lp_oracle():
    snr = AvgSnrConfig(5.0, 5.0, 10.0, 2.0)
    rates = RatePair(1.9140575925881422, 2.5182556953531106)
    probs = region_probabilities(snr, rates, 200_000, np.random.default_rng(0))
    rho = (0.6231992280023452, 0.3202827933851996)
    space, kernel = make_space(probs=probs, rho=rho)
    idle = evaluate_policy(space, kernel, np.zeros(space.n))
    floor = 0.8 * idle.pu_reward.throughput
    rep = solve_constrained(space, kernel, floor)
    lp_val, _ = lp_constrained_solve(kernel, floor)
    assert rep.su_throughput == pytest.approx(lp_val, abs=1e-6)
    assert rep.constraint_value >= floor - 1e-9


def test_tightening_the_floor_never_helps():
    space, kernel = make_space(probs=PROBS, rho=RHO)
    idle = evaluate_policy(space, kernel, np.zeros(space.n))
    cap = idle.pu_reward.throughput
    values = []
    for frac in (0.0, 0.5, 0.8, 0.95):
        rep = solve_constrained(space, kernel, frac * cap)
        values.append(rep.su_throughput)
    assert all(b <= a + 1e-9 for a, b in zip(values, values[1:]))


def test_infeasible_floor_raises():
    space, kernel = make_space()
    with pytest.raises(InfeasibleConstraintError):
        solve_constrained(space, kernel, RHO[0] + 0.01)


def test_unknown_component_rejected():
    space, kernel = make_space()
    with pytest.raises(ValueError):
        solve_constrained(space, kernel, 0.0, component="latency")


def test_belief_escape_guard():
    rng = np.random.default_rng(3)
    pmf = np.array([0.3, 0.4, 0.3])
    cfg = PuConfig(3, 4, 2, pmf, lambda t, d, q: 0.5)
    model = ChainDecodingModel(cfg)
    with pytest.raises(BeliefEscapeError):
        enumerate_space(model, cfg, PROBS, RHO, max_beliefs=8)


def test_kernel_matches_empirical_frequencies_small():
    from collections import defaultdict

    from cogarq.simulator import SchemeKind, SystemConfig, run

    snr = AvgSnrConfig(5.0, 5.0, 10.0, 2.0)
    rates = RatePair(1.9140575925881422, 2.5182556953531106)
    pu_cfg = PuConfig(5, 5, 1, saturating_arrivals(1))
    system = SystemConfig(snr, rates, pu_cfg)
    probs = region_probabilities(snr, rates, 500_000, np.random.default_rng(0))
    space = enumerate_space(ChainDecodingModel(pu_cfg), pu_cfg, probs, system.success_probs())
    kernel = build_kernel(space)
    policy = AccessPolicy({s: 0.5 for s in space.states})
    recs = []
    run(
        SchemeKind.CHAIN_DECODING, policy, system, seed=5, n_slots=200_000,
        trace_hook=lambda r: recs.append((r.phase, r.b_s, r.tr_t, r.tr_d, r.a_s)),
    )
    bel0, bel1 = point_belief(0, 1), point_belief(1, 1)
    counts = defaultdict(lambda: defaultdict(int))
    for i in range(len(recs) - 1):
        ph, b, t, d, a = recs[i]
        ph2, b2, t2, d2, _ = recs[i + 1]
        s = space.index[MdpState((ph, b), t, d, bel0 if i == 0 else bel1)]
        s2 = space.index[MdpState((ph2, b2), t2, d2, bel1)]
        counts[(s, a)][s2] += 1
    checked = 0
    for (i, a), row in counts.items():
        n_sa = sum(row.values())
        if n_sa < 500:
            continue
        for j in range(space.n):
            p = kernel.p[i, a, j]
            phat = row.get(j, 0) / n_sa
            if phat > 0:
                assert p > 0, "empirical transition the kernel says is impossible"
            se = max(np.sqrt(p * (1 - p) / n_sa), 1e-9)
            assert abs(phat - p) <= 5 * se + 1e-9
            checked += 1
    assert checked > 100
