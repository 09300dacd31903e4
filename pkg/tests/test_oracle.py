from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from budgetvoi.budget import Action, ChargeVector
from budgetvoi.controller import FeatureVector
from budgetvoi.oracle import (
    FinalizationDistribution, OracleWorld, check_plugin_excess, check_reward_harm_identity,
    check_theorem1, decompose_oracle, evaluate_step, oracle_gain_harm, oracle_lookahead,
    random_distribution, random_world, sample_points, solve_threshold,
)
from budgetvoi.verify import boundary_atom_case


def _world(P, family="exp", charges=None, v=(1.0, 0.5), a=(1.0, 2.0), c=(0.5, 1.5)):
    n = len(v)
    charges = charges or {Action.ANSWER: ChargeVector(0, 20), Action.SEARCH: ChargeVector(1, 50),
                          Action.DECOMPOSE: ChargeVector(1, 80)}
    trans = {k: np.asarray(P, float) for k in charges}
    trans[Action.ANSWER] = np.eye(n)
    return OracleWorld((3, 500), np.array(v), np.array(a), np.array(c), np.zeros(n), trans, charges,
                       tuple(FeatureVector() for _ in range(n)), family)


def test_lookahead_deterministic_transition():
    w = _world([[0, 1], [0, 1]], family="linear")
    b = w.budget(2, 300)
    x = w.normalize(b) - w.normalize(w.charges[Action.SEARCH])
    assert oracle_lookahead(w, 0, b, Action.SEARCH) == pytest.approx(w.value(1, x), abs=1e-15)


def test_lookahead_zero_charge():
    w = _world([[0.3, 0.7], [0.5, 0.5]], charges={Action.ANSWER: ChargeVector(0, 0),
                                                  Action.SEARCH: ChargeVector(0, 0),
                                                  Action.DECOMPOSE: ChargeVector(0, 0)})
    b = w.budget(1, 100)
    x = w.normalize(b)
    expected = 0.3 * w.value(0, x) + 0.7 * w.value(1, x)
    assert oracle_lookahead(w, 0, b, Action.SEARCH) == pytest.approx(expected, abs=1e-15)


def test_lookahead_two_state_even_split_by_hand():
    w = _world([[0.5, 0.5], [0.5, 0.5]])
    b = w.budget(2, 250)
    # after a search: x = (1/3, 200/500)
    v0 = 1.0 * (1 - math.exp(-(1.0 / 3 + 0.5 * 0.4)))
    v1 = 0.5 * (1 - math.exp(-(2.0 / 3 + 1.5 * 0.4)))
    assert oracle_lookahead(w, 0, b, Action.SEARCH) == pytest.approx((v0 + v1) / 2, abs=1e-14)


def test_linearization_zero_charge_and_linear_family():
    zero = _world([[0.2, 0.8], [0.6, 0.4]], charges={Action.ANSWER: ChargeVector(0, 0),
                                                     Action.SEARCH: ChargeVector(0, 0),
                                                     Action.DECOMPOSE: ChargeVector(0, 0)})
    assert decompose_oracle(zero, 0, zero.budget(2, 200), Action.SEARCH).xi_remainder == pytest.approx(0, abs=1e-15)
    lin = _world([[0.2, 0.8], [0.6, 0.4]], family="linear")
    b = lin.budget(2, 300)
    for k in (Action.SEARCH, Action.DECOMPOSE):
        dec = decompose_oracle(lin, 0, b, k)
        assert dec.L == 0.0
        # beta absorbs the gradient spread between actions; the curvature part vanishes
        assert abs(dec.xi_remainder) <= dec.beta_term + 1e-15


def test_linearization_homogeneous_gradients_curvature_only():
    # one state, one tool action: lambda* equals the action's own gradient, beta = 0
    charges = {Action.ANSWER: ChargeVector(0, 0), Action.SEARCH: ChargeVector(1, 120)}
    w = OracleWorld((3, 500), np.array([0.8]), np.array([1.2]), np.array([2.0]), np.zeros(1),
                    {Action.ANSWER: np.eye(1), Action.SEARCH: np.eye(1)}, charges)
    b = w.budget(3, 400)
    dec = decompose_oracle(w, 0, b, Action.SEARCH)
    assert dec.beta == pytest.approx(0, abs=1e-15)
    # exact remainder of v(1 - e^{-l}) along -g is a second-order term
    x = w.normalize(b)
    g = w.normalize(charges[Action.SEARCH])
    lin = 1.2 * x[0] + 2.0 * x[1]
    step = 1.2 * g[0] + 2.0 * g[1]
    exact = -0.8 * math.exp(-lin) * (math.exp(step) - 1 - step)
    assert dec.xi_remainder == pytest.approx(exact, rel=1e-9)
    assert abs(dec.xi_remainder) <= dec.L_half_g_sq + 1e-15


def test_theorem1_exact_components_reduce_to_remainder():
    w = random_world(3)
    rep = check_theorem1(w, sample_points(w, 50), mode="exact")
    assert rep.passed
    for s, b in sample_points(w, 10):
        ev = evaluate_step(w, s, b, mode="exact")
        for dec in ev.decomps.values():
            assert dec.eps_delta == dec.eps_psi == dec.eps_pi == 0
            assert dec.gamma == dec.xi_bound


def test_theorem1_injected_bias():
    w = random_world(5)
    pts = sample_points(w, 40)
    rep = check_theorem1(w, pts, mode="exact", bias=0.1)
    assert rep.passed
    clean = check_theorem1(w, pts, mode="exact")
    assert clean.worst_slack - rep.worst_slack <= 0.1 + 1e-12
    ev = evaluate_step(w, *pts[0], mode="exact", bias=0.1)
    assert all(d.eps_delta == pytest.approx(0.1) for d in ev.decomps.values())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_theorem1_random_worlds(seed):
    w = random_world(seed)
    assert check_theorem1(w, sample_points(w, 20, seed)).passed


def test_gain_harm_examples():
    d = FinalizationDistribution.from_deltas([[(0.5, 0.0)], [(0.5, 0.4)]], [True, True])
    G, H = oracle_gain_harm(d)
    assert (G[0], H[0]) == (0.0, 0.0)
    assert (G[1], H[1]) == pytest.approx((0.4, 0.0))
    d = FinalizationDistribution.from_deltas([[(0.4, 0.5), (0.6, -0.25)]], [True])
    G, H = oracle_gain_harm(d)
    assert (G[0], H[0]) == pytest.approx((0.2, 0.15))


def test_distribution_validation():
    with pytest.raises(ValueError):
        FinalizationDistribution(((( 0.5, 0.0, 1.0),),), (True,))
    with pytest.raises(ValueError):
        FinalizationDistribution.from_deltas([[(1.0, 1.5)]], [True])


def test_threshold_slack_constraint():
    d = random_distribution(4, n_z=6)
    eta, pol, bf, rep = solve_threshold(d, rho_harm=10.0)
    G, H = oracle_gain_harm(d)
    assert rep.verified and rep.gamma_star == 0 and eta == 1.0
    assert list(pol) == [int(s and g >= h) for s, g, h in zip(d.safe_mask, G, H)]


def test_threshold_harmless_refinements():
    d = FinalizationDistribution.from_deltas(
        [[(0.3, 0.2)], [(0.3, 0.0)], [(0.2, 0.5)], [(0.2, 0.1)]], [True, True, True, False])
    eta, pol, _, rep = solve_threshold(d, rho_harm=0.0)
    assert rep.verified
    assert list(pol) == [1, 1, 1, 0]
    with pytest.raises(ValueError):
        solve_threshold(d, -0.1)


def test_identity_examples():
    d = random_distribution(9, n_z=5)
    rep = check_reward_harm_identity(d, np.zeros(5, int))
    assert rep.reward_lhs == rep.reward_rhs == rep.harm_lhs == 0
    safe = d.safe_mask.astype(int)
    G, H = oracle_gain_harm(d)
    rep = check_reward_harm_identity(d, safe)
    assert rep.holds()
    assert rep.reward_lhs == pytest.approx(float(np.sum(d.mass * safe * (G - H))), abs=1e-12)
    one = FinalizationDistribution(((( 0.25, 0.5, 1.0), (0.75, 1.0, 0.25)),), (True,))
    rep = check_reward_harm_identity(one, [1])
    assert rep.reward_lhs == pytest.approx(0.25 * 0.5 - 0.75 * 0.75)
    assert rep.holds()
    with pytest.raises(ValueError):
        check_reward_harm_identity(FinalizationDistribution(((( 1.0, 0.0, 1.0),),), (False,)), [1])


def test_plugin_excess_examples():
    d = random_distribution(2)
    assert check_plugin_excess(d, 0.0, 0.0, 1.0).excess == 0
    far = FinalizationDistribution.from_deltas([[(0.5, 0.8)], [(0.5, -0.8)]], [True, True])
    assert check_plugin_excess(far, 0.1, 0.1, 1.0, seed=3).excess == 0
    dist, G_hat = boundary_atom_case(0.2, p_atom=0.3)
    _, H = oracle_gain_harm(dist)
    rep = check_plugin_excess(dist, 0.2, 0.0, 1.0, G_hat=G_hat, H_hat=H, margin=(10.0, 1.0))
    assert rep.excess == pytest.approx(0.1 * 0.3)
    assert rep.excess == pytest.approx(rep.bound)
    assert rep.margin_checked
    assert rep.holds
