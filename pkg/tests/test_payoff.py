import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from conftest import make_contacts, make_users
from d2doffload.model import AgreementNetwork, CostModel, ScenarioConfig, build_scenario
from d2doffload.payoff import (
    OneHopPayoff,
    delivery_counts,
    estimate_delivery_probs,
    estimate_payoff,
    quadrature_delivery_probs,
)
from d2doffload.stochastic import RngStream


def test_isolated_user_gets_cellular_only(two_users):
    users, contacts = two_users
    g = AgreementNetwork(2)
    assert estimate_delivery_probs(0, g, users, contacts, 1000, RngStream(0)) == {0: 1.0}
    assert quadrature_delivery_probs(0, g, users, contacts) == {0: 1.0}
    est = estimate_payoff(0, g, users, contacts, CostModel(), 1000, RngStream(0))
    assert est.payoff == 0.0 and est.gain == 0.0 and est.cost == 0.0


def test_missing_profile_rejected(two_users):
    users, contacts = two_users
    with pytest.raises(ValueError):
        estimate_delivery_probs(0, AgreementNetwork(3, [(0, 2)]), users, contacts, 10, RngStream(0))


def test_symmetric_pair_matches_quadrature(two_users):
    users, contacts = two_users
    g = AgreementNetwork(2, [(0, 1)])
    mc = estimate_delivery_probs(0, g, users, contacts, 10**6, RngStream(1))
    q = quadrature_delivery_probs(0, g, users, contacts, grid=400)
    for s in (0, 1):
        assert mc[s] == pytest.approx(q[s], abs=1e-2)


def test_one_neighbour_closed_form():
    # exponential access delays: given a_j < a_i the excess a_i - a_j is Exp(1/lam),
    # so P(j delivers) = E[exp(-b / lam)] / 2 for the Pareto offset b
    lam, tau, alpha = 20.0, 10.0, 2.0
    users = make_users([(1.0, lam), (1.0, lam)])
    contacts = make_contacts(2, {(0, 1): (tau, alpha)})
    laplace = integrate.quad(lambda t: alpha * tau**alpha / t ** (alpha + 1) * math.exp(-t / lam), tau, np.inf)[0]
    q = quadrature_delivery_probs(0, AgreementNetwork(2, [(0, 1)]), users, contacts, grid=400)
    assert q[1] == pytest.approx(laplace / 2, abs=1e-3)
    mc = estimate_delivery_probs(0, AgreementNetwork(2, [(0, 1)]), users, contacts, 10**6, RngStream(3))
    assert mc[1] == pytest.approx(laplace / 2, abs=2e-3)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 2))
def test_mc_frequencies_partition(seed, extra):
    sc = build_scenario(ScenarioConfig(n_users=6, max_contacts=3, seed=seed))
    g = AgreementNetwork.from_contacts(sc.contacts)
    i = seed % 6
    counts = delivery_counts(i, g, sc.users, sc.contacts, 997, RngStream(seed, "mc"))
    assert sum(counts.values()) == 997
    probs = estimate_delivery_probs(i, g, sc.users, sc.contacts, 997, RngStream(seed, "mc"))
    assert math.fsum(probs.values()) == pytest.approx(1.0, abs=1e-12)
    assert all(0 <= p <= 1 for p in probs.values())


def test_quadrature_normalisation_two_neighbours():
    users = make_users([(3.0, 30.0), (2.0, 20.0), (5.0, 40.0)])
    contacts = make_contacts(3, {(0, 1): (10.0, 2.0), (0, 2): (12.0, 1.5)})
    q = quadrature_delivery_probs(0, AgreementNetwork(3, [(0, 1), (0, 2)]), users, contacts, grid=400)
    assert sum(q.values()) == pytest.approx(1.0, abs=1e-3)


def test_quadrature_rejects_many_neighbours():
    users = make_users([(2.0, 20.0)] * 4)
    contacts = make_contacts(4, {(0, 1): (10, 2), (0, 2): (10, 2), (0, 3): (10, 2)})
    with pytest.raises(ValueError):
        quadrature_delivery_probs(0, AgreementNetwork(4, [(0, 1), (0, 2), (0, 3)]), users, contacts)


def test_neighbour_without_contact_never_delivers():
    users = make_users([(2.0, 20.0), (2.0, 5.0)])
    contacts = make_contacts(2, {})
    g = AgreementNetwork(2, [(0, 1)])
    assert estimate_delivery_probs(0, g, users, contacts, 1000, RngStream(0))[1] == 0.0
    assert quadrature_delivery_probs(0, g, users, contacts) == {0: pytest.approx(1.0), 1: 0.0}


def test_symmetric_pair_has_equal_payoffs(two_users):
    users, contacts = two_users
    g = AgreementNetwork(2, [(0, 1)])
    costs = CostModel(4, 1)
    e0 = estimate_payoff(0, g, users, contacts, costs, 10**5, RngStream(2))
    e1 = estimate_payoff(1, g, users, contacts, costs, 10**5, RngStream(3))
    assert abs(e0.payoff - e1.payoff) <= 3 * math.hypot(e0.std_error, e1.std_error)


def test_early_user_only_pays():
    users = make_users([(4.0, 1.0), (4.0, 100.0)])
    contacts = make_contacts(2, {(0, 1): (1.0, 3.0)})
    g = AgreementNetwork(2, [(0, 1)])
    costs = CostModel(4, 1)
    e0 = estimate_payoff(0, g, users, contacts, costs, 10**6, RngStream(4))
    e1 = estimate_payoff(1, g, users, contacts, costs, 10**6, RngStream(4))
    assert e1.payoff > 0 > e0.payoff
    assert e0.payoff == pytest.approx(-costs.v_d * e0.sent_prob[1], abs=1e-3)
    assert e0.gain == pytest.approx(0.0, abs=1e-3)


def test_gain_cost_identities(two_users):
    users, contacts = two_users
    costs = CostModel(6, 1.5)
    est = estimate_payoff(0, AgreementNetwork(2, [(0, 1)]), users, contacts, costs, 5000, RngStream(5))
    assert est.gain == pytest.approx(costs.v_c * (1 - est.delivery_prob[0]))
    assert est.cost == pytest.approx(costs.v_d * est.sent_prob[1])
    assert est.payoff == pytest.approx(est.gain - est.cost)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_adding_neighbour_never_raises_self_probability(seed):
    sc = build_scenario(ScenarioConfig(n_users=8, max_contacts=4, seed=seed))
    i = seed % 8
    nbrs = sorted(sc.contacts.neighbors(i))
    if len(nbrs) < 1:
        return
    rng = RngStream(seed, "crn")
    small = AgreementNetwork(8, [(i, j) for j in nbrs[:-1]])
    big = AgreementNetwork(8, [(i, j) for j in nbrs])
    p_small = estimate_delivery_probs(i, small, sc.users, sc.contacts, 2000, rng)[i]
    p_big = estimate_delivery_probs(i, big, sc.users, sc.contacts, 2000, rng)[i]
    assert p_big <= p_small


def test_estimator_deterministic(two_users):
    users, contacts = two_users
    g = AgreementNetwork(2, [(0, 1)])
    a = estimate_delivery_probs(0, g, users, contacts, 5000, RngStream(9, "x"))
    b = estimate_delivery_probs(0, g, users, contacts, 5000, RngStream(9, "x"))
    assert a == b


def test_one_hop_payoff_methods_agree(two_users):
    users, contacts = two_users
    g = AgreementNetwork(2, [(0, 1)])
    mc = OneHopPayoff(users, contacts, CostModel(), n_samples=200_000, seed=1)
    q = OneHopPayoff(users, contacts, CostModel(), method="quadrature")
    assert mc(0, g) == pytest.approx(q(0, g), abs=0.05)
    assert mc(0, g) == mc(0, g)
    with pytest.raises(ValueError):
        OneHopPayoff(users, contacts, CostModel(), method="exact")


def test_random_one_and_two_neighbour_instances_match():
    # smaller-sample mirror of the estimator/oracle acceptance check
    rng = np.random.default_rng(11)
    for trial in range(5):
        m = 1 + trial % 2
        users = make_users([(rng.uniform(2, 6), rng.uniform(15, 45)) for _ in range(m + 1)])
        contacts = make_contacts(m + 1, {(0, j): (rng.uniform(10, 15), rng.uniform(1.01, 3)) for j in range(1, m + 1)})
        g = AgreementNetwork(m + 1, [(0, j) for j in range(1, m + 1)])
        mc = estimate_delivery_probs(0, g, users, contacts, 200_000, RngStream(trial, "oracle"))
        q = quadrature_delivery_probs(0, g, users, contacts, grid=200)
        for s in mc:
            se = math.sqrt(max(mc[s] * (1 - mc[s]), 1e-12) / 200_000)
            assert abs(mc[s] - q[s]) <= max(1e-2, 4 * se)
