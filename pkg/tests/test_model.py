import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from d2doffload.model import (
    AgreementNetwork,
    ContactGraph,
    CostModel,
    ScenarioConfig,
    build_scenario,
    connected_component,
    generate_scenario,
    load_scenario,
    neighbors,
    save_scenario,
)
from d2doffload.stochastic import ParetoParams, RngStream


def test_contact_graph_rejects_self_pair():
    with pytest.raises(ValueError):
        ContactGraph(3).add(1, 1, ParetoParams(10, 2))


def test_contact_graph_symmetric_lookup():
    cg = ContactGraph(3)
    cg.add(2, 0, ParetoParams(10, 2))
    assert cg.params(0, 2) == cg.params(2, 0) == ParetoParams(10, 2)
    assert cg.params(0, 1) is None
    assert list(cg.edges) == [(0, 2)]


def test_agreement_network_simple_graph():
    g = AgreementNetwork(3)
    with pytest.raises(ValueError):
        g.add_edge(0, 0)
    g.add_edge(0, 1)
    g.add_edge(1, 0)
    assert g.n_edges == 1
    with pytest.raises(KeyError):
        g.remove_edge(0, 2)
    with pytest.raises(ValueError):
        g.add_edge(0, 3)


def test_neighbors_examples():
    assert neighbors(AgreementNetwork.complete(3), 0) == {1, 2}
    assert neighbors(AgreementNetwork(3), 0) == set()
    g = AgreementNetwork(3)
    g.add_edge(0, 1)
    assert neighbors(g, 0) == {1} and neighbors(g, 1) == {0}


def test_connected_component_examples():
    assert connected_component(AgreementNetwork(4), 2) == {2}
    assert connected_component(AgreementNetwork(3, [(0, 1), (1, 2)]), 0) == {0, 1, 2}
    assert connected_component(AgreementNetwork(4, [(0, 1), (2, 3)]), 0) == {0, 1}


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 5), st.integers(0, 5)), max_size=60))
def test_edge_operations_keep_simple_graph(ops):
    g = AgreementNetwork(6)
    ref = set()
    for add, i, j in ops:
        if i == j:
            continue
        e = (min(i, j), max(i, j))
        if add:
            g.add_edge(i, j)
            ref.add(e)
        elif e in ref:
            g.remove_edge(i, j)
            ref.discard(e)
    assert set(g.edges) == ref
    for i in range(6):
        assert i not in g.neighbors(i)
        assert all(i in g.neighbors(j) for j in g.neighbors(i))


def test_cost_model_validation():
    with pytest.raises(ValueError):
        CostModel(0, 1)
    with pytest.raises(ValueError):
        CostModel(4, -1)
    with pytest.warns(UserWarning):
        CostModel(1, 2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert CostModel.from_ratio(6).ratio == 6


@pytest.mark.parametrize("changes", [
    {"n_users": 1}, {"max_contacts": 0}, {"alpha_range": (1.0, 3.0)}, {"k_range": (6, 2)},
    {"tau_range": (0, 5)},
])
def test_scenario_config_rejects(changes):
    with pytest.raises(ValueError):
        ScenarioConfig(**changes)


def test_two_users_one_contact():
    _, cg = generate_scenario(ScenarioConfig(n_users=2, max_contacts=1), RngStream(0, "s"))
    assert list(cg.edges) == [(0, 1)]


@pytest.mark.parametrize("seed", range(5))
def test_greedy_pairing_is_maximal(seed):
    cfg = ScenarioConfig(n_users=20, max_contacts=3, seed=seed)
    sc = build_scenario(cfg)
    deg = [sc.contacts.degree(i) for i in range(20)]
    assert max(deg) <= 3
    low = [i for i in range(20) if deg[i] < 3]
    for a in low:
        for b in low:
            if a < b:
                assert sc.contacts.has(a, b)
    for p in sc.contacts.edges.values():
        assert p.alpha > 1 and p.tau > 0


def test_parameter_draw_mean():
    users, _ = generate_scenario(ScenarioConfig(n_users=10**4, max_contacts=1), RngStream(1, "s"))
    ks = np.array([u.access_delay.k for u in users])
    assert ks.mean() == pytest.approx(4.0, abs=0.05)
    assert ks.min() >= 2 and ks.max() <= 6


def test_generation_is_deterministic():
    cfg = ScenarioConfig(n_users=30, seed=7)
    a, b = build_scenario(cfg), build_scenario(cfg)
    assert a.users == b.users and a.contacts == b.contacts
    assert build_scenario(cfg.with_changes(seed=8)).contacts != a.contacts


def test_scenario_roundtrip(tmp_path):
    cfg = ScenarioConfig(n_users=8, seed=3, costs=CostModel(6, 1))
    sc = build_scenario(cfg)
    save_scenario(tmp_path / "s.yaml", cfg, sc.users, sc.contacts)
    cfg2, sc2 = load_scenario(tmp_path / "s.yaml")
    assert cfg2 == cfg
    assert sc2.users == sc.users and sc2.contacts == sc.contacts


def test_config_rejects_unknown_key():
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict({"n_user": 3})
