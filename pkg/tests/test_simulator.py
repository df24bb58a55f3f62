import math

import numpy as np
import pytest

from conftest import make_contacts, make_users
from d2doffload.model import AgreementNetwork, CostModel, Scenario, ScenarioConfig, build_scenario
from d2doffload.simulator import (
    CELLULAR,
    Ledger,
    PeriodConfig,
    RoundEngine,
    aggregate_payoff_check,
    algorithm1_period_update,
    one_hop_estimates,
    run_offloading,
    run_random_seeding,
    simulate_round,
    write_periods_csv,
    write_users_csv,
)
from d2doffload.stochastic import RngStream


@pytest.fixture
def pair_scenario():
    users = make_users([(2.0, 20.0), (2.0, 20.0)])
    contacts = make_contacts(2, {(0, 1): (10.0, 2.0)})
    return users, contacts


def test_no_agreements_all_cellular():
    sc = build_scenario(ScenarioConfig(n_users=10, seed=1))
    out = simulate_round(AgreementNetwork(10), sc.users, sc.contacts, RngStream(0))
    assert out.n_cellular == 10 and out.n_d2d == 0
    assert np.array_equal(out.acquired_at, out.access)


def test_hand_trace(pair_scenario):
    users, contacts = pair_scenario
    g = AgreementNetwork(2, [(0, 1)])
    out = simulate_round(g, users, contacts, access=[5.0, 10.0], contact_events={(0, 1): [7.0]})
    assert out.source.tolist() == [CELLULAR, 0]
    assert out.acquired_at.tolist() == [5.0, 7.0]
    assert (out.n_cellular, out.n_d2d) == (1, 1)
    assert out.transfers() == [(0, 1)]


def test_contact_before_anyone_holds_is_wasted(pair_scenario):
    users, contacts = pair_scenario
    out = simulate_round(AgreementNetwork(2, [(0, 1)]), users, contacts,
                         access=[5.0, 10.0], contact_events={(0, 1): [3.0]})
    assert out.n_cellular == 2


def test_multi_hop_relay_policies():
    users = make_users([(2.0, 20.0)] * 3)
    contacts = make_contacts(3, {(0, 1): (1.0, 2.0), (1, 2): (1.0, 2.0)})
    g = AgreementNetwork(3, [(0, 1), (1, 2)])
    events = {(0, 1): [2.0], (1, 2): [4.0]}
    on_hold = simulate_round(g, users, contacts, access=[1.0, 9.0, 9.5], contact_events=events)
    assert on_hold.source.tolist() == [CELLULAR, 0, 1]
    after = simulate_round(g, users, contacts, relay_policy="after-access",
                           access=[1.0, 9.0, 9.5], contact_events=events)
    assert after.source.tolist() == [CELLULAR, 0, CELLULAR]
    with pytest.raises(ValueError):
        simulate_round(g, users, contacts, relay_policy="eager", access=[1, 2, 3])


def test_non_agreement_contacts_ignored(pair_scenario):
    users, contacts = pair_scenario
    out = simulate_round(AgreementNetwork(2), users, contacts, access=[5.0, 10.0], contact_events={(0, 1): [7.0]})
    assert out.n_d2d == 0


def test_seeds_download_at_zero(pair_scenario):
    users, contacts = pair_scenario
    out = simulate_round(AgreementNetwork(2, [(0, 1)]), users, contacts, seeds=[1],
                         access=[5.0, 10.0], contact_events={(0, 1): [2.0]})
    assert out.acquired_at.tolist() == [2.0, 0.0]
    assert out.source.tolist() == [1, CELLULAR]


def test_conservation_causality_and_forest():
    rng = RngStream(0, "cons")
    for s in range(40):
        sc = build_scenario(ScenarioConfig(n_users=3 + s % 30, max_contacts=1 + s % 4, seed=s))
        g = AgreementNetwork.from_contacts(sc.contacts)
        engine = RoundEngine(g, sc.users, sc.contacts)
        for r in range(25):
            out = engine.run(rng.child(s, r))
            assert out.n_cellular + out.n_d2d == sc.n_users
            assert out.n_cellular == int(np.sum(out.source == CELLULAR))
            for sender, receiver in out.transfers():
                assert g.has_edge(sender, receiver)
                assert out.acquired_at[sender] < out.acquired_at[receiver]
                assert out.acquired_at[receiver] < out.access[receiver]


def test_renewal_contacts_have_pareto_gaps():
    users = make_users([(2.0, 1e6), (2.0, 1e6)])
    contacts = make_contacts(2, {(0, 1): (10.0, 3.0)})
    engine = RoundEngine(AgreementNetwork(2, [(0, 1)]), users, contacts)
    times, idx = engine.draw_contacts(RngStream(1), 2e5)
    gaps = np.diff(np.concatenate([[0.0], np.sort(times)]))
    assert gaps.min() >= 10.0
    assert gaps.mean() == pytest.approx(15.0, rel=0.03)
    assert set(idx.tolist()) == {0}


def test_ledger_books_agree():
    sc = build_scenario(ScenarioConfig(n_users=15, seed=2))
    g = AgreementNetwork.from_contacts(sc.contacts)
    ledger = Ledger(15)
    engine = RoundEngine(g, sc.users, sc.contacts)
    for r in range(50):
        ledger.record(engine.run(RngStream(2, ("r", r))))
    for i in range(15):
        for j in range(15):
            assert ledger.d(i)[j] == ledger.b(j)[i] >= 0
            if ledger.sent[i, j]:
                assert g.has_edge(i, j)
    ledger.reset()
    assert not ledger.sent.any()


def _ledger(b_ij, d_ij):
    led = Ledger(2)
    led.sent[1, 0] = b_ij  # user 1 -> user 0 is what user 0 receives
    led.sent[0, 1] = d_ij
    return led


def test_algorithm1_weights():
    costs = CostModel(4, 1)
    assert _ledger(3, 2).weight(0, 1, costs) == 10
    g = AgreementNetwork(2, [(0, 1)])
    assert algorithm1_period_update(0, g, _ledger(3, 2), costs, RngStream(0)) is None
    assert g.has_edge(0, 1)
    assert _ledger(0, 1).weight(0, 1, costs) == -1
    assert algorithm1_period_update(0, g, _ledger(0, 1), costs, RngStream(0)) == (0, 1)
    assert not g.has_edge(0, 1)


def test_algorithm1_zero_weight_kept_and_one_removal():
    costs = CostModel(4, 1)
    led = Ledger(4)
    g = AgreementNetwork(4, [(0, 1), (0, 2), (0, 3)])
    assert algorithm1_period_update(0, g, led, costs, RngStream(0)) is None
    led.sent[0, 1] = led.sent[0, 2] = 1
    removed = algorithm1_period_update(0, g, led, costs, RngStream(0))
    assert removed in {(0, 1), (0, 2)} and g.n_edges == 2


def test_random_choice_among_negative_links():
    costs = CostModel(4, 1)
    seen = set()
    for s in range(40):
        led = Ledger(4)
        led.sent[0, 1:] = 1
        g = AgreementNetwork(4, [(0, 1), (0, 2), (0, 3)])
        seen.add(algorithm1_period_update(0, g, led, costs, RngStream(s)))
    assert seen == {(0, 1), (0, 2), (0, 3)}


@pytest.fixture(scope="module")
def baseline_run():
    sc = build_scenario(ScenarioConfig(n_users=20, seed=4))
    return sc, run_offloading(sc, PeriodConfig(), CostModel(4, 1), RngStream(4, "nf"))


def test_offloading_monotone_and_converged(baseline_run):
    sc, run = baseline_run
    edges = [r.n_edges for r in run.periods] + [run.final_network.n_edges]
    assert all(a >= b for a, b in zip(edges, edges[1:]))
    assert run.converged
    assert sum(r.removals for r in run.periods) == len(sc.contacts) - run.final_network.n_edges
    assert run.convergence_period == run.converged_at - 5
    for book in run.recent_books:
        led = Ledger(20)
        led.sent[:] = book
        for i, j in run.final_network.edges:
            assert led.weight(i, j, CostModel(4, 1)) >= 0
            assert led.weight(j, i, CostModel(4, 1)) >= 0
    assert len(run.recent_books) == 5
    assert run.user_payoffs.shape == (250, 20)


def test_offloading_deterministic(baseline_run):
    sc, run = baseline_run
    again = run_offloading(sc, PeriodConfig(), CostModel(4, 1), RngStream(4, "nf"))
    assert [r.__dict__ for r in again.periods] == [r.__dict__ for r in run.periods]
    assert np.array_equal(again.user_payoffs, run.user_payoffs)


def test_complete_initial_network_keeps_dead_links():
    sc = build_scenario(ScenarioConfig(n_users=8, seed=5))
    run = run_offloading(sc, PeriodConfig(initial_network="complete", rounds_per_period=20),
                         CostModel(4, 1), RngStream(5))
    dead = 28 - len(sc.contacts)
    assert run.final_network.n_edges >= dead
    assert run.periods[0].n_edges == 28


def test_period_config_validation():
    with pytest.raises(ValueError):
        PeriodConfig(rounds_per_period=0)
    with pytest.raises(ValueError):
        PeriodConfig(initial_network="empty")
    assert PeriodConfig(rounds_per_period=10, stability_window=3).n_eval_rounds == 30


def test_seeding_everyone_is_all_cellular():
    sc = build_scenario(ScenarioConfig(n_users=10, seed=6))
    run = run_random_seeding(sc, 10, 30, CostModel(), RngStream(6))
    assert run.cellular_fraction == 1.0
    with pytest.raises(ValueError):
        run_random_seeding(sc, 11, 30, CostModel(), RngStream(6))


def test_zero_seeds_still_offloads():
    sc = build_scenario(ScenarioConfig(n_users=20, seed=7))
    run = run_random_seeding(sc, 0, 200, CostModel(), RngStream(7))
    assert run.d2d_received.sum() > 0 and run.cellular_fraction < 1


def test_one_seed_long_delays_offloads():
    cfg = ScenarioConfig(n_users=10, max_contacts=3, lam_range=(200.0, 300.0), seed=8)
    sc = build_scenario(cfg)
    run = run_random_seeding(sc, 1, 1000, CostModel(), RngStream(8))
    assert run.cellular_fraction < 1


def test_aggregate_check_empty_network():
    sc = build_scenario(ScenarioConfig(n_users=6, seed=9))
    run = run_offloading(Scenario(sc.config, sc.users, type(sc.contacts)(6)), PeriodConfig(rounds_per_period=5),
                         CostModel(), RngStream(9))
    est = one_hop_estimates(run.final_network, sc.users, sc.contacts, CostModel(), 1000, RngStream(9))
    rep = aggregate_payoff_check(run, est)
    assert rep.estimated_total == 0 and rep.empirical_total == 0
    assert len(rep.components) == 6 and rep.holds


def test_star_relay_surplus():
    # centre 0 exchanges with three leaves; multi-hop relaying only adds deliveries
    users = make_users([(3.0, 30.0), (2.0, 20.0), (4.0, 40.0), (2.5, 35.0)])
    contacts = make_contacts(4, {(0, 1): (5.0, 2.0), (0, 2): (5.0, 2.0), (0, 3): (5.0, 2.0)})
    sc = Scenario(ScenarioConfig(n_users=4), users, contacts)
    run = run_random_seeding(sc, 0, 100_000, CostModel(4, 1), RngStream(10))
    est = one_hop_estimates(run.final_network, users, contacts, CostModel(4, 1), 100_000, RngStream(10, "est"))
    rep = aggregate_payoff_check(run, est)
    assert len(rep.components) == 1
    assert rep.holds
    assert rep.empirical_total >= rep.estimated_total - 3 * rep.components[0].std_error


def test_export_csvs(tmp_path, baseline_run):
    _, run = baseline_run
    prov = {"experiment": "t", "sweep_value": 20, "seed": 4, "algorithm": run.algorithm}
    write_periods_csv(tmp_path / "p.csv", run, prov)
    write_users_csv(tmp_path / "u.csv", run, prov)
    p = (tmp_path / "p.csv").read_text().splitlines()
    u = (tmp_path / "u.csv").read_text().splitlines()
    assert p[0].endswith("period,n_edges,cellular_fraction,mean_payoff,removals")
    assert u[0].endswith("user,degree,mean_payoff,d2d_sent,d2d_received")
    assert len(p) == len(run.periods) + 1 and len(u) == 21
    assert all(line.startswith("t,20,4,network-formation") for line in p[1:])
