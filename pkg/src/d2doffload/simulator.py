"""Discrete-event content rounds and the data-based link-pruning algorithm.

One round: content appears at t=0, every user ``i`` draws an access delay
``a_i`` and downloads over cellular at ``a_i`` unless a D2D partner handed
the content over earlier. Each agreement edge that is also a contact pair
runs a renewal process of Pareto inter-contact gaps from t=0; at a contact
where exactly one endpoint can relay, the content is transferred.

Over a decision period users keep books of D2D transfers on each link and,
at the period end, each drops at most one link whose weight
``received * v_c - sent * v_d`` is negative.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from d2doffload.model import AgreementNetwork, ContactGraph, CostModel, Scenario, connected_component
from d2doffload.stochastic import RngStream

CELLULAR = -1
RELAY_POLICIES = ("on-hold", "after-access")


@dataclass
class RoundOutcome:
    acquired_at: np.ndarray
    source: np.ndarray  # CELLULAR or the id of the D2D sender
    access: np.ndarray
    n_cellular: int
    n_d2d: int

    def transfers(self) -> list[tuple[int, int]]:
        return [(int(s), r) for r, s in enumerate(self.source) if s != CELLULAR]


class RoundEngine:
    """Per-scenario arrays reused across rounds; one instance per network."""

    def __init__(self, g: AgreementNetwork, users, contacts: ContactGraph, relay_policy: str = "on-hold"):
        if relay_policy not in RELAY_POLICIES:
            raise ValueError(f"relay_policy must be one of {RELAY_POLICIES}, got {relay_policy!r}")
        self.n = len(users)
        self.k = np.array([u.access_delay.k for u in users])
        self.lam = np.array([u.access_delay.lam for u in users])
        self.after_access = relay_policy == "after-access"
        live = [(e, contacts.params(*e)) for e in g.edges if contacts.has(*e)]
        self.edges = [e for e, _ in live]
        self.eu = [e[0] for e in self.edges]
        self.ev = [e[1] for e in self.edges]
        self.tau = np.array([p.tau for _, p in live])
        self.alpha = np.array([p.alpha for _, p in live])

    def draw_access(self, rng: RngStream) -> np.ndarray:
        return self.lam * (-np.log(rng.child("access").uniform(self.n))) ** (1.0 / self.k)

    def draw_contacts(self, rng: RngStream, horizon: float):
        """Contact instants before ``horizon`` as parallel (times, edge index) arrays."""
        if not self.edges or horizon <= 0:
            return np.empty(0), np.empty(0, dtype=np.int64)
        # gaps are >= tau, so this many per edge always reach the horizon
        n_gaps = int(math.ceil(horizon / self.tau.min())) + 1
        u = rng.child("contacts").uniform((len(self.edges), n_gaps))
        times = np.cumsum(self.tau[:, None] * u ** (-1.0 / self.alpha[:, None]), axis=1)
        keep = times < horizon
        edge_idx = np.broadcast_to(np.arange(len(self.edges))[:, None], times.shape)
        return times[keep], edge_idx[keep]

    def run(self, rng: RngStream | None = None, seeds=(), access=None, contact_events=None) -> RoundOutcome:
        n = self.n
        a = np.asarray(access, dtype=float) if access is not None else self.draw_access(rng)
        horizon = float(a.max())
        if contact_events is None:
            c_times, c_edges = self.draw_contacts(rng, horizon)
        else:
            pos = {e: k for k, e in enumerate(self.edges)}
            pairs = [(t, pos[e]) for e, ts in contact_events.items() if e in pos for t in ts if t < horizon]
            c_times = np.array([t for t, _ in pairs], dtype=float)
            c_edges = np.array([k for _, k in pairs], dtype=np.int64)

        acquired = [math.inf] * n
        source = [CELLULAR] * n
        held = [False] * n
        n_held = 0
        for s in seeds:
            held[s] = True
            acquired[s] = 0.0
            n_held += 1

        # cellular events use kind 0 with id = user; contact events kind 1 with id = edge
        times = np.concatenate([a, c_times])
        kinds = np.concatenate([np.zeros(n, dtype=np.int64), np.ones(c_times.size, dtype=np.int64)])
        ids = np.concatenate([np.arange(n, dtype=np.int64), c_edges])
        order = np.lexsort((ids, kinds, times))
        t_list, k_list, id_list = times[order].tolist(), kinds[order].tolist(), ids[order].tolist()
        a_list = a.tolist()
        eu, ev = self.eu, self.ev
        after_access = self.after_access
        n_d2d = 0
        for t, kind, x in zip(t_list, k_list, id_list):
            if n_held == n:
                break
            if kind == 0:
                if not held[x]:
                    held[x] = True
                    acquired[x] = t
                    n_held += 1
                continue
            u, v = eu[x], ev[x]
            hu, hv = held[u], held[v]
            if hu == hv:
                continue
            s, r = (u, v) if hu else (v, u)
            if after_access and t < a_list[s]:
                continue
            held[r] = True
            acquired[r] = t
            source[r] = s
            n_held += 1
            n_d2d += 1
        return RoundOutcome(np.array(acquired), np.array(source, dtype=np.int64), a, n - n_d2d, n_d2d)


def simulate_round(g: AgreementNetwork, users, contacts: ContactGraph, rng: RngStream | None = None,
                   relay_policy: str = "on-hold", seeds=(), access=None, contact_events=None) -> RoundOutcome:
    """Simulate one content round on agreement network ``g``.

    ``access`` and ``contact_events`` (edge -> contact instants) override
    the random draws, which is handy for hand-checked traces. ``seeds``
    receive the content over cellular at t=0.
    """
    return RoundEngine(g, users, contacts, relay_policy).run(rng, seeds, access, contact_events)


class Ledger:
    """D2D transfer counts for one decision period.

    ``sent[i, j]`` is the number of transfers from ``i`` to ``j``; user
    ``i``'s outgoing book ``d^i`` is row ``i`` and its incoming book
    ``b^i`` is column ``i``, so both parties read the same entry.
    """

    def __init__(self, n_users: int):
        self.sent = np.zeros((n_users, n_users), dtype=np.int64)

    def record(self, outcome: RoundOutcome):
        rec = outcome.source != CELLULAR
        np.add.at(self.sent, (outcome.source[rec], np.flatnonzero(rec)), 1)

    def d(self, i: int) -> np.ndarray:
        return self.sent[i, :]

    def b(self, i: int) -> np.ndarray:
        return self.sent[:, i]

    def weight(self, i: int, j: int, costs: CostModel) -> float:
        return self.b(i)[j] * costs.v_c - self.d(i)[j] * costs.v_d

    def reset(self):
        self.sent[:] = 0


def algorithm1_period_update(i: int, g: AgreementNetwork, ledger: Ledger, costs: CostModel,
                             rng: RngStream) -> tuple[int, int] | None:
    """Scan ``i``'s links in random order and drop the first one with negative weight."""
    for j in rng.shuffled(sorted(g.neighbors(i))):
        if ledger.weight(i, j, costs) < 0:
            g.remove_edge(i, j)
            return (min(i, j), max(i, j))
    return None


@dataclass(frozen=True)
class PeriodConfig:
    rounds_per_period: int = 50
    stability_window: int = 5
    max_periods: int = 500
    relay_policy: str = "on-hold"
    initial_network: str = "contacts"  # or "complete"
    eval_rounds: int | None = None  # defaults to rounds_per_period * stability_window

    def __post_init__(self):
        if min(self.rounds_per_period, self.stability_window, self.max_periods) < 1:
            raise ValueError("rounds_per_period, stability_window and max_periods must all be positive")
        if self.relay_policy not in RELAY_POLICIES:
            raise ValueError(f"relay_policy must be one of {RELAY_POLICIES}")
        if self.initial_network not in ("contacts", "complete"):
            raise ValueError("initial_network must be 'contacts' or 'complete'")
        if self.eval_rounds is not None and self.eval_rounds < 1:
            raise ValueError("eval_rounds must be positive")

    @property
    def n_eval_rounds(self) -> int:
        return self.eval_rounds or self.rounds_per_period * self.stability_window


@dataclass
class PeriodRecord:
    period: int
    n_edges: int
    cellular_fraction: float
    mean_payoff: float
    removals: int


@dataclass
class RunResult:
    algorithm: str
    periods: list[PeriodRecord]
    final_network: AgreementNetwork
    converged: bool
    converged_at: int | None
    cellular_fraction: float
    user_payoffs: np.ndarray  # per evaluation round, shape (rounds, N)
    d2d_sent: np.ndarray
    d2d_received: np.ndarray
    n_seeds: int | None = None
    recent_books: list[np.ndarray] = field(default_factory=list)

    @property
    def offloaded_fraction(self) -> float:
        return 1.0 - self.cellular_fraction

    @property
    def convergence_period(self) -> int | None:
        """Last period in which a link was removed (0 if none ever was)."""
        if self.converged_at is None:
            return None
        return self.converged_at - len(self.recent_books)

    @property
    def user_mean_payoff(self) -> np.ndarray:
        return self.user_payoffs.mean(axis=0)

    @property
    def negative_payoff_fraction(self) -> float:
        return float(np.mean(self.user_mean_payoff < 0))


def _round_payoffs(out: RoundOutcome, costs: CostModel) -> np.ndarray:
    n = out.source.size
    rec = out.source != CELLULAR
    sent = np.bincount(out.source[rec], minlength=n)
    return costs.v_c * rec - costs.v_d * sent


def _evaluate(engine: RoundEngine, n: int, costs: CostModel, rounds: int, rng: RngStream, seeds_per_round=None):
    payoffs = np.empty((rounds, n))
    sent = np.zeros(n, dtype=np.int64)
    received = np.zeros(n, dtype=np.int64)
    n_cell = 0
    for r in range(rounds):
        rr = rng.child("round", r)
        seeds = seeds_per_round(rr) if seeds_per_round else ()
        out = engine.run(rr, seeds)
        payoffs[r] = _round_payoffs(out, costs)
        rec = out.source != CELLULAR
        sent += np.bincount(out.source[rec], minlength=n)
        received += rec
        n_cell += out.n_cellular
    return payoffs, sent, received, n_cell / (rounds * n)


def run_offloading(scenario: Scenario, period_cfg: PeriodConfig, costs: CostModel, rng: RngStream) -> RunResult:
    """Run the data-based formation algorithm until the network is stable.

    Convergence is declared once ``stability_window`` consecutive periods end
    without a removal. Efficiency and payoffs are then measured over
    ``eval_rounds`` fresh rounds on the final network.
    """
    users, contacts = scenario.users, scenario.contacts
    n = len(users)
    if period_cfg.initial_network == "complete":
        g = AgreementNetwork.complete(n)
    else:
        g = AgreementNetwork.from_contacts(contacts)
    ledger = Ledger(n)
    records: list[PeriodRecord] = []
    books: deque = deque(maxlen=period_cfg.stability_window)
    quiet = 0
    converged_at = None
    for p in range(1, period_cfg.max_periods + 1):
        engine = RoundEngine(g, users, contacts, period_cfg.relay_policy)
        ledger.reset()
        n_edges = g.n_edges
        n_cell = 0
        payoff_sum = 0.0
        prng = rng.child("period", p)
        for r in range(period_cfg.rounds_per_period):
            out = engine.run(prng.child("round", r))
            ledger.record(out)
            n_cell += out.n_cellular
            payoff_sum += out.n_d2d * (costs.v_c - costs.v_d)
        removals = 0
        for i in prng.child("order").shuffled(range(n)):
            if algorithm1_period_update(i, g, ledger, costs, prng.child("scan", i)) is not None:
                removals += 1
        n_rounds = period_cfg.rounds_per_period
        records.append(PeriodRecord(p, n_edges, n_cell / (n_rounds * n), payoff_sum / (n_rounds * n), removals))
        books.append(ledger.sent.copy())
        quiet = quiet + 1 if removals == 0 else 0
        if quiet >= period_cfg.stability_window:
            converged_at = p
            break

    engine = RoundEngine(g, users, contacts, period_cfg.relay_policy)
    payoffs, sent, received, cell = _evaluate(engine, n, costs, period_cfg.n_eval_rounds, rng.child("eval"))
    return RunResult(
        algorithm="network-formation",
        periods=records,
        final_network=g,
        converged=converged_at is not None,
        converged_at=converged_at,
        cellular_fraction=cell,
        user_payoffs=payoffs,
        d2d_sent=sent,
        d2d_received=received,
        recent_books=list(books) if converged_at is not None else [],
    )


def run_random_seeding(scenario: Scenario, n_seeds: int, rounds: int, costs: CostModel, rng: RngStream,
                       relay_policy: str = "on-hold") -> RunResult:
    """Centralised baseline: ``n_seeds`` random users get the content at t=0 and
    every contact pair shares unconditionally."""
    n = scenario.n_users
    if not 0 <= n_seeds <= n:
        raise ValueError(f"n_seeds must be in 0..{n}, got {n_seeds}")
    g = AgreementNetwork.from_contacts(scenario.contacts)
    engine = RoundEngine(g, scenario.users, scenario.contacts, relay_policy)

    def pick(rr: RngStream):
        return rr.child("seeds").generator.choice(n, size=n_seeds, replace=False).tolist()

    payoffs, sent, received, cell = _evaluate(engine, n, costs, rounds, rng, pick)
    record = PeriodRecord(1, g.n_edges, cell, float(payoffs.mean()), 0)
    return RunResult(
        algorithm="random-seeding",
        periods=[record],
        final_network=g,
        converged=True,
        converged_at=1,
        cellular_fraction=cell,
        user_payoffs=payoffs,
        d2d_sent=sent,
        d2d_received=received,
        n_seeds=n_seeds,
    )


def one_hop_estimates(g: AgreementNetwork, users, contacts: ContactGraph, costs: CostModel,
                      n_samples: int, rng: RngStream) -> dict:
    from d2doffload.payoff import estimate_payoff

    return {i: estimate_payoff(i, g, users, contacts, costs, n_samples, rng) for i in range(g.n_users)}


@dataclass
class ComponentCheck:
    members: list[int]
    estimated: float
    empirical: float
    std_error: float

    @property
    def underestimates(self) -> bool:
        return self.estimated <= self.empirical + 3.0 * self.std_error


@dataclass
class AggregatePayoffReport:
    estimated_total: float
    empirical_total: float
    components: list[ComponentCheck]

    @property
    def holds(self) -> bool:
        return all(c.underestimates for c in self.components)


def aggregate_payoff_check(run: RunResult, payoff_estimates) -> AggregatePayoffReport:
    """Compare summed one-hop payoff estimates with realised payoffs per component.

    ``payoff_estimates`` maps user -> :class:`PayoffEstimate` (or a float)
    computed on ``run.final_network``.
    """
    g = run.final_network
    est = {i: getattr(v, "payoff", v) for i, v in payoff_estimates.items()}
    est_se = {i: getattr(v, "std_error", 0.0) for i, v in payoff_estimates.items()}
    seen: set[int] = set()
    comps = []
    rounds = run.user_payoffs.shape[0]
    for i in range(g.n_users):
        if i in seen:
            continue
        members = sorted(connected_component(g, i))
        seen.update(members)
        per_round = run.user_payoffs[:, members].sum(axis=1)
        emp_se = per_round.std(ddof=1) / math.sqrt(rounds) if rounds > 1 else 0.0
        se = math.sqrt(emp_se ** 2 + sum(est_se[m] ** 2 for m in members))
        comps.append(ComponentCheck(members, sum(est[m] for m in members), float(per_round.mean()), se))
    return AggregatePayoffReport(sum(c.estimated for c in comps), sum(c.empirical for c in comps), comps)


def write_periods_csv(path, run: RunResult, provenance: dict | None = None):
    prov = provenance or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(prov) + ["period", "n_edges", "cellular_fraction", "mean_payoff", "removals"])
        for rec in run.periods:
            w.writerow(list(prov.values()) + [rec.period, rec.n_edges, repr(rec.cellular_fraction),
                                              repr(rec.mean_payoff), rec.removals])


def write_users_csv(path, run: RunResult, provenance: dict | None = None):
    prov = provenance or {}
    mean = run.user_mean_payoff
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(prov) + ["user", "degree", "mean_payoff", "d2d_sent", "d2d_received"])
        for i in range(run.final_network.n_users):
            w.writerow(list(prov.values()) + [i, run.final_network.degree(i), repr(float(mean[i])),
                                              int(run.d2d_sent[i]), int(run.d2d_received[i])])
