"""Link formation rules, pairwise stability and one-link-at-a-time dynamics.

A link is added only when both ends strictly gain, and removed when at least
one end strictly gains. A payoff function is any callable
``payoff(i, network) -> float``; an optional ``eps`` attribute sets the
tolerance below which payoff differences count as ties.
"""

from __future__ import annotations

import csv
from collections.abc import Callable
from dataclasses import dataclass, field

from d2doffload.model import AgreementNetwork, pair
from d2doffload.stochastic import RngStream


class CachedPayoff:
    """Memoise a payoff function per ``(user, network)``.

    Stochastic payoff estimates must not be refreshed within one dynamics
    run, otherwise the rules would disagree with themselves.
    """

    def __init__(self, fn: Callable[[int, AgreementNetwork], float], eps: float | None = None):
        self.fn = fn
        self.eps = getattr(fn, "eps", 0.0) if eps is None else eps
        self._cache: dict[tuple[int, frozenset], float] = {}

    def __call__(self, i: int, g: AgreementNetwork) -> float:
        key = (i, g.key())
        if key not in self._cache:
            self._cache[key] = float(self.fn(i, g))
        return self._cache[key]


def _eps(payoff) -> float:
    return float(getattr(payoff, "eps", 0.0))


def _gains(payoff, i: int, before: AgreementNetwork, after: AgreementNetwork) -> bool:
    return payoff(i, after) > payoff(i, before) + _eps(payoff)


def feasible_additions(g: AgreementNetwork, payoff) -> set[tuple[int, int]]:
    out = set()
    for i in range(g.n_users):
        for j in range(i + 1, g.n_users):
            if g.has_edge(i, j):
                continue
            h = g.with_edge(i, j)
            if _gains(payoff, i, g, h) and _gains(payoff, j, g, h):
                out.add((i, j))
    return out


def feasible_subtractions(g: AgreementNetwork, payoff) -> set[tuple[int, int]]:
    out = set()
    for i, j in g.edges:
        h = g.without_edge(i, j)
        if _gains(payoff, i, g, h) or _gains(payoff, j, g, h):
            out.add((i, j))
    return out


def is_pairwise_stable(g: AgreementNetwork, payoff) -> bool:
    return not feasible_subtractions(g, payoff) and not feasible_additions(g, payoff)


@dataclass(frozen=True)
class FormationStep:
    kind: str  # "add" or "subtract"
    edge: tuple[int, int]
    proposers: tuple[int, ...]
    n_edges: int = 0
    payoffs_before: tuple[float, float] = (0.0, 0.0)
    payoffs_after: tuple[float, float] = (0.0, 0.0)


@dataclass
class DynamicsResult:
    trajectory: list[FormationStep]
    final: AgreementNetwork
    terminated: bool
    visited: list[frozenset] = field(default_factory=list)


def run_dynamics(g0: AgreementNetwork, payoff, max_steps: int, rng: RngStream) -> DynamicsResult:
    """Apply uniformly random feasible moves until none is left or ``max_steps``.

    ``terminated`` is False when the cap was hit, which is how cycling
    inside a multi-network basin shows up.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    g = g0.copy()
    trajectory: list[FormationStep] = []
    visited = [g.key()]
    for _ in range(max_steps):
        moves = [("add", e) for e in sorted(feasible_additions(g, payoff))]
        moves += [("subtract", e) for e in sorted(feasible_subtractions(g, payoff))]
        if not moves:
            return DynamicsResult(trajectory, g, True, visited)
        kind, (i, j) = moves[int(rng.integers(len(moves)))]
        h = g.with_edge(i, j) if kind == "add" else g.without_edge(i, j)
        before = (payoff(i, g), payoff(j, g))
        after = (payoff(i, h), payoff(j, h))
        if kind == "add":
            proposers = (i, j)
        else:
            proposers = tuple(u for u, b, a in zip((i, j), before, after) if a > b + _eps(payoff))
        trajectory.append(FormationStep(kind, pair(i, j), proposers, h.n_edges, before, after))
        g = h
        visited.append(g.key())
    terminated = not feasible_additions(g, payoff) and not feasible_subtractions(g, payoff)
    return DynamicsResult(trajectory, g, terminated, visited)


TRAJECTORY_COLUMNS = ["step", "kind", "i", "j", "n_edges", "payoff_i_before", "payoff_i_after",
                      "payoff_j_before", "payoff_j_after"]


def write_trajectory_csv(path, trajectory: list[FormationStep]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for k, s in enumerate(trajectory, start=1):
            w.writerow([k, s.kind, s.edge[0], s.edge[1], s.n_edges,
                        repr(s.payoffs_before[0]), repr(s.payoffs_after[0]),
                        repr(s.payoffs_before[1]), repr(s.payoffs_after[1])])
