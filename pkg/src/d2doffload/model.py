"""Scenario data model: users, contact graph, agreement network, costs.

Scenarios are drawn the same way for every experiment: per-user Weibull
parameters uniform in their ranges, a random contact graph in which every
user meets at most ``max_contacts`` others, and per-pair Pareto parameters
uniform in their ranges.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from d2doffload.stochastic import ParetoParams, RngStream, WeibullParams


def pair(i: int, j: int) -> tuple[int, int]:
    if i == j:
        raise ValueError(f"self-pair ({i}, {i}) is not allowed")
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class UserProfile:
    id: int
    access_delay: WeibullParams


class ContactGraph:
    """Symmetric sparse map from unordered user pairs to Pareto parameters.

    Pairs that are absent never meet.
    """

    def __init__(self, n_users: int, edges: dict | None = None):
        self.n_users = int(n_users)
        self._edges: dict[tuple[int, int], ParetoParams] = {}
        self._adj: list[set[int]] = [set() for _ in range(self.n_users)]
        for (i, j), params in (edges or {}).items():
            self.add(i, j, params)

    def add(self, i: int, j: int, params: ParetoParams):
        e = pair(i, j)
        if not (0 <= e[0] and e[1] < self.n_users):
            raise ValueError(f"pair {e} outside 0..{self.n_users - 1}")
        self._edges[e] = params
        self._adj[e[0]].add(e[1])
        self._adj[e[1]].add(e[0])

    def params(self, i: int, j: int) -> ParetoParams | None:
        if i == j:
            return None
        return self._edges.get(pair(i, j))

    def has(self, i: int, j: int) -> bool:
        return i != j and pair(i, j) in self._edges

    def neighbors(self, i: int) -> set[int]:
        return set(self._adj[i])

    def degree(self, i: int) -> int:
        return len(self._adj[i])

    @property
    def edges(self) -> dict[tuple[int, int], ParetoParams]:
        return dict(sorted(self._edges.items()))

    def __len__(self):
        return len(self._edges)

    def __eq__(self, other):
        return (isinstance(other, ContactGraph) and self.n_users == other.n_users
                and self._edges == other._edges)

    def __repr__(self):
        return f"ContactGraph(n_users={self.n_users}, n_edges={len(self)})"


class AgreementNetwork:
    """Undirected simple graph of live D2D sharing agreements."""

    def __init__(self, n_users: int, edges=()):
        self.n_users = int(n_users)
        self._adj: list[set[int]] = [set() for _ in range(self.n_users)]
        self._edges: set[tuple[int, int]] = set()
        for i, j in edges:
            self.add_edge(i, j)

    @classmethod
    def complete(cls, n_users: int) -> "AgreementNetwork":
        return cls(n_users, ((i, j) for i in range(n_users) for j in range(i + 1, n_users)))

    @classmethod
    def from_contacts(cls, contacts: ContactGraph) -> "AgreementNetwork":
        return cls(contacts.n_users, contacts.edges.keys())

    def _check(self, i, j):
        e = pair(i, j)
        if not (0 <= e[0] and e[1] < self.n_users):
            raise ValueError(f"edge {e} outside 0..{self.n_users - 1}")
        return e

    def add_edge(self, i: int, j: int):
        e = self._check(i, j)
        if e in self._edges:
            return
        self._edges.add(e)
        self._adj[i].add(j)
        self._adj[j].add(i)

    def remove_edge(self, i: int, j: int):
        e = self._check(i, j)
        if e not in self._edges:
            raise KeyError(f"edge {e} not in network")
        self._edges.remove(e)
        self._adj[i].discard(j)
        self._adj[j].discard(i)

    def has_edge(self, i: int, j: int) -> bool:
        return i != j and pair(i, j) in self._edges

    def neighbors(self, i: int) -> set[int]:
        return set(self._adj[i])

    def degree(self, i: int) -> int:
        return len(self._adj[i])

    @property
    def edges(self) -> list[tuple[int, int]]:
        return sorted(self._edges)

    @property
    def n_edges(self) -> int:
        return len(self._edges)

    def copy(self) -> "AgreementNetwork":
        return AgreementNetwork(self.n_users, self._edges)

    def with_edge(self, i: int, j: int) -> "AgreementNetwork":
        g = self.copy()
        g.add_edge(i, j)
        return g

    def without_edge(self, i: int, j: int) -> "AgreementNetwork":
        g = self.copy()
        g.remove_edge(i, j)
        return g

    def key(self) -> frozenset:
        return frozenset(self._edges)

    def __eq__(self, other):
        return (isinstance(other, AgreementNetwork) and self.n_users == other.n_users
                and self._edges == other._edges)

    def __hash__(self):
        return hash((self.n_users, self.key()))

    def __repr__(self):
        return f"AgreementNetwork(n_users={self.n_users}, edges={self.edges})"


def neighbors(g: AgreementNetwork, i: int) -> set[int]:
    return g.neighbors(i)


def connected_component(g: AgreementNetwork, i: int) -> set[int]:
    if not 0 <= i < g.n_users:
        raise ValueError(f"user {i} outside 0..{g.n_users - 1}")
    seen = {i}
    stack = [i]
    while stack:
        u = stack.pop()
        for v in g._adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


@dataclass(frozen=True)
class CostModel:
    v_c: float = 4.0
    v_d: float = 1.0

    def __post_init__(self):
        if not (self.v_c > 0 and self.v_d > 0):
            raise ValueError(f"costs must be positive, got v_c={self.v_c}, v_d={self.v_d}")
        if self.v_d >= self.v_c:
            warnings.warn(f"D2D cost v_d={self.v_d} is not below cellular cost v_c={self.v_c}",
                          stacklevel=3)

    @classmethod
    def from_ratio(cls, ratio: float, v_d: float = 1.0) -> "CostModel":
        return cls(v_c=ratio * v_d, v_d=v_d)

    @property
    def ratio(self) -> float:
        return self.v_c / self.v_d


def _range(value, name):
    lo, hi = (float(v) for v in value)
    if lo > hi:
        raise ValueError(f"{name} range is not ordered: [{lo}, {hi}]")
    return (lo, hi)


@dataclass(frozen=True)
class ScenarioConfig:
    n_users: int = 20
    max_contacts: int = 3
    k_range: tuple[float, float] = (2.0, 6.0)
    lam_range: tuple[float, float] = (15.0, 45.0)
    alpha_range: tuple[float, float] = (1.01, 3.0)
    tau_range: tuple[float, float] = (10.0, 15.0)
    costs: CostModel = field(default_factory=CostModel)
    seed: int = 0

    def __post_init__(self):
        for name in ("k_range", "lam_range", "alpha_range", "tau_range"):
            object.__setattr__(self, name, _range(getattr(self, name), name))
        if self.n_users < 2:
            raise ValueError(f"need at least 2 users, got {self.n_users}")
        if self.max_contacts < 1:
            raise ValueError(f"max_contacts must be >= 1, got {self.max_contacts}")
        if self.k_range[0] <= 0 or self.lam_range[0] <= 0 or self.tau_range[0] <= 0:
            raise ValueError("k, lambda and tau ranges must be strictly positive")
        if self.alpha_range[0] <= 1:
            raise ValueError(f"alpha_min must exceed 1, got {self.alpha_range[0]}")
        if isinstance(self.costs, dict):
            object.__setattr__(self, "costs", CostModel(**self.costs))

    @property
    def tau_avg(self) -> float:
        return sum(self.tau_range) / 2

    @property
    def lam_avg(self) -> float:
        return sum(self.lam_range) / 2

    def with_changes(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("k_range", "lam_range", "alpha_range", "tau_range"):
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "costs" in d and isinstance(d["costs"], dict):
            d["costs"] = CostModel(**d["costs"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Scenario:
    config: ScenarioConfig
    users: list[UserProfile]
    contacts: ContactGraph

    @property
    def n_users(self) -> int:
        return len(self.users)


_ENUMERATE_BELOW = 64


def _greedy_pairing(n: int, m: int, gen: np.random.Generator) -> list[tuple[int, int]]:
    """Link uniformly random admissible pairs until none is left.

    A pair is admissible when both ends have degree below ``m`` and are not
    yet linked. With many open vertices a uniform open pair is drawn and
    rejected if already linked (below half of open pairs are once
    ``|open| > 2m``); with few left the admissible pairs are enumerated.
    """
    degree = np.zeros(n, dtype=int)
    linked: set[tuple[int, int]] = set()
    chosen = []
    open_ = list(range(n))
    while len(open_) >= 2:
        if len(open_) <= max(_ENUMERATE_BELOW, 2 * m):
            cand = [(a, b) for x, a in enumerate(open_) for b in open_[x + 1:] if (a, b) not in linked]
            if not cand:
                break
            a, b = cand[int(gen.integers(len(cand)))]
        else:
            x = int(gen.integers(len(open_)))
            y = int(gen.integers(len(open_) - 1))
            a, b = open_[x], open_[y + (y >= x)]
        e = (min(a, b), max(a, b))
        if e in linked:
            continue
        linked.add(e)
        chosen.append(e)
        for u in e:
            degree[u] += 1
            if degree[u] >= m:
                open_.remove(u)
    return chosen


def generate_scenario(cfg: ScenarioConfig, rng: RngStream):
    """Draw users and a contact graph for ``cfg``.

    Contact edges come from maximal random greedy pairing: a uniformly random
    non-adjacent pair whose endpoints both have degree below ``max_contacts``
    is linked, until no such pair is left.
    """
    n, m = cfg.n_users, cfg.max_contacts
    gen = rng.child("users").generator
    ks = gen.uniform(*cfg.k_range, size=n)
    lams = gen.uniform(*cfg.lam_range, size=n)
    users = [UserProfile(i, WeibullParams(float(ks[i]), float(lams[i]))) for i in range(n)]

    chosen = _greedy_pairing(n, m, rng.child("pairs").generator)

    gen = rng.child("edge_params").generator
    alphas = gen.uniform(*cfg.alpha_range, size=len(chosen))
    taus = gen.uniform(*cfg.tau_range, size=len(chosen))
    contacts = ContactGraph(n)
    for (i, j), a, t in zip(chosen, alphas, taus):
        contacts.add(i, j, ParetoParams(tau=float(t), alpha=float(a)))
    return users, contacts


def build_scenario(cfg: ScenarioConfig, rng: RngStream | None = None) -> Scenario:
    rng = rng if rng is not None else RngStream(cfg.seed, "scenario")
    users, contacts = generate_scenario(cfg, rng)
    return Scenario(cfg, users, contacts)


def scenario_to_dict(cfg: ScenarioConfig, users=None, contacts=None) -> dict:
    out = {"scenario": cfg.to_dict()}
    if users is not None:
        out["materialized"] = {
            "users": [{"id": u.id, "k": u.access_delay.k, "lambda": u.access_delay.lam} for u in users],
            "contacts": [
                {"i": i, "j": j, "tau": p.tau, "alpha": p.alpha}
                for (i, j), p in (contacts.edges.items() if contacts is not None else [])
            ],
        }
    return out


def scenario_from_dict(d: dict):
    cfg = ScenarioConfig.from_dict(d["scenario"])
    mat = d.get("materialized")
    if not mat:
        return cfg, None
    users = [UserProfile(int(u["id"]), WeibullParams(float(u["k"]), float(u["lambda"])))
             for u in mat["users"]]
    if [u.id for u in users] != list(range(len(users))):
        raise ValueError("materialized user ids must be 0..N-1 in order")
    contacts = ContactGraph(len(users))
    for c in mat.get("contacts", []):
        contacts.add(int(c["i"]), int(c["j"]), ParetoParams(tau=float(c["tau"]), alpha=float(c["alpha"])))
    return cfg, Scenario(cfg, users, contacts)


def save_scenario(path, cfg: ScenarioConfig, users=None, contacts=None):
    with open(path, "w") as fh:
        yaml.safe_dump(scenario_to_dict(cfg, users, contacts), fh, sort_keys=False)


def load_scenario(path):
    """Return ``(config, scenario_or_None)`` from a YAML scenario file."""
    with open(Path(path)) as fh:
        return scenario_from_dict(yaml.safe_load(fh))
