"""Exhaustive small-N analysis of the formation game.

Every network on ``N`` labelled users is a bitmask over the ``N(N-1)/2``
edge slots ``(0,1), (0,2), ..., (N-2,N-1)``. The rule supernetwork has a
directed edge ``G -> G'`` for each single-link toggle the formation rules
allow. Its strongly connected components are the path-equivalence classes;
sink classes of the condensation are basins, and singleton basins are the
pairwise stable networks.
"""

from __future__ import annotations

import csv
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from d2doffload.model import AgreementNetwork
from d2doffload.stochastic import RngStream

MAX_EDGE_SLOTS = 20


class StabilityTheoryError(AssertionError):
    """A structural claim about basins or pairwise stability failed."""


def edge_slots(n_users: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n_users) for j in range(i + 1, n_users)]


def network_to_mask(g: AgreementNetwork) -> int:
    index = {e: k for k, e in enumerate(edge_slots(g.n_users))}
    return sum(1 << index[e] for e in g.edges)


def mask_to_network(mask: int, n_users: int) -> AgreementNetwork:
    return AgreementNetwork(n_users, (e for k, e in enumerate(edge_slots(n_users)) if mask >> k & 1))


def _check_size(n_users: int) -> int:
    m = n_users * (n_users - 1) // 2
    if m > MAX_EDGE_SLOTS:
        raise ValueError(f"N={n_users} gives 2^{m} networks; exhaustive analysis is capped at "
                         f"{MAX_EDGE_SLOTS} edge slots (N <= 6)")
    return m


def payoff_table_from_fn(n_users: int, payoff) -> np.ndarray:
    """Tabulate ``payoff(i, G)`` for every user and every network."""
    m = _check_size(n_users)
    table = np.empty((n_users, 1 << m))
    for mask in range(1 << m):
        g = mask_to_network(mask, n_users)
        for i in range(n_users):
            table[i, mask] = payoff(i, g)
    return table


def random_payoff_table(n_users: int, rng: RngStream) -> np.ndarray:
    m = _check_size(n_users)
    return rng.generator.standard_normal((n_users, 1 << m))


def _as_table(n_users: int, payoffs, m: int) -> np.ndarray:
    n_nodes = 1 << m
    if isinstance(payoffs, Mapping):
        table = np.empty((n_users, n_nodes))
        missing = []
        for i in range(n_users):
            for mask in range(n_nodes):
                try:
                    table[i, mask] = payoffs[(i, mask)]
                except KeyError:
                    missing.append((i, mask))
        if missing:
            raise ValueError(f"payoff table is missing {len(missing)} entries, e.g. {missing[:3]}")
        return table
    table = np.asarray(payoffs, dtype=float)
    if table.shape != (n_users, n_nodes):
        raise ValueError(f"payoff table must have shape {(n_users, n_nodes)}, got {table.shape}")
    if not np.all(np.isfinite(table)):
        raise ValueError("payoff table has non-finite entries")
    return table


@dataclass
class RuleSupernetwork:
    """Directed graph over networks in CSR form (``indptr``, ``indices``)."""

    n_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    n_users: int | None = None
    labels: list[str] | None = None

    @classmethod
    def from_edges(cls, n_nodes: int, edges, labels=None, n_users=None) -> "RuleSupernetwork":
        edges = sorted(set((int(u), int(v)) for u, v in edges))
        if any(u == v for u, v in edges):
            raise ValueError("supernetwork is a simple graph; self-loops are not allowed")
        src = np.array([u for u, _ in edges], dtype=np.int64)
        dst = np.array([v for _, v in edges], dtype=np.int64)
        indptr = np.zeros(n_nodes + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        return cls(n_nodes, np.cumsum(indptr), dst, n_users, labels)

    def successors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def out_degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def n_edges(self) -> int:
        return int(self.indices.size)

    def label(self, v: int) -> str:
        return self.labels[v] if self.labels else str(v)


def build_supernetwork(n_users: int, payoffs, eps: float = 0.0) -> RuleSupernetwork:
    """Rule supernetwork for a payoff table indexed ``[user, mask]``.

    ``payoffs`` may be an array of shape ``(N, 2**m)`` or a mapping from
    ``(user, mask)`` to payoff.
    """
    m = _check_size(n_users)
    table = _as_table(n_users, payoffs, m)
    masks = np.arange(1 << m, dtype=np.int64)
    src_parts, dst_parts = [], []
    for k, (i, j) in enumerate(edge_slots(n_users)):
        other = masks ^ (1 << k)
        gain_i = table[i, other] > table[i, masks] + eps
        gain_j = table[j, other] > table[j, masks] + eps
        has = (masks >> k & 1).astype(bool)
        allowed = np.where(has, gain_i | gain_j, gain_i & gain_j)
        src_parts.append(masks[allowed])
        dst_parts.append(other[allowed])
    src = np.concatenate(src_parts)
    dst = np.concatenate(dst_parts)
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros((1 << m) + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    return RuleSupernetwork(1 << m, np.cumsum(indptr), dst, n_users)


def strongly_connected_components(sn: RuleSupernetwork) -> list[list[int]]:
    """Iterative Tarjan; components come out in reverse topological order."""
    n = sn.n_nodes
    indptr, indices = sn.indptr.tolist(), sn.indices.tolist()
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    comps: list[list[int]] = []
    counter = 0
    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, indptr[root])]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, pos = work[-1]
            if pos < indptr[v + 1]:
                work[-1] = (v, pos + 1)
                w = indices[pos]
                if index[w] == -1:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, indptr[w]))
                elif on_stack[w] and index[w] < low[v]:
                    low[v] = index[w]
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                if low[v] < low[parent]:
                    low[parent] = low[v]
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                comps.append(sorted(comp))
    return comps


@dataclass
class Condensation:
    classes: list[list[int]]
    class_of: np.ndarray
    successors: list[set[int]]
    is_basin: np.ndarray

    @property
    def basins(self) -> list[list[int]]:
        return [c for c, b in zip(self.classes, self.is_basin) if b]

    @property
    def n_classes(self) -> int:
        return len(self.classes)


def _assert_acyclic(successors: list[set[int]]):
    indeg = [0] * len(successors)
    for succ in successors:
        for d in succ:
            indeg[d] += 1
    ready = [c for c, k in enumerate(indeg) if k == 0]
    seen = 0
    while ready:
        c = ready.pop()
        seen += 1
        for d in successors[c]:
            indeg[d] -= 1
            if indeg[d] == 0:
                ready.append(d)
    if seen != len(successors):
        raise StabilityTheoryError("condensation of the rule supernetwork contains a cycle")


def condense(sn: RuleSupernetwork) -> Condensation:
    """Path-equivalence classes, the acyclic quotient graph and its basins.

    Classes are numbered by their smallest member. Quotient edges are the
    supernetwork edges that cross classes; their transitive closure is the
    path-dominance relation between classes, with the same sinks.
    """
    classes = sorted(strongly_connected_components(sn), key=lambda c: c[0])
    class_of = np.empty(sn.n_nodes, dtype=np.int64)
    for c, members in enumerate(classes):
        class_of[members] = c
    successors: list[set[int]] = [set() for _ in classes]
    src = np.repeat(np.arange(sn.n_nodes), sn.out_degree())
    cs, cd = class_of[src], class_of[sn.indices]
    cross = cs != cd
    for a, b in zip(cs[cross].tolist(), cd[cross].tolist()):
        successors[a].add(b)
    _assert_acyclic(successors)
    is_basin = np.array([not s for s in successors], dtype=bool)
    return Condensation(classes, class_of, successors, is_basin)


def pairwise_stable_set(sn: RuleSupernetwork, cond: Condensation | None = None) -> frozenset[int]:
    """Networks with no permitted move, cross-checked against singleton basins.

    Raises :class:`StabilityTheoryError` if the direct scan and the union of
    singleton basins disagree.
    """
    cond = cond if cond is not None else condense(sn)
    direct = frozenset(np.flatnonzero(sn.out_degree() == 0).tolist())
    via_basins = frozenset(c[0] for c in cond.basins if len(c) == 1)
    if direct != via_basins:
        raise StabilityTheoryError(
            f"pairwise stable scan {sorted(direct)} != singleton basins {sorted(via_basins)}")
    return direct


@dataclass
class BasinReport:
    checks: dict[str, bool]
    counterexamples: list[str] = field(default_factory=list)
    n_basins: int = 0
    basin_sizes: list[int] = field(default_factory=list)
    pairwise_stable: frozenset = frozenset()
    n_trajectories: int = 0
    n_converged: int = 0

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def summary(self) -> str:
        lines = [f"basins: {self.n_basins} (sizes {sorted(self.basin_sizes)})",
                 f"pairwise stable networks: {sorted(self.pairwise_stable)}",
                 f"trajectories converged: {self.n_converged}/{self.n_trajectories}"]
        lines += [f"[{'PASS' if ok else 'FAIL'}] {name}" for name, ok in self.checks.items()]
        lines += [f"  counterexample: {c}" for c in self.counterexamples]
        return "\n".join(lines)


def random_walks(sn: RuleSupernetwork, starts: np.ndarray, max_steps: int, rng: RngStream) -> np.ndarray:
    """Simulate the rule dynamics on ``sn``; returns positions of shape ``(max_steps+1, n)``.

    Each step moves every walker to a uniformly random successor; walkers
    on nodes without successors stay put.
    """
    deg = sn.out_degree()
    pos = np.asarray(starts, dtype=np.int64).copy()
    path = np.empty((max_steps + 1, pos.size), dtype=np.int64)
    path[:] = pos
    if sn.indices.size == 0:
        return path
    last = sn.indices.size - 1
    for step in range(1, max_steps + 1):
        d = deg[pos]
        offset = (rng.generator.random(pos.size) * d).astype(np.int64)
        nxt = sn.indices[np.minimum(sn.indptr[pos] + offset, last)]
        pos = np.where(d > 0, nxt, pos)
        path[step] = pos
    return path


def verify_theorem1(sn: RuleSupernetwork, cond: Condensation | None, n_trajectories: int,
                    max_steps: int, rng: RngStream) -> BasinReport:
    """Check the basin-existence, stable-set and convergence claims on one instance.

    Trajectory starts cycle through every network, so with
    ``n_trajectories >= n_nodes`` each network is a start at least once.
    """
    cond = cond if cond is not None else condense(sn)
    checks: dict[str, bool] = {}
    bad: list[str] = []
    basins = cond.basins

    checks["basins exist"] = len(basins) > 0
    if not basins:
        bad.append("no sink class in the condensation")

    try:
        ps = pairwise_stable_set(sn, cond)
        checks["stable set equals union of singleton basins"] = True
    except StabilityTheoryError as exc:
        ps = frozenset(np.flatnonzero(sn.out_degree() == 0).tolist())
        checks["stable set equals union of singleton basins"] = False
        bad.append(str(exc))

    starts = np.arange(n_trajectories) % sn.n_nodes
    path = random_walks(sn, starts, max_steps, rng)
    cls = cond.class_of[path]
    in_basin = cond.is_basin[cls]
    entered = in_basin.any(axis=0)
    first = np.argmax(in_basin, axis=0)
    entry_class = cls[first, np.arange(cls.shape[1])]
    steps = np.arange(path.shape[0])[:, None]
    left = ((steps >= first[None, :]) & (cls != entry_class[None, :])).any(axis=0) & entered
    checks["every trajectory enters a basin"] = bool(entered.all())
    checks["no trajectory leaves its basin"] = not bool(left.any())
    for t in np.flatnonzero(~entered)[:3]:
        bad.append(f"trajectory from {sn.label(int(starts[t]))} never entered a basin in {max_steps} steps")
    for t in np.flatnonzero(left)[:3]:
        bad.append(f"trajectory from {sn.label(int(starts[t]))} left basin class {int(entry_class[t])}")

    converged = sn.out_degree()[path[-1]] == 0
    all_singleton = all(len(b) == 1 for b in basins)
    checks["all starts converge iff all basins are singletons"] = bool(converged.all()) == all_singleton
    if bool(converged.all()) != all_singleton:
        bad.append(f"all converged={bool(converged.all())} but all basins singleton={all_singleton}")

    return BasinReport(
        checks=checks,
        counterexamples=bad,
        n_basins=len(basins),
        basin_sizes=[len(b) for b in basins],
        pairwise_stable=ps,
        n_trajectories=int(n_trajectories),
        n_converged=int(converged.sum()),
    )


def cycle_example_supernetwork() -> RuleSupernetwork:
    """Six-network worked example: a circuit G1->G2->G3->G1 and a chain G4->G5->G6.

    G4 also feeds the circuit, so the classes are {G1,G2,G3}, {G4}, {G5}, {G6}
    with basins {G1,G2,G3} and {G6}.
    """
    labels = [f"G{k}" for k in range(1, 7)]
    edges = [(0, 1), (1, 2), (2, 0), (3, 0), (3, 4), (4, 5)]
    return RuleSupernetwork.from_edges(6, edges, labels)


def write_condensation_csv(path, sn: RuleSupernetwork, cond: Condensation):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class_id", "size", "is_basin", "members"])
        for c, members in enumerate(cond.classes):
            w.writerow([c, len(members), int(cond.is_basin[c]), ";".join(sn.label(v) for v in members)])


def write_report(path, report: BasinReport):
    with open(path, "w") as fh:
        fh.write(report.summary() + "\n")
