"""One-hop estimate of a user's expected gain, cost and payoff.

For a receiver ``i`` with neighbour set ``S``, a neighbour ``j`` that accesses
the content before ``i`` (``a_j < a_i``) can deliver it at ``a_j + b_j`` where
``b_j`` is a fresh Pareto inter-contact draw for the pair. The earliest such
delivery before ``a_i`` wins; otherwise ``i`` downloads over cellular.

Two independent evaluators are provided:

* :func:`estimate_delivery_probs` -- Monte-Carlo, linear in ``|S|``.
* :func:`quadrature_delivery_probs` -- deterministic tensor-grid quadrature,
  restricted to ``|S| <= 2`` and meant as a test oracle.

Random draws are keyed per user (access delays) and per pair (meeting
offsets), so two calls sharing an :class:`RngStream` reuse the same samples
for the users they have in common (common random numbers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from d2doffload.model import AgreementNetwork, ContactGraph, CostModel, UserProfile, pair
from d2doffload.stochastic import (
    RngStream,
    pareto_cdf,
    pareto_survival,
    sample_pareto,
    sample_weibull,
    weibull_cdf,
)

# Access-delay truncation for the quadrature: the dropped tail has mass 1e-6.
TAIL_MASS = 1e-6
QUADRATURE_MAX_NEIGHBORS = 2


@dataclass
class PayoffEstimate:
    user: int
    delivery_prob: dict[int, float]
    gain: float
    cost: float
    payoff: float
    n_samples: int
    std_error: float
    sent_prob: dict[int, float] = field(default_factory=dict)


def _profile(users, u) -> UserProfile:
    try:
        prof = users[u]
    except (IndexError, KeyError):
        prof = None
    if prof is None or prof.id != u:
        raise ValueError(f"user {u} has no access-delay parameters")
    return prof


def _access_samples(users, u, rng: RngStream, n: int) -> np.ndarray:
    return sample_weibull(_profile(users, u).access_delay, rng.child("access", u), n)


def delivery_counts(i: int, g: AgreementNetwork, users, contacts: ContactGraph,
                    n_samples: int, rng: RngStream) -> dict[int, int]:
    """Count, per source, the samples in which that source delivers to ``i``."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    nbrs = sorted(g.neighbors(i))
    a_i = _access_samples(users, i, rng, n_samples)
    counts = {i: n_samples}
    if not nbrs:
        return counts
    times = np.full((n_samples, len(nbrs)), np.inf)
    for col, j in enumerate(nbrs):
        a_j = _access_samples(users, j, rng, n_samples)
        params = contacts.params(i, j)
        if params is None:
            continue
        b = sample_pareto(params, rng.child("meet", *pair(i, j)), n_samples)
        times[:, col] = np.where(a_j < a_i, a_j + b, np.inf)
    best = np.argmin(times, axis=1)
    best_time = times[np.arange(n_samples), best]
    delivered = best_time < a_i
    per_col = np.bincount(best[delivered], minlength=len(nbrs))
    for col, j in enumerate(nbrs):
        counts[j] = int(per_col[col])
    counts[i] = int(n_samples - delivered.sum())
    return counts


def estimate_delivery_probs(i: int, g: AgreementNetwork, users, contacts: ContactGraph,
                            n_samples: int, rng: RngStream) -> dict[int, float]:
    counts = delivery_counts(i, g, users, contacts, n_samples, rng)
    return {s: c / n_samples for s, c in counts.items()}


def _access_grid(users, u: int, grid: int):
    """Midpoint nodes and exact cell masses of ``u``'s truncated access delay."""
    p = _profile(users, u).access_delay
    upper = p.lam * math.log(1.0 / TAIL_MASS) ** (1.0 / p.k)
    edges = np.linspace(0.0, upper, grid + 1)
    mass = np.diff(weibull_cdf(p, edges))
    mass /= mass.sum()
    return 0.5 * (edges[:-1] + edges[1:]), mass, upper


def quadrature_delivery_probs(i: int, g: AgreementNetwork, users, contacts: ContactGraph,
                              grid: int = 400) -> dict[int, float]:
    """Deterministic evaluation of the one-hop delivery integrals.

    Each access delay is discretised on its own ``grid``-cell midpoint grid
    over ``[0, lambda * ln(1e6)**(1/k)]`` with exact cell masses. The inner
    time integral uses a grid of ``2*grid`` cells over the receiver's domain,
    so every receiver node is a cell edge; the Pareto mass per cell is exact.
    A competing neighbour ``l`` enters through ``Q_l(t) = E[S_l(t - a_l)]``,
    the probability that ``l`` has not reached ``i`` by ``t``.
    """
    nbrs = sorted(g.neighbors(i))
    if len(nbrs) > QUADRATURE_MAX_NEIGHBORS:
        raise ValueError(f"quadrature oracle supports at most {QUADRATURE_MAX_NEIGHBORS} "
                         f"neighbours, user {i} has {len(nbrs)}")
    x_i, w_i, upper_i = _access_grid(users, i, grid)
    if not nbrs:
        return {i: 1.0}

    t_edges = np.linspace(0.0, upper_i, 2 * grid + 1)
    t_mid = 0.5 * (t_edges[:-1] + t_edges[1:])
    grids = {j: _access_grid(users, j, grid) for j in nbrs}
    params = {j: contacts.params(i, j) for j in nbrs}

    def not_arrived(l, t):
        # Q_l(t); identically 1 for a neighbour that never meets i
        if params[l] is None:
            return np.ones_like(t)
        x_l, w_l, _ = grids[l]
        return pareto_survival(params[l], t[:, None] - x_l[None, :]) @ w_l

    out = {i: float(w_i @ np.prod([not_arrived(l, x_i) for l in nbrs], axis=0))}
    for j in nbrs:
        if params[j] is None:
            out[j] = 0.0
            continue
        x_j, w_j, _ = grids[j]
        others = [l for l in nbrs if l != j]
        q = np.prod([not_arrived(l, t_mid) for l in others], axis=0) if others else np.ones_like(t_mid)
        cdf = pareto_cdf(params[j], t_edges[None, :] - x_j[:, None])
        cell = np.diff(cdf, axis=1) * q[None, :]
        cum = np.concatenate([np.zeros((len(x_j), 1)), np.cumsum(cell, axis=1)], axis=1)
        # receiver node a sits at t_edges[2a + 1]
        inner = cum[:, 1::2]
        out[j] = float(w_j @ inner @ w_i)
    return out


def estimate_payoff(i: int, g: AgreementNetwork, users, contacts: ContactGraph,
                    costs: CostModel, n_samples: int, rng: RngStream) -> PayoffEstimate:
    """Gain ``v_c (1 - P_ii)``, cost ``v_d * sum_j P_ij`` and their difference.

    ``P_ij`` (``i`` delivering to neighbour ``j``) is read off ``j``'s own
    delivery estimate.
    """
    probs = estimate_delivery_probs(i, g, users, contacts, n_samples, rng)
    sent = {}
    for j in sorted(g.neighbors(i)):
        sent[j] = estimate_delivery_probs(j, g, users, contacts, n_samples, rng)[i]
    p_self = probs[i]
    gain = costs.v_c * (1.0 - p_self)
    cost = costs.v_d * sum(sent.values())
    var = costs.v_c ** 2 * p_self * (1 - p_self) + costs.v_d ** 2 * sum(p * (1 - p) for p in sent.values())
    return PayoffEstimate(
        user=i,
        delivery_prob=probs,
        gain=gain,
        cost=cost,
        payoff=gain - cost,
        n_samples=n_samples,
        std_error=math.sqrt(var / n_samples),
        sent_prob=sent,
    )


class OneHopPayoff:
    """Payoff function ``(user, network) -> float`` backed by the one-hop estimate.

    Every evaluation uses the same base stream, so payoffs are deterministic
    per network and comparisons between networks use common random numbers.
    Delivery probabilities are cached per (receiver, neighbour set).
    """

    def __init__(self, users, contacts: ContactGraph, costs: CostModel, n_samples: int = 100_000,
                 seed: int = 0, eps: float = 0.0, method: str = "mc", grid: int = 400):
        if method not in ("mc", "quadrature"):
            raise ValueError(f"unknown method {method!r}")
        self.users = users
        self.contacts = contacts
        self.costs = costs
        self.n_samples = n_samples
        self.rng = RngStream(seed, "one-hop-payoff")
        self.eps = eps
        self.method = method
        self.grid = grid
        self._probs: dict[tuple[int, frozenset], dict[int, float]] = {}

    def delivery_probs(self, j: int, g: AgreementNetwork) -> dict[int, float]:
        key = (j, frozenset(g.neighbors(j)))
        if key not in self._probs:
            if self.method == "mc":
                self._probs[key] = estimate_delivery_probs(j, g, self.users, self.contacts,
                                                           self.n_samples, self.rng)
            else:
                self._probs[key] = quadrature_delivery_probs(j, g, self.users, self.contacts, self.grid)
        return self._probs[key]

    def __call__(self, i: int, g: AgreementNetwork) -> float:
        gain = self.costs.v_c * (1.0 - self.delivery_probs(i, g)[i])
        cost = self.costs.v_d * sum(self.delivery_probs(j, g)[i] for j in g.neighbors(i))
        return gain - cost
