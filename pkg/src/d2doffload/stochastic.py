"""Access-delay and inter-contact distributions, plus labelled RNG streams.

Access delays are Weibull(k, lambda); inter-contact times are Pareto with
minimum ``tau`` and shape ``alpha > 1``. Both samplers use inverse-transform
sampling so that one uniform draw maps to one sample.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WeibullParams:
    k: float
    lam: float

    def __post_init__(self):
        if not (self.k > 0 and self.lam > 0):
            raise ValueError(f"Weibull needs k > 0 and lambda > 0, got k={self.k}, lambda={self.lam}")

    @property
    def mean(self) -> float:
        return self.lam * math.gamma(1.0 + 1.0 / self.k)

    def quantile(self, q: float) -> float:
        return self.lam * (-math.log1p(-q)) ** (1.0 / self.k)


@dataclass(frozen=True)
class ParetoParams:
    tau: float
    alpha: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"Pareto needs tau > 0, got {self.tau}")
        if not self.alpha > 1:
            raise ValueError(f"Pareto needs alpha > 1 for a finite contact rate, got {self.alpha}")

    @property
    def mean(self) -> float:
        return self.alpha * self.tau / (self.alpha - 1.0)


def _label_key(label) -> list[int]:
    if isinstance(label, (tuple, list)):
        text = "/".join(str(part) for part in label)
    else:
        text = str(label)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


class RngStream:
    """Deterministic random stream identified by ``(seed, label)``.

    Streams with the same seed and label replay identical sequences.
    ``child`` derives a new stream whose label extends this one, so
    independent components (users, pairs, rounds) can draw without
    perturbing each other's sequences.
    """

    def __init__(self, seed: int, label=()):
        if isinstance(label, (tuple, list)):
            self.label = tuple(str(p) for p in label)
        else:
            self.label = (str(label),)
        self.seed = int(seed)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=_label_key(self.label))
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def child(self, *parts) -> "RngStream":
        return RngStream(self.seed, self.label + tuple(str(p) for p in parts))

    def uniform(self, size=None):
        # open interval (0, 1): both inverse transforms need U > 0
        u = self.generator.random(size)
        return 1.0 - u

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def shuffled(self, items):
        items = list(items)
        self.generator.shuffle(items)
        return items

    def __repr__(self):
        return f"RngStream(seed={self.seed}, label={'/'.join(self.label)!r})"


def weibull_pdf(p: WeibullParams, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("Weibull density is defined for t >= 0")
    z = t / p.lam
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (p.k / p.lam) * z ** (p.k - 1.0) * np.exp(-(z ** p.k))
    return out[()] if out.ndim == 0 else out


def weibull_cdf(p: WeibullParams, t):
    t = np.maximum(np.asarray(t, dtype=float), 0.0)
    out = -np.expm1(-((t / p.lam) ** p.k))
    return out[()] if out.ndim == 0 else out


def sample_weibull(p: WeibullParams, rng: RngStream, size=None):
    u = rng.uniform(size)
    return p.lam * (-np.log(u)) ** (1.0 / p.k)


def pareto_pdf(p: ParetoParams, t):
    # alpha * tau^alpha / t^(alpha+1); the only density whose survival is (tau/t)^alpha
    t = np.asarray(t, dtype=float)
    safe = np.maximum(t, p.tau)
    out = np.where(t < p.tau, 0.0, p.alpha * p.tau ** p.alpha / safe ** (p.alpha + 1.0))
    return out[()] if out.ndim == 0 else out


def pareto_survival(p: ParetoParams, t):
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(t < p.tau, 1.0, (p.tau / np.maximum(t, p.tau)) ** p.alpha)
    return out[()] if out.ndim == 0 else out


def pareto_cdf(p: ParetoParams, t):
    return 1.0 - pareto_survival(p, t)


def p_meet(p: ParetoParams, dt):
    """Probability of at least one meeting within a window of length ``dt``.

    Exactly zero for ``dt <= tau``.
    """
    dt = np.asarray(dt, dtype=float)
    out = np.where(dt <= p.tau, 0.0, 1.0 - (p.tau / np.maximum(dt, p.tau)) ** p.alpha)
    return out[()] if out.ndim == 0 else out


def sample_pareto(p: ParetoParams, rng: RngStream, size=None):
    u = rng.uniform(size)
    return p.tau * u ** (-1.0 / p.alpha)


def contact_rate(p: ParetoParams) -> float:
    return (p.alpha - 1.0) / (p.alpha * p.tau)
