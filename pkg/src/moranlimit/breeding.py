"""Exchangeable breeding laws: Dirichlet-process (Polya urn) and finite mixtures.

Randomness comes from :func:`make_rng`, a seeded ``numpy.random.Generator``.
Each conditional draw consumes exactly two uniforms, in this order:

* Polya urn: ``u0`` decides fresh-vs-copy (fresh iff ``u0 * (m + n) < m``);
  ``u1`` is the inverse-CDF input of the fresh value, or picks the copied
  member as ``floor(u1 * n)``.
* Finite mixture: ``u0`` is the inverse-CDF input of the posterior predictive
  pmf; ``u1`` is drawn and discarded so both laws advance the stream equally.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import _kernels as K
from .measures import FiniteSpace, MeasureRepr, UnitInterval

ENUMERATION_LIMIT = 10**6


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """A reproducible PCG64 generator derived from ``seed`` and an optional key path."""
    if seed is None:
        raise ValueError("a seed is required; wall-clock seeding is not supported")
    entropy = [int(seed) & (2**64 - 1)] + [int(k) for k in key]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


@dataclass(frozen=True, eq=False)
class DPPrior:
    """Dirichlet-process breeding with concentration ``m`` and base measure ``base``.

    ``mass_rule='scaled'`` ties the concentration to the population size,
    ``m_n = c * n ** (1 - lam)``; ``'fixed'`` uses ``m = c`` for every ``n``.
    The base is Uniform[0, 1] on the interval or any pmf on a finite space.
    """

    c: float
    base: MeasureRepr
    mass_rule: str = "scaled"

    def __post_init__(self):
        if not (math.isfinite(self.c) and self.c > 0):
            raise ValueError("DP concentration c must be a positive finite number")
        if self.mass_rule not in ("scaled", "fixed"):
            raise ValueError(f"unknown mass rule {self.mass_rule!r}")
        if not self.base.is_finite:
            if self.base.atom_locs.size or not np.all(self.base.density == 1.0):
                raise ValueError("on the interval the DP base must be Uniform[0, 1]")

    @property
    def space(self):
        return self.base.space

    def mass(self, n: int, lam: float = 0.0) -> float:
        if self.mass_rule == "fixed":
            return float(self.c)
        return float(self.c) * float(n) ** (1.0 - lam)

    def base_cdf(self) -> np.ndarray:
        if not self.base.is_finite:
            return np.zeros(0)
        return _normalized_cdf(self.base.pmf)

    def to_dict(self) -> dict:
        return {"kind": "dp", "c": self.c, "mass_rule": self.mass_rule,
                "base": self.base.to_dict()}


@dataclass(frozen=True, eq=False)
class FiniteMixture:
    """Prior putting mass ``weights[i]`` on the fixed pmf ``components[i]``."""

    weights: np.ndarray
    components: np.ndarray
    space: FiniteSpace | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        q = np.atleast_2d(np.asarray(self.components, dtype=float))
        if w.size != q.shape[0] or w.size == 0:
            raise ValueError("need one weight per component")
        if np.any(w < 0) or abs(math.fsum(w) - 1.0) > 1e-9:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        if np.any(q < 0) or np.any(np.abs(q.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("every component must be a pmf")
        space = self.space or FiniteSpace(q.shape[1])
        if space.K != q.shape[1]:
            raise ValueError("component length differs from the space size")
        w.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", q)
        object.__setattr__(self, "space", space)

    @property
    def K(self) -> int:
        return self.space.K

    def log_tables(self) -> tuple[np.ndarray, np.ndarray]:
        with np.errstate(divide="ignore"):
            return np.log(self.weights), np.log(self.components)

    def predictive(self, counts) -> np.ndarray:
        """Posterior predictive pmf given label counts (all zeros if impossible)."""
        log_w, log_q = self.log_tables()
        return K.mixture_predictive(np.asarray(counts, dtype=np.int64), log_w, log_q)

    def mean_measure(self) -> MeasureRepr:
        return MeasureRepr.from_pmf(self.weights @ self.components, self.space)

    def to_dict(self) -> dict:
        return {"kind": "mixture", "weights": self.weights.tolist(),
                "components": self.components.tolist(), "space": self.space.to_dict()}


PriorSpec = DPPrior | FiniteMixture


def _normalized_cdf(pmf) -> np.ndarray:
    cdf = np.cumsum(np.asarray(pmf, dtype=float))
    return cdf / cdf[-1]


def _label_counts(pop, K_: int) -> np.ndarray:
    labels = np.asarray(pop, dtype=float)
    if labels.size and (np.any(labels != np.floor(labels)) or labels.min() < 0 or labels.max() >= K_):
        raise ValueError("population contains labels outside the space")
    return np.bincount(labels.astype(np.int64), minlength=K_).astype(np.int64)


def polya_conditional_sample(prior: DPPrior, pop, rng: np.random.Generator, *,
                             n: int | None = None, lam: float = 0.0, mass: float | None = None):
    """Draw the next member of a Polya urn given the current population.

    The concentration is ``mass`` if given, else ``prior.mass(n, lam)`` with
    ``n`` defaulting to ``len(pop)``.
    """
    pop = np.asarray(pop, dtype=float)
    m = prior.mass(n if n is not None else max(pop.size, 1), lam) if mass is None else float(mass)
    if pop.size == 0 and m == 0:
        raise ValueError("empty population with zero concentration has no predictive law")
    u = rng.random(2)
    x = K.urn_draw(pop.reshape(1, -1), 0, pop.size, m, prior.base_cdf(), u[0], u[1])
    return int(x) if prior.base.is_finite else float(x)


def polya_predictive(prior: DPPrior, pop, mass: float) -> np.ndarray:
    """Exact predictive pmf of the urn on a finite space."""
    if not prior.base.is_finite:
        raise TypeError("predictive pmf needs a finite space")
    counts = _label_counts(pop, prior.space.K)
    n = counts.sum()
    return (mass * prior.base.pmf + counts) / (mass + n)


def mixture_conditional_sample(prior: FiniteMixture, pop, rng: np.random.Generator) -> int:
    """Draw the next label from the posterior predictive of a finite mixture."""
    counts = _label_counts(pop, prior.K)
    log_w, log_q = prior.log_tables()
    u = rng.random(2)
    lp, cum = np.empty(log_q.shape[0]), np.empty(log_q.shape[1])
    x = K.breed(np.zeros((1, 0)), counts.reshape(1, -1), 0, 0, K.BREED_MIXTURE, 0.0,
                np.zeros(0), log_w, log_q, lp, cum, u[0], u[1])
    if x < 0:
        raise ValueError("population has zero likelihood under every mixture component")
    return int(x)


def predictive_pmf(prior: PriorSpec, pop, mass: float | None = None) -> np.ndarray:
    if isinstance(prior, FiniteMixture):
        return prior.predictive(_label_counts(pop, prior.K))
    return polya_predictive(prior, pop, mass)


def count_vectors(n: int, K_: int) -> np.ndarray:
    """All count vectors of length ``K_`` summing to ``n`` (lexicographically descending)."""
    total = math.comb(n + K_ - 1, K_ - 1)
    if total > ENUMERATION_LIMIT:
        raise ValueError(f"{total} count vectors exceed the enumeration limit {ENUMERATION_LIMIT}")
    out = np.empty((total, K_), dtype=np.int64)
    for row, bars in enumerate(itertools.combinations(range(n + K_ - 1), K_ - 1)):
        prev = -1
        for k, b in enumerate(bars):
            out[row, k] = b - prev - 1
            prev = b
        out[row, K_ - 1] = n + K_ - 2 - prev
    return out[::-1].copy()


def log_multinomial(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts)
    return gammaln(counts.sum(axis=-1) + 1) - gammaln(counts + 1).sum(axis=-1)


def prior_exact_law(prior: FiniteMixture, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Counts law of ``n`` draws from a finite mixture: ``sum_i weight_i Mult(n; q_i)``.

    Returns ``(count_vectors, pmf)``.
    """
    cv = count_vectors(n, prior.K)
    lm = log_multinomial(cv)
    pmf = np.zeros(len(cv))
    for wi, q in zip(prior.weights, prior.components):
        if wi == 0:
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            lq = np.where(cv > 0, cv * np.log(q), 0.0).sum(axis=1)
        pmf += wi * np.exp(lm + lq)
    return cv, pmf
