"""Chain driver, exact stationary laws, and empirical-measure samples.

Replicas are simulated in blocks.  Block ``b`` owns the generator
``make_rng(seed, b)`` and draws, in order: the forward-urn initialization
``random((R_b, n, 2))`` and then the kernel uniforms ``random((T, R_b, 4))``
chunk by chunk (step-major).  With one replica per block the draws coincide
exactly with repeated calls of the single-step functions in ``selection``.
Because blocks are seeded by index and merged by index, the output does not
depend on how many worker processes run them.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.special import gammaln, logsumexp

from . import _kernels as K
from .breeding import DPPrior, FiniteMixture, PriorSpec, count_vectors, log_multinomial, make_rng
from .measures import FiniteSpace, FitnessSpec, MeasureRepr, empirical_measure
from .selection import KERNELS, enumerate_states, kernel_args

CHUNK_DOUBLES = 1 << 22


def default_burn_in(n: int) -> int:
    return int(math.ceil(20 * n * math.log(n))) if n > 1 else 0


@dataclass(frozen=True)
class ChainConfig:
    """Run parameters.  ``steps`` counts kernel applications per replica.

    Samples are recorded after ``burn_in + k * thin`` steps for
    ``k = 1 .. (steps - burn_in) // thin``.  ``burn_in`` and ``thin`` default
    to ``ceil(20 n ln n)`` and ``n``; ``steps`` defaults to one sample.
    """

    n: int
    steps: int | None = None
    burn_in: int | None = None
    thin: int | None = None
    kernel: str = "tournament"
    seed: int = 0
    replicas: int = 1
    block_size: int = 65536
    n_jobs: int | None = 1

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", default_burn_in(self.n))
        if self.thin is None:
            object.__setattr__(self, "thin", self.n)
        if self.steps is None:
            object.__setattr__(self, "steps", self.burn_in + self.thin)
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {sorted(KERNELS)}")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.burn_in < 0 or self.burn_in >= self.steps:
            raise ValueError(f"burn_in ({self.burn_in}) must be below steps ({self.steps})")
        if self.steps - self.burn_in < self.thin:
            raise ValueError("steps - burn_in must leave room for at least one sample")
        if self.replicas < 1 or self.block_size < 1:
            raise ValueError("replicas and block_size must be positive")
        if self.seed is None:
            raise ValueError("a seed is required")

    @property
    def samples_per_replica(self) -> int:
        return (self.steps - self.burn_in) // self.thin

    def jobs(self) -> int:
        return self.n_jobs if self.n_jobs else (os.cpu_count() or 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("n_jobs")
        return d


@dataclass(eq=False)
class SampleSet:
    """Recorded populations, shape ``(samples, n)``, replica-major order."""

    populations: np.ndarray
    replica: np.ndarray
    space: object
    config: ChainConfig | None = None
    _measures: list | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.populations.shape[1]

    def __len__(self):
        return self.populations.shape[0]

    def counts(self) -> np.ndarray:
        """Per-sample label counts (finite space)."""
        if not isinstance(self.space, FiniteSpace):
            raise TypeError("counts are defined on a finite space")
        labels = self.populations.astype(np.int64)
        out = np.zeros((labels.shape[0], self.space.K), dtype=np.int64)
        for k in range(self.space.K):
            out[:, k] = (labels == k).sum(axis=1)
        return out

    def count_frequencies(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct count vectors and their relative frequencies."""
        vecs, freq = np.unique(self.counts(), axis=0, return_counts=True)
        return vecs, freq / len(self)

    def empirical_measures(self) -> list[MeasureRepr]:
        if self._measures is None:
            self._measures = [empirical_measure(p, self.space) for p in self.populations]
        return self._measures

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if isinstance(self.space, FiniteSpace):
                vecs, freq = self.count_frequencies()
                w.writerow([f"n_{k}" for k in range(self.space.K)] + ["frequency"])
                for v, f in zip(vecs, freq):
                    w.writerow([int(c) for c in v] + [repr(float(f))])
            else:
                w.writerow(["sample", "replica", "member", "value"])
                for s, (pop, r) in enumerate(zip(self.populations, self.replica)):
                    for i, x in enumerate(pop):
                        w.writerow([s, int(r), i, repr(float(x))])

    def summary(self) -> dict:
        pops = self.populations
        d = {"samples": len(self), "n": self.n,
             "mean_value": float(np.mean(pops)),
             "mean_per_sample_sd": float(np.mean(np.std(pops, axis=1)))}
        if isinstance(self.space, FiniteSpace):
            d["mean_label_frequency"] = (self.counts().mean(axis=0) / self.n).tolist()
        if self.config is not None:
            d["config"] = self.config.to_dict()
        return d

    def write_json(self, path, extra: dict | None = None) -> None:
        d = self.summary()
        if extra:
            d.update(extra)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(d, fh, sort_keys=True, indent=2)
            fh.write("\n")


def _run_block(cfg: ChainConfig, prior: PriorSpec, fit: FitnessSpec, block: int, size: int):
    rng = make_rng(cfg.seed, block)
    args = kernel_args(prior, fit, cfg.n)
    mixture = args.breed_kind == K.BREED_MIXTURE
    n = cfg.n
    pops = np.empty((size, n))
    counts = np.zeros((size, args.n_labels if mixture else 0), dtype=np.int64)
    wts = np.empty_like(pops)
    ok = K.init_block(pops, wts, counts, args.breed_kind, args.mass, args.base_cdf, args.log_w,
                      args.log_q, args.phi_kind, args.phi_params, args.phi_xs, args.phi_ys,
                      args.scale, rng.random((size, n, 2)))
    if not ok:
        raise ValueError("breeding prior assigns zero probability to a drawn population")
    S = cfg.samples_per_replica
    out = np.empty((size, S, n))
    max_chunk = max(1, CHUNK_DOUBLES // (4 * size))
    step_args = args.tuple(KERNELS[cfg.kernel])
    done = 0
    for s in range(S):
        target = cfg.burn_in + (s + 1) * cfg.thin
        while done < target:
            T = min(max_chunk, target - done)
            if K.run_block(pops, wts, counts, *step_args, rng.random((T, size, 4))) >= 0:
                raise ValueError("population has zero likelihood under every mixture component")
            done += T
        out[:, s, :] = pops
    return out


def run_chain(cfg: ChainConfig, prior: PriorSpec, fit: FitnessSpec) -> SampleSet:
    """Simulate ``cfg.replicas`` independent chains and collect their samples."""
    kernel_args(prior, fit, cfg.n)  # validates phi/space compatibility early
    sizes = [min(cfg.block_size, cfg.replicas - b * cfg.block_size)
             for b in range(-(-cfg.replicas // cfg.block_size))]
    if cfg.jobs() == 1 or len(sizes) == 1:
        blocks = [_run_block(cfg, prior, fit, b, sz) for b, sz in enumerate(sizes)]
    else:
        blocks = Parallel(n_jobs=cfg.jobs())(
            delayed(_run_block)(cfg, prior, fit, b, sz) for b, sz in enumerate(sizes))
    pops = np.concatenate([blk.reshape(-1, cfg.n) for blk in blocks])
    replica = np.repeat(np.arange(cfg.replicas), cfg.samples_per_replica)
    return SampleSet(pops, replica, prior.space, cfg)


def qn_samples(ss: SampleSet) -> list[MeasureRepr]:
    """Empirical measure of every recorded population."""
    return ss.empirical_measures()


# ---------------------------------------------------------------------------
# exact stationary laws
# ---------------------------------------------------------------------------


def _log_rising(a, k):
    """``log (a)_k`` elementwise, with ``(0)_0 = 1`` and ``(0)_k = 0`` for k > 0."""
    a = np.asarray(a, dtype=float)
    k = np.asarray(k)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(k == 0, 0.0, gammaln(a + k) - gammaln(a))
    return np.where((a == 0) & (k > 0), -np.inf, out)


def _log_weights(fit, n: int, K_: int) -> np.ndarray:
    """Log fitness per label; ``fit`` is a FitnessSpec or a raw positive weight vector."""
    if isinstance(fit, FitnessSpec):
        return -np.asarray(fit.phi(np.arange(K_)), dtype=float) * fit.scale(n)
    w = np.asarray(fit, dtype=float)
    if w.shape != (K_,) or np.any(w <= 0):
        raise ValueError("raw weights must be K positive numbers")
    return np.log(w)


def _normalize_log(lp: np.ndarray) -> np.ndarray:
    return np.exp(lp - logsumexp(lp))


def exact_stationary_counts(space: FiniteSpace, alpha, fit: FitnessSpec, n: int):
    """Stationary counts law for Dirichlet breeding with parameters ``alpha``.

    Returns ``(count_vectors, pmf)`` with
    ``pmf ∝ multinomial * prod_k (alpha_k)_{n_k} / (|alpha|)_n * prod_k w(k)^{n_k}``.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.size != space.K or np.any(alpha <= 0):
        raise ValueError("alpha must hold K positive entries")
    cv = count_vectors(n, space.K)
    lp = (log_multinomial(cv) + _log_rising(alpha, cv).sum(axis=1)
          - _log_rising(alpha.sum(), n) + cv @ _log_weights(fit, n, space.K))
    return cv, _normalize_log(lp)


def exact_stationary_mixture(space: FiniteSpace, prior: FiniteMixture, fit: FitnessSpec, n: int):
    """Stationary counts law for a finite-mixture breeding prior.

    ``pmf ∝ sum_i weight_i * multinomial * prod_k (q_i(k) w(k))^{n_k}``.
    """
    if prior.K != space.K:
        raise ValueError("prior and space disagree on K")
    cv = count_vectors(n, space.K)
    lp = log_multinomial(cv) + _mixture_log_likelihood(prior, cv) + cv @ _log_weights(fit, n, space.K)
    return cv, _normalize_log(lp)


def _mixture_log_likelihood(prior: FiniteMixture, cv: np.ndarray) -> np.ndarray:
    log_w, log_q = prior.log_tables()
    with np.errstate(invalid="ignore"):
        per = np.where(cv[:, None, :] > 0, cv[:, None, :] * log_q[None, :, :], 0.0).sum(axis=2)
    return logsumexp(per + log_w[None, :], axis=1)


def ordered_stationary_pmf(space: FiniteSpace, prior: PriorSpec, fit: FitnessSpec, n: int):
    """Stationary law on ordered tuples ``X^n`` (lexicographic order).

    Built from the breeding law of ordered samples tilted by ``prod_j w(x_j)``.
    For a DP prior the concentration is the one the chain uses at size ``n``.
    """
    states = enumerate_states(space.K, n)
    cv = np.stack([(states == k).sum(axis=1) for k in range(space.K)], axis=1)
    if isinstance(prior, DPPrior):
        m = prior.mass(n, fit.lam)
        lp = _log_rising(m * prior.base.pmf, cv).sum(axis=1) - _log_rising(m, n)
    else:
        lp = _mixture_log_likelihood(prior, cv)
    lp = lp + cv @ _log_weights(fit, n, space.K)
    return states, _normalize_log(lp)
