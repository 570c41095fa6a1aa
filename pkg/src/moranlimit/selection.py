"""Selection kernels of the Moran model and exact transition matrices.

Both kernels first breed a newcomer from the conditional breeding law given
the whole population, then let selection decide who leaves:

* tournament: a uniformly chosen member ``i`` is replaced by the newcomer with
  probability ``w(new) / (w(new) + w(x_i))``;
* inverse fitness: one of the ``n + 1`` individuals (newcomer included) is
  removed with probability proportional to ``1 / w``.

Each step consumes four uniforms ``(u_breed_choice, u_breed_value, u_select,
u_accept)``; the inverse kernel draws ``u_accept`` but does not use it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .breeding import DPPrior, FiniteMixture, PriorSpec, predictive_pmf
from .measures import (FiniteSpace, FiniteTable, FitnessSpec, PowerDistance, TabulatedInterval,
                       check_phi_space)

KERNELS = {"tournament": K.TOURNAMENT, "inverse": K.INVERSE}
MATRIX_STATE_LIMIT = 10**4
ROW_SUM_TOL = 1e-12


class ConsistencyError(RuntimeError):
    """An exact construction failed an internal sanity check."""


@dataclass(frozen=True)
class KernelArgs:
    """Flat arrays handed to the compiled step routines."""

    breed_kind: int
    mass: float
    base_cdf: np.ndarray
    log_w: np.ndarray
    log_q: np.ndarray
    phi_kind: int
    phi_params: np.ndarray
    phi_xs: np.ndarray
    phi_ys: np.ndarray
    scale: float
    n_labels: int

    def tuple(self, kernel: int):
        return (kernel, self.breed_kind, self.mass, self.base_cdf, self.log_w, self.log_q,
                self.phi_kind, self.phi_params, self.phi_xs, self.phi_ys, self.scale)


def _phi_arrays(phi):
    empty = np.zeros(0)
    if isinstance(phi, FiniteTable):
        return K.PHI_TABLE, empty, empty, np.asarray(phi.values, dtype=float)
    if isinstance(phi, PowerDistance):
        return K.PHI_POWER, np.array([phi.x_o, phi.p], dtype=float), empty, empty
    if isinstance(phi, TabulatedInterval):
        return (K.PHI_TABULATED, empty, np.asarray(phi.x, dtype=float),
                np.asarray(phi.values, dtype=float))
    raise TypeError(f"unsupported phi {phi!r}")


def kernel_args(prior: PriorSpec, fit: FitnessSpec, n: int) -> KernelArgs:
    check_phi_space(fit.phi, prior.space)
    phi_kind, params, xs, ys = _phi_arrays(fit.phi)
    if isinstance(prior, DPPrior):
        breed_kind, mass, base_cdf = K.BREED_URN, prior.mass(n, fit.lam), prior.base_cdf()
        log_w, log_q = np.zeros(0), np.zeros((0, 0))
    else:
        breed_kind, mass, base_cdf = K.BREED_MIXTURE, 0.0, np.zeros(0)
        log_w, log_q = prior.log_tables()
    n_labels = prior.space.K if isinstance(prior.space, FiniteSpace) else 0
    return KernelArgs(breed_kind, float(mass), base_cdf, log_w, np.ascontiguousarray(log_q),
                      phi_kind, params, xs, ys, fit.scale(n), n_labels)


def _step(kernel: str, pop, prior, fit, rng):
    pops = np.array(pop, dtype=float).reshape(1, -1)
    n = pops.shape[1]
    args = kernel_args(prior, fit, n)
    wts = np.array([[K.weight_eval(args.phi_kind, args.phi_params, args.phi_xs, args.phi_ys,
                                   args.scale, x) for x in pops[0]]])
    if args.breed_kind == K.BREED_MIXTURE:
        counts = np.bincount(pops[0].astype(np.int64), minlength=args.n_labels).reshape(1, -1)
    else:
        counts = np.zeros((1, 0), dtype=np.int64)
    u = rng.random(4).reshape(1, 1, 4)
    if K.run_block(pops, wts, counts, *args.tuple(KERNELS[kernel]), u) >= 0:
        raise ValueError("population has zero likelihood under every mixture component")
    return pops[0]


def tournament_step(pop, prior: PriorSpec, fit: FitnessSpec, rng: np.random.Generator) -> np.ndarray:
    """One single-tournament step; returns the new population (input untouched)."""
    return _step("tournament", pop, prior, fit, rng)


def inverse_fitness_step(pop, prior: PriorSpec, fit: FitnessSpec, rng: np.random.Generator) -> np.ndarray:
    """One inverse-fitness step; returns the new population (input untouched)."""
    return _step("inverse", pop, prior, fit, rng)


def enumerate_states(K_: int, n: int) -> np.ndarray:
    """All ordered tuples in ``{0..K-1}^n`` in lexicographic order."""
    return np.array(list(itertools.product(range(K_), repeat=n)), dtype=np.int64).reshape(-1, n)


def state_index(states: np.ndarray, K_: int) -> np.ndarray:
    n = states.shape[-1]
    return states @ (K_ ** np.arange(n - 1, -1, -1))


def exact_transition_matrix(kernel: str, space: FiniteSpace, n: int, prior: PriorSpec,
                            fit: FitnessSpec) -> np.ndarray:
    """Row-stochastic matrix of a kernel on ordered tuples ``X^n``.

    States are ordered lexicographically (see :func:`enumerate_states`).  The
    stay-put probability of each row is accumulated explicitly.
    """
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}")
    if not isinstance(space, FiniteSpace):
        raise TypeError("exact transition matrices need a finite space")
    if prior.space.K != space.K:
        raise ValueError("prior and space disagree on K")
    check_phi_space(fit.phi, space)
    size = space.K ** n
    if size > MATRIX_STATE_LIMIT:
        raise ValueError(f"{size} states exceed the limit {MATRIX_STATE_LIMIT}")
    states = enumerate_states(space.K, n)
    w = fit.weights(n, np.arange(space.K))
    mass = prior.mass(n, fit.lam) if isinstance(prior, DPPrior) else None
    radix = space.K ** np.arange(n - 1, -1, -1)
    P = np.zeros((size, size))
    for s, x in enumerate(states):
        pred = predictive_pmf(prior, x, mass)
        if pred.sum() == 0:
            # unreachable under the prior; kept absorbing so the matrix stays stochastic
            P[s, s] = 1.0
            continue
        wx = w[x]
        inv_total = (1.0 / wx).sum()
        stay = 0.0
        for y in range(space.K):
            if pred[y] == 0:
                continue
            if kernel == "tournament":
                move = w[y] / (w[y] + wx) / n
            else:
                move = (1.0 / wx) / (inv_total + 1.0 / w[y])
            for i in range(n):
                if x[i] == y:
                    stay += pred[y] * move[i]
                    continue
                t = s + (y - x[i]) * radix[i]
                P[s, t] += pred[y] * move[i]
            stay += pred[y] * (1.0 - move.sum())
        P[s, s] += stay
    dev = np.abs(P.sum(axis=1) - 1.0).max()
    if dev > ROW_SUM_TOL:
        raise ConsistencyError(f"transition matrix rows deviate from 1 by {dev:.3e}")
    return P
