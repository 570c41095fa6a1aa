from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import oracles
from moranlimit.breeding import DPPrior, FiniteMixture, make_rng
from moranlimit.measures import FiniteSpace, FiniteTable, FitnessSpec, MeasureRepr, PowerDistance, UnitInterval
from moranlimit.selection import (ConsistencyError, enumerate_states, exact_transition_matrix,
                                  inverse_fitness_step, state_index, tournament_step)

PHI3 = (0.0, 0.7, 1.6)


def dp3():
    return DPPrior(1.5, MeasureRepr.from_pmf([0.2, 0.3, 0.5]), "fixed")


def dp3_seq(x):
    base = [Fraction(1, 5), Fraction(3, 10), Fraction(1, 2)]
    return oracles.dp_sequence_prob(x, Fraction(3, 2), base)


def mix2():
    return FiniteMixture([0.4, 0.6], [[0.9, 0.1], [0.2, 0.8]])


def mix2_seq(x):
    return oracles.mixture_sequence_prob(
        x, [Fraction(2, 5), Fraction(3, 5)],
        [[Fraction(9, 10), Fraction(1, 10)], [Fraction(1, 5), Fraction(4, 5)]])


@pytest.mark.parametrize("kernel", ["tournament", "inverse"])
@pytest.mark.parametrize("n", [2, 3])
def test_matrix_matches_independent_construction_dp(kernel, n):
    fit = FitnessSpec(FiniteTable(PHI3), 0.0)
    P = exact_transition_matrix(kernel, FiniteSpace(3), n, dp3(), fit)
    _, ref = oracles.transition_matrix(kernel, 3, n, dp3_seq, list(np.exp(-np.array(PHI3))))
    assert np.allclose(P, np.array(ref), atol=1e-14, rtol=0)


@pytest.mark.parametrize("kernel", ["tournament", "inverse"])
def test_matrix_matches_independent_construction_mixture(kernel):
    fit = FitnessSpec(FiniteTable((0.0, 1.0)), 0.0)
    P = exact_transition_matrix(kernel, FiniteSpace(2), 3, mix2(), fit)
    _, ref = oracles.transition_matrix(kernel, 2, 3, mix2_seq, [1.0, float(np.exp(-1.0))])
    assert np.allclose(P, np.array(ref), atol=1e-14, rtol=0)


def test_unreachable_states_are_absorbing():
    mix = FiniteMixture([1.0], [[1.0, 0.0]])
    P = exact_transition_matrix("tournament", FiniteSpace(2), 2, mix, FitnessSpec(FiniteTable((0.0, 1.0))))
    assert P[3, 3] == 1.0
    assert np.allclose(P.sum(axis=1), 1.0)


def test_matrix_size_guard():
    with pytest.raises(ValueError):
        exact_transition_matrix("tournament", FiniteSpace(3), 9, dp3(), FitnessSpec(FiniteTable(PHI3)))
    with pytest.raises(ValueError):
        exact_transition_matrix("bogus", FiniteSpace(3), 2, dp3(), FitnessSpec(FiniteTable(PHI3)))


def test_state_index_inverts_enumeration():
    states = enumerate_states(3, 4)
    assert np.array_equal(state_index(states, 3), np.arange(81))


def test_consistency_error_is_runtime_error():
    assert issubclass(ConsistencyError, RuntimeError)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=2, max_size=6), st.integers(0, 2**32 - 1),
       st.sampled_from([tournament_step, inverse_fitness_step]))
def test_step_changes_at_most_one_member(pop, seed, step):
    fit = FitnessSpec(FiniteTable(PHI3), 0.0)
    before = np.array(pop, dtype=float)
    after = step(before, dp3(), fit, make_rng(seed))
    assert np.array_equal(before, np.array(pop, dtype=float))
    assert np.count_nonzero(after != before) <= 1
    assert set(after.tolist()) <= {0.0, 1.0, 2.0}


def test_steps_are_reproducible_on_the_interval():
    prior = DPPrior(1.0, MeasureRepr.uniform(UnitInterval()))
    fit = FitnessSpec(PowerDistance(0.3, 2.0), 0.0)
    pop = np.linspace(0.05, 0.95, 7)
    a = tournament_step(pop, prior, fit, make_rng(3))
    b = tournament_step(pop, prior, fit, make_rng(3))
    assert np.array_equal(a, b)


@pytest.mark.parametrize("kernel,step", [("tournament", tournament_step),
                                         ("inverse", inverse_fitness_step)])
def test_one_step_law_matches_matrix_row(kernel, step):
    fit = FitnessSpec(FiniteTable(PHI3), 0.0)
    P = exact_transition_matrix(kernel, FiniteSpace(3), 2, dp3(), fit)
    start = np.array([1.0, 2.0])
    row = P[state_index(start.astype(np.int64), 3)]
    rng = make_rng(2024)
    hits = np.zeros(9)
    trials = 20000
    for _ in range(trials):
        hits[state_index(step(start, dp3(), fit, rng).astype(np.int64), 3)] += 1
    keep = row > 0
    assert hits[~keep].sum() == 0
    assert stats.chisquare(hits[keep], row[keep] * trials).pvalue > 1e-3
