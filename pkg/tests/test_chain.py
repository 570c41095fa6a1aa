from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from moranlimit.breeding import DPPrior, FiniteMixture, make_rng, polya_conditional_sample
from moranlimit.chain import (ChainConfig, default_burn_in, exact_stationary_counts,
                              exact_stationary_mixture, ordered_stationary_pmf, qn_samples,
                              run_chain)
from moranlimit.measures import (FiniteSpace, FiniteTable, FitnessSpec, MeasureRepr,
                                 PowerDistance, UnitInterval)
from moranlimit.selection import inverse_fitness_step, tournament_step
from moranlimit.verify import mcmc_vs_exact

PHI3 = FiniteTable((0.0, 0.5, 1.0))


class Feed:
    def __init__(self, values):
        self.values = list(np.ravel(values))

    def random(self, k):
        out, self.values = self.values[:k], self.values[k:]
        return np.array(out)


def test_config_defaults_and_validation():
    cfg = ChainConfig(n=10)
    assert cfg.burn_in == default_burn_in(10) == 461
    assert cfg.thin == 10 and cfg.steps == 471 and cfg.samples_per_replica == 1
    with pytest.raises(ValueError):
        ChainConfig(n=5, steps=100, burn_in=100)
    with pytest.raises(ValueError):
        ChainConfig(n=5, seed=None)
    with pytest.raises(ValueError):
        ChainConfig(n=5, kernel="moran")


@pytest.mark.parametrize("kernel,step", [("tournament", tournament_step),
                                         ("inverse", inverse_fitness_step)])
def test_engine_equals_reference_steps(kernel, step):
    """A single replica replays the documented draw order through the public step API."""
    prior = DPPrior(1.0, MeasureRepr.uniform(UnitInterval()))
    fit = FitnessSpec(PowerDistance(0.3, 2.0), 0.0)
    n, burn, thin = 6, 40, 5
    cfg = ChainConfig(n=n, steps=burn + 3 * thin, burn_in=burn, thin=thin, kernel=kernel, seed=99)
    ss = run_chain(cfg, prior, fit)

    rng = make_rng(99, 0)
    init = rng.random((1, n, 2))[0]
    pop = []
    for j in range(n):
        pop.append(polya_conditional_sample(prior, pop, Feed(init[j]), mass=prior.mass(n)))
    pop = np.array(pop)
    expected = []
    for t in range(1, cfg.steps + 1):
        pop = step(pop, prior, fit, rng)
        if t > burn and (t - burn) % thin == 0:
            expected.append(pop)
    assert np.array_equal(ss.populations, np.array(expected))


def test_results_do_not_depend_on_job_count():
    prior = FiniteMixture([0.5, 0.5], [[0.7, 0.2, 0.1], [0.1, 0.2, 0.7]])
    fit = FitnessSpec(PHI3, 0.0)
    base = dict(n=8, replicas=10, block_size=3, seed=4)
    a = run_chain(ChainConfig(n_jobs=1, **base), prior, fit)
    b = run_chain(ChainConfig(n_jobs=2, **base), prior, fit)
    assert np.array_equal(a.populations, b.populations)
    assert a.replica.tolist() == list(range(10))


def test_sample_set_outputs(tmp_path):
    prior = DPPrior(2.0, MeasureRepr.from_pmf([0.5, 0.25, 0.25]), "fixed")
    cfg = ChainConfig(n=4, steps=100, burn_in=20, thin=8, replicas=3, seed=1)
    ss = run_chain(cfg, prior, FitnessSpec(PHI3, 0.0))
    assert len(ss) == 3 * 10
    vecs, freq = ss.count_frequencies()
    assert freq.sum() == pytest.approx(1.0) and np.all(vecs.sum(axis=1) == 4)
    ss.write_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "n_0,n_1,n_2,frequency"
    assert len(qn_samples(ss)) == len(ss)


# --- exact laws -------------------------------------------------------------


def test_dp_counts_law_matches_enumeration():
    # alpha = (1, 2, 3), phi = (0, 0.5, 1), n = 3; reference from Fraction enumeration
    cv, pmf = exact_stationary_counts(FiniteSpace(3), [1.0, 2.0, 3.0], FitnessSpec(PHI3, 0.0), 3)
    frozen = {(3, 0, 0): 0.09838104657739975, (2, 1, 0): 0.11934224216761918,
              (2, 0, 1): 0.10857709331026638, (1, 2, 0): 0.10857709331026638,
              (1, 1, 1): 0.13171067207031206, (1, 0, 2): 0.07988656082200069,
              (0, 3, 0): 0.08780711471354137, (0, 2, 1): 0.11982984123300106,
              (0, 1, 2): 0.09690729687508301, (0, 0, 3): 0.048981038920510096}
    for v, p in zip(cv, pmf):
        assert p == pytest.approx(frozen[tuple(v)], abs=1e-14)


def test_mixture_counts_law_matches_enumeration():
    prior = FiniteMixture([0.3, 0.7], [[0.8, 0.2], [0.25, 0.75]])
    cv, pmf = exact_stationary_mixture(FiniteSpace(2), prior, [0.8, 0.3], 3)
    frozen = [0.5378280447295182, 0.2618709387812104, 0.14898305186190106, 0.05131796462737039]
    assert np.allclose(pmf, frozen, atol=1e-14, rtol=0)


def test_uniform_dirichlet_neutral_law_is_uniform():
    cv, pmf = exact_stationary_counts(FiniteSpace(2), [1.0, 1.0], [1.0, 1.0], 2)
    assert cv.tolist() == [[2, 0], [1, 1], [0, 2]]
    assert np.allclose(pmf, 1.0 / 3.0, atol=1e-15)


@given(st.floats(1e-3, 1e3), st.lists(st.floats(0.05, 5.0), min_size=3, max_size=3))
def test_rescaling_weights_leaves_law_unchanged(scale, w):
    alpha = [0.5, 1.5, 2.0]
    _, a = exact_stationary_counts(FiniteSpace(3), alpha, w, 5)
    _, b = exact_stationary_counts(FiniteSpace(3), alpha, [scale * v for v in w], 5)
    assert np.allclose(a, b, atol=1e-12, rtol=0)


@pytest.mark.parametrize("prior", [
    DPPrior(1.5, MeasureRepr.from_pmf([0.2, 0.3, 0.5]), "fixed"),
    FiniteMixture([0.4, 0.6], [[0.6, 0.3, 0.1], [0.1, 0.1, 0.8]]),
])
def test_ordered_law_aggregates_to_counts_law(prior):
    fit = FitnessSpec(PHI3, 0.0)
    states, pi = ordered_stationary_pmf(FiniteSpace(3), prior, fit, 3)
    if isinstance(prior, DPPrior):
        cv, pmf = exact_stationary_counts(FiniteSpace(3), 1.5 * prior.base.pmf, fit, 3)
    else:
        cv, pmf = exact_stationary_mixture(FiniteSpace(3), prior, fit, 3)
    agg = {}
    for s, p in zip(states, pi):
        key = tuple(np.bincount(s, minlength=3))
        agg[key] = agg.get(key, 0.0) + p
    for v, p in zip(cv, pmf):
        assert agg[tuple(v)] == pytest.approx(p, abs=1e-14)


def test_ordered_law_matches_fraction_oracle():
    prior = DPPrior(1.5, MeasureRepr.from_pmf([0.2, 0.3, 0.5]), "fixed")
    fit = FitnessSpec(PHI3, 0.0)
    _, pi = ordered_stationary_pmf(FiniteSpace(3), prior, fit, 3)
    base = [Fraction(1, 5), Fraction(3, 10), Fraction(1, 2)]
    _, ref = oracles.ordered_stationary(3, 3, lambda x: oracles.dp_sequence_prob(x, Fraction(3, 2), base),
                                        list(np.exp(-np.array([0.0, 0.5, 1.0]))))
    assert np.allclose(pi, ref, atol=1e-14, rtol=0)


@settings(max_examples=5, deadline=None)
@given(st.sampled_from(["tournament", "inverse"]), st.integers(0, 1000))
def test_small_chain_matches_exact_law(kernel, seed):
    prior = FiniteMixture([0.5, 0.5], [[0.6, 0.3, 0.1], [0.2, 0.3, 0.5]])
    fit = FitnessSpec(FiniteTable((0.0, 0.4, 0.9)), 0.0)
    cfg = ChainConfig(n=4, steps=4 * 2000 + 60, burn_in=60, thin=4, replicas=20, kernel=kernel, seed=seed)
    report = mcmc_vs_exact(cfg, FiniteSpace(3), prior, fit)
    assert report.passed, report.history
