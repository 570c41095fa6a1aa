import json
import math

import numpy as np
import pytest
from scipy import stats

from moranlimit.breeding import DPPrior, FiniteMixture
from moranlimit.chain import ChainConfig, SampleSet
from moranlimit.limits import HypothesisError
from moranlimit.measures import FiniteSpace, FiniteTable, FitnessSpec, MeasureRepr, PowerDistance, UnitInterval
from moranlimit.verify import (chi_square_merged, derive_seed, detailed_balance_residual,
                               cell_distance, predicted_fraction_law, predicted_limit,
                               spearman_trend, sweep_convergence)


def test_balance_residual_is_roundoff():
    prior = FiniteMixture([0.5, 0.5], [[0.7, 0.2, 0.1], [0.1, 0.3, 0.6]])
    fit = FitnessSpec(FiniteTable((0.0, 0.3, 1.1)))
    for kernel in ("tournament", "inverse"):
        assert detailed_balance_residual(kernel, FiniteSpace(3), 3, prior, fit) < 1e-15


def test_chi_square_without_pooling_matches_scipy():
    obs = np.array([30.0, 50.0, 20.0])
    exp = np.array([25.0, 55.0, 20.0])
    stat, dof, p = chi_square_merged(obs, exp)
    ref = stats.chisquare(obs, exp)
    assert stat == pytest.approx(ref.statistic) and p == pytest.approx(ref.pvalue) and dof == 2


def test_chi_square_pools_small_cells():
    obs = np.array([1.0, 0.0, 2.0, 40.0, 57.0])
    exp = np.array([1.0, 1.5, 3.0, 44.5, 50.0])
    stat, dof, _ = chi_square_merged(obs, exp)
    # the three small cells pool into one of expected 5.5
    assert dof == 2
    assert stat == pytest.approx((3 - 5.5) ** 2 / 5.5 + 4.5 ** 2 / 44.5 + 49 / 50)


def test_spearman_trend_exact_p_value():
    rho, p = spearman_trend([1, 2, 3, 4, 5, 6], [6, 5, 4, 3, 2, 1])
    assert rho == -1.0 and p == pytest.approx(1 / math.factorial(6))
    _, p_up = spearman_trend([1, 2, 3, 4, 5, 6], [1, 2, 3, 4, 5, 6])
    assert p_up == 1.0


def test_derive_seed_is_deterministic_and_keyed():
    assert derive_seed(5, 1, 2) == derive_seed(5, 1, 2)
    assert derive_seed(5, 1, 2) != derive_seed(5, 2, 1)
    assert 0 <= derive_seed(2**63, 7) < 2**63


def test_predicted_limit_dispatch():
    U = MeasureRepr.uniform(UnitInterval())
    assert predicted_limit(DPPrior(1.0, U), FitnessSpec(PowerDistance(0.3, 2.0), 0.0)).regime == "dp_lambda0_density"
    assert predicted_limit(DPPrior(1.0, U), FitnessSpec(PowerDistance(0.3, 2.0), 0.5)).regime == "dp_frac_density"
    with pytest.raises(HypothesisError):
        predicted_limit(DPPrior(1.0, U), FitnessSpec(PowerDistance(0.3, 2.0), 1.5))


def test_fraction_law_is_binned_binomial_mixture():
    mix = FiniteMixture([0.5, 0.5], [[0.5, 0.5], [0.1, 0.9]])
    lim = predicted_limit(mix, FitnessSpec(FiniteTable((0.0, 1.0)), 2.0))
    law = predicted_fraction_law(lim, 0, 10)
    assert law.sum() == pytest.approx(1.0)
    # fraction 1.0 falls in the last bin together with 0.9
    last = 0.5 * (stats.binom.pmf([9, 10], 10, 0.5).sum() + stats.binom.pmf([9, 10], 10, 0.1).sum())
    assert law[-1] == pytest.approx(last)


def test_w1_to_point_mass_is_mean_displacement():
    space = FiniteSpace(3)
    pops = np.array([[0, 0, 1, 2], [0, 0, 0, 0]], dtype=float)
    ss = SampleSet(pops, np.array([0, 1]), space, ChainConfig(n=4))
    mix = FiniteMixture([1.0], [[1.0, 0.0, 0.0]])
    lim = predicted_limit(mix, FitnessSpec(FiniteTable((0.0, 1.0, 2.0)), 0.5))
    assert cell_distance(ss, lim, "W1") == pytest.approx((0.5 + 1.0) / 8)


def test_small_sweep_rows_and_outputs(tmp_path):
    mix = FiniteMixture([0.5, 0.5], [[0.45, 0.3, 0.25], [0.25, 0.3, 0.45]])
    table = sweep_convergence([2.0], [5, 10], mix, FiniteTable((0.0, 20.0, 40.0)), "TV", seed=3, replicas=50)
    assert [r["n"] for r in table.rows] == [5, 10]
    assert all(r["target_regime"] == "lambda_gt1" for r in table.rows)
    table.write_csv(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "lambda,n,metric,value,target_regime"
    again = sweep_convergence([2.0], [5, 10], mix, FiniteTable((0.0, 20.0, 40.0)), "TV", seed=3, replicas=50)
    assert table.to_json() == again.to_json()
    assert "trend" in json.loads(table.to_json())
