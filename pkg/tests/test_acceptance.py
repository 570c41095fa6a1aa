"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""

import itertools
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from moranlimit.breeding import DPPrior, FiniteMixture
from moranlimit.chain import ChainConfig, exact_stationary_counts
from moranlimit.cli import main as cli_main
from moranlimit.limits import (critical_exponent, elementary_max_bound, elementary_ridge,
                               limit_measure_frac, limit_measure_lambda0, objective_F,
                               power_product_limit, solve_theta_frac, solve_theta_lambda0,
                               theta_residuals)
from moranlimit.measures import (FiniteSpace, FiniteTable, FitnessSpec, MeasureRepr,
                                 PowerDistance, TabulatedInterval, UnitInterval)
from moranlimit.verify import detailed_balance_residual, mcmc_vs_exact, sweep_convergence

U = MeasureRepr.uniform(UnitInterval())
CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number:>2}: {'PASS' if ok else 'FAIL'} | {detail}")
    return emit


def test_criterion_01_detailed_balance(report):
    start = time.perf_counter()
    priors = {
        2: [DPPrior(1.5, MeasureRepr.from_pmf([0.4, 0.6])),
            FiniteMixture([0.3, 0.7], [[0.8, 0.2], [0.25, 0.75]])],
        3: [DPPrior(1.5, MeasureRepr.from_pmf([0.2, 0.3, 0.5])),
            FiniteMixture([0.45, 0.55], [[0.6, 0.3, 0.1], [0.1, 0.2, 0.7]])],
    }
    generic = {2: (0.2, 1.3), 3: (0.0, 0.7, 1.6)}
    worst = 0.0
    cases = 0
    for kernel, K, n in itertools.product(("tournament", "inverse"), (2, 3), (2, 3)):
        for prior in priors[K]:
            for phi in ((0.0,) * K, generic[K]):
                res = detailed_balance_residual(kernel, FiniteSpace(K), n, prior, FitnessSpec(FiniteTable(phi)))
                worst = max(worst, res)
                cases += 1
    elapsed = time.perf_counter() - start
    ok = worst < 1e-12 and elapsed < 10
    report(1, ok, f"{cases} cases, max residual {worst:.2e} (< 1e-12), {elapsed:.1f}s (< 10s)")
    assert ok


def test_criterion_02_exact_law_reduction(report):
    start = time.perf_counter()
    space = FiniteSpace(2)
    _, pmf = exact_stationary_counts(space, [1.0, 1.0], [1.0, 1.0], 2)
    dev = float(np.abs(pmf - 1.0 / 3.0).max())
    shift = 0.0
    for scale in (1e-6, 0.37, 5.0, 1e8):
        _, scaled = exact_stationary_counts(space, [1.0, 1.0], [scale, scale], 2)
        shift = max(shift, float(np.abs(scaled - pmf).max()))
    elapsed = time.perf_counter() - start
    ok = dev < 1e-12 and shift < 1e-12 and elapsed < 1
    report(2, ok, f"pmf {np.round(pmf, 15).tolist()}, deviation {dev:.1e}, rescaling shift {shift:.1e}, {elapsed:.2f}s")
    assert ok


def test_criterion_03_mcmc_matches_exact(report):
    start = time.perf_counter()
    alpha = np.array([1.0, 2.0, 3.0])
    prior = DPPrior(6.0, MeasureRepr.from_pmf(alpha / 6.0), "fixed")
    fit = FitnessSpec(FiniteTable((0.0, 0.5, 1.0)), 0.0)
    cfg = ChainConfig(n=10, replicas=10**6, seed=20240601)
    exact = exact_stationary_counts(FiniteSpace(3), alpha, fit, 10)
    rep = mcmc_vs_exact(cfg, FiniteSpace(3), prior, fit, exact=exact)
    elapsed = time.perf_counter() - start
    ok = rep.passed and rep.samples == 10**6 and elapsed < 120
    report(3, ok, f"{rep.samples} samples, TV {rep.tv:.4f} (< 0.02), chi2 p {rep.chi2_pvalue:.3f} "
                  f"(> 0.01, dof {rep.dof}), attempts {rep.attempts}, {elapsed:.1f}s (< 120s)")
    assert ok


def test_criterion_04_theta_fixed_points(report):
    start = time.perf_counter()
    finite = MeasureRepr.from_pmf([0.4, 0.6])
    const = TabulatedInterval((0.0, 1.0), (0.7, 0.7))
    battery = [
        ("lambda0 |x-0.3|^2 c=1", FitnessSpec(PowerDistance(0.3, 2.0)), U, 1.0, "lambda0"),
        ("lambda0 |x-0.3|^1 c=0.5", FitnessSpec(PowerDistance(0.3, 1.0)), U, 0.5, "lambda0"),
        ("lambda0 two labels", FitnessSpec(FiniteTable((0.0, 1.0))), finite, 1.0, "lambda0"),
        ("frac |x-0.3|^2 c=1", FitnessSpec(PowerDistance(0.3, 2.0), 0.5), U, 1.0, "frac"),
        ("lambda0 constant", FitnessSpec(const), U, 1.0, "lambda0"),
        ("frac constant", FitnessSpec(const, 0.5), U, 1.0, "frac"),
    ]
    worst_mass = worst_fixed = 0.0
    trivial_ok = True
    for name, fit, base, c, mode in battery:
        solve = solve_theta_lambda0 if mode == "lambda0" else solve_theta_frac
        theta = solve(fit, base, c)
        mass, fixed = theta_residuals(fit, base, c, theta, mode)
        worst_mass, worst_fixed = max(worst_mass, mass), max(worst_fixed, fixed)
        if "constant" in name:
            trivial_ok &= theta == (math.exp(-0.7) if mode == "lambda0" else 0.7)
    elapsed = time.perf_counter() - start
    ok = worst_mass < 1e-10 and worst_fixed < 1e-8 and trivial_ok and elapsed < 5
    report(4, ok, f"{len(battery)} cases, mass residual {worst_mass:.1e} (< 1e-10), fixed-point residual "
                  f"{worst_fixed:.1e} (< 1e-8), constant cases exact: {trivial_ok}, {elapsed:.2f}s")
    assert ok


def test_criterion_05_critical_exponent(report):
    start = time.perf_counter()
    p_star = critical_exponent(c=1.0, x_o=0.3)
    elapsed = time.perf_counter() - start
    ok = abs(p_star - 0.2) <= 0.02 and elapsed < 30
    report(5, ok, f"p* = {p_star:.8f} (0.2 +/- 0.02), {elapsed:.2f}s")
    assert ok


def test_criterion_06_atom_mass_balance(report):
    start = time.perf_counter()
    c = 1.0
    res = limit_measure_lambda0(FitnessSpec(PowerDistance(0.3, 0.1)), U, c)
    balance = res.details["density_mass"] + (1 - res.beta) * (1 + c) - 1.0
    grid_total = res.measure.total_mass() - 1.0
    elapsed = time.perf_counter() - start
    ok = res.regime == "dp_lambda0_atom" and abs(balance) < 1e-6 and abs(grid_total) < 1e-6 and elapsed < 10
    report(6, ok, f"regime {res.regime}, beta {res.beta:.8f}, balance error {balance:.1e}, "
                  f"grid total error {grid_total:.1e} (< 1e-6), {elapsed:.2f}s")
    assert ok


def test_criterion_07_lambda_independence(report):
    start = time.perf_counter()
    worst = 0.0
    for p, c in ((2.0, 1.0), (0.5, 0.1)):
        a = limit_measure_frac(FitnessSpec(PowerDistance(0.3, p), 0.25), U, c)
        b = limit_measure_frac(FitnessSpec(PowerDistance(0.3, p), 0.75), U, c)
        worst = max(worst, float(np.abs(a.measure.density - b.measure.density).max()),
                    float(np.abs(a.measure.atom_masses - b.measure.atom_masses).max(initial=0.0)))
        assert np.array_equal(a.measure.atom_locs, b.measure.atom_locs)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 5
    report(7, ok, f"density and regimes (density, atom), max cell/atom difference {worst:.1e} (<= 1e-12), {elapsed:.2f}s")
    assert ok


def _simplex_grid(step=100):
    pts = [(i, j, step - i - j) for i in range(step + 1) for j in range(step + 1 - i)]
    return np.array(pts, dtype=float) / step


def test_criterion_08_objective_optimality(report):
    start = time.perf_counter()
    notes = []
    ok = True
    base = MeasureRepr.from_pmf([0.2, 0.3, 0.5])
    grid = _simplex_grid()
    for mode, lam in (("lambda0", 0.0), ("frac", 0.5)):
        fit = FitnessSpec(FiniteTable((0.0, 0.8, 1.5)), lam)
        lim = limit_measure_lambda0(fit, base, 1.0) if mode == "lambda0" else limit_measure_frac(fit, base, 1.0)
        f_star = objective_F(lim.q_star, fit, base, 1.0, mode)
        vals = np.array([objective_F(MeasureRepr.from_pmf(g), fit, base, 1.0, mode) for g in grid])
        best = int(np.argmax(vals))
        nearest = int(np.argmin(((grid - lim.q_star.pmf) ** 2).sum(axis=1)))
        gap = f_star - vals[best]
        ok &= 0 <= gap < 1e-3 and best == nearest
        notes.append(f"{mode} grid gap {gap:.1e} argmax==nearest {best == nearest}")

    rng = np.random.default_rng(8)
    cases = [("lambda0", 0.0, 2.0, 1.0), ("lambda0", 0.0, 0.1, 1.0),
             ("frac", 0.5, 2.0, 1.0), ("frac", 0.5, 0.5, 0.1)]
    for mode, lam, p, c in cases:
        fit = FitnessSpec(PowerDistance(0.3, p), lam)
        lim = limit_measure_lambda0(fit, U, c) if mode == "lambda0" else limit_measure_frac(fit, U, c)
        q = lim.q_star
        f_star = objective_F(q, fit, U, c, mode)
        x = (np.arange(q.space.M) + 0.5) / q.space.M
        worst = -math.inf
        for _ in range(200):
            eps = rng.uniform(0.001, 0.3)
            coef = rng.normal(size=(3, 2))
            bump = sum(a * np.sin((j + 1) * np.pi * x) + b * np.cos((j + 1) * np.pi * x)
                       for j, (a, b) in enumerate(coef))
            dens = q.density * np.exp(eps * bump)
            atoms = [(loc, m * math.exp(eps * rng.normal())) for loc, m in q.atoms]
            total = dens.sum() / q.space.M + sum(m for _, m in atoms)
            cand = MeasureRepr.from_parts(q.space, [(loc, m / total) for loc, m in atoms], dens / total)
            worst = max(worst, objective_F(cand, fit, U, c, mode) - f_star)
        ok &= worst <= 0.0
        notes.append(f"{lim.regime} worst {worst:.1e}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 120
    report(8, ok, "; ".join(notes) + f"; {elapsed:.1f}s")
    assert ok


def test_criterion_09_elementary_bound(report):
    start = time.perf_counter()
    best, arg = elementary_max_bound()
    alphas = np.linspace(0.02, 0.98, 20)
    ridge = elementary_ridge(alphas)
    elapsed = time.perf_counter() - start
    ok = best <= 1 + 1e-9 and np.allclose(ridge, 1.0, atol=1e-12) and elapsed < 5
    report(9, ok, f"max {best:.12f} at {tuple(round(v, 4) for v in arg)} (<= 1 + 1e-9), "
                  f"ridge deviation {np.abs(ridge - 1).max():.1e} at 20 alphas, {elapsed:.2f}s")
    assert ok


def test_criterion_10_power_product(report):
    start = time.perf_counter()
    mixed = MeasureRepr.from_parts(UnitInterval(), [(0.2, 0.3)], np.full(UnitInterval().M, 0.7))
    pairs = [(FiniteTable((0.0, 1.0, 3.0)), MeasureRepr.from_pmf([0.2, 0.5, 0.3])),
             (FiniteTable((0.5, 2.0)), MeasureRepr.from_pmf([0.9, 0.1])),
             (PowerDistance(0.3, 2.0), U),
             (PowerDistance(0.5, 1.0), U),
             (PowerDistance(0.7, 0.5), mixed)]
    worst_res, ratios = 0.0, []
    for phi, q in pairs:
        table = power_product_limit(phi, q, [1e4, 2e4])
        worst_res = max(worst_res, table.residual[0])
        ratios.append(float(table.halving_ratios[0]))
    elapsed = time.perf_counter() - start
    ok = worst_res < 1e-4 and all(1.6 <= r <= 2.4 for r in ratios) and elapsed < 5
    report(10, ok, f"max residual at m=1e4 {worst_res:.2e} (< 1e-4), halving ratios "
                   f"{[round(r, 4) for r in ratios]} (2 +/- 20%), {elapsed:.2f}s")
    assert ok


def test_criterion_11_phase_transition_sweep(report):
    start = time.perf_counter()
    lines, ok = [], True

    mix = FiniteMixture([0.5, 0.5], [[0.45, 0.3, 0.25], [0.25, 0.3, 0.45]])
    t = sweep_convergence([2.0], [10, 15, 20, 30, 40, 50], mix, FiniteTable((0.0, 20.0, 40.0)), "TV",
                          seed=11, replicas=50000)
    ns, vals = t.values(2.0)
    rho, p = t.trend(2.0)
    row = vals[-1] < vals[0] and p < 0.01
    ok &= row
    lines.append(f"(i) TV n=10 {vals[0]:.4f} -> n=50 {vals[-1]:.4f}, rho {rho:.2f} p {p:.4f}")

    ts = np.linspace(0.0, 1.0, 41)
    ladder = FiniteMixture(np.full(41, 1 / 41), [(1 - s) * np.full(3, 1 / 3) + s * np.eye(3)[0] for s in ts])
    t = sweep_convergence([0.5], [20, 40, 60, 100, 150, 200], ladder, FiniteTable((0.0, 2.0, 4.0)), "W1",
                          seed=12, replicas=1000)
    ns, vals = t.values(0.5)
    rho, p = t.trend(0.5)
    row = vals[-1] < vals[0] and p < 0.01
    ok &= row
    lines.append(f"(ii) W1 n=20 {vals[0]:.4f} -> n=200 {vals[-1]:.4f}, rho {rho:.2f} p {p:.4f}")

    dp = DPPrior(1.0, U)
    t = sweep_convergence([0.0], [25, 50, 100, 200, 400, 800, 1400, 2000], dp, PowerDistance(0.3, 2.0), "KS",
                          seed=13, replicas=20)
    ns, vals = t.values(0.0)
    rho, p = t.trend(0.0)
    row = vals[-1] < 0.05 and p < 0.01
    ok &= row
    lines.append(f"(iii) KS n=2000 {vals[-1]:.4f} (< 0.05), rho {rho:.2f} p {p:.4f}")

    elapsed = time.perf_counter() - start
    ok &= elapsed < 900
    report(11, ok, "; ".join(lines) + f"; {elapsed:.0f}s (< 900s)")
    assert ok


def test_criterion_12_reproducibility(report, tmp_path):
    jobs = [("simulate", "finite_minimal.json"), ("simulate", "lambda0_interval.json"),
            ("limit", "limit_atom.json"), ("oracle", "oracle_k2.json"),
            ("sweep", "sweep_mixture_lambda2.json")]
    identical, files = True, 0
    for cmd, name in jobs:
        runs = []
        for k in range(2):
            out = tmp_path / f"{name}-{k}"
            assert cli_main([cmd, "--config", str(CONFIGS / name), "--out", str(out)]) == 0
            runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.suffix != ".log"})
        identical &= runs[0] == runs[1] and bool(runs[0])
        files += len(runs[0])
    report(12, identical, f"{len(jobs)} configs, {files} CSV/JSON files byte-identical across reruns: {identical}")
    assert identical
