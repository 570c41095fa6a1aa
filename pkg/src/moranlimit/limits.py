"""Large-population limits of the stationary law.

Covers the Dirichlet-process limits at ``lambda = 0`` and ``lambda in (0, 1)``
(threshold tests, the normalizing parameter ``theta``, density and
density-plus-atom limit measures), the fixed-prior limits, the entropy
objective whose maximizer is the limit, and two elementary propositions used
along the way.

Notation in code: ``w_o`` / ``phi_o`` are the fitness / phi at the fittest
type ``x_o``; ``c`` is the DP concentration scale; ``base`` is the DP base
measure (Uniform[0, 1] on the interval or a pmf on labels).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize

from .breeding import DPPrior, FiniteMixture
from .measures import (FiniteSpace, FitnessSpec, MeasureRepr, QuadratureError, UnitInterval,
                       cell_averages, expectation, integrate, phi_is_constant, relative_entropy)

REGIMES = ("lambda_gt1", "lambda_eq1", "lambda_in_0_1_fixed_prior", "dp_lambda0_density",
           "dp_lambda0_atom", "dp_frac_density", "dp_frac_atom")

QUAD_TOL = 1e-10
THETA_XTOL = 1e-14
GRID_MASS_TOL = 1e-7


class IndeterminateError(RuntimeError):
    """The threshold integral is too close to its critical value to classify."""


class HypothesisError(ValueError):
    """The hypotheses of a limit result do not hold for the given inputs."""


@dataclass(frozen=True, eq=False)
class LimitResult:
    """Predicted infinite-population limit.

    ``measure`` is the limit law of one individual; ``q_star`` the maximizer
    of the entropy objective (for DP limits); ``qn_limit`` the limit of the
    empirical-measure law, either a measure (meaning a point mass at it) or a
    finite mixture over measures.
    """

    regime: str
    measure: MeasureRepr
    theta: float | None = None
    beta: float | None = None
    theta_o: float | None = None
    q_star: MeasureRepr | None = None
    qn_limit: object = None
    threshold_integral: float | None = None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")

    @property
    def is_atom_regime(self) -> bool:
        return self.regime.endswith("_atom")

    def to_dict(self) -> dict:
        def num(v):
            if v is None:
                return None
            return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")

        d = {"regime": self.regime, "theta": num(self.theta), "beta": num(self.beta),
             "theta_o": num(self.theta_o), "threshold_integral": num(self.threshold_integral),
             "measure": self.measure.to_dict()}
        if self.q_star is not None:
            d["q_star"] = self.q_star.to_dict()
        if isinstance(self.qn_limit, FiniteMixture):
            d["qn_limit"] = {"kind": "mixture", **self.qn_limit.to_dict()}
        elif isinstance(self.qn_limit, MeasureRepr):
            d["qn_limit"] = {"kind": "point_mass_at_measure"}
        d.update(self.details)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _fittest(fit: FitnessSpec, base: MeasureRepr):
    x_o = fit.phi.minimizer
    if x_o is None:
        raise HypothesisError("phi must have a unique minimizer")
    return x_o, float(fit.phi.minimum)


def _break_points(fit: FitnessSpec, base: MeasureRepr):
    """Interior minimizer of ``phi`` as a quadrature break point, if there is one."""
    x_o = fit.phi.minimizer
    if base.is_finite or x_o is None or not 0.0 < x_o < 1.0:
        return None
    return [x_o]


def _require_lambda(fit: FitnessSpec, lo: float, hi: float, closed_hi=False):
    ok = lo <= fit.lam < hi or (closed_hi and fit.lam == hi)
    if not ok:
        raise HypothesisError(f"lambda={fit.lam} outside the range of this limit")


def _integral(fn, base: MeasureRepr, singularity=None, points=None, tol=QUAD_TOL):
    """``int fn d(base)``; on labels the singular point may carry mass (giving ``inf``)."""
    if base.is_finite:
        pmf = base.pmf
        labels = np.nonzero(pmf > 0)[0]
        with np.errstate(divide="ignore"):
            vals = np.asarray(fn(labels.astype(float)), dtype=float)
        if np.any(np.isinf(vals)):
            return math.inf
        return math.fsum(vals * pmf[labels])
    return integrate(fn, base, singularity, tol=tol, points=points)


def _gap(fit: FitnessSpec, phi_o: float):
    """``phi(x) - phi_o`` as a callable (nonnegative)."""
    return lambda x: np.maximum(fit.phi(x) - phi_o, 0.0)


def _classify(integral_fn, threshold: float, tol: float):
    val = integral_fn(tol)
    if math.isinf(val):
        return True, val
    if abs(val - threshold) < 100 * tol * max(1.0, threshold):
        val = integral_fn(tol / 100)
        if abs(val - threshold) < 10 * tol * max(1.0, threshold):
            raise IndeterminateError(
                f"threshold integral {val!r} is within {10 * tol:g} of {threshold!r}; refine the inputs")
    return val >= threshold, val


# ---------------------------------------------------------------------------
# lambda = 0
# ---------------------------------------------------------------------------


def marta_integrand(fit: FitnessSpec, phi_o: float):
    """``w_o / (w_o - w)`` written stably as ``1 / (1 - exp(-(phi - phi_o)))``."""
    gap = _gap(fit, phi_o)

    def f(x):
        with np.errstate(divide="ignore"):
            return 1.0 / (-np.expm1(-gap(x)))
    return f


def check_marta(fit: FitnessSpec, base: MeasureRepr, c: float, tol: float = QUAD_TOL):
    """Whether ``int w_o / (w_o - w) d(base) >= (1 + c) / c``; returns ``(holds, integral)``."""
    _require_lambda(fit, 0.0, 0.0, closed_hi=True)
    x_o, phi_o = _fittest(fit, base)
    f = marta_integrand(fit, phi_o)
    return _classify(lambda t: _integral(f, base, x_o, tol=t), (1.0 + c) / c, tol)


def f_theta_lambda0(fit: FitnessSpec, c: float, theta: float):
    """Density ``c / (1 + c - w / theta)`` with respect to the base measure."""
    def f(x):
        d = 1.0 + c - np.exp(-fit.phi(x)) / theta
        # past the singular point the density is undefined; report it as divergent
        with np.errstate(divide="ignore"):
            return np.where(d > 0, c / np.where(d > 0, d, 1.0), np.inf)
    return f


def solve_theta_lambda0(fit: FitnessSpec, base: MeasureRepr, c: float, tol: float = QUAD_TOL) -> float:
    """Unique ``theta`` in ``[w_o / (1 + c), w_o]`` making ``f_theta`` a probability density."""
    _require_lambda(fit, 0.0, 0.0, closed_hi=True)
    if phi_is_constant(fit.phi):
        return math.exp(-fit.phi.minimum)
    x_o, phi_o = _fittest(fit, base)
    w_o = math.exp(-phi_o)
    pts = _break_points(fit, base)

    def g(theta):
        return _integral(f_theta_lambda0(fit, c, theta), base, points=pts, tol=tol / 10) - 1.0

    lo, hi = w_o / (1.0 + c), w_o
    return _bracketed_root(g, lo, hi, move="lo")


def _bracketed_root(g, lo, hi, move):
    """Root of a monotone ``g`` on ``[lo, hi]``; the ``move`` end may be singular."""
    width = hi - lo
    g_lo, g_hi = (_safe(g, lo), _safe(g, hi))
    shift = 1e-12
    while True:
        val = g_lo if move == "lo" else g_hi
        if math.isfinite(val):
            break
        if shift > 0.5:
            raise RuntimeError("could not move the bracket off the singular endpoint")
        if move == "lo":
            lo_try = lo + shift * width
            g_lo = _safe(g, lo_try)
            if math.isfinite(g_lo):
                lo = lo_try
        else:
            hi_try = hi - shift * width
            g_hi = _safe(g, hi_try)
            if math.isfinite(g_hi):
                hi = hi_try
        shift *= 10
    if g_lo == 0.0:
        return lo
    if g_hi == 0.0:
        return hi
    if np.sign(g_lo) == np.sign(g_hi):
        raise RuntimeError(f"bracket [{lo!r}, {hi!r}] does not enclose a root "
                           f"(values {g_lo!r}, {g_hi!r}); the threshold check may be wrong")
    return brentq(g, lo, hi, xtol=THETA_XTOL, rtol=4 * np.finfo(float).eps, maxiter=500)


def _safe(g, x):
    try:
        v = g(x)
    except (QuadratureError, ZeroDivisionError, FloatingPointError):
        return math.inf
    return v if math.isfinite(v) else math.inf


def _finite_measure(space: FiniteSpace, pmf) -> MeasureRepr:
    pmf = np.asarray(pmf, dtype=float)
    return MeasureRepr.from_pmf(pmf / math.fsum(pmf), space)


def _density_measure(base: MeasureRepr, fn, atom_loc=None, atom_mass=0.0, singular=None):
    """Measure ``fn d(base) + atom_mass * delta_{atom_loc}``."""
    if base.is_finite:
        labels = np.arange(base.space.K, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.where(base.pmf > 0, fn(labels), 0.0)
        pmf = vals * base.pmf
        if atom_loc is not None:
            pmf[int(atom_loc)] += atom_mass
        return _finite_measure(base.space, pmf)
    dens = cell_averages(fn, base.space, singularity=singular)
    atoms = [(atom_loc, atom_mass)] if atom_loc is not None and atom_mass > 0 else []
    # cell quadrature leaves a tiny mass defect; fold it into the density part
    atom_total = sum(m for _, m in atoms)
    grid_mass = math.fsum(dens) / base.space.M
    if abs(grid_mass + atom_total - 1.0) > GRID_MASS_TOL:
        raise QuadratureError(f"gridded density has mass {grid_mass!r} against an expected "
                              f"{1.0 - atom_total!r}", (grid_mass, 1.0 - atom_total))
    return MeasureRepr.from_parts(base.space, atoms, dens * ((1.0 - atom_total) / grid_mass))


def limit_measure_lambda0(fit: FitnessSpec, base: MeasureRepr, c: float, tol: float = QUAD_TOL) -> LimitResult:
    """Limit of one individual's law under DP breeding with ``m_n = c n`` and fixed fitness."""
    holds, integral = check_marta(fit, base, c, tol)
    x_o, phi_o = _fittest(fit, base)
    w_o = math.exp(-phi_o)
    theta_o = w_o / (1.0 + c)
    w = lambda x: np.exp(-fit.phi(x))
    if holds:
        theta = solve_theta_lambda0(fit, base, c, tol)
        f = f_theta_lambda0(fit, c, theta)
        r = lambda x: c * w(x) / (theta * (1.0 + c) - w(x))
        q_star = _density_measure(base, f)
        measure = _density_measure(base, r)
        return LimitResult("dp_lambda0_density", measure, theta=theta, theta_o=theta_o,
                           q_star=q_star, qn_limit=measure, threshold_integral=integral)
    gap = _gap(fit, phi_o)

    def f(x):
        with np.errstate(divide="ignore"):
            return c / ((1.0 + c) * -np.expm1(-gap(x)))

    def r(x):
        with np.errstate(divide="ignore"):
            return c * np.exp(-gap(x)) / (-np.expm1(-gap(x)))

    beta = c * integral / (1.0 + c)
    q_star = _density_measure(base, f, x_o, 1.0 - beta, singular=x_o)
    measure = _density_measure(base, r, x_o, (1.0 - beta) * (1.0 + c), singular=x_o)
    density_mass = c * integral - c
    return LimitResult("dp_lambda0_atom", measure, theta=theta_o, beta=beta, theta_o=theta_o,
                       q_star=q_star, qn_limit=measure, threshold_integral=integral,
                       details={"density_mass": density_mass,
                                "atom_mass": (1.0 - beta) * (1.0 + c)})


# ---------------------------------------------------------------------------
# lambda in (0, 1)
# ---------------------------------------------------------------------------


def check_marta2(fit: FitnessSpec, base: MeasureRepr, c: float, tol: float = QUAD_TOL):
    """Whether ``int 1 / (phi - phi_o) d(base) >= 1 / c``; returns ``(holds, integral)``."""
    _require_lambda(fit, 1e-300, 1.0)
    x_o, phi_o = _fittest(fit, base)
    gap = _gap(fit, phi_o)

    def f(x):
        with np.errstate(divide="ignore"):
            return 1.0 / gap(x)
    return _classify(lambda t: _integral(f, base, x_o, tol=t), 1.0 / c, tol)


def f_theta_frac(fit: FitnessSpec, c: float, theta: float):
    """Density ``c / (phi + c - theta)`` with respect to the base measure."""
    def f(x):
        d = fit.phi(x) + c - theta
        with np.errstate(divide="ignore"):
            return np.where(d > 0, c / np.where(d > 0, d, 1.0), np.inf)
    return f


def solve_theta_frac(fit: FitnessSpec, base: MeasureRepr, c: float, tol: float = QUAD_TOL) -> float:
    """Unique ``theta`` in ``[phi_o, phi_o + c]`` making ``f_theta`` a probability density."""
    _require_lambda(fit, 1e-300, 1.0)
    if phi_is_constant(fit.phi):
        return float(fit.phi.minimum)
    x_o, phi_o = _fittest(fit, base)
    pts = _break_points(fit, base)

    def g(theta):
        return _integral(f_theta_frac(fit, c, theta), base, points=pts, tol=tol / 10) - 1.0

    return _bracketed_root(g, phi_o, phi_o + c, move="hi")


def limit_measure_frac(fit: FitnessSpec, base: MeasureRepr, c: float, tol: float = QUAD_TOL) -> LimitResult:
    """Limit of one individual's law under DP breeding with ``m_n = c n^(1 - lambda)``.

    Only ``phi``, not ``lambda``, enters the computation, so the result is the
    same for every ``lambda`` in ``(0, 1)``.
    """
    holds, integral = check_marta2(fit, base, c, tol)
    x_o, phi_o = _fittest(fit, base)
    theta_o = c + phi_o
    if holds:
        theta = solve_theta_frac(fit, base, c, tol)
        measure = _density_measure(base, f_theta_frac(fit, c, theta))
        return LimitResult("dp_frac_density", measure, theta=theta, theta_o=theta_o,
                           q_star=measure, qn_limit=measure, threshold_integral=integral)
    gap = _gap(fit, phi_o)

    def f(x):
        with np.errstate(divide="ignore"):
            return c / gap(x)

    beta = c * integral
    measure = _density_measure(base, f, x_o, 1.0 - beta, singular=x_o)
    return LimitResult("dp_frac_atom", measure, theta=theta_o, beta=beta, theta_o=theta_o,
                       q_star=measure, qn_limit=measure, threshold_integral=integral,
                       details={"density_mass": beta, "atom_mass": 1.0 - beta})


def theta_residuals(fit: FitnessSpec, base: MeasureRepr, c: float, theta: float, mode: str,
                    tol: float = 1e-12) -> tuple[float, float]:
    """``(|int f_theta - 1|, |theta - <w or phi, f_theta>|)`` by direct quadrature."""
    pts = _break_points(fit, base)
    if mode == "lambda0":
        f = f_theta_lambda0(fit, c, theta)
        g = lambda x: np.exp(-fit.phi(x)) * f(x)
    elif mode == "frac":
        f = f_theta_frac(fit, c, theta)
        g = lambda x: fit.phi(x) * f(x)
    else:
        raise ValueError("mode must be 'lambda0' or 'frac'")
    mass = _integral(f, base, points=pts, tol=tol)
    return abs(mass - 1.0), abs(theta - _integral(g, base, points=pts, tol=tol))


def theta_map(fit: FitnessSpec, base: MeasureRepr, c: float, thetas, mode: str) -> np.ndarray:
    """``theta -> int f_theta d(base)`` evaluated at the given points."""
    pts = _break_points(fit, base)
    make = f_theta_lambda0 if mode == "lambda0" else f_theta_frac
    return np.array([_integral(make(fit, c, t), base, points=pts) for t in thetas])


def critical_exponent(c: float = 1.0, x_o: float = 0.3, mode: str = "lambda0",
                      bracket=(0.05, 0.95), tol: float = 1e-10) -> float:
    """Exponent ``p`` at which ``phi = |x - x_o|^p`` on Uniform[0, 1] sits on the threshold."""
    from .measures import PowerDistance
    base = MeasureRepr.uniform(UnitInterval())
    if mode == "lambda0":
        target = (1.0 + c) / c
        integrand = lambda p: (lambda x: 1.0 / (-np.expm1(-np.abs(x - x_o) ** p)))
    else:
        target = 1.0 / c
        integrand = lambda p: (lambda x: np.abs(x - x_o) ** (-p))
    g = lambda p: integrate(integrand(p), base, x_o, tol=tol) - target
    return brentq(g, *bracket, xtol=1e-12)


# ---------------------------------------------------------------------------
# fixed priors
# ---------------------------------------------------------------------------


def limit_prior_lambda1(prior: FiniteMixture, fit: FitnessSpec) -> FiniteMixture:
    """Mixture with weights ``∝ weight_i * exp(-<phi, q_i>)``."""
    if not isinstance(prior, FiniteMixture):
        raise TypeError("the reweighted limit is implemented for finite mixtures")
    mean_phi = prior.components @ np.asarray(fit.phi(np.arange(prior.K)), dtype=float)
    with np.errstate(divide="ignore"):
        lw = np.log(prior.weights) - mean_phi
    lw -= lw.max()
    w = np.exp(lw)
    return FiniteMixture(w / w.sum(), prior.components, prior.space)


def _has_point_mass_component(prior: FiniteMixture, x_o: int) -> bool:
    target = np.zeros(prior.K)
    target[x_o] = 1.0
    return any(wi > 0 and np.array_equal(q, target) for wi, q in zip(prior.weights, prior.components))


def limit_fixed_prior(fit: FitnessSpec, prior) -> LimitResult:
    """Limit for a breeding prior that does not depend on ``n``.

    ``lambda > 1``: the prior itself; ``lambda = 1``: the reweighted mixture;
    ``lambda < 1``: all individuals at the fittest type, which requires the
    point mass at it to lie in the prior's support.
    """
    space = prior.space
    lam = fit.lam
    if isinstance(prior, DPPrior):
        if prior.mass_rule != "fixed":
            raise HypothesisError("a fixed-prior limit needs a DP with a fixed concentration")
        mean = prior.base
    else:
        mean = prior.mean_measure()
    if lam > 1:
        return LimitResult("lambda_gt1", mean, qn_limit=prior)
    if lam == 1:
        if not isinstance(prior, FiniteMixture):
            raise HypothesisError("the lambda = 1 limit is implemented for finite mixtures")
        post = limit_prior_lambda1(prior, fit)
        return LimitResult("lambda_eq1", post.mean_measure(), qn_limit=post,
                           details={"weights": post.weights.tolist()})
    x_o = fit.phi.minimizer
    if x_o is None:
        raise HypothesisError("phi must have a unique minimizer")
    if isinstance(prior, FiniteMixture):
        if not _has_point_mass_component(prior, int(x_o)):
            raise HypothesisError("hypothesis violated: the point mass at the fittest type "
                                  "is not in the support of the prior")
    elif prior.base.is_finite and prior.base.pmf[int(x_o)] == 0:
        raise HypothesisError("hypothesis violated: the fittest type lies outside the DP base support")
    point = MeasureRepr.dirac(x_o, space)
    return LimitResult("lambda_in_0_1_fixed_prior", point, qn_limit=point)


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------


def objective_F(q: MeasureRepr, fit: FitnessSpec, base: MeasureRepr, c: float, mode: str) -> float:
    """Entropy-penalized objective on the representation of ``q``.

    ``lambda0``: ``ln <w, q> - c D(base || q)`` with ``w = exp(-phi)``;
    ``frac``: ``-<phi, q> - c D(base || q)``.  Returns ``-inf`` when
    ``base`` is not absolutely continuous with respect to ``q``.
    """
    d = relative_entropy(base, q)
    if math.isinf(d):
        return -math.inf
    if mode == "lambda0":
        return math.log(expectation(lambda x: np.exp(-fit.phi(x)), q)) - c * d
    if mode == "frac":
        return -expectation(fit.phi, q) - c * d
    raise ValueError("mode must be 'lambda0' or 'frac'")


# ---------------------------------------------------------------------------
# propositions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerProductTable:
    m: np.ndarray
    residual: np.ndarray
    fitted_C: float

    @property
    def halving_ratios(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.residual[:-1] / self.residual[1:]


def power_product_limit(phi, q: MeasureRepr, m_list) -> PowerProductTable:
    """Residuals ``|<exp(-phi/m), q>^m - exp(-<phi, q>)|`` for each ``m``.

    Computed relative to ``phi_min`` with ``log1p`` / ``expm1`` so that
    constant ``phi`` gives exactly zero.
    """
    m_arr = np.asarray(m_list, dtype=float)
    if np.any(m_arr < 1):
        raise ValueError("m must be at least 1")
    from .measures import quadrature_nodes
    x, wts = quadrature_nodes(q)
    vals = np.asarray(phi(x), dtype=float)
    lo = vals.min()
    psi = vals - lo
    mean_psi = math.fsum(psi * wts)
    res = []
    for m in m_arr:
        log_inner = math.log1p(math.fsum(np.expm1(-psi / m) * wts))
        res.append(math.exp(-lo - mean_psi) * abs(math.expm1(m * log_inner + mean_psi)))
    res = np.array(res)
    return PowerProductTable(m_arr, res, float(np.max(res * m_arr)))


def _elementary(x, a):
    """``(1 + x)(1 + 1/x)^x a^x (1 - a)`` with the ``x -> 0`` and ``a -> 0`` limits."""
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(x > 0, x * np.log1p(1.0 / np.where(x > 0, x, 1.0)), 0.0)
        ax = np.where(x > 0, x * np.log(np.where(a > 0, a, 1.0)), 0.0)
        val = np.exp(np.log1p(x) + term + ax) * (1.0 - a)
    return np.where((a == 0) & (x > 0), 0.0, val)


def elementary_max_bound(grid: int = 400, x_max: float = 50.0):
    """Maximum of ``(1 + x)(1 + 1/x)^x a^x (1 - a)`` over ``[0, x_max] x [0, 1]``.

    Grid search (log-spaced in ``x``) followed by bounded local refinement.
    Returns ``(max_value, argmax)``.
    """
    xs = np.concatenate([[0.0], np.geomspace(1e-6, x_max, grid)])
    al = np.linspace(0.0, 1.0, grid + 1)
    X, A = np.meshgrid(xs, al, indexing="ij")
    V = _elementary(X, A)
    best = float(V.max())
    arg = np.unravel_index(np.argmax(V), V.shape)
    start = np.array([X[arg], A[arg]])
    order = np.argsort(V, axis=None)[::-1][:10]
    for idx in order:
        i, j = np.unravel_index(idx, V.shape)
        res = minimize(lambda z: -float(_elementary(z[0], z[1])), [X[i, j], A[i, j]],
                       method="L-BFGS-B", bounds=[(0.0, x_max), (0.0, 1.0)])
        val = -float(res.fun)
        if val > best:
            best, start = val, res.x
    return best, (float(start[0]), float(start[1]))


def elementary_ridge(alphas) -> np.ndarray:
    """The function evaluated on ``x = a / (1 - a)``, where it equals 1."""
    a = np.asarray(alphas, dtype=float)
    return _elementary(a / (1.0 - a), a)
