"""Type spaces, probability measures on them, fitness, quadrature and distances.

Two kinds of type space are supported: a finite label set ``{0, ..., K-1}``
and the unit interval ``[0, 1]``.  Measures on the interval are stored as a
list of exact atoms plus a piecewise-constant density on a uniform grid of
``M`` cells (cell-average values with respect to Lebesgue measure).  Measures
on a finite space are plain probability vectors.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import IntegrationWarning, quad

DEFAULT_GRID = 4096
MASS_TOL = 1e-9

_GL_ORDER = 8
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GL_ORDER)
_GL16_X, _GL16_W = np.polynomial.legendre.leggauss(16)


class QuadratureError(RuntimeError):
    """Raised when a quadrature refinement fails to converge."""

    def __init__(self, message, estimates=()):
        super().__init__(message)
        self.estimates = tuple(estimates)


# ---------------------------------------------------------------------------
# spaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FiniteSpace:
    """Labels ``0..K-1``.

    ``locations`` optionally embeds the labels into ``[0, 1]``; the embedding
    is only used by the CDF-based distances (W1, KS).  By default the labels
    sit at ``linspace(0, 1, K)``.
    """

    K: int
    locations: tuple | None = None

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K!r}")
        if self.locations is not None:
            locs = tuple(float(v) for v in self.locations)
            if len(locs) != self.K:
                raise ValueError("locations must have one entry per label")
            if any(not 0.0 <= v <= 1.0 for v in locs):
                raise ValueError("label locations must lie in [0, 1]")
            if len(set(locs)) != len(locs):
                raise ValueError("label locations must be distinct")
            object.__setattr__(self, "locations", locs)

    kind = "finite"

    @property
    def coords(self) -> np.ndarray:
        if self.locations is not None:
            return np.asarray(self.locations, dtype=float)
        if self.K == 1:
            return np.zeros(1)
        return np.linspace(0.0, 1.0, self.K)

    def contains(self, x) -> bool:
        return float(x) == int(x) and 0 <= int(x) < self.K

    def to_dict(self) -> dict:
        d = {"kind": "finite", "K": self.K}
        if self.locations is not None:
            d["locations"] = list(self.locations)
        return d


@dataclass(frozen=True)
class UnitInterval:
    """``[0, 1]`` with a uniform grid of ``M`` cells for densities."""

    M: int = DEFAULT_GRID

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 2:
            raise ValueError(f"grid resolution must be an integer >= 2, got {self.M!r}")

    kind = "interval"

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.M + 1)

    def contains(self, x) -> bool:
        return 0.0 <= float(x) <= 1.0

    def cell_of(self, x):
        """Index of the grid cell containing ``x`` (the last cell is closed)."""
        idx = np.floor(np.asarray(x, dtype=float) * self.M).astype(np.int64)
        return np.clip(idx, 0, self.M - 1)

    def to_dict(self) -> dict:
        return {"kind": "interval", "grid": self.M}


Space = FiniteSpace | UnitInterval


def space_from_dict(d: dict) -> Space:
    if d.get("kind") == "finite":
        return FiniteSpace(int(d["K"]), d.get("locations"))
    if d.get("kind") == "interval":
        return UnitInterval(int(d.get("grid", DEFAULT_GRID)))
    raise ValueError(f"unknown space kind {d.get('kind')!r}")


# ---------------------------------------------------------------------------
# measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MeasureRepr:
    """A probability measure as exact atoms plus a gridded density.

    On a finite space the atoms are the labels themselves (one per label, in
    label order) and ``density`` is empty.  On the interval, atoms are sorted
    by location and ``density`` holds ``M`` cell averages w.r.t. Lebesgue
    measure, so a cell carries mass ``density[j] / M``.
    """

    space: Space
    atom_locs: np.ndarray
    atom_masses: np.ndarray
    density: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        locs = np.asarray(self.atom_locs, dtype=float).ravel()
        masses = np.asarray(self.atom_masses, dtype=float).ravel()
        dens = np.asarray(self.density, dtype=float).ravel()
        if locs.shape != masses.shape:
            raise ValueError("atom locations and masses differ in length")
        if isinstance(self.space, FiniteSpace):
            if dens.size:
                raise ValueError("finite-space measures carry no density part")
            if locs.size != self.space.K or np.any(locs != np.arange(self.space.K)):
                raise ValueError("finite-space measures need one atom per label")
        else:
            if dens.size != self.space.M:
                raise ValueError(f"density must have {self.space.M} cells, got {dens.size}")
            if locs.size and (locs.min() < 0.0 or locs.max() > 1.0):
                raise ValueError("atom locations must lie in [0, 1]")
            order = np.argsort(locs, kind="stable")
            locs, masses = locs[order], masses[order]
            if np.any(np.diff(locs) == 0.0):
                raise ValueError("atom locations must be distinct")
        if np.any(~np.isfinite(masses)) or np.any(~np.isfinite(dens)):
            raise ValueError("masses and densities must be finite")
        if np.any(masses < 0.0) or np.any(dens < 0.0):
            raise ValueError("masses and densities must be nonnegative")
        total = math.fsum(masses) + (math.fsum(dens) / self.space.M if dens.size else 0.0)
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"total mass {total!r} differs from 1 by more than {MASS_TOL}")
        for name, arr in (("atom_locs", locs), ("atom_masses", masses), ("density", dens)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    # constructors ---------------------------------------------------------

    @classmethod
    def from_pmf(cls, pmf, space: FiniteSpace | None = None) -> "MeasureRepr":
        p = np.asarray(pmf, dtype=float)
        space = space or FiniteSpace(p.size)
        return cls(space, np.arange(space.K, dtype=float), p)

    @classmethod
    def uniform(cls, space: Space | None = None) -> "MeasureRepr":
        """The base measure: Lebesgue on the interval, uniform pmf on labels."""
        space = space or UnitInterval()
        if isinstance(space, FiniteSpace):
            return cls.from_pmf(np.full(space.K, 1.0 / space.K), space)
        return cls(space, np.zeros(0), np.zeros(0), np.ones(space.M))

    @classmethod
    def dirac(cls, x, space: Space | None = None) -> "MeasureRepr":
        space = space or UnitInterval()
        if isinstance(space, FiniteSpace):
            p = np.zeros(space.K)
            p[int(x)] = 1.0
            return cls.from_pmf(p, space)
        return cls(space, [float(x)], [1.0], np.zeros(space.M))

    @classmethod
    def from_parts(cls, space: UnitInterval, atoms=(), density=None) -> "MeasureRepr":
        """Interval measure from ``[(loc, mass), ...]`` and cell averages."""
        atoms = list(atoms)
        locs = [float(a[0]) for a in atoms]
        masses = [float(a[1]) for a in atoms]
        dens = np.zeros(space.M) if density is None else np.asarray(density, dtype=float)
        return cls(space, locs, masses, dens)

    # views ----------------------------------------------------------------

    @property
    def is_finite(self) -> bool:
        return isinstance(self.space, FiniteSpace)

    @property
    def pmf(self) -> np.ndarray:
        if not self.is_finite:
            raise TypeError("pmf is only defined on a finite space")
        return self.atom_masses

    @property
    def cell_masses(self) -> np.ndarray:
        if self.is_finite:
            return np.zeros(0)
        return self.density / self.space.M

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return [(float(a), float(m)) for a, m in zip(self.atom_locs, self.atom_masses) if m > 0]

    def total_mass(self) -> float:
        return math.fsum(self.atom_masses) + math.fsum(self.cell_masses)

    def atom_mass_at(self, x) -> float:
        hit = np.nonzero(self.atom_locs == float(x))[0]
        return float(self.atom_masses[hit[0]]) if hit.size else 0.0

    def cdf(self, x, side: str = "right") -> np.ndarray:
        """CDF at ``x``; ``side='left'`` gives the left limit ``P(X < x)``.

        Finite-space measures are read through the label embedding.
        """
        x = np.asarray(x, dtype=float)
        if self.is_finite:
            locs = self.space.coords
            order = np.argsort(locs)
            cum = np.concatenate([[0.0], np.cumsum(self.atom_masses[order])])
            return cum[np.searchsorted(locs[order], x, side=side)]
        cum_atoms = np.concatenate([[0.0], np.cumsum(self.atom_masses)])
        out = cum_atoms[np.searchsorted(self.atom_locs, x, side=side)]
        M = self.space.M
        cum_cells = np.concatenate([[0.0], np.cumsum(self.cell_masses)])
        pos = np.clip(x, 0.0, 1.0) * M
        j = np.clip(np.floor(pos).astype(np.int64), 0, M - 1)
        return out + cum_cells[j] + (pos - j) * self.cell_masses[j]

    def mean(self) -> float:
        x, wts = quadrature_nodes(self)
        if self.is_finite:
            x = self.space.coords
        return float(np.dot(x, wts))

    # serialization ----------------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "atoms": [[float(a), float(m)] for a, m in zip(self.atom_locs, self.atom_masses)],
            "density": [float(v) for v in self.density],
            "grid": 0 if self.is_finite else self.space.M,
        }
        if self.is_finite:
            d["space"] = self.space.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MeasureRepr":
        atoms = d.get("atoms", [])
        if int(d.get("grid", 0)) == 0:
            space = space_from_dict(d["space"]) if "space" in d else FiniteSpace(len(atoms))
            pmf = np.zeros(space.K)
            for loc, mass in atoms:
                pmf[int(loc)] = mass
            return cls.from_pmf(pmf, space)
        space = UnitInterval(int(d["grid"]))
        return cls.from_parts(space, atoms, d["density"])

    @classmethod
    def from_json(cls, text: str) -> "MeasureRepr":
        return cls.from_dict(json.loads(text))

    def write_cdf_csv(self, path) -> None:
        """CDF table for plotting: ``x,cdf`` rows (atoms produce two rows)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.is_finite:
                w.writerow(["label", "x", "cdf"])
                locs = self.space.coords
                for k in np.argsort(locs, kind="stable"):
                    w.writerow([int(k), repr(float(locs[k])), repr(float(self.cdf(locs[k])))])
                return
            w.writerow(["x", "cdf"])
            pts = np.union1d(self.space.edges, self.atom_locs)
            for x in pts:
                left, right = float(self.cdf(x, "left")), float(self.cdf(x))
                if left != right:
                    w.writerow([repr(float(x)), repr(left)])
                w.writerow([repr(float(x)), repr(right)])

    def __repr__(self):
        if self.is_finite:
            return f"MeasureRepr(pmf={np.array2string(self.pmf, precision=6)})"
        return (f"MeasureRepr(grid={self.space.M}, atoms={self.atoms}, "
                f"density_mass={math.fsum(self.cell_masses):.6g})")


def quadrature_nodes(q: MeasureRepr) -> tuple[np.ndarray, np.ndarray]:
    """Points and weights representing ``q`` for expectations of smooth functions.

    Atoms contribute themselves; each density cell contributes 8 Gauss-Legendre
    nodes carrying the cell's mass.  For finite spaces the points are labels.
    """
    if q.is_finite:
        return np.arange(q.space.K, dtype=float), np.asarray(q.atom_masses)
    M = q.space.M
    h = 1.0 / M
    left = np.arange(M) * h
    nodes = (left[:, None] + 0.5 * h * (_GL_X[None, :] + 1.0)).ravel()
    wts = (q.cell_masses[:, None] * 0.5 * _GL_W[None, :]).ravel()
    keep = wts > 0
    return (np.concatenate([q.atom_locs, nodes[keep]]),
            np.concatenate([q.atom_masses, wts[keep]]))


def expectation(f: Callable, q: MeasureRepr) -> float:
    """``<f, q>`` evaluated on the representation of ``q``."""
    x, wts = quadrature_nodes(q)
    return math.fsum(np.asarray(f(x), dtype=float) * wts)


def cell_averages(fn: Callable, space: UnitInterval, singularity: float | None = None) -> np.ndarray:
    """Cell averages of ``fn`` on the grid of ``space``.

    Cells are integrated with 16-point Gauss-Legendre; the cells within two of
    a declared (integrable) singularity use adaptive quadrature split at it.
    """
    M = space.M
    h = 1.0 / M
    left = np.arange(M) * h
    nodes = left[:, None] + 0.5 * h * (_GL16_X[None, :] + 1.0)
    vals = np.asarray(fn(nodes.ravel()), dtype=float).reshape(M, -1)
    special = np.zeros(M, dtype=bool)
    if singularity is not None:
        j0 = int(space.cell_of(singularity))
        special[max(0, j0 - 2): min(M, j0 + 3)] = True
        vals[special] = 0.0
    out = 0.5 * vals @ _GL16_W
    for j in np.nonzero(special)[0]:
        a, b = left[j], left[j] + h
        pts = [singularity] if a < singularity < b else None
        scalar = lambda t: float(fn(np.array([t]))[0])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IntegrationWarning)
            val, _ = quad(scalar, a, b, points=pts, epsabs=1e-15, epsrel=1e-12, limit=200)
        out[j] = val / h
    return out


def density_measure(fn: Callable, space: UnitInterval, atoms=(), singularity=None) -> MeasureRepr:
    """Measure with Lebesgue density ``fn`` (gridded) plus the given atoms."""
    return MeasureRepr.from_parts(space, atoms, cell_averages(fn, space, singularity))


# ---------------------------------------------------------------------------
# fitness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerDistance:
    """``phi(x) = |x - x_o| ** p`` on the interval; unique minimizer ``x_o``."""

    x_o: float
    p: float

    def __post_init__(self):
        if not 0.0 <= self.x_o <= 1.0:
            raise ValueError("x_o must lie in [0, 1]")
        if not self.p > 0:
            raise ValueError("p must be positive")

    space_kind = "interval"

    def __call__(self, x):
        return np.abs(np.asarray(x, dtype=float) - self.x_o) ** self.p

    @property
    def minimizer(self) -> float:
        return self.x_o

    @property
    def minimum(self) -> float:
        return 0.0

    @property
    def maximum(self) -> float:
        return max(self.x_o, 1.0 - self.x_o) ** self.p

    def to_dict(self):
        return {"kind": "power", "x_o": self.x_o, "p": self.p}


@dataclass(frozen=True)
class FiniteTable:
    """``phi(k) = values[k]`` on labels."""

    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals or any(not (math.isfinite(v) and v >= 0) for v in vals):
            raise ValueError("phi values must be finite and nonnegative")
        object.__setattr__(self, "values", vals)

    space_kind = "finite"

    def __call__(self, x):
        idx = np.asarray(x).astype(np.int64)
        return np.asarray(self.values)[idx]

    @property
    def minimizer(self) -> int | None:
        """Unique minimizing label, or None on ties."""
        v = np.asarray(self.values)
        hits = np.nonzero(v == v.min())[0]
        return int(hits[0]) if hits.size == 1 else None

    @property
    def minimum(self) -> float:
        return min(self.values)

    @property
    def maximum(self) -> float:
        return max(self.values)

    def to_dict(self):
        return {"kind": "table", "values": list(self.values)}


@dataclass(frozen=True)
class TabulatedInterval:
    """Piecewise-linear ``phi`` through ``(x[i], values[i])`` on ``[0, 1]``."""

    x: tuple
    values: tuple

    def __post_init__(self):
        xs = tuple(float(v) for v in self.x)
        vs = tuple(float(v) for v in self.values)
        if len(xs) != len(vs) or len(xs) < 2:
            raise ValueError("need at least two (x, value) pairs of equal length")
        if xs[0] != 0.0 or xs[-1] != 1.0 or any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("x must increase strictly from 0 to 1")
        if any(not (math.isfinite(v) and v >= 0) for v in vs):
            raise ValueError("phi values must be finite and nonnegative")
        object.__setattr__(self, "x", xs)
        object.__setattr__(self, "values", vs)

    space_kind = "interval"

    def __call__(self, x):
        return np.interp(np.asarray(x, dtype=float), self.x, self.values)

    @property
    def minimizer(self) -> float | None:
        v = np.asarray(self.values)
        hits = np.nonzero(v == v.min())[0]
        return float(self.x[hits[0]]) if hits.size == 1 else None

    @property
    def minimum(self) -> float:
        return min(self.values)

    @property
    def maximum(self) -> float:
        return max(self.values)

    @property
    def is_constant(self) -> bool:
        return min(self.values) == max(self.values)

    def to_dict(self):
        return {"kind": "tabulated", "x": list(self.x), "values": list(self.values)}


PhiSpec = PowerDistance | FiniteTable | TabulatedInterval


def phi_from_dict(d: dict) -> PhiSpec:
    kind = d.get("kind")
    if kind == "power":
        return PowerDistance(float(d["x_o"]), float(d["p"]))
    if kind == "table":
        return FiniteTable(tuple(d["values"]))
    if kind == "tabulated":
        return TabulatedInterval(tuple(d["x"]), tuple(d["values"]))
    if kind == "constant":
        return TabulatedInterval((0.0, 1.0), (float(d["value"]),) * 2)
    raise ValueError(f"unknown phi kind {kind!r}")


def phi_is_constant(phi: PhiSpec) -> bool:
    return phi.minimum == phi.maximum


@dataclass(frozen=True)
class FitnessSpec:
    """Selection strength ``phi`` scaled by population size: ``w_n = exp(-phi / n**lam)``."""

    phi: PhiSpec
    lam: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lambda must be a finite nonnegative number")

    def scale(self, n: int) -> float:
        return 1.0 if self.lam == 0 else float(n) ** (-self.lam)

    def weights(self, n: int, x) -> np.ndarray:
        return np.exp(-self.phi(x) * self.scale(n))

    def to_dict(self):
        return {"lambda": self.lam, "phi": self.phi.to_dict()}


def weight_at(fit: FitnessSpec, n: int, x) -> float:
    """``w_n(x) = exp(-phi(x) / n**lambda)``."""
    if n < 1:
        raise ValueError("n must be a positive integer")
    return float(fit.weights(n, x))


def check_phi_space(phi: PhiSpec, space: Space) -> None:
    if phi.space_kind != space.kind:
        raise ValueError(f"{type(phi).__name__} is defined on the {phi.space_kind} space, "
                         f"not on a {space.kind} space")
    if isinstance(space, FiniteSpace) and len(phi.values) != space.K:
        raise ValueError(f"phi table has {len(phi.values)} entries for K={space.K}")


# ---------------------------------------------------------------------------
# empirical measures
# ---------------------------------------------------------------------------


def empirical_measure(pop: Sequence, space: Space | None = None) -> MeasureRepr:
    """Empirical measure ``(1/n) sum_i delta_{x_i}`` of a population."""
    values = np.asarray(pop)
    if values.size == 0:
        raise ValueError("empirical measure of an empty population")
    space = space or UnitInterval()
    n = values.size
    if isinstance(space, FiniteSpace):
        labels = values.astype(np.int64)
        if np.any(labels != values) or labels.min() < 0 or labels.max() >= space.K:
            raise ValueError("population contains labels outside the space")
        return MeasureRepr.from_pmf(np.bincount(labels, minlength=space.K) / n, space)
    locs, counts = np.unique(values.astype(float), return_counts=True)
    return MeasureRepr(space, locs, counts / n, np.zeros(space.M))


# ---------------------------------------------------------------------------
# integration against a base measure
# ---------------------------------------------------------------------------


def _wynn_epsilon(s: Sequence[float]) -> float:
    """Limit estimate of a sequence via Wynn's epsilon algorithm."""
    prev = [0.0] * (len(s) + 1)
    cur = [float(v) for v in s]
    best = cur[-1]
    k = 0
    while len(cur) > 1:
        nxt = []
        for j in range(len(cur) - 1):
            d = cur[j + 1] - cur[j]
            if d == 0.0:
                return best if k % 2 else cur[j + 1]
            nxt.append(prev[j + 1] + 1.0 / d)
        prev, cur = cur, nxt
        k += 1
        if k % 2 == 0:
            if not all(math.isfinite(v) for v in cur):
                break
            best = cur[-1]
    return best


def _quad(f, a, b, tol, limit=200, points=None):
    if b <= a:
        return 0.0, 0.0
    out = quad(f, a, b, epsabs=0.0, epsrel=tol, limit=limit, points=points, full_output=1)
    if (len(out) > 3 and "divergent" in out[3]) or out[0] < 0:
        raise QuadratureError(f"integral over [{a!r}, {b!r}] looks divergent", (out[0],))
    return out[0], out[1]


def truncation_sums(f: Callable, singularity: float, *, max_refinements: int = 30,
                    tol: float = 1e-13, eps0: float | None = None):
    """Yield the partial integrals over ``{|x - s| > eps_k}`` with ``eps_k = eps0 / 2**k``.

    The integrand must be nonnegative, so the sums are nondecreasing.
    """
    s = float(singularity)
    if eps0 is None:
        eps0 = 0.5 * max(s, 1.0 - s)
        eps0 = min(eps0, 0.1)
    scalar = lambda t: float(f(np.array([t]))[0])
    total = _quad(scalar, 0.0, max(s - eps0, 0.0), tol)[0] + _quad(scalar, min(s + eps0, 1.0), 1.0, tol)[0]
    yield total
    eps = eps0
    for _ in range(max_refinements):
        half = 0.5 * eps
        shell = 0.0
        if s > 0.0:
            shell += _quad(scalar, max(s - eps, 0.0), max(s - half, 0.0), tol)[0]
        if s < 1.0:
            shell += _quad(scalar, min(s + half, 1.0), min(s + eps, 1.0), tol)[0]
        total += shell
        eps = half
        yield total


def integrate(f: Callable, base: MeasureRepr, singularity=None, *, cap: float = 1e12,
              tol: float = 1e-10, max_refinements: int = 30, points=None) -> float:
    """Integrate a nonnegative ``f`` against ``base``; may return ``inf``.

    On the interval the density part of ``base`` must be constant (the base
    measures here are Lebesgue).  With a declared singular point the integral
    is the limit of nested truncations ``{|x - s| > eps_k}``, accelerated with
    Wynn's epsilon algorithm; it is ``inf`` once the truncated values exceed
    ``cap`` or stop shrinking their increments.  ``points`` marks interior
    locations where a bounded integrand is sharply peaked.
    """
    if base.is_finite:
        p = base.pmf
        support = np.nonzero(p > 0)[0]
        vals = np.asarray(f(support.astype(float)), dtype=float)
        if np.any(vals < 0):
            raise ValueError("integrand must be nonnegative")
        if np.any(np.isinf(vals)):
            return math.inf
        return math.fsum(vals * p[support])

    atom_part = 0.0
    if base.atom_locs.size:
        vals = np.asarray(f(base.atom_locs), dtype=float)
        if np.any(np.isinf(vals[base.atom_masses > 0])):
            return math.inf
        atom_part = math.fsum(vals * base.atom_masses)
    dens = base.density
    if not np.all(dens == dens[0]):
        raise ValueError("integrate supports constant (Lebesgue) densities on the interval")
    level = float(dens[0])
    if level == 0.0:
        return atom_part

    if singularity is None:
        scalar = lambda t: float(f(np.array([t]))[0])
        last = None
        limit = 100
        for _ in range(max_refinements):
            val, err = _quad(scalar, 0.0, 1.0, tol, limit=limit, points=points)
            if err <= tol * max(abs(val), 1e-300) or (last is not None and abs(val - last) <= tol * abs(val)):
                return atom_part + level * val
            last = val
            limit *= 2
        raise QuadratureError("quadrature did not converge", (last, val))

    sums, estimates, increments = [], [], []
    for k, partial in enumerate(truncation_sums(f, singularity, max_refinements=max_refinements)):
        sums.append(partial)
        if partial > cap:
            return math.inf
        if k >= 1:
            increments.append(sums[-1] - sums[-2])
        if len(increments) >= 4 and all(increments[-i] >= (1.0 - 1e-3) * increments[-i - 1] > 0
                                        for i in (1, 2, 3)):
            return math.inf
        if k >= 2:
            est = max(_wynn_epsilon(sums[-12:]), partial)
            estimates.append(est)
            if len(estimates) >= 3 and all(abs(estimates[-i] - estimates[-i - 1]) <= tol * abs(estimates[-1])
                                           for i in (1, 2)):
                return atom_part + level * estimates[-1]
    if increments and increments[-1] == 0.0:
        return atom_part + level * sums[-1]
    raise QuadratureError("singular integral did not converge after "
                          f"{max_refinements} refinements", estimates[-2:])


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------


def _same_space(a: MeasureRepr, b: MeasureRepr) -> None:
    if a.space != b.space:
        raise ValueError(f"measures live on different spaces: {a.space} vs {b.space}")


def tv_distance(a: MeasureRepr, b: MeasureRepr) -> float:
    """Total variation distance ``sup_A |a(A) - b(A)|``."""
    _same_space(a, b)
    if a.is_finite:
        return 0.5 * math.fsum(np.abs(a.pmf - b.pmf))
    locs = np.union1d(a.atom_locs, b.atom_locs)
    ma = np.zeros(locs.size)
    mb = np.zeros(locs.size)
    ma[np.searchsorted(locs, a.atom_locs)] = a.atom_masses
    mb[np.searchsorted(locs, b.atom_locs)] = b.atom_masses
    return min(1.0, 0.5 * (math.fsum(np.abs(ma - mb)) + math.fsum(np.abs(a.cell_masses - b.cell_masses))))


def _cdf_breakpoints(a: MeasureRepr, b: MeasureRepr) -> np.ndarray:
    if a.is_finite:
        return np.union1d(a.space.coords, [0.0, 1.0])
    pts = np.union1d(a.atom_locs, b.atom_locs)
    if np.any(a.density > 0) or np.any(b.density > 0):
        pts = np.union1d(pts, a.space.edges)
    return np.union1d(pts, [0.0, 1.0])


def wasserstein1(a: MeasureRepr, b: MeasureRepr) -> float:
    """``W1 = int_0^1 |F_a - F_b| dx``, exact for the atom + gridded-density form.

    Finite-space measures are compared through the label embedding.
    """
    _same_space(a, b)
    pts = _cdf_breakpoints(a, b)
    # both CDFs are linear on each (pts[i], pts[i+1]) when taken as right limits
    fa0, fb0 = a.cdf(pts[:-1]), b.cdf(pts[:-1])
    fa1, fb1 = a.cdf(pts[1:], "left"), b.cdf(pts[1:], "left")
    d0, d1 = fa0 - fb0, fa1 - fb1
    width = np.diff(pts)
    same = d0 * d1 >= 0
    area = np.where(same, 0.5 * width * np.abs(d0 + d1), 0.0)
    cross = ~same
    if np.any(cross):
        t = np.abs(d0[cross]) / (np.abs(d0[cross]) + np.abs(d1[cross]))
        area[cross] = 0.5 * width[cross] * (t * np.abs(d0[cross]) + (1 - t) * np.abs(d1[cross]))
    return float(math.fsum(area))


def ks_statistic(a: MeasureRepr, b: MeasureRepr) -> float:
    """``sup_x |F_a(x) - F_b(x)|`` (left and right limits at every breakpoint)."""
    _same_space(a, b)
    pts = _cdf_breakpoints(a, b)
    right = np.abs(a.cdf(pts) - b.cdf(pts))
    left = np.abs(a.cdf(pts, "left") - b.cdf(pts, "left"))
    return float(max(right.max(), left.max()))


def ks_samples(values, b: MeasureRepr) -> float:
    """KS statistic between the empirical law of ``values`` and ``b`` (interval)."""
    x = np.sort(np.asarray(values, dtype=float).ravel())
    n = x.size
    locs, last = np.unique(x, return_index=False, return_counts=True)
    emp_right = np.cumsum(last) / n
    emp_left = emp_right - last / n
    d = max(np.max(np.abs(emp_right - b.cdf(locs))), np.max(np.abs(emp_left - b.cdf(locs, "left"))))
    # between data points the empirical CDF is flat while F_b may move
    edges = b.space.edges if not b.is_finite else np.zeros(0)
    pts = np.union1d(edges, b.atom_locs)
    if pts.size:
        k = np.searchsorted(locs, pts, side="right")
        emp = np.concatenate([[0.0], emp_right])[k]
        k_left = np.searchsorted(locs, pts, side="left")
        emp_l = np.concatenate([[0.0], emp_right])[k_left]
        d = max(d, np.max(np.abs(emp - b.cdf(pts))), np.max(np.abs(emp_l - b.cdf(pts, "left"))))
    return float(d)


def relative_entropy(a: MeasureRepr, b: MeasureRepr) -> float:
    """``D(a || b) = int ln(da/db) da``; ``inf`` unless ``a << b``."""
    _same_space(a, b)
    if a.is_finite:
        pa, pb = a.pmf, b.pmf
        supp = pa > 0
        if np.any(pb[supp] == 0):
            return math.inf
        return max(0.0, math.fsum(pa[supp] * np.log(pa[supp] / pb[supp])))
    terms = []
    for loc, mass in zip(a.atom_locs, a.atom_masses):
        if mass == 0:
            continue
        mb = b.atom_mass_at(loc)
        if mb == 0:
            return math.inf
        terms.append(mass * math.log(mass / mb))
    ca, cb = a.cell_masses, b.cell_masses
    supp = ca > 0
    if np.any(cb[supp] == 0):
        return math.inf
    terms.extend(ca[supp] * np.log(ca[supp] / cb[supp]))
    return max(0.0, math.fsum(terms))
