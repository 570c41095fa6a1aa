"""JSON run configuration: parsing, defaults and validation.

A config is one JSON object.  ``seed`` is mandatory (the command line may
override it with ``--seed``); every other field has the default listed in
``DEFAULTS``.  Validation failures raise :class:`ConfigError` carrying the
1-based line of the offending key, so the CLI can point at it.

Schema (defaults in brackets)::

    seed       int, required
    space      {"kind": "finite", "K": int, "locations": [..] [null]}
               | {"kind": "interval", "grid": int [4096]}
    prior      {"kind": "dp", "c": float, "mass_rule": "scaled"|"fixed" ["scaled"],
                "base": "uniform" | [pmf ...] ["uniform"]}
               | {"kind": "mixture", "weights": [..], "components": [[..], ..]}
    fitness    {"lambda": float [0.0],
                "phi": {"kind": "power", "x_o": float, "p": float}
                     | {"kind": "table", "values": [..]}
                     | {"kind": "tabulated", "x": [..], "values": [..]}
                     | {"kind": "constant", "value": float}}
    chain      {"n": int, "steps": int [burn_in + thin], "burn_in": int [ceil(20 n ln n)],
                "thin": int [n], "kernel": "tournament"|"inverse" ["tournament"],
                "replicas": int [1], "block_size": int [65536], "n_jobs": int [all cores]}
    output     {"dir": str ["out"], "prefix": str ["run"]}
    sweep      {"lambdas": [..], "ns": [..], "metric": "TV"|"W1"|"KS",
                "replicas": int [100], "samples_per_replica": int [1], "burn_in": int [null]}
    balance    {"n": int [2], "kernels": [..] [both]}
    oracle     {"n": int [chain.n]}
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .breeding import DPPrior, FiniteMixture
from .chain import ChainConfig
from .measures import (FiniteSpace, FitnessSpec, MeasureRepr, check_phi_space, phi_from_dict,
                       space_from_dict)
from .selection import KERNELS

DEFAULTS = {
    "space": {"kind": "interval", "grid": 4096},
    "prior": {"kind": "dp", "mass_rule": "scaled", "base": "uniform"},
    "fitness": {"lambda": 0.0},
    "chain": {"steps": None, "burn_in": None, "thin": None, "kernel": "tournament",
              "replicas": 1, "block_size": 65536, "n_jobs": None},
    "output": {"dir": "out", "prefix": "run"},
    "sweep": {"replicas": 100, "samples_per_replica": 1, "burn_in": None},
    "balance": {"n": 2, "kernels": sorted(KERNELS)},
    "oracle": {},
}

SECTIONS = ("seed", "space", "prior", "fitness", "chain", "output", "sweep", "balance", "oracle",
            "description")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is the 1-based line of the culprit, if known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = f"{path or '<config>'}:{line}" if line else (path or "<config>")
        super().__init__(f"{where}: {message}")
        self.message = message


def _line_of(text: str, *keys: str) -> int | None:
    """Line of the last key in ``keys``, searching each key after the previous one."""
    pos = 0
    for key in keys:
        m = re.compile(r'"%s"\s*:' % re.escape(key)).search(text, pos)
        if m is None:
            return text.count("\n", 0, pos) + 1 if pos else None
        pos = m.start()
    return text.count("\n", 0, pos) + 1


@dataclass
class RunConfig:
    """A validated configuration with model objects already built."""

    raw: dict
    seed: int
    space: object
    prior: object
    fit: FitnessSpec
    chain: ChainConfig | None
    output: dict
    sweep: dict
    balance: dict
    oracle: dict
    text: str = ""
    path: str | None = None

    @property
    def out_dir(self) -> Path:
        return Path(self.output["dir"])

    def out_path(self, suffix: str) -> Path:
        return self.out_dir / f"{self.output['prefix']}_{suffix}"


class _Checker:
    def __init__(self, text: str, path: str | None):
        self.text = text
        self.path = path

    def fail(self, message: str, *keys: str):
        raise ConfigError(message, _line_of(self.text, *keys) if keys else None, self.path)

    def section(self, data: dict, name: str) -> dict:
        value = data.get(name, {})
        if not isinstance(value, dict):
            self.fail(f"section '{name}' must be an object", name)
        merged = dict(DEFAULTS.get(name, {}))
        merged.update(value)
        return merged

    def integer(self, sec: dict, name: str, key: str, minimum: int = 0, required=False):
        v = sec.get(key)
        if v is None:
            if required:
                self.fail(f"'{name}.{key}' is required", name)
            return None
        if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
            self.fail(f"'{name}.{key}' must be an integer >= {minimum}", name, key)
        return v

    def number(self, sec: dict, name: str, key: str, required=True):
        v = sec.get(key)
        if v is None:
            if required:
                self.fail(f"'{name}.{key}' is required", name)
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.fail(f"'{name}.{key}' must be a finite number", name, key)
        return float(v)


def _build_prior(ck: _Checker, sec: dict, space):
    kind = sec.get("kind")
    if kind == "dp":
        c = ck.number(sec, "prior", "c")
        base = sec.get("base")
        if base == "uniform":
            base_m = MeasureRepr.uniform(space)
        elif isinstance(base, list) and isinstance(space, FiniteSpace):
            if len(base) != space.K:
                ck.fail("'prior.base' must have one entry per label", "prior", "base")
            pmf = np.asarray(base, dtype=float)
            if np.any(pmf < 0) or pmf.sum() <= 0:
                ck.fail("'prior.base' must be a nonnegative vector with positive sum", "prior", "base")
            base_m = MeasureRepr.from_pmf(pmf / pmf.sum(), space)
        else:
            ck.fail("'prior.base' must be \"uniform\" or a pmf list on a finite space", "prior", "base")
        try:
            return DPPrior(c, base_m, sec.get("mass_rule"))
        except ValueError as exc:
            ck.fail(str(exc), "prior")
    if kind == "mixture":
        if not isinstance(space, FiniteSpace):
            ck.fail("mixture priors need a finite space", "prior", "kind")
        try:
            return FiniteMixture(sec.get("weights"), sec.get("components"), space)
        except (ValueError, TypeError) as exc:
            ck.fail(f"invalid mixture: {exc}", "prior")
    ck.fail(f"unknown prior kind {kind!r}", "prior")


def parse_config(text: str, path: str | None = None, seed_override: int | None = None) -> RunConfig:
    """Validate a JSON config string and build the model objects."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg} (column {exc.colno})", exc.lineno, path) from None
    ck = _Checker(text, path)
    if not isinstance(data, dict):
        ck.fail("top level must be a JSON object")
    for key in data:
        if key not in SECTIONS:
            ck.fail(f"unknown section '{key}'", key)

    seed = seed_override if seed_override is not None else data.get("seed")
    if seed is None:
        ck.fail("'seed' is required; runs are never seeded from the clock")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        ck.fail("'seed' must be a nonnegative integer", "seed")

    space_sec = ck.section(data, "space")
    try:
        space = space_from_dict(space_sec)
    except (ValueError, KeyError, TypeError) as exc:
        ck.fail(f"invalid space: {exc}", "space")

    prior = _build_prior(ck, ck.section(data, "prior"), space)

    fit_sec = ck.section(data, "fitness")
    lam = ck.number(fit_sec, "fitness", "lambda")
    if lam < 0:
        ck.fail("'fitness.lambda' must be nonnegative", "fitness", "lambda")
    if not isinstance(fit_sec.get("phi"), dict):
        ck.fail("'fitness.phi' is required", "fitness")
    try:
        phi = phi_from_dict(fit_sec["phi"])
        check_phi_space(phi, space)
    except (ValueError, KeyError, TypeError) as exc:
        ck.fail(f"invalid phi: {exc}", "fitness", "phi")
    fit = FitnessSpec(phi, lam)

    chain_sec = ck.section(data, "chain")
    chain = None
    if "chain" in data:
        n = ck.integer(chain_sec, "chain", "n", 1, required=True)
        kw = {k: ck.integer(chain_sec, "chain", k, 0)
              for k in ("steps", "burn_in", "thin", "replicas", "block_size", "n_jobs")}
        if chain_sec.get("kernel") not in KERNELS:
            ck.fail(f"'chain.kernel' must be one of {sorted(KERNELS)}", "chain", "kernel")
        for k in ("replicas", "block_size"):
            if kw[k] is None:
                kw[k] = DEFAULTS["chain"][k]
        try:
            chain = ChainConfig(n=n, kernel=chain_sec["kernel"], seed=seed, **kw)
        except ValueError as exc:
            anchor = "steps" if "steps" in str(exc) or "burn_in" in str(exc) else "n"
            ck.fail(str(exc), "chain", anchor if anchor in data["chain"] else "n")

    output = ck.section(data, "output")
    sweep = ck.section(data, "sweep")
    if "sweep" in data:
        for key in ("lambdas", "ns"):
            if not isinstance(sweep.get(key), list) or not sweep[key]:
                ck.fail(f"'sweep.{key}' must be a nonempty list", "sweep")
        if sweep.get("metric") not in ("TV", "W1", "KS"):
            ck.fail("'sweep.metric' must be TV, W1 or KS", "sweep")
    balance = ck.section(data, "balance")
    if "balance" in data:
        ck.integer(balance, "balance", "n", 1, required=True)
        if any(k not in KERNELS for k in balance["kernels"]):
            ck.fail(f"'balance.kernels' entries must be in {sorted(KERNELS)}", "balance", "kernels")
    oracle = ck.section(data, "oracle")
    if "oracle" in data:
        ck.integer(oracle, "oracle", "n", 1)
    if oracle.get("n") is None and chain is not None:
        oracle["n"] = chain.n
    return RunConfig(data, int(seed), space, prior, fit, chain, output, sweep, balance, oracle,
                     text, path)


def load_config(path, seed_override: int | None = None) -> RunConfig:
    path = str(path)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, path) from None
    return parse_config(text, path, seed_override)


def require_finite(cfg: RunConfig, what: str) -> FiniteSpace:
    if not isinstance(cfg.space, FiniteSpace):
        raise ConfigError(f"{what} needs a finite space", _line_of(cfg.text, "space"), cfg.path)
    return cfg.space


__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "require_finite", "DEFAULTS"]
