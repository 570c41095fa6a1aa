"""Command-line entry point: ``moranlimit {simulate,limit,balance,sweep,oracle} --config FILE``.

Exit codes: 0 on success, 2 for an invalid configuration, 1 for any runtime
failure.  Output files carry no timestamps; those go to ``<prefix>.log``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from .chain import run_chain
from .config import ConfigError, RunConfig, load_config, require_finite
from .limits import HypothesisError
from .measures import UnitInterval, ks_samples
from .verify import (cell_distance, detailed_balance_residual, exact_counts_law, predicted_limit,
                     sweep_convergence)

log = logging.getLogger("moranlimit")


def _dump_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _setup_log(cfg: RunConfig) -> logging.Handler:
    handler = logging.FileHandler(cfg.out_dir / f"{cfg.output['prefix']}.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    return handler


def _limit_summary(cfg: RunConfig, ss) -> dict:
    """Distance of the samples to the predicted limit, when a limit result applies."""
    try:
        limit = predicted_limit(cfg.prior, cfg.fit)
    except HypothesisError as exc:
        return {"limit_regime": None, "limit_note": str(exc)}
    out = {"limit_regime": limit.regime}
    if isinstance(cfg.space, UnitInterval):
        out["ks_to_limit"] = ks_samples(ss.populations.ravel(), limit.measure)
    else:
        out["w1_to_limit"] = cell_distance(ss, limit, "W1")
    return out


def cmd_simulate(cfg: RunConfig) -> None:
    if cfg.chain is None:
        raise ConfigError("simulate needs a 'chain' section", None, cfg.path)
    log.info("simulate n=%d replicas=%d steps=%d", cfg.chain.n, cfg.chain.replicas, cfg.chain.steps)
    ss = run_chain(cfg.chain, cfg.prior, cfg.fit)
    ss.write_csv(cfg.out_path("samples.csv"))
    extra = {"seed": cfg.seed, "prior": cfg.prior.to_dict(), "fitness": cfg.fit.to_dict()}
    extra.update(_limit_summary(cfg, ss))
    ss.write_json(cfg.out_path("summary.json"), extra)


def cmd_limit(cfg: RunConfig) -> None:
    result = predicted_limit(cfg.prior, cfg.fit)
    log.info("limit regime %s", result.regime)
    _dump_json(cfg.out_path("limit.json"), result.to_dict())
    result.measure.write_cdf_csv(cfg.out_path("limit_cdf.csv"))


def cmd_balance(cfg: RunConfig) -> None:
    space = require_finite(cfg, "balance")
    n = cfg.balance["n"]
    report = {"n": n, "residuals": {}}
    for kernel in cfg.balance["kernels"]:
        report["residuals"][kernel] = detailed_balance_residual(kernel, space, n, cfg.prior, cfg.fit)
        log.info("balance %s residual %.3e", kernel, report["residuals"][kernel])
    report["max_residual"] = max(report["residuals"].values())
    _dump_json(cfg.out_path("balance.json"), report)


def cmd_sweep(cfg: RunConfig) -> None:
    sw = cfg.sweep
    n_jobs = cfg.chain.n_jobs if cfg.chain is not None else None
    kernel = cfg.chain.kernel if cfg.chain is not None else "tournament"
    table = sweep_convergence(sw["lambdas"], sw["ns"], cfg.prior, cfg.fit.phi, sw["metric"],
                              seed=cfg.seed, replicas=sw["replicas"],
                              samples_per_replica=sw["samples_per_replica"], kernel=kernel,
                              burn_in=sw["burn_in"], n_jobs=n_jobs)
    table.write_csv(cfg.out_path("sweep.csv"))
    with open(cfg.out_path("sweep.json"), "w", encoding="utf-8") as fh:
        fh.write(table.to_json() + "\n")


def cmd_oracle(cfg: RunConfig) -> None:
    space = require_finite(cfg, "oracle")
    n = cfg.oracle.get("n")
    if n is None:
        raise ConfigError("oracle needs 'oracle.n' or 'chain.n'", None, cfg.path)
    cv, pmf = exact_counts_law(space, cfg.prior, cfg.fit, n)
    with open(cfg.out_path("oracle.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"n_{k}" for k in range(space.K)] + ["probability"])
        for v, p in zip(cv, pmf):
            w.writerow([int(c) for c in v] + [repr(float(p))])
    _dump_json(cfg.out_path("oracle.json"),
               {"n": n, "count_vectors": cv.tolist(), "pmf": [float(p) for p in pmf],
                "total": float(np.sum(pmf))})


COMMANDS = {"simulate": cmd_simulate, "limit": cmd_limit, "balance": cmd_balance,
            "sweep": cmd_sweep, "oracle": cmd_oracle}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="moranlimit", description="Moran-model simulation and limit laws")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON configuration file")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--seed", type=int, help="top-level seed (overrides the config)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed)
        if args.out:
            cfg.output["dir"] = args.out
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    handler = None
    try:
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        handler = _setup_log(cfg)
        log.info("command %s config %s seed %d", args.command, args.config, cfg.seed)
        COMMANDS[args.command](cfg)
        log.info("done")
        return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures map to exit code 1
        log.exception("failed")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    finally:
        if handler is not None:
            log.removeHandler(handler)
            handler.close()


if __name__ == "__main__":
    sys.exit(main())
