"""Command-line experiment runner.

    pairpath <command> --config FILE [--jobs N] [--seed S] [--out PATH]

The config is a flat JSON object (scalars and arrays of scalars). Unknown
keys are rejected. Results are written as CSV with ``#`` metadata lines
(version, seed, config hash, timestamp) followed by a header row.

Exit codes: 0 success, 2 invalid configuration, 3 runtime failure.

Columns per command:

  msd-sweep   alpha,T,n,d,exact_msd,mcmc_msd,mcmc_stderr,ess,acceptance,tilted,seed
  bounds      alpha,T,lower_bound,mcmc_msd,mcmc_stderr,envelope,envelope/T,c_alpha,beta,seed
  verify      check_name,lhs,rhs,margin,stderr,passed,seed
  barp-fit    beta,s,barp_msd,rate,ratio,K,seed
  variational alpha,T,n,value,linear_value,exact_msd_over_dT,iterations,seed
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .bounds import (
    envelope_parameters,
    exp_decay,
    fit_K,
    frozen_K,
    lemma_rate,
    lower_bound_quadratic,
    optimize_variational,
    upper_bound_envelope,
)
from .brownian import PathGrid
from .errors import ConfigInvalidError, PairpathError
from .gaussian_core import spawn_seeds
from .gibbs import SamplerConfig, auto_tilt, exact_msd_quadratic, merge_estimates, run_chain
from .potential import DEFAULT_CERTIFICATES, by_name, certified
from .verify import default_suite

COMMANDS = ("msd-sweep", "bounds", "verify", "barp-fit", "variational")

_CHAIN_KEYS = {"chain_length": 20_000, "burn_in": 2_000, "thin": 1, "proposal_mix": 0.5,
               "adapt": True, "chains": 1, "tilt": "none"}
_POTENTIAL_KEYS = {"potential": "quadratic", "cap": None, "shape": None,
                   "eps": None, "delta": None, "C": None}
_SCHEMA = {
    "msd-sweep": {"alpha_grid": None, "T": 1.0, "n": 64, "d": 3, "mcmc": True,
                  **_CHAIN_KEYS, **_POTENTIAL_KEYS},
    "bounds": {"alpha_grid": None, "T": 4.0, "n": 256, "d": 3, "mcmc": False, "K_fit": None,
               **_CHAIN_KEYS, **_POTENTIAL_KEYS, "potential": "bump"},
    "verify": {"n_samples": 100_000},
    "barp-fit": {"betas": [4, 16, 64, 256], "s_grid": [4, 16, 64], "points_per_block": 32, "d": 3},
    "variational": {"alpha_grid": None, "T": 1.0, "n": 64, "iters": 500},
}
_COMMON = {"command", "seed", "output_path"}

COLUMNS = {
    "msd-sweep": ["alpha", "T", "n", "d", "exact_msd", "mcmc_msd", "mcmc_stderr", "ess",
                  "acceptance", "tilted", "seed"],
    "bounds": ["alpha", "T", "lower_bound", "mcmc_msd", "mcmc_stderr", "envelope", "envelope/T",
               "c_alpha", "beta", "seed"],
    "verify": ["check_name", "lhs", "rhs", "margin", "stderr", "passed", "seed"],
    "barp-fit": ["beta", "s", "barp_msd", "rate", "ratio", "K", "seed"],
    "variational": ["alpha", "T", "n", "value", "linear_value", "exact_msd_over_dT", "iterations",
                    "seed"],
}


def load_config(text: str, command: str, seed: int | None = None) -> dict:
    """Parse and validate a config against the schema of ``command``."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalidError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigInvalidError("config must be a JSON object")
    if command not in COMMANDS:
        raise ConfigInvalidError(f"unknown command {command!r}")
    if raw.get("command", command) != command:
        raise ConfigInvalidError(f"config is for {raw['command']!r}, not {command!r}")
    schema = _SCHEMA[command]
    unknown = sorted(set(raw) - set(schema) - _COMMON)
    if unknown:
        raise ConfigInvalidError(f"unknown config keys: {', '.join(unknown)}")
    for k, v in raw.items():
        if isinstance(v, dict) or (isinstance(v, list) and any(isinstance(e, (list, dict)) for e in v)):
            raise ConfigInvalidError(f"{k}: nested values are not allowed")
    cfg = {**schema, **raw, "command": command}
    cfg["seed"] = int(raw.get("seed", 0))
    env = os.environ.get("PAIRPATH_SEED")
    if env is not None:
        try:
            cfg["seed"] = int(env)
        except ValueError:
            raise ConfigInvalidError(f"PAIRPATH_SEED={env!r} is not an integer") from None
    if seed is not None:
        cfg["seed"] = int(seed)
    if "alpha_grid" in schema and cfg["alpha_grid"] is None:
        raise ConfigInvalidError("alpha_grid is required")
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    def positive(*keys, integer=False):
        for k in keys:
            if k in cfg:
                v = cfg[k]
                if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                    raise ConfigInvalidError(f"{k} must be positive, got {v!r}")
                if integer and int(v) != v:
                    raise ConfigInvalidError(f"{k} must be an integer, got {v!r}")

    positive("T")
    positive("n", "d", "chain_length", "thin", "chains", "n_samples", "points_per_block", "iters",
             integer=True)
    if "burn_in" in cfg and (not isinstance(cfg["burn_in"], int) or cfg["burn_in"] < 0):
        raise ConfigInvalidError("burn_in must be a nonnegative integer")
    if "chain_length" in cfg and cfg["burn_in"] >= cfg["chain_length"]:
        raise ConfigInvalidError("burn_in must be smaller than chain_length")
    if "proposal_mix" in cfg and not 0 < cfg["proposal_mix"] <= 1:
        raise ConfigInvalidError("proposal_mix must lie in (0, 1]")
    if "tilt" in cfg and cfg["tilt"] not in ("none", "auto"):
        raise ConfigInvalidError("tilt must be 'none' or 'auto'")
    for k in ("alpha_grid", "betas", "s_grid"):
        if k not in cfg:
            continue
        grid = cfg[k]
        if not isinstance(grid, list) or not grid:
            raise ConfigInvalidError(f"{k} must be a nonempty list")
        if any(isinstance(a, bool) or not isinstance(a, (int, float)) or a < 0 for a in grid):
            raise ConfigInvalidError(f"{k} entries must be nonnegative numbers")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigInvalidError(f"{k} must be strictly increasing")


def config_hash(cfg: dict) -> str:
    blob = json.dumps({k: v for k, v in cfg.items() if k != "output_path"}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _potential(cfg: dict):
    params = {k: cfg[k] for k in ("cap", "shape") if cfg.get(k) is not None}
    try:
        W = by_name(cfg["potential"], **params)
    except (ValueError, TypeError) as exc:
        raise ConfigInvalidError(str(exc)) from None
    cert = [cfg.get(k) for k in ("eps", "delta", "C")]
    if any(v is None for v in cert):
        default = DEFAULT_CERTIFICATES.get(cfg["potential"])
        if default is None:
            raise ConfigInvalidError(f"potential {cfg['potential']!r} needs eps, delta and C")
        cert = [d if v is None else v for v, d in zip(cert, default)]
    return certified(W, *cert)


def _mcmc(cfg: dict, W, alpha: float, seed: int):
    grid = PathGrid(float(cfg["T"]), int(cfg["n"]), int(cfg["d"]))
    tilt = auto_tilt(grid, W, alpha) if cfg["tilt"] == "auto" else None
    ests = []
    for s in spawn_seeds(seed, int(cfg["chains"])):
        sc = SamplerConfig(grid, W, alpha, cfg["proposal_mix"], int(cfg["chain_length"]),
                           int(cfg["burn_in"]), int(cfg["thin"]), s, bool(cfg["adapt"]), tilt)
        ests.append(run_chain(sc))
    return merge_estimates(ests), tilt is not None


def _msd_point(args):
    cfg, alpha, seed = args
    W = _potential(cfg)
    grid = PathGrid(float(cfg["T"]), int(cfg["n"]), int(cfg["d"]))
    exact = ""
    if W.quadratic_decay is not None and math.isinf(W.support_radius):
        exact = exact_msd_quadratic(grid, W.quadratic_decay, alpha)
    row = {"alpha": alpha, "T": cfg["T"], "n": cfg["n"], "d": cfg["d"], "exact_msd": exact,
           "mcmc_msd": "", "mcmc_stderr": "", "ess": "", "acceptance": "", "tilted": "",
           "seed": seed}
    if cfg["mcmc"]:
        est, tilted = _mcmc(cfg, W, alpha, seed)
        row.update(mcmc_msd=est.value, mcmc_stderr=est.stderr, ess=est.ess,
                   acceptance=est.acceptance_rate, tilted=int(tilted))
    return [row]


def _bounds_point(args):
    cfg, alpha, seed = args
    W = _potential(cfg)
    d = int(cfg["d"])
    K = cfg["K_fit"] if cfg["K_fit"] is not None else frozen_K(d)
    c, beta = envelope_parameters(alpha, W.certificate, d)
    env = upper_bound_envelope(alpha, cfg["T"], W.certificate, d, K)
    lower = ""
    if W.quadratic_decay is not None and math.isinf(W.support_radius):
        lower = d * lower_bound_quadratic(alpha, cfg["T"], exp_decay())
    row = {"alpha": alpha, "T": cfg["T"], "lower_bound": lower, "mcmc_msd": "", "mcmc_stderr": "",
           "envelope": env, "envelope/T": env / cfg["T"], "c_alpha": c, "beta": beta, "seed": seed}
    if cfg["mcmc"]:
        est, _ = _mcmc(cfg, W, alpha, seed)
        row.update(mcmc_msd=est.value, mcmc_stderr=est.stderr)
    return [row]


def _variational_point(args):
    cfg, alpha, seed = args
    g = exp_decay()
    T, n = float(cfg["T"]), int(cfg["n"])
    res = optimize_variational(alpha, T, g, n, int(cfg["iters"]), seed)
    exact = exact_msd_quadratic(PathGrid(T, n, 1), g, alpha) / T
    return [{"alpha": alpha, "T": T, "n": n, "value": res.value, "linear_value": res.linear_value,
             "exact_msd_over_dT": exact, "iterations": res.iterations, "seed": seed}]


_POINT = {"msd-sweep": _msd_point, "bounds": _bounds_point, "variational": _variational_point}


def execute(cfg: dict, jobs: int = 1) -> list[dict]:
    """Run the configured experiment and return rows in sweep order."""
    command, seed = cfg["command"], cfg["seed"]
    if command == "verify":
        return [{"check_name": r.name, "lhs": r.lhs, "rhs": r.rhs, "margin": r.margin,
                 "stderr": r.margin_stderr, "passed": str(r.passed).lower(), "seed": r.seed}
                for r in default_suite(int(cfg["n_samples"]), seed)]
    if command == "barp-fit":
        fit = fit_K(cfg["betas"], [int(s) for s in cfg["s_grid"]], int(cfg["points_per_block"]),
                    int(cfg["d"]))
        return [{"beta": b, "s": s, "barp_msd": v, "rate": lemma_rate(b, s), "ratio": r,
                 "K": fit.K, "seed": seed} for b, s, v, r in fit.table]
    alphas = [float(a) for a in cfg["alpha_grid"]]
    tasks = [(cfg, a, s) for a, s in zip(alphas, spawn_seeds(seed, len(alphas)))]
    fn = _POINT[command]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(fn, tasks))
    else:
        chunks = [fn(t) for t in tasks]
    return [row for chunk in chunks for row in chunk]


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def render_csv(cfg: dict, rows: list[dict], timestamp: str | None = None) -> str:
    buf = io.StringIO()
    ts = timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
    buf.write(f"# pairpath {__version__}\n")
    buf.write(f"# command={cfg['command']} seed={cfg['seed']} config_hash={config_hash(cfg)}\n")
    buf.write(f"# timestamp={ts}\n")
    w = csv.writer(buf, lineterminator="\n")
    cols = COLUMNS[cfg["command"]]
    w.writerow(cols)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in cols])
    return buf.getvalue()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pairpath", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="flat JSON config file")
    p.add_argument("--jobs", type=int, default=1, help="parallel sweep points")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="CSV path (default: config output_path or stdout)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
        cfg = load_config(text, args.command, args.seed)
        if args.jobs < 1:
            raise ConfigInvalidError("--jobs must be >= 1")
    except (OSError, ConfigInvalidError) as exc:
        print(f"pairpath: invalid configuration: {exc}", file=sys.stderr)
        return 2
    try:
        rows = execute(cfg, args.jobs)
    except ConfigInvalidError as exc:
        print(f"pairpath: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except (PairpathError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"pairpath: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    text = render_csv(cfg, rows)
    out = args.out or cfg.get("output_path")
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
