"""Command-line experiment runner.

Every run writes into its output directory only: ``manifest.json`` (the fully
resolved configuration, package versions and seed), result CSV/JSON files
and ``run.log``.  Outputs never contain timestamps or the worker count, so a
rerun from the manifest reproduces them byte for byte.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import json
import logging
import os
import platform
import sys
import warnings
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import build, load_toml, resolve
from .equilibrium import check_uniqueness, solve_fixed_point
from .errors import ConfigError, DivergenceError, MfarbError, NumericalError, UniquenessWarning
from .measures import chaos_experiment
from .pde import apply_A, verify_min_solution, vsm_n1_grid
from .sde import simulate_mkv
from .strategies import BenchmarkPortfolio, MarketPortfolio, PreferenceTilt

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
SUBCOMMANDS = ("simulate", "solve", "chaos", "verify-pde", "check-uniqueness")

log = logging.getLogger("mfarb")


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _add_common(p):
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--model", help="vsm | classic-vsm | geometric | custom")
    p.add_argument("--delta", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--paths", type=int, help="outer Monte Carlo paths / particles")
    p.add_argument("--types", type=int, help="inner type particles")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="worker threads (env MFARB_WORKERS)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--x0", type=_floats, help="comma-separated initial capitalizations")
    p.add_argument("--e-c-mean", dest="e_c_mean", type=float)
    p.add_argument("--sigma-c", dest="sigma_c", type=float)


def parser():
    ap = argparse.ArgumentParser(prog="mfarb", description="Relative-arbitrage mean-field game experiments")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="subcommand", required=True)
    p = sub.add_parser("simulate", help="particle simulation of the conditional system")
    _add_common(p)
    p.add_argument("--rule", choices=("market", "benchmark", "tilt"))
    p.add_argument("--interaction", choices=("ensemble", "markov"))
    p.add_argument("--dump-particles", dest="dump_particles", action="store_const", const=True)
    p = sub.add_parser("solve", help="Picard solve of the equilibrium value path")
    _add_common(p)
    p.add_argument("--interaction", choices=("equilibrium", "markov"))
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p = sub.add_parser("chaos", help="propagation-of-chaos experiment")
    _add_common(p)
    p.add_argument("--N", type=_ints, help="comma-separated player counts")
    p.add_argument("--replications", type=int)
    p.add_argument("--M-ref", dest="M_ref", type=int)
    p.add_argument("--rule", choices=("market", "benchmark", "tilt"))
    p.add_argument("--interaction", choices=("ensemble", "markov"))
    p = sub.add_parser("verify-pde", help="operator residual on the one-asset VSM value grid")
    _add_common(p)
    p.add_argument("--nodes", type=int)
    p = sub.add_parser("check-uniqueness", help="uniqueness condition arithmetic")
    _add_common(p)
    p.add_argument("--M", type=float, help="Lipschitz constant of the deflated cap map")
    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int)
    return ap


def _rule(cfg):
    if cfg["rule"] == "benchmark":
        return BenchmarkPortfolio(cfg["delta"])
    if cfg["rule"] == "tilt":
        return PreferenceTilt(cfg["tilt_strength"])
    return MarketPortfolio()


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    return str(o)


def manifest(cfg):
    return {
        "subcommand": cfg["subcommand"],
        "config": {k: v for k, v in sorted(cfg.items()) if k != "subcommand"},
        "seed": cfg["seed"],
        "versions": {"mfarb": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }


def run_simulate(cfg, res, out, workers):
    interaction = cfg["interaction"] or "ensemble"
    rec = simulate_mkv(res.game, res.coeffs, _rule(cfg), cfg["paths"], cfg["dt"], cfg["seed"],
                       interaction=interaction, record_particles=bool(cfg["dump_particles"]), workers=workers)
    rec.to_csv(out / "trajectory.csv", with_deflator=True)
    if cfg["dump_particles"]:
        rec.dump_particles(out / "particles.npz")
    V = rec.V_T
    summary = {"mean_V_T": float(V.mean()), "stderr_V_T": float(V.std(ddof=1) / np.sqrt(V.size)),
               "X_T": rec.X[-1].tolist(), "Z_T": rec.Z[-1].tolist(), "L_T": float(rec.L[-1]),
               "z_clamps": rec.clamps}
    _write_json(out / "summary.json", summary)
    log.info("mean V(T) = %.6g +- %.2g (stderr)", summary["mean_V_T"], summary["stderr_V_T"])


def run_solve(cfg, res, out, workers):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", UniquenessWarning)
        result = solve_fixed_point(res.game, res.coeffs, cfg["paths"], cfg["dt"], cfg["seed"], cfg["tol"],
                                   cfg["max_iter"], interaction=cfg["interaction"] or "equilibrium")
    for w in caught:
        log.warning("%s", w.message)
    d = result.as_dict()
    d["warnings"] = [str(w.message) for w in caught]
    _write_json(out / "equilibrium.json", d)
    result.value.to_csv(out / "value.csv")
    log.info("U(T) = %.6g +- %.2g (stderr) after %d iterations", result.value.U_T,
             result.value.stderr[0], result.iterations)
    log.info("measured contraction %.4g, bound %.4g", result.contraction_estimate, result.report.contraction_bound)


def run_chaos(cfg, res, out, workers):
    table = chaos_experiment(res.game, res.coeffs, _rule(cfg), cfg["N"], cfg["M_ref"], cfg["dt"], cfg["seed"],
                             replications=cfg["replications"], interaction=cfg["interaction"] or "ensemble",
                             workers=workers)
    table.to_csv(out / "convergence.csv")
    _write_json(out / "chaos.json", {"N": table.N, "distance": table.distance, "stderr": table.stderr,
                                     "slope": table.slope, "spearman": table.spearman})
    for N, d, s in zip(table.N, table.distance, table.stderr):
        log.info("N=%d  W2=%.6g +- %.2g (stderr)", N, d, s)


def run_verify_pde(cfg, res, out, workers):
    grid, coeffs = vsm_n1_grid(cfg["delta"], cfg["e_c_mean"], nodes=cfg["nodes"])
    r = apply_A(grid, coeffs, cfg["delta"])
    r.to_csv(out / "residual.csv")
    rep = verify_min_solution(grid, coeffs, cfg["delta"], residual=r)
    _write_json(out / "pde.json", dict(rep.__dict__, ok=rep.ok))
    log.info("violations %d of %d nodes, truncation allowance %.3g", rep.violations, rep.nodes,
             rep.truncation_allowance)


def run_check(cfg, res, out, workers):
    M = cfg["M"] if cfg["M"] is not None else 0.0
    rep = check_uniqueness(cfg["delta"], cfg["e_c_mean"], M, float(np.sum(cfg["x0"])))
    _write_json(out / "uniqueness.json", rep.as_dict())
    log.info("condition value %.6g (%s), M limit %.6g (%s)", rep.condition_value,
             "pass" if rep.condition_ok else "fail", rep.M_limit, "pass" if rep.M_ok else "fail")


RUNNERS = {"simulate": run_simulate, "solve": run_solve, "chaos": run_chaos,
           "verify-pde": run_verify_pde, "check-uniqueness": run_check}


def _workers(arg):
    if arg is not None:
        return max(1, int(arg))
    env = os.environ.get("MFARB_WORKERS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise ConfigError(f"MFARB_WORKERS must be an integer, got {env!r}")


def _setup_log(out):
    log.handlers.clear()
    log.setLevel(logging.INFO)
    log.propagate = False
    h = logging.FileHandler(out / "run.log", mode="w")
    h.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(h)
    return h


def execute(cfg, out, workers):
    """Run a resolved config into ``out`` (created if needed)."""
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory not writable: {exc}") from exc
    handler = _setup_log(out)
    try:
        _write_json(out / "manifest.json", manifest(cfg))
        res = build(cfg)
        log.info("%s model=%s seed=%d", cfg["subcommand"], cfg["model"], cfg["seed"])
        RUNNERS[cfg["subcommand"]](cfg, res, out, workers)
    except MfarbError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        raise
    finally:
        handler.close()
        log.removeHandler(handler)


def main(argv=None):
    args = parser().parse_args(argv)
    try:
        workers = _workers(args.workers)
        if args.subcommand == "rerun":
            try:
                with open(args.manifest) as fh:
                    m = json.load(fh)
            except (OSError, ValueError) as exc:
                raise ConfigError(f"cannot read manifest: {exc}") from exc
            cfg = resolve(m["config"], {})
            cfg["subcommand"] = m["subcommand"]
        else:
            file_values = load_toml(args.config) if args.config else {}
            overrides = {k: v for k, v in vars(args).items()
                         if k not in ("config", "out", "workers", "subcommand")}
            cfg = resolve(file_values, overrides)
            cfg["subcommand"] = args.subcommand
        execute(cfg, args.out, workers)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, DivergenceError, MfarbError, ArithmeticError) as exc:
        print(json.dumps({"error": "numerical", "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
