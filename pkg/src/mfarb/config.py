"""Experiment configuration: TOML ingestion, defaults, and resolution into model objects.

A config file has optional ``[model]``, ``[game]``, ``[mc]`` and ``[run]``
tables whose keys are merged into one flat mapping; command-line flags win
over file values, which win over the defaults below.
"""

from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .model import GameConfig, TypeLaw
from .vsm import MODELS, VsmConfig, build_model

DEFAULTS = {
    "model": "vsm",
    "delta": 0.5,
    "T": 1.0,
    "dt": 1.0 / 256,
    "paths": 4096,
    "types": 64,
    "seed": 0,
    "x0": [100.0, 100.0],
    "z0": None,
    "e_c_mean": 0.3,
    "sigma_c": 0.0,
    "C_x": 1.0,
    "alpha": 1.0,
    "vol": 1.0,
    "beta": None,
    "sigma": None,
    "rule": "market",
    "tilt_strength": 0.5,
    "interaction": None,
    "N": [10, 100, 1000],
    "replications": 10,
    "M_ref": 4000,
    "tol": 1e-10,
    "max_iter": 50,
    "M": None,
    "nodes": 9,
    "dump_particles": False,
}

SECTIONS = ("model", "game", "mc", "run")


def load_toml(path):
    """Flatten a TOML config file into one mapping."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    flat = {}
    for k, v in raw.items():
        if k in SECTIONS and isinstance(v, dict):
            if k == "model" and "name" in v:
                flat["model"] = v["name"]
            flat.update({kk: vv for kk, vv in v.items() if kk != "name"})
        else:
            flat[k] = v
    unknown = set(flat) - set(DEFAULTS) - {"subcommand"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return flat


def resolve(file_values, overrides):
    """Merge defaults, file values and explicit overrides (``None`` means unset)."""
    cfg = dict(DEFAULTS)
    cfg.update(file_values or {})
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    if cfg["model"] not in MODELS:
        raise ConfigError(f"unknown model {cfg['model']!r}; choose from {MODELS}")
    cfg["x0"] = [float(x) for x in cfg["x0"]]
    if cfg["z0"] is not None:
        cfg["z0"] = [float(z) for z in cfg["z0"]]
    cfg["N"] = [int(n) for n in cfg["N"]]
    for k in ("delta", "T", "dt", "e_c_mean", "sigma_c", "C_x", "alpha", "vol", "tol", "tilt_strength"):
        cfg[k] = float(cfg[k])
    for k in ("paths", "types", "seed", "replications", "M_ref", "max_iter", "nodes"):
        cfg[k] = int(cfg[k])
    if cfg["paths"] < 2 or cfg["types"] < 1:
        raise ConfigError("need at least two paths and one type")
    return cfg


@dataclass
class Resolved:
    game: GameConfig
    coeffs: object
    H: object
    vsm: VsmConfig = None


def build(cfg):
    """Objects for a resolved config mapping."""
    law = TypeLaw.with_mean_exp(cfg["e_c_mean"], cfg["sigma_c"], v0_scale=float(np.mean(cfg["x0"])))
    game = GameConfig(delta=cfg["delta"], T=cfg["T"], x0=tuple(cfg["x0"]), type_law=law, seed=cfg["seed"],
                      e_c_override=cfg["e_c_mean"],
                      z0=None if cfg["z0"] is None else tuple(cfg["z0"]), dt=cfg["dt"])
    vsm = None
    kw = {}
    if cfg["model"] == "vsm":
        vsm = VsmConfig(C_x=cfg["C_x"], n=len(cfg["x0"]), x0=tuple(cfg["x0"]))
        kw["vsm"] = vsm
    elif cfg["model"] == "classic-vsm":
        kw.update(alpha=cfg["alpha"], vol=cfg["vol"])
    else:
        n = len(cfg["x0"])
        kw["beta"] = cfg["beta"] if cfg["beta"] is not None else [0.05] * n
        kw["sigma"] = cfg["sigma"] if cfg["sigma"] is not None else (0.2 * np.eye(n)).tolist()
    coeffs, H = build_model(cfg["model"], **kw)
    return Resolved(game, coeffs, H, vsm)
