"""Empirical measures, Wasserstein-2 distances and propagation-of-chaos experiments."""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from . import rng
from .errors import ConfigError
from .sde import NoisePath, simulate_mkv, simulate_nplayer

ASSIGNMENT_CAP = 256
PROJECTIONS = 64


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniformly weighted point cloud; ``points`` has shape ``(N, d)``."""

    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if p.ndim != 2 or p.shape[0] < 1:
            raise ConfigError("an empirical measure needs at least one point")
        object.__setattr__(self, "points", p)

    @property
    def N(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]

    @property
    def weights(self):
        return np.full(self.N, 1.0 / self.N)

    @classmethod
    def from_paths(cls, paths):
        """Measure over discretized paths ``(N, K+1[, d])``, flattened per point."""
        paths = np.asarray(paths, float)
        return cls(paths.reshape(paths.shape[0], -1))


def second_moment(m):
    """``M_2 = sqrt(mean |x|^2)``."""
    return float(np.sqrt(np.mean(np.sum(m.points ** 2, axis=1))))


class W2Distance(float):
    """Distance value carrying the method used and an ``approximate`` flag."""

    def __new__(cls, value, method, approximate=False):
        obj = super().__new__(cls, value)
        obj.method = method
        obj.approximate = approximate
        return obj


def _w2sq_1d(x, y):
    """Squared W2 between 1-D empirical measures via the quantile coupling."""
    x, y = np.sort(x), np.sort(y)
    if x.size == y.size:
        return float(np.mean((x - y) ** 2))
    # merge the breakpoints of both quantile functions
    cuts = np.union1d(np.arange(1, x.size) / x.size, np.arange(1, y.size) / y.size)
    edges = np.concatenate([[0.0], cuts, [1.0]])
    mid = 0.5 * (edges[:-1] + edges[1:])
    ix = np.minimum((mid * x.size).astype(int), x.size - 1)
    iy = np.minimum((mid * y.size).astype(int), y.size - 1)
    return float(np.sum(np.diff(edges) * (x[ix] - y[iy]) ** 2))


def _cost(a, b, metric):
    diff = a[:, None, :] - b[None, :, :]
    if metric == "sup":
        return np.max(np.abs(diff), axis=-1) ** 2
    return np.sum(diff ** 2, axis=-1)


def _w2sq_exact(a, b, metric="euclidean"):
    C = _cost(a, b, metric)
    Na, Nb = C.shape
    if Na == Nb:
        r, c = optimize.linear_sum_assignment(C)
        return float(C[r, c].mean()), "assignment"
    # transport linear program with uniform marginals
    A_eq = np.vstack([np.kron(np.eye(Na), np.ones(Nb)), np.kron(np.ones(Na), np.eye(Nb))])
    b_eq = np.concatenate([np.full(Na, 1.0 / Na), np.full(Nb, 1.0 / Nb)])
    res = optimize.linprog(C.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise ArithmeticError(f"transport LP failed: {res.message}")
    return float(res.fun), "transport-lp"


def wasserstein2(a, b, *, assignment_cap=ASSIGNMENT_CAP, projections=PROJECTIONS, seed=0, metric="euclidean"):
    """Wasserstein-2 distance between two empirical measures.

    ``d = 1``: exact quantile coupling.  ``d >= 2`` with at most
    ``assignment_cap`` points per measure: exact optimal assignment (or the
    transport LP for unequal sizes).  Otherwise sliced W2 over ``projections``
    seeded random directions, flagged approximate.

    ``metric="sup"`` uses the max-norm ground cost, meant for path measures
    built with :meth:`EmpiricalMeasure.from_paths`; it is always exact.

    Raises
    ------
    ConfigError
        On dimension mismatch, or a sup-norm request above the assignment cap.
    """
    if a.d != b.d:
        raise ConfigError(f"dimension mismatch: {a.d} vs {b.d}")
    if metric == "sup":
        if max(a.N, b.N) > assignment_cap:
            raise ConfigError("sup-norm distance is only available up to the assignment cap")
        v, method = _w2sq_exact(a.points, b.points, "sup")
        return W2Distance(np.sqrt(max(v, 0.0)), "sup-" + method)
    if a.d == 1:
        return W2Distance(np.sqrt(_w2sq_1d(a.points[:, 0], b.points[:, 0])), "quantile")
    if max(a.N, b.N) <= assignment_cap:
        v, method = _w2sq_exact(a.points, b.points)
        return W2Distance(np.sqrt(max(v, 0.0)), method)
    g = rng.stream(seed, rng.SLICING)
    dirs = g.standard_normal((projections, a.d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa, pb = a.points @ dirs.T, b.points @ dirs.T
    v = np.mean([_w2sq_1d(pa[:, k], pb[:, k]) for k in range(projections)])
    return W2Distance(np.sqrt(v), "sliced", approximate=True)


@dataclass
class ConvergenceTable:
    """Distances ``W2(mu^N_T, mu^ref_T)`` by ``N`` with a log-log slope fit."""

    N: list
    distance: list
    stderr: list
    replications: int
    slope: float
    intercept: float
    raw: np.ndarray = field(repr=False, default=None)

    @property
    def spearman(self):
        if len(self.N) < 2:
            return float("nan")
        return float(stats.spearmanr(self.N, self.distance).statistic)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["N", "distance", "stderr", "replications", "slope"])
            for N, d, s in zip(self.N, self.distance, self.stderr):
                w.writerow([N, repr(float(d)), repr(float(s)), self.replications, repr(float(self.slope))])


def replication_seed(seed, r):
    """Independent master seed for replication ``r``."""
    return int(rng.stream(seed, rng.REPLICATION, r).integers(0, 2 ** 31 - 1))


def loglog_slope(N, d):
    N, d = np.asarray(N, float), np.asarray(d, float)
    ok = d > 0
    if ok.sum() < 2:
        return float("nan"), float("nan")
    slope, icpt = np.polyfit(np.log(N[ok]), np.log(d[ok]), 1)
    return float(slope), float(icpt)


def chaos_experiment(cfg, coeffs, strategy_rule, N_list, M_ref, dt, seed, *, replications=1,
                     interaction="ensemble", workers=1):
    """Coupled propagation-of-chaos experiment on terminal wealth.

    For every replication, the ``M_ref``-particle conditional system and each
    ``N``-player game share the common-noise path and the type draws (player
    ``l`` of every game has the type of reference particle ``l``).  The table
    reports the median distance over replications, its standard error and
    the slope of ``log distance`` against ``log N``.
    """
    N_list = [int(N) for N in N_list]
    if any(N < 1 or N > M_ref for N in N_list):
        raise ConfigError("every N must lie in [1, M_ref]")
    steps = int(round(cfg.T / dt))
    raw = np.empty((replications, len(N_list)))
    for r in range(replications):
        s = replication_seed(seed, r) if replications > 1 else seed
        noise = NoisePath.generate(s, steps, cfg.n, dt)
        ref = simulate_mkv(cfg, coeffs, strategy_rule, M_ref, dt, s, interaction=interaction,
                           noise=noise, workers=workers)
        mu_ref = EmpiricalMeasure(ref.V_T)
        for j, N in enumerate(N_list):
            types = (ref.c[:N], cfg.type_law.v0_scale * np.exp(ref.c[:N]))
            game = simulate_nplayer(cfg, coeffs, strategy_rule, N, dt, s, interaction=interaction,
                                    noise=noise, types=types, workers=workers)
            raw[r, j] = wasserstein2(EmpiricalMeasure(game.V_T), mu_ref)
    med = np.median(raw, axis=0)
    se = raw.std(axis=0, ddof=1) / np.sqrt(replications) if replications > 1 else np.zeros(len(N_list))
    slope, icpt = loglog_slope(N_list, med)
    return ConvergenceTable(N_list, med.tolist(), se.tolist(), replications, slope, icpt, raw)
