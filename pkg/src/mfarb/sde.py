"""Time stepping for the coupled capitalization / interaction system and wealth particles.

Capitalizations and wealths use the log-Euler scheme (positivity is exact);
interaction values use plain Euler floored at ``Z_FLOOR``.  Three ways of
closing the interaction are supported by the engine:

``"markov"``
    ``Z`` follows its own coefficients ``gamma``, ``tau``.
``"ensemble"``
    ``Z_i`` is the average of ``V^l pi_i^l`` over the particles sharing the
    common-noise path (the conditional expectation given the noise).
``"equilibrium"``
    ``Z`` is supplied by a callable ``zfun(k, X)``; the equilibrium solver uses
    this to impose the optimal-wealth relation.
"""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng
from .errors import ConfigError, NumericalError
from .model import Z_FLOOR, MarketState, validate_config

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
OVERFLOW = 1e12


@dataclass(frozen=True)
class NoisePath:
    """Brownian increments of one common-noise path, shape ``(steps, n)``."""

    dt: float
    increments: np.ndarray
    seed: int = 0
    path: int = 0

    @classmethod
    def generate(cls, seed, steps, n, dt, path=0):
        inc = np.sqrt(dt) * rng.stream(seed, rng.COMMON_NOISE, path).standard_normal((steps, n))
        return cls(dt, inc, seed, path)

    @property
    def steps(self):
        return self.increments.shape[0]


@dataclass(frozen=True)
class ParticleEnsemble:
    """Wealth/strategy particles sharing one common-noise path."""

    c: np.ndarray
    wealth: np.ndarray
    strategies: np.ndarray
    noise: Optional[NoisePath] = None

    def __post_init__(self):
        if np.any(~(np.asarray(self.wealth) > 0)):
            raise NumericalError("particle wealth must stay positive")

    @property
    def M(self):
        return len(self.wealth)

    def interaction(self):
        """Ensemble estimate of ``Z_i = E[V pi_i | F^B]``."""
        return ordered_mean(self.wealth[:, None] * self.strategies, axis=0)


@dataclass
class TrajectoryRecord:
    """Output of a particle simulation on a uniform grid."""

    t: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    mean_V: np.ndarray
    V_quantiles: np.ndarray
    logL: np.ndarray
    V_T: np.ndarray
    c: np.ndarray
    V_paths: Optional[np.ndarray] = None
    pi_paths: Optional[np.ndarray] = None
    noise: Optional[NoisePath] = None
    clamps: int = 0
    meta: dict = field(default_factory=dict)

    def state(self, k):
        return MarketState(float(self.t[k]), self.X[k], self.Z[k])

    @property
    def L(self):
        return np.exp(self.logL)

    @property
    def deflated_cap(self):
        return self.X.sum(axis=-1) * self.L

    def to_csv(self, path, with_deflator=False):
        """One row per step: ``t, X_1..X_n, Z_1..Z_n, mean_V, V_q05..V_q95`` (+ ``L``)."""
        n = self.X.shape[1]
        header = ["t"] + [f"X_{i + 1}" for i in range(n)] + [f"Z_{i + 1}" for i in range(n)] + ["mean_V"]
        header += [f"V_q{int(round(q * 100)):02d}" for q in QUANTILES]
        if with_deflator:
            header.append("L")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k in range(len(self.t)):
                row = [self.t[k], *self.X[k], *self.Z[k], self.mean_V[k], *self.V_quantiles[k]]
                if with_deflator:
                    row.append(np.exp(self.logL[k]))
                w.writerow([repr(float(v)) for v in row])

    def dump_particles(self, path):
        """Columnar binary dump (``.npz``) of the full particle paths."""
        cols = {"t": self.t, "X": self.X, "Z": self.Z, "c": self.c, "V_T": self.V_T, "logL": self.logL}
        if self.V_paths is not None:
            cols["V"] = self.V_paths
        if self.pi_paths is not None:
            cols["pi"] = self.pi_paths
        np.savez(path, **cols)


def ordered_mean(values, axis):
    """Mean whose floating-point result does not depend on element order.

    Sorting first makes the reduction invariant to particle permutations and
    to how particles were split across workers.
    """
    v = np.sort(values, axis=axis)
    # a contiguous last axis fixes numpy's summation order regardless of input strides
    v = np.ascontiguousarray(np.moveaxis(v, axis, -1))
    return v.sum(axis=-1) / v.shape[-1]


def _check_finite(arr, what, step):
    bad = ~np.isfinite(arr)
    if np.any(bad):
        comp = int(np.argwhere(bad)[0][-1])
        raise NumericalError(f"non-finite {what} at step {step}, component {comp}", step=step, component=comp)


def _log_growth(pi, beta, alpha, shock, dt):
    """``(pi'beta - pi'alpha pi / 2) dt + pi'sigma dW`` per particle.

    ``pi`` has shape ``(P, m, n)``; ``beta`` and ``shock`` (= ``sigma dW``) have
    shape ``(P, n)``; ``alpha`` has ``(P, n, n)``.  Written as explicit
    elementwise sums so each particle's value is independent of array sizes.
    """
    n = beta.shape[-1]
    lin = np.zeros(pi.shape[:2])
    quad = np.zeros(pi.shape[:2])
    for i in range(n):
        lin = lin + pi[..., i] * (beta[:, None, i] * dt + shock[:, None, i])
        for j in range(n):
            quad = quad + pi[..., i] * alpha[:, None, i, j] * pi[..., j]
    return lin - 0.5 * quad * dt


def step_market(state, coeffs, dW, dt, z_floor=Z_FLOOR):
    """Advance ``(X, Z)`` by one step.

    ``log X_i += (beta_i - alpha_ii/2) dt + sum_k sigma_ik dW_k`` and
    ``Z_i += gamma_i dt + sum_k tau_ik dW_k``, floored at ``z_floor``.

    Raises
    ------
    NumericalError
        If any updated component is not finite.
    """
    if not dt > 0:
        raise ConfigError("dt must be positive")
    X, Z, _ = _market_arrays(coeffs, state.X[None], state.Z[None], np.asarray(dW, float)[None], dt, z_floor, 0)
    return MarketState(state.t + dt, X[0], Z[0])


def _matvec(M, v):
    return (M @ v[..., None])[..., 0]


def _market_arrays(coeffs, X, Z, dW, dt, z_floor, step, move_z=True, beta=None, sig=None):
    beta = coeffs.beta(X, Z) if beta is None else beta
    sig = coeffs.sigma(X, Z) if sig is None else sig
    shock = _matvec(sig, dW)
    alpha_diag = np.sum(sig * sig, axis=-1)
    logX = np.log(X) + (beta - 0.5 * alpha_diag) * dt + shock
    _check_finite(logX, "capitalization", step)
    Xn = np.exp(logX)
    clamps = 0
    if move_z:
        Zn = Z + coeffs.gamma(X, Z) * dt + _matvec(coeffs.tau(X, Z), dW)
        _check_finite(Zn, "interaction", step)
        low = Zn < z_floor
        clamps = int(low.sum())
        Zn = np.where(low, z_floor, Zn)
    else:
        Zn = Z
    return Xn, Zn, clamps


def step_wealth(ensemble, state, coeffs, dW, dt):
    """Advance particle wealths with their current strategies (log-Euler)."""
    X, Z = state.X[None], state.Z[None]
    shock = _matvec(coeffs.sigma(X, Z), np.asarray(dW, float)[None])
    g = _log_growth(ensemble.strategies[None], coeffs.beta(X, Z), coeffs.alpha(X, Z), shock, dt)[0]
    logV = np.log(ensemble.wealth) + g
    _check_finite(logV, "wealth", 0)
    return ParticleEnsemble(ensemble.c, np.exp(logV), ensemble.strategies, ensemble.noise)


@dataclass
class EngineResult:
    """Arrays with batch axes first, then time (when kept), then assets/particles."""

    X: np.ndarray
    Z: np.ndarray
    logL: np.ndarray
    mean_V: Optional[np.ndarray] = None
    V_quantiles: Optional[np.ndarray] = None
    V_T: Optional[np.ndarray] = None
    logV_growth: Optional[np.ndarray] = None
    V_paths: Optional[np.ndarray] = None
    pi_paths: Optional[np.ndarray] = None
    clamps: int = 0


def _chunks(m, workers):
    workers = max(1, min(int(workers), m)) if m else 1
    bounds = np.linspace(0, m, workers + 1).astype(int)
    return [slice(bounds[i], bounds[i + 1]) for i in range(workers)]


def run_engine(coeffs, X0, Z0, noise, dt, *, t0=0.0, c=None, v0=None, rule=None,
               interaction="markov", zfun=None, keep_path=True, keep_particles=False,
               workers=1, guard=OVERFLOW, deflator=True):
    """Simulate a batch of common-noise paths, optionally carrying wealth particles.

    Parameters
    ----------
    X0, Z0 : array_like, shape ``batch + (n,)`` (broadcastable)
    noise : ndarray, shape ``batch + (K, n)`` (broadcastable)
        Brownian increments; sharing them across batch entries gives common
        random numbers.
    c, v0 : ndarray, shape ``(m,)``, optional
        Particle preferences and initial wealths; omit for a market-only run.
        With particles the batch must be one-dimensional.
    rule : callable
        Strategy rule (see :mod:`mfarb.strategies`); required with particles.
    interaction : {"markov", "ensemble", "equilibrium"}
    zfun : callable ``(k, X) -> Z``
        Interaction closure for ``interaction="equilibrium"``.
    keep_path : bool
        Store every grid point of ``X``, ``Z`` and ``log L``; else only the end.
    keep_particles : bool
        Store full wealth and strategy paths.
    workers : int
        Threads for the particle loop; results do not depend on it.

    Returns
    -------
    EngineResult
    """
    noise = np.asarray(noise, dtype=float)
    K, n = noise.shape[-2:]
    X0, Z0 = np.asarray(X0, float), np.asarray(Z0, float)
    batch = np.broadcast_shapes(X0.shape[:-1], Z0.shape[:-1], noise.shape[:-2])
    X = np.broadcast_to(X0, batch + (n,)).copy()
    Z = np.broadcast_to(Z0, batch + (n,)).copy()
    has_particles = c is not None
    if interaction not in ("markov", "ensemble", "equilibrium"):
        raise ConfigError(f"unknown interaction {interaction!r}")
    if interaction == "ensemble" and not has_particles:
        raise ConfigError("ensemble interaction needs particles")
    if interaction == "equilibrium" and zfun is None:
        raise ConfigError("equilibrium interaction needs zfun")
    if has_particles and len(batch) != 1:
        raise ConfigError("particle runs need a one-dimensional path batch")
    x_guard = guard * X.max()

    nt = K + 1 if keep_path else 1
    Xs = np.empty(batch + (nt, n))
    Zs = np.empty(batch + (nt, n))
    logLs = np.zeros(batch + (nt,))
    logL = np.zeros(batch)
    clamps = 0

    def store(k, X, Z, logL):
        if keep_path:
            Xs[..., k, :], Zs[..., k, :], logLs[..., k] = X, Z, logL
        elif k == K:
            Xs[..., 0, :], Zs[..., 0, :], logLs[..., 0] = X, Z, logL

    pool = None
    if has_particles:
        P = batch[0]
        c = np.asarray(c, float)
        m = c.shape[0]
        logV0 = np.log(np.broadcast_to(np.asarray(v0, float), (P, m)))
        logV = logV0.copy()
        v_guard = np.log(guard * np.max(v0))
        parts = _chunks(m, workers)
        pool = ThreadPoolExecutor(len(parts)) if len(parts) > 1 else None
        mean_V = np.empty((P, K + 1))
        V_q = np.empty((P, K + 1, len(QUANTILES)))
        V_paths = np.empty((P, K + 1, m)) if keep_particles else None
        pi_paths = np.empty((P, K + 1, m, n)) if keep_particles else None

        def strategies(t, X, Z, V):
            def one(sl):
                return np.broadcast_to(rule(t, X, Z, V[:, sl], c[sl]), (P, sl.stop - sl.start, n))
            if pool is None:
                return np.array(one(parts[0]), dtype=float)
            return np.concatenate(list(pool.map(one, parts)), axis=1)

        def growth(pi, beta, alpha, shock):
            if pool is None:
                return _log_growth(pi, beta, alpha, shock, dt)
            return np.concatenate(list(pool.map(lambda sl: _log_growth(pi[:, sl], beta, alpha, shock, dt), parts)), axis=1)

        def close(k, X, Zguess, V):
            pi = strategies(t0 + k * dt, X, Zguess, V)
            if interaction == "ensemble":
                return pi, np.maximum(ordered_mean(V[..., None] * pi, axis=1), Z_FLOOR)
            return pi, Zguess

        def summarize(k, logV, pi):
            V = np.exp(logV)
            mean_V[:, k] = ordered_mean(V, axis=1)
            V_q[:, k] = np.quantile(V, QUANTILES, axis=1).T
            if keep_particles:
                V_paths[:, k] = V
                pi_paths[:, k] = pi

    if interaction == "equilibrium":
        Z = zfun(0, X)
    if has_particles:
        pi, Z = close(0, X, Z, np.exp(logV))
        summarize(0, logV, pi)
    store(0, X, Z, logL)

    try:
        for k in range(K):
            dW = noise[..., k, :]
            beta = coeffs.beta(X, Z)
            sig = coeffs.sigma(X, Z)
            if deflator:
                th = coeffs.theta(X, Z)
                logL = logL - np.sum(th * dW, axis=-1) - 0.5 * np.sum(th * th, axis=-1) * dt
            if has_particles:
                shock = _matvec(sig, dW)
                logV = logV + growth(pi, beta, coeffs.alpha(X, Z), shock)
                if not np.all(np.isfinite(logV)) or np.any(logV > v_guard):
                    raise NumericalError(f"wealth blow-up at step {k + 1}", step=k + 1)
            Xn, Zn, cl = _market_arrays(coeffs, X, Z, dW, dt, Z_FLOOR, k + 1,
                                        move_z=(interaction == "markov"), beta=beta, sig=sig)
            clamps += cl
            if np.any(Xn > x_guard):
                raise NumericalError(f"capitalization blow-up at step {k + 1}", step=k + 1)
            if interaction == "equilibrium":
                Zn = zfun(k + 1, Xn)
            X = Xn
            if has_particles:
                if interaction == "ensemble":
                    # predictor: last strategies carried to the new wealths
                    Zn = np.maximum(ordered_mean(np.exp(logV)[..., None] * pi, axis=1), Z_FLOOR)
                pi, Zn = close(k + 1, X, Zn, np.exp(logV))
                summarize(k + 1, logV, pi)
            Z = Zn
            store(k + 1, X, Z, logL)
    finally:
        if pool is not None:
            pool.shutdown()

    res = EngineResult(Xs, Zs, logLs, clamps=clamps)
    if has_particles:
        res.mean_V, res.V_quantiles, res.V_T = mean_V, V_q, np.exp(logV)
        res.logV_growth, res.V_paths, res.pi_paths = logV - logV0, V_paths, pi_paths
    return res


def _initial_z(cfg, v0):
    if cfg.z0 is not None:
        return np.asarray(cfg.z0, float)
    x0 = np.asarray(cfg.x0, float)
    return np.mean(v0) * x0 / x0.sum()


def simulate_mkv(cfg, coeffs, strategy_rule, M, dt, seed, *, interaction="ensemble",
                 record_particles=False, workers=1, noise=None, types=None):
    """Conditional McKean-Vlasov system approximated by ``M`` type particles.

    All particles share one common-noise path (keyed by ``seed``); particle
    ``l`` draws the ``l``-th type of the ``seed`` type stream, so a larger
    ``M`` keeps the first particles unchanged.

    Raises
    ------
    ConfigError
        Invalid configuration or ``dt`` not dividing ``T``.
    NumericalError
        Non-finite values or blow-up, with the step index.
    """
    return _simulate(cfg, coeffs, strategy_rule, M, dt, seed, interaction, record_particles,
                     workers, noise, types, kind="mkv")


def simulate_nplayer(cfg, coeffs, strategy_rule, N, dt, seed, *, interaction="ensemble",
                     record_particles=False, workers=1, noise=None, types=None):
    """Finite ``N``-player game: the interaction is the players' own empirical average."""
    return _simulate(cfg, coeffs, strategy_rule, N, dt, seed, interaction, record_particles,
                     workers, noise, types, kind="nplayer")


def _simulate(cfg, coeffs, rule, M, dt, seed, interaction, record, workers, noise, types, kind):
    if M < 1:
        raise ConfigError("need at least one particle")
    cfg_dt = cfg.__class__(**{**cfg.__dict__, "dt": dt})
    validate_config(cfg_dt).raise_if_failed()
    K = cfg_dt.steps
    n = cfg.n
    if noise is None:
        noise = NoisePath.generate(seed, K, n, dt)
    if noise.increments.shape != (K, n):
        raise ConfigError("noise path does not match the grid")
    if types is None:
        c, v0 = cfg.type_law.sample(M, seed)
    else:
        c, v0 = (np.asarray(a, float) for a in types)
    res = run_engine(coeffs, np.asarray(cfg.x0, float), _initial_z(cfg, v0), noise.increments[None], dt,
                     c=c, v0=v0, rule=rule, interaction=interaction, keep_particles=record, workers=workers)
    t = np.arange(K + 1) * dt
    return TrajectoryRecord(
        t=t, X=res.X[0], Z=res.Z[0], mean_V=res.mean_V[0], V_quantiles=res.V_quantiles[0],
        logL=res.logL[0], V_T=res.V_T[0], c=c,
        V_paths=None if res.V_paths is None else res.V_paths[0],
        pi_paths=None if res.pi_paths is None else res.pi_paths[0],
        noise=noise, clamps=res.clamps,
        meta={"kind": kind, "M": M, "dt": dt, "seed": seed, "interaction": interaction, "model": coeffs.name},
    )
