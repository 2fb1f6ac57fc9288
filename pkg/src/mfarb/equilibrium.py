"""Mean-field equilibrium: value paths, the fixed-point operator and its Picard solver.

Notation used throughout:

``U``
    Type-free value, ``u^l = e^{c_l} U``; stored on the calendar grid as
    ``U[k] = U(T - t_k)`` so ``U[-1] = U(0) = 1``.
``f(U) = 1 / (1 - (1-delta) U E[e^c])``
    Benchmark multiplier: at equilibrium ``V(t) = delta X(t) f(U(T-t))``.
``C_f = f(1)``
    Terminal multiplier, ``V(T) = delta C_f X(T)``.
"""

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng
from .errors import BandViolation, ConfigError, DegeneracyError, DivergenceError, UniquenessWarning
from .model import MarketState, benchmark_values, benchmark_weights, market_weights, validate_config
from .sde import run_engine

DENOM_FLOOR = 1e-12
RENORM_BAND = 0.05


def f_mult(U, delta, e_c_mean):
    """``f(U) = 1 / (1 - (1-delta) U E[e^c])``."""
    return 1.0 / (1.0 - (1.0 - delta) * np.asarray(U, float) * e_c_mean)


def terminal_mult(delta, e_c_mean):
    return float(f_mult(1.0, delta, e_c_mean))


@dataclass
class ValuePath:
    """``U(T - t)`` on the calendar grid ``t``; the last entry is ``U(0) = 1``."""

    t: np.ndarray
    U: np.ndarray
    stderr: Optional[np.ndarray] = None

    def __post_init__(self):
        self.t = np.asarray(self.t, float)
        self.U = np.asarray(self.U, float)
        if self.t.shape != self.U.shape:
            raise ConfigError("grid and values must have equal length")
        if self.stderr is None:
            self.stderr = np.zeros_like(self.U)

    @classmethod
    def constant(cls, T, dt, value=1.0):
        K = int(round(T / dt))
        U = np.full(K + 1, float(value))
        U[-1] = 1.0
        return cls(np.arange(K + 1) * dt, U)

    @property
    def T(self):
        return float(self.t[-1])

    @property
    def tau(self):
        return self.T - self.t

    @property
    def U_T(self):
        """Value over the whole horizon, ``U(T)``."""
        return float(self.U[0])

    def index(self, t):
        k = int(round(t / (self.t[1] - self.t[0])))
        if not 0 <= k < len(self.t):
            raise ConfigError(f"time {t} outside the grid")
        return k

    def u(self, c):
        """Per-type values ``e^c U`` with shape ``(len(c), K+1)``."""
        return np.exp(np.asarray(c, float))[..., None] * self.U

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "tau", "U", "stderr"])
            for row in zip(self.t, self.tau, self.U, self.stderr):
                w.writerow([repr(float(v)) for v in row])

    def as_dict(self):
        return {"t": self.t.tolist(), "U": self.U.tolist(), "stderr": self.stderr.tolist()}


@dataclass(frozen=True)
class UEstimate:
    value: float
    stderr: float

    def __float__(self):
        return self.value


def _check_band(U, delta, e_c_mean):
    g = (1.0 - delta) * e_c_mean * np.asarray(U, float)
    if np.any(g >= 1.0 - DENOM_FLOOR) or np.any(np.asarray(U) <= 0):
        raise BandViolation(f"uniqueness band violated: max (1-delta)E[e^c]U = {np.max(g):.6g}")


def equilibrium_interaction(value, delta, e_c_mean, tilt=None, k0=0):
    """Interaction closure ``Z = E[e^c] U delta X f(U) (m + f(U) tilt)``.

    Optimal wealth is ``e^c U V`` with ``V = delta X f(U)`` and the optimal
    portfolio is ``m + f(U) tilt`` where ``tilt`` collects the state
    elasticities of ``u``.  ``k0`` offsets the calendar index (continuations
    started at ``t = k0 dt``).
    """
    U = value.U

    def zfun(k, X):
        Uk = U[k + k0]
        fk = f_mult(Uk, delta, e_c_mean)
        X = np.asarray(X, float)
        pi = market_weights(X)
        if tilt is not None:
            pi = pi + fk * tilt(k + k0, X)
        return np.maximum(e_c_mean * Uk * delta * fk * X.sum(-1, keepdims=True) * pi, 0.0)

    return zfun


class EquilibriumRule:
    """Strategy rule at equilibrium: ``pi* = Pi(state) + f(U) tilt``.

    With the time-only value representation the tilt is zero unless a
    ``tilt(k, X)`` callable is supplied.
    """

    def __init__(self, value, delta, e_c_mean, tilt=None):
        self.value, self.delta, self.e_c_mean, self.tilt = value, float(delta), float(e_c_mean), tilt

    def __call__(self, t, X, Z, V, c):
        pi = benchmark_weights(X, Z, self.delta)
        if self.tilt is not None:
            k = self.value.index(t)
            pi = pi + f_mult(self.value.U[k], self.delta, self.e_c_mean) * self.tilt(k, X)
        return pi[:, None, :]

    def describe(self):
        return {"rule": "equilibrium", "delta": self.delta}


def outer_noise(seed, paths, steps, n, dt, purpose=rng.COMMON_NOISE):
    return rng.brownian_increments(seed, steps, n, dt, paths=paths, purpose=purpose)


def _initial_z(cfg, value=None, U_T=1.0):
    from .vsm import equilibrium_z0

    if cfg.z0 is not None:
        return np.asarray(cfg.z0, float)
    if value is not None:
        U_T = value.U_T
    return equilibrium_z0(cfg.x0, cfg.delta, cfg.e_c_mean, U_T)


def deflated_cap_paths(cfg, coeffs, value, noise, dt, interaction="equilibrium", tilt=None):
    """``X-hat = X L`` along simulated paths, shape ``(P, K+1)``."""
    x0 = np.asarray(cfg.x0, float)
    zfun = None
    if interaction == "equilibrium":
        zfun = equilibrium_interaction(value, cfg.delta, cfg.e_c_mean, tilt)
        z0 = zfun(0, x0)
    else:
        z0 = _initial_z(cfg, value)
    res = run_engine(coeffs, x0, z0, noise, dt, interaction=interaction, zfun=zfun)
    return res.X.sum(-1) * np.exp(res.logL)


def apply_G(cfg, U, coeffs, M_outer, dt, seed, *, interaction="equilibrium", tilt=None, noise=None):
    """One application of the fixed-point operator.

    ``G(U)(tau) = C_f (1 - (1-delta) E[e^c] U(tau)) E[X-hat(tau)] / x0``, where
    ``X-hat`` is simulated over the full horizon with interaction values
    driven by the input ``U``; the mean deflated growth over elapsed time
    ``tau`` is read off that single simulation.

    Raises
    ------
    BandViolation
        If ``(1-delta) E[e^c] U`` reaches 1 anywhere (``f`` has a pole).
    """
    delta, e = cfg.delta, cfg.e_c_mean
    _check_band(U.U, delta, e)
    K = len(U.t) - 1
    if noise is None:
        noise = outer_noise(seed, M_outer, K, cfg.n, dt)
    Xhat = deflated_cap_paths(cfg, coeffs, U, noise, dt, interaction, tilt) / cfg.x0_total
    R = Xhat.mean(axis=0)[::-1]
    se = (Xhat.std(axis=0, ddof=1) / np.sqrt(Xhat.shape[0]))[::-1]
    w = terminal_mult(delta, e) * (1.0 - (1.0 - delta) * e * U.U)
    G, G_se = w * R, w * se
    G[-1], G_se[-1] = 1.0, 0.0
    return ValuePath(U.t.copy(), G, G_se)


@dataclass
class UniquenessReport:
    delta: float
    e_c_mean: float
    M: float
    x0_total: float
    condition_value: float
    condition_ok: bool
    M_limit: float
    M_ok: bool
    L_f: float
    lam: float
    M_hat: float
    contraction_bound: float
    notes: list = field(default_factory=list)

    @property
    def unique(self):
        return self.condition_ok and self.M_ok

    def as_dict(self):
        d = dict(self.__dict__)
        d["unique"] = self.unique
        return d


def check_uniqueness(delta, e_c_mean, M_bound, x0_total):
    """Sufficient condition for a unique equilibrium and the implied contraction bound.

    Conditions: ``(1 - delta^2) E[e^c] / delta`` in ``(0, 1)`` and
    ``M < x0 (delta + E[e^c](delta^2 - 1)) / (1 - (1-delta) E[e^c])``.  The bound
    on the contraction factor is ``lambda L_f + M/(delta x0)`` with
    ``L_f = (1-delta)E[e^c] / (1 - (1-delta)E[e^c])^2`` and
    ``lambda = (1 - (1-delta)E[e^c]) / delta``.
    """
    d, e = float(delta), float(e_c_mean)
    notes = []
    if not (0 < d <= 1 and e > 0):
        raise ConfigError("need delta in (0,1] and E[e^c] > 0")
    cv = (1 - d * d) * e / d
    g = 1 - (1 - d) * e
    if g != 0:
        M_limit = x0_total * (d + e * (d * d - 1)) / g
        L_f = (1 - d) * e / g ** 2
    else:
        M_limit, L_f = float("nan"), float("inf")
    if g <= 0:
        notes.append("1 - (1-delta)E[e^c] <= 0: f has a pole inside the value band")
    lam = g / d
    M_hat = M_bound / (d * x0_total)
    if d == 1:
        notes.append("delta = 1 sits on the open boundary: condition value is 0, which (0,1) excludes")
    return UniquenessReport(d, e, float(M_bound), float(x0_total), cv, bool(0 < cv < 1),
                            M_limit, bool(M_bound < M_limit), L_f, lam, M_hat, lam * L_f + M_hat, notes)


def estimate_M(cfg, coeffs, U, M_outer, dt, seed, *, pairs=4, scale=0.02, interaction="equilibrium", noise=None):
    """Empirical constant ``M`` with ``sup E|X-hat^u - X-hat^v| <= M ||u - v||``.

    Regresses ``sup_t E|X-hat^u(t) - X-hat^v(t)|^2`` on ``||u - v||^2`` over
    smooth perturbations of ``U`` (common random numbers) and returns the
    square root of the slope together with the raw pairs.
    """
    K = len(U.t) - 1
    if noise is None:
        noise = outer_noise(seed, M_outer, K, cfg.n, dt)
    base = deflated_cap_paths(cfg, coeffs, U, noise, dt, interaction)
    tau = U.tau
    xs, ys = [], []
    for j in range(pairs):
        sign = 1.0 if j % 2 == 0 else -1.0
        h = sign * scale * (j // 2 + 1) * np.sin(0.5 * np.pi * tau / U.T)
        V = ValuePath(U.t, U.U * (1 + h))
        _check_band(V.U, cfg.delta, cfg.e_c_mean)
        pert = deflated_cap_paths(cfg, coeffs, V, noise, dt, interaction)
        ys.append(np.max(np.mean((pert - base) ** 2, axis=0)))
        xs.append(np.max(np.abs(V.U - U.U)) ** 2)
    xs, ys = np.array(xs), np.array(ys)
    slope = float(np.sum(xs * ys) / np.sum(xs * xs))
    return float(np.sqrt(max(slope, 0.0))), xs, ys


@dataclass
class EquilibriumResult:
    value: ValuePath
    strategy: EquilibriumRule
    iterations: int
    residuals: list
    contraction_estimate: float
    unique: bool
    report: UniquenessReport
    converged: bool
    damping: float
    history: list = field(default_factory=list, repr=False)

    def as_dict(self):
        return {
            "value": self.value.as_dict(),
            "U_T": self.value.U_T,
            "U_T_stderr": float(self.value.stderr[0]),
            "iterations": self.iterations,
            "residuals": [float(r) for r in self.residuals],
            "contraction_estimate": self.contraction_estimate,
            "converged": self.converged,
            "damping": self.damping,
            "unique": self.unique,
            "uniqueness": self.report.as_dict(),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)


def measured_ratio(residuals, floor=1e-12):
    """Largest ratio of consecutive residuals while both exceed ``floor``."""
    r = np.asarray(residuals, float)
    ok = (r[:-1] > floor) & (r[1:] > floor)
    if not np.any(ok):
        return 0.0
    return float(np.max(r[1:][ok] / r[:-1][ok]))


def solve_fixed_point(cfg, coeffs, M_outer, dt, seed, tol=1e-10, max_iter=50, *, interaction="equilibrium",
                      rho=1.0, U0=None, tilt=None, estimate_m=True, m_pairs=4):
    """Picard iteration ``U <- (1-rho) U + rho G(U)`` with common random numbers.

    The same outer noise is reused in every iteration, so the iteration is a
    deterministic map and residuals are not masked by Monte Carlo noise.  On
    the first residual increase the damping falls back to ``rho = 0.5``; three
    consecutive increases abort.

    Warns
    -----
    UniquenessWarning
        When the sufficient condition for uniqueness fails (iteration still runs).

    Raises
    ------
    DivergenceError
        Residuals grew three iterations in a row.
    BandViolation
        An iterate left the band where ``f`` is finite.
    """
    validate_config(cfg).raise_if_failed()
    delta, e = cfg.delta, cfg.e_c_mean
    K = int(round(cfg.T / dt))
    U = U0 if U0 is not None else ValuePath.constant(cfg.T, dt)
    pre = check_uniqueness(delta, e, 0.0, cfg.x0_total)
    if not pre.condition_ok:
        warnings.warn(f"uniqueness not guaranteed: condition value {pre.condition_value:.6g} outside (0,1)",
                      UniquenessWarning, stacklevel=2)
    noise = outer_noise(seed, M_outer, K, cfg.n, dt)
    history, residuals = [U], []
    growth = 0
    converged = False
    for it in range(max_iter):
        G = apply_G(cfg, U, coeffs, M_outer, dt, seed, interaction=interaction, tilt=tilt, noise=noise)
        new = ValuePath(U.t, (1 - rho) * U.U + rho * G.U, rho * G.stderr)
        r = float(np.max(np.abs(new.U - U.U)))
        residuals.append(r)
        history.append(new)
        U = new
        if len(residuals) > 1 and r > residuals[-2]:
            growth += 1
            if rho == 1.0:
                rho = 0.5
            if growth >= 3:
                raise DivergenceError("Picard residuals grew three iterations in a row", history, residuals)
        else:
            growth = 0
        if r < tol:
            converged = True
            break
    M = 0.0
    if estimate_m and interaction == "equilibrium":
        M, _, _ = estimate_M(cfg, coeffs, U, M_outer, dt, seed, pairs=m_pairs, interaction=interaction, noise=noise)
    report = check_uniqueness(delta, e, M, cfg.x0_total)
    iterations = next((i for i, r in enumerate(residuals) if r < tol), len(residuals))
    return EquilibriumResult(U, EquilibriumRule(U, delta, e, tilt), iterations, residuals,
                             measured_ratio(residuals), report.unique, report, converged, rho, history)


# --- value estimates at a state ----------------------------------------------

def _continuation_ratio(coeffs, X, Z, noise, dt, delta, e_c_mean, benchmark="closure", interaction="markov",
                        zfun=None):
    """Samples of ``V(T) L(T) / L(t)`` for start states ``X, Z`` (batch + ``(n,)``).

    ``noise`` has shape ``(P, steps, n)`` and is shared by every start state.
    Returns an array of shape ``batch + (P,)``.
    """
    X = np.asarray(X, float)[..., None, :]
    Z = np.asarray(Z, float)[..., None, :]
    res = run_engine(coeffs, X, Z, noise, dt, interaction=interaction, zfun=zfun, keep_path=False)
    XT, ZT, LT = res.X[..., 0, :], res.Z[..., 0, :], np.exp(res.logL[..., 0])
    if benchmark == "closure":
        VT = delta * terminal_mult(delta, e_c_mean) * XT.sum(-1)
    elif benchmark == "state":
        VT = benchmark_values(XT, ZT, delta)
    else:
        raise ConfigError(f"unknown benchmark {benchmark!r}")
    return VT * LT


def _forward_state(cfg, coeffs, t, dt, seed, interaction, value):
    k = int(round(t / dt))
    x0 = np.asarray(cfg.x0, float)
    noise = rng.brownian_increments(seed, k, cfg.n, dt)[None]
    zfun = equilibrium_interaction(value, cfg.delta, cfg.e_c_mean) if interaction == "equilibrium" else None
    res = run_engine(coeffs, x0, _initial_z(cfg, value), noise, dt, interaction=interaction, zfun=zfun)
    return MarketState(k * dt, res.X[0, -1], res.Z[0, -1])


def estimate_U(cfg, coeffs, strategy_rule, t, M_outer, dt, seed, *, state=None, benchmark="closure",
               interaction="markov", value=None, M_inner=64, return_samples=False):
    """Monte Carlo value ``U(T-t) = E[V(T) L(T) / L(t) | state] / V(t)``.

    ``benchmark="closure"`` uses the equilibrium terminal benchmark
    ``delta C_f X(T)``; ``"state"`` uses ``delta X(T) + (1-delta) sum Z(T)`` of
    the simulated terminal state.  With ``interaction="ensemble"`` every
    continuation carries ``M_inner`` type particles following
    ``strategy_rule`` and ``Z`` is their average.  When ``state`` is omitted it
    is simulated forward from ``x0`` on the ``seed`` common-noise path.

    Raises
    ------
    DegeneracyError
        If the benchmark at the start state is below 1e-12.
    """
    if state is None:
        state = _forward_state(cfg, coeffs, t, dt, seed, interaction if interaction != "ensemble" else "markov", value)
    steps = int(round((cfg.T - t) / dt))
    if steps == 0:
        return UEstimate(1.0, 0.0)
    Vt = float(benchmark_values(state.X, state.Z, cfg.delta))
    if not Vt > DENOM_FLOOR:
        raise DegeneracyError(f"benchmark {Vt} too small at t={t}")
    noise = rng.brownian_increments(seed, steps, cfg.n, dt, paths=M_outer, purpose=rng.CONTINUATION)
    if interaction == "ensemble":
        c, v0 = cfg.type_law.sample(M_inner, seed)
        v0 = v0 * state.Z.sum() / v0.mean()
        res = run_engine(coeffs, state.X, state.Z, noise, dt, t0=t, c=c, v0=v0, rule=strategy_rule,
                         interaction="ensemble", keep_path=False)
        XT, LT = res.X[:, 0], np.exp(res.logL[:, 0])
        if benchmark == "closure":
            VT = cfg.delta * terminal_mult(cfg.delta, cfg.e_c_mean) * XT.sum(-1)
        else:
            VT = cfg.delta * XT.sum(-1) + (1 - cfg.delta) * res.mean_V[:, -1]
        samples = VT * LT
    else:
        zfun = None
        if interaction == "equilibrium":
            zfun = equilibrium_interaction(value, cfg.delta, cfg.e_c_mean, k0=int(round(t / dt)))
        samples = _continuation_ratio(coeffs, state.X, state.Z, noise, dt, cfg.delta, cfg.e_c_mean,
                                      benchmark, interaction, zfun)
    samples = samples / Vt
    est = UEstimate(float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(samples.size)))
    return (est, samples) if return_samples else est


# --- strategies -----------------------------------------------------------------

def _bumped_states(X, Z, h):
    """Base state followed by relative bumps ``x_i(1 +- h)`` then ``z_i(1 +- h)``."""
    X, Z = np.asarray(X, float), np.asarray(Z, float)
    n = X.shape[-1]
    Xs = [X]
    Zs = [Z]
    for which in ("x", "z"):
        for i in range(n):
            for sgn in (1.0, -1.0):
                Xb, Zb = X.copy(), Z.copy()
                if which == "x":
                    Xb[..., i] *= 1 + sgn * h
                else:
                    Zb[..., i] *= 1 + sgn * h
                Xs.append(Xb)
                Zs.append(Zb)
    return np.stack(Xs, axis=-2), np.stack(Zs, axis=-2)


def _elasticities(logu, n, h):
    """Central log-elasticities from values on the ``_bumped_states`` stencil."""
    ex = np.stack([(logu[..., 1 + 2 * i] - logu[..., 2 + 2 * i]) / (2 * h) for i in range(n)], axis=-1)
    ez = np.stack([(logu[..., 1 + 2 * n + 2 * i] - logu[..., 2 + 2 * n + 2 * i]) / (2 * h) for i in range(n)], axis=-1)
    return ex, ez


def continuation_u_fn(cfg, coeffs, t, M_outer, dt, seed, *, c=0.0, benchmark="closure", interaction="markov",
                      value=None):
    """Batched ``u(X, Z)`` at time ``t`` using one shared set of continuation paths."""
    steps = int(round((cfg.T - t) / dt))
    noise = rng.brownian_increments(seed, steps, cfg.n, dt, paths=M_outer, purpose=rng.CONTINUATION)
    zfun = None
    if interaction == "equilibrium":
        zfun = equilibrium_interaction(value, cfg.delta, cfg.e_c_mean, k0=int(round(t / dt)))

    def u_fn(X, Z):
        if steps == 0:
            return np.full(np.shape(X)[:-1], np.exp(c))
        s = _continuation_ratio(coeffs, X, Z, noise, dt, cfg.delta, cfg.e_c_mean, benchmark, interaction, zfun)
        return np.exp(c) * s.mean(-1) / benchmark_values(X, Z, cfg.delta)

    return u_fn


@dataclass
class StrategyReport:
    weights: np.ndarray
    raw: np.ndarray
    raw_sum: float
    renormalized: bool
    flagged: bool
    u: float


def strategy_from_U(U, state, coeffs, inv_type, fd_step=1e-3, *, cfg=None, M_outer=4096, dt=None, seed=0,
                    u_fn=None, delta=None, interaction="markov", return_report=False):
    """Fixed-point strategy ``pi*_i = X_i D_xi log u + Z_i D_zi log u + Pi_i``.

    Log-gradients are central differences with relative bump ``fd_step``.
    ``u`` comes from ``u_fn(X, Z)`` when given, else from Monte Carlo
    continuations sharing one set of paths across the stencil (common random
    numbers).  The weights are renormalized when their sum is within 0.05 of
    one; otherwise they are returned raw and flagged.

    Raises
    ------
    DegeneracyError
        If ``u`` is not positive at some stencil point.
    """
    if u_fn is None:
        if cfg is None:
            raise ConfigError("either u_fn or cfg is required")
        dt = dt or cfg.dt
        u_fn = continuation_u_fn(cfg, coeffs, state.t, M_outer, dt, seed, c=inv_type.c,
                                 interaction=interaction, value=U)
    if delta is None:
        delta = cfg.delta
    X, Z = np.asarray(state.X, float), np.asarray(state.Z, float)
    Xs, Zs = _bumped_states(X, Z, fd_step)
    if np.any(Zs < 0):
        raise DegeneracyError("stencil leaves the positive orthant")
    u = np.asarray(u_fn(Xs, Zs), float)
    if np.any(~(u > 0)):
        raise DegeneracyError("value estimate not positive on the stencil")
    ex, ez = _elasticities(np.log(u), X.size, fd_step)
    raw = ex + ez + benchmark_weights(X, Z, delta)
    total = float(raw.sum())
    near = abs(total - 1.0) < RENORM_BAND
    w = raw / total if near else raw
    rep = StrategyReport(w, raw, total, near, not near, float(u[0]))
    return (w, rep) if return_report else w


def homogeneous_strategy(u_fn, X, v, delta, fd_step=1e-3, iters=100, tol=1e-13):
    """Solved-out homogeneous strategy.

    With one type, ``Z = v pi`` and the fixed-point relation solves to
    ``phi_i = (X_i g_xi + delta X_i / V) / (1 - v g_zi - (1-delta) v / V)``,
    ``g = D log u`` at ``(X, v phi)``.  The dependence of ``g`` and ``V`` on
    ``phi`` is resolved by iteration from the market weights.
    """
    X = np.asarray(X, float)
    phi = X / X.sum()
    for _ in range(iters):
        Z = v * phi
        Xs, Zs = _bumped_states(X, Z, fd_step)
        ex, ez = _elasticities(np.log(u_fn(Xs, Zs)), X.size, fd_step)
        gx = ex / X
        gz = np.where(Z > 0, ez / np.where(Z > 0, Z, 1.0), 0.0)
        V = delta * X.sum() + (1 - delta) * Z.sum()
        new = (X * gx + delta * X / V) / (1 - v * gz - (1 - delta) * v / V)
        if np.max(np.abs(new - phi)) < tol:
            phi = new
            break
        phi = new
    return phi


def optimal_wealth(U, state, delta, e_c_mean, c):
    """``V* = e^c delta U X / (1 - (1-delta) E[e^c] U)``, i.e. ``e^c U V``.

    ``U`` is a scalar value ``U(T-t)`` or a :class:`ValuePath` read at ``state.t``.

    Raises
    ------
    DegeneracyError
        If the denominator is at most 1e-12.
    """
    if isinstance(U, ValuePath):
        U = U.U[U.index(state.t)]
    den = 1.0 - (1.0 - delta) * e_c_mean * U
    if not den > DENOM_FLOOR:
        raise DegeneracyError("optimal wealth denominator at its pole")
    return float(np.exp(c) * delta * U * state.total_cap / den)


# --- cost functional -------------------------------------------------------------

def log_wealth_growth(X, Z, pi, dW, dt, coeffs):
    """``log V(T)/V(0)`` from left-point strategies along a grid.

    ``X``, ``Z`` : ``batch + (K+1, n)``; ``pi`` : ``batch + (K, n)`` or ``(K+1, n)``;
    ``dW`` : ``batch + (K, n)``.
    """
    X, Z, pi, dW = (np.asarray(a, float) for a in (X, Z, pi, dW))
    K = dW.shape[-2]
    Xl, Zl, pl = X[..., :K, :], Z[..., :K, :], pi[..., :K, :]
    beta, alpha, sig = coeffs.beta(Xl, Zl), coeffs.alpha(Xl, Zl), coeffs.sigma(Xl, Zl)
    shock = (sig @ dW[..., None])[..., 0]
    quad = np.einsum("...i,...ij,...j->...", pl, alpha, pl)
    return np.sum(np.sum(pl * beta, -1) * dt - 0.5 * quad * dt + np.sum(pl * shock, -1), axis=-1)


def cost_J(path, pi, v0, bench, coeffs):
    """``J = (V_b(T)/V_b(0)) exp(-int pi'(beta - alpha pi/2) dt - int pi'sigma dW)``.

    ``path`` provides ``t``, ``X``, ``Z`` and Brownian increments ``dW``
    (a :class:`~mfarb.sde.TrajectoryRecord` or any object with those
    attributes); ``bench`` is the benchmark path on the same grid.  ``J`` does
    not depend on ``v0``; the identity ``J V(T)/V(0) = V_b(T)/V_b(0)`` holds
    exactly for the log-Euler wealth.
    """
    dW = path.noise.increments if hasattr(path, "noise") and path.noise is not None else path.dW
    dt = float(path.t[1] - path.t[0])
    g = log_wealth_growth(path.X, path.Z, pi, dW, dt, coeffs)
    bench = np.asarray(bench, float)
    return bench[..., -1] / bench[..., 0] * np.exp(-g)


@dataclass
class CostCheck:
    mean_J: float
    stderr_J: float
    U_T: float
    stderr_U: float
    J: np.ndarray = field(repr=False, default=None)

    @property
    def gap(self):
        return abs(self.mean_J - self.U_T)

    @property
    def tolerance(self):
        return 3.0 * np.hypot(self.stderr_J, self.stderr_U)


def cost_consistency(cfg, coeffs, value, P, M_fd, dt, seed, *, fd_step=1e-2, U_se=None):
    """Mean ``J(pi*)`` over ``P`` outer paths against ``U(T)``.

    Along each outer path the strategy ``pi* = X D_x log u + Z D_z log u + Pi`` is
    evaluated at every step from ``M_fd`` bumped continuations (fresh
    continuation paths per outer path, shared across the stencil), the wealth
    is rolled forward with log-Euler and ``J`` is formed against the
    equilibrium benchmark ``delta X f(U(T-t))``.  Markov interaction.
    """
    delta, e = cfg.delta, cfg.e_c_mean
    K = int(round(cfg.T / dt))
    if len(value.t) != K + 1:
        raise ConfigError("value path grid must match dt")
    n = cfg.n
    x0 = np.asarray(cfg.x0, float)
    outer = outer_noise(seed, P, K, n, dt, purpose=rng.COMMON_NOISE)
    res = run_engine(coeffs, x0, _initial_z(cfg, value), outer, dt, interaction="markov")
    X, Z = res.X, res.Z
    inner = np.stack([np.sqrt(dt) * rng.stream(seed, rng.BUMP, p).standard_normal((M_fd, K, n)) for p in range(P)])
    Cf = terminal_mult(delta, e)
    pi = np.empty((P, K, n))
    for k in range(K):
        Xs, Zs = _bumped_states(X[:, k], Z[:, k], fd_step)       # (P, B, n)
        noise = inner[:, None, :, k:, :]                          # (P, 1, M_fd, K-k, n)
        r = run_engine(coeffs, Xs[..., None, :], Zs[..., None, :], noise, dt, keep_path=False)
        VT = delta * Cf * r.X[..., 0, :].sum(-1) * np.exp(r.logL[..., 0])
        u = VT.mean(-1) / benchmark_values(Xs, Zs, delta)
        ex, ez = _elasticities(np.log(u), n, fd_step)
        pi[:, k] = ex + ez + benchmark_weights(X[:, k], Z[:, k], delta)
    g = log_wealth_growth(X, Z, pi, outer, dt, coeffs)
    bench = delta * X.sum(-1) * f_mult(value.U, delta, e)
    J = bench[:, -1] / bench[:, 0] * np.exp(-g)
    se_U = float(value.stderr[0]) if U_se is None else U_se
    return CostCheck(float(J.mean()), float(J.std(ddof=1) / np.sqrt(P)), value.U_T, se_U, J)
