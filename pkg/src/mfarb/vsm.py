"""Bundled market models with closed-form oracles.

``vsm``
    Volatility-stabilized market driven by the interaction values:
    ``beta_i = C_x X / (X_i Z_i)`` and ``a_ii = X_i X / Z_i``.
``classic-vsm``
    Scale-invariant volatility-stabilized market with
    ``beta_i = (1 + alpha) v^2 / (2 m_i)`` and ``sigma_ii = v / sqrt(m_i)``.
``geometric``
    Constant ``beta`` and ``sigma``.

In every model the interaction values follow ``gamma_i = Z_i beta_i`` and
``tau_ik = Z_i sigma_ik`` so that ``tau theta = gamma``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng
from .deflator import HFunction
from .errors import ConfigError, SingularityError
from .model import Z_FLOOR, CoefficientSet, benchmark_values

BETA_CAP = 1e4


class CapCounter:
    """Counts how often the drift cap was hit."""

    def __init__(self):
        self.count = 0


@dataclass(frozen=True)
class VsmConfig:
    C_x: float = 1.0
    n: int = 2
    x0: tuple = (1.0, 1.0)
    z0: Optional[tuple] = None
    beta_cap: float = BETA_CAP

    def __post_init__(self):
        if not self.C_x > 0:
            raise ConfigError("C_x must be positive")
        if len(self.x0) != self.n or any(x <= 0 for x in self.x0):
            raise ConfigError("x0 must hold n positive capitalizations")
        if self.z0 is not None and (len(self.z0) != self.n or any(z < 0 for z in self.z0)):
            raise ConfigError("z0 must hold n nonnegative values")


def _diag(v):
    return v[..., :, None] * np.eye(v.shape[-1])


def _from_beta_sigma(beta_fn, sigd_fn, name, params, theta_fn=None):
    """CoefficientSet for diagonal ``sigma`` with ``gamma = Z beta`` and ``tau = Z sigma``."""
    def b(X, Z):
        return np.asarray(X) * beta_fn(X, Z)

    def s(X, Z):
        return _diag(np.asarray(X) * sigd_fn(X, Z))

    def a(X, Z):
        return _diag((np.asarray(X) * sigd_fn(X, Z)) ** 2)

    def gamma(X, Z):
        return np.asarray(Z) * beta_fn(X, Z)

    def tau(X, Z):
        return _diag(np.asarray(Z) * sigd_fn(X, Z))

    def psi(X, Z):
        return _diag((np.asarray(Z) * sigd_fn(X, Z)) ** 2)

    if theta_fn is None:
        def theta_fn(X, Z):
            return beta_fn(X, Z) / sigd_fn(X, Z)

    return CoefficientSet(b, s, gamma, tau, name=name, a_fn=a, psi_fn=psi, theta_fn=theta_fn, params=params)


def vsm_coefficients(cfg):
    """Coefficients of the interaction-driven volatility-stabilized market.

    The ratio ``X / (X_i Z_i)`` is capped so that ``beta_i <= cfg.beta_cap``;
    the same capped ratio feeds ``sigma``.  Hits are counted in
    ``coeffs.params["cap"].count``.

    Raises
    ------
    SingularityError
        When evaluated at a state with some ``Z_i`` below the interaction floor.
    """
    counter = CapCounter()
    C = float(cfg.C_x)

    def ratio(X, Z):
        X, Z = np.asarray(X, float), np.asarray(Z, float)
        if np.any(Z < Z_FLOOR):
            raise SingularityError("interaction value at or below its floor", component=int(np.argmin(Z.reshape(-1, Z.shape[-1]).min(0))))
        return X.sum(axis=-1, keepdims=True) / (X * Z)

    def capped(X, Z):
        # one cap on the shared ratio keeps beta, sigma and theta = beta / sigma consistent
        r = ratio(X, Z)
        hit = C * r > cfg.beta_cap
        if np.any(hit):
            counter.count += int(hit.sum())
            r = np.minimum(r, cfg.beta_cap / C)
        return r

    def beta(X, Z):
        return C * capped(X, Z)

    def sigd(X, Z):
        return np.sqrt(capped(X, Z))

    return _from_beta_sigma(beta, sigd, "vsm", {"C_x": C, "cap": counter})


def vsm_H(cfg):
    """``H(x) = C_x sum log x_i`` with analytic derivatives (no z dependence)."""
    C = float(cfg.C_x)

    def H(x, z):
        return C * np.sum(np.log(x), axis=-1)

    def gx(x, z):
        return C / np.asarray(x, float)

    def zero_vec(x, z):
        return np.zeros(np.shape(x))

    def hxx(x, z):
        return _diag(-C / np.asarray(x, float) ** 2)

    def zero_mat(x, z):
        return np.zeros(np.shape(x) + (np.shape(x)[-1],))

    return HFunction(H, gx, zero_vec, hxx, zero_mat, zero_mat)


def vsm_closed_form_L(X, Z, t, x0, C_x=1.0):
    """Closed-form VSM deflator along a grid.

    ``L = prod (x_j / X_j)^C_x * exp(-int k)`` with
    ``k = C_x (1 - C_x) / 2 * sum_i X / (X_i Z_i)``; the integral vanishes for
    ``C_x = 1``.  ``X`` and ``Z`` have time on the second-to-last axis.
    """
    X, Z = np.asarray(X, float), np.asarray(Z, float)
    logL = C_x * np.sum(np.log(np.asarray(x0, float)) - np.log(X), axis=-1)
    if C_x != 1.0:
        k = 0.5 * C_x * (1 - C_x) * np.sum(X.sum(-1, keepdims=True) / (X * Z), axis=-1)
        dt = np.diff(np.asarray(t, float))
        integ = np.concatenate([np.zeros(k.shape[:-1] + (1,)), np.cumsum(k[..., :-1] * dt, axis=-1)], axis=-1)
        logL = logL - integ
    return np.exp(logL)


def equilibrium_z0(x0, delta, e_c_mean, U_T=1.0):
    """Initial interaction values consistent with optimal wealth at time 0.

    The benchmark starts at ``V0 = delta x0 / (1 - (1-delta) E[e^c] U_T)`` and the
    population wealth is ``E[e^c] U_T V0``, split in proportion to ``x0``.
    """
    x0 = np.asarray(x0, float)
    denom = 1.0 - (1.0 - delta) * e_c_mean * U_T
    if not denom > 0:
        raise ConfigError("initial value lies outside the band where f(U) is finite")
    V0 = delta * x0.sum() / denom
    return e_c_mean * U_T * V0 * x0 / x0.sum()


def vsm_initial_state(cfg, delta, e_c_mean, U_T=1.0):
    """``(x0, z0)`` with ``z0`` auto-initialized unless ``cfg.z0`` is set."""
    x0 = np.asarray(cfg.x0, float)
    z0 = equilibrium_z0(x0, delta, e_c_mean, U_T) if cfg.z0 is None else np.asarray(cfg.z0, float)
    return x0, z0


def vsm_u_oracle(cfg, delta, e_c_mean, c, state, T, M_oracle=100_000, dt=1.0 / 256, seed=0, chunk=8192):
    """Independent VSM value ``u = delta e^c prod X_i E[X(T)/prod X_i(T)] / (V (1 - (1-delta) E[e^c]))``.

    The conditional expectation is a Monte Carlo average over ``M_oracle``
    continuations from ``state`` on the oracle noise streams.  Because
    ``gamma = Z beta`` and ``tau = Z sigma``, the ratios ``Z_i / X_i`` are
    conserved, so only ``log X`` is integrated (own log-Euler loop, no call
    into the simulation engine) and positivity holds by construction.  For
    ``n = 1`` the expectation is one and nothing is simulated.

    Returns
    -------
    u, stderr : float
    """
    X, Z = np.asarray(state.X, float), np.asarray(state.Z, float)
    V = float(benchmark_values(X, Z, delta))
    pref = delta * np.exp(c) / (V * (1.0 - (1.0 - delta) * e_c_mean))
    steps = int(round((T - state.t) / dt))
    if X.size == 1 or steps == 0:
        # X(T) / prod X_i(T) is deterministic: 1 for one asset, the current value at t = T
        return float(pref * X.sum()), 0.0
    if np.any(Z <= Z_FLOOR):
        raise SingularityError("interaction value at or below its floor")
    C = float(cfg.C_x)
    kappa = Z / X
    logprod0 = np.sum(np.log(X))
    vals = []
    for start in range(0, M_oracle, chunk):
        P = min(chunk, M_oracle - start)
        dW = np.stack([np.sqrt(dt) * rng.stream(seed, rng.ORACLE, p).standard_normal((steps, X.size))
                       for p in range(start, start + P)])
        logX = np.broadcast_to(np.log(X), (P, X.size)).copy()
        for k in range(steps):
            Xk = np.exp(logX)
            r = np.minimum(Xk.sum(-1, keepdims=True) / (kappa * Xk * Xk), cfg.beta_cap / C)
            logX += (C - 0.5) * r * dt + np.sqrt(r) * dW[:, k]
        XT = np.exp(logX)
        vals.append(np.exp(np.log(XT.sum(-1)) - logX.sum(-1) + logprod0))
    vals = np.concatenate(vals)
    return float(pref * vals.mean()), float(pref * vals.std(ddof=1) / np.sqrt(vals.size))


def vsm_u_closed_n1(delta, e_c_mean, c, state):
    """Analytic one-asset value ``delta e^c x / (V (1 - (1-delta) E[e^c]))``."""
    V = float(benchmark_values(state.X, state.Z, delta))
    return float(delta * np.exp(c) * state.X.sum() / (V * (1.0 - (1.0 - delta) * e_c_mean)))


def classic_vsm_coefficients(alpha=1.0, vol=1.0):
    """Scale-invariant volatility-stabilized market.

    ``beta_i = (1 + alpha) vol^2 / (2 m_i)``, ``sigma_ii = vol / sqrt(m_i)``.
    With ``alpha = 1`` the deflator is ``prod x_j / X_j``.
    """
    k = 0.5 * (1.0 + alpha) * vol ** 2

    def inv_m(X, Z):
        X = np.asarray(X, float)
        return X.sum(axis=-1, keepdims=True) / X

    return _from_beta_sigma(lambda X, Z: k * inv_m(X, Z), lambda X, Z: vol * np.sqrt(inv_m(X, Z)),
                            "classic-vsm", {"alpha": alpha, "vol": vol})


def classic_vsm_H(alpha=1.0):
    """Generator ``H = (1 + alpha)/2 * sum log x_i`` of the classic model.

    ``k = C (1 - C) vol^2 / 2 * sum 1/m_i`` with ``C = (1 + alpha)/2``, so ``k = 0``
    at ``alpha = 1``.
    """
    return vsm_H(VsmConfig(C_x=0.5 * (1.0 + alpha), n=1, x0=(1.0,)))


def geometric_coefficients(beta, sigma):
    """Constant ``beta`` vector and ``sigma`` matrix (geometric Brownian capitalizations)."""
    beta = np.asarray(beta, float)
    sigma = np.atleast_2d(np.asarray(sigma, float))
    if sigma.shape != (beta.size, beta.size):
        raise ConfigError("sigma must be n x n")
    if np.linalg.cond(sigma) > 1e10:
        raise SingularityError("sigma is singular")
    theta = np.linalg.solve(sigma, beta)

    def b(X, Z):
        return np.asarray(X) * beta

    def s(X, Z):
        return np.asarray(X)[..., :, None] * sigma

    def gamma(X, Z):
        return np.asarray(Z) * beta

    def tau(X, Z):
        return np.asarray(Z)[..., :, None] * sigma

    def th(X, Z):
        return np.broadcast_to(theta, np.shape(X)).copy()

    return CoefficientSet(b, s, gamma, tau, name="geometric", theta_fn=th,
                          params={"beta": beta.tolist(), "sigma": sigma.tolist()})


def arithmetic_coefficients(b_const, s_const):
    """Constant arithmetic drift and diffusion ``dX = b dt + s dW`` (frozen interaction)."""
    b_const = np.asarray(b_const, float)
    s_const = np.atleast_2d(np.asarray(s_const, float))

    def b(X, Z):
        return np.broadcast_to(b_const, np.shape(X)).copy()

    def s(X, Z):
        return np.broadcast_to(s_const, np.shape(X) + (b_const.size,)).copy()

    def zero_vec(X, Z):
        return np.zeros(np.shape(X))

    def zero_mat(X, Z):
        return np.zeros(np.shape(X) + (b_const.size,))

    return CoefficientSet(b, s, zero_vec, zero_mat, name="arithmetic")


def build_model(name, **kw):
    """Model registry used by the command line."""
    if name == "vsm":
        cfg = kw.get("vsm") or VsmConfig()
        return vsm_coefficients(cfg), vsm_H(cfg)
    if name == "classic-vsm":
        a = kw.get("alpha", 1.0)
        return classic_vsm_coefficients(a, kw.get("vol", 1.0)), classic_vsm_H(a)
    if name in ("geometric", "custom"):
        return geometric_coefficients(kw["beta"], kw["sigma"]), None
    raise ConfigError(f"unknown model {name!r}")


MODELS = ("vsm", "classic-vsm", "geometric", "custom")
