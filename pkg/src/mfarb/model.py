"""Domain types shared by every module: market state, coefficients, investor types.

Arrays follow one convention throughout the package: the last axis indexes
assets (length ``n``); any leading axes are batch axes (paths, particles,
grid nodes).  Coefficient callables must accept such batched inputs.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, stats

from .errors import ConfigError, DegeneracyError, SingularityError

Z_FLOOR = 1e-12
COND_LIMIT = 1e10


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MarketState:
    """Joint market state at time ``t``: capitalizations and interaction values."""

    t: float
    X: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        X = _frozen(self.X)
        Z = _frozen(self.Z)
        if X.ndim != 1 or X.shape != Z.shape:
            raise ConfigError(f"X and Z must be equal-length vectors, got {X.shape} and {Z.shape}")
        if not np.all(X > 0):
            raise ConfigError("capitalization must be positive")
        if not np.all(Z >= 0):
            raise ConfigError("interaction values must be nonnegative")
        if self.t < 0:
            raise ConfigError("time must be nonnegative")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Z", Z)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def total_cap(self):
        return float(self.X.sum())

    @property
    def market_weights(self):
        return self.X / self.X.sum()


def market_weights(X):
    X = np.asarray(X, dtype=float)
    return X / X.sum(axis=-1, keepdims=True)


def benchmark_values(X, Z, delta):
    """Vectorized benchmark ``delta * sum(X) + (1 - delta) * sum(Z)``."""
    return delta * np.sum(X, axis=-1) + (1.0 - delta) * np.sum(Z, axis=-1)


def benchmark_weights(X, Z, delta):
    """Vectorized benchmark portfolio ``(delta X_i + (1-delta) Z_i) / V``."""
    V = benchmark_values(X, Z, delta)
    if np.any(V <= 0):
        raise DegeneracyError("benchmark value must be positive")
    return (delta * np.asarray(X) + (1.0 - delta) * np.asarray(Z)) / V[..., None]


def benchmark_value(state, delta):
    """Benchmark ``V(t) = delta X(t) + (1 - delta) E[V(t) | F^B_t]``.

    The population wealth given the common noise is the sum of the interaction
    components, so only the state is needed.

    Raises
    ------
    DegeneracyError
        If the result is not strictly positive.
    """
    v = float(benchmark_values(state.X, state.Z, delta))
    if not v > 0:
        raise DegeneracyError(f"benchmark value {v} is not positive")
    return v


def benchmark_portfolio(state, delta):
    """Weights of the strategy replicating the benchmark; they sum to one."""
    return benchmark_weights(state.X, state.Z, delta)


@dataclass(frozen=True)
class CoefficientSet:
    """State-dependent market and interaction coefficients.

    ``b`` and ``gamma`` map ``(X, Z)`` to drift vectors; ``s`` and ``tau`` map to
    ``n x n`` diffusion matrices.  ``b_i = X_i beta_i`` and ``s_ik = X_i sigma_ik``.
    Optional analytic ``a``, ``psi`` and ``theta`` replace the generic
    computations when supplied.
    """

    b: Callable
    s: Callable
    gamma: Callable
    tau: Callable
    name: str = "custom"
    a_fn: Optional[Callable] = None
    psi_fn: Optional[Callable] = None
    theta_fn: Optional[Callable] = None
    params: dict = field(default_factory=dict)

    def beta(self, X, Z):
        return self.b(X, Z) / X

    def sigma(self, X, Z):
        return self.s(X, Z) / np.asarray(X)[..., :, None]

    def a(self, X, Z):
        if self.a_fn is not None:
            return self.a_fn(X, Z)
        s = self.s(X, Z)
        return s @ np.swapaxes(s, -1, -2)

    def alpha(self, X, Z):
        X = np.asarray(X)
        return self.a(X, Z) / (X[..., :, None] * X[..., None, :])

    def psi(self, X, Z):
        if self.psi_fn is not None:
            return self.psi_fn(X, Z)
        t = self.tau(X, Z)
        return t @ np.swapaxes(t, -1, -2)

    def theta(self, X, Z):
        """Market price of risk solving ``sigma theta = beta``.

        Raises
        ------
        SingularityError
            If the volatility matrix has condition number above 1e10.
        """
        if self.theta_fn is not None:
            return self.theta_fn(X, Z)
        sig = self.sigma(X, Z)
        cond = np.linalg.cond(sig)
        if np.any(~np.isfinite(cond)) or np.any(cond > COND_LIMIT):
            raise SingularityError(f"volatility matrix singular (cond={np.max(cond):.3g})")
        return np.linalg.solve(sig, self.beta(X, Z)[..., None])[..., 0]

    def consistency_residual(self, X, Z):
        """Max of ``|sigma theta - beta|`` and ``|tau theta - gamma|`` over a batch."""
        th = self.theta(X, Z)[..., None]
        r1 = np.abs((self.sigma(X, Z) @ th)[..., 0] - self.beta(X, Z))
        r2 = np.abs((self.tau(X, Z) @ th)[..., 0] - self.gamma(X, Z))
        return float(max(r1.max(), r2.max()))

    def lipschitz_diagnostic(self, X, Z, rel_step=1e-3, seed=0):
        """Largest sampled difference quotient of ``(b, s, gamma, tau)``.

        Diagnostic only: a finite value is necessary, not sufficient, for the
        Lipschitz condition.
        """
        rng = np.random.default_rng(seed)
        X = np.atleast_2d(X)
        Z = np.atleast_2d(Z)
        dX = rel_step * X * rng.standard_normal(X.shape)
        dZ = rel_step * np.maximum(Z, 1.0) * rng.standard_normal(Z.shape)
        X2, Z2 = np.abs(X + dX), np.abs(Z + dZ)
        num = 0.0
        for f in (self.b, self.gamma):
            num = num + np.linalg.norm(f(X2, Z2) - f(X, Z), axis=-1)
        for f in (self.s, self.tau):
            num = num + np.linalg.norm(f(X2, Z2) - f(X, Z), axis=(-2, -1))
        den = np.linalg.norm(X2 - X, axis=-1) + np.linalg.norm(Z2 - Z, axis=-1)
        return float(np.max(num / den))


@dataclass(frozen=True)
class InvestorType:
    c: float
    v0: float

    def __post_init__(self):
        if not self.v0 > 0:
            raise ConfigError("initial wealth must be positive")


@dataclass(frozen=True)
class TypeLaw:
    """Preference law ``c ~ Normal(mu_c, sigma_c^2)`` truncated to ``[c_min, c_max]``.

    Initial wealth is ``v0 = v0_scale * exp(c)``.  ``sigma_c = 0`` gives
    homogeneous players with ``c = mu_c``.
    """

    mu_c: float = 0.0
    sigma_c: float = 0.0
    c_min: float = -np.inf
    c_max: float = np.inf
    v0_scale: float = 1.0

    @classmethod
    def homogeneous(cls, c, v0_scale=1.0):
        return cls(mu_c=c, sigma_c=0.0, v0_scale=v0_scale)

    @classmethod
    def with_mean_exp(cls, e_c_mean, sigma_c=0.0, width=3.0, v0_scale=1.0):
        """Law whose ``E[e^c]`` equals ``e_c_mean`` (symmetric truncation at +-width sd)."""
        lo, hi = -width * sigma_c, width * sigma_c
        base = cls(0.0, sigma_c, lo, hi, v0_scale) if sigma_c > 0 else cls(0.0, 0.0)
        shift = np.log(e_c_mean / base.e_c_mean())
        return cls(shift, sigma_c, lo + shift, hi + shift, v0_scale) if sigma_c > 0 else cls(shift, 0.0, v0_scale=v0_scale)

    def _bounds(self):
        return (self.c_min - self.mu_c) / self.sigma_c, (self.c_max - self.mu_c) / self.sigma_c

    def ppf(self, u):
        if self.sigma_c == 0:
            return np.full(np.shape(u), float(self.mu_c))
        a, b = self._bounds()
        return stats.truncnorm.ppf(u, a, b, loc=self.mu_c, scale=self.sigma_c)

    def sample(self, M, seed):
        """Draw ``M`` types keyed by particle index: particle ``l`` always gets draw ``l``.

        Returns ``(c, v0)`` arrays.
        """
        from .rng import TYPES, stream

        u = stream(seed, TYPES).random(M)
        c = self.ppf(u)
        return c, self.v0_scale * np.exp(c)

    def e_c_mean(self):
        """``E[e^c]`` by adaptive quadrature."""
        if self.sigma_c == 0:
            return float(np.exp(self.mu_c))
        a, b = self._bounds()
        dist = stats.truncnorm(a, b, loc=self.mu_c, scale=self.sigma_c)
        lo = max(self.c_min, self.mu_c - 12 * self.sigma_c)
        hi = min(self.c_max, self.mu_c + 12 * self.sigma_c)
        val, _ = integrate.quad(lambda c: np.exp(c) * dist.pdf(c), lo, hi, epsabs=1e-13, epsrel=1e-12)
        return float(val)


@dataclass(frozen=True)
class GameConfig:
    """Parameters of one relative-arbitrage game."""

    delta: float
    T: float
    x0: tuple
    type_law: TypeLaw = field(default_factory=TypeLaw)
    seed: int = 0
    e_c_override: Optional[float] = None
    z0: Optional[tuple] = None
    dt: float = 1.0 / 256

    @property
    def n(self):
        return len(self.x0)

    @property
    def e_c_mean(self):
        if self.e_c_override is not None:
            return float(self.e_c_override)
        return self.type_law.e_c_mean()

    @property
    def x0_total(self):
        return float(np.sum(self.x0))

    @property
    def steps(self):
        return int(round(self.T / self.dt))


@dataclass
class Check:
    name: str
    passed: bool
    value: object = None
    message: str = ""


@dataclass
class ValidationReport:
    checks: list

    @property
    def ok(self):
        return all(c.passed for c in self.checks)

    @property
    def failures(self):
        return [c for c in self.checks if not c.passed]

    def raise_if_failed(self):
        if not self.ok:
            raise ConfigError("; ".join(f"{c.message} (got {c.value!r})" for c in self.failures))

    def as_dict(self):
        return [dict(name=c.name, passed=c.passed, value=repr(c.value), message=c.message) for c in self.checks]


def validate_config(cfg):
    """Check a ``GameConfig`` against the model's standing assumptions.

    Never raises; every failure is recorded in the returned report.
    """
    checks = []

    def add(name, ok, value, msg):
        checks.append(Check(name, bool(ok), value, "" if ok else msg))

    add("delta", 0 < cfg.delta <= 1, cfg.delta, "delta out of (0,1]")
    add("horizon", cfg.T > 0, cfg.T, "horizon T must be positive")
    x0 = np.asarray(cfg.x0, dtype=float)
    add("x0", x0.ndim == 1 and x0.size >= 1 and np.all(x0 > 0) and np.all(np.isfinite(x0)),
        tuple(x0.tolist()), "capitalization must be positive")
    try:
        e = cfg.e_c_mean
    except Exception as exc:  # quadrature failure is a config problem
        e = repr(exc)
    add("e_c_mean", isinstance(e, float) and np.isfinite(e) and e > 0, e, "E[e^c] must be positive")
    law = cfg.type_law
    add("type_law", law.sigma_c >= 0 and law.c_min < law.c_max and law.v0_scale > 0,
        (law.sigma_c, law.c_min, law.c_max, law.v0_scale), "type law must have sigma_c >= 0, c_min < c_max, v0_scale > 0")
    if cfg.z0 is not None:
        z0 = np.asarray(cfg.z0, dtype=float)
        add("z0", z0.shape == x0.shape and np.all(z0 >= 0), tuple(z0.tolist()),
            "interaction values must be nonnegative and match x0")
    k = cfg.T / cfg.dt if cfg.dt > 0 else np.nan
    add("dt", cfg.dt > 0 and abs(k - round(k)) < 1e-9, cfg.dt, "dt must divide T")
    return ValidationReport(checks)
