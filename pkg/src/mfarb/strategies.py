"""Strategy rules.

A strategy rule is a callable ``rule(t, X, Z, V, c) -> pi`` where ``X`` and
``Z`` have shape ``(P, n)`` (one row per common-noise path), ``V`` has shape
``(P, m)`` (particle wealths) and ``c`` has shape ``(m,)`` (preferences).  It
returns weights broadcastable to ``(P, m, n)``.

Rules must act particle by particle: the weight of particle ``l`` may depend
on the market state and on ``(V_l, c_l)`` only.  The engine relies on this to
split particles across workers without changing results.
"""

import numpy as np

from .model import benchmark_weights, market_weights


class MarketPortfolio:
    """Hold the market: ``pi_i = X_i / sum X``."""

    def __call__(self, t, X, Z, V, c):
        return market_weights(X)[:, None, :]

    def describe(self):
        return {"rule": "market"}


class BenchmarkPortfolio:
    """Replicate the benchmark: ``pi_i = (delta X_i + (1-delta) Z_i) / V``."""

    def __init__(self, delta):
        self.delta = float(delta)

    def __call__(self, t, X, Z, V, c):
        return benchmark_weights(X, Z, self.delta)[:, None, :]

    def describe(self):
        return {"rule": "benchmark", "delta": self.delta}


class ConstantWeights:
    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=float)

    def __call__(self, t, X, Z, V, c):
        return np.broadcast_to(self.weights, (X.shape[0], 1, X.shape[-1]))

    def describe(self):
        return {"rule": "constant", "weights": self.weights.tolist()}


class PreferenceTilt:
    """Market portfolio tilted toward equal weights in proportion to ``c - c_ref``.

    ``pi = m + strength * (c - c_ref) * (1/n - m)``; weights still sum to one,
    so players with different preferences hold different portfolios.
    """

    def __init__(self, strength=0.5, c_ref=0.0):
        self.strength = float(strength)
        self.c_ref = float(c_ref)

    def __call__(self, t, X, Z, V, c):
        m = market_weights(X)[:, None, :]
        n = X.shape[-1]
        k = self.strength * (np.asarray(c) - self.c_ref)[None, :, None]
        return m + k * (1.0 / n - m)

    def describe(self):
        return {"rule": "tilt", "strength": self.strength, "c_ref": self.c_ref}


RULES = {"market": MarketPortfolio, "benchmark": BenchmarkPortfolio, "tilt": PreferenceTilt}
