import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfarb.errors import ConfigError, DegeneracyError, SingularityError
from mfarb.model import (
    CoefficientSet,
    GameConfig,
    InvestorType,
    MarketState,
    TypeLaw,
    benchmark_portfolio,
    benchmark_value,
    benchmark_values,
    benchmark_weights,
    market_weights,
    validate_config,
)
from mfarb.vsm import geometric_coefficients

pos = st.floats(1e-3, 1e3, allow_nan=False)
nonneg = st.floats(0.0, 1e3, allow_nan=False)
deltas = st.floats(0.01, 1.0)


def test_validate_default_passes():
    assert validate_config(GameConfig(0.5, 1.0, (1.0, 1.0))).ok


def test_validate_delta_zero():
    rep = validate_config(GameConfig(0.0, 1.0, (1.0, 1.0)))
    assert not rep.ok
    assert [c.message for c in rep.failures] == ["delta out of (0,1]"]
    with pytest.raises(ConfigError, match="delta out of"):
        rep.raise_if_failed()


def test_validate_nonpositive_cap():
    rep = validate_config(GameConfig(0.5, 1.0, (1.0, 0.0)))
    assert "capitalization must be positive" in [c.message for c in rep.failures]


def test_validate_dt_must_divide_T():
    rep = validate_config(GameConfig(0.5, 1.0, (1.0,), dt=0.3))
    assert "dt must divide T" in [c.message for c in rep.failures]


def test_validate_reports_every_failure():
    rep = validate_config(GameConfig(1.5, -1.0, (0.0,), dt=0.3))
    assert len(rep.failures) >= 3
    assert all(isinstance(d["passed"], bool) for d in rep.as_dict())


@pytest.mark.parametrize("delta, X, Z, expected", [
    (1.0, (2.0, 3.0), (7.0, 11.0), 5.0),
    (0.5, (2.0, 3.0), (1.0, 1.0), 3.5),
    (0.5, (1.0, 1.0), (0.0, 0.0), 1.0),
])
def test_benchmark_value_examples(delta, X, Z, expected):
    assert benchmark_value(MarketState(0.0, X, Z), delta) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("delta, X, Z, expected", [
    (1.0, (1.0, 3.0), (5.0, 2.0), (0.25, 0.75)),
    (0.5, (2.0, 2.0), (1.0, 1.0), (0.5, 0.5)),
    (0.5, (2.0, 1.0), (1.0, 0.0), (0.75, 0.25)),
])
def test_benchmark_portfolio_examples(delta, X, Z, expected):
    np.testing.assert_allclose(benchmark_portfolio(MarketState(0.0, X, Z), delta), expected, atol=1e-15)


def test_market_state_validation():
    with pytest.raises(ConfigError, match="capitalization must be positive"):
        MarketState(0.0, (1.0, 0.0), (0.0, 0.0))
    with pytest.raises(ConfigError):
        MarketState(0.0, (1.0, 2.0), (-1.0, 0.0))
    with pytest.raises(ConfigError):
        MarketState(0.0, (1.0, 2.0), (1.0,))
    s = MarketState(0.0, [1.0, 3.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        s.X[0] = 5.0  # frozen arrays


def test_benchmark_degenerate_raises():
    with pytest.raises(DegeneracyError):
        benchmark_weights(np.array([[1.0]]), np.array([[0.0]]), 0.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(pos, min_size=1, max_size=5), st.lists(nonneg, min_size=5, max_size=5), deltas)
def test_benchmark_weights_form_a_portfolio(X, Z, delta):
    X = np.array(X)
    Z = np.array(Z[: X.size])
    w = benchmark_weights(X, Z, delta)
    assert w.sum() == pytest.approx(1.0, rel=1e-12)
    assert np.all(w >= 0) and np.all(w <= 1 + 1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(pos, min_size=1, max_size=5), st.lists(nonneg, min_size=5, max_size=5), deltas,
       st.floats(0.1, 10.0))
def test_benchmark_is_homogeneous(X, Z, delta, lam):
    X = np.array(X)
    Z = np.array(Z[: X.size])
    assert benchmark_values(lam * X, lam * Z, delta) == pytest.approx(lam * benchmark_values(X, Z, delta), rel=1e-12)
    np.testing.assert_allclose(benchmark_weights(lam * X, lam * Z, delta), benchmark_weights(X, Z, delta),
                               rtol=1e-12, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.lists(pos, min_size=1, max_size=6))
def test_market_weights_sum_to_one(X):
    m = market_weights(np.array(X))
    assert m.sum() == pytest.approx(1.0, rel=1e-12)


def test_benchmark_at_delta_one_is_market():
    X, Z = np.array([1.0, 4.0, 5.0]), np.array([3.0, 0.0, 1.0])
    np.testing.assert_allclose(benchmark_weights(X, Z, 1.0), market_weights(X), atol=1e-15)


def test_theta_solves_market_price_of_risk():
    beta = np.array([0.05, 0.02])
    sigma = np.array([[0.2, 0.05], [0.0, 0.3]])
    co = geometric_coefficients(beta, sigma)
    X = np.array([[1.0, 2.0], [3.0, 0.5]])
    th = co.theta(X, np.zeros_like(X))
    np.testing.assert_allclose(np.einsum("ij,...j->...i", sigma, th), np.broadcast_to(beta, X.shape), atol=1e-14)


def test_theta_generic_path_and_singularity():
    def s(X, Z):
        return np.asarray(X)[..., :, None] * np.array([[1.0, 1.0], [1.0, 1.0]])

    co = CoefficientSet(lambda X, Z: 0.1 * np.asarray(X), s, lambda X, Z: np.zeros(np.shape(X)),
                        lambda X, Z: np.zeros(np.shape(X) + (2,)))
    with pytest.raises(SingularityError):
        co.theta(np.array([1.0, 1.0]), np.array([0.0, 0.0]))


def test_generic_a_and_alpha():
    sig = np.array([[0.2, 0.1], [0.0, 0.3]])
    co = CoefficientSet(lambda X, Z: 0 * X, lambda X, Z: np.asarray(X)[..., :, None] * sig,
                        lambda X, Z: 0 * X, lambda X, Z: np.zeros(np.shape(X) + (2,)))
    X = np.array([2.0, 5.0])
    np.testing.assert_allclose(co.alpha(X, X), sig @ sig.T, atol=1e-15)
    np.testing.assert_allclose(co.a(X, X), np.outer(X, X) * (sig @ sig.T), atol=1e-13)
    assert np.isfinite(co.lipschitz_diagnostic(X, X))


def test_investor_type_requires_positive_wealth():
    with pytest.raises(ConfigError):
        InvestorType(0.0, 0.0)


def test_type_law_mean_exp_matches_target():
    for target, sc in ((0.3, 0.0), (0.3, 0.5), (1.2, 0.2)):
        law = TypeLaw.with_mean_exp(target, sc)
        assert law.e_c_mean() == pytest.approx(target, rel=1e-9)


def test_type_law_sampling_prefix_and_bounds():
    law = TypeLaw.with_mean_exp(0.3, 0.5, v0_scale=10.0)
    c1, v1 = law.sample(50, seed=4)
    c2, v2 = law.sample(100, seed=4)
    np.testing.assert_array_equal(c1, c2[:50])
    assert np.all((c2 >= law.c_min) & (c2 <= law.c_max))
    np.testing.assert_allclose(v2, 10.0 * np.exp(c2))


def test_type_law_sample_mean():
    law = TypeLaw.with_mean_exp(0.3, 0.5)
    c, _ = law.sample(20000, seed=1)
    e = np.exp(c)
    assert abs(e.mean() - 0.3) < 3 * e.std() / np.sqrt(e.size)


def test_homogeneous_law():
    c, v0 = TypeLaw.homogeneous(-1.0, 2.0).sample(5, seed=0)
    np.testing.assert_array_equal(c, -1.0)
    np.testing.assert_allclose(v0, 2.0 * np.exp(-1.0))


def test_game_config_properties():
    cfg = GameConfig(0.5, 2.0, (1.0, 3.0), dt=0.25, e_c_override=0.4)
    assert (cfg.n, cfg.steps, cfg.x0_total, cfg.e_c_mean) == (2, 8, 4.0, 0.4)
