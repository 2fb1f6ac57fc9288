import numpy as np
import pytest

from mfarb.errors import ConfigError, SingularityError
from mfarb.model import MarketState, benchmark_values
from mfarb.vsm import (
    VsmConfig,
    arithmetic_coefficients,
    build_model,
    classic_vsm_coefficients,
    equilibrium_z0,
    geometric_coefficients,
    vsm_closed_form_L,
    vsm_coefficients,
    vsm_u_closed_n1,
    vsm_u_oracle,
)


def test_symmetric_state_values():
    co = vsm_coefficients(VsmConfig(C_x=1.0, n=2, x0=(1.0, 1.0)))
    X = Z = np.array([1.0, 1.0])
    np.testing.assert_allclose(co.beta(X, Z), (2.0, 2.0))
    np.testing.assert_allclose(co.a(X, Z), np.diag([2.0, 2.0]))
    np.testing.assert_allclose(co.theta(X, Z), (np.sqrt(2.0), np.sqrt(2.0)))


def test_covariance_is_diagonal(rs):
    co = vsm_coefficients(VsmConfig(n=3, x0=(1.0, 1.0, 1.0)))
    X, Z = rs.uniform(0.5, 2, (10, 3)), rs.uniform(0.5, 2, (10, 3))
    a = co.a(X, Z)
    assert np.all(a[:, ~np.eye(3, dtype=bool)] == 0)
    np.testing.assert_allclose(np.diagonal(a, axis1=1, axis2=2), X * X.sum(-1, keepdims=True) / Z)


def test_leverage_monotone_in_market_weight():
    co = vsm_coefficients(VsmConfig(n=2, x0=(1.0, 1.0)))
    Z = np.array([1.0, 1.0])
    small = co.beta(np.array([1.0, 3.0]), Z)[0]
    large = co.beta(np.array([2.0, 2.0]), Z)[0]
    assert small > large


@pytest.mark.parametrize("co", [
    vsm_coefficients(VsmConfig(C_x=1.3, n=2, x0=(1.0, 1.0))),
    classic_vsm_coefficients(0.5, 0.8),
    geometric_coefficients([0.05, 0.1], [[0.2, 0.0], [0.05, 0.3]]),
])
def test_price_of_risk_consistency(co, rs):
    X, Z = rs.uniform(0.5, 2, (7, 2)), rs.uniform(0.5, 2, (7, 2))
    assert co.consistency_residual(X, Z) < 1e-12


def test_singularity_at_floor():
    co = vsm_coefficients(VsmConfig(n=2, x0=(1.0, 1.0)))
    with pytest.raises(SingularityError):
        co.beta(np.array([1.0, 1.0]), np.array([1.0, 1e-13]))


def test_drift_cap_counts_and_stays_consistent():
    co = vsm_coefficients(VsmConfig(n=2, x0=(1.0, 1.0), beta_cap=100.0))
    X, Z = np.array([1.0, 1.0]), np.array([1.0, 1e-3])
    beta, sig = co.beta(X, Z), np.diagonal(co.sigma(X, Z))
    assert beta[1] == 100.0 and beta[0] == 2.0
    np.testing.assert_allclose(co.theta(X, Z), beta / sig)
    assert co.params["cap"].count >= 1


def test_config_validation():
    with pytest.raises(ConfigError):
        VsmConfig(C_x=0.0)
    with pytest.raises(ConfigError):
        VsmConfig(n=2, x0=(1.0,))


def test_equilibrium_initial_interaction():
    z = equilibrium_z0((1.0, 1.0), 0.5, 0.3)
    V0 = 2.0 / (2.0 - 0.3)
    assert z.sum() == pytest.approx(0.3 * V0, rel=1e-14)
    assert benchmark_values(np.ones(2), z, 0.5) == pytest.approx(V0, rel=1e-14)
    with pytest.raises(ConfigError):
        equilibrium_z0((1.0,), 0.1, 1.2)


def test_oracle_one_asset_is_analytic():
    st = MarketState(0.3, (2.0,), (0.7,))
    u, se = vsm_u_oracle(VsmConfig(n=1, x0=(1.0,)), 0.5, 0.3, 0.2, st, 1.0)
    assert se == 0.0
    assert u == pytest.approx(0.5 * np.exp(0.2) * 2.0 / ((1.0 + 0.35) * (1 - 0.15)), rel=1e-14)
    assert u == pytest.approx(vsm_u_closed_n1(0.5, 0.3, 0.2, st), rel=1e-14)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_oracle_at_terminal_time_returns_e_c(n):
    delta, e, c = 0.5, 0.3, -0.4
    X = np.arange(1.0, n + 1)
    st = MarketState(1.0, X, equilibrium_z0(X, delta, e))
    u, se = vsm_u_oracle(VsmConfig(n=n, x0=tuple(X)), delta, e, c, st, 1.0)
    assert u == pytest.approx(np.exp(c), rel=1e-13) and se == 0.0


def test_oracle_is_seeded_and_mc_error_scales():
    cfg = VsmConfig(n=2, x0=(100.0, 100.0))
    st = MarketState(0.5, (100.0, 90.0), tuple(equilibrium_z0((100.0, 90.0), 0.5, 0.3)))
    a = vsm_u_oracle(cfg, 0.5, 0.3, 0.0, st, 1.0, M_oracle=2000, dt=1 / 64, seed=3)
    b = vsm_u_oracle(cfg, 0.5, 0.3, 0.0, st, 1.0, M_oracle=2000, dt=1 / 64, seed=3)
    c = vsm_u_oracle(cfg, 0.5, 0.3, 0.0, st, 1.0, M_oracle=8000, dt=1 / 64, seed=3)
    assert a == b
    assert c[1] == pytest.approx(a[1] / 2, rel=0.2)
    assert abs(a[0] - c[0]) < 3 * np.hypot(a[1], c[1])


def test_closed_form_L_general_leverage():
    X = np.array([[[1.0, 1.0], [1.2, 0.9], [1.1, 0.8]]])
    Z = np.full_like(X, 0.5)
    t = np.array([0.0, 0.1, 0.2])
    L1 = vsm_closed_form_L(X, Z, t, (1.0, 1.0))
    np.testing.assert_allclose(L1, np.prod(1.0 / X, -1))
    L2 = vsm_closed_form_L(X, Z, t, (1.0, 1.0), C_x=2.0)
    k = 0.5 * 2.0 * (1 - 2.0) * np.sum(X.sum(-1, keepdims=True) / (X * Z), -1)
    integ = np.concatenate([[0.0], np.cumsum(k[0, :-1] * 0.1)])
    np.testing.assert_allclose(L2[0], np.prod(1.0 / X[0], -1) ** 2 * np.exp(-integ))


def test_model_registry():
    co, H = build_model("classic-vsm", alpha=1.0, vol=0.5)
    assert co.name == "classic-vsm" and H is not None
    co, H = build_model("geometric", beta=[0.1], sigma=[[0.2]])
    assert H is None
    with pytest.raises(ConfigError):
        build_model("bogus")
    with pytest.raises(SingularityError):
        geometric_coefficients([0.1, 0.1], [[1.0, 1.0], [1.0, 1.0]])
    ar = arithmetic_coefficients([0.1], [[0.3]])
    np.testing.assert_allclose(ar.beta(np.array([2.0]), np.array([0.0])), [0.05])
