import numpy as np
import pytest
import sympy as sp

from mfarb import rng
from mfarb.deflator import (
    DeflatorState,
    HFunction,
    deflator_via_h,
    kk_integrands,
    step_deflator,
    theta_from_h,
)
from mfarb.errors import NumericalError
from mfarb.model import CoefficientSet
from mfarb.sde import run_engine
from mfarb.vsm import VsmConfig, classic_vsm_coefficients, classic_vsm_H, vsm_coefficients, vsm_H, vsm_initial_state


def test_step_deflator_zero_theta():
    d = step_deflator(DeflatorState(), np.zeros(2), np.array([0.3, -0.1]), 0.01)
    assert d.L == 1.0


def test_step_deflator_deterministic_decay():
    theta, dt, K = np.array([0.3, 0.4]), 0.01, 100
    d = DeflatorState()
    for _ in range(K):
        d = step_deflator(d, theta, np.zeros(2), dt)
    assert d.L == pytest.approx(np.exp(-0.5 * 0.25 * K * dt), rel=1e-13)
    assert d.int_theta_sq == pytest.approx(0.25, rel=1e-13)


def test_step_deflator_rejects_nonfinite():
    with pytest.raises(NumericalError):
        step_deflator(DeflatorState(), np.array([np.nan]), np.zeros(1), 0.1)


def test_vsm_k_vanishes(rs):
    cfg = VsmConfig(n=3, x0=(1.0, 2.0, 3.0))
    H, co = vsm_H(cfg), vsm_coefficients(cfg)
    X = rs.uniform(0.5, 3.0, size=(20, 3))
    Z = rs.uniform(0.5, 3.0, size=(20, 3))
    k, kt = kk_integrands(H, co, X, Z)
    np.testing.assert_allclose(k, 0.0, atol=1e-12)
    np.testing.assert_allclose(kt, 0.0, atol=1e-12)


def test_constant_H_gives_zero_integrands(rs):
    H = HFunction(lambda x, z: np.zeros(np.shape(x)[:-1]))
    co = vsm_coefficients(VsmConfig(n=2, x0=(1.0, 1.0)))
    X, Z = rs.uniform(0.5, 2.0, (5, 2)), rs.uniform(0.5, 2.0, (5, 2))
    k, kt = kk_integrands(H, co, X, Z)
    np.testing.assert_array_equal(k, 0.0)
    np.testing.assert_array_equal(kt, 0.0)


def test_quadratic_H_matches_symbolic_expansion():
    x1, x2 = sp.symbols("x1 x2")
    Hs = x1 ** 2 + x1 * x2 + 2 * x2 ** 2
    a_diag = (sp.Rational(1, 4), sp.Rational(9, 100))
    g = [sp.diff(Hs, v) for v in (x1, x2)]
    k_sym = -sp.Rational(1, 2) * sum(a_diag[i] * (sp.diff(Hs, v, 2) + g[i] ** 2) for i, v in enumerate((x1, x2)))
    k_num = sp.lambdify((x1, x2), k_sym, "numpy")
    sig = np.diag(np.sqrt([0.25, 0.09]))
    co = CoefficientSet(lambda X, Z: 0 * X, lambda X, Z: np.broadcast_to(sig, np.shape(X) + (2,)).copy(),
                        lambda X, Z: 0 * Z, lambda X, Z: np.zeros(np.shape(Z) + (2,)))
    H = HFunction(lambda x, z: x[..., 0] ** 2 + x[..., 0] * x[..., 1] + 2 * x[..., 1] ** 2)  # FD derivatives
    X = np.array([[0.3, -1.2], [2.0, 0.5]])
    k, kt = kk_integrands(H, co, X, np.zeros_like(X))
    np.testing.assert_allclose(k, k_num(X[:, 0], X[:, 1]), rtol=1e-6)
    np.testing.assert_allclose(kt, 0.0, atol=1e-12)


def test_fd_derivatives_match_analytic(rs):
    cfg = VsmConfig(C_x=1.7, n=2, x0=(1.0, 1.0))
    ana = vsm_H(cfg)
    fd = HFunction(ana.H)
    x, z = rs.uniform(0.5, 2.0, (4, 2)), rs.uniform(0.5, 2.0, (4, 2))
    np.testing.assert_allclose(fd.grad_x(x, z), ana.grad_x(x, z), rtol=1e-7)
    np.testing.assert_allclose(fd.hess_xx(x, z), ana.hess_xx(x, z), rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(fd.grad_z(x, z), 0.0, atol=1e-9)


def test_vsm_gradient_and_scaling():
    cfg = VsmConfig(n=2, x0=(1.0, 1.0))
    H = vsm_H(cfg)
    np.testing.assert_allclose(H.grad_x(np.array([2.0, 4.0]), np.zeros(2)), (0.5, 0.25))
    x = np.array([1.3, 0.7])
    assert H(3.0 * x, x) == pytest.approx(H(x, x) + 2 * np.log(3.0), rel=1e-14)


def test_theta_forms_on_vsm(rs):
    cfg = VsmConfig(n=2, x0=(1.0, 1.0))
    H, co = vsm_H(cfg), vsm_coefficients(cfg)
    X, Z = rs.uniform(0.5, 2.0, (6, 2)), rs.uniform(0.5, 2.0, (6, 2))
    np.testing.assert_allclose(theta_from_h(H, co, X, Z), co.theta(X, Z), rtol=1e-13)
    # the pair form doubles the x-gradient term, which equals the VSM price of risk with half the generator
    half = vsm_H(VsmConfig(C_x=0.5, n=2, x0=(1.0, 1.0)))
    np.testing.assert_allclose(theta_from_h(half, co, X, Z, form="pair"), co.theta(X, Z), rtol=1e-13)
    with pytest.raises(ValueError):
        theta_from_h(H, co, X, Z, form="other")


def test_vsm_deflator_via_h_matches_sde():
    cfg = VsmConfig(n=2, x0=(100.0, 100.0))
    co, H = vsm_coefficients(cfg), vsm_H(cfg)
    X0, Z0 = vsm_initial_state(cfg, 0.5, 0.3)
    dt = 1 / 256
    r = run_engine(co, X0, Z0, rng.brownian_increments(1, 256, 2, dt, paths=100), dt)

    class P:
        t = np.arange(257) * dt
        X, Z = r.X, r.Z

    L = deflator_via_h(H, co, P)
    assert np.max(np.abs(L - np.exp(r.logL)) / np.exp(r.logL)) <= 5 * dt


def test_classic_vsm_deflator_is_product_form():
    co, H = classic_vsm_coefficients(1.0, 0.5), classic_vsm_H(1.0)
    x0 = np.array([1.0, 2.0])
    r = run_engine(co, x0, np.array([0.1, 0.1]), rng.brownian_increments(1, 64, 2, 1 / 64, paths=5), 1 / 64,
                   keep_path=False)
    np.testing.assert_allclose(np.exp(r.logL[:, 0]), np.prod(x0 / r.X[:, 0], -1), rtol=1e-12)


def _generated_model(sig=0.3, nu=0.2):
    """One-asset model whose price of risk is generated by ``H = log x + log(1 + z)``."""
    H = HFunction(lambda x, z: np.log(x[..., 0]) + np.log1p(z[..., 0]))

    def theta(X, Z):
        return sig + nu * Z / (1 + Z)

    co = CoefficientSet(lambda X, Z: sig * X * theta(X, Z), lambda X, Z: sig * np.asarray(X)[..., :, None],
                        lambda X, Z: nu * Z * theta(X, Z), lambda X, Z: nu * np.asarray(Z)[..., :, None],
                        theta_fn=theta)
    return H, co


def test_kk_consistent_with_sde_deflator():
    """``log L = -dH - int (k + k~)`` holds up to a discretization error that shrinks with dt."""
    H, co = _generated_model()
    fine = rng.brownian_increments(6, 256, 1, 1 / 256, paths=50)
    gaps = []
    for K in (32, 256):
        inc = fine.reshape(50, K, 256 // K, 1).sum(2)
        r = run_engine(co, np.array([1.0]), np.array([0.5]), inc, 1 / K)

        class P:
            t = np.arange(K + 1) / K
            X, Z = r.X, r.Z

        gaps.append(np.max(np.abs(np.log(deflator_via_h(H, co, P)) - r.logL)))
    assert gaps[1] < gaps[0]
    assert gaps[1] < 0.005
