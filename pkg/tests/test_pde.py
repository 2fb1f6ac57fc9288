import json

import numpy as np
import pytest

from mfarb.errors import ConfigError
from mfarb.pde import (
    ValueGrid,
    _coefficients,
    apply_A,
    grid_from_function,
    log_axis,
    manufactured_coefficients,
    verify_min_solution,
    vsm_n1_grid,
)

CO = manufactured_coefficients()


def _axes(nodes):
    return [log_axis(0.5, 2.0, nodes), log_axis(0.5, 2.0, nodes)]


def test_constant_value_has_zero_residual():
    g = grid_from_function(lambda t, X, Z: np.ones(X.shape[:-1]), np.linspace(0.2, 0.6, 5), _axes(9))
    r = apply_A(g, CO, 0.5)
    np.testing.assert_allclose(r.residual, 0.0, atol=1e-12)
    assert r.residual.shape == (3, 7, 7)


def test_operator_on_product_matches_coefficients():
    """``A(xz)`` equals ``c1_x z + c1_z x + 2 c2_xz`` from the coefficient arrays."""
    errs = []
    for nodes in (17, 33):
        g = grid_from_function(lambda t, X, Z: X[..., 0] * Z[..., 0], np.linspace(0.2, 0.6, 5), _axes(nodes))
        r = apply_A(g, CO, 0.5)
        X, Z = g.mesh()
        X, Z = X[1:-1, 1:-1], Z[1:-1, 1:-1]
        c1, c2 = _coefficients(CO, X, Z, 0.5)
        exact = c1[..., 0] * Z[..., 0] + c1[..., 1] * X[..., 0] + 2 * c2[..., 0, 1]
        errs.append(np.max(np.abs(r.Au[0] - exact)))
    assert errs[1] < errs[0] / 3  # second order in the log step


def test_bumped_node_is_flagged():
    g, co = vsm_n1_grid(0.5, 0.3)
    assert verify_min_solution(g, co, 0.5).ok
    u = g.u.copy()
    u[2, 4, 4] *= 0.9
    bad = ValueGrid(g.tau, g.axes, u, g.stderr, g.c)
    rep = verify_min_solution(bad, co, 0.5, truncation=False)
    assert rep.violations > 0


def test_bound_violation_reported(tmp_path):
    g, co = vsm_n1_grid(0.5, 0.3)
    u = g.u.copy()
    u[1, 0, 0] = 1.5
    rep = verify_min_solution(ValueGrid(g.tau, g.axes, u, g.stderr, g.c), co, 0.5)
    assert rep.bound_violations == 1 and not rep.ok
    rep.to_json(tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())["bound_violations"] == 1


def test_value_grid_validation():
    tau, ax = np.array([0.1, 0.2]), _axes(5)
    ok = np.ones((2, 5, 5))
    with pytest.raises(ConfigError):
        ValueGrid(tau, ax, np.ones((2, 5, 4)))
    with pytest.raises(ConfigError):
        ValueGrid(tau, ax, -ok)
    with pytest.raises(ConfigError):
        ValueGrid(tau, ax[:1], np.ones((2, 5)))
    with pytest.raises(ConfigError):
        ValueGrid(np.array([0.0, 0.1]), ax, 0.5 * ok)
    ValueGrid(np.array([0.0, 0.1]), ax, ok)


def test_apply_A_input_checks():
    f = lambda t, X, Z: np.ones(X.shape[:-1])  # noqa: E731
    with pytest.raises(ConfigError):
        apply_A(grid_from_function(f, [0.1, 0.2], _axes(9)), CO, 0.5)
    with pytest.raises(ConfigError):
        apply_A(grid_from_function(f, [0.1, 0.2, 0.3], _axes(4)), CO, 0.5)
    with pytest.raises(ConfigError):
        apply_A(grid_from_function(f, [0.1, 0.2, 0.3], [np.linspace(1, 2, 5)] * 2), CO, 0.5)


def test_coarsen_and_csv(tmp_path):
    g, co = vsm_n1_grid(0.5, 0.3)
    c = g.coarsen()
    assert c.u.shape == (3, 5, 5)
    np.testing.assert_array_equal(c.axes[0], g.axes[0][::2])
    r = apply_A(g, co, 0.5)
    r.to_csv(tmp_path / "res.csv")
    rows = (tmp_path / "res.csv").read_text().splitlines()
    assert rows[0] == "tau,w0,w1,u,du_dtau,Au,residual,stderr"
    assert len(rows) == 1 + r.residual.size


def test_stderr_propagates():
    g, co = vsm_n1_grid(0.5, 0.3)
    noisy = ValueGrid(g.tau, g.axes, g.u, np.full_like(g.u, 1e-3), g.c)
    r = apply_A(noisy, co, 0.5)
    assert np.all(r.stderr > 0)
    assert np.all(apply_A(g, co, 0.5).stderr == 0)
