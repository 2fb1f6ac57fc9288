"""Finite-difference evaluation of the Cauchy operator for the value function.

Grids are tensor products of a ``tau`` axis and ``2n`` log-spaced spatial axes
(``x_1..x_n`` then ``z_1..z_n``).  Derivatives are central differences in the
log coordinates ``y = log w``:

``D u = u_y / w``, ``D^2 u = (u_yy - u_y) / w^2``, ``D_jk u = u_{y_j y_k} / (w_j w_k)``.

The operator is linear in ``u``; it is assembled as weights per stencil
offset so that node-wise standard errors propagate exactly.
"""

import csv
import json
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import ConfigError
from .model import CoefficientSet

MIN_NODES = 5


@dataclass
class ValueGrid:
    """Value ``u(tau, x, z)`` on a tensor grid with per-node standard errors."""

    tau: np.ndarray
    axes: list
    u: np.ndarray
    stderr: np.ndarray = None
    c: float = 0.0

    def __post_init__(self):
        self.tau = np.asarray(self.tau, float)
        self.axes = [np.asarray(a, float) for a in self.axes]
        self.u = np.asarray(self.u, float)
        if len(self.axes) % 2 or len(self.axes) > 4:
            raise ConfigError("need x and z axes for n = 1 or 2 assets")
        shape = (self.tau.size,) + tuple(a.size for a in self.axes)
        if self.u.shape != shape:
            raise ConfigError(f"values have shape {self.u.shape}, grid needs {shape}")
        if self.stderr is None:
            self.stderr = np.zeros_like(self.u)
        if not np.all(self.u > 0):
            raise ConfigError("value must be positive on the grid")
        if self.tau[0] == 0 and not np.all(self.u[0] == np.exp(self.c)):
            raise ConfigError("value at tau = 0 must equal e^c")

    @property
    def n(self):
        return len(self.axes) // 2

    def mesh(self):
        """Node coordinates ``X, Z`` with shape ``spatial + (n,)``."""
        g = np.meshgrid(*self.axes, indexing="ij")
        n = self.n
        return np.stack(g[:n], axis=-1), np.stack(g[n:], axis=-1)

    def coarsen(self):
        """Every other node along every axis (odd node counts keep the endpoints)."""
        sl = (slice(None, None, 2),) * (1 + len(self.axes))
        return ValueGrid(self.tau[::2], [a[::2] for a in self.axes], self.u[sl], self.stderr[sl], self.c)


def log_axis(lo, hi, nodes):
    return np.exp(np.linspace(np.log(lo), np.log(hi), nodes))


def _log_steps(axes):
    h = []
    for a in axes:
        d = np.diff(np.log(a))
        if not np.allclose(d, d[0], rtol=1e-9, atol=0):
            raise ConfigError("spatial axes must be log-spaced")
        h.append(float(d[0]))
    return h


def _coefficients(coeffs, X, Z, delta):
    """First- and second-order coefficient arrays of the operator at the nodes."""
    n = X.shape[-1]
    a = coeffs.a(X, Z)
    psi = coeffs.psi(X, Z)
    cross = coeffs.s(X, Z) @ np.swapaxes(coeffs.tau(X, Z), -1, -2)
    V = delta * X.sum(-1) + (1 - delta) * Z.sum(-1)
    c2 = np.zeros(X.shape[:-1] + (2 * n, 2 * n))
    c2[..., :n, :n] = 0.5 * a
    c2[..., n:, n:] = 0.5 * psi
    c2[..., :n, n:] = 0.5 * cross
    c2[..., n:, :n] = 0.5 * np.swapaxes(cross, -1, -2)
    c1 = np.zeros(X.shape[:-1] + (2 * n,))
    c1[..., :n] = (delta * a.sum(-1) + (1 - delta) * cross.sum(-1)) / V[..., None]
    c1[..., n:] = ((1 - delta) * psi.sum(-1) + delta * cross.sum(-2)) / V[..., None]
    return c1, c2


def operator_stencil(grid, coeffs, delta):
    """Weights of ``A`` per spatial offset at interior nodes.

    Returns
    -------
    dict
        ``offset tuple -> weight array`` over the interior (one-node margin).
    """
    d = len(grid.axes)
    if any(a.size < MIN_NODES for a in grid.axes):
        raise ConfigError(f"grid too small: need at least {MIN_NODES} nodes per axis")
    h = _log_steps(grid.axes)
    X, Z = grid.mesh()
    inner = tuple(slice(1, -1) for _ in range(d))
    X, Z = X[inner], Z[inner]
    W = np.concatenate([X, Z], axis=-1)           # node coordinate per spatial axis
    c1, c2 = _coefficients(coeffs, X, Z, delta)
    st = {}

    def add(off, w):
        st[off] = st.get(off, 0.0) + w

    zero = (0,) * d
    for j in range(d):
        ej_p = tuple(1 if k == j else 0 for k in range(d))
        ej_m = tuple(-1 if k == j else 0 for k in range(d))
        wj = W[..., j]
        # first derivative D_j = u_y / w
        first = c1[..., j] / (2 * h[j] * wj)
        add(ej_p, first)
        add(ej_m, -first)
        # diagonal second derivative (u_yy - u_y) / w^2
        cjj = c2[..., j, j] / wj ** 2
        add(ej_p, cjj * (1 / h[j] ** 2 - 1 / (2 * h[j])))
        add(ej_m, cjj * (1 / h[j] ** 2 + 1 / (2 * h[j])))
        add(zero, -2 * cjj / h[j] ** 2)
        for k in range(d):
            if k == j:
                continue
            # mixed u_{y_j y_k} / (w_j w_k); the (j,k) and (k,j) entries both appear
            cjk = c2[..., j, k] / (4 * h[j] * h[k] * wj * W[..., k])
            for sj, sk in product((1, -1), repeat=2):
                off = tuple(sj if m == j else sk if m == k else 0 for m in range(d))
                add(off, sj * sk * cjk)
    return st


def _apply(st, arr, d, t_slice):
    """``sum_offset w * arr[shifted]`` over interior spatial nodes."""
    out = 0.0
    for off, w in st.items():
        sl = (t_slice,) + tuple(slice(1 + o, arr.shape[1 + m] - 1 + o) for m, o in enumerate(off))
        out = out + w * arr[sl]
    return out


@dataclass
class ResidualGrid:
    """``d u / d tau - A u`` at interior nodes (one-node margin on every axis)."""

    tau: np.ndarray
    axes: list
    residual: np.ndarray
    Au: np.ndarray
    du_dtau: np.ndarray
    u: np.ndarray
    stderr: np.ndarray

    def to_csv(self, path):
        n_ax = len(self.axes)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tau"] + [f"w{j}" for j in range(n_ax)] + ["u", "du_dtau", "Au", "residual", "stderr"])
            for idx in np.ndindex(self.residual.shape):
                coords = [self.tau[idx[0]]] + [self.axes[j][idx[j + 1]] for j in range(n_ax)]
                vals = [self.u[idx], self.du_dtau[idx], self.Au[idx], self.residual[idx], self.stderr[idx]]
                w.writerow([repr(float(v)) for v in coords + vals])


def apply_A(grid, coeffs, delta):
    """Central-difference residual ``d u/d tau - A u`` on interior nodes.

    The ``tau`` derivative is a central difference, so the first and last
    ``tau`` layers are margins as well.  ``stderr`` of the residual propagates
    the node standard errors through the stencil (independent errors).

    Raises
    ------
    ConfigError
        If any axis has fewer than 5 nodes.
    """
    if grid.tau.size < 3:
        raise ConfigError("need at least three tau layers")
    dt = np.diff(grid.tau)
    if not np.allclose(dt, dt[0], rtol=1e-9):
        raise ConfigError("tau axis must be uniform")
    st = operator_stencil(grid, coeffs, delta)
    d = len(grid.axes)
    mid = slice(1, -1)
    Au = _apply(st, grid.u, d, mid)
    inner = (slice(None),) + tuple(slice(1, -1) for _ in range(d))
    ui = grid.u[inner]
    du = (ui[2:] - ui[:-2]) / (2 * dt[0])
    res = du - Au
    se2 = grid.stderr ** 2
    sq = {k: v ** 2 for k, v in st.items()}
    zero = (0,) * d
    var_A_mid = _apply({k: v for k, v in sq.items() if k != zero}, se2, d, mid)
    w0 = st.get(zero, 0.0)
    sei = se2[inner]
    var = var_A_mid + w0 ** 2 * sei[1:-1] + (sei[2:] + sei[:-2]) / (2 * dt[0]) ** 2
    return ResidualGrid(grid.tau[1:-1], [a[1:-1] for a in grid.axes], res, Au, du, ui[1:-1], np.sqrt(var))


@dataclass
class MinSolutionReport:
    violations: int
    bound_violations: int
    nodes: int
    worst_node: tuple
    worst_excess: float
    truncation_allowance: float
    tolerance_max: float
    notes: list = field(default_factory=list)

    @property
    def ok(self):
        return self.violations == 0 and self.bound_violations == 0

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.__dict__, fh, indent=2, default=float)


def verify_min_solution(grid, coeffs, delta, *, residual=None, truncation=True, rtol_bound=1e-12):
    """Check ``0 < u <= e^c`` and the supersolution inequality ``d u/d tau >= A u``.

    Tolerance per node is three propagated standard errors plus, when
    ``truncation`` is set and the grid can be coarsened, the largest gap
    between residuals on the grid and on the every-other-node grid (an
    estimate of the finite-difference truncation error).
    """
    r = residual or apply_A(grid, coeffs, delta)
    allowance = 0.0
    notes = []
    if truncation:
        try:
            coarse = apply_A(grid.coarsen(), coeffs, delta)
            fine_common = r.residual[(slice(1, None, 2),) * r.residual.ndim]
            m = tuple(min(a, b) for a, b in zip(fine_common.shape, coarse.residual.shape))
            sl = tuple(slice(0, k) for k in m)
            allowance = float(np.max(np.abs(fine_common[sl] - coarse.residual[sl])))
        except ConfigError as exc:
            notes.append(f"no truncation allowance: {exc}")
    tol = 3.0 * r.stderr + allowance
    excess = -r.residual - tol
    viol = excess > 0
    ec = np.exp(grid.c)
    bound = (grid.u <= 0) | (grid.u > ec * (1 + rtol_bound) + 3.0 * grid.stderr)
    worst = np.unravel_index(int(np.argmax(excess)), excess.shape)
    return MinSolutionReport(int(viol.sum()), int(bound.sum()), int(viol.size), tuple(int(i) for i in worst),
                             float(excess[worst]), allowance, float(np.max(tol)), notes)


# --- grid builders -------------------------------------------------------------------

def grid_from_function(u_fn, tau, axes, c=0.0, stderr_fn=None):
    """Evaluate ``u_fn(tau, X, Z)`` on the tensor grid (``X``, ``Z``: ``spatial + (n,)``)."""
    tmp = ValueGrid.__new__(ValueGrid)
    tmp.axes = [np.asarray(a, float) for a in axes]
    X, Z = ValueGrid.mesh(tmp)
    u = np.stack([np.broadcast_to(u_fn(t, X, Z), X.shape[:-1]) for t in tau])
    se = None if stderr_fn is None else np.stack([np.broadcast_to(stderr_fn(t, X, Z), X.shape[:-1]) for t in tau])
    return ValueGrid(tau, axes, u, se, c)


def vsm_n1_grid(delta, e_c_mean, c=0.0, nodes=9, tau=(0.25, 1.0), tau_nodes=5, x_range=(0.5, 2.0),
                z_span=(1.0, 4.0)):
    """One-asset VSM value ``delta C_f e^c x / (delta x + (1-delta) z)`` on a grid.

    The ``z`` axis starts at ``z_span[0]`` times the equilibrium level
    ``E[e^c] delta C_f x_max`` so that ``u <= e^c`` on every node.
    """
    from .vsm import VsmConfig, vsm_coefficients

    Cf = 1.0 / (1.0 - (1.0 - delta) * e_c_mean)
    xs = log_axis(*x_range, nodes)
    z_eq = e_c_mean * delta * Cf * x_range[1]
    zs = log_axis(z_span[0] * z_eq, z_span[1] * z_eq, nodes)
    taus = np.linspace(tau[0], tau[1], tau_nodes)

    def u(t, X, Z):
        return delta * Cf * np.exp(c) * X[..., 0] / (delta * X[..., 0] + (1 - delta) * Z[..., 0])

    g = grid_from_function(u, taus, [xs, zs], c)
    return g, vsm_coefficients(VsmConfig(n=1, x0=(1.0,)))


def manufactured_coefficients(sig=0.3, nu=0.2):
    """One-asset coefficients with ``a = sig^2 x^2``, ``psi = nu^2 z^2``, ``s tau' = sig nu x z``."""
    def s(X, Z):
        return sig * np.asarray(X)[..., :, None]

    def tau(X, Z):
        return nu * np.asarray(Z)[..., :, None]

    def b(X, Z):
        return 0.1 * np.asarray(X)

    def gamma(X, Z):
        return 0.1 * np.asarray(Z)

    return CoefficientSet(b, s, gamma, tau, name="manufactured")
