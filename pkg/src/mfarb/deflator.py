"""Market price of risk, the deflator ``L`` and its representation through a generating function ``H``."""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NumericalError


def _fd_step(v):
    return 1e-4 * (1.0 + np.abs(v))


def _shift(arr, j, h):
    out = np.array(arr, dtype=float, copy=True)
    out[..., j] += h
    return out


@dataclass(frozen=True)
class HFunction:
    """Scalar function ``H(x, z)`` with gradients and Hessian blocks.

    Missing derivatives are filled in by central differences with step
    ``1e-4 * (1 + |coordinate|)``.  All callables act on batched arrays whose
    last axis indexes assets.
    """

    H: Callable
    grad_x_fn: Optional[Callable] = None
    grad_z_fn: Optional[Callable] = None
    hess_xx_fn: Optional[Callable] = None
    hess_zz_fn: Optional[Callable] = None
    hess_xz_fn: Optional[Callable] = None

    def __call__(self, x, z):
        return self.H(x, z)

    # finite-difference fallbacks -------------------------------------------------
    def _fd_grad(self, x, z, wrt):
        x = np.asarray(x, float)
        z = np.asarray(z, float)
        v = x if wrt == "x" else z
        out = np.empty(v.shape)
        for j in range(v.shape[-1]):
            h = _fd_step(v[..., j])
            if wrt == "x":
                up, dn = self.H(_shift(x, j, h), z), self.H(_shift(x, j, -h), z)
            else:
                up, dn = self.H(x, _shift(z, j, h)), self.H(x, _shift(z, j, -h))
            out[..., j] = (up - dn) / (2 * h)
        return out

    def _fd_hess(self, x, z, first, second):
        # differentiate the gradient in `second` with respect to `first`
        x = np.asarray(x, float)
        z = np.asarray(z, float)
        grad = self.grad_x if second == "x" else self.grad_z
        v = x if first == "x" else z
        n = v.shape[-1]
        out = np.empty(v.shape + (n,))
        for i in range(n):
            h = _fd_step(v[..., i])[..., None]
            if first == "x":
                up, dn = grad(_shift(x, i, h[..., 0]), z), grad(_shift(x, i, -h[..., 0]), z)
            else:
                up, dn = grad(x, _shift(z, i, h[..., 0])), grad(x, _shift(z, i, -h[..., 0]))
            out[..., i, :] = (up - dn) / (2 * h)
        return out

    def grad_x(self, x, z):
        return self.grad_x_fn(x, z) if self.grad_x_fn else self._fd_grad(x, z, "x")

    def grad_z(self, x, z):
        return self.grad_z_fn(x, z) if self.grad_z_fn else self._fd_grad(x, z, "z")

    def hess_xx(self, x, z):
        return self.hess_xx_fn(x, z) if self.hess_xx_fn else self._fd_hess(x, z, "x", "x")

    def hess_zz(self, x, z):
        return self.hess_zz_fn(x, z) if self.hess_zz_fn else self._fd_hess(x, z, "z", "z")

    def hess_xz(self, x, z):
        """Mixed block ``[i, p] = d^2 H / dx_i dz_p``."""
        return self.hess_xz_fn(x, z) if self.hess_xz_fn else self._fd_hess(x, z, "x", "z")


@dataclass(frozen=True)
class DeflatorState:
    """Running deflator ``L = exp(-int theta'dW - 1/2 int |theta|^2 ds)``."""

    log_L: float = 0.0
    int_theta_dW: float = 0.0
    int_theta_sq: float = 0.0

    @property
    def L(self):
        return float(np.exp(self.log_L))


def step_deflator(d, theta, dW, dt):
    """One step of ``log L += -theta'dW - |theta|^2 dt / 2``.

    Raises
    ------
    NumericalError
        If ``theta`` is not finite.
    """
    theta = np.asarray(theta, float)
    if not np.all(np.isfinite(theta)):
        raise NumericalError("non-finite market price of risk")
    a = float(theta @ np.asarray(dW, float))
    q = float(theta @ theta) * dt
    return DeflatorState(d.log_L - a - 0.5 * q, d.int_theta_dW + a, d.int_theta_sq + q)


def theta_from_h(H, coeffs, X, Z, form="combined"):
    """Market price of risk generated by ``H``.

    ``form="combined"``: ``theta = s'D_xH + tau'D_zH`` (the primary form).
    ``form="pair"``: ``theta = 2 s'D_xH``, the alternative written with the
    x-gradient alone.
    """
    s = coeffs.s(X, Z)
    gx = H.grad_x(X, Z)
    if form == "pair":
        return 2.0 * np.einsum("...ki,...k->...i", s, gx)
    if form != "combined":
        raise ValueError(f"unknown form {form!r}")
    tau = coeffs.tau(X, Z)
    gz = H.grad_z(X, Z)
    return np.einsum("...ki,...k->...i", s, gx) + np.einsum("...ki,...k->...i", tau, gz)


def kk_integrands(H, coeffs, X, Z):
    """Integrands ``k`` and ``k~`` in ``log L = -H(X,Z) + H(x,z) - int (k + k~)``.

    ``k  = -1/2 a : (D2_xx H + D_xH D_xH')``
    ``k~ = -1/2 psi : (D2_zz H + D_zH D_zH') - (s tau') : (D2_xz H + D_xH D_zH')``

    Returns
    -------
    k, k_tilde : ndarray
        Shape of the batch axes of ``X``.
    """
    gx, gz = H.grad_x(X, Z), H.grad_z(X, Z)
    Mxx = H.hess_xx(X, Z) + gx[..., :, None] * gx[..., None, :]
    Mzz = H.hess_zz(X, Z) + gz[..., :, None] * gz[..., None, :]
    Mxz = H.hess_xz(X, Z) + gx[..., :, None] * gz[..., None, :]
    s, tau = coeffs.s(X, Z), coeffs.tau(X, Z)
    cross = s @ np.swapaxes(tau, -1, -2)
    k = -0.5 * np.sum(coeffs.a(X, Z) * Mxx, axis=(-2, -1))
    kt = -0.5 * np.sum(coeffs.psi(X, Z) * Mzz, axis=(-2, -1)) - np.sum(cross * Mxz, axis=(-2, -1))
    return k, kt


def deflator_via_h(H, coeffs, path):
    """Deflator on the grid of ``path`` from ``H`` and the ``k`` integrands.

    The time integral uses left-point sums, matching the explicit stepping of
    the simulation.  ``path`` needs ``t``, ``X`` and ``Z`` arrays with the time
    axis first (extra leading path axes are allowed before it).
    """
    X, Z, t = np.asarray(path.X), np.asarray(path.Z), np.asarray(path.t)
    Hv = H(X, Z)
    k, kt = kk_integrands(H, coeffs, X, Z)
    dt = np.diff(t)
    integ = np.concatenate([np.zeros(k.shape[:-1] + (1,)), np.cumsum((k + kt)[..., :-1] * dt, axis=-1)], axis=-1)
    logL = -(Hv - Hv[..., :1]) - integ
    if not np.all(np.isfinite(logL)):
        raise NumericalError("H evaluation produced non-finite values")
    return np.exp(logL)
