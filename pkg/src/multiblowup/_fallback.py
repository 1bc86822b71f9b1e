"""Pure-Python versions of the compiled kernels."""

import numpy as np


def _rhs(r, p, dp, dm1, c, power, nonlinear):
    acc = (1.0 - c * r * r) * p
    if r != 0.0:
        acc -= dm1 / r * dp
    if nonlinear:
        acc -= abs(p) ** power * p
    return acc


def rk4_radial(p0, dp0, r0, h, nsteps, dim, c, power, nonlinear, classify,
               out_p, out_dp):
    """Reference implementation of :func:`multiblowup._kernels.rk4_radial`."""
    r, p, dp, dm1, hh = r0, p0, dp0, dim - 1.0, 0.5 * h
    out_p[0] = p
    out_dp[0] = dp
    for k in range(nsteps):
        k1p = dp
        k1v = _rhs(r, p, dp, dm1, c, power, nonlinear)
        k2p = dp + hh * k1v
        k2v = _rhs(r + hh, p + hh * k1p, k2p, dm1, c, power, nonlinear)
        k3p = dp + hh * k2v
        k3v = _rhs(r + hh, p + hh * k2p, k3p, dm1, c, power, nonlinear)
        k4p = dp + h * k3v
        k4v = _rhs(r + h, p + h * k3p, k4p, dm1, c, power, nonlinear)
        p = p + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        dp = dp + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        r = r0 + (k + 1) * h
        out_p[k + 1] = p
        out_dp[k + 1] = dp
        if classify:
            if p < 0.0:
                return k + 2, 1
            if dp > 0.0:
                return k + 2, 2
    return nsteps + 1, 0


def nonlinear_phase(u, dt, power):
    """In place ``u <- u * exp(i dt |u|^power)``."""
    u *= np.exp(1j * dt * np.abs(u) ** power)
