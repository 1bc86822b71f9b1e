# cython: language_level=3
"""Compiled hot loops: radial RK4 shooting and the split-step nonlinear phase."""
from libc.math cimport fabs, pow, cos, sin, sqrt

import numpy as np


cdef inline double _rhs(double r, double p, double dp, double dm1, double c,
                        double power, int nonlinear) nogil:
    cdef double acc = (1.0 - c * r * r) * p
    if r != 0.0:
        acc -= dm1 / r * dp
    if nonlinear:
        acc -= pow(fabs(p), power) * p
    return acc


def rk4_radial(double p0, double dp0, double r0, double h, long nsteps,
               int dim, double c, double power, bint nonlinear, bint classify,
               double[::1] out_p, double[::1] out_dp):
    """Integrate p'' + (d-1)/r p' - (1 - c r^2) p + |p|^power p = 0 by RK4.

    Returns ``(n_written, status)``. ``status`` is 0 when all steps ran,
    1 when ``p`` turned negative and 2 when ``p'`` turned positive (only
    with ``classify``).
    """
    cdef long k
    cdef double r = r0, p = p0, dp = dp0, dm1 = dim - 1.0
    cdef double k1p, k1v, k2p, k2v, k3p, k3v, k4p, k4v, hh = 0.5 * h
    cdef int status = 0
    out_p[0] = p
    out_dp[0] = dp
    with nogil:
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
                    status = 1
                    break
                if dp > 0.0:
                    status = 2
                    break
    if status == 0:
        return nsteps + 1, 0
    return k + 2, status


def nonlinear_phase(double complex[::1] u, double dt, double power):
    """In place ``u <- u * exp(i dt |u|^power)``."""
    cdef Py_ssize_t j, n = u.shape[0]
    cdef double re, im, mod2, ph, cs, sn
    with nogil:
        for j in range(n):
            re = u[j].real
            im = u[j].imag
            mod2 = re * re + im * im
            ph = dt * pow(mod2, 0.5 * power)
            cs = cos(ph)
            sn = sin(ph)
            u[j] = (re * cs - im * sn) + 1j * (re * sn + im * cs)
