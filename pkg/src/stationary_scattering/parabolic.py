"""Parabolic end in R^2: closed-form chart quantities.

The end is ``{(x, y): y > 0, r > r0, -1 < theta < 1}`` with the Euclidean metric,
escape function ``r**2 = kappa*x**2 + y**2`` and angular coordinate
``theta = x * y**(-kappa)``.  In the chart ``(r, theta)`` the inverse metric is
diagonal, ``diag(N_r, N_theta)``.

Expressions are derived once per ``kappa`` with sympy and lambdified to numpy.
Chart quantities are parametrised by ``(y, theta)``; use :func:`y_of` to invert
``r(y, theta)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import sympy as sp


@dataclass(frozen=True)
class ParabolicKernel:
    kappa: float
    # chart functions of (y, theta)
    r: Callable
    N_r: Callable
    N_theta: Callable
    dr_N_r: Callable
    dtheta_N_theta: Callable
    W_r: Callable
    W_theta: Callable
    log_det_g: Callable
    # Cartesian functions of (x, y)
    grad_r: Callable
    hess_r: Callable
    laplace_r: Callable
    grad_laplace_r: Callable
    grad_dr2: Callable
    div_omega_tilde: Callable
    q_curv: Callable
    grad_q_curv: Callable


def _lamb(args, expr):
    f = sp.lambdify(args, expr, modules="numpy")

    def g(*a):
        out = f(*a)
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(*a).shape).copy()

    return g


@lru_cache(maxsize=16)
def kernel(kappa: float) -> ParabolicKernel:
    if not 0.0 < kappa < 1.0:
        raise ValueError(f"kappa must lie in (0, 1), got {kappa}")
    k = sp.nsimplify(kappa)
    x, y, th = sp.symbols("x y theta", real=True)
    yp = sp.Symbol("y", positive=True)

    # --- Cartesian quantities, flat metric
    r = sp.sqrt(k * x**2 + y**2)
    rx, ry = sp.diff(r, x), sp.diff(r, y)
    dr2 = sp.simplify(rx**2 + ry**2)
    hess = [[sp.diff(r, a, b) for b in (x, y)] for a in (x, y)]
    lap = sp.simplify(hess[0][0] + hess[1][1])
    lap_x, lap_y = sp.diff(lap, x), sp.diff(lap, y)
    dr2_x, dr2_y = sp.diff(dr2, x), sp.diff(dr2, y)
    div_om = sp.diff(rx / dr2, x) + sp.diff(ry / dr2, y)
    # curvature part of the effective potential, eta = 1 (r >= r0)
    nabla_r_lap = rx * lap_x + ry * lap_y
    q = (lap**2 + 2 * nabla_r_lap) / (8 * dr2)
    q_x, q_y = sp.diff(q, x), sp.diff(q, y)

    # --- chart quantities in (y, theta)
    xs = th * yp**k
    rc = sp.sqrt(k * xs**2 + yp**2)
    N_r = 1 - (k - k**2) * th**2 * yp ** (2 * k) / rc**2
    N_th = yp ** (-2 * k) + k**2 * th**2 / yp**2
    r_y = sp.diff(rc, yp)
    r_t = sp.diff(rc, th)

    def D_r(F):
        return sp.diff(F, yp) / r_y

    def D_t(F):
        return sp.diff(F, th) - r_t / r_y * sp.diff(F, yp)

    L = -sp.log(N_r) - sp.log(N_th)
    W_r = -N_r * D_r(L) ** 2 / 16 - D_r(N_r * D_r(L)) / 4
    W_t = -N_th * D_t(L) ** 2 / 16 - D_t(N_th * D_t(L)) / 4

    ch = (yp, th)
    ca = (x, y)
    return ParabolicKernel(
        kappa=float(kappa),
        r=_lamb(ch, rc),
        N_r=_lamb(ch, N_r),
        N_theta=_lamb(ch, N_th),
        dr_N_r=_lamb(ch, D_r(N_r)),
        dtheta_N_theta=_lamb(ch, D_t(N_th)),
        W_r=_lamb(ch, W_r),
        W_theta=_lamb(ch, W_t),
        log_det_g=_lamb(ch, L),
        grad_r=lambda X, Y, _f=(_lamb(ca, rx), _lamb(ca, ry)): np.stack([_f[0](X, Y), _f[1](X, Y)]),
        hess_r=lambda X, Y, _f=tuple(_lamb(ca, h) for h in (hess[0][0], hess[0][1], hess[1][1])): np.stack(
            [_f[0](X, Y), _f[1](X, Y), _f[2](X, Y)]
        ),
        laplace_r=_lamb(ca, lap),
        grad_laplace_r=lambda X, Y, _f=(_lamb(ca, lap_x), _lamb(ca, lap_y)): np.stack([_f[0](X, Y), _f[1](X, Y)]),
        grad_dr2=lambda X, Y, _f=(_lamb(ca, dr2_x), _lamb(ca, dr2_y)): np.stack([_f[0](X, Y), _f[1](X, Y)]),
        div_omega_tilde=_lamb(ca, div_om),
        q_curv=_lamb(ca, q),
        grad_q_curv=lambda X, Y, _f=(_lamb(ca, q_x), _lamb(ca, q_y)): np.stack([_f[0](X, Y), _f[1](X, Y)]),
    )


def y_of(kappa: float, r, theta, tol: float = 1e-14):
    """Solve ``kappa*theta**2*y**(2 kappa) + y**2 = r**2`` for ``y > 0``."""
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    r, theta = np.broadcast_arrays(r, theta)
    c = kappa * theta**2
    y = r.copy()
    for _ in range(60):
        F = c * y ** (2 * kappa) + y**2 - r**2
        dF = 2 * kappa * c * y ** (2 * kappa - 1) + 2 * y
        step = F / dF
        y = np.maximum(y - step, 0.5 * y)
        if np.all(np.abs(step) <= tol * r):
            break
    return y


def chart_to_cartesian(kappa: float, r, theta):
    y = y_of(kappa, r, theta)
    return theta * y**kappa, y


def cartesian_to_chart(kappa: float, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.sqrt(kappa * x**2 + y**2), x * y ** (-kappa)
