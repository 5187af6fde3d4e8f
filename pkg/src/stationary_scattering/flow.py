"""Normalized gradient flow of the escape function and push-forward bounds."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from . import parabolic as _par
from .geometry import EndChart, ManifoldModel, chi, chi_prime, eta, r_lambda


@dataclass
class FlowOrbit:
    start: tuple
    t: np.ndarray
    positions: np.ndarray  # (len(t), 2) chart coordinates (r, sigma)
    log_weight: np.ndarray  # int 1/2 div(omega~)
    phase: np.ndarray | None  # int b~ ds, if an energy was given
    truncated: bool = False
    t_exit: float | None = None

    @property
    def weight(self):
        return np.exp(self.log_weight)


def _chart_of(model_or_chart, end):
    if isinstance(model_or_chart, EndChart):
        return model_or_chart
    return model_or_chart.ends[end]


def _rhs_factory(chart: EndChart, lam, lam0, r_lam):
    """Right-hand side in native coordinates: (r, sigma) warped, (x, y) parabolic."""
    r0 = chart.r0
    want_phase = lam is not None

    def eta_prime(r):
        return -chi_prime(2.0 * r / r0) * 2.0 / r0

    if chart.kind == "warped":
        n = chart.d - 1

        def rhs(t, s):
            r = s[0]
            e = float(eta(r, r0))
            lap = n * float(chart.f.dlog(r)) if n else 0.0
            out = [e, 0.0, 0.5 * (e * lap + float(eta_prime(r)))]
            if want_phase:
                q1 = float(_q1_warped(chart, r))
                el = 1.0 - float(chi(2.0 * r / r_lam))
                out.append(e * el * np.sqrt(max(2.0 * (lam - q1), 0.0)))
            return out

        return rhs

    K = chart.kernel

    def rhs(t, s):
        x, y = s[0], s[1]
        r = float(np.sqrt(chart.kappa * x * x + y * y))
        g = K.grad_r(x, y)
        dr2 = g[0] ** 2 + g[1] ** 2
        e = float(eta(r, r0))
        div = e * float(K.div_omega_tilde(x, y)) + float(eta_prime(r))
        out = [e * g[0] / dr2, e * g[1] / dr2, 0.5 * div]
        if want_phase:
            q1 = e * float(K.q_curv(x, y))
            el = 1.0 - float(chi(2.0 * r / r_lam))
            b = el * np.sqrt(dr2) * np.sqrt(max(2.0 * (lam - q1), 0.0))
            out.append(e / dr2 * b)
        return out

    return rhs


def _q1_warped(chart, r):
    from .geometry import _curvature_warped

    return eta(r, chart.r0) * _curvature_warped(chart, np.asarray(r, dtype=float)) + chart.V_long(r)


def integrate_flow(model, start, t_end, tol=1e-10, lam=None, lam0=0.0, end=0, n_out=65) -> FlowOrbit:
    """Integrate ``dy/dt = eta~ grad r`` from ``start = (r, sigma)``.

    ``t_end`` may be negative (backward flow).  The orbit is truncated, with a
    flag, when it leaves the chart domain (r <= r0 / 2 or |theta| >= 1).
    """
    chart = _chart_of(model, end)
    r_lam = r_lambda(chart, lam, lam0) if lam is not None else None
    rhs = _rhs_factory(chart, lam, lam0, r_lam)
    r_start, s_start = float(start[0]), float(start[1])
    if chart.kind == "warped":
        y0 = [r_start, s_start]
    else:
        y0 = list(_par.chart_to_cartesian(chart.kappa, r_start, s_start))
        y0 = [float(y0[0]), float(y0[1])]
    y0 = y0 + [0.0] + ([0.0] if lam is not None else [])

    def leave(t, s):
        if chart.kind == "warped":
            return s[0] - 0.5 * chart.r0 * (1 + 1e-6)
        x, y = s[0], s[1]
        r = np.sqrt(chart.kappa * x * x + y * y)
        return min(r - 0.5 * chart.r0 * (1 + 1e-6), 1.0 - abs(x) / y**chart.kappa if y > 0 else -1.0)

    leave.terminal = True
    t_eval = np.linspace(0.0, t_end, n_out)
    sol = solve_ivp(rhs, (0.0, t_end), y0, method="DOP853", rtol=tol, atol=tol, t_eval=t_eval, events=leave)
    truncated = sol.status == 1
    if chart.kind == "warped":
        pos = np.stack([sol.y[0], sol.y[1]], axis=1)
    else:
        rr, th = _par.cartesian_to_chart(chart.kappa, sol.y[0], sol.y[1])
        pos = np.stack([rr, th], axis=1)
    return FlowOrbit(
        start=(r_start, s_start),
        t=sol.t,
        positions=pos,
        log_weight=sol.y[2],
        phase=sol.y[3] if lam is not None else None,
        truncated=truncated,
        t_exit=float(sol.t_events[0][0]) if truncated else None,
    )


@dataclass
class PushforwardReport:
    exponent: float
    C1: float
    ratios: np.ndarray  # (n_samples, n_t) squared stretch factors
    t: np.ndarray
    R: float
    refined: bool


def _tangent_sq_norm(chart, p_plus, p_minus):
    """Squared metric length of the chord between two nearby chart points on a sphere."""
    if chart.kind == "warped":
        r = 0.5 * (p_plus[:, 0] + p_minus[:, 0])
        return (chart.f.value(r) * (p_plus[:, 1] - p_minus[:, 1])) ** 2
    xp, yp = _par.chart_to_cartesian(chart.kappa, p_plus[:, 0], p_plus[:, 1])
    xm, ym = _par.chart_to_cartesian(chart.kappa, p_minus[:, 0], p_minus[:, 1])
    return (xp - xm) ** 2 + (yp - ym) ** 2


def pushforward_bound_check(model, R, t_max, n_samples=5, n_t=17, delta=1e-5, end=0, tol=1e-11):
    """Stretching of sphere tangent vectors under the forward flow from ``S_R``.

    Returns the exponent ``s`` in ``|J v|^2 ~ ((R+t)/R)^s |v|^2`` fitted on
    neighbouring-orbit differences, and ``C1`` = worst ratio against that power.
    """
    chart = _chart_of(model, end)
    if chart.kind == "warped" and chart.d == 1:
        raise ValueError("one-dimensional ends have no sphere tangents")
    lo, hi = (-0.8, 0.8) if chart.angular != "circle" else (0.0, 2 * np.pi * (1 - 1.0 / n_samples))
    sig = np.linspace(lo, hi, n_samples)

    def stretch(d):
        out = []
        for s in sig:
            op = integrate_flow(chart, (R, s + d), t_max, tol=tol, n_out=n_t)
            om = integrate_flow(chart, (R, s - d), t_max, tol=tol, n_out=n_t)
            if op.truncated or om.truncated:
                raise RuntimeError("orbit left the chart")
            base = _tangent_sq_norm(chart, op.positions[:1], om.positions[:1])
            out.append(_tangent_sq_norm(chart, op.positions, om.positions) / base)
        return np.array(out), op.t

    ratios, t = stretch(delta)
    check, _ = stretch(delta / 2)
    refined = False
    if np.max(np.abs(check / ratios - 1.0)) > 1e-4:
        refined = True
        ratios, t = check, t
        finer, _ = stretch(delta / 4)
        if np.max(np.abs(finer / ratios - 1.0)) > 1e-4:
            raise RuntimeError("neighbouring orbits separate beyond linearization validity")
    X = np.log((R + t[1:]) / R)
    Y = np.log(ratios[:, 1:])
    slopes = (Y @ X) / (X @ X)
    expo = float(np.max(slopes))
    C1 = float(np.max(ratios / ((R + t) / R) ** expo))
    return PushforwardReport(expo, C1, ratios, t, float(R), refined)
