"""Numerical audit of the convexity and decay conditions on a model.

Exponents are grid estimates from dyadic shells ``[2^nu, 2^(nu+1)]``, never
certificates.  Quantities that vanish identically (or decay faster than any
power within the sampled range) are reported at ``EXPONENT_CAP``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import parabolic as _par
from .geometry import EndChart, ManifoldModel, critical_energy, effective_potential, eval_metric

EXPONENT_CAP = 10.0


@dataclass
class ExponentFit:
    exponent: float
    r_squared: float
    low_confidence: bool
    capped: bool
    worst_r: float


@dataclass
class ConditionReport:
    sigma_prime_est: float
    sigma_est: float
    tau_est: float
    rho_est: float
    lambda0: float
    beta_c: float
    threshold_pass: bool
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def dyadic_shells(r0, Rmax, n_per_shell=48):
    """Log-spaced radii per dyadic shell inside ``[r0, Rmax]``."""
    nu = max(0, math.ceil(math.log2(r0) - 1e-12))
    shells = []
    while 2.0 ** (nu + 1) <= Rmax * (1 + 1e-12):
        shells.append(np.geomspace(2.0**nu, 2.0 ** (nu + 1), n_per_shell))
        nu += 1
    return shells


def fit_decay(radii, maxima, min_shells=4):
    """Fit ``maxima ~ C r^(-p)``; returns p with R^2 and flags."""
    radii = np.asarray(radii, dtype=float)
    m = np.asarray(maxima, dtype=float)
    if len(m) < min_shells:
        raise ValueError(f"need at least {min_shells} dyadic shells, got {len(m)}")
    scale = max(np.max(m), 1e-300)
    tiny = m <= 1e-13 * max(1.0, scale) if scale < 1e-12 else m <= 0
    if np.all(m < 1e-13) or np.all(tiny):
        return ExponentFit(EXPONENT_CAP, 1.0, False, True, float(radii[0]))
    ok = m > 1e-300
    x, y = np.log(radii[ok]), np.log(m[ok])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum((y - pred) ** 2) / ss if ss > 0 else 1.0
    p = -coef[0]
    capped = p >= EXPONENT_CAP or ok.sum() < len(m)
    return ExponentFit(float(min(p, EXPONENT_CAP)), float(r2), bool(r2 < 0.9), bool(capped), float(radii[int(np.argmax(m))]))


def _angles(chart, n):
    if chart.kind == "parabolic" or chart.angular == "interval":
        return np.linspace(-1.0, 1.0, n + 2)[1:-1]
    return np.array([0.0])


def _end_quantities(chart: EndChart, R, T):
    """Pointwise ratio for the convexity bound and the four decay quantities."""
    md = eval_metric(chart, R, T)
    ep = effective_potential(chart, R, T)
    if chart.kind == "warped":
        if chart.d == 1:
            ratio = np.full(R.shape, np.inf)
        else:
            ratio = 2.0 * R * md.hess_ss / (md.dr2 * md.g_ss)
        grad_dr2 = np.zeros_like(R)
        ell_grad_lap = np.zeros_like(R)
    else:
        K = chart.kernel
        x, y = _par.chart_to_cartesian(chart.kappa, R, T)
        ratio = 2.0 * R * md.hess_ss / (md.dr2 * md.g_ss)
        gd = K.grad_dr2(x, y)
        grad_dr2 = np.hypot(gd[0], gd[1])
        gl = K.grad_laplace_r(x, y)
        gr = K.grad_r(x, y)
        # spherical part of grad(Delta r): remove the component along grad r
        along = (gl[0] * gr[0] + gl[1] * gr[1]) / md.dr2
        ell_grad_lap = np.hypot(gl[0] - along * gr[0], gl[1] - along * gr[1])
    return ratio, grad_dr2, ell_grad_lap, np.abs(ep.grad_r_q1), np.abs(ep.q2)


def verify_conditions(model: ManifoldModel, n_angles=41, n_per_shell=48) -> ConditionReport:
    """Estimate sigma', tau, rho, the critical energy and the threshold 2 beta_c > 1."""
    diag = {"ends": []}
    sig_p, tau, rho = [], [], []
    for idx, chart in enumerate(model.ends):
        shells = dyadic_shells(chart.r0, chart.Rmax, n_per_shell)
        if len(shells) < 4:
            raise ValueError("Rmax too small: at least 4 dyadic shells are needed")
        th = _angles(chart, n_angles)
        rows = []
        for rr in shells:
            R, T = np.meshgrid(rr, th, indexing="ij")
            rows.append(_end_quantities(chart, R, T))
        # convexity: infimum over the outer half of the shells (asymptotic regime)
        outer = range(len(shells) // 2, len(shells))
        ratio_inf = [float(np.min(rows[i][0])) for i in range(len(shells))]
        sp = min(ratio_inf[i] for i in outer)
        growing = all(b > a * 1.2 for a, b in zip(ratio_inf[len(shells) // 2 :], ratio_inf[len(shells) // 2 + 1 :]))
        capped_sp = sp >= EXPONENT_CAP or growing
        sp = min(sp, EXPONENT_CAP)
        centres = np.array([math.sqrt(rr[0] * rr[-1]) for rr in shells])
        fits = {}
        for j, name in enumerate(("grad_dr2", "ell_grad_laplace_r", "grad_r_q1", "q2"), start=1):
            fits[name] = fit_decay(centres, [float(np.max(row[j])) for row in rows])
        t_fit = min(fits["grad_dr2"].exponent, fits["ell_grad_laplace_r"].exponent)
        t_est = min(EXPONENT_CAP, max(0.0, 2.0 * (t_fit - 1.0)))
        if fits["grad_r_q1"].capped and fits["q2"].capped:
            r_est = EXPONENT_CAP
        else:
            r_est = min(EXPONENT_CAP, max(0.0, min(fits["grad_r_q1"].exponent, fits["q2"].exponent) - 1.0))
        sig_p.append(sp)
        tau.append(t_est)
        rho.append(r_est)
        worst = min(range(len(shells)), key=lambda i: ratio_inf[i] if i in outer else np.inf)
        diag["ends"].append(
            {
                "end": idx,
                "sigma_prime_capped": bool(capped_sp),
                "sigma_prime_growing": bool(growing),
                "sigma_prime_worst_shell_r": float(shells[worst][0]),
                "convexity_ratio_by_shell": ratio_inf,
                "fits": {k: asdict(v) for k, v in fits.items()},
                "low_confidence": any(v.low_confidence for v in fits.values()),
                "min_dr": float(
                    min(np.min(np.sqrt(eval_metric(chart, rr, th[:, None]).dr2)) for rr in shells)
                ),
            }
        )
    crit = critical_energy(model)
    s_p = float(min(sig_p))
    s = s_p * (1.0 - 1e-6)
    t, r = float(min(tau)), float(min(rho))
    beta_c = 0.5 * min(s, t, r)
    diag["lambda0_extrapolated"] = crit.extrapolated
    diag["lambda0_unreliable"] = crit.unreliable
    diag["splitting_rule"] = "q1 = curvature term + declared long-range V; q2 = remainder"
    diag["exponent_cap"] = EXPONENT_CAP
    return ConditionReport(
        sigma_prime_est=s_p,
        sigma_est=s,
        tau_est=t,
        rho_est=r,
        lambda0=float(crit.lambda0),
        beta_c=float(beta_c),
        threshold_pass=bool(2.0 * beta_c > 1.0),
        diagnostics=diag,
    )
