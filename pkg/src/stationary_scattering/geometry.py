"""Manifold models with ends and the pointwise geometry of the escape function.

Two chart families are supported:

* ``warped``: ``g = dr^2 + f(r)^2 g_S`` over a one-dimensional angular space
  (a circle of circumference 2*pi or the Dirichlet interval (-1, 1)), or the
  bare half-line when ``d == 1``.  Here ``|dr| = 1`` and everything is explicit.
* ``parabolic``: the parabolic end of :mod:`stationary_scattering.parabolic`.

All energies refer to ``H = -1/2 Laplace + V``.
"""
from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from . import parabolic as _par


class DomainError(ValueError):
    """Point outside the chart domain."""


class SpectralParameterError(ValueError):
    """Energy at or below the critical energy."""


class ModelError(ValueError):
    """Inconsistent model definition."""


# --------------------------------------------------------------------------
# cutoff


def chi(t):
    """Quintic smoothstep cutoff: 1 for t <= 1, 0 for t >= 2."""
    s = np.clip(np.asarray(t, dtype=float) - 1.0, 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


def chi_prime(t):
    t = np.asarray(t, dtype=float)
    s = np.clip(t - 1.0, 0.0, 1.0)
    out = -30.0 * s**2 * (1.0 - s) ** 2
    return np.where((t > 1.0) & (t < 2.0), out, 0.0)


def eta(r, r0):
    """``1 - chi(2 r / r0)``."""
    return 1.0 - chi(2.0 * np.asarray(r, dtype=float) / r0)


# --------------------------------------------------------------------------
# radial profiles


class WarpProfile:
    """Warp function ``f`` through ``log f`` and its first three derivatives."""

    names = ("r", "exp_r", "const", "catenoid", "custom_table")

    def __init__(self, name: str, **params):
        if name not in self.names:
            raise ModelError(f"unknown warp profile {name!r}")
        self.name = name
        self.params = params
        if name == "custom_table":
            rt = np.asarray(params["r"], dtype=float)
            ft = np.asarray(params["f"], dtype=float)
            if np.any(ft <= 0):
                raise ModelError("custom_table warp must be positive")
            self._spline = CubicSpline(rt, np.log(ft), bc_type="natural")

    def to_dict(self):
        return {"name": self.name, **self.params}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        return cls(d.pop("name"), **d)

    def log_f(self, r):
        r = np.asarray(r, dtype=float)
        p = self.params
        if self.name == "r":
            return np.log(p.get("scale", 1.0) * r)
        if self.name == "exp_r":
            return p.get("rate", 1.0) * r + math.log(p.get("scale", 1.0))
        if self.name == "const":
            return np.full_like(r, math.log(p.get("value", 1.0)))
        if self.name == "catenoid":
            w, tilt = p.get("width", 1.0), p.get("tilt", 0.0)
            return 0.5 * np.log(w**2 + r**2) + np.log1p(tilt * np.tanh(r))
        return self._spline(r)

    def dlog(self, r, order: int = 1):
        """``d^order/dr^order log f`` for order in 1..3."""
        r = np.asarray(r, dtype=float)
        p = self.params
        if self.name == "r":
            return (-1.0) ** (order - 1) * math.factorial(order - 1) / r**order
        if self.name == "exp_r":
            return np.full_like(r, p.get("rate", 1.0) if order == 1 else 0.0)
        if self.name == "const":
            return np.zeros_like(r)
        if self.name == "catenoid":
            w, c = p.get("width", 1.0), p.get("tilt", 0.0)
            s = w**2 + r**2
            th = np.tanh(r)
            sech2 = 1.0 - th**2
            g = 1.0 + c * th
            # derivatives of log(1 + c tanh r)
            g1 = c * sech2
            g2 = -2.0 * c * th * sech2
            g3 = -2.0 * c * sech2 * (1.0 - 3.0 * th**2)
            if order == 1:
                return r / s + g1 / g
            if order == 2:
                return (w**2 - r**2) / s**2 + g2 / g - (g1 / g) ** 2
            return (2 * r**3 - 6 * w**2 * r) / s**3 + g3 / g - 3 * g2 * g1 / g**2 + 2 * (g1 / g) ** 3
        return self._spline(r, order)

    def value(self, r):
        return np.exp(self.log_f(r))


class Potential:
    """Radial potential ``V``; ``long_range`` parts go into ``q1``."""

    names = ("zero", "exp_decay", "bump", "square_well", "inverse_power")

    def __init__(self, name: str = "zero", long_range: bool = False, **params):
        if name not in self.names:
            raise ModelError(f"unknown potential profile {name!r}")
        self.name = name
        self.long_range = bool(long_range)
        self.params = params
        self.separable = True

    def to_dict(self):
        d = {"name": self.name, **self.params}
        if self.long_range:
            d["long_range"] = True
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {"name": "zero"})
        return cls(d.pop("name"), **d)

    def __call__(self, s, sigma=None):
        s = np.asarray(s, dtype=float)
        p = self.params
        if self.name == "zero":
            return np.zeros_like(s)
        if self.name == "exp_decay":
            return p.get("amplitude", 1.0) * np.exp(-p.get("rate", 1.0) * s)
        if self.name == "bump":
            a, c, w = p.get("amplitude", 1.0), p.get("center", 0.0), p.get("width", 1.0)
            t = (s - c) / w
            return np.where(np.abs(t) < 1.0, a * (1.0 - t**2) ** 3, 0.0)
        if self.name == "square_well":
            depth, a = p.get("depth", 1.0), p.get("half_width", 1.0)
            out = np.where(np.abs(s) < a, -depth, 0.0)
            # node on the jump takes the mean of the one-sided values
            return np.where(np.isclose(np.abs(s), a, rtol=0, atol=1e-12), -0.5 * depth, out)
        return p.get("amplitude", 1.0) * np.abs(s) ** (-p.get("power", 1.0))

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        p = self.params
        if self.name in ("zero", "square_well"):
            return np.zeros_like(s)
        if self.name == "exp_decay":
            k = p.get("rate", 1.0)
            return -k * p.get("amplitude", 1.0) * np.exp(-k * s)
        if self.name == "bump":
            a, c, w = p.get("amplitude", 1.0), p.get("center", 0.0), p.get("width", 1.0)
            t = (s - c) / w
            return np.where(np.abs(t) < 1.0, -6.0 * a * t * (1.0 - t**2) ** 2 / w, 0.0)
        pw = p.get("power", 1.0)
        return -pw * p.get("amplitude", 1.0) * np.sign(s) * np.abs(s) ** (-pw - 1.0)

    def long_range_part(self, s):
        return self(s) if self.long_range else np.zeros_like(np.asarray(s, dtype=float))

    def short_range_part(self, s):
        return np.zeros_like(np.asarray(s, dtype=float)) if self.long_range else self(s)


# --------------------------------------------------------------------------
# charts and models


@dataclass
class EndChart:
    kind: str  # "warped" | "parabolic"
    r0: float
    Rmax: float
    d: int = 2
    f: WarpProfile | None = None
    angular: str = "circle"  # "circle" | "interval" | "none"
    kappa: float | None = None
    potential: Potential = field(default_factory=Potential)
    orientation: int = 1  # two_end_line: global x = orientation * r on this end

    def __post_init__(self):
        if self.kind not in ("warped", "parabolic"):
            raise ModelError(f"unknown chart kind {self.kind!r}")
        if self.r0 < 1.0:
            raise ModelError("r0 must be >= 1")
        if self.Rmax <= self.r0:
            raise ModelError("Rmax must exceed r0")
        if self.kind == "warped":
            if self.f is None:
                self.f = WarpProfile("const")
            if self.d == 1:
                self.angular = "none"
            elif self.d != 2:
                raise ModelError("warped charts support d in {1, 2}")
            elif self.angular not in ("circle", "interval"):
                raise ModelError(f"unknown angular space {self.angular!r}")
        else:
            if self.kappa is None or not 0.0 < self.kappa < 1.0:
                raise ModelError("parabolic chart needs kappa in (0, 1)")
            self.d = 2
            self.angular = "interval"

    @property
    def kernel(self):
        return _par.kernel(self.kappa)

    def contains(self, r, sigma=0.0):
        r = np.asarray(r, dtype=float)
        ok = r > 0.0
        if self.kind == "parabolic" or self.angular == "interval":
            ok = ok & (np.abs(np.asarray(sigma, dtype=float)) < 1.0)
        return ok

    def V(self, r, sigma=None):
        return self.potential(self.orientation * np.asarray(r, dtype=float), sigma)

    def V_long(self, r):
        return self.potential.long_range_part(self.orientation * np.asarray(r, dtype=float))

    def V_short(self, r):
        return self.potential.short_range_part(self.orientation * np.asarray(r, dtype=float))

    def dV_long(self, r):
        if not self.potential.long_range:
            return np.zeros_like(np.asarray(r, dtype=float))
        return self.orientation * self.potential.derivative(self.orientation * np.asarray(r, dtype=float))

    def to_dict(self):
        d = {"kind": self.kind, "r0": self.r0, "Rmax": self.Rmax}
        if self.kind == "warped":
            d.update(d=self.d, f=self.f.to_dict(), angular=self.angular)
        else:
            d["kappa"] = self.kappa
        return d


@dataclass
class ManifoldModel:
    ends: list
    coupling: str = "single_end_dirichlet"
    potential: Potential = field(default_factory=Potential)
    name: str = "custom"

    def __post_init__(self):
        if not self.ends:
            raise ModelError("model needs at least one end")
        if self.coupling not in ("single_end_dirichlet", "two_end_line"):
            raise ModelError(f"unknown coupling {self.coupling!r}")
        if self.coupling == "two_end_line":
            if len(self.ends) != 2:
                raise ModelError("two_end_line requires exactly 2 ends")
            e0, e1 = self.ends
            if (e0.kind, e0.angular, e0.d) != (e1.kind, e1.angular, e1.d) or e0.kind != "warped":
                raise ModelError("two_end_line needs two warped ends with matching angular spaces")
            if e0.r0 != e1.r0:
                raise ModelError("two_end_line ends must share r0")
            e0.orientation, e1.orientation = -1, 1
            if e0.d == 2:
                self._check_glue()
        for e in self.ends:
            e.potential = self.potential

    def _check_glue(self):
        e0, e1 = self.ends
        z = np.array([0.0])
        if abs(e0.f.log_f(z)[0] - e1.f.log_f(z)[0]) > 1e-10 or abs(e0.f.dlog(z)[0] + e1.f.dlog(z)[0]) > 1e-10:
            raise ModelError("end warps do not glue smoothly at x = 0 (need f0(-x) = f1(x) to first order)")

    @property
    def r0(self):
        return self.ends[0].r0

    @property
    def Rmax(self):
        return min(e.Rmax for e in self.ends)

    # global coordinate helpers for two_end_line
    def global_log_f(self, x):
        """log f along the global coordinate (two_end_line, d = 2)."""
        x = np.asarray(x, dtype=float)
        e0, e1 = self.ends
        return np.where(x >= 0, e1.f.log_f(np.abs(x)), e0.f.log_f(np.abs(x)))

    def global_dlog(self, x, order=1):
        x = np.asarray(x, dtype=float)
        e0, e1 = self.ends
        s = (-1.0) ** order
        return np.where(x >= 0, e1.f.dlog(np.abs(x), order), s * e0.f.dlog(np.abs(x), order))

    def escape_r(self, x):
        """Escape function along the global line: |x| on the ends, even C^2 blend in the core."""
        if self.coupling != "two_end_line":
            return np.asarray(x, dtype=float)
        r0 = self.r0
        s = np.abs(np.asarray(x, dtype=float)) / r0
        core = 5.0 / 8.0 + 5.0 / 8.0 * s**4 - 0.25 * s**6
        return r0 * np.where(s >= 1.0, s, core)

    def to_dict(self):
        return {
            "name": self.name,
            "ends": [e.to_dict() for e in self.ends],
            "coupling": self.coupling,
            "potential": self.potential.to_dict(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        ends = []
        for e in d["ends"]:
            e = dict(e)
            f = e.pop("f", None)
            if isinstance(f, str):
                f = {"name": f}
            ends.append(
                EndChart(
                    kind=e.get("kind", "warped"),
                    r0=float(e.get("r0", 1.0)),
                    Rmax=float(e.get("Rmax", 128.0)),
                    d=int(e.get("d", 2)),
                    f=WarpProfile.from_dict(f) if f else None,
                    angular=e.get("angular", "circle"),
                    kappa=e.get("kappa"),
                )
            )
        return cls(
            ends=ends,
            coupling=d.get("coupling", "single_end_dirichlet"),
            potential=Potential.from_dict(d.get("potential")),
            name=d.get("name", "custom"),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# built-in models


def euclidean_end(r0=1.0, Rmax=128.0, potential=None):
    """Dirichlet exterior of the unit disc in R^2 (f = r)."""
    return ManifoldModel(
        [EndChart("warped", r0, Rmax, 2, WarpProfile("r"), "circle")],
        potential=potential or Potential(),
        name="euclidean",
    )


def hyperbolic_end(r0=1.0, Rmax=32.0):
    return ManifoldModel([EndChart("warped", r0, Rmax, 2, WarpProfile("exp_r"), "circle")], name="hyperbolic")


def cylinder_end(r0=1.0, Rmax=64.0, angular="circle"):
    return ManifoldModel([EndChart("warped", r0, Rmax, 2, WarpProfile("const"), angular)], name="cylinder")


def line_model(potential=None, r0=2.0, Rmax=40.0):
    """The real line with two ends x -> -inf, x -> +inf."""
    ends = [EndChart("warped", r0, Rmax, 1) for _ in range(2)]
    return ManifoldModel(ends, "two_end_line", potential or Potential(), name="line")


def square_well_line(depth=1.0, half_width=1.0, Rmax=40.0):
    m = line_model(Potential("square_well", depth=depth, half_width=half_width), Rmax=Rmax)
    m.name = "square_well"
    return m


def catenoid_surface(tilt=0.0, potential=None, r0=2.0, Rmax=512.0):
    """Surface of revolution dx^2 + f(x)^2 dtheta^2, f = sqrt(1+x^2)(1 + tilt tanh x)."""
    ends = [
        EndChart("warped", r0, Rmax, 2, WarpProfile("catenoid", width=1.0, tilt=-tilt), "circle"),
        EndChart("warped", r0, Rmax, 2, WarpProfile("catenoid", width=1.0, tilt=tilt), "circle"),
    ]
    return ManifoldModel(ends, "two_end_line", potential or Potential(), name="catenoid" if tilt == 0 else "catenoid_asym")


def asymmetric_catenoid(Rmax=512.0):
    """Shipped asymmetric two-ended model: tilted warp plus an off-centre compact bump."""
    return catenoid_surface(0.3, Potential("bump", amplitude=0.8, center=0.7, width=1.2), Rmax=Rmax)


def parabolic_end(kappa=0.5, r0=4.0, Rmax=512.0):
    return ManifoldModel([EndChart("parabolic", r0, Rmax, kappa=kappa)], name=f"parabolic({kappa:g})")


_BUILTIN = {
    "euclidean": euclidean_end,
    "hyperbolic": hyperbolic_end,
    "cylinder": cylinder_end,
    "line": line_model,
    "square_well": square_well_line,
    "catenoid": lambda: catenoid_surface(0.0, Potential("bump", amplitude=0.5, center=0.0, width=1.0)),
    "catenoid_asym": asymmetric_catenoid,
    "parabolic": parabolic_end,
}


def builtin_model(spec: str) -> ManifoldModel:
    """Resolve ``name`` or ``name(arg, ...)`` to a shipped model."""
    m = re.fullmatch(r"\s*([a-z_]+)\s*(?:\((.*)\))?\s*", spec)
    if not m or m.group(1) not in _BUILTIN:
        raise ModelError(f"unknown built-in model {spec!r}; known: {sorted(_BUILTIN)}")
    args = [float(a) for a in m.group(2).split(",")] if m.group(2) else []
    return _BUILTIN[m.group(1)](*args)


def builtin_names():
    return sorted(_BUILTIN)


# --------------------------------------------------------------------------
# pointwise geometry


@dataclass
class MetricData:
    """Metric quantities at a chart point (arrays broadcast over the inputs)."""

    g_rr: np.ndarray
    g_ss: np.ndarray
    dr2: np.ndarray
    hess_ss: np.ndarray  # (nabla^2 r)(d_sigma, d_sigma)
    hess_rr: np.ndarray
    laplace_r: np.ndarray
    christoffel: dict
    N_r: np.ndarray | None = None
    N_theta: np.ndarray | None = None
    W_r: np.ndarray | None = None
    W_theta: np.ndarray | None = None


def _check_domain(chart, r, sigma):
    if not np.all(chart.contains(r, sigma)):
        raise DomainError("point outside chart domain")


def eval_metric(chart: EndChart, r, sigma=0.0) -> MetricData:
    r = np.asarray(r, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    _check_domain(chart, r, sigma)
    r, sigma = np.broadcast_arrays(r, sigma)
    if chart.kind == "warped":
        one = np.ones_like(r)
        if chart.d == 1:
            z = np.zeros_like(r)
            return MetricData(one, z, one, z, z, z, {})
        f = chart.f.value(r)
        L1 = chart.f.dlog(r)
        fp = f * L1
        return MetricData(
            g_rr=one,
            g_ss=f**2,
            dr2=one,
            hess_ss=f * fp,
            hess_rr=np.zeros_like(r),
            laplace_r=(chart.d - 1) * L1,
            christoffel={"r_ss": -f * fp, "s_rs": L1},
        )
    K = chart.kernel
    y = _par.y_of(chart.kappa, r, sigma)
    x = sigma * y**chart.kappa
    Nr, Nt = K.N_r(y, sigma), K.N_theta(y, sigma)
    H = K.hess_r(x, y)
    gr = K.grad_r(x, y)
    # unit-free tangent direction (-r_y, r_x) corresponds to d_theta up to scale
    v = np.stack([-gr[1], gr[0]])
    Hvv = H[0] * v[0] ** 2 + 2 * H[1] * v[0] * v[1] + H[2] * v[1] ** 2
    vv = v[0] ** 2 + v[1] ** 2
    g_ss = 1.0 / Nt
    Hrr = (H[0] * gr[0] ** 2 + 2 * H[1] * gr[0] * gr[1] + H[2] * gr[1] ** 2) / Nr**2
    return MetricData(
        g_rr=1.0 / Nr,
        g_ss=g_ss,
        dr2=Nr,
        hess_ss=Hvv / vv * g_ss,
        hess_rr=Hrr,
        laplace_r=K.laplace_r(x, y),
        christoffel={},
        N_r=Nr,
        N_theta=Nt,
        W_r=K.W_r(y, sigma),
        W_theta=K.W_theta(y, sigma),
    )


@dataclass
class EffectivePotential:
    q: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    grad_r_q1: np.ndarray  # nabla^r q1
    numeric_fallback: bool = False


def _curvature_warped(chart, r):
    n = chart.d - 1
    L1, L2 = chart.f.dlog(r), chart.f.dlog(r, 2)
    lap, dlap = n * L1, n * L2
    return (lap**2 + 2 * dlap) / 8.0


def _curvature_warped_dr(chart, r):
    n = chart.d - 1
    L1, L2, L3 = chart.f.dlog(r), chart.f.dlog(r, 2), chart.f.dlog(r, 3)
    return (2 * n * L1 * n * L2 + 2 * n * L3) / 8.0


def effective_potential(chart: EndChart, r, sigma=0.0) -> EffectivePotential:
    """``q = V + 1/8 eta~ [(Delta r)^2 + 2 nabla^r Delta r]`` and the fixed q1/q2 split.

    q1 collects the curvature term and any long-range part of V; q2 the rest.
    """
    r = np.asarray(r, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    _check_domain(chart, r, sigma)
    r, sigma = np.broadcast_arrays(r, sigma)
    if np.any(r <= chart.r0 / 2):
        raise DomainError("effective potential needs r > r0/2")
    et = eta(r, chart.r0)
    if chart.kind == "warped":
        curv = et * _curvature_warped(chart, r)
        dcurv = et * _curvature_warped_dr(chart, r)
        fallback = False
        if not np.all(np.isfinite(curv)):
            fallback = True
            warnings.warn("non-finite curvature term; using finite differences of log f")
        q1 = curv + chart.V_long(r)
        q2 = chart.V_short(r)
        return EffectivePotential(q1 + q2, q1, q2, dcurv + chart.dV_long(r), fallback)
    K = chart.kernel
    y = _par.y_of(chart.kappa, r, sigma)
    x = sigma * y**chart.kappa
    q1 = et * K.q_curv(x, y)
    gq = K.grad_q_curv(x, y)
    gr = K.grad_r(x, y)
    z = np.zeros_like(r)
    return EffectivePotential(q1, q1, z, et * (gq[0] * gr[0] + gq[1] * gr[1]))


def liouville_potential(chart: EndChart, r):
    """``1/2 (f^{(d-1)/2})'' / f^{(d-1)/2}`` for warped charts."""
    n = (chart.d - 1) / 2.0
    L1, L2 = chart.f.dlog(r), chart.f.dlog(r, 2)
    return 0.5 * (n * L2 + (n * L1) ** 2)


# --------------------------------------------------------------------------
# critical energy and phases


@dataclass
class CriticalEnergy:
    lambda0: float
    shell_sups: list
    extrapolated: bool
    unreliable: bool


def _sphere_samples(chart, n=33):
    if chart.kind == "parabolic" or chart.angular == "interval":
        return np.linspace(-1.0, 1.0, n + 2)[1:-1]
    return np.array([0.0])


def q1_shell_sups(chart: EndChart, n_per_shell=64):
    nu0 = max(0, math.ceil(math.log2(chart.r0)))
    out = []
    nu = nu0
    while 2.0 ** (nu + 1) <= chart.Rmax * (1 + 1e-12):
        rr = np.geomspace(2.0**nu, 2.0 ** (nu + 1), n_per_shell)
        th = _sphere_samples(chart)
        R, T = np.meshgrid(rr, th, indexing="ij")
        out.append((2.0**nu, float(np.max(effective_potential(chart, R, T).q1))))
        nu += 1
    return out


def critical_energy(model: ManifoldModel, rel_tol=0.1) -> CriticalEnergy:
    """limsup of q1 estimated from outer dyadic shell suprema (Aitken-extrapolated)."""
    best = None
    for chart in model.ends:
        sups = q1_shell_sups(chart)
        if len(sups) < 2:
            raise ModelError("Rmax too small: need at least two dyadic shells")
        s = [v for _, v in sups]
        lam0, extrap = s[-1], False
        if len(s) >= 3:
            d1, d2 = s[-2] - s[-3], s[-1] - s[-2]
            if abs(d2) > 1e-15 * max(1.0, abs(s[-1])) and abs(d1 - d2) > 0 and d2 / d1 > 0 and abs(d2) < abs(d1):
                lam0 = s[-1] - d2 * d2 / (d2 - d1)
                extrap = True
        unreliable = abs(s[-1] - s[-2]) > rel_tol * max(abs(s[-1]), 1e-3)
        cand = CriticalEnergy(float(lam0), sups, extrap, unreliable)
        if best is None or cand.lambda0 > best.lambda0:
            best = cand
    return best


def r_lambda(chart: EndChart, lam: float, lam0: float) -> float:
    """Inner radius of the phase cutoff: lam + lam0 - 2 q1 >= 0 beyond r_lambda / 2."""
    rr = np.geomspace(chart.r0 * 0.5 * (1 + 1e-9), chart.Rmax, 2048)
    th = _sphere_samples(chart)
    R, T = np.meshgrid(rr, th, indexing="ij")
    ok = np.all(lam + lam0 - 2.0 * effective_potential(chart, R, T).q1 >= 0.0, axis=1)
    bad = np.nonzero(~ok)[0]
    r_found = rr[bad[-1] + 1] if bad.size else rr[0]
    if bad.size and bad[-1] + 1 >= rr.size:
        raise SpectralParameterError("no admissible r_lambda inside the chart")
    return float(max(2.0 * chart.r0, 2.0 * r_found))


@dataclass
class Phase:
    b: np.ndarray
    b_tilde: np.ndarray
    a: np.ndarray | None = None
    a_tilde: np.ndarray | None = None


def _sqrt_branch(w):
    """Square root with Re > 0 off (-inf, 0]."""
    return np.sqrt(np.asarray(w, dtype=complex))


def phase_b(chart: EndChart, lam, r, sigma=0.0, lam0=None, z=None, r_lam=None) -> Phase:
    """``b = eta_lambda |dr| sqrt(2(z - q1))`` and ``b~ = eta~ b``."""
    if lam0 is None:
        lam0 = critical_energy(ManifoldModel([chart])).lambda0 if chart.kind == "warped" else 0.0
    if lam <= lam0:
        raise SpectralParameterError(f"lambda = {lam} <= lambda0 = {lam0}")
    z = lam if z is None else z
    r = np.asarray(r, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    r, sigma = np.broadcast_arrays(r, sigma)
    if r_lam is None:
        r_lam = r_lambda(chart, lam, lam0)
    el = 1.0 - chi(2.0 * r / r_lam)
    md = eval_metric(chart, r, sigma)
    rr = np.maximum(r, chart.r0 * 0.5 * (1 + 1e-9))
    q1 = effective_potential(chart, rr, sigma).q1
    b = el * np.sqrt(md.dr2) * _sqrt_branch(2.0 * (z - q1))
    if np.isrealobj(z) or np.imag(z) == 0:
        b = b.real if np.all(np.abs(b.imag) < 1e-14) else b
    bt = eta(r, chart.r0) / md.dr2 * b
    return Phase(b, bt)


def phase_a(chart: EndChart, z, r, sigma=0.0, sign=+1, lam0=None, r_lam=None) -> Phase:
    """``a = b +- 1/4 eta_lambda (p^r q1) / (z - q1)`` with ``p^r = -i nabla^r``."""
    lam = float(np.real(z))
    ph = phase_b(chart, lam, r, sigma, lam0=lam0, z=z, r_lam=r_lam)
    r = np.asarray(r, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    r, sigma = np.broadcast_arrays(r, sigma)
    if r_lam is None:
        r_lam = r_lambda(chart, lam, lam0 if lam0 is not None else 0.0)
    el = 1.0 - chi(2.0 * r / r_lam)
    ep = effective_potential(chart, np.maximum(r, chart.r0 * 0.5 * (1 + 1e-9)), sigma)
    a = ph.b + sign * 0.25 * el * (-1j * ep.grad_r_q1) / (z - ep.q1)
    md = eval_metric(chart, r, sigma)
    return Phase(ph.b, ph.b_tilde, a, eta(r, chart.r0) / md.dr2 * a)


def riccati_residual(chart: EndChart, z, r, sigma=0.0, sign=+1, lam0=None, step=None):
    """``|+- p^r a + a^2 - 2|dr|^2 (z - q1)|``; see :func:`riccati_defect`."""
    return np.abs(riccati_defect(chart, z, r, sigma, sign, lam0, step))


def riccati_defect(chart: EndChart, z, r, sigma=0.0, sign=+1, lam0=None, step=None):
    """Signed Riccati defect with nabla^r a by 4th-order differences in r."""
    r = np.asarray(r, dtype=float)
    lam = float(np.real(z))
    r_lam = r_lambda(chart, lam, lam0 if lam0 is not None else 0.0)
    h = 1e-3 * r if step is None else step
    vals = [phase_a(chart, z, r + k * h, sigma, sign, lam0, r_lam).a for k in (-2, -1, 0, 1, 2)]
    da = (vals[0] - 8 * vals[1] + 8 * vals[3] - vals[4]) / (12 * h)
    md = eval_metric(chart, r, sigma)
    nabla_r_a = md.dr2 * da  # nabla^r = |dr|^2 d_r in spherical coordinates
    q1 = effective_potential(chart, r, sigma).q1
    a = vals[2]
    return sign * (-1j) * nabla_r_a + a**2 - 2 * md.dr2 * (z - q1)
