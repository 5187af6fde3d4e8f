"""Parabolic end in the plane: anomalous approximate eigenfunctions.

Everything is written in the flat gauge ``phi~ = |g|^(1/4) phi`` on the chart
``(r, theta)``, in which ``-1/2 Delta`` becomes the symmetric operator

    H~ = -1/2 (d_r N_r d_r + d_theta N_theta d_theta + W_r + W_theta)

on ``L^2(dr dtheta)``.  Shell norms of flat-gauge functions are therefore the
true ``L^2`` norms.

For ``kappa <= 1/2`` the approximate outgoing eigenfunction of mode ``k`` is
``b_k^(-1/2) exp(i int b_k) u_k(theta)`` with ``b_k = sqrt(2 (lam - mu_k r^(-2 kappa)))``
and ``(mu_k, u_k)`` a Dirichlet eigenpair of the transversal operator
``-1/2 d^2`` (``kappa < 1/2``) or ``-1/2 d^2 - lam theta^2 / 4`` (``kappa = 1/2``).
The mode-dependent phase correction is what makes plain WKB asymptotics fail.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sps
from numpy.polynomial import chebyshev as C
from numpy.polynomial.legendre import leggauss
from scipy.linalg import eigh_tridiagonal
from scipy.sparse.linalg import splu

from . import parabolic as _par
from .conditions import fit_decay
from .geometry import eta
from .modes import ModeFunction, ResolutionError


def _regime(kappa):
    if abs(kappa - 0.5) < 1e-12:
        return "kappa=1/2"
    if 0.0 < kappa < 0.5:
        return "kappa<1/2"
    raise ValueError(f"the transversal eigenproblem is defined for kappa in (0, 1/2], got {kappa}")


def _transversal_weight(kappa, lam):
    """Coefficient ``c`` of the transversal potential ``-c theta^2``."""
    return lam / 4.0 if _regime(kappa) == "kappa=1/2" else 0.0


# --------------------------------------------------------------------------
# transversal eigenproblem


@dataclass(frozen=True)
class HdEigen:
    regime: str
    lam: float
    k: int
    mu: float
    theta: np.ndarray  # interior nodes of (-1, 1)
    u: np.ndarray  # normalised for h * sum u^2 = 1, positive just inside theta = -1


def _fd_pairs(c, n, k):
    h = 2.0 / (n + 1)
    th = -1.0 + h * np.arange(1, n + 1)
    w, v = eigh_tridiagonal(1.0 / h**2 - c * th**2, np.full(n - 1, -0.5 / h**2), select="i", select_range=(k - 1, k - 1))
    return float(w[0]), v[:, 0], th, h


def hd_eigen(kappa, lam, k, n_grid=401) -> HdEigen:
    """``k``-th Dirichlet eigenpair of the transversal operator on (-1, 1).

    Second-order finite differences on ``n_grid`` and ``2 n_grid + 1`` interior
    points, Richardson-extrapolated in ``h^2``.  The eigenvector is the one of
    the coarser grid.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n_grid // 4:
        raise ResolutionError(f"mode {k} is not resolved by {n_grid} points")
    c = _transversal_weight(kappa, lam)
    w1, v1, th, h1 = _fd_pairs(c, n_grid, k)
    w2, _, _, h2 = _fd_pairs(c, 2 * n_grid + 1, k)
    mu = w2 + (w2 - w1) * h2**2 / (h1**2 - h2**2)
    v1 = v1 / math.sqrt(h1) * np.sign(v1[0])
    return HdEigen(_regime(kappa), float(lam), int(k), float(mu), th, v1)


def _cheb_matrix(n):
    """Chebyshev collocation differentiation matrix on ``n + 1`` Lobatto points."""
    x = np.cos(np.pi * np.arange(n + 1) / n)
    c = np.ones(n + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(n + 1)
    X = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (X + np.eye(n + 1))
    D -= np.diag(D.sum(axis=1))
    return D, x


@dataclass(frozen=True)
class SpectralMode:
    """Transversal eigenfunction as a Chebyshev series (spectrally accurate)."""

    mu: float
    coef: np.ndarray

    def __call__(self, theta, der=0):
        c = C.chebder(self.coef, der) if der else self.coef
        return C.chebval(theta, c)


def hd_eigen_spectral(kappa, lam, k, n=64) -> SpectralMode:
    """Same eigenpair as :func:`hd_eigen` by Chebyshev collocation (used where
    residuals far below the finite-difference error must be resolved)."""
    if k > n // 3:
        raise ResolutionError(f"mode {k} is not resolved by {n} Chebyshev points")
    c = _transversal_weight(kappa, lam)
    D, x = _cheb_matrix(n)
    A = -0.5 * (D @ D)[1:-1, 1:-1] - np.diag(c * x[1:-1] ** 2)
    w, V = np.linalg.eig(A)
    order = np.argsort(w.real)
    mu = float(w[order[k - 1]].real)
    vals = np.zeros(n + 1)
    vals[1:-1] = V[:, order[k - 1]].real
    coef = C.chebfit(x, vals, n)
    # L2(-1, 1) normalisation, sign positive just inside theta = -1
    g, wg = leggauss(2 * n)
    coef = coef / math.sqrt(float(np.sum(wg * C.chebval(g, coef) ** 2)))
    if C.chebval(-1.0 + 1e-3, coef) < 0:
        coef = -coef
    return SpectralMode(mu, coef)


def sine_mode(k):
    """Dirichlet sine mode of ``-1/2 d^2`` on (-1, 1), eigenvalue ``k^2 pi^2 / 8``."""
    w = k * math.pi / 2.0

    def u(theta, der=0):
        ph = w * (np.asarray(theta, dtype=float) + 1.0)
        return [np.sin, np.cos, lambda t: -np.sin(t), lambda t: -np.cos(t)][der](ph) * w**der

    return SpectralMode(w * w / 2.0, np.array([])), u


# --------------------------------------------------------------------------
# model tables


@dataclass
class ParabolicModel:
    """Discretised parabolic end on ``[r0, Rmax] x (-1, 1)``.

    Tables live on the interior node grid ``r_j = r0 + j h`` (``j = 1..n_r``)
    and ``theta_i = -1 + i dtheta`` (``i = 1..n_theta``); Dirichlet conditions
    hold on the whole boundary.
    """

    kappa: float
    r0: float = 4.0
    Rmax: float = 2048.0
    h: float = 0.2
    n_theta: int = 23
    _factors: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not 0.0 < self.kappa < 1.0:
            raise ValueError(f"kappa must lie in (0, 1), got {self.kappa}")
        if self.Rmax <= self.r0:
            raise ValueError("Rmax must exceed r0")

    @property
    def kernel(self):
        return _par.kernel(self.kappa)

    @cached_property
    def r(self):
        n = int(round((self.Rmax - self.r0) / self.h)) - 1
        return self.r0 + self.h * np.arange(1, n + 1)

    @cached_property
    def dtheta(self):
        return 2.0 / (self.n_theta + 1)

    @cached_property
    def theta(self):
        return -1.0 + self.dtheta * np.arange(1, self.n_theta + 1)

    def _eval(self, name, r, theta):
        R, T = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(theta, dtype=float))
        return getattr(self.kernel, name)(_par.y_of(self.kappa, R, T), T)

    @cached_property
    def y(self):
        R, T = np.meshgrid(self.r, self.theta, indexing="ij")
        return _par.y_of(self.kappa, R, T)

    @cached_property
    def N_r(self):
        return self._eval("N_r", self.r[:, None], self.theta[None, :])

    @cached_property
    def N_theta(self):
        return self._eval("N_theta", self.r[:, None], self.theta[None, :])

    @cached_property
    def W_r(self):
        return self._eval("W_r", self.r[:, None], self.theta[None, :])

    @cached_property
    def W_theta(self):
        return self._eval("W_theta", self.r[:, None], self.theta[None, :])

    @property
    def shape(self):
        return (len(self.r), self.n_theta)

    def transversal_modes(self, lam, n_modes):
        """Discrete Dirichlet eigenpairs of the transversal operator on this theta grid."""
        c = _transversal_weight(self.kappa, lam) if self.kappa <= 0.5 else 0.0
        d = self.dtheta
        w, v = eigh_tridiagonal(1.0 / d**2 - c * self.theta**2, np.full(self.n_theta - 1, -0.5 / d**2), select="i", select_range=(0, n_modes - 1))
        v = v / math.sqrt(d) * np.sign(v[0])
        return w, v

    def operator(self):
        """Sparse real symmetric flat-gauge Hamiltonian (Dirichlet on the boundary)."""
        if "H" in self._factors:
            return self._factors["H"]
        nr, nt = self.shape
        h, d = self.h, self.dtheta
        rh = np.concatenate([[self.r0 + 0.5 * h], self.r + 0.5 * h])
        th_h = -1.0 + d * (np.arange(nt + 1) + 0.5)
        Nr_h = self._eval("N_r", rh[:, None], self.theta[None, :])  # (nr+1, nt)
        Nt_h = self._eval("N_theta", self.r[:, None], th_h[None, :])  # (nr, nt+1)
        diag = 0.5 * ((Nr_h[:-1] + Nr_h[1:]) / h**2 + (Nt_h[:, :-1] + Nt_h[:, 1:]) / d**2) - 0.5 * (self.W_r + self.W_theta)
        idx = np.arange(nr * nt).reshape(nr, nt)
        rows, cols, vals = [idx.ravel()], [idx.ravel()], [diag.ravel()]
        off_r = -0.5 * Nr_h[1:-1] / h**2
        rows += [idx[:-1].ravel(), idx[1:].ravel()]
        cols += [idx[1:].ravel(), idx[:-1].ravel()]
        vals += [off_r.ravel(), off_r.ravel()]
        off_t = -0.5 * Nt_h[:, 1:-1] / d**2
        rows += [idx[:, :-1].ravel(), idx[:, 1:].ravel()]
        cols += [idx[:, 1:].ravel(), idx[:, :-1].ravel()]
        vals += [off_t.ravel(), off_t.ravel()]
        H = sps.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nr * nt, nr * nt))
        self._factors["H"] = H
        self._factors["outer_coupling"] = -0.5 * self._eval("N_r", self.r[-1] + 0.5 * h, self.theta) / h**2
        return H

    def resolvent_factor(self, z):
        key = ("lu", complex(z))
        if key not in self._factors:
            H = self.operator()
            self._factors[key] = splu((H - z * sps.identity(H.shape[0], format="csc")).tocsc())
        return self._factors[key]

    @classmethod
    def from_manifold(cls, model, **kw):
        chart = model.ends[0]
        if chart.kind != "parabolic":
            raise ValueError("model has no parabolic end")
        return cls(chart.kappa, r0=chart.r0, Rmax=chart.Rmax, **kw)


# --------------------------------------------------------------------------
# approximate eigenfunctions


def _phase_integral(bfun, r, r_start, panel=0.25):
    """``int_{r_start}^{r} b`` at sorted radii ``r`` by composite 8-point Gauss."""
    g, w = leggauss(8)
    r = np.asarray(r, dtype=float)
    edges = np.union1d(np.arange(r_start, r.max() + panel, panel), r)
    edges = edges[edges >= r_start]
    a, b = edges[:-1], edges[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    vals = bfun(mid[:, None] + half[:, None] * g[None, :]) @ w * half
    cum = np.concatenate([[0.0], np.cumsum(vals)])
    return cum[np.searchsorted(edges, r)]


def mode_wavenumber(kappa, lam, mu, discrete_h=None):
    """``b_k(r) = sqrt(2 (lam - mu r^(-2 kappa)))``, optionally the wavenumber of
    the three-point stencil, ``(2/h) arcsin(h b / 2)``."""

    def b(r):
        arg = 2.0 * (lam - mu * np.asarray(r, dtype=float) ** (-2.0 * kappa))
        if np.any(arg <= 0):
            raise ValueError("branch violation: 2 (lam - mu r^(-2 kappa)) <= 0 on the grid")
        bb = np.sqrt(arg)
        return bb if discrete_h is None else 2.0 / discrete_h * np.arcsin(0.5 * discrete_h * bb)

    return b


def approx_eigenfunction(model: ParabolicModel, lam, k, n_modes=None, u=None, plain=False, discrete=False, r_cut=None) -> ModeFunction:
    """Approximate outgoing eigenfunction of transversal mode ``k`` (flat gauge).

    Returns mode profiles over the discrete transversal eigenbasis of the model's
    theta grid: row ``k - 1`` carries ``eta(r, r_cut) b_k^(-1/2) exp(i int b_k)``.
    ``plain=True`` uses the mode-independent ``b = sqrt(2 lam)``.  With
    ``discrete=True`` the wavenumber and amplitude are those of the three-point
    radial stencil and the transversal eigenvalue is the discrete one.
    ``u`` may override the angular profile (values on the theta grid).
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    n_modes = max(n_modes or k, k)
    if plain:
        mu_k = 0.0
    elif discrete:
        mu_k = float(model.transversal_modes(lam, k)[0][k - 1])
    else:
        mu_k = hd_eigen(model.kappa, lam, k).mu
    r_cut = r_cut or 2.0 * model.r0
    h = model.h if discrete else None
    b = mode_wavenumber(model.kappa, lam, mu_k, h)
    r = model.r
    lo = r >= 0.5 * r_cut
    prof = np.zeros(len(r), dtype=complex)
    rr = r[lo]
    phase = _phase_integral(b, rr, rr[0])
    amp = (np.sin(h * b(rr)) / h) ** -0.5 if discrete else b(rr) ** -0.5
    prof[lo] = eta(rr, r_cut) * amp * np.exp(1j * phase)
    prof = np.where(np.isfinite(prof), prof, 0.0)
    coeffs = np.zeros((n_modes, len(r)), dtype=complex)
    if u is not None:
        # arbitrary angular profile: expand in the discrete transversal basis
        _, V = model.transversal_modes(lam if model.kappa <= 0.5 else 0.0, n_modes)
        c = V.T @ np.asarray(u, dtype=float) * model.dtheta
        coeffs = c[:, None] * prof[None, :]
    else:
        coeffs[k - 1] = prof
    meta = {"kappa": model.kappa, "lambda": float(lam), "k": int(k), "mu": mu_k, "gauge": "flat", "plain": bool(plain)}
    return ModeFunction(r.copy(), coeffs, gauge="flat", weights=np.full(len(r), model.h), meta=meta)


def to_grid(model: ParabolicModel, mf: ModeFunction, lam):
    """Mode profiles to samples on the (r, theta) grid."""
    _, V = model.transversal_modes(lam if model.kappa <= 0.5 else 0.0, mf.n_modes)
    return mf.u.T @ V.T


# --------------------------------------------------------------------------
# residual decay


@dataclass
class ResidualDecay:
    kappa: float
    lam: float
    k: int
    plain: bool
    shell_r: list
    shell_norms: list
    exponent: float
    r_squared: float
    compensated_norms: list = field(default_factory=list)
    compensated_exponent: float | None = None

    def to_dict(self):
        return asdict(self)


_D1_8 = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])
_D2_8 = np.array([-1 / 560, 8 / 315, -1 / 5, 8 / 5, -205 / 72, 8 / 5, -1 / 5, 8 / 315, -1 / 560])


def residual_decay(model: ParabolicModel, lam, k, plain=False, nu_range=(7, 14), per_shell=12, h=0.05, n_quad=48) -> ResidualDecay:
    """Shell norms of ``(H - lam) phi+`` from the full two-dimensional operator.

    Radial derivatives use 8th-order central differences of the radial factor
    sampled around each radius; the transversal part uses the Chebyshev
    representation of ``u_k`` and the exact chart coefficients.  Norms are
    ``(|shell|^(-1) int_shell int |res|^2 dtheta dr)^(1/2)``, fitted to ``C r^(-p)``.

    ``plain=True`` (any kappa in (0, 1)) uses ``b = sqrt(2 lam)`` with the sine
    mode ``k``, and additionally reports the norms of ``(H - lam N_r) phi+``.
    """
    kappa = model.kappa
    if plain:
        mode, ufun = sine_mode(k)
        mu = 0.0
    else:
        mode = hd_eigen_spectral(kappa, lam, k)
        mu = mode.mu
        ufun = mode
    if n_quad < 4 * k:
        raise ResolutionError(f"{n_quad} quadrature points do not resolve mode {k}")
    b = mode_wavenumber(kappa, lam, mu)
    g, wg = leggauss(n_quad)
    th = g
    u0, u1, u2 = ufun(th), ufun(th, 1), ufun(th, 2)
    K = model.kernel
    offs = h * np.arange(-4, 5)
    shell_r, norms, comp = [], [], []
    for nu in range(*nu_range):
        rs = np.geomspace(2.0**nu, 2.0 ** (nu + 1), per_shell)
        res2, comp2 = [], []
        for r in rs:
            if 2.0 * (lam - mu * (r - 4 * h) ** (-2 * kappa)) <= 0:
                raise ValueError("branch violation inside the sampled shells")
            pts = r + offs
            # local phase relative to r keeps the exponentials well conditioned
            ph = np.array([_phase_integral(b, [max(p, r)], min(p, r))[0] * (1 if p >= r else -1) for p in pts])
            radial = b(pts) ** -0.5 * np.exp(1j * ph)
            f0 = radial[4]
            f1 = complex(_D1_8 @ radial) / h
            f2 = complex(_D2_8 @ radial) / h**2
            y = _par.y_of(kappa, r, th)
            Nr, dNr = K.N_r(y, th), K.dr_N_r(y, th)
            Nt, dNt = K.N_theta(y, th), K.dtheta_N_theta(y, th)
            W = K.W_r(y, th) + K.W_theta(y, th)
            Hphi = -0.5 * ((Nr * f2 + dNr * f1) * u0 + f0 * (Nt * u2 + dNt * u1) + W * f0 * u0)
            res = Hphi - lam * f0 * u0
            res2.append(float(np.sum(wg * np.abs(res) ** 2)))
            if plain:
                comp2.append(float(np.sum(wg * np.abs(Hphi - lam * Nr * f0 * u0) ** 2)))
        width = rs[-1] - rs[0]
        shell_r.append(float(rs[0]))
        norms.append(math.sqrt(np.trapezoid(res2, rs) / width))
        if plain:
            comp.append(math.sqrt(np.trapezoid(comp2, rs) / width))
    centres = [r * math.sqrt(2.0) for r in shell_r]
    fit = fit_decay(centres, norms)
    cfit = fit_decay(centres, comp) if plain else None
    return ResidualDecay(
        kappa,
        float(lam),
        int(k),
        bool(plain),
        shell_r,
        norms,
        fit.exponent,
        fit.r_squared,
        comp,
        cfit.exponent if cfit else None,
    )


# --------------------------------------------------------------------------
# the genuine generalized eigenfunction and the failure of plain asymptotics


@dataclass
class PhaseTrace:
    r: np.ndarray
    xi: np.ndarray  # (n_r, n_modes) plain-transported coefficients

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "mode", "re_xi", "im_xi", "abs_xi", "arg_xi"])
            for j, r in enumerate(self.r):
                for m in range(self.xi.shape[1]):
                    v = self.xi[j, m]
                    w.writerow([f"{r:.12g}", m + 1, f"{v.real:.17g}", f"{v.imag:.17g}", f"{abs(v):.17g}", f"{np.angle(v):.17g}"])


@dataclass
class FailureReport:
    kappa: float
    lam: float
    k: int
    mu: float
    residual_exponent_fit: float
    log_slope_fit: float
    predicted_log_slope: float
    nonconvergence_lower_bound: float
    fit_variable: str
    fit_r_squared: float
    linear_r_squared: float
    ladder_spread: float
    flags: list = field(default_factory=list)
    trace: PhaseTrace | None = None

    def to_dict(self):
        keys = (
            "kappa",
            "lam",
            "k",
            "mu",
            "residual_exponent_fit",
            "log_slope_fit",
            "predicted_log_slope",
            "nonconvergence_lower_bound",
            "fit_variable",
            "fit_r_squared",
            "linear_r_squared",
            "ladder_spread",
            "flags",
        )
        d = {key: getattr(self, key) for key in keys}
        d["lambda"] = d.pop("lam")
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def default_cutoff(model: ParabolicModel, lam, mu):
    """Cutoff radius with ``mu r^(-2 kappa) <= lam / 4`` on the whole ramp."""
    r_branch = (4.0 * max(mu, 0.0) / lam) ** (1.0 / (2.0 * model.kappa))
    return max(2.0 * model.r0, 2.0 * r_branch)


def generalized_eigenfunction_2d(model: ParabolicModel, lam, k, n_modes=4, eps=(1e-2, 5e-3, 2.5e-3)):
    """``phi_u = phi+ - R(lam - i0) (H - lam) phi+`` on the discrete end.

    ``phi+`` is the discretely consistent approximate eigenfunction of mode
    ``k``.  Since ``phi+`` is itself outgoing, the incoming resolvent is the one
    that produces a non-trivial eigenfunction: it adds the incoming wave
    scattered by the inner region.  The resolvent is taken at ``lam - i eps``
    for each damping in ``eps``; the outer boundary carries the values of
    ``phi+``.  Returns the list of grid functions, one per damping.
    """
    mu_k = float(model.transversal_modes(lam, k)[0][k - 1])
    pf = approx_eigenfunction(model, lam, k, n_modes=n_modes, discrete=True, r_cut=default_cutoff(model, lam, hd_eigen(model.kappa, lam, k).mu))
    grid = to_grid(model, pf, lam)
    H = model.operator()
    vec = grid.ravel()
    f = (H @ vec - lam * vec).reshape(model.shape)
    # the Dirichlet truncation drops the coupling to one more step of phi+
    b = mode_wavenumber(model.kappa, lam, mu_k, model.h)
    r_end, last = model.r[-1], model.r[-1] + model.h
    ratio = np.exp(1j * b(r_end + 0.5 * model.h) * model.h) * (np.sin(model.h * b(r_end)) / np.sin(model.h * b(last))) ** 0.5
    f[-1] += model._factors["outer_coupling"] * grid[-1] * ratio
    f = f.ravel()
    return [(vec - model.resolvent_factor(lam - 1j * e).solve(f)).reshape(model.shape) for e in eps]


def plain_transport(model: ParabolicModel, lam, phi, n_modes):
    """Outgoing coefficients with the mode-independent ``b = sqrt(2 (lam - q1))``.

    The outgoing part is separated with the central difference
    ``(u + D0 u / (i beta)) / 2``, ``beta = sin(h b_h) / h``, which is exact for
    discrete plane waves of wavenumber ``b_h = (2/h) arcsin(h b / 2)``.  Then
    ``xi(r) = exp(-i Phi) sqrt(beta) <u_m, phi_out(r)>`` with ``Phi = int b_h``
    (``q1`` is evaluated on the axis, along which the radial flow runs).
    Returns a trace on the interior nodes ``r[1:-1]``.
    """
    K = model.kernel
    h = model.h

    def bq(r):
        r = np.asarray(r, dtype=float)
        bb = np.sqrt(2.0 * (lam - K.q_curv(np.zeros_like(r), r)))
        return 2.0 / h * np.arcsin(0.5 * h * bb)

    r = model.r[1:-1]
    beta = np.sin(h * bq(r)) / h
    _, V = model.transversal_modes(lam, n_modes)
    coef = phi @ V * model.dtheta
    d0 = (coef[2:] - coef[:-2]) / (2 * h)
    out = 0.5 * (coef[1:-1] + d0 / (1j * beta[:, None]))
    Phi = _phase_integral(bq, r, r[0])
    xi = (np.exp(-1j * Phi) * np.sqrt(beta))[:, None] * out
    return PhaseTrace(r.copy(), xi)


def _r2(y, X):
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    ss = np.sum((y - y.mean()) ** 2)
    return coef, 1.0 - float(np.sum((y - X @ coef) ** 2) / ss) if ss > 0 else 1.0


def wkb_failure_demo(model: ParabolicModel, lam, k, window=None, n_modes=4, eps=(1e-2, 5e-3, 2.5e-3), ladder_tol=5e-2) -> FailureReport:
    """Generalized eigenfunction of mode ``k`` and the failure of plain transport.

    Reports the regression slope of ``arg xi_k(r)`` against ``ln r`` (kappa =
    1/2) or ``r^(1 - 2 kappa)`` (kappa < 1/2) over ``window``, its predicted
    value, and ``min_r ||xi(2r) - xi(r)|| / ||xi(r)||`` over the last resolved
    window ``[R/2, R]``, ``R`` half the end of ``window``.  The damping ladder
    is extrapolated to zero damping by first-order Richardson steps; the spread
    of the two estimates on ``window`` is reported and flagged above
    ``ladder_tol``.
    """
    regime = _regime(model.kappa)
    ev = hd_eigen(model.kappa, lam, k)
    window = window or (8.0 * model.r0, model.Rmax / 16.0)
    phis = generalized_eigenfunction_2d(model, lam, k, n_modes=n_modes, eps=eps)
    traces = [plain_transport(model, lam, p, n_modes) for p in phis]
    xi_a = 2 * traces[1].xi - traces[0].xi
    xi_b = 2 * traces[2].xi - traces[1].xi
    r = traces[0].r
    trace = PhaseTrace(r, xi_b)
    sel = (r >= window[0]) & (r <= window[1])
    spread = float(np.max(np.linalg.norm(xi_b[sel] - xi_a[sel], axis=1) / np.linalg.norm(xi_b[sel], axis=1)))
    phase = np.unwrap(np.angle(xi_b[sel, k - 1]))
    rs = r[sel]
    if regime == "kappa=1/2":
        var = np.log(rs)
        predicted = -ev.mu / math.sqrt(2 * lam)
        name = "ln r"
    else:
        var = rs ** (1 - 2 * model.kappa)
        predicted = -ev.mu / ((1 - 2 * model.kappa) * math.sqrt(2 * lam))
        name = f"r^{1 - 2 * model.kappa:g}"
    coef, r2 = _r2(phase, np.vstack([var, np.ones_like(var)]).T)
    _, r2_lin = _r2(phase, np.vstack([rs, np.ones_like(rs)]).T)
    R = 0.5 * window[1]
    norms = np.linalg.norm(xi_b, axis=1)
    ratios = []
    for j in np.nonzero((r >= 0.5 * R) & (r <= R))[0]:
        j2 = int(np.argmin(np.abs(r - 2 * r[j])))
        ratios.append(np.linalg.norm(xi_b[j2] - xi_b[j]) / norms[j])
    flags = []
    if spread > ladder_tol:
        flags.append(f"damping ladder spread {spread:.2e} exceeds {ladder_tol:g}")
    flags.append("plain transport does not converge (expected for this model)")
    rd = residual_decay(model, lam, k)
    return FailureReport(
        model.kappa,
        float(lam),
        int(k),
        ev.mu,
        rd.exponent,
        float(coef[0]),
        float(predicted),
        float(min(ratios)),
        name,
        float(r2),
        float(r2_lin),
        spread,
        flags,
        trace,
    )
