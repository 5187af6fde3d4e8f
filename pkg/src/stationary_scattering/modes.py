"""Angular mode bases, half-density radial profiles and per-mode operators.

The limiting Hilbert space G is realised at the reference sphere ``S_{r0}``
with its induced measure.  Basis vectors ``e_m`` are orthonormal there.
Radial profiles are stored in half-density gauge,
``u_m(r) = f(r)^{(d-1)/2} <eps_m, phi(r, .)>`` with ``eps_m`` orthonormal for
the bare angular measure, so that ``sum_m int |u_m|^2 dr`` is the L2 norm.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .geometry import EndChart, ManifoldModel, liouville_potential


class ResolutionError(ValueError):
    """Requested more modes than the angular grid resolves."""


def circle_labels(M=None, count=None):
    """Fourier labels ``0, 1, -1, 2, -2, ...``: all ``|m| <= M`` or the first ``count``."""
    if count is None:
        count = 2 * M + 1
    labels = [0]
    m = 1
    while len(labels) < count:
        labels.append(m)
        if len(labels) < count:
            labels.append(-m)
        m += 1
    return np.array(labels[:count])


def interval_eigenpairs(n_modes, n_grid=401):
    """Dirichlet eigenpairs of ``-d^2/dtheta^2`` on (-1, 1) by finite differences.

    Eigenvalues are Richardson-extrapolated from grids with ``n_grid`` and
    ``2 n_grid + 1`` interior points; eigenvectors are the (exact) discrete
    sine vectors on the ``n_grid`` grid, normalised for ``h * sum |v|^2 = 1``.
    """
    if n_modes > n_grid // 4:
        raise ResolutionError(f"{n_modes} modes exceed the angular resolution of {n_grid} points")

    def fd(n):
        h = 2.0 / (n + 1)
        w, v = eigh_tridiagonal(np.full(n, 2.0 / h**2), np.full(n - 1, -1.0 / h**2), select="i", select_range=(0, n_modes - 1))
        return w, v, h

    w1, v1, h1 = fd(n_grid)
    w2, _, h2 = fd(2 * n_grid + 1)
    nu = w2 + (w2 - w1) * h2**2 / (h1**2 - h2**2)
    theta = -1.0 + h1 * np.arange(1, n_grid + 1)
    v1 = v1 / np.sqrt(h1)
    # fix signs so each vector is positive just inside theta = -1
    v1 = v1 * np.sign(v1[0])
    return nu, v1, theta


@dataclass(frozen=True)
class EndModes:
    kind: str  # "circle" | "interval" | "point"
    labels: np.ndarray
    nu: np.ndarray
    theta: np.ndarray
    eps: np.ndarray  # (n_theta, n_modes) orthonormal for the bare angular measure
    weight: float  # quadrature weight of the angular grid
    ref_scale: float  # f(r0)^{(d-1)} so that e_m = eps_m / sqrt(ref_scale)

    @property
    def size(self):
        return len(self.nu)

    def e(self):
        """Basis of G, orthonormal in the induced measure of the reference sphere."""
        return self.eps / np.sqrt(self.ref_scale)


@dataclass(frozen=True)
class ModeBasis:
    ends: tuple

    @property
    def shared(self):
        return self.ends[0]

    @property
    def size(self):
        return self.ends[0].size


def build_mode_basis(model: ManifoldModel, M=None, count=None, n_theta=None) -> ModeBasis:
    """Angular eigenbasis per end.

    Circles keep ``|m| <= M`` (or the first ``count`` labels in the order
    ``0, 1, -1, ...``); Dirichlet intervals keep ``k = 1..M``; one-dimensional
    ends carry a single trivial mode.
    """
    if M is not None and M < (0 if model.ends[0].angular == "circle" else 1):
        raise ValueError("M must be >= 1")
    out = []
    for chart in model.ends:
        ref = float(chart.f.value(chart.r0)) ** (chart.d - 1) if chart.kind == "warped" else 1.0
        if chart.kind == "warped" and chart.d == 1:
            out.append(EndModes("point", np.array([0]), np.array([0.0]), np.zeros(1), np.ones((1, 1)), 1.0, 1.0))
            continue
        if chart.angular == "circle":
            labels = circle_labels(M if M is not None else 2, count)
            n = n_theta or max(16, 4 * int(np.max(np.abs(labels))) + 4)
            if int(np.max(np.abs(labels))) > n // 4:
                raise ResolutionError("too many Fourier modes for the angular grid")
            th = 2 * np.pi * np.arange(n) / n
            eps = np.exp(1j * np.outer(th, labels)) / np.sqrt(2 * np.pi)
            out.append(EndModes("circle", labels, labels.astype(float) ** 2, th, eps, 2 * np.pi / n, ref))
        else:
            k = count or M or 1
            nu, vec, th = interval_eigenpairs(k, n_theta or 401)
            out.append(EndModes("interval", np.arange(1, k + 1), nu, th, vec.astype(complex), th[1] - th[0], ref))
    return ModeBasis(tuple(out))


# --------------------------------------------------------------------------


@dataclass
class ModeFunction:
    """Radial profiles ``u[m, j]`` on the nodes ``coords``.

    For single-end models ``coords`` are radii; for ``two_end_line`` models
    they are the global coordinate ``x`` (end 0 at ``x < 0``, end 1 at ``x >= 0``).
    """

    coords: np.ndarray
    u: np.ndarray
    gauge: str = "half_density"
    weights: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u = np.atleast_2d(np.asarray(self.u, dtype=complex))
        if self.u.shape[1] != len(self.coords):
            raise ValueError("profile length does not match the grid")
        if self.weights is None:
            h = self.coords[1] - self.coords[0] if len(self.coords) > 1 else 1.0
            self.weights = np.full(len(self.coords), h)

    @property
    def n_modes(self):
        return self.u.shape[0]

    def norm2(self):
        return float(np.sum(self.weights * np.abs(self.u) ** 2))

    def inner(self, other: "ModeFunction"):
        """``<self, other>``, antilinear in the first slot."""
        return complex(np.sum(self.weights * np.conj(self.u) * other.u))

    def copy_with(self, u):
        return ModeFunction(self.coords, u, self.gauge, self.weights, dict(self.meta))

    def to_csv(self, path, two_end=False):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["end", "mode", "r", "re_u", "im_u"])
            for m in range(self.n_modes):
                for x, val in zip(self.coords, self.u[m]):
                    end = (1 if x >= 0 else 0) if two_end else 0
                    w.writerow([end, m, f"{abs(x) if two_end else x:.12g}", f"{val.real:.17g}", f"{val.imag:.17g}"])

    @classmethod
    def from_csv(cls, path):
        rows = list(csv.DictReader(open(path)))
        modes = sorted({int(r["mode"]) for r in rows})
        two_end = any(r["end"] == "0" for r in rows) and any(r["end"] == "1" for r in rows)
        coords = []
        u = {m: [] for m in modes}
        for r in rows:
            x = float(r["r"]) * (-1 if two_end and r["end"] == "0" else 1)
            if int(r["mode"]) == modes[0]:
                coords.append(x)
            u[int(r["mode"])].append(complex(float(r["re_u"]), float(r["im_u"])))
        return cls(np.array(coords), np.array([u[m] for m in modes]))


def _half_density_factor(chart: EndChart, r):
    if chart.d == 1:
        return np.ones_like(np.asarray(r, dtype=float))
    return np.exp(0.5 * (chart.d - 1) * chart.f.log_f(r))


def to_modes(samples, r, chart: EndChart, basis_end: EndModes) -> ModeFunction:
    """Geometric samples ``phi[j, i] = phi(r_j, theta_i)`` to half-density profiles."""
    samples = np.asarray(samples, dtype=complex)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape != (len(r), len(basis_end.theta)):
        raise ValueError(f"samples of shape {samples.shape} do not match grid ({len(r)}, {len(basis_end.theta)})")
    coef = samples @ np.conj(basis_end.eps) * basis_end.weight
    return ModeFunction(np.asarray(r, dtype=float), (coef * _half_density_factor(chart, r)[:, None]).T)


def from_modes(mf: ModeFunction, chart: EndChart, basis_end: EndModes):
    """Half-density profiles back to geometric samples on the angular grid."""
    if mf.n_modes != basis_end.size:
        raise ValueError("mode count does not match the basis")
    geo = (mf.u.T / _half_density_factor(chart, mf.coords)[:, None]) @ basis_end.eps.T
    return geo


def coefficients_to_angular(xi, basis_end: EndModes):
    """Angular function on the reference sphere with G-coefficients ``xi``."""
    return basis_end.e() @ np.asarray(xi, dtype=complex)


def g_norm2_quadrature(values, basis_end: EndModes):
    """Induced-measure quadrature of ``|values|^2`` on the reference sphere."""
    return float(np.sum(np.abs(values) ** 2) * basis_end.weight * basis_end.ref_scale)


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModeOperator:
    """``h_m = -1/2 d^2 + W(x)`` on the radial (or global) coordinate."""

    nu: float
    W: callable
    two_end: bool

    def __call__(self, x):
        return self.W(x)


def assemble_mode_hamiltonian(model: ManifoldModel, basis: ModeBasis, m: int) -> ModeOperator:
    """Per-mode operator in half-density gauge, ``W = nu/(2 f^2) + q + V``."""
    chart = model.ends[0]
    if chart.kind != "warped":
        raise ValueError("chart is not separable; use the two-dimensional parabolic solver")
    if not model.potential.separable:
        raise ValueError("angular-dependent potential: use a two-dimensional discretisation")
    nu = float(basis.shared.nu[m])
    if model.coupling == "two_end_line":
        n = (chart.d - 1) / 2.0

        def W(x):
            x = np.asarray(x, dtype=float)
            L1, L2 = model.global_dlog(x), model.global_dlog(x, 2)
            out = 0.5 * (n * L2 + (n * L1) ** 2) + model.potential(x)
            if chart.d > 1:
                out = out + nu / 2.0 * np.exp(-2.0 * model.global_log_f(x))
            return out

        return ModeOperator(nu, W, True)

    def W(r):
        r = np.asarray(r, dtype=float)
        out = liouville_potential(chart, r) + chart.V(r)
        if chart.d > 1:
            out = out + nu / 2.0 * np.exp(-2.0 * chart.f.log_f(r))
        return out

    return ModeOperator(nu, W, False)
