"""Distorted Fourier transforms, WKB generalized eigenfunctions and their asymptotics.

Boundary data ``xi`` are coefficients in the orthonormal basis of G (the
reference sphere ``S_{r0}`` with its induced measure), one row per end.  In
half-density gauge the transported profile of mode ``m`` is simply::

    xi_m(r) = exp(-+ i Phi(r)) sqrt(b(r)) u_m(r),    Phi(r) = int_{r0}^r b~ ds,

so an exact outgoing profile ``u = b^{-1/2} exp(i Phi)`` has ``xi_m == 1``.
Generalized eigenfunctions follow ``phi ~ phi+[xi+] - phi-[xi-]``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import SpectralParameterError, chi, critical_energy, phase_b, r_lambda
from .modes import ModeBasis, ModeFunction, build_mode_basis
from .solver import RadialGrid, ResolventSolution, besov_norms, solve_resolvent

_GL_X, _GL_W = np.polynomial.legendre.leggauss(6)


@dataclass
class PhaseTable:
    r: np.ndarray
    b: np.ndarray
    b_tilde: np.ndarray
    Phi: np.ndarray  # int_{r0}^r b~ ds
    lam: float
    r_lam: float


def discrete_wavenumber(b, h):
    """Wavenumber of the grid plane wave solving the 3-point scheme at local momentum ``b``."""
    return 2.0 / h * np.arcsin(np.minimum(0.5 * h * b, 1.0))


def phase_table(chart, lam, r, lam0=None, max_panel=0.25, h=None) -> PhaseTable:
    """Phases on ascending radii ``r >= r0``; the integral uses 6-point Gauss rules per gap.

    With a grid spacing ``h`` the integrand is the discrete wavenumber of the
    3-point scheme, which removes the O(h^2 r) phase drift of grid waves.
    """
    r = np.asarray(r, dtype=float)
    if lam0 is None:
        lam0 = 0.0
    rl = r_lambda(chart, lam, lam0)
    # panels: the requested radii plus a background mesh of width <= max_panel
    top = float(np.max(r)) if r.size else chart.r0
    mesh = np.linspace(chart.r0, top, max(2, int(math.ceil((top - chart.r0) / max_panel)) + 1))
    edges = np.unique(np.concatenate([mesh, r]))
    a, b_ = edges[:-1], edges[1:]
    mid, half = 0.5 * (a + b_), 0.5 * (b_ - a)
    pts = mid[:, None] + half[:, None] * _GL_X[None, :]
    bt = np.real(phase_b(chart, lam, pts, 0.0, lam0=lam0, r_lam=rl).b_tilde)
    if h is not None:
        bt = discrete_wavenumber(bt, h)
    cum = np.concatenate([[0.0], np.cumsum(np.sum(bt * _GL_W[None, :], axis=1) * half)])
    Phi = cum[np.searchsorted(edges, r)]
    ph = phase_b(chart, lam, r, 0.0, lam0=lam0, r_lam=rl)
    return PhaseTable(r, np.real(ph.b), np.real(ph.b_tilde), Phi, float(lam), rl)


def end_nodes(model, grid: RadialGrid, end):
    """Node indices of one end with ``r >= r0``, ordered outward, and their radii."""
    x = grid.nodes
    r0 = model.r0
    if not grid.two_end:
        idx = np.nonzero(x >= r0)[0]
        return idx, x[idx], 1.0
    if end == 1:
        idx = np.nonzero(x >= r0 - 1e-12)[0]
        return idx, x[idx], 1.0
    idx = np.nonzero(x <= -r0 + 1e-12)[0][::-1]
    return idx, -x[idx], -1.0


@dataclass
class BoundaryData:
    xi: np.ndarray  # (n_ends, n_modes) complex
    lam: float

    def norm(self):
        return float(np.sqrt(np.sum(np.abs(self.xi) ** 2)))

    def to_dict(self):
        return {
            "lambda": self.lam,
            "xi": [[{"re": float(v.real), "im": float(v.imag)} for v in row] for row in self.xi],
        }


@dataclass
class XiTrace:
    r: list  # per end
    xi: list  # per end, (n_modes, n_r)
    lam: float
    sign: int

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["end", "mode", "r", "re_xi", "im_xi"])
            for e, (rr, vals) in enumerate(zip(self.r, self.xi)):
                for m in range(vals.shape[0]):
                    for x, v in zip(rr, vals[m]):
                        w.writerow([e, m, f"{x:.12g}", f"{v.real:.17g}", f"{v.imag:.17g}"])


def _tables(model, grid, lam, lam0):
    out = []
    for e, chart in enumerate(model.ends):
        idx, r, orient = end_nodes(model, grid, e)
        out.append((idx, r, orient, phase_table(chart, lam, r, lam0, h=grid.h)))
    return out


def transported_profile(model, grid, u, lam, sign, lam0=None):
    """``exp(-+ i Phi) sqrt(b) u`` per end (modes x radii)."""
    lam0 = critical_energy(model).lambda0 if lam0 is None else lam0
    rs, xs = [], []
    for idx, r, _, pt in _tables(model, grid, lam, lam0):
        rs.append(r)
        xs.append(np.exp(-sign * 1j * pt.Phi) * np.sqrt(pt.b) * u[:, idx])
    return rs, xs


def xi_trace(solution: ResolventSolution, lam=None, sign=+1) -> XiTrace:
    """Pre-limit transform ``xi(r)`` of a radiation solution."""
    lam = solution.lam if lam is None else lam
    want = "radiation_outgoing" if sign > 0 else "radiation_incoming"
    if solution.bc != want:
        raise ValueError(f"sign {sign:+d} needs a {want} solution, got {solution.bc}")
    rs, xs = transported_profile(solution.model, solution.grid, solution.phi.u, lam, sign)
    return XiTrace(rs, xs, float(lam), int(sign))


def window_average(r, values, R):
    """Uniform average over ``[R, 2R]`` (trapezoid on the nodes inside)."""
    sel = (r >= R - 1e-9) & (r <= 2 * R + 1e-9)
    if sel.sum() < 3:
        raise ValueError("window has too few nodes")
    rr = r[sel]
    return np.trapezoid(values[..., sel], rr, axis=-1) / (rr[-1] - rr[0])


def averaged_limits(trace_r, trace_xi):
    """Window averages on the last two dyadic windows per end.

    Returns (xi at the last window, previous window, R of the last window).
    """
    last, prev, Rs = [], [], []
    for r, v in zip(trace_r, trace_xi):
        R = r[-1] / 2.0
        last.append(window_average(r, v, R))
        prev.append(window_average(r, v, R / 2.0))
        Rs.append(R)
    return np.array(last), np.array(prev), Rs


@dataclass
class DFTResult:
    xi: BoundaryData
    cauchy: float
    converged: bool
    parseval_lhs: float
    parseval_rhs: float
    parseval_gap: float
    window_R: list
    trace: XiTrace = field(repr=False, default=None)
    pointwise_mid: np.ndarray | None = None


def dft(model, lam, sign, psi: ModeFunction, basis: ModeBasis, grid: RadialGrid, tol=1e-2) -> DFTResult:
    """``F+-(lambda) psi`` as the window average of ``xi(r)`` on the last dyadic window."""
    lam0 = critical_energy(model).lambda0
    if lam <= lam0:
        raise SpectralParameterError(f"lambda = {lam} <= lambda0 = {lam0}")
    bc = "radiation_outgoing" if sign > 0 else "radiation_incoming"
    sol = solve_resolvent(model, basis, grid, psi, lam, bc, lam0=lam0)
    tr = xi_trace(sol, lam, sign)
    last, prev, Rs = averaged_limits(tr.r, tr.xi)
    norm = float(np.sqrt(np.sum(np.abs(last) ** 2)))
    cauchy = float(np.sqrt(np.sum(np.abs(last - prev) ** 2)))
    lhs = norm**2
    rhs = 2.0 * sign * float(np.imag(psi.inner(sol.phi)))
    mids = np.array([v[:, np.argmin(np.abs(r - 1.5 * R))] for r, v, R in zip(tr.r, tr.xi, Rs)])
    return DFTResult(
        BoundaryData(last, float(lam)),
        cauchy,
        bool(cauchy <= tol * max(norm, 1e-300)),
        lhs,
        rhs,
        abs(lhs - rhs),
        Rs,
        tr,
        mids,
    )


# --------------------------------------------------------------------------
# WKB generalized eigenfunctions


def cutoff_index(model, lam, lam0=None):
    lam0 = critical_energy(model).lambda0 if lam0 is None else lam0
    rl = max(r_lambda(c, lam, lam0) for c in model.ends)
    return int(math.ceil(math.log2(rl)))


def wkb_profiles(model, grid, lam, sign, xi, n=None, lam0=None, extra_nodes=None):
    """Half-density WKB profiles ``chi_n [2(lam - q1)]^(-1/4) exp(+- i Phi) xi`` at the nodes.

    ``extra_nodes`` evaluates the same profiles at arbitrary global coordinates.
    """
    lam0 = critical_energy(model).lambda0 if lam0 is None else lam0
    xi = np.atleast_2d(np.asarray(xi, dtype=complex))
    if xi.shape[0] != len(model.ends):
        raise ValueError("xi needs one row per end")
    n = cutoff_index(model, lam, lam0) if n is None else n
    Rn = 2.0**n
    nodes = grid.nodes if extra_nodes is None else np.asarray(extra_nodes, dtype=float)
    out = np.zeros((xi.shape[1], len(nodes)), dtype=complex)
    for e, chart in enumerate(model.ends):
        if not np.any(xi[e]):
            continue
        if grid.two_end:
            sel = np.nonzero((nodes >= Rn) if e == 1 else (nodes <= -Rn))[0]
            r = np.abs(nodes[sel])
        else:
            sel = np.nonzero(nodes >= Rn)[0]
            r = nodes[sel]
        order = np.argsort(r)
        sel, r = sel[order], r[order]
        if len(r) == 0:
            continue
        pt = phase_table(chart, lam, r, lam0, h=grid.h)
        from .geometry import effective_potential

        w = 2.0 * (lam - effective_potential(chart, r).q1)
        if np.any(w <= 0):
            raise SpectralParameterError("lambda - q1 <= 0 on the support of the cutoff")
        amp = (1.0 - chi(r / Rn)) * w**-0.25 * np.exp(sign * 1j * pt.Phi)
        out[:, sel] += np.outer(xi[e], amp)
    return out


def wkb_eigenfunction(model, lam, sign, xi, n=None, basis=None, grid=None, h=0.05) -> ModeFunction:
    """Purely outgoing (``sign = +1``) or incoming approximate eigenfunction ``phi+-[xi]``."""
    basis = basis or build_mode_basis(model, 0)
    grid = grid or RadialGrid.for_model(model, h)
    xi = np.asarray(xi, dtype=complex)
    if xi.ndim == 1:
        xi = np.tile(xi, (len(model.ends), 1)) if len(model.ends) == 1 else xi.reshape(len(model.ends), -1)
    u = wkb_profiles(model, grid, lam, sign, xi, n)
    return ModeFunction(grid.nodes, u, meta={"r": grid.radii(model)})


def _ghost_values(model, grid, lam, sign, xi, n, lam0):
    """Analytic WKB values one step beyond each open end (right, left)."""
    x = grid.nodes
    right = wkb_profiles(model, grid, lam, sign, xi, n, lam0, extra_nodes=[x[-1] + grid.h])[:, 0]
    left = None
    if grid.two_end:
        left = wkb_profiles(model, grid, lam, sign, xi, n, lam0, extra_nodes=[x[0] - grid.h])[:, 0]
    return right, left


def apply_interior(systems, u, z, ghost_right, ghost_left=None):
    """``(H - z) u`` with the interior stencil and prescribed ghost values."""
    out = np.zeros_like(u)
    for m, s in enumerate(systems):
        d = s.diag + (s.z - z)
        v = d * u[m]
        v[:-1] += s.off * u[m, 1:]
        v[1:] += s.off * u[m, :-1]
        v[-1] += s.off * ghost_right[m]
        if ghost_left is not None:
            v[0] += s.off * ghost_left[m]
        out[m] = v
    return out


@dataclass
class GeneralizedEigenfunction:
    phi: ModeFunction
    xi_minus: BoundaryData
    xi_plus: BoundaryData
    cauchy: float
    converged: bool
    cross_check: float  # |(lam - i) F+ psi_- - F+ (H - lam) phi-|
    eigen_residual: float
    norm_identity_gap: float


def generalized_eigenfunction(model, lam, xi_minus, basis: ModeBasis, grid: RadialGrid, n=None, tol=1e-2):
    """``phi = psi_- + (lam - i) R(lam + i0) psi_- - phi-[xi_-]`` with ``psi_- = R(i)(H - lam) phi-``.

    ``R(i)`` uses the same (frozen) boundary rows as ``R(lam + i0)`` so that the
    discrete resolvent identity holds exactly.  Returns ``xi_+ = (lam - i) F+ psi_-``.
    """
    lam0 = critical_energy(model).lambda0
    xi_minus = np.atleast_2d(np.asarray(xi_minus, dtype=complex))
    n = cutoff_index(model, lam, lam0) if n is None else n
    if not np.any(xi_minus):
        zero = ModeFunction(grid.nodes, np.zeros((basis.size, len(grid.nodes))), meta={"r": grid.radii(model)})
        zb = BoundaryData(np.zeros_like(xi_minus), float(lam))
        return GeneralizedEigenfunction(zero, zb, zb, 0.0, True, 0.0, 0.0, 0.0)
    phim = wkb_profiles(model, grid, lam, -1, xi_minus, n, lam0)
    gr, gl = _ghost_values(model, grid, lam, -1, xi_minus, n, lam0)
    # boundary rows of R(lam + i0), reused for R(i)
    active = [m for m in range(basis.size) if np.any(xi_minus[:, m])]
    probe = ModeFunction(grid.nodes, np.zeros((basis.size, len(grid.nodes))))
    from .solver import mode_system

    systems = [mode_system(model, basis, grid, m, lam, "radiation_outgoing") for m in range(basis.size)]
    f = apply_interior(systems, phim, lam, gr, gl)
    f[[m for m in range(basis.size) if m not in active]] = 0.0
    fsrc = probe.copy_with(f)
    psi_m = solve_resolvent(model, basis, grid, fsrc, 1j, "radiation_outgoing", closure_energy=lam).phi
    out = solve_resolvent(model, basis, grid, psi_m, lam, "radiation_outgoing", lam0=lam0)
    phi_u = psi_m.u + (lam - 1j) * out.phi.u - phim
    # xi_+ through the R(i) factorisation and from the direct source (cross-check)
    _, tr1 = transported_profile(model, grid, (lam - 1j) * out.phi.u, lam, +1, lam0)
    direct = solve_resolvent(model, basis, grid, fsrc, lam, "radiation_outgoing", lam0=lam0)
    _, tr2 = transported_profile(model, grid, direct.phi.u, lam, +1, lam0)
    rs = [end_nodes(model, grid, e)[1] for e in range(len(model.ends))]
    last, prev, _ = averaged_limits(rs, tr1)
    last2, _, _ = averaged_limits(rs, tr2)
    xp = BoundaryData(last, float(lam))
    xm = BoundaryData(xi_minus, float(lam))
    cauchy = float(np.sqrt(np.sum(np.abs(last - prev) ** 2)))
    phi = ModeFunction(grid.nodes, phi_u, meta={"r": grid.radii(model)})
    # interior eigen-residual (boundary rows excluded)
    Hphi = apply_interior(systems, phi_u, lam, np.zeros(basis.size), np.zeros(basis.size) if grid.two_end else None)
    eig = float(np.max(np.abs(Hphi[:, 1:-1]))) / max(float(np.max(np.abs(phi_u))), 1e-300)
    gap = abs(xp.norm() - xm.norm()) / max(xm.norm(), 1e-300)
    return GeneralizedEigenfunction(
        phi, xm, xp, cauchy, bool(cauchy <= tol * max(xp.norm(), 1e-300)), float(np.max(np.abs(last - last2))), eig, gap
    )


@dataclass
class Asymptotics:
    xi_minus: BoundaryData
    xi_plus: BoundaryData
    shell_energy: float  # lim R^-1 int b |u|^2 over the last window
    norm_gap: float
    cauchy: float


def _d1_4th(u, h):
    du = np.empty_like(u)
    du[..., 2:-2] = (u[..., :-4] - 8 * u[..., 1:-3] + 8 * u[..., 3:-1] - u[..., 4:]) / (12 * h)
    du[..., :2] = (-25 * u[..., :2] + 48 * u[..., 1:3] - 36 * u[..., 2:4] + 16 * u[..., 3:5] - 3 * u[..., 4:6]) / (12 * h)
    du[..., -2:] = (25 * u[..., -2:] - 48 * u[..., -3:-1] + 36 * u[..., -4:-2] - 16 * u[..., -5:-3] + 3 * u[..., -6:-4]) / (12 * h)
    return du


def extract_asymptotics(model, lam, phi: ModeFunction, grid: RadialGrid, basis=None, tol=1e-2, check=True) -> Asymptotics:
    """``xi+- = 1/2`` window average of ``exp(-+ i Phi) b^(-1/2) (A +- b) u``, with ``A = -i d/dr``."""
    lam0 = critical_energy(model).lambda0
    du = _d1_4th(phi.u, grid.h)
    if check:
        basis = basis or _basis_for(model, phi)
        basis_size = phi.n_modes
        x = grid.nodes
        lo = 0.25 * (x[-1] if not grid.two_end else grid.Rmax)
        sel = np.abs(x) >= lo
        d2 = np.zeros_like(phi.u)
        d2[:, 1:-1] = (phi.u[:, 2:] - 2 * phi.u[:, 1:-1] + phi.u[:, :-2]) / grid.h**2
        from .modes import assemble_mode_hamiltonian

        res = 0.0
        for m in range(basis_size):
            W = assemble_mode_hamiltonian(model, basis, m).W(x)
            r_m = -0.5 * d2[m] + (W - lam) * phi.u[m]
            res = max(res, float(np.max(np.abs(r_m[1:-1][sel[1:-1]]))))
        scale = max(lam, 1e-3) * max(float(np.max(np.abs(phi.u[:, sel]))), 1e-300)
        if res > tol * scale:
            raise ValueError(f"not an approximate eigenfunction: residual {res / scale:.2e} > {tol}")
    plus, minus, energy, rs = [], [], [], []
    for e, (idx, r, orient, pt) in enumerate(_tables(model, grid, lam, lam0)):
        u = phi.u[:, idx]
        Au = -1j * orient * du[:, idx]
        b = pt.b
        vp = 0.5 * np.exp(-1j * pt.Phi) * (Au + b * u) / np.sqrt(b)
        vm = 0.5 * np.exp(1j * pt.Phi) * (Au - b * u) / np.sqrt(b)
        R = r[-1] / 2.0
        plus.append((window_average(r, vp, R), window_average(r, vp, R / 2)))
        minus.append((window_average(r, vm, R), window_average(r, vm, R / 2)))
        energy.append(float(np.sum(window_average(r, b * np.abs(u) ** 2, R))))
    xp = np.array([p[0] for p in plus])
    xm = np.array([p[0] for p in minus])
    cauchy = float(
        np.sqrt(sum(np.sum(np.abs(a - b) ** 2) for a, b in plus) + sum(np.sum(np.abs(a - b) ** 2) for a, b in minus))
    )
    np_, nm = np.linalg.norm(xp), np.linalg.norm(xm)
    gap = abs(np_ - nm) / max(np_, nm, 1e-300)
    return Asymptotics(BoundaryData(xm, float(lam)), BoundaryData(xp, float(lam)), float(sum(energy)), gap, cauchy)


def _basis_for(model, phi):
    chart = model.ends[0]
    if chart.d == 1:
        return build_mode_basis(model)
    if chart.angular == "circle":
        return build_mode_basis(model, count=phi.n_modes)
    return build_mode_basis(model, phi.n_modes)
