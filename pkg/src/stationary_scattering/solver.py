"""Per-mode radial resolvent solves with radiation closures, and diagnostics.

Each mode ``u_m`` (half-density gauge) solves ``-1/2 u'' + W_m u - z u = psi_m``
on a uniform grid.  The discrete operator is complex symmetric tridiagonal::

    (A u)_j = -(u_{j+1} - 2 u_j + u_{j-1}) / (2 h^2) + (W_j - z) u_j

with ``u_0 = 0`` at ``r0`` (Dirichlet) and a ghost value ``u_{N+1} = mu u_N``
at each open end.  ``mu`` solves the discrete dispersion relation of the
frozen end coefficient, ``mu + 1/mu = 2 + 2 h^2 (W_N - z)``, times the WKB
amplitude factor ``exp(-h b'/(2 b))``: a discretisation of
``u' = (i b - b'/(2 b)) u``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from .conditions import fit_decay
from .geometry import (
    ManifoldModel,
    SpectralParameterError,
    critical_energy,
    effective_potential,
    eval_metric,
    phase_a,
    r_lambda,
    riccati_defect,
)
from .modes import ModeBasis, ModeFunction, assemble_mode_hamiltonian

BC_TAGS = ("radiation_outgoing", "radiation_incoming", "damped")


class ClosureError(ValueError):
    """Energy too close to a mode turning point at the outer boundary."""


class EigenvalueCollision(ArithmeticError):
    """Singular discrete system."""


@dataclass(frozen=True)
class RadialGrid:
    """Uniform grid.  Half-line: nodes ``r0 + j h``, ``j = 1..n``.  Line: ``-X + j h``, ``j = 0..n``."""

    r0: float
    Rmax: float
    n: int
    two_end: bool = False

    @property
    def h(self):
        return (2 * self.Rmax if self.two_end else self.Rmax - self.r0) / self.n

    @property
    def nodes(self):
        if self.two_end:
            return -self.Rmax + self.h * np.arange(self.n + 1)
        return self.r0 + self.h * np.arange(1, self.n + 1)

    @classmethod
    def for_model(cls, model: ManifoldModel, h=0.05, Rmax=None):
        R = Rmax if Rmax is not None else model.Rmax
        if model.coupling == "two_end_line":
            n = 2 * int(round(R / h))
            return cls(model.r0, R, n, True)
        return cls(model.r0, R, int(round((R - model.r0) / h)), False)

    def radii(self, model: ManifoldModel):
        """Escape-function value at the nodes."""
        return model.escape_r(self.nodes) if self.two_end else self.nodes

    def check_resolution(self, lam_max, lam0=0.0):
        wl = 2 * math.pi / math.sqrt(2 * (lam_max - lam0))
        return self.h <= wl / 20


def _outward_derivative(W, x, orientation, step=1e-4):
    return orientation * (W(x + step) - W(x - step)) / (2 * step)


def closure_factor(W_end, dW_out, z, h, bc, closure_energy=None):
    """Ghost ratio ``mu = u_{N+1} / u_N`` at an open end (outward-pointing)."""
    lam = float(np.real(z)) if closure_energy is None else float(np.real(closure_energy))
    zc = z if closure_energy is None else closure_energy
    if abs(lam - W_end) < 1e-6 and abs(np.imag(zc)) == 0:
        raise ClosureError("energy at a mode turning point on the boundary; increase Rmax")
    c = 1.0 + h * h * (W_end - zc)
    root = np.sqrt(complex(c * c - 1.0))
    cands = np.array([c + root, c - root])
    if bc == "damped" or (lam < W_end):
        mu = cands[np.argmin(np.abs(cands))]
        if abs(abs(mu) - 1.0) < 1e-14:  # real energy on the propagating side of "damped"
            mu = cands[np.argmin(np.abs(cands - 1))]
    else:
        c0 = 1.0 + h * h * (W_end - lam)
        if c0 < -1.0:
            raise ClosureError("grid too coarse for the outgoing wavelength")
        s = 1.0 if bc == "radiation_outgoing" else -1.0
        mu0 = c0 + 1j * s * math.sqrt(max(1.0 - c0 * c0, 0.0))
        mu = cands[np.argmin(np.abs(cands - mu0))]
    b2 = 2.0 * (lam - W_end)
    amp = math.exp(-h * (-2.0 * dW_out) / (4.0 * b2)) if abs(b2) > 1e-12 else 1.0
    return complex(mu * amp)


@dataclass
class ModeSystem:
    """Tridiagonal system for one mode at one ``z``."""

    diag: np.ndarray
    off: float
    h: float
    mu_right: complex
    mu_left: complex | None
    z: complex

    @property
    def n(self):
        return len(self.diag)

    def full_diag(self):
        d = self.diag.astype(complex).copy()
        d[-1] += -0.5 * self.mu_right / self.h**2
        if self.mu_left is not None:
            d[0] += -0.5 * self.mu_left / self.h**2
        return d

    def matvec(self, u):
        d = self.full_diag()
        out = d * u
        out[:-1] += self.off * u[1:]
        out[1:] += self.off * u[:-1]
        return out

    def dense(self):
        d = self.full_diag()
        return np.diag(d) + np.diag(np.full(self.n - 1, self.off), 1) + np.diag(np.full(self.n - 1, self.off), -1)

    def solve(self, rhs):
        d = self.full_diag()
        ab = np.zeros((3, self.n), dtype=complex)
        ab[0, 1:] = self.off
        ab[1] = d
        ab[2, :-1] = self.off
        try:
            x = solve_banded((1, 1), ab, rhs.astype(complex))
            x = x + solve_banded((1, 1), ab, rhs - self.matvec(x))
        except (LinAlgError, ValueError) as exc:
            raise EigenvalueCollision(str(exc)) from exc
        if not np.all(np.isfinite(x)):
            raise EigenvalueCollision("non-finite solution: z is (numerically) an eigenvalue")
        return x


def mode_system(model, basis, grid: RadialGrid, m, z, bc, closure_energy=None) -> ModeSystem:
    op = assemble_mode_hamiltonian(model, basis, m)
    x = grid.nodes
    h = grid.h
    W = op.W(x)
    diag = 1.0 / h**2 + W - z
    muR = closure_factor(W[-1], _outward_derivative(op.W, x[-1], 1.0), z, h, bc, closure_energy)
    muL = None
    if grid.two_end:
        muL = closure_factor(W[0], _outward_derivative(op.W, x[0], -1.0), z, h, bc, closure_energy)
    return ModeSystem(diag, -0.5 / h**2, h, muR, muL, z)


@dataclass
class ResolventSolution:
    phi: ModeFunction
    psi: ModeFunction
    z: complex
    bc: str
    residual: float
    grid: RadialGrid
    model: ManifoldModel
    basis: ModeBasis
    systems: list = field(repr=False, default_factory=list)

    @property
    def lam(self):
        return float(np.real(self.z))


def _check_bc(bc):
    if bc not in BC_TAGS:
        raise ValueError(f"unknown boundary condition {bc!r}")


def solve_resolvent(model, basis, grid, psi: ModeFunction, z, bc="radiation_outgoing", lam0=None, closure_energy=None):
    """Solve ``(H - z) phi = psi`` mode by mode.

    ``radiation_outgoing`` realises ``R(lambda + i0)``, ``radiation_incoming``
    ``R(lambda - i0)``; ``damped`` uses decaying closures (needs Im z != 0).
    ``closure_energy`` freezes the ghost ratios at another energy, keeping the
    discrete resolvent identity exact between different ``z``.
    """
    _check_bc(bc)
    z = complex(z)
    if bc != "damped" and closure_energy is None:
        l0 = critical_energy(model).lambda0 if lam0 is None else lam0
        if z.real <= l0:
            raise SpectralParameterError(f"lambda = {z.real} <= lambda0 = {l0}")
    if bc == "damped" and z.imag == 0:
        raise ValueError("damped closure needs Im z != 0")
    if psi.u.shape[1] != len(grid.nodes):
        raise ValueError("source does not live on the solver grid")
    phi = np.zeros_like(psi.u)
    systems = []
    num = den = 0.0
    for m in range(psi.n_modes):
        sysm = mode_system(model, basis, grid, m, z, bc, closure_energy)
        systems.append(sysm)
        if np.any(psi.u[m]):
            phi[m] = sysm.solve(psi.u[m])
            num += np.sum(np.abs(sysm.matvec(phi[m]) - psi.u[m]) ** 2)
            den += np.sum(np.abs(psi.u[m]) ** 2)
    res = math.sqrt(num / den) if den > 0 else 0.0
    out = ModeFunction(grid.nodes, phi, meta={"r": grid.radii(model)})
    return ResolventSolution(out, psi, z, bc, res, grid, model, basis, systems)


def epsilon_ladder(model, basis, grid, psi, lam, gammas=(1e-2, 5e-3, 2.5e-3), sign=+1):
    """First-order Richardson limit of damped solves at ``lam +- i Gamma``.

    Returns the extrapolated profiles and the last-rung change as an error estimate.
    """
    sols = [solve_resolvent(model, basis, grid, psi, lam + sign * 1j * g, "damped").phi.u for g in gammas]
    g2, g3 = gammas[-2], gammas[-1]
    ext = (g2 * sols[-1] - g3 * sols[-2]) / (g2 - g3)
    g1 = gammas[0]
    prev = (g1 * sols[-2] - g2 * sols[0]) / (g1 - g2)
    return psi.copy_with(ext), psi.copy_with(ext - prev)


# --------------------------------------------------------------------------
# Besov norms


@dataclass
class BesovNorms:
    B: float
    B_star: float
    shells: list  # (R_nu, ||F_nu psi||)


def _shell_masses(r, weights, density):
    """Mass of ``density`` per dyadic shell ``[2^nu, 2^(nu+1))``; r < 1 joins shell 0."""
    r = np.asarray(r, dtype=float)
    lg = np.log2(np.maximum(r, 1.0))
    nu = np.floor(lg + 1e-12).astype(int)
    on_edge = (np.abs(lg - np.round(lg)) < 1e-12) & (r > 1.0 + 1e-12)
    masses = {}
    for k, w, d, edge in zip(nu, weights, density, on_edge):
        if edge:
            masses[k - 1] = masses.get(k - 1, 0.0) + 0.5 * w * d
            masses[k] = masses.get(k, 0.0) + 0.5 * w * d
        else:
            masses[k] = masses.get(k, 0.0) + w * d
    return masses


def besov_norms(function: ModeFunction, r=None) -> BesovNorms:
    """``||psi||_B = sum R^(1/2) ||F psi||`` and ``||psi||_B* = sup R^(-1/2) ||F psi||``."""
    r = function.meta.get("r", function.coords) if r is None else r
    dens = np.sum(np.abs(function.u) ** 2, axis=0)
    masses = _shell_masses(r, function.weights, dens)
    if len(masses) < 2:
        raise ValueError("grid spans fewer than 2 dyadic shells")
    shells = [(2.0**k, math.sqrt(max(v, 0.0))) for k, v in sorted(masses.items())]
    B = sum(math.sqrt(R) * n for R, n in shells)
    Bs = max(n / math.sqrt(R) for R, n in shells)
    return BesovNorms(B, Bs, shells)


def shell_scaled_norms(function: ModeFunction, r=None, r_min=None):
    """``(R_nu, R_nu^(-1/2) ||F_nu psi||)`` for full shells beyond ``r_min``."""
    bn = besov_norms(function, r)
    rr = function.meta.get("r", function.coords) if r is None else r
    top = np.max(rr)
    out = [(R, n / math.sqrt(R)) for R, n in bn.shells if 2 * R <= top * (1 + 1e-9) and (r_min is None or R >= r_min)]
    return out


# --------------------------------------------------------------------------
# radiation condition and Green identity


def radial_derivative(u, h, left_zero=True):
    """Second-order derivative along the node axis; ``u_0 = 0`` assumed left of node 1."""
    du = np.empty_like(u)
    du[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2 * h)
    du[..., 0] = u[..., 1] / (2 * h) if left_zero else (-3 * u[..., 0] + 4 * u[..., 1] - u[..., 2]) / (2 * h)
    du[..., -1] = (3 * u[..., -1] - 4 * u[..., -2] + u[..., -3]) / (2 * h)
    return du


@dataclass
class RadiationResidual:
    bstar: float
    source_B: float
    ratio: float
    h_form: float
    beta: float
    warning: str | None = None


def _radiation_phase(model, z, x, sign):
    """Mode-independent complex phase ``a`` at the nodes (along the outward direction)."""
    lam0 = critical_energy(model).lambda0
    if model.coupling == "two_end_line":
        out = np.zeros(len(x), dtype=complex)
        for e, chart in enumerate(model.ends):
            mask = (x >= 0) if e == 1 else (x < 0)
            r = np.abs(x[mask])
            ok = r > chart.r0 * 0.5
            vals = np.zeros(mask.sum(), dtype=complex)
            rl = r_lambda(chart, float(np.real(z)), lam0)
            vals[ok] = phase_a(chart, z, r[ok], 0.0, sign, lam0, rl).a
            out[mask] = vals
        return out
    chart = model.ends[0]
    return phase_a(chart, z, x, 0.0, sign, lam0, r_lambda(chart, float(np.real(z)), lam0)).a


def radiation_residual(solution: ResolventSolution, beta=0.0, beta_c=None) -> RadiationResidual:
    """``||r^beta (A -+ a) phi||_B*`` against ``||r^beta psi||_B`` with ``A = -i d/dr``."""
    sign = -1 if solution.bc == "radiation_incoming" else 1
    model, grid = solution.model, solution.grid
    x = grid.nodes
    z = solution.lam if solution.bc != "damped" else solution.z
    rr = grid.radii(model)
    du = radial_derivative(solution.phi.u, grid.h, left_zero=not grid.two_end)
    orient = np.where(x < 0, -1.0, 1.0) if grid.two_end else 1.0
    Au = -1j * orient * du
    a = _radiation_phase(model, solution.lam, x, sign)
    res = solution.phi.copy_with((rr**beta) * (Au - sign * a * solution.phi.u))
    res.meta["r"] = rr
    src = solution.psi.copy_with((rr**beta) * solution.psi.u)
    src.meta["r"] = rr
    bstar = besov_norms(res).B_star
    sB = besov_norms(src).B
    hform = 0.0
    chart = model.ends[0]
    if chart.kind == "warped" and chart.d > 1 and not grid.two_end:
        L1 = chart.f.dlog(x)
        f2 = np.exp(2 * chart.f.log_f(x))
        for m in range(solution.phi.n_modes):
            nu = solution.basis.shared.nu[m]
            hform += float(np.sum(grid.h * L1 * nu / f2 * np.abs(solution.phi.u[m]) ** 2))
    warn = None
    if beta_c is not None and beta >= beta_c:
        warn = f"beta = {beta} >= beta_c = {beta_c}: bound not covered by theory"
        warnings.warn(warn)
    return RadiationResidual(bstar, sB, bstar / sB if sB > 0 else float("nan"), hform, beta, warn)


@dataclass
class GreenCheck:
    flux: float
    source_term: float
    volume_term: float
    discrepancy: float
    scale: float


def greens_identity_check(solution: ResolventSolution, r) -> GreenCheck:
    """Discrete ``Im(conj(u) u')|_{dB_r} = -2 Im<1_B u, psi> - 2 Im(z) ||1_B u||^2``."""
    grid = solution.grid
    x = grid.nodes
    h = grid.h
    u, psi = solution.phi.u, solution.psi.u
    if grid.two_end:
        inside = np.nonzero(np.abs(x) <= r)[0]
        k1, k2 = inside[0], inside[-1]
        if k1 == 0 or k2 == len(x) - 1:
            raise ValueError("ball must lie strictly inside the grid")
        flux = np.sum(np.imag(np.conj(u[:, k2]) * u[:, k2 + 1])) - np.sum(np.imag(np.conj(u[:, k1 - 1]) * u[:, k1]))
        sl = slice(k1, k2 + 1)
    else:
        k2 = np.nonzero(x <= r)[0][-1]
        if k2 == len(x) - 1:
            raise ValueError("radius must lie strictly inside the grid")
        flux = np.sum(np.imag(np.conj(u[:, k2]) * u[:, k2 + 1]))
        sl = slice(0, k2 + 1)
    flux /= h
    src = -2.0 * float(np.imag(np.sum(h * np.conj(u[:, sl]) * psi[:, sl])))
    vol = -2.0 * float(np.imag(solution.z)) * float(np.sum(h * np.abs(u[:, sl]) ** 2))
    scale = math.sqrt(solution.psi.norm2()) * besov_norms(solution.phi).B_star
    return GreenCheck(float(flux), src, vol, abs(flux - src - vol), scale)


# --------------------------------------------------------------------------
# decomposition of H - z


_D1_8 = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])
_D2_8 = np.array([-1 / 560, 8 / 315, -1 / 5, 8 / 5, -205 / 72, 8 / 5, -1 / 5, 8 / 315, -1 / 560])


def _stencil(u, coeffs, h, power):
    n = u.shape[-1]
    out = np.zeros(u.shape[:-1] + (n - 8,), dtype=complex)
    for k, c in enumerate(coeffs):
        out += c * u[..., k : n - 8 + k]
    return out / h**power


@dataclass
class DecompositionResult:
    shells: list
    exponent: float
    r_squared: float
    formula_gap: float  # max |FD-composed remainder - pointwise formula| relative to max remainder


def decomposition_residual(model, lam, phi: ModeFunction | None = None, sign=+1, basis=None, h=0.05, Rmax=None, k=1):
    """Remainder ``(H - z) - 1/2 (A +- a) eta~ (A -+ a) - 1/2 L`` applied to ``phi``.

    On warped ends the composition is carried out with 8th-order differences
    and compared with the closed form ``q2 + 1/2 (Riccati defect)``.  On
    parabolic ends the closed form (with the ``nabla^r eta~`` term) is used.
    Shell norms ``R^(-1/2) ||F_nu rem||`` are fitted to a power law.
    """
    from .fourier import wkb_eigenfunction

    chart = model.ends[0]
    lam0 = critical_energy(model).lambda0
    z = lam
    if chart.kind == "parabolic":
        from .counterexample import ParabolicModel, hd_eigen

        pm = ParabolicModel(chart.kappa, r0=chart.r0, Rmax=Rmax or chart.Rmax)
        rr = np.geomspace(4 * chart.r0, pm.Rmax, 400)
        ev = hd_eigen(chart.kappa, lam, k, n_grid=127)
        th = ev.theta
        R, T = np.meshgrid(rr, th, indexing="ij")
        rl = r_lambda(chart, lam, lam0)
        pa = phase_a(chart, z, R, T, sign, lam0, rl)
        md = eval_metric(chart, R, T)
        ep = effective_potential(chart, R, T)
        ric = riccati_defect(chart, z, R, T, sign, lam0)
        K = chart.kernel
        from . import parabolic as _par

        yy = _par.y_of(chart.kappa, R, T)
        grad_eta_t = -K.dr_N_r(yy, T)  # nabla^r (1/N_r) = N_r d_r(1/N_r)
        rem = 0.5 / md.dr2 * ric + ep.q2 + 0.25 * grad_eta_t / md.N_r * (md.laplace_r - sign * 2j * pa.a)
        dens = np.abs(rem) ** 2 * np.abs(ev.u)[None, :] ** 2 / np.abs(pa.b)
        dth = th[1] - th[0]
        per_r = np.sum(dens, axis=1) * dth
        w = np.gradient(rr)
        masses = _shell_masses(rr, w, per_r)
        shells = [(2.0**q, math.sqrt(v) / math.sqrt(2.0**q)) for q, v in sorted(masses.items()) if 2.0**q >= rr[0] and 2.0 ** (q + 1) <= rr[-1]]
        fit = fit_decay([s[0] for s in shells], [s[1] for s in shells])
        return DecompositionResult(shells, fit.exponent, fit.r_squared, 0.0)

    basis = basis or __import__("stationary_scattering.modes", fromlist=["build_mode_basis"]).build_mode_basis(model, 0 if chart.angular == "circle" else 1)
    R = Rmax or chart.Rmax
    grid = RadialGrid(chart.r0, R, int(round((R - chart.r0) / h)))
    x = grid.nodes
    if phi is None:
        xi = np.zeros(basis.size, dtype=complex)
        xi[0] = 1.0
        phi = wkb_eigenfunction(model, lam, sign, xi, basis=basis, grid=grid)
    u = phi.u
    rl = r_lambda(chart, lam, lam0)
    xi_ = x[4:-4]
    pa = phase_a(chart, z, xi_, 0.0, sign, lam0, rl)
    a = pa.a
    uc = u[:, 4:-4]
    d1 = _stencil(u, _D1_8, grid.h, 1)
    d2 = _stencil(u, _D2_8, grid.h, 2)
    rem_fd = np.zeros_like(uc)
    rem_formula = np.zeros_like(uc)
    ep = effective_potential(chart, xi_)
    ric = riccati_defect(chart, z, xi_, 0.0, sign, lam0)
    # derivative of a along r for the composition (A + s a)(A - s a)
    da = np.gradient(a, grid.h, edge_order=2)
    for m in range(u.shape[0]):
        op = assemble_mode_hamiltonian(model, basis, m)
        Hu = -0.5 * d2[m] + (op.W(xi_) - z) * uc[m]
        v = -1j * d1[m] - sign * a * uc[m]  # (A - s a) u
        # (A + s a) v = -i v' + s a v with v' = -i u'' - s (a' u + a u')
        dv = -1j * d2[m] - sign * (da * uc[m] + a * d1[m])
        comp = 0.5 * (-1j * dv + sign * a * v)
        Lu = op.nu * np.exp(-2 * chart.f.log_f(xi_)) * uc[m] if chart.d > 1 else 0.0
        rem_fd[m] = Hu - comp - 0.5 * Lu
        rem_formula[m] = (ep.q2 + 0.5 * ric) * uc[m]
    sel = xi_ >= max(rl, 2 * chart.r0)
    scale = max(np.max(np.abs(rem_fd[:, sel])), 1e-8 * np.max(np.abs(uc[:, sel])))
    gap = float(np.max(np.abs(rem_fd[:, sel] - rem_formula[:, sel])) / scale)
    mf = ModeFunction(xi_[sel], rem_fd[:, sel])
    shells = shell_scaled_norms(mf, r_min=rl)
    fit = fit_decay([s[0] for s in shells], [s[1] for s in shells], min_shells=3)
    return DecompositionResult(shells, fit.exponent, fit.r_squared, gap)


# --------------------------------------------------------------------------
# named sources

SOURCE_PROFILES = ("gaussian", "shell_bump", "point_mass_regularized")


def source_profile(name, grid: RadialGrid, basis, model=None, **params) -> ModeFunction:
    """Named half-density source on the solver grid.

    ``gaussian{center, width, mode}`` puts ``exp(-(r - center)^2 / (2 width^2))``
    in one mode; ``shell_bump{center, width}`` is the compact bump
    ``(1 - t^2)^3``, ``t = (r - center) / width``, in every mode;
    ``point_mass_regularized{center, eps, mode}`` is a unit-mass Gaussian of
    width ``eps``.  On two-ended lines ``r`` is the global coordinate.
    """
    x = grid.nodes
    u = np.zeros((basis.size, len(x)))
    center = float(params.get("center", (grid.r0 + 3.0) if not grid.two_end else 0.0))
    if name == "gaussian":
        w = float(params.get("width", 1.0))
        u[int(params.get("mode", 0))] = np.exp(-((x - center) ** 2) / (2 * w * w))
    elif name == "shell_bump":
        t = (x - center) / float(params.get("width", 1.0))
        u[:] = np.where(np.abs(t) < 1, (1 - t * t) ** 3, 0.0)[None, :]
    elif name == "point_mass_regularized":
        e = float(params.get("eps", 0.25))
        u[int(params.get("mode", 0))] = np.exp(-((x - center) ** 2) / (2 * e * e)) / (e * math.sqrt(2 * math.pi))
    else:
        raise ValueError(f"unknown source profile {name!r}; known: {SOURCE_PROFILES}")
    meta = {"r": grid.radii(model)} if model is not None else {}
    return ModeFunction(x, u, meta=meta)
