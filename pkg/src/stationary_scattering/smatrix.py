"""Scattering matrices from generalized eigenfunctions, and the 1D well benchmark."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .fourier import generalized_eigenfunction
from .geometry import ManifoldModel, critical_energy, square_well_line
from .modes import ModeBasis, build_mode_basis
from .solver import RadialGrid


@dataclass
class ScatteringMatrix:
    lam: float
    index: list  # (end, mode label) per row/column
    S: np.ndarray
    defect: float
    converged: bool
    column_norm_gaps: list = field(default_factory=list)
    column_cauchy: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    @property
    def n_ends(self):
        return len({e for e, _ in self.index})

    def to_dict(self):
        blocks = end_blocks(self)
        return {
            "lambda": self.lam,
            "index": [[int(e), int(m)] for e, m in self.index],
            "entries": [[{"re": float(v.real), "im": float(v.imag)} for v in row] for row in self.S],
            "defect": self.defect,
            "blocks": {f"{i},{j}": [[abs(v) for v in row] for row in B] for (i, j), B in blocks.items()},
            "sigma_min": {
                f"{i},{j}": float(np.linalg.svd(B, compute_uv=False).min()) for (i, j), B in blocks.items() if i != j
            },
            "converged": self.converged,
            "flags": self.flags,
        }

    def to_json(self, path=None):
        txt = json.dumps(self.to_dict(), sort_keys=True, indent=1)
        if path:
            with open(path, "w") as fh:
                fh.write(txt)
        return txt


def unitarity_check(S) -> float:
    """Frobenius norm of ``S* S - I``."""
    M = S.S if isinstance(S, ScatteringMatrix) else np.asarray(S)
    return float(np.linalg.norm(M.conj().T @ M - np.eye(M.shape[1])))


def end_blocks(S: ScatteringMatrix) -> dict:
    """``{(i, j): S_ij}`` with ``S_ij`` mapping incoming data at end ``j`` to outgoing data at end ``i``."""
    ends = sorted({e for e, _ in S.index})
    rows = {e: [k for k, (ee, _) in enumerate(S.index) if ee == e] for e in ends}
    return {(i, j): S.S[np.ix_(rows[i], rows[j])] for i in ends for j in ends}


def transmission_injectivity(S: ScatteringMatrix, i=1, j=0) -> float:
    """Smallest singular value of the off-diagonal block ``S_ij`` on the truncated propagating space."""
    if i == j:
        raise ValueError("transmission needs two distinct ends")
    return float(np.linalg.svd(end_blocks(S)[(i, j)], compute_uv=False).min())


def propagating_modes(model: ManifoldModel, basis: ModeBasis, lam, margin=1e-3):
    """Modes whose effective potential at the outer boundary stays below ``lam``."""
    out = []
    for m in range(basis.size):
        nu = basis.shared.nu[m]
        ok = True
        for chart in model.ends:
            if chart.d > 1:
                f2 = math.exp(2 * float(chart.f.log_f(chart.Rmax)))
                ok &= nu / (2 * f2) < lam - margin
        out.append(ok)
    return [m for m, ok in enumerate(out) if ok]


def build_smatrix(model: ManifoldModel, lam, basis: ModeBasis, grid: RadialGrid, tol=1e-2) -> ScatteringMatrix:
    """Column ``(j, k)``: incoming data ``e_(j,k)``; the column is the outgoing data ``xi_+``."""
    lam0 = critical_energy(model).lambda0
    if lam <= lam0 + 1e-3:
        raise ValueError(f"lambda = {lam} too close to lambda0 = {lam0}")
    modes = propagating_modes(model, basis, lam)
    if not modes:
        raise ValueError("no propagating modes at this energy")
    n_ends = len(model.ends)
    labels = basis.shared.labels
    index = [(e, int(labels[m])) for e in range(n_ends) for m in modes]
    pos = {(e, m): k for k, (e, m) in enumerate((e, m) for e in range(n_ends) for m in modes)}
    S = np.zeros((len(index), len(index)), dtype=complex)
    gaps, cauchy, flags = [], [], []
    for (e, m), col in pos.items():
        xi = np.zeros((n_ends, basis.size), dtype=complex)
        xi[e, m] = 1.0
        ge = generalized_eigenfunction(model, lam, xi, basis, grid, tol=tol)
        for (e2, m2), row in pos.items():
            S[row, col] = ge.xi_plus.xi[e2, m2]
        gaps.append(ge.norm_identity_gap)
        cauchy.append(ge.cauchy)
        if not ge.converged:
            flags.append(f"column {(e, int(labels[m]))} not converged (cauchy {ge.cauchy:.2e})")
    converged = not flags
    return ScatteringMatrix(float(lam), index, S, unitarity_check(S), converged, gaps, cauchy, flags)


def swap_permutation(S: ScatteringMatrix):
    """Permutation exchanging ends 0 and 1 (mode labels kept)."""
    where = {key: k for k, key in enumerate(S.index)}
    P = np.zeros_like(S.S, dtype=float)
    for k, (e, m) in enumerate(S.index):
        P[where[(1 - e, m)], k] = 1.0
    return P


# --------------------------------------------------------------------------
# one-dimensional well


def square_well_transmission(lam, depth=1.0, half_width=1.0):
    """Closed-form ``|T|^2`` for ``-1/2 u'' - depth 1_{|x|<a} u = lam u``."""
    k2, kp2 = 2.0 * lam, 2.0 * (lam + depth)
    s = math.sin(2.0 * math.sqrt(kp2) * half_width)
    return 1.0 / (1.0 + (kp2 - k2) ** 2 / (4.0 * k2 * kp2) * s * s)


def transfer_matrix_coefficients(lam, potentials, edges):
    """``(|T|^2, |R|^2)`` for a piecewise-constant potential via 2x2 transfer matrices.

    ``potentials`` has one value per region between consecutive ``edges`` plus
    the two outer (zero) regions: ``len(potentials) == len(edges) + 1``.
    """
    ks = [np.sqrt(complex(2.0 * (lam - v))) for v in potentials]

    def mat(k, x):
        return np.array([[np.exp(1j * k * x), np.exp(-1j * k * x)], [1j * k * np.exp(1j * k * x), -1j * k * np.exp(-1j * k * x)]])

    M = np.eye(2, dtype=complex)
    for i, x in enumerate(edges):
        # continuity of (u, u') across x: coefficients in region i -> region i+1
        M = np.linalg.solve(mat(ks[i + 1], x), mat(ks[i], x)) @ M
    # incoming (1, r) on the left, outgoing (t, 0) on the right
    r = -M[1, 0] / M[1, 1]
    t = M[0, 0] + M[0, 1] * r
    kL, kR = ks[0].real, ks[-1].real
    return float(abs(t) ** 2 * kR / kL), float(abs(r) ** 2)


@dataclass
class BenchmarkRow:
    lam: float
    T2_analytic: float
    T2_computed: float
    R2_analytic: float
    R2_computed: float


def benchmark_1d(lams, depth=1.0, half_width=1.0, h=0.01, Rmax=40.0):
    """Analytic vs PDE-path transmission/reflection for the square well on the line."""
    model = square_well_line(depth, half_width, Rmax)
    basis = build_mode_basis(model)
    grid = RadialGrid(model.r0, Rmax, 2 * int(round(Rmax / h)), True)
    rows = []
    for lam in lams:
        T2 = square_well_transmission(lam, depth, half_width) if depth != 0 else 1.0
        ge = generalized_eigenfunction(model, lam, [[1.0], [0.0]], basis, grid)
        xp = ge.xi_plus.xi
        rows.append(BenchmarkRow(float(lam), T2, float(abs(xp[1, 0]) ** 2), 1.0 - T2, float(abs(xp[0, 0]) ** 2)))
    return rows


def write_benchmark_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "T2_analytic", "T2_computed", "R2_analytic", "R2_computed"])
        for r in rows:
            w.writerow([f"{r.lam:.12g}", f"{r.T2_analytic:.12g}", f"{r.T2_computed:.12g}", f"{r.R2_analytic:.12g}", f"{r.R2_computed:.12g}"])
