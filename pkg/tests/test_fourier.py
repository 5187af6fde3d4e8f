import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from stationary_scattering.fourier import (
    XiTrace,
    dft,
    discrete_wavenumber,
    extract_asymptotics,
    generalized_eigenfunction,
    phase_table,
    window_average,
    xi_trace,
)
from stationary_scattering.geometry import SpectralParameterError, critical_energy, cylinder_end, euclidean_end, hyperbolic_end, phase_b, r_lambda
from stationary_scattering.modes import build_mode_basis
from stationary_scattering.solver import RadialGrid, solve_resolvent, source_profile


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(1e-3, 0.3))
def test_discrete_wavenumber_solves_three_point_dispersion(b, h):
    k = discrete_wavenumber(b, h)
    assert (2.0 * math.sin(0.5 * k * h) / h) ** 2 == pytest.approx(b * b, rel=1e-10)
    assert k >= b


def test_phase_table_matches_quadrature():
    chart = euclidean_end(Rmax=64.0).ends[0]
    r = np.array([1.0, 3.0, 10.0, 40.0])
    pt = phase_table(chart, 1.0, r, lam0=0.0)
    rl = r_lambda(chart, 1.0, 0.0)
    for ri, Phi in zip(r, pt.Phi):
        ref = quad(lambda s: float(phase_b(chart, 1.0, s, lam0=0.0, r_lam=rl).b_tilde), 1.0, ri, limit=400)[0]
        assert Phi == pytest.approx(ref, abs=1e-9)


def test_window_average():
    r = np.linspace(0.0, 40.0, 4001)
    assert window_average(r, np.full_like(r, 2.5), 10.0) == pytest.approx(2.5)
    assert window_average(r, r, 10.0) == pytest.approx(15.0)
    with pytest.raises(ValueError):
        window_average(r, r, 45.0)


def _euclid():
    m = euclidean_end(Rmax=64.0)
    b = build_mode_basis(m, 1)
    g = RadialGrid.for_model(m, 0.05)
    return m, b, g


@pytest.mark.parametrize("sign", [1, -1])
def test_dft_parseval(sign):
    m, b, g = _euclid()
    psi = source_profile("gaussian", g, b, m, center=4.0, width=1.0)
    psi.u[1] = 0.7 * psi.u[0]
    res = dft(m, 1.0, sign, psi, b, g)
    assert res.converged
    assert res.parseval_gap <= 1e-2 * res.parseval_rhs


def test_dft_below_threshold():
    m = hyperbolic_end()
    b = build_mode_basis(m, 0)
    g = RadialGrid.for_model(m, 0.1)
    psi = source_profile("gaussian", g, b, m, center=4.0)
    with pytest.raises(SpectralParameterError):
        dft(m, 0.1, 1, psi, b, g)


def test_xi_trace_sign_and_csv(tmp_path):
    m, b, g = _euclid()
    psi = source_profile("gaussian", g, b, m, center=4.0, width=1.0)
    sol = solve_resolvent(m, b, g, psi, 1.0, "radiation_outgoing")
    with pytest.raises(ValueError):
        xi_trace(sol, sign=-1)
    tr = xi_trace(sol)
    assert isinstance(tr, XiTrace)
    path = tmp_path / "trace.csv"
    tr.to_csv(path)
    data = np.genfromtxt(path, delimiter=",", names=True)
    sel = data["mode"] == 0
    np.testing.assert_allclose(data["r"][sel], tr.r[0], rtol=1e-11)
    np.testing.assert_allclose(data["re_xi"][sel] + 1j * data["im_xi"][sel], tr.xi[0][0], rtol=1e-15)


def test_cylinder_reflection_closed_form():
    # f = const, mode 0: the grid solution is sin(k_h (r - r0)), so xi_+ = exp(2 i D) xi_-
    # where D is the phase deficit of the cut-off wavenumber near the boundary
    m = cylinder_end(Rmax=64.0)
    chart, h = m.ends[0], 0.05
    b = build_mode_basis(m, 0)
    g = RadialGrid.for_model(m, h)
    ge = generalized_eigenfunction(m, 1.0, [[1.0]], b, g)
    lam0 = critical_energy(m).lambda0
    rl = r_lambda(chart, 1.0, lam0)
    kh = discrete_wavenumber(math.sqrt(2.0), h)

    def deficit(s):
        return kh - discrete_wavenumber(float(np.real(phase_b(chart, 1.0, s, lam0=lam0, r_lam=rl).b_tilde)), h)

    D = quad(deficit, 1.0, rl + 1.0, points=[2.0, rl / 2.0, rl], limit=200)[0]
    assert ge.xi_plus.xi[0, 0] == pytest.approx(np.exp(2j * D), abs=1e-6)
    assert ge.converged


def test_generalized_eigenfunction_identities():
    m, b, g = _euclid()
    xi = np.array([[1.0, 0.5j, 0.0]])
    ge = generalized_eigenfunction(m, 1.0, xi, b, g)
    assert ge.converged
    assert ge.norm_identity_gap < 1e-3
    assert ge.eigen_residual < 1e-8
    assert ge.cross_check < 1e-5
    # modes that are not excited stay empty
    assert abs(ge.xi_plus.xi[0, 2]) < 1e-12
    asym = extract_asymptotics(m, 1.0, ge.phi, g, b)
    np.testing.assert_allclose(asym.xi_minus.xi, xi, atol=3e-3)
    np.testing.assert_allclose(asym.xi_plus.xi, ge.xi_plus.xi, atol=3e-3)


def test_generalized_eigenfunction_linear_in_data():
    m, b, g = _euclid()
    e0 = generalized_eigenfunction(m, 1.0, [[1.0, 0.0, 0.0]], b, g).xi_plus.xi
    e1 = generalized_eigenfunction(m, 1.0, [[0.0, 1.0, 0.0]], b, g).xi_plus.xi
    both = generalized_eigenfunction(m, 1.0, [[2.0, -1j, 0.0]], b, g).xi_plus.xi
    np.testing.assert_allclose(both, 2.0 * e0 - 1j * e1, atol=1e-10)


def test_generalized_eigenfunction_zero_data():
    m, b, g = _euclid()
    ge = generalized_eigenfunction(m, 1.0, [[0.0, 0.0, 0.0]], b, g)
    assert not np.any(ge.phi.u)
    assert ge.xi_plus.norm() == 0.0


def test_extract_asymptotics_rejects_non_eigenfunction():
    m, b, g = _euclid()
    psi = source_profile("gaussian", g, b, m, center=40.0, width=3.0)
    with pytest.raises(ValueError):
        extract_asymptotics(m, 1.0, psi, g, b)
