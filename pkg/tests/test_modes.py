import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stationary_scattering.geometry import catenoid_surface, cylinder_end, euclidean_end, line_model, liouville_potential
from stationary_scattering.modes import (
    ModeFunction,
    ResolutionError,
    assemble_mode_hamiltonian,
    build_mode_basis,
    circle_labels,
    coefficients_to_angular,
    from_modes,
    g_norm2_quadrature,
    interval_eigenpairs,
    to_modes,
)


def test_circle_label_order():
    assert list(circle_labels(count=6)) == [0, 1, -1, 2, -2, 3]
    assert list(circle_labels(M=1)) == [0, 1, -1]


def test_interval_eigenvalues_closed_form():
    nu, v, th = interval_eigenpairs(4, 401)
    exact = (np.arange(1, 5) * math.pi / 2) ** 2
    assert np.max(np.abs(nu - exact) / exact) < 1e-7
    h = th[1] - th[0]
    assert np.allclose(h * v.T @ v, np.eye(4), atol=1e-12)


def test_interval_resolution_error():
    with pytest.raises(ResolutionError):
        interval_eigenpairs(50, 101)


def test_circle_basis_orthonormal_in_induced_measure():
    b = build_mode_basis(euclidean_end(r0=2.0), M=3)
    e = b.shared.e()
    gram = e.conj().T @ e * b.shared.weight * b.shared.ref_scale
    assert np.allclose(gram, np.eye(b.size), atol=1e-13)


def test_coefficients_round_trip_through_angular_function():
    b = build_mode_basis(euclidean_end(r0=2.0), M=2)
    xi = np.array([1.0, 0.5j, -0.25, 0.0, 2.0])
    vals = coefficients_to_angular(xi, b.shared)
    assert g_norm2_quadrature(vals, b.shared) == pytest.approx(float(np.sum(np.abs(xi) ** 2)), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False), min_size=5, max_size=5))
def test_to_from_modes_round_trip(coefs):
    chart = euclidean_end().ends[0]
    b = build_mode_basis(euclidean_end(), M=2).shared
    r = np.linspace(1.5, 4.0, 6)
    prof = np.outer(np.linspace(1, 2, 6), np.array(coefs))
    samples = (prof / np.sqrt(r)[:, None]) @ b.eps.T
    mf = to_modes(samples, r, chart, b)
    assert np.allclose(mf.u.T, prof, atol=1e-10)
    assert np.allclose(from_modes(mf, chart, b), samples, atol=1e-10)


def test_mode_function_csv_round_trip(tmp_path):
    x = np.linspace(1, 2, 5)
    mf = ModeFunction(x, [np.exp(1j * x), x**2])
    path = tmp_path / "u.csv"
    mf.to_csv(path)
    back = ModeFunction.from_csv(path)
    assert np.allclose(back.u, mf.u) and np.allclose(back.coords, x)


def test_mode_hamiltonian_potential():
    m = euclidean_end()
    b = build_mode_basis(m, M=2)
    r = np.array([2.0, 5.0])
    for k in range(b.size):
        op = assemble_mode_hamiltonian(m, b, k)
        nu = b.shared.nu[k]
        assert np.allclose(op.W(r), nu / (2 * r**2) - 1 / (8 * r**2))
    assert np.allclose(liouville_potential(m.ends[0], r), -1 / (8 * r**2))


def test_two_end_hamiltonian_is_continuous_at_gluing():
    m = catenoid_surface(0.3)
    b = build_mode_basis(m, count=3)
    op = assemble_mode_hamiltonian(m, b, 2)
    x = np.array([-1e-7, 1e-7])
    w = op.W(x)
    assert abs(w[0] - w[1]) < 1e-5


def test_point_and_interval_bases():
    assert build_mode_basis(line_model()).size == 1
    b = build_mode_basis(cylinder_end(angular="interval"), M=3)
    assert b.shared.kind == "interval" and b.size == 3
