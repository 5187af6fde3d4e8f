import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stationary_scattering.geometry import SpectralParameterError, cylinder_end, euclidean_end, hyperbolic_end, parabolic_end
from stationary_scattering.modes import ModeFunction, build_mode_basis
from stationary_scattering.solver import (
    RadialGrid,
    besov_norms,
    closure_factor,
    decomposition_residual,
    epsilon_ladder,
    greens_identity_check,
    mode_system,
    radiation_residual,
    solve_resolvent,
    source_profile,
)


def _small_problem():
    m = euclidean_end(Rmax=11.0)
    b = build_mode_basis(m, 1)
    g = RadialGrid(1.0, 11.0, 200)
    x = g.nodes
    p1 = ModeFunction(x, [np.exp(-((x - 3) ** 2)), np.sin(x) * np.exp(-((x - 4) ** 2)), np.exp(-((x - 5) ** 2) / 3)])
    p2 = ModeFunction(x, [np.exp(-((x - 6) ** 2)) * (1 + 1j), np.exp(-((x - 2) ** 2)), np.cos(x) * np.exp(-((x - 4) ** 2))])
    return m, b, g, p1, p2


@pytest.mark.parametrize(
    "z,bc,bc_adj",
    [(1.0, "radiation_outgoing", "radiation_incoming"), (2.5, "radiation_incoming", "radiation_outgoing"), (1 + 0.3j, "damped", "damped")],
)
def test_resolvent_adjoint_identity(z, bc, bc_adj):
    m, b, g, p1, p2 = _small_problem()
    s1 = solve_resolvent(m, b, g, p1, z, bc)
    s2 = solve_resolvent(m, b, g, p2, np.conj(z), bc_adj)
    lhs, rhs = p2.inner(s1.phi), s2.phi.inner(p1)
    assert abs(lhs - rhs) <= 1e-8 * abs(lhs)


def test_banded_solve_matches_dense_solve():
    m, b, g, p1, _ = _small_problem()
    for k in range(b.size):
        sysm = mode_system(m, b, g, k, 1.3, "radiation_outgoing")
        dense = np.linalg.solve(sysm.dense(), p1.u[k])
        assert np.max(np.abs(dense - sysm.solve(p1.u[k]))) < 1e-10 * np.max(np.abs(dense))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 4.0), st.floats(1e-4, 2.0))
def test_herglotz_sign(lam, gamma):
    m, b, g, p1, _ = _small_problem()
    s = solve_resolvent(m, b, g, p1, lam + 1j * gamma, "damped")
    assert np.imag(p1.inner(s.phi)) >= 0.0


def test_outgoing_limit_is_herglotz_boundary_value():
    m, b, g, p1, _ = _small_problem()
    s = solve_resolvent(m, b, g, p1, 1.0, "radiation_outgoing")
    assert np.imag(p1.inner(s.phi)) > 0.0


def test_free_half_line_green_function():
    # f = const, mode 0: H = -1/2 d^2 on (r0, inf) with Dirichlet at r0
    m = cylinder_end(r0=1.0, Rmax=41.0)
    b = build_mode_basis(m, 0)
    lam, k = 1.0, math.sqrt(2.0)
    errs = []
    for h in (0.02, 0.01):
        g = RadialGrid.for_model(m, h)
        x = g.nodes
        psi = source_profile("gaussian", g, b, m, center=6.0, width=0.8)
        s = solve_resolvent(m, b, g, psi, lam)
        s_ = np.linspace(1.0, 14.0, 26001)
        f = np.interp(s_, x, psi.u[0].real)
        pts = x[(x > 2) & (x < 30)][::25]
        lo = np.minimum.outer(pts, s_) - 1.0
        hi = np.maximum.outer(pts, s_) - 1.0
        G = 2.0 / k * np.sin(k * lo) * np.exp(1j * k * hi)
        exact = np.trapezoid(G * f[None, :], s_, axis=1)
        errs.append(np.max(np.abs(s.phi.u[0][np.isin(x, pts)] - exact)))
    assert errs[1] < 1e-3
    assert errs[0] / errs[1] > 3.0


def test_closure_root_is_discrete_outgoing_wave():
    h, lam = 0.05, 1.0
    mu = closure_factor(0.0, 0.0, lam, h, "radiation_outgoing")
    assert abs(mu) == pytest.approx(1.0, abs=1e-14)
    kh = 2 * math.asin(h * math.sqrt(2 * lam) / 2)
    assert mu == pytest.approx(complex(math.cos(kh), math.sin(kh)), abs=1e-13)
    assert closure_factor(0.0, 0.0, lam, h, "radiation_incoming") == pytest.approx(np.conj(mu))


def test_spectral_parameter_below_threshold_is_rejected():
    m = hyperbolic_end()
    b = build_mode_basis(m, 0)
    g = RadialGrid.for_model(m, 0.1)
    psi = source_profile("gaussian", g, b, m, center=4.0)
    with pytest.raises(SpectralParameterError):
        solve_resolvent(m, b, g, psi, 0.1)


def test_green_identity_radiation_and_damped():
    m = euclidean_end(Rmax=64.0)
    b = build_mode_basis(m, 2)
    g = RadialGrid.for_model(m, 0.05)
    psi = source_profile("shell_bump", g, b, m, center=5.0, width=2.0)
    for z, bc in ((1.0, "radiation_outgoing"), (1.0 + 0.05j, "damped")):
        s = solve_resolvent(m, b, g, psi, z, bc)
        for r in (3.0, 10.0, 40.0):
            gc = greens_identity_check(s, r)
            assert gc.discrepancy <= 1e-6 * gc.scale


def test_green_identity_trivial():
    m = euclidean_end(Rmax=16.0)
    b = build_mode_basis(m, 0)
    g = RadialGrid.for_model(m, 0.1)
    zero = ModeFunction(g.nodes, np.zeros((1, len(g.nodes))), meta={"r": g.nodes})
    s = solve_resolvent(m, b, g, zero, 1.0)
    gc = greens_identity_check(s, 8.0)
    assert gc.flux == 0.0 and gc.discrepancy == 0.0


@pytest.mark.parametrize("model", [euclidean_end(Rmax=64.0), hyperbolic_end(), cylinder_end()], ids=["euclidean", "hyperbolic", "cylinder"])
def test_sommerfeld_consistency_on_inner_shells(model):
    b = build_mode_basis(model, 1)
    g = RadialGrid.for_model(model, 0.05)
    psi = source_profile("gaussian", g, b, model, center=model.r0 + 2.0, width=0.7)
    psi.u[1] = psi.u[0]
    s = solve_resolvent(model, b, g, psi, 1.0)
    ext, _ = epsilon_ladder(model, b, g, psi, 1.0)
    sel = g.nodes <= 16.0
    diff = psi.copy_with(np.where(sel, s.phi.u - ext.u, 0.0))
    ref = psi.copy_with(np.where(sel, s.phi.u, 0.0))
    diff.meta["r"] = ref.meta["r"] = g.nodes
    assert besov_norms(diff).B_star <= 1e-3 * besov_norms(ref).B_star


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_besov_duality(a, c):
    x = np.linspace(1.0, 64.0, 1261)
    basis = [np.exp(-((x - s) ** 2)) for s in (2.0, 5.0, 11.0, 30.0)]
    f = ModeFunction(x, [sum(ai * v for ai, v in zip(a, basis))])
    gfun = ModeFunction(x, [sum(ci * np.cos(x) * v for ci, v in zip(c, basis))])
    assert abs(f.inner(gfun)) <= besov_norms(f).B * besov_norms(gfun).B_star * (1 + 1e-12) + 1e-300


def test_besov_shell_edge_split():
    x = np.array([1.5, 2.0, 3.0, 5.0])
    f = ModeFunction(x, [np.ones(4)], weights=np.ones(4))
    shells = dict(besov_norms(f).shells)
    assert shells[1.0] ** 2 == pytest.approx(1.5)
    assert shells[2.0] ** 2 == pytest.approx(1.5)
    assert shells[4.0] ** 2 == pytest.approx(1.0)


def test_grid_convergence_second_order():
    m = euclidean_end(Rmax=32.0)
    b = build_mode_basis(m, 1)
    vals = []
    for h in (0.1, 0.05, 0.025):
        g = RadialGrid.for_model(m, h)
        psi = source_profile("gaussian", g, b, m, center=4.0, width=1.0)
        vals.append(besov_norms(solve_resolvent(m, b, g, psi, 1.0).phi).B_star)
    d1, d2 = abs(vals[1] - vals[0]), abs(vals[2] - vals[1])
    assert d2 <= d1 / 3.0


def test_radiation_bound_ratio_stable_in_rmax():
    ratios = []
    for R in (64.0, 128.0, 256.0):
        m = euclidean_end(Rmax=R)
        b = build_mode_basis(m, 2)
        g = RadialGrid.for_model(m, 0.05)
        psi = source_profile("gaussian", g, b, m, center=4.0, width=1.0)
        ratios.append(radiation_residual(solve_resolvent(m, b, g, psi, 1.0), beta=0.4).ratio)
    assert max(ratios) / min(ratios) - 1.0 < 0.25


def test_radiation_residual_detects_wrong_sign():
    # with the weight r^beta the wrong-sign residual grows across the shells
    m = euclidean_end(Rmax=256.0)
    b = build_mode_basis(m, 0)
    g = RadialGrid.for_model(m, 0.05)
    psi = source_profile("gaussian", g, b, m, center=4.0, width=1.0)
    out = radiation_residual(solve_resolvent(m, b, g, psi, 1.0, "radiation_outgoing"), beta=0.45)
    inc = solve_resolvent(m, b, g, psi, 1.0, "radiation_incoming")
    inc.bc = "radiation_outgoing"  # test the incoming solution against the outgoing phase
    wrong = radiation_residual(inc, beta=0.45)
    assert wrong.bstar > 5 * out.bstar


def test_radiation_residual_warns_above_beta_c():
    m = euclidean_end(Rmax=32.0)
    b = build_mode_basis(m, 0)
    g = RadialGrid.for_model(m, 0.05)
    psi = source_profile("gaussian", g, b, m, center=4.0, width=1.0)
    with pytest.warns(UserWarning):
        radiation_residual(solve_resolvent(m, b, g, psi, 1.0), beta=0.6, beta_c=0.5)


def test_decomposition_residual_rates():
    euc = decomposition_residual(euclidean_end(Rmax=256.0), 1.0)
    assert euc.exponent >= 1.0 - 0.15
    assert euc.formula_gap < 1e-2
    flat = decomposition_residual(cylinder_end(Rmax=64.0), 1.0)
    assert flat.exponent == 10.0
    parab = decomposition_residual(parabolic_end(0.5), 1.0)
    assert parab.exponent >= 1.0 - 0.15


def test_unknown_source_profile():
    m = euclidean_end(Rmax=16.0)
    b = build_mode_basis(m, 0)
    with pytest.raises(ValueError):
        source_profile("triangle", RadialGrid.for_model(m, 0.1), b, m)
