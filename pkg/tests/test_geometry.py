import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stationary_scattering import parabolic as par
from stationary_scattering.geometry import (
    DomainError,
    EndChart,
    ManifoldModel,
    ModelError,
    Potential,
    SpectralParameterError,
    WarpProfile,
    builtin_model,
    builtin_names,
    chi,
    critical_energy,
    effective_potential,
    eta,
    euclidean_end,
    eval_metric,
    hyperbolic_end,
    cylinder_end,
    liouville_potential,
    parabolic_end,
    phase_a,
    phase_b,
    riccati_residual,
    r_lambda,
)


@given(st.floats(-5, 5))
def test_chi_range_and_plateaus(t):
    v = float(chi(t))
    assert 0.0 <= v <= 1.0
    if t <= 1:
        assert v == 1.0
    if t >= 2:
        assert v == 0.0


@given(st.floats(0, 3), st.floats(0, 3))
def test_chi_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert chi(lo) >= chi(hi)


def test_eta_vanishes_inside_and_is_one_outside():
    assert eta(0.4, 1.0) == 0.0
    assert eta(1.0, 1.0) == 1.0


def test_euclidean_metric_at_r2():
    md = eval_metric(euclidean_end().ends[0], 2.0, 0.0)
    assert md.dr2 == 1.0
    assert md.laplace_r == pytest.approx(0.5)
    assert md.hess_ss == pytest.approx(2.0)
    assert md.g_ss == pytest.approx(4.0)


def test_effective_potential_euclidean_value():
    # q = 1/8 ((1/r)^2 - 2/r^2) = -1/(8 r^2)
    assert effective_potential(euclidean_end().ends[0], 2.0).q == pytest.approx(-1.0 / 32.0)


@pytest.mark.parametrize("profile", ["r", "exp_r", "const"])
def test_effective_potential_is_liouville(profile):
    chart = EndChart("warped", 1.0, 64.0, 2, WarpProfile(profile), "circle", potential=Potential("exp_decay"))
    r = np.linspace(1.0, 60.0, 301)
    ep = effective_potential(chart, r)
    assert np.max(np.abs(ep.q - chart.V(r) - liouville_potential(chart, r))) < 1e-10


def test_effective_potential_domain():
    with pytest.raises(DomainError):
        effective_potential(euclidean_end().ends[0], 0.4)


def test_parabolic_axis_has_unit_radial_metric():
    chart = parabolic_end(0.37).ends[0]
    md = eval_metric(chart, np.array([5.0, 50.0, 500.0]), 0.0)
    assert np.all(md.N_r == 1.0)


@pytest.mark.parametrize("kappa", [0.3, 0.5, 0.7])
def test_parabolic_metric_against_cartesian_gradients(kappa):
    r = np.geomspace(5, 1e3, 7)[:, None]
    th = np.linspace(-0.9, 0.9, 9)[None, :]
    x, y = par.chart_to_cartesian(kappa, r, th)
    K = par.kernel(kappa)
    Nr = (kappa**2 * x**2 + y**2) / r**2
    Nt = y ** (-2 * kappa) + (kappa * x * y ** (-kappa - 1)) ** 2
    assert np.allclose(K.N_r(y, th), Nr, rtol=1e-12, atol=0)
    assert np.allclose(K.N_theta(y, th), Nt, rtol=1e-12, atol=0)
    rr, tt = par.cartesian_to_chart(kappa, x, y)
    assert np.allclose(rr, r) and np.allclose(tt, th)


def test_critical_energies():
    assert critical_energy(euclidean_end()).lambda0 == 0.0
    assert abs(critical_energy(hyperbolic_end()).lambda0 - 0.125) < 1e-10
    assert critical_energy(cylinder_end()).lambda0 == pytest.approx(0.0, abs=1e-14)


def test_builtin_models_resolve():
    for name in builtin_names():
        assert isinstance(builtin_model(name), ManifoldModel)
    assert builtin_model("parabolic(0.3)").ends[0].kappa == pytest.approx(0.3)
    with pytest.raises(ModelError):
        builtin_model("nonsense")


def test_model_json_round_trip(tmp_path):
    m = euclidean_end(Rmax=64.0)
    p = tmp_path / "m.json"
    p.write_text(m.to_json())
    back = ManifoldModel.load(p)
    assert json.loads(back.to_json()) == json.loads(m.to_json())


def test_two_end_glue_is_checked():
    ends = [EndChart("warped", 2.0, 40.0, 2, WarpProfile("r"), "circle"), EndChart("warped", 2.0, 40.0, 2, WarpProfile("exp_r"), "circle")]
    with pytest.raises(ModelError):
        ManifoldModel(ends, "two_end_line")


def test_phase_requires_energy_above_threshold():
    with pytest.raises(SpectralParameterError):
        phase_b(hyperbolic_end().ends[0], 0.1, 10.0, lam0=0.125)


def test_phase_b_euclidean_far_field():
    chart = euclidean_end().ends[0]
    ph = phase_b(chart, 1.0, 100.0, lam0=0.0)
    assert ph.b == pytest.approx(math.sqrt(2.0 * (1.0 + 1.0 / (8 * 1e4))))


def test_riccati_residual_decays():
    chart = euclidean_end(Rmax=512.0).ends[0]
    vals = [float(riccati_residual(chart, 1.0, r, lam0=0.0)) for r in (50.0, 100.0, 200.0)]
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] < 1e-8


def test_phase_a_sign_swap_is_conjugate_correction():
    chart = euclidean_end().ends[0]
    rl = r_lambda(chart, 1.0, 0.0)
    ap = phase_a(chart, 1.0, 20.0, sign=+1, lam0=0.0, r_lam=rl).a
    am = phase_a(chart, 1.0, 20.0, sign=-1, lam0=0.0, r_lam=rl).a
    assert ap.real == pytest.approx(am.real)
    assert ap.imag == pytest.approx(-am.imag)


@settings(max_examples=25, deadline=None)
@given(st.floats(1.5, 100.0))
def test_warp_dlog_matches_finite_difference(r):
    f = WarpProfile("catenoid", width=1.0, tilt=0.3)
    h = 1e-5
    fd = (f.log_f(r + h) - f.log_f(r - h)) / (2 * h)
    assert float(f.dlog(r)) == pytest.approx(float(fd), rel=1e-6, abs=1e-9)
