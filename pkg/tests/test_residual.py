import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtbubble.ansatz import assemble_ansatz, close_parameters, params_for_delta
from mtbubble.errors import GridTooCoarse, UnresolvableScale
from mtbubble.lattice import TorusGeometry
from mtbubble.reduced import Configuration
from mtbubble.residual import (
    REGIMES,
    WeightProfile,
    ansatz_quadrature,
    build_cloud,
    kernel_fields,
    kernel_profiles,
    loglog_fit,
    moment_integrals,
    residual_field,
    residual_report,
    star_norm,
)

SQUARE = TorusGeometry()
M0_P3 = 0.07859864040747792


def p3_params(lam):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnresolvableScale)
        return close_parameters(Configuration([[0.25, 0.25], [0.75, 0.75]], [M0_P3, M0_P3]), lam, SQUARE)


@given(st.floats(1e-3, 10.0), st.floats(2.0, 50.0))
@settings(max_examples=20, deadline=None)
def test_weight_is_at_least_one(lam, dc):
    prof = WeightProfile(p3_params(lam), dc)
    cloud = build_cloud(prof, shells=32, n_far=256)
    for j, _, lr, _ in cloud.local_points():
        assert np.all(prof.log_rho_local(j, lr) >= 0)
    assert np.all(prof.log_rho(cloud.far) == 0)


@pytest.mark.parametrize("lam", [0.5, 2e-3])
def test_weight_matches_closed_form_inside_and_outside_the_core(lam):
    p = p3_params(lam)
    prof = WeightProfile(p)
    ld, le = float(p.log_delta[0]), float(p.log_eps[0])
    logD = prof.log_inner_radius(0)

    def logU(lr):
        return np.log(8) + 2 * ld - 2 * np.logaddexp(2 * ld, 2 * lr)

    lr = np.linspace(logD - 30, logD + np.log(0.5), 7)
    w = logU(lr) + 2 * le
    np.testing.assert_allclose(prof.log_rho_j(0, lr), np.log(1 + np.abs(w) + w * w) + logU(lr), rtol=1e-12)
    lr = np.linspace(logD + np.log(2.0), np.log(p.r0) - 0.1, 7)
    w = logU(lr) + 2 * le
    expect = np.logaddexp(np.log1p(np.abs(lr)) + p.lam * p.m[0] ** 2 * w * w, -np.log(p.lam)) + logU(lr)
    np.testing.assert_allclose(prof.log_rho_j(0, lr), expect, rtol=1e-10)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50), st.data())
def test_star_norm_bounded_by_sup(values, data):
    logr = data.draw(st.lists(st.floats(0, 50), min_size=len(values), max_size=len(values)))
    s, _ = star_norm(values, logr)
    assert s <= np.abs(values).max() * (1 + 1e-15)


def test_star_norm_reports_regime():
    s, reg = star_norm([1.0, -5.0, 2.0], [0.0, 0.0, 0.0], ["a", "b", "c"])
    assert s == 5.0 and reg == "b"


@pytest.mark.parametrize("lam", [8.0, 1.0])
def test_residual_integrates_to_zero(lam):
    p = p3_params(lam)
    a = assemble_ansatz(p, "expansion")
    q = ansatz_quadrature(a)
    mv = moment_integrals(a, q).moment_v / lam
    total = q.integrate_plain(lambda x: residual_field(x, a, mv))
    scale = q.integrate_plain(lambda x: np.abs(residual_field(x, a, mv)))
    assert abs(total) < 1e-7 * scale


def test_moment_targets_at_tiny_lambda():
    # extreme scales go through the log-space path without overflow
    p = p3_params(1e-3)
    mom = moment_integrals(assemble_ansatz(p, "expansion"))
    assert np.isfinite(mom.moment_v) and np.isfinite(mom.moment_e)
    assert abs(mom.error_v) / mom.lam < 1.0


def test_residual_report_structure():
    p = p3_params(5e-3)
    prof = WeightProfile(p)
    rep = residual_report(assemble_ansatz(p, "expansion"), prof, build_cloud(prof, seed=1))
    assert rep.argmax_regime in REGIMES
    assert set(rep.regime_sups) <= set(REGIMES)
    assert rep.star_norm == max(rep.regime_sups.values())
    assert rep.star_norm <= rep.sup_norm
    d = rep.as_dict()
    assert d["lambda"] == pytest.approx(5e-3)


def test_cloud_requires_enough_shells():
    with pytest.raises(ValueError):
        build_cloud(WeightProfile(p3_params(1.0)), shells=8)


def test_cloud_is_seeded():
    prof = WeightProfile(p3_params(1e-2))
    a, b = build_cloud(prof, seed=4), build_cloud(prof, seed=4)
    np.testing.assert_array_equal(a.far, b.far)


def test_loglog_fit_recovers_power_law():
    x = np.logspace(-3, -2, 5)
    fit = loglog_fit(x, 3.0 * x**1.5)
    assert fit.slope == pytest.approx(1.5, abs=1e-12)
    assert fit.ci_low <= 1.5 <= fit.ci_high and fit.ci_high - fit.ci_low < 1e-6


@given(st.floats(-6, -1), st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=30, deadline=None)
def test_kernel_profiles_solve_linearised_liouville(log_delta, s, t):
    d = np.exp(log_delta)
    y = np.array([s, t]) * d
    h = 1e-4 * d
    e = np.eye(2)
    Z = kernel_profiles(y[None], log_delta)[:, 0]
    lap = sum(kernel_profiles((y + h * v)[None], log_delta)[:, 0] - 2 * Z + kernel_profiles((y - h * v)[None], log_delta)[:, 0]
              for v in e) / h**2
    eU = 8 * d * d / (d * d + y @ y) ** 2
    np.testing.assert_allclose(lap + eU * Z, 0, atol=1e-5 * np.abs(lap).max())


def test_gram_symmetric():
    p = params_for_delta(SQUARE, [0.5, 0.5], 2e-2)
    G = kernel_fields(0, p, 128).gram()
    np.testing.assert_allclose(G, G.T, atol=1e-10 * np.abs(G).max())
    assert np.all(np.linalg.eigvalsh(G) < 0)


def test_kernel_fields_refuse_coarse_grid():
    with pytest.raises(GridTooCoarse):
        kernel_fields(0, params_for_delta(SQUARE, [0.5, 0.5], 1e-3), 64)
