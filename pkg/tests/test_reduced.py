import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from mtbubble.errors import SeparationViolation
from mtbubble.lattice import TorusGeometry, f3, robin_constant, theta_green
from mtbubble.reduced import (
    Configuration,
    degeneracy_condition,
    degeneracy_margin,
    f0_map,
    family_catalog,
    grad_psi_k,
    hess_psi_k,
    hessian_det_weights,
    psi_k,
    seeds_from_catalog,
    solve_weights,
    weight_constant_A,
    weight_gradient,
    weight_hessian,
)

SQUARE = TorusGeometry()
A_SQUARE = 3.3936545740627917
M0_P3 = 0.07859864040747792
PSI2_P3 = -0.012355492547807894


def _p3_configuration():
    return Configuration([[0.25, 0.25], [0.75, 0.75]], [M0_P3, M0_P3])


def test_weight_constant():
    assert weight_constant_A(SQUARE) == pytest.approx(A_SQUARE, abs=1e-11)
    assert A_SQUARE == pytest.approx(np.log(16) - 2 - 4 * np.pi * robin_constant(SQUARE), abs=1e-12)


def test_solve_weights_golden():
    br = solve_weights(0.0, -0.5)
    assert [b.kind for b in br] == ["diagonal", "pair", "pair_swapped"]
    assert br[0].m1 == pytest.approx(0.4723665527410147, rel=1e-12)
    assert br[0].hessdet == pytest.approx(8.0, rel=1e-12)
    assert (br[1].m1, br[1].m2) == pytest.approx((0.0668265223686605, 0.5895850758089951), rel=1e-10)
    assert (br[2].m1, br[2].m2) == (br[1].m2, br[1].m1)
    only = solve_weights(0.0, -2.0)
    assert len(only) == 1 and only[0].hessdet == pytest.approx(-16.0)
    assert len(solve_weights(0.0, -0.999)) == 3


def test_f0_map_golden():
    assert float(f0_map(0.45, 0.0, -0.5)) == pytest.approx(0.5373138531919889, rel=1e-13)


def test_degeneracy_margin_golden():
    assert degeneracy_margin(-0.5) == pytest.approx(0.6773040661663563, rel=1e-13)
    assert degeneracy_margin(0.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        degeneracy_margin(-1.5)


@given(st.floats(-3.0, 3.0), st.floats(-0.99, -0.01))
@settings(max_examples=60, deadline=None)
def test_branches_solve_weight_system(A, B):
    for br in solve_weights(A, B):
        g = weight_gradient(br.m1, br.m2, A, B)
        assert np.abs(g).max() <= 1e-9 * max(1.0, br.m1, br.m2)
        assert hessian_det_weights(br.m1, br.m2, B / (4 * np.pi)) == pytest.approx(br.hessdet)


@given(st.floats(-3.0, 3.0), st.floats(-5.0, 5.0))
@settings(max_examples=60, deadline=None)
def test_diagonal_branch_closed_form(A, B):
    assume(abs(B) > 1e-6)
    d = solve_weights(A, B)[0]
    assert d.kind == "diagonal"
    assert d.m1 == pytest.approx(np.exp((B - A - 1) / 2), rel=1e-12)
    # the diagonal solves f0(m) = m
    assert float(f0_map(d.m1, A, B)) == pytest.approx(d.m1, rel=1e-10)


@given(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(-0.2, 0.2))
def test_degeneracy_condition_matches_hessian(m1, m2, G):
    # det = 16 * condition
    assert hessian_det_weights(m1, m2, G) == pytest.approx(16 * degeneracy_condition(m1, m2, G), rel=1e-12, abs=1e-12)


def test_psi2_at_p3_diagonal():
    conf = _p3_configuration()
    assert psi_k(conf, SQUARE) == pytest.approx(PSI2_P3, abs=1e-13)
    assert np.abs(grad_psi_k(conf, SQUARE)).max() < 1e-12


@given(st.floats(0.1, 0.4), st.floats(0.1, 0.4), st.floats(0.55, 0.9), st.floats(0.55, 0.9),
       st.floats(0.05, 2.0), st.floats(0.05, 2.0))
@settings(max_examples=25, deadline=None)
def test_psi_gradient_and_hessian_match_finite_differences(x1, y1, x2, y2, m1, m2):
    conf = Configuration([[x1, y1], [x2, y2]], [m1, m2])
    x0 = conf.flat()
    h = 1e-6
    fd = np.array([(psi_k(Configuration.from_flat(x0 + h * e, 2), SQUARE)
                    - psi_k(Configuration.from_flat(x0 - h * e, 2), SQUARE)) / (2 * h) for e in np.eye(6)])
    np.testing.assert_allclose(grad_psi_k(conf, SQUARE), fd, atol=1e-6 * max(1, m1, m2) ** 2)
    H = hess_psi_k(conf, SQUARE)
    np.testing.assert_allclose(H, H.T, atol=1e-12)
    fdh = np.array([(grad_psi_k(Configuration.from_flat(x0 + h * e, 2), SQUARE)
                     - grad_psi_k(Configuration.from_flat(x0 - h * e, 2), SQUARE)) / (2 * h) for e in np.eye(6)])
    np.testing.assert_allclose(H, fdh, atol=1e-4 * max(1, m1, m2) ** 2)


@given(st.floats(0.05, 0.45), st.floats(0.05, 0.45), st.floats(0.2, 1.5), st.floats(0.2, 1.5))
@settings(max_examples=25, deadline=None)
def test_psi_translation_and_swap_invariance(x, y, m1, m2):
    pts = np.array([[x, y], [x + 0.4, y + 0.3]])
    base = psi_k(Configuration(pts, [m1, m2]), SQUARE)
    assert psi_k(Configuration(pts + [0.17, -0.61], [m1, m2]), SQUARE) == pytest.approx(base, abs=1e-12)
    assert psi_k(Configuration(pts[::-1], [m2, m1]), SQUARE) == pytest.approx(base, abs=1e-12)


def test_configuration_validation():
    with pytest.raises(ValueError):
        Configuration([[0, 0], [0.5, 0.5]], [1.0, -1.0])
    with pytest.raises(ValueError):
        Configuration([[0, 0, 0]], [1.0])
    with pytest.raises(SeparationViolation):
        Configuration([[0.1, 0.1], [1.1, 0.1]], [1.0, 1.0]).validate(SQUARE)


def test_catalog_square_counts():
    cat = family_catalog(1.0)
    assert cat.total_families == 9
    assert cat.regime == "inside"
    assert [p.count for p in cat.periods] == [3, 3, 3]
    assert cat.periods[2].f == pytest.approx(f3(1.0))
    seeds = seeds_from_catalog(cat, SQUARE)
    assert len(seeds) == 9
    for name, br, conf in seeds:
        d = conf.points[1] - conf.points[0]
        np.testing.assert_allclose(d, SQUARE.half_periods[name])
        # the seed weights solve the weight system for this half period
        B = 4 * np.pi * float(theta_green(SQUARE).value(d))
        assert np.abs(weight_gradient(br.m1, br.m2, cat.A, B)).max() < 1e-9


@pytest.mark.parametrize("tau", [2.0, 0.5])
def test_catalog_outside_window(tau):
    cat = family_catalog(tau)
    assert cat.regime == "outside"
    assert cat.total_families == 3
    assert cat.flags  # the B <= -1 half period is flagged


def test_catalog_rejects_mismatched_geometry():
    with pytest.raises(ValueError):
        family_catalog(1.0, TorusGeometry(1.0, 2.0))


@given(st.floats(0.05, 3.0), st.floats(0.05, 3.0), st.floats(-3.0, 3.0), st.floats(-2.0, 2.0))
def test_weight_hessian_is_gradient_jacobian(m1, m2, A, B):
    h = 1e-6
    fd = np.array([
        (weight_gradient(m1 + h, m2, A, B) - weight_gradient(m1 - h, m2, A, B)) / (2 * h),
        (weight_gradient(m1, m2 + h, A, B) - weight_gradient(m1, m2 - h, A, B)) / (2 * h),
    ])
    np.testing.assert_allclose(weight_hessian(m1, m2, A, B), fd, atol=1e-5)
