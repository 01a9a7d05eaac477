import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtbubble.errors import SingularPole, TruncationFailure
from mtbubble.lattice import (
    EwaldGreen,
    TorusGeometry,
    f1,
    f2,
    f3,
    half_period_criticality,
    half_period_values,
    reduce_to_fundamental,
    robin_constant,
    tau_thresholds,
    theta_green,
    torus_distance,
)

taus = st.floats(0.3, 3.5)
coords = st.floats(0.05, 0.95)


# golden values, frozen after checking them against the mpmath oracle below
F1_SQUARE = -0.027579450019081
F3_SQUARE = -0.055158900038163
F1_TAU2 = 0.0563477565328568
TAU0 = 0.7548646242619493
TAU1 = 1.3247408447279216
ROBIN_SQUARE = -0.2085777932435014


def _oracle_half_period(kind, tau, dps=30):
    """Independent lattice sum via mpmath's Jacobi theta functions."""
    import mpmath as mp

    with mp.workdps(dps):
        a, b = mp.mpf(1), mp.mpf(tau)
        q = mp.exp(-mp.pi * b / a)
        z = {"f1": (mp.mpf(1) / 2, 0), "f2": (0, b / 2), "f3": (mp.mpf(1) / 2, b / 2)}[kind]
        w = mp.pi * (z[0] + 1j * z[1]) / a
        y = z[1]

        def g(w, y):
            return -mp.log(abs(mp.jtheta(1, w, q))) / (2 * mp.pi) + y * y / (2 * a * b)

        # fix the additive constant by requiring zero mean over the cell
        n = 40
        xs = [(i + mp.mpf(1) / 2) / n for i in range(n)]
        ys = [(j + mp.mpf(1) / 2) * b / n for j in range(n)]
        mean = mp.fsum(g(mp.pi * (x + 1j * yy) / a, yy) for x in xs for yy in ys) / n**2
        return float(g(w, y) - mean)


def test_golden_half_periods():
    assert f1(1.0) == pytest.approx(F1_SQUARE, abs=1e-14)
    assert f3(1.0) == pytest.approx(F3_SQUARE, abs=1e-14)
    assert f1(2.0) == pytest.approx(F1_TAU2, abs=1e-14)
    assert f2(1.0) == pytest.approx(F1_SQUARE, abs=1e-14)


@pytest.mark.parametrize("kind,tau", [("f1", 1.0), ("f3", 1.0), ("f1", 2.0)])
def test_half_periods_match_theta_oracle(kind, tau):
    # midpoint rule on a smooth-away-from-pole integrand: the oracle's mean is accurate to ~1e-5
    got = {"f1": f1, "f3": f3}[kind](tau)
    assert got == pytest.approx(_oracle_half_period(kind, tau), abs=2e-4)


def test_thresholds():
    t0, t1 = tau_thresholds()
    assert t0 == pytest.approx(TAU0, abs=1e-12)
    assert t1 == pytest.approx(TAU1, abs=1e-12)
    assert t0 * t1 == pytest.approx(1.0, abs=1e-12)
    assert abs(f1(t1)) < 1e-12 and abs(f2(t0)) < 1e-12


@given(taus)
@settings(max_examples=25, deadline=None)
def test_half_period_modular_symmetry(tau):
    # swapping the sides swaps f1 and f2 and fixes f3
    assert f1(tau) == pytest.approx(f2(1 / tau), abs=1e-12)
    assert f3(tau) == pytest.approx(f3(1 / tau), abs=1e-12)


def test_half_period_table_reports_truncation():
    tab = half_period_values(1.5, 1e-14)
    assert tab.truncation_bound <= 1e-14
    assert tab.truncation_terms >= 1
    with pytest.raises(ValueError):
        half_period_values(-1.0)


def test_robin_constant():
    assert robin_constant(TorusGeometry()) == pytest.approx(ROBIN_SQUARE, abs=1e-11)
    assert theta_green(TorusGeometry()).robin == pytest.approx(ROBIN_SQUARE, abs=1e-11)
    with pytest.raises(TruncationFailure):
        robin_constant(TorusGeometry(), tol=1e-30)


@given(taus, coords, coords)
@settings(max_examples=40, deadline=None)
def test_theta_and_ewald_agree(tau, x, y):
    g = TorusGeometry.from_tau(tau)
    z = np.array([x, y * tau])
    if torus_distance(z, [0, 0], g) < 1e-3:
        return
    assert float(theta_green(g).value(z)) == pytest.approx(float(EwaldGreen(g).value(z)), abs=1e-10)


@given(taus, coords, coords)
@settings(max_examples=40, deadline=None)
def test_symmetry_and_periodicity(tau, x, y):
    g = TorusGeometry.from_tau(tau)
    t = theta_green(g)
    z = np.array([x, y * tau])
    v = float(t.value(z))
    assert float(t.value(-z)) == pytest.approx(v, abs=1e-12)
    assert float(t.value(z + [1.0, 0.0])) == pytest.approx(v, abs=1e-12)
    assert float(t.value(z + [0.0, tau])) == pytest.approx(v, abs=1e-12)


@given(taus, coords, coords, st.floats(0.2, 5.0))
@settings(max_examples=30, deadline=None)
def test_scale_and_modular_invariance(tau, x, y, s):
    g = TorusGeometry.from_tau(tau)
    z = np.array([x, y * tau])
    v = float(theta_green(g).value(z))
    assert float(theta_green(g.scaled(s)).value(s * z)) == pytest.approx(v, abs=1e-11)
    assert float(theta_green(TorusGeometry(g.b, g.a)).value(z[::-1])) == pytest.approx(v, abs=1e-11)


@given(taus, coords, coords)
@settings(max_examples=30, deadline=None)
def test_gradient_hessian_match_finite_differences(tau, x, y):
    g = TorusGeometry.from_tau(tau)
    t = theta_green(g)
    z = np.array([x, y * tau])
    if torus_distance(z, [0, 0], g) < 0.05:
        return
    h = 1e-5
    e = np.eye(2)
    fd_grad = np.array([(t.value(z + h * e[i]) - t.value(z - h * e[i])) / (2 * h) for i in range(2)])
    np.testing.assert_allclose(t.gradient(z), fd_grad, atol=1e-6 / torus_distance(z, [0, 0], g) ** 2)
    fd_hess = np.array([(t.gradient(z + h * e[i]) - t.gradient(z - h * e[i])) / (2 * h) for i in range(2)])
    np.testing.assert_allclose(t.hessian(z), fd_hess, atol=1e-5 / torus_distance(z, [0, 0], g) ** 3)


@given(taus, coords, coords)
@settings(max_examples=30, deadline=None)
def test_harmonic_up_to_background(tau, x, y):
    g = TorusGeometry.from_tau(tau)
    z = np.array([x, y * tau])
    if torus_distance(z, [0, 0], g) < 0.02:
        return
    # Lap G = 1/|T| away from the pole
    for ev in (theta_green(g), EwaldGreen(g)):
        assert np.trace(ev.hessian(z)) == pytest.approx(1 / g.area, abs=1e-8)


def test_zero_mean():
    g = TorusGeometry(1.0, 1.3)
    n = 200
    xs = (np.arange(n) + 0.5) / n
    pts = np.stack(np.meshgrid(xs, 1.3 * xs, indexing="ij"), -1)
    assert abs(theta_green(g).value(pts).mean()) < 1e-5


def test_singular_pole():
    g = TorusGeometry()
    with pytest.raises(SingularPole):
        theta_green(g).value([0.0, 0.0])
    with pytest.raises(SingularPole):
        EwaldGreen(g).value([1.0, 1.0])


@pytest.mark.parametrize(
    "z,expected",
    [
        ([0.6, 0.2], [-0.4, 0.2]),
        ([1.5, -0.5], [-0.5, -0.5]),
        ([0.49, 2.51], [0.49, -0.49]),
        ([-3.25, 0.0], [-0.25, 0.0]),
    ],
)
def test_reduce_to_fundamental_examples(z, expected):
    np.testing.assert_allclose(reduce_to_fundamental(z, TorusGeometry()), expected, atol=1e-14)


@given(st.floats(-50, 50), st.floats(-50, 50), taus)
def test_reduce_lands_in_cell(x, y, tau):
    g = TorusGeometry.from_tau(tau)
    r = reduce_to_fundamental([x, y], g)
    assert -0.5 <= r[0] < 0.5 and -tau / 2 <= r[1] < tau / 2


def test_half_periods_are_critical():
    for rep in half_period_criticality(TorusGeometry(1.0, 1.7)):
        assert rep.grad_norm < 1e-10


def test_geometry_validation():
    with pytest.raises(ValueError):
        TorusGeometry(0.0, 1.0)
    with pytest.raises(ValueError):
        TorusGeometry(1.0, float("nan"))
