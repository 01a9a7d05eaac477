"""Spectral grid, configuration and field files."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtbubble.config import RunConfig
from mtbubble.errors import ConfigError
from mtbubble.fieldio import load_field, save_field
from mtbubble.lattice import TorusGeometry
from mtbubble.spectral import PeriodicGrid


def trig(grid, kx, ky):
    X = grid.nodes()
    return np.sin(2 * np.pi * (kx * X[..., 0] / grid.geom.a + ky * X[..., 1] / grid.geom.b))


@given(st.integers(-5, 5), st.integers(-5, 5), st.floats(0.5, 2.0))
@settings(max_examples=25, deadline=None)
def test_spectral_laplacian_and_poisson_exact_on_trig(kx, ky, tau):
    grid = PeriodicGrid(TorusGeometry.from_tau(tau), 32)
    f = trig(grid, kx, ky)
    k2 = (2 * np.pi * kx) ** 2 + (2 * np.pi * ky / tau) ** 2
    np.testing.assert_allclose(grid.laplacian(f), -k2 * f, atol=1e-9 * max(1, k2))
    if k2 > 0:
        np.testing.assert_allclose(grid.solve_poisson(k2 * f), f, atol=1e-12)
        assert grid.dirichlet_product(f, f) == pytest.approx(k2 * grid.integrate(f * f), rel=1e-12)


def test_refine_coarsen_roundtrip():
    grid = PeriodicGrid(TorusGeometry(), 32)
    f = trig(grid, 3, -2) + 0.5 * trig(grid, 1, 5)
    fine = grid.refine(f)
    assert fine.shape == (64, 64)
    np.testing.assert_allclose(fine[::2, ::2], f, atol=1e-13)
    np.testing.assert_allclose(grid.coarsen(fine), f, atol=1e-13)


def test_interpolator_reproduces_smooth_field():
    grid = PeriodicGrid(TorusGeometry(1.0, 1.5), 64)
    f = trig(grid, 1, 1)
    it = grid.interpolator(f)
    pts = np.random.default_rng(0).uniform(-1, 2, (50, 2))
    exact = np.sin(2 * np.pi * (pts[:, 0] + pts[:, 1] / 1.5))
    np.testing.assert_allclose(it(pts), exact, atol=1e-4)


def test_grid_validation():
    with pytest.raises(ValueError):
        PeriodicGrid(TorusGeometry(), 15)


# -- configuration -----------------------------------------------------------


def test_config_roundtrip_and_digest(tmp_path):
    cfg = RunConfig(b=1.3, lambda_n=7, periods=("p3",), seed=11)
    path = tmp_path / "run.ini"
    cfg.save(path)
    back = RunConfig.load(path)
    assert back == cfg
    assert back.digest() == cfg.digest()
    assert cfg.digest() != RunConfig().digest()
    assert cfg.tau == pytest.approx(1.3)


@given(st.floats(1e-4, 1e-2), st.floats(1.5, 100), st.integers(2, 20), st.booleans())
def test_lambda_grid(lo, ratio, n, log):
    cfg = RunConfig(lambda_lo=lo, lambda_hi=lo * ratio, lambda_n=n, log_spacing=log)
    lams = cfg.lambdas()
    assert len(lams) == n and lams[0] == pytest.approx(lo) and lams[-1] == pytest.approx(lo * ratio)
    assert np.all(np.diff(lams) > 0)
    assert RunConfig.from_text(cfg.to_text()) == cfg


@pytest.mark.parametrize(
    "kw",
    [
        {"a": -1.0},
        {"lambda_lo": 0.1, "lambda_hi": 0.01},
        {"grid": 33},
        {"workers": 0},
        {"periods": ("p4",)},
        {"branches": ()},
        {"newton_tol": 0.0},
    ],
)
def test_config_rejects_bad_values(kw):
    with pytest.raises(ConfigError):
        RunConfig(**kw)


def test_config_text_errors():
    with pytest.raises(ConfigError):
        RunConfig.from_text("[other]\na = 1\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("[run]\nbogus = 1\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("[run]\ngrid = many\n")
    with pytest.raises(ConfigError):
        RunConfig.load("/nonexistent/run.ini")


def test_with_overrides_ignores_none():
    cfg = RunConfig()
    assert cfg.with_overrides(grid=None) is cfg
    assert cfg.with_overrides(grid=128).grid == 128


# -- field files -------------------------------------------------------------


def test_field_roundtrip(tmp_path):
    arr = np.random.default_rng(0).normal(size=(16, 24))
    binp, hdrp = save_field(tmp_path / "f", arr, lam=0.5, centers=np.array([[0.25, 0.25]]), mode="split")
    assert binp.stat().st_size == arr.size * 8
    back, meta = load_field(tmp_path / "f")
    np.testing.assert_array_equal(back, arr)
    assert float(meta["lam"]) == 0.5 and meta["mode"] == "split"
    assert [float(x) for x in meta["centers"].split()] == [0.25, 0.25]


def test_field_header_magic(tmp_path):
    (tmp_path / "g.hdr").write_text("not a header\n")
    with pytest.raises(ValueError):
        load_field(tmp_path / "g")
