"""Projected bubbles and the approximate solution ``V = sum_j m_j P U_j``.

Logarithms of the concentration scales are carried throughout because
``eps = exp(-Theta(1/lambda))`` underflows long before the formulas lose
meaning.  Local evaluation near a centre takes ``log|y|`` and a unit
direction instead of an absolute point, so offsets far below the spacing of
doubles around the centre coordinate remain exact.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import mpmath as mp
import numpy as np
from scipy.integrate import quad

from .errors import GridTooCoarse, SeparationViolation, UnresolvableScale
from .lattice import TorusGeometry, reduce_to_fundamental, theta_green
from .reduced import Configuration
from .spectral import PeriodicGrid

LOG8 = np.log(8.0)
# flat torus: the conformal factor of every chart vanishes identically
CONFORMAL_FACTOR = 0.0
RESOLVE_POINTS = 4.0  # grid points across the core diameter 2 * delta


@dataclass(frozen=True)
class Cutoff:
    """C^2 quintic smoothstep: 1 on ``[0, r0]``, 0 on ``[2 r0, inf)``."""

    r0: float

    def _t(self, r):
        return np.clip((np.asarray(r, float) - self.r0) / self.r0, 0.0, 1.0)

    def __call__(self, r):
        t = self._t(r)
        return 1.0 - t**3 * (10 - 15 * t + 6 * t * t)

    def d1(self, r):
        t = self._t(r)
        return -30 * t * t * (1 - t) ** 2 / self.r0

    def d2(self, r):
        t = self._t(r)
        return -(60 * t - 180 * t * t + 120 * t**3) / self.r0**2


def standard_bubble(y, mu: float):
    y = np.asarray(y, float)
    r2 = np.sum(y * y, axis=-1)
    return np.log(8 * mu * mu / (mu * mu + r2) ** 2)


@dataclass(frozen=True)
class BubbleParams:
    geom: TorusGeometry
    lam: float
    r0: float
    centers: np.ndarray
    m: np.ndarray
    mu: np.ndarray
    log_eps: np.ndarray
    H: float

    @property
    def k(self) -> int:
        return len(self.m)

    @property
    def eps(self) -> np.ndarray:
        return np.exp(self.log_eps)

    @property
    def log_delta(self) -> np.ndarray:
        return np.log(self.mu) + self.log_eps

    @property
    def delta(self) -> np.ndarray:
        return np.exp(self.log_delta)

    @property
    def cutoff(self) -> Cutoff:
        return Cutoff(self.r0)

    def resolvability(self, h: float) -> np.ndarray:
        """``delta_j / h`` for a grid of spacing ``h``."""
        return self.delta / h

    def resolvability_ratio(self) -> np.ndarray:
        return self.delta / self.r0

    def closure_residuals(self) -> tuple[np.ndarray, np.ndarray]:
        """Mismatch of both closing relations, recomputed from the stored values."""
        g = theta_green(self.geom)
        res_mu = np.empty(self.k)
        for j in range(self.k):
            s = 0.0
            for i in range(self.k):
                if i != j:
                    s += self.m[i] / self.m[j] * float(g.value(self.centers[i] - self.centers[j]))
            rhs = -2 * np.log(2 * self.m[j] ** 2) + 8 * np.pi * self.H + 8 * np.pi * s
            res_mu[j] = np.log(8 * self.mu[j] ** 2) - rhs
        rhs_e = 1 / (2 * self.lam * self.m**2) - 2 * np.log(2 * self.m**2)
        res_e = -4 * self.log_eps - rhs_e
        return res_mu, res_e

    def as_dict(self) -> dict:
        return {
            "a": self.geom.a,
            "b": self.geom.b,
            "lambda": self.lam,
            "r0": self.r0,
            "centers": self.centers.tolist(),
            "m": self.m.tolist(),
            "mu": self.mu.tolist(),
            "log_eps": self.log_eps.tolist(),
            "log_delta": self.log_delta.tolist(),
            "robin": self.H,
        }


def default_r0(geom: TorusGeometry) -> float:
    return geom.min_side / 8


def close_parameters(
    config: Configuration, lam: float, geom: TorusGeometry, r0: float | None = None
) -> BubbleParams:
    if not lam > 0:
        raise ValueError("lambda must be positive")
    r0 = default_r0(geom) if r0 is None else r0
    g = theta_green(geom)
    k = config.k
    pts = config.points
    m = config.weights
    for i in range(k):
        for j in range(i + 1, k):
            d = reduce_to_fundamental(pts[i] - pts[j], geom)
            if np.hypot(*d) < 4 * r0 * (1 - 1e-12):
                raise SeparationViolation(
                    f"centres {i},{j} are {np.hypot(*d):.4g} apart, need >= 4 r0 = {4 * r0:.4g}"
                )
    H = g.robin
    mu = np.empty(k)
    for j in range(k):
        s = sum(m[i] / m[j] * float(g.value(pts[i] - pts[j])) for i in range(k) if i != j)
        log8mu2 = -2 * np.log(2 * m[j] ** 2) + 8 * np.pi * H + 8 * np.pi * s
        mu[j] = np.sqrt(np.exp(log8mu2) / 8)
    log_eps = -(1 / (2 * lam * m**2) - 2 * np.log(2 * m**2)) / 4
    params = BubbleParams(geom, float(lam), float(r0), pts.copy(), m.copy(), mu, log_eps, float(H))
    if np.any(params.log_delta < np.log(1e-12)):
        warnings.warn(
            f"bubble scale delta = exp({params.log_delta.min():.1f}) cannot be resolved by any grid",
            UnresolvableScale,
            stacklevel=2,
        )
    return params


def params_for_delta(geom: TorusGeometry, center, delta: float, r0: float | None = None, m: float = 1.0):
    """Single-bubble parameters with a prescribed ``delta`` (``mu = 1``); used for kernel studies."""
    r0 = default_r0(geom) if r0 is None else r0
    H = theta_green(geom).robin
    return BubbleParams(
        geom,
        float("nan"),
        float(r0),
        np.atleast_2d(np.asarray(center, float)),
        np.array([m]),
        np.array([1.0]),
        np.array([np.log(delta)]),
        float(H),
    )


# ---------------------------------------------------------------------------
# radial helpers


def _log_r2_plus_d2(logr, log_delta):
    return np.logaddexp(2 * logr, 2 * log_delta)


def log_bubble_density(logr, log_delta):
    """``log e^{U} = log(8 delta^2 / (delta^2 + r^2)^2)``."""
    return LOG8 + 2 * log_delta - 2 * _log_r2_plus_d2(logr, log_delta)


def _ell(logr, log_delta):
    """``-2 log(1 + delta^2 / r^2)``."""
    with np.errstate(over="ignore"):
        return -2 * np.logaddexp(0.0, 2 * (log_delta - logr))


def chi_mass(log_delta: float, r0: float) -> float:
    """``int chi e^U`` over the torus; the part ``r <= r0`` is exact."""
    cut = Cutoff(r0)
    d2 = np.exp(2 * log_delta)
    inner = 8 * np.pi * r0 * r0 / (d2 + r0 * r0)
    ann, _ = quad(
        lambda r: cut(r) * 8 * d2 / (d2 + r * r) ** 2 * 2 * np.pi * r, r0, 2 * r0, epsabs=0, epsrel=1e-13, limit=200
    )
    return float(inner + ann)


def chi_ell_integral(log_delta: float, r0: float) -> float:
    """``int chi * ell`` over the torus (``ell = -2 log(1 + delta^2/r^2)``)."""
    cut = Cutoff(r0)
    d = np.exp(log_delta)

    def f(r):
        if r == 0:
            return 0.0
        return float(cut(r)) * float(_ell(np.log(r), log_delta)) * 2 * np.pi * r

    pts = [x for x in (d, r0) if 0 < x < 2 * r0]
    val, _ = quad(f, 0, 2 * r0, points=pts or None, epsabs=1e-300, epsrel=1e-13, limit=400)
    return float(val)


# ---------------------------------------------------------------------------
# projection


def _correction_source(grid: PeriodicGrid, center, log_delta: float, r0: float, geom: TorusGeometry):
    """Right-hand side ``g`` of ``-Lap Psi = g`` for ``Psi = PU - surrogate`` (mean removed)."""
    cut = Cutoff(r0)
    y = reduce_to_fundamental(grid.nodes() - center, geom)
    r = np.hypot(y[..., 0], y[..., 1])
    annulus = (r > r0) & (r < 2 * r0)
    g = np.zeros_like(r)
    ra = r[annulus]
    lr = np.log(ra)
    ell = _ell(lr, log_delta)
    d2 = np.exp(2 * log_delta)
    dell = 4 * d2 / (ra * (ra * ra + d2))
    lap_chi = cut.d2(ra) + cut.d1(ra) / ra
    g[annulus] = lap_chi * ell + 2 * cut.d1(ra) * dell
    return g - g.mean()


def _surrogate(geom, log_delta, r0, y, logr):
    """``chi [U - log(8 delta^2)] + 8 pi H(x, xi)`` from offsets ``y`` and exact ``log|y|``."""
    cut = Cutoff(r0)
    r = np.exp(logr)
    greg = theta_green(geom).regular(y)
    chi = cut(r)
    inside = chi >= 1.0
    out = 8 * np.pi * greg - 2 * chi * _log_r2_plus_d2(logr, log_delta)
    with np.errstate(invalid="ignore"):
        corr = np.where(inside, 0.0, 4 * (chi - 1) * logr)
    return out + corr


def project_bubble(j: int, params: BubbleParams, n: int, mode: str = "split") -> np.ndarray:
    """Mean-zero ``P U_j`` sampled on an ``n x n`` grid.

    ``grid``: direct spectral solve of the sampled source (needs the core resolved).
    ``split``: closed-form surrogate plus the spectrally solved smooth remainder.
    ``expansion``: the surrogate alone, shifted to zero mean.
    """
    geom = params.geom
    grid = PeriodicGrid(geom, n)
    c = params.centers[j]
    ld = float(params.log_delta[j])
    y = reduce_to_fundamental(grid.nodes() - c, geom)
    r = np.hypot(y[..., 0], y[..., 1])
    with np.errstate(divide="ignore"):
        logr = np.log(r)
    if mode == "grid":
        if 2 * np.exp(ld) / grid.spacing < RESOLVE_POINTS:
            raise GridTooCoarse(
                f"delta={np.exp(ld):.3g} spans {2 * np.exp(ld) / grid.spacing:.2f} points across its core"
            )
        src = params.cutoff(r) * np.exp(log_bubble_density(logr, ld))
        return grid.solve_poisson(src)
    surr = _surrogate(geom, ld, params.r0, y, logr)
    if mode == "expansion":
        return surr - surr.mean()
    if mode != "split":
        raise ValueError(f"unknown mode {mode!r}")
    psi = grid.solve_poisson(_correction_source(grid, c, ld, params.r0, geom))
    psi += -chi_ell_integral(ld, params.r0) / geom.area
    return surr + psi


@dataclass
class AnsatzField:
    """``V = sum_j m_j P U_j`` with closures for ``V`` and its exact Laplacian."""

    params: BubbleParams
    mode: str = "split"
    grid_n: int = 256
    _psi: list = field(default_factory=list, repr=False)
    _mass: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        p = self.params
        assert CONFORMAL_FACTOR == 0.0
        self._mass = np.array([chi_mass(float(ld), p.r0) for ld in p.log_delta])
        self._psi = []
        self._psi_grids = []
        if self.mode == "split":
            grid = PeriodicGrid(p.geom, self.grid_n)
            for j in range(p.k):
                psi = grid.solve_poisson(_correction_source(grid, p.centers[j], float(p.log_delta[j]), p.r0, p.geom))
                psi += -chi_ell_integral(float(p.log_delta[j]), p.r0) / p.geom.area
                self._psi_grids.append(psi)
                self._psi.append(grid.interpolator(psi))
        elif self.mode == "expansion":
            for j in range(p.k):
                shift = -chi_ell_integral(float(p.log_delta[j]), p.r0) / p.geom.area
                self._psi.append(lambda x, s=shift: np.full(np.shape(x)[:-1], s))
        else:
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def k(self) -> int:
        return self.params.k

    @property
    def mass(self) -> np.ndarray:
        """``int chi_j e^{U_j}`` for each bubble."""
        return self._mass

    # -- coordinates -------------------------------------------------------
    def _offsets_abs(self, x):
        x = np.asarray(x, float).reshape(-1, 2)
        out = []
        for i in range(self.k):
            y = reduce_to_fundamental(x - self.params.centers[i], self.params.geom)
            r = np.hypot(y[:, 0], y[:, 1])
            with np.errstate(divide="ignore"):
                out.append((y, np.log(r)))
        return x, out

    def _offsets_local(self, j, logr, u):
        logr = np.asarray(logr, float).ravel()
        u = np.asarray(u, float).reshape(-1, 2)
        r = np.exp(logr)
        yj = r[:, None] * u
        x = self.params.centers[j] + yj
        out = []
        for i in range(self.k):
            if i == j:
                out.append((yj, logr))
            else:
                y = reduce_to_fundamental(x - self.params.centers[i], self.params.geom)
                out.append((y, np.log(np.hypot(y[:, 0], y[:, 1]))))
        return x, out

    # -- fields ------------------------------------------------------------
    def _pu(self, i, x, y, logr):
        p = self.params
        s = _surrogate(p.geom, float(p.log_delta[i]), p.r0, y, logr)
        return s + self._psi[i](x)

    def _log_parts(self, x, offs):
        """``V`` and the logarithms of ``chi_i e^{U_i}`` (one row per bubble)."""
        p = self.params
        V = np.zeros(len(x))
        logd = np.empty((self.k, len(x)))
        for i, (y, logr) in enumerate(offs):
            V += p.m[i] * self._pu(i, x, y, logr)
            with np.errstate(divide="ignore"):
                logd[i] = np.log(p.cutoff(np.exp(logr))) + log_bubble_density(logr, float(p.log_delta[i]))
        return V, logd

    def _parts(self, x, offs):
        p = self.params
        V, logd = self._log_parts(x, offs)
        with np.errstate(over="ignore"):
            dens = np.exp(logd)
        lapV = -np.sum(p.m[:, None] * (dens - self._mass[:, None] / p.geom.area), axis=0)
        return V, lapV, dens.sum(axis=0)

    def log_fields(self, x):
        """``(V, log(chi_i e^{U_i}))`` at absolute points; never overflows."""
        x, offs = self._offsets_abs(x)
        return self._log_parts(x, offs)

    def log_fields_local(self, j, logr, u):
        x, offs = self._offsets_local(j, logr, u)
        return self._log_parts(x, offs)

    def value(self, x):
        x, offs = self._offsets_abs(x)
        return self._parts(x, offs)[0]

    def laplacian(self, x):
        x, offs = self._offsets_abs(x)
        return self._parts(x, offs)[1]

    def fields(self, x):
        """``(V, Lap V, K)`` at absolute points."""
        x, offs = self._offsets_abs(x)
        return self._parts(x, offs)

    def fields_local(self, j, logr, u):
        """``(V, Lap V, K)`` at ``xi_j + exp(logr) u``."""
        x, offs = self._offsets_local(j, logr, u)
        return self._parts(x, offs)

    def pu_local(self, i, j, logr, u):
        x, offs = self._offsets_local(j, logr, u)
        y, lr = offs[i]
        return self._pu(i, x, y, lr)

    def u_scale(self, x):
        return np.sqrt(self.params.lam) * self.value(x)

    def on_grid(self, n: int) -> np.ndarray:
        grid = PeriodicGrid(self.params.geom, n)
        return self.value(grid.nodes().reshape(-1, 2)).reshape(grid.shape)

    def w_local(self, j, logr):
        """``w_j = w_mu(y / eps)`` as a function of ``log|y|``."""
        p = self.params
        return log_bubble_density(logr, float(p.log_delta[j])) + 2 * float(p.log_eps[j])

    def theta_local(self, j, logr, u):
        """``theta_j = V / m_j - w_j - 1/(2 lambda m_j^2)`` inside ``B_{r0}(xi_j)``."""
        p = self.params
        V = self.fields_local(j, logr, u)[0]
        return V / p.m[j] - self.w_local(j, logr) - 1 / (2 * p.lam * p.m[j] ** 2)


def assemble_ansatz(params: BubbleParams, mode: str = "split", grid_n: int = 256) -> AnsatzField:
    if mode not in ("split", "expansion"):
        raise ValueError("assemble_ansatz supports 'split' and 'expansion' modes")
    return AnsatzField(params, mode, grid_n)


# ---------------------------------------------------------------------------
# concentration integrals for radial test functions


@dataclass(frozen=True)
class ConcentrationIntegrals:
    delta: float
    a: float
    values: tuple
    leading: tuple

    @property
    def errors(self) -> tuple:
        return tuple(v - t for v, t in zip(self.values, self.leading))


def concentration_integrals(
    fbar=None, delta: float = 1e-2, r0: float = 0.125, a: float = 1.0, lap_fbar_at_xi: float = 0.0,
    f_at_xi: float | None = None, dps: int = 40,
) -> ConcentrationIntegrals:
    """The three cut-off moments of ``e^{U}`` against a radial test function.

    ``fbar`` maps a radius to a value (``None`` means the constant 1).  The
    integrals are evaluated in extended precision by radial quadrature with
    breakpoints at ``delta``, ``r0`` and ``2 r0``.
    """
    if fbar is None:
        fbar = lambda r: 1  # noqa: E731
        f_at_xi = 1.0
    if f_at_xi is None:
        f_at_xi = float(fbar(0.0))
    with mp.workdps(dps):
        d = mp.mpf(delta)
        R0 = mp.mpf(r0)

        def chi(r):
            if r <= R0:
                return mp.mpf(1)
            t = (r - R0) / R0
            if t >= 1:
                return mp.mpf(0)
            return 1 - t**3 * (10 - 15 * t + 6 * t * t)

        def eU(r):
            return 8 * d * d / (d * d + r * r) ** 2

        pts = [mp.mpf(0), d, 10 * d, R0, 2 * R0]
        pts = sorted(set(p for p in pts if p <= 2 * R0))

        def integ(kernel):
            return mp.quad(lambda r: 2 * mp.pi * r * chi(r) * fbar(r) * eU(r) * kernel(r), pts)

        i1 = integ(lambda r: 1)
        i2 = integ(lambda r: 1 / (d * d + r * r))
        aa = mp.mpf(a)
        i3 = integ(lambda r: (aa * d * d - r * r) / (d * d + r * r) ** 2)
        lead1 = 8 * mp.pi * f_at_xi - 4 * mp.pi * d * d * mp.log(d) * lap_fbar_at_xi
        lead2 = 4 * mp.pi / (d * d) * f_at_xi + mp.pi * lap_fbar_at_xi
        lead3 = 4 * mp.pi / (3 * d * d) * (2 * aa - 1) * f_at_xi + (aa - 2) * mp.pi / 3 * lap_fbar_at_xi
        return ConcentrationIntegrals(
            float(delta), float(a), (float(i1), float(i2), float(i3)), (float(lead1), float(lead2), float(lead3))
        )
