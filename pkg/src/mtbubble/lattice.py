"""Zero-mean Green's function of a flat rectangular torus.

Two independent evaluators are provided.  ``ThetaGreen`` uses the Jacobi
theta product for ``theta_1`` with its additive constant pinned by the
half-period series; ``EwaldGreen`` splits the lattice sum into a Gaussian
screened reciprocal part and an exponential-integral real-space part and
uses no fitted constant at all.  Both return values, analytic gradients and
analytic Hessians.

Convention: the fundamental cell is the half-open rectangle
``[-a/2, a/2) x [-b/2, b/2)``.  The half period ``(a/2, b/2)`` therefore
reduces to ``(-a/2, -b/2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import exp1

from .errors import SingularPole, TruncationFailure

SINGULAR_RADIUS = 1e-8  # relative to min(a, b)
TERM_CAP = 10_000
_LOG2 = np.log(2.0)


@dataclass(frozen=True)
class TorusGeometry:
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and np.isfinite(self.a) and np.isfinite(self.b)):
            raise ValueError(f"torus sides must be positive, got a={self.a}, b={self.b}")

    @property
    def tau(self) -> float:
        return self.b / self.a

    @property
    def area(self) -> float:
        return self.a * self.b

    @property
    def min_side(self) -> float:
        return min(self.a, self.b)

    @property
    def half_periods(self) -> dict[str, np.ndarray]:
        return {
            "p1": np.array([self.a / 2, 0.0]),
            "p2": np.array([0.0, self.b / 2]),
            "p3": np.array([self.a / 2, self.b / 2]),
        }

    def scaled(self, s: float) -> "TorusGeometry":
        return TorusGeometry(self.a * s, self.b * s)

    @classmethod
    def from_tau(cls, tau: float, a: float = 1.0) -> "TorusGeometry":
        return cls(a, a * tau)


def reduce_to_fundamental(z, geom: TorusGeometry) -> np.ndarray:
    """Map points (last axis of length 2) into ``[-a/2, a/2) x [-b/2, b/2)``."""
    z = np.asarray(z, dtype=float)
    per = np.array([geom.a, geom.b])
    out = z - per * np.floor(z / per + 0.5)
    # floor can round a value just below +per/2 up to exactly +per/2
    out = np.where(out >= per / 2, out - per, out)
    return out


def torus_distance(z1, z2, geom: TorusGeometry) -> np.ndarray:
    d = reduce_to_fundamental(np.asarray(z1, float) - np.asarray(z2, float), geom)
    return np.hypot(d[..., 0], d[..., 1])


@dataclass(frozen=True)
class GreenValue:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray


# ---------------------------------------------------------------------------
# half-period series


def _series_terms(kind: str, tau: float, tol: float) -> tuple[float, int, float]:
    """Sum one half-period series until its geometric tail bound is below ``tol``."""
    q = np.exp(-2 * np.pi * tau)  # ratio of consecutive terms in every tail
    if kind == "f1":
        head = tau / 12 - _LOG2 / (2 * np.pi)
        first = lambda n: np.exp(-2 * np.pi * n * tau)  # noqa: E731
        n0 = 1
    elif kind == "f2":
        head = -tau / 24
        first = lambda n: np.exp(-np.pi * (2 * n + 1) * tau)  # noqa: E731
        n0 = 0
    elif kind == "f3":
        head = -tau / 24
        first = lambda n: np.exp(-np.pi * (2 * n + 1) * tau)  # noqa: E731
        n0 = 0
    else:
        raise ValueError(kind)

    def tail(n):
        x = first(n)
        if kind == "f2":
            return x / ((1 - x) * (1 - q)) / np.pi
        return x / (1 - q) / np.pi

    n = n0
    while tail(n) > tol:
        n += 1
        if n - n0 > TERM_CAP:
            raise TruncationFailure(
                f"{kind}({tau}) needs more than {TERM_CAP} terms for tol={tol}"
            )
    idx = np.arange(n0, n)
    x = first(idx)
    if kind == "f2":
        s = np.sum(np.log1p(-x))
    else:
        s = np.sum(np.log1p(x))
    # f1, f3 subtract log(1 + x); f2 subtracts log(1 - x)
    value = head - s / np.pi
    return float(value), int(n - n0), float(tail(n))


def f1(tau: float, tol: float = 1e-16) -> float:
    return _series_terms("f1", tau, tol)[0]


def f2(tau: float, tol: float = 1e-16) -> float:
    return _series_terms("f2", tau, tol)[0]


def f3(tau: float, tol: float = 1e-16) -> float:
    return _series_terms("f3", tau, tol)[0]


@dataclass(frozen=True)
class HalfPeriodTable:
    tau: float
    f1: float
    f2: float
    f3: float
    truncation_terms: int
    truncation_bound: float

    def as_dict(self) -> dict:
        return {
            "tau": self.tau,
            "f1": self.f1,
            "f2": self.f2,
            "f3": self.f3,
            "truncation_terms": self.truncation_terms,
            "truncation_bound": self.truncation_bound,
        }


def half_period_values(tau: float, tol: float = 1e-15) -> HalfPeriodTable:
    if not tau > 0:
        raise ValueError("tau must be positive")
    if not tol > 0:
        raise ValueError("tol must be positive")
    vals, terms, bounds = [], [], []
    for kind in ("f1", "f2", "f3"):
        v, n, b = _series_terms(kind, tau, tol)
        vals.append(v)
        terms.append(n)
        bounds.append(b)
    return HalfPeriodTable(tau, *vals, max(terms), max(bounds))


def tau_thresholds(tol: float = 1e-13) -> tuple[float, float]:
    """Roots ``tau0`` of f2 and ``tau1`` of f1 (both series are monotone)."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    tau1 = brentq(lambda t: f1(t), 1.0, 2.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    tau0 = brentq(lambda t: f2(t), 0.5, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return float(tau0), float(tau1)


# ---------------------------------------------------------------------------
# evaluators


def _as_points(z) -> tuple[np.ndarray, tuple]:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != 2:
        raise ValueError("points must have a trailing axis of length 2")
    return z.reshape(-1, 2), z.shape[:-1]


class _GreenBase:
    geom: TorusGeometry

    def _check_pole(self, r):
        if np.any(r < SINGULAR_RADIUS * self.geom.min_side):
            raise SingularPole("evaluation point within singularity radius of the pole")

    def evaluate(self, z) -> GreenValue:
        z = np.asarray(z, dtype=float)
        return GreenValue(
            float(self.value(z)), np.asarray(self.gradient(z)), np.asarray(self.hessian(z))
        )

    def __call__(self, z):
        return self.value(z)


class ThetaGreen(_GreenBase):
    """Theta-product evaluator.

    ``G(z) = -(1/2pi) log|theta_1(pi z / a)| + y^2/(2ab) + C`` with the nome
    ``q = exp(-pi b/a)``.  Axes are swapped internally so that ``b >= a``,
    which keeps ``q <= exp(-pi)``.
    """

    def __init__(self, geom: TorusGeometry):
        self.geom = geom
        self._swap = geom.b < geom.a
        self._a, self._b = (geom.b, geom.a) if self._swap else (geom.a, geom.b)
        t = self._b / self._a
        # |q^{2n} e^{2iw}| <= exp(-pi t (2n - 1)) inside the cell
        nmax = int(np.ceil((45.0 / (np.pi * t) + 1) / 2)) + 1
        self._q2n = np.exp(-2 * np.pi * t * np.arange(1, nmax + 1))
        self._const = 0.0
        p3 = np.array([geom.a / 2, geom.b / 2])
        self._const = f3(geom.tau) - float(self.value(p3))
        self.robin = float(
            -(np.log(np.pi / self._a) + 2 * np.sum(np.log1p(-self._q2n))) / (2 * np.pi)
            + self._const
        )

    # internal helpers operate on reduced, axis-swapped points
    def _internal(self, z):
        pts, shape = _as_points(z)
        pts = reduce_to_fundamental(pts, self.geom)
        if self._swap:
            pts = pts[:, ::-1]
        return pts, shape

    def _logabs_parts(self, pts, regular=False):
        x, y = pts[:, 0], pts[:, 1]
        w = np.pi * (x + 1j * y) / self._a
        v = np.abs(w.imag)
        ws = np.where(w.imag >= 0, w, np.conj(w))
        if regular:
            # log|sin w| - log|w| with a series near the origin
            small = np.abs(w) < 0.05
            w2 = w * w
            series = np.real(-w2 / 6 - w2**2 / 180 - w2**3 / 2835)
            with np.errstate(divide="ignore", invalid="ignore"):
                direct = v - _LOG2 + np.log(np.abs(1 - np.exp(2j * ws))) - np.log(np.abs(w))
            ls = np.where(small, series, direct)
        else:
            with np.errstate(divide="ignore"):
                ls = v - _LOG2 + np.log(np.abs(1 - np.exp(2j * ws)))
        q = self._q2n[None, :]
        e = np.exp(2j * w)[:, None]
        ls = ls + np.sum(np.log(np.abs(1 - q * e)), axis=1) + np.sum(
            np.log(np.abs(1 - q / e)), axis=1
        )
        return ls, y

    def value(self, z):
        pts, shape = self._internal(z)
        self._check_pole(np.hypot(pts[:, 0], pts[:, 1]))
        ls, y = self._logabs_parts(pts)
        g = -ls / (2 * np.pi) + y * y / (2 * self.geom.area) + self._const
        return g.reshape(shape) if shape else g[0]

    def regular(self, z):
        """``G(z) + log|z| / (2 pi)`` with ``z`` the reduced representative; smooth at 0."""
        pts, shape = self._internal(z)
        ls, y = self._logabs_parts(pts, regular=True)
        g = -(ls + np.log(np.pi / self._a)) / (2 * np.pi) + y * y / (2 * self.geom.area)
        g = g + self._const
        return g.reshape(shape) if shape else g[0]

    def _derivs(self, pts):
        x, y = pts[:, 0], pts[:, 1]
        w = np.pi * (x + 1j * y) / self._a
        up = w.imag >= 0
        e = np.where(up, np.exp(2j * w), np.exp(-2j * w))
        with np.errstate(divide="ignore", invalid="ignore"):
            cot = np.where(up, 1j * (e + 1) / (e - 1), 1j * (1 + e) / (1 - e))
            csc2 = -4 * e / (1 - e) ** 2
        q = self._q2n[None, :]
        E = np.exp(2j * w)[:, None]
        g = q * E
        h = q / E
        d1 = cot + np.sum(-2j * g / (1 - g) + 2j * h / (1 - h), axis=1)
        d2 = -csc2 + np.sum(4 * g / (1 - g) ** 2 + 4 * h / (1 - h) ** 2, axis=1)
        return d1, d2, y

    def gradient(self, z):
        pts, shape = self._internal(z)
        self._check_pole(np.hypot(pts[:, 0], pts[:, 1]))
        d1, _, y = self._derivs(pts)
        c = -(np.pi / self._a) / (2 * np.pi)
        gx = c * d1.real
        gy = -c * d1.imag + y / self.geom.area
        grad = np.stack([gx, gy], axis=-1)
        if self._swap:
            grad = grad[:, ::-1]
        return grad.reshape(shape + (2,)) if shape else grad[0]

    def hessian(self, z):
        pts, shape = self._internal(z)
        self._check_pole(np.hypot(pts[:, 0], pts[:, 1]))
        _, d2, _ = self._derivs(pts)
        c = -((np.pi / self._a) ** 2) / (2 * np.pi)
        hxx = c * d2.real
        hxy = -c * d2.imag
        hyy = -c * d2.real + 1.0 / self.geom.area
        if self._swap:
            hxx, hyy = hyy, hxx
        hess = np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)
        return hess.reshape(shape + (2, 2)) if shape else hess[0]


@dataclass
class EwaldGreen(_GreenBase):
    """Gaussian-split lattice sum.  Independent of the half-period series."""

    geom: TorusGeometry
    split: float | None = None
    cutoff: float = 42.0  # exponent beyond which terms are dropped
    _kx: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        g = self.geom
        s = self.split if self.split is not None else g.min_side**2 / (16 * np.pi)
        self.split = s
        kmax = np.sqrt(self.cutoff / s)
        nx = int(np.ceil(kmax * g.a / (2 * np.pi)))
        ny = int(np.ceil(kmax * g.b / (2 * np.pi)))
        kx, ky = np.meshgrid(
            2 * np.pi * np.arange(-nx, nx + 1) / g.a,
            2 * np.pi * np.arange(-ny, ny + 1) / g.b,
            indexing="ij",
        )
        k2 = kx**2 + ky**2
        keep = k2 > 0
        self._kx, self._ky, k2 = kx[keep], ky[keep], k2[keep]
        self._kw = np.exp(-s * k2) / k2 / g.area
        lmax = np.sqrt(4 * s * self.cutoff) + 0.5 * max(g.a, g.b) * np.sqrt(2)
        mx = int(np.ceil(lmax / g.a))
        my = int(np.ceil(lmax / g.b))
        lx, ly = np.meshgrid(
            g.a * np.arange(-mx, mx + 1), g.b * np.arange(-my, my + 1), indexing="ij"
        )
        self._lx, self._ly = lx.ravel(), ly.ravel()
        l2 = self._lx**2 + self._ly**2
        nz = l2 > 0
        self.robin = float(
            (-np.euler_gamma + np.log(4 * s)) / (4 * np.pi)
            + np.sum(exp1(l2[nz] / (4 * s))) / (4 * np.pi)
            + np.sum(self._kw)
            - s / g.area
        )

    def _real_offsets(self, pts):
        dx = pts[:, 0:1] - self._lx[None, :]
        dy = pts[:, 1:2] - self._ly[None, :]
        return dx, dy, dx * dx + dy * dy

    def value(self, z):
        pts, shape = _as_points(z)
        pts = reduce_to_fundamental(pts, self.geom)
        self._check_pole(np.hypot(pts[:, 0], pts[:, 1]))
        s = self.split
        phase = pts[:, 0:1] * self._kx[None, :] + pts[:, 1:2] * self._ky[None, :]
        rec = np.cos(phase) @ self._kw
        _, _, r2 = self._real_offsets(pts)
        real = np.sum(exp1(r2 / (4 * s)), axis=1) / (4 * np.pi)
        g = rec + real - s / self.geom.area
        return g.reshape(shape) if shape else g[0]

    def gradient(self, z):
        pts, shape = _as_points(z)
        pts = reduce_to_fundamental(pts, self.geom)
        self._check_pole(np.hypot(pts[:, 0], pts[:, 1]))
        s = self.split
        phase = pts[:, 0:1] * self._kx[None, :] + pts[:, 1:2] * self._ky[None, :]
        sn = np.sin(phase)
        gx = -(sn @ (self._kw * self._kx))
        gy = -(sn @ (self._kw * self._ky))
        dx, dy, r2 = self._real_offsets(pts)
        f = -np.exp(-r2 / (4 * s)) / r2 / (2 * np.pi)
        gx = gx + np.sum(f * dx, axis=1)
        gy = gy + np.sum(f * dy, axis=1)
        grad = np.stack([gx, gy], -1)
        return grad.reshape(shape + (2,)) if shape else grad[0]

    def hessian(self, z):
        pts, shape = _as_points(z)
        pts = reduce_to_fundamental(pts, self.geom)
        self._check_pole(np.hypot(pts[:, 0], pts[:, 1]))
        s = self.split
        phase = pts[:, 0:1] * self._kx[None, :] + pts[:, 1:2] * self._ky[None, :]
        cs = np.cos(phase)
        hxx = -(cs @ (self._kw * self._kx**2))
        hxy = -(cs @ (self._kw * self._kx * self._ky))
        hyy = -(cs @ (self._kw * self._ky**2))
        dx, dy, r2 = self._real_offsets(pts)
        ex = np.exp(-r2 / (4 * s)) / (2 * np.pi)
        # d/dz of -(1/2pi) e^{-u} d / r^2 with u = r^2/(4s)
        a1 = -ex / r2
        a2 = ex * (2 / r2**2 + 1 / (2 * s * r2))
        hxx = hxx + np.sum(a1 + a2 * dx * dx, axis=1)
        hxy = hxy + np.sum(a2 * dx * dy, axis=1)
        hyy = hyy + np.sum(a1 + a2 * dy * dy, axis=1)
        hess = np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)
        return hess.reshape(shape + (2, 2)) if shape else hess[0]


@lru_cache(maxsize=64)
def theta_green(geom: TorusGeometry) -> ThetaGreen:
    return ThetaGreen(geom)


def green(z, geom: TorusGeometry) -> GreenValue:
    """Value, gradient and Hessian of the zero-mean Green's function at one point."""
    return theta_green(geom).evaluate(z)


def green_regular(z, geom: TorusGeometry):
    return theta_green(geom).regular(z)


def robin_constant(geom: TorusGeometry, tol: float = 1e-10) -> float:
    """``lim_{z->0} G(z) + log|z|/(2 pi)`` by Richardson extrapolation in ``r^2``.

    The regular part is even, so its expansion along a ray contains only even
    powers of the radius.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    g = theta_green(geom)
    direction = np.array([np.cos(0.3), np.sin(0.3)])
    radii = geom.min_side * 0.05 * 0.5 ** np.arange(7)
    vals = np.array([g.value(r * direction) + np.log(r) / (2 * np.pi) for r in radii])
    h = radii**2
    table = [vals.copy()]
    for k in range(1, len(vals)):
        prev = table[-1]
        cur = (h[k:] * prev[:-1] - h[:-k] * prev[1:]) / (h[k:] - h[:-k])
        table.append(cur)
    best = table[-1][0]
    spread = abs(table[-1][0] - table[-2][-1])
    if spread > tol:
        raise TruncationFailure(f"Richardson disagreement {spread:.3e} exceeds tol={tol}")
    return float(best)


@dataclass(frozen=True)
class CriticalPointReport:
    name: str
    point: tuple
    value: float
    grad_norm: float
    hess_det: float
    kind: str

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def half_period_criticality(geom: TorusGeometry) -> list[CriticalPointReport]:
    g = theta_green(geom)
    out = []
    for name, p in geom.half_periods.items():
        gv = g.evaluate(p)
        det = float(np.linalg.det(gv.hessian))
        tr = float(np.trace(gv.hessian))
        if det < 0:
            kind = "saddle"
        elif tr > 0:
            kind = "minimum"
        else:
            kind = "maximum"
        out.append(
            CriticalPointReport(
                name, tuple(map(float, p)), gv.value, float(np.linalg.norm(gv.gradient)), det, kind
            )
        )
    return out
