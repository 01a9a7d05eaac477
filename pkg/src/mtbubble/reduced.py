"""Reduced energy psi_k, the two-bubble weight system and the family catalog."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import SeparationViolation
from .lattice import (
    SINGULAR_RADIUS,
    TorusGeometry,
    half_period_values,
    reduce_to_fundamental,
    robin_constant,
    tau_thresholds,
    theta_green,
)

LOG16_MINUS_2 = np.log(16.0) - 2.0
NONDEGENERACY_TOL = 1e-8
SCAN_NODES = 2000


@dataclass(frozen=True)
class Configuration:
    points: np.ndarray  # (k, 2)
    weights: np.ndarray  # (k,)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if pts.shape[1] != 2 or pts.shape[0] != w.shape[0]:
            raise ValueError("points must be (k, 2) and weights (k,)")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def k(self) -> int:
        return len(self.weights)

    def validate(self, geom: TorusGeometry, separation: float | None = None, delta0: float | None = None):
        floor = SINGULAR_RADIUS * geom.min_side if separation is None else separation
        for i in range(self.k):
            for j in range(i + 1, self.k):
                d = reduce_to_fundamental(self.points[i] - self.points[j], geom)
                if np.hypot(*d) < floor:
                    raise SeparationViolation(
                        f"points {i} and {j} are {np.hypot(*d):.3e} apart (floor {floor:.3e})"
                    )
        if delta0 is not None and np.any((self.weights < delta0) | (self.weights > 1 / delta0)):
            raise ValueError(f"weights outside [{delta0}, {1 / delta0}]")

    def flat(self) -> np.ndarray:
        return np.concatenate([self.points.ravel(), self.weights])

    @classmethod
    def from_flat(cls, x, k: int) -> "Configuration":
        x = np.asarray(x, float)
        return cls(x[: 2 * k].reshape(k, 2), x[2 * k :])


# ---------------------------------------------------------------------------
# psi_k and derivatives.  Variable order: xi flattened (2k entries), then m.


def _pair_data(config: Configuration, geom: TorusGeometry, need: str):
    g = theta_green(geom)
    config.validate(geom)
    k = config.k
    diffs = config.points[:, None, :] - config.points[None, :, :]
    iu = ~np.eye(k, dtype=bool)
    G = np.zeros((k, k))
    grad = np.zeros((k, k, 2))
    hess = np.zeros((k, k, 2, 2))
    if k > 1:
        G[iu] = g.value(diffs[iu])
        if need in ("grad", "hess"):
            grad[iu] = g.gradient(diffs[iu])
        if need == "hess":
            hess[iu] = g.hessian(diffs[iu])
    return g.robin, G, grad, hess


def psi_k(config: Configuration, geom: TorusGeometry) -> float:
    H, G, _, _ = _pair_data(config, geom, "value")
    m = config.weights
    m2 = m * m
    return float(
        LOG16_MINUS_2 * m2.sum()
        + np.sum(m2 * np.log(m2))
        - 4 * np.pi * H * m2.sum()
        - 4 * np.pi * m @ G @ m
    )


def grad_psi_k(config: Configuration, geom: TorusGeometry) -> np.ndarray:
    H, G, dG, _ = _pair_data(config, geom, "grad")
    m = config.weights
    k = config.k
    gxi = -8 * np.pi * m[:, None] * np.einsum("j,ijc->ic", m, dG)
    gm = 2 * LOG16_MINUS_2 * m + 2 * m * np.log(m * m) + 2 * m - 8 * np.pi * H * m
    gm = gm - 8 * np.pi * G @ m
    return np.concatenate([gxi.reshape(2 * k), gm])


def hess_psi_k(config: Configuration, geom: TorusGeometry) -> np.ndarray:
    H, G, dG, d2G = _pair_data(config, geom, "hess")
    m = config.weights
    k = config.k
    n = 3 * k
    out = np.zeros((n, n))
    for i in range(k):
        si = slice(2 * i, 2 * i + 2)
        blk = np.zeros((2, 2))
        for j in range(k):
            if j == i:
                continue
            sj = slice(2 * j, 2 * j + 2)
            blk -= 8 * np.pi * m[i] * m[j] * d2G[i, j]
            out[si, sj] = 8 * np.pi * m[i] * m[j] * d2G[i, j]
            # mixed xi_i / m_j
            out[si, 2 * k + j] = -8 * np.pi * m[i] * dG[i, j]
        out[si, si] = blk
        out[si, 2 * k + i] = -8 * np.pi * np.einsum("j,jc->c", m, dG[i])
    mm = -8 * np.pi * G
    mm[np.diag_indices(k)] = (
        2 * LOG16_MINUS_2 + 2 * np.log(m * m) + 6 - 8 * np.pi * H
    )
    out[2 * k :, 2 * k :] = mm
    out[2 * k :, : 2 * k] = out[: 2 * k, 2 * k :].T
    return out


# ---------------------------------------------------------------------------
# two-bubble weight system


@dataclass(frozen=True)
class WeightSystemParams:
    A: float
    B: float

    @classmethod
    def from_geometry(cls, geom: TorusGeometry, z) -> "WeightSystemParams":
        return cls(weight_constant_A(geom), 4 * np.pi * float(theta_green(geom).value(z)))


def weight_constant_A(geom: TorusGeometry, tol: float = 1e-10) -> float:
    """``A = log 16 - 2 - 4 pi H`` (the value that makes the m-gradient of psi_2 match)."""
    return float(LOG16_MINUS_2 - 4 * np.pi * robin_constant(geom, tol))


def f0_map(t, A: float, B: float):
    t = np.asarray(t, dtype=float)
    return ((A + 1) * t + 2 * t * np.log(t)) / B


def weight_gradient(m1, m2, A, B) -> np.ndarray:
    """m-gradient of psi_2 written with A and B = 4 pi G."""
    return np.array(
        [
            2 * (A + 1) * m1 + 4 * m1 * np.log(m1) - 2 * B * m2,
            2 * (A + 1) * m2 + 4 * m2 * np.log(m2) - 2 * B * m1,
        ]
    )


def weight_hessian(m1, m2, A, B) -> np.ndarray:
    return np.array(
        [[2 * (A + 1) + 4 * np.log(m1) + 4, -2 * B], [-2 * B, 2 * (A + 1) + 4 * np.log(m2) + 4]]
    )


def hessian_det_weights(m1: float, m2: float, Gval: float) -> float:
    return float(32 * np.pi * (m2 / m1 + m1 / m2) * Gval + 16)


def degeneracy_condition(m1: float, m2: float, Gval: float) -> float:
    """Zero exactly when ``2 pi (m2/m1 + m1/m2) G = -1``."""
    return float(2 * np.pi * (m2 / m1 + m1 / m2) * Gval + 1)


def degeneracy_margin(B):
    B = np.asarray(B, dtype=float)
    if np.any((B < -1) | (B > 0)):
        raise ValueError("degeneracy_margin is defined for -1 <= B <= 0")
    r = np.sqrt(1 - B * B)
    out = B * np.exp(r) + r + 1
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class WeightBranch:
    kind: str  # diagonal | pair | pair_swapped
    m1: float
    m2: float
    hessdet: float
    nondegenerate: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _scaled_map(B: float):
    return lambda s: (2.0 / B) * s * np.log(s)


def _pair_roots_scaled(B: float, tol: float) -> list[tuple[float, float]]:
    """Two-cycles of ``h(s) = (2/B) s log s`` other than the fixed point ``e^{B/2}``."""
    h = _scaled_map(B)
    s0 = np.exp(B / 2)

    def g(s):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return h(h(s)) - s

    def q(s):
        if s == s0:
            return (1 + 2 / B) ** 2 - 1
        return g(s) / (s - s0)

    if B < 0:
        # s in (0, 1); log-spaced in u = -log s so both ends are resolved
        u = np.logspace(-12, np.log10(700.0), SCAN_NODES)
        nodes = np.exp(-u)
    else:
        u = np.logspace(-12, np.log10(30.0), SCAN_NODES)
        nodes = np.exp(u)
    nodes = np.unique(np.append(nodes, s0))
    vals = np.array([q(s) for s in nodes])
    roots = []
    for k in range(len(nodes) - 1):
        va, vb = vals[k], vals[k + 1]
        if not (np.isfinite(va) and np.isfinite(vb)):
            continue
        if va == 0.0:
            if nodes[k] != s0:
                roots.append(nodes[k])
            continue
        if va * vb < 0:
            lo, hi = np.log(nodes[k]), np.log(nodes[k + 1])
            r = brentq(lambda x: q(np.exp(x)), lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
            roots.append(np.exp(r))
    pairs = []
    for r in roots:
        other = h(r)
        if not other > 0:
            continue
        lo, hi = sorted((r, other))
        if hi - lo <= tol:
            continue
        if not any(abs(lo - p[0]) < 1e-9 * max(1, lo) for p in pairs):
            pairs.append((lo, hi))
    return pairs


def solve_weights(A: float, B: float, tol: float = 1e-12) -> list[WeightBranch]:
    """All branches of ``(A+1) m_i + 2 m_i log m_i = B m_j`` (i != j) found by the scan."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    Gval = B / (4 * np.pi)
    m0 = float(np.exp((B - A - 1) / 2))
    hd = hessian_det_weights(m0, m0, Gval)
    out = [WeightBranch("diagonal", m0, m0, hd, abs(hd) > NONDEGENERACY_TOL)]
    if B == 0:
        return out
    c = np.exp(-(A + 1) / 2)
    for s1, s2 in _pair_roots_scaled(B, tol / c):
        m1, m2 = float(s1 * c), float(s2 * c)
        hd = hessian_det_weights(m1, m2, Gval)
        nd = abs(hd) > NONDEGENERACY_TOL
        out.append(WeightBranch("pair", m1, m2, hd, nd))
        out.append(WeightBranch("pair_swapped", m2, m1, hd, nd))
    return out


# ---------------------------------------------------------------------------
# catalog


@dataclass(frozen=True)
class PeriodEntry:
    name: str
    point: tuple
    f: float
    B: float
    branches: list
    count: int

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "point": list(self.point),
            "f": self.f,
            "B": self.B,
            "count": self.count,
            "branches": [b.as_dict() for b in self.branches],
        }


@dataclass(frozen=True)
class FamilyCatalog:
    tau: float
    A: float
    periods: list = field(default_factory=list)
    total_families: int = 0
    regime: str = "inside"
    flags: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "tau": self.tau,
            "A": self.A,
            "regime": self.regime,
            "total_families": self.total_families,
            "periods": [p.as_dict() for p in self.periods],
            "flags": list(self.flags),
        }


def family_catalog(tau: float, geom: TorusGeometry | None = None, tol: float = 1e-12) -> FamilyCatalog:
    if geom is None:
        geom = TorusGeometry.from_tau(tau)
    if abs(geom.tau - tau) > 1e-12 * max(1.0, tau):
        raise ValueError("tau does not match the geometry")
    table = half_period_values(tau)
    tau0, tau1 = tau_thresholds()
    A = weight_constant_A(geom)
    fvals = {"p1": table.f1, "p2": table.f2, "p3": table.f3}
    periods, flags = [], []
    total = 0
    for name, p in geom.half_periods.items():
        fv = fvals[name]
        B = 4 * np.pi * fv
        branches = solve_weights(A, B, tol)
        count = len(branches)
        if fv < 0 and B <= -1 and count != 3:
            flags.append(
                f"{name}: B={B:.6f} <= -1, measured {count} branch(es) where three pairs are asserted"
            )
        periods.append(PeriodEntry(name, tuple(map(float, p)), fv, B, branches, count))
        total += count
    regime = "inside" if tau0 < tau < tau1 else "outside"
    return FamilyCatalog(tau, A, periods, total, regime, flags)


def seeds_from_catalog(catalog: FamilyCatalog, geom: TorusGeometry) -> list[tuple[str, WeightBranch, Configuration]]:
    """Two-bubble configurations ``xi_1 = -p/2``, ``xi_2 = +p/2`` shifted to the cell centre-ish."""
    out = []
    base = np.array([geom.a / 4, geom.b / 4])
    for entry in catalog.periods:
        p = np.asarray(entry.point)
        for br in entry.branches:
            pts = np.array([base, base + p])
            out.append((entry.name, br, Configuration(pts, [br.m1, br.m2])))
    return out
