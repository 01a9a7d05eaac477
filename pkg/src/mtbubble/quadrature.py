"""Multiscale quadrature on the torus.

The torus is split by a smooth partition of unity.  Around each centre a
bump ``phi_j`` (1 on ``B_{r0}``, 0 outside ``B_{2 r0}``) carries the
integrand onto polar nodes whose radial panels are geometric in ``log r``,
so scales from ``1e-3 * delta`` up to ``r0`` are resolved alike.  The
remainder ``1 - sum phi_j`` is smooth and vanishes near every centre, so
the periodic trapezoid rule on a uniform grid handles it spectrally.

Weights are stored as logarithms because the bubble scale can lie far below
the smallest normal double.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import TorusGeometry, reduce_to_fundamental


def smooth_bump(r, r0: float) -> np.ndarray:
    """C-infinity radial bump: 1 on ``[0, r0]``, 0 on ``[2 r0, inf)``."""
    r = np.asarray(r, dtype=float)
    t = np.clip((2 * r0 - r) / r0, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1 - t, 1.0)), 0.0)
    return a / (a + b)


@dataclass
class LocalPatch:
    """Polar nodes around centre ``j``: ``y = exp(logr) * u``."""

    j: int
    logr: np.ndarray
    u: np.ndarray
    logw: np.ndarray  # log of (area weight * bump)

    @property
    def r(self) -> np.ndarray:
        return np.exp(self.logr)

    def offsets(self) -> np.ndarray:
        return self.r[:, None] * self.u


@dataclass
class GlobalNodes:
    x: np.ndarray
    w: np.ndarray


def _gl(n: int):
    return np.polynomial.legendre.leggauss(n)


def radial_panels(log_scale: float, r0: float, inner_factor: float = 1e-3, width: float = 0.7):
    """Panel edges in ``log r`` from ``inner_factor * scale`` to ``2 r0``.

    Panels are ``width`` wide within ten units of ``log(scale)`` and of
    ``log(r0)`` and widen slowly (at most 4 units) in between, where the
    integrands are smooth functions of ``log r``.
    """
    lo = min(log_scale + np.log(inner_factor), np.log(0.5 * r0))
    hi = np.log(r0)
    edges = [lo]
    x = lo
    while x < hi:
        dist = min(abs(x - log_scale), abs(hi - x))
        step = width if dist < 10 else min(4.0, width + 0.1 * (dist - 10))
        x = min(hi, x + step)
        if hi - x < 0.25 * width:
            x = hi
        edges.append(x)
    outer = np.log(r0 * np.array([1.25, 1.5, 1.75, 2.0]))
    return lo, np.concatenate([edges, outer])


class MultiscaleQuadrature:
    def __init__(
        self,
        geom: TorusGeometry,
        centers,
        r0: float,
        log_scales,
        grid_n: int = 256,
        n_gl: int = 16,
        n_theta: int = 64,
        width: float = 0.7,
    ):
        self.geom = geom
        self.centers = np.atleast_2d(np.asarray(centers, float))
        self.r0 = r0
        self.log_scales = np.atleast_1d(np.asarray(log_scales, float))
        self.grid_n = grid_n
        xg, wg = _gl(n_gl)
        self.patches: list[LocalPatch] = []
        for j in range(len(self.centers)):
            inner_log, edges = radial_panels(self.log_scales[j], r0, width=width)
            lr, lw = [], []
            # inner disk, Gauss-Legendre in r: weight r dr
            log_rin = inner_log + np.log(0.5 * (xg + 1))
            lr.append(log_rin)
            lw.append(log_rin + inner_log + np.log(0.5 * wg))
            # log panels: weight r^2 dlog r
            for a, b in zip(edges[:-1], edges[1:]):
                s = 0.5 * (b - a) * xg + 0.5 * (a + b)
                lr.append(s)
                lw.append(2 * s + np.log(0.5 * (b - a) * wg))
            logr = np.concatenate(lr)
            logw_r = np.concatenate(lw)
            with np.errstate(divide="ignore"):
                logw_r = logw_r + np.log(smooth_bump(np.exp(logr), r0))
            # angular dependence is weak deep inside the patch
            deep = logr < np.log(1e-3 * r0)
            parts_r, parts_u, parts_w = [], [], []
            for mask, nt in ((deep, max(8, n_theta // 8)), (~deep, n_theta)):
                th = (np.arange(nt) + 0.5) * 2 * np.pi / nt
                ring = np.stack([np.cos(th), np.sin(th)], -1)
                nr = int(mask.sum())
                parts_r.append(np.repeat(logr[mask], nt))
                parts_u.append(np.tile(ring, (nr, 1)))
                parts_w.append(np.repeat(logw_r[mask], nt) + np.log(2 * np.pi / nt))
            self.patches.append(
                LocalPatch(j, np.concatenate(parts_r), np.concatenate(parts_u), np.concatenate(parts_w))
            )
        # global remainder
        h = np.array([geom.a / grid_n, geom.b / grid_n])
        X, Y = np.meshgrid(np.arange(grid_n) * h[0], np.arange(grid_n) * h[1], indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], -1)
        rest = np.ones(len(pts))
        for c in self.centers:
            d = reduce_to_fundamental(pts - c, geom)
            rest -= smooth_bump(np.hypot(d[:, 0], d[:, 1]), r0)
        keep = rest > 0
        self.global_nodes = GlobalNodes(pts[keep], rest[keep] * h[0] * h[1])

    def integrate(self, local_fn, global_fn) -> float:
        """``local_fn(patch) -> contributions`` (already weighted); ``global_fn(x) -> values``."""
        total = 0.0
        for p in self.patches:
            total += float(np.sum(local_fn(p)))
        g = self.global_nodes
        total += float(np.sum(global_fn(g.x) * g.w))
        return total

    def integrate_plain(self, fn_abs) -> float:
        """Integrate a function of absolute position that is moderate everywhere."""

        def loc(p):
            x = self.centers[p.j] + p.offsets()
            return fn_abs(x) * np.exp(p.logw)

        return self.integrate(loc, fn_abs)
