"""Periodic Fourier grid on a rectangular torus."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .lattice import TorusGeometry


@dataclass
class PeriodicGrid:
    """Nodes ``(i a / nx, j b / ny)``; arrays are indexed ``[i, j]``."""

    geom: TorusGeometry
    nx: int
    ny: int | None = None
    _k2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.ny is None:
            self.ny = self.nx
        if self.nx < 16 or self.ny < 16 or self.nx % 2 or self.ny % 2:
            raise ValueError("grid sizes must be even and at least 16")
        g = self.geom
        self.hx = g.a / self.nx
        self.hy = g.b / self.ny
        self.x = np.arange(self.nx) * self.hx
        self.y = np.arange(self.ny) * self.hy
        self.kx = 2 * np.pi * np.fft.fftfreq(self.nx, self.hx)
        self.ky = 2 * np.pi * np.fft.fftfreq(self.ny, self.hy)
        KX, KY = np.meshgrid(self.kx, self.ky, indexing="ij")
        self._kxg, self._kyg = KX, KY
        self._k2 = KX**2 + KY**2
        inv = np.zeros_like(self._k2)
        inv[self._k2 > 0] = 1.0 / self._k2[self._k2 > 0]
        self._inv_k2 = inv

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def spacing(self) -> float:
        return max(self.hx, self.hy)

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    def nodes(self) -> np.ndarray:
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def mean(self, f) -> float:
        return float(np.mean(f))

    def integrate(self, f) -> float:
        return float(np.sum(f) * self.cell_area)

    def laplacian(self, f) -> np.ndarray:
        return np.real(np.fft.ifft2(-self._k2 * np.fft.fft2(f)))

    def gradient(self, f) -> tuple[np.ndarray, np.ndarray]:
        F = np.fft.fft2(f)
        return np.real(np.fft.ifft2(1j * self._kxg * F)), np.real(np.fft.ifft2(1j * self._kyg * F))

    def solve_poisson(self, rhs) -> np.ndarray:
        """Mean-zero ``u`` with ``-Lap u = rhs - mean(rhs)``."""
        return np.real(np.fft.ifft2(self._inv_k2 * np.fft.fft2(rhs)))

    def inverse_sqrt_neg_laplacian(self, f) -> np.ndarray:
        return np.real(np.fft.ifft2(np.sqrt(self._inv_k2) * np.fft.fft2(f)))

    def dirichlet_product(self, f, g) -> float:
        """``int grad f . grad g`` computed in Fourier space."""
        F = np.fft.fft2(f)
        G = np.fft.fft2(g)
        return float(np.real(np.sum(self._k2 * F * np.conj(G))) * self.cell_area / f.size)

    def refine(self, f, factor: int = 2) -> np.ndarray:
        """Zero-padded Fourier interpolation onto a ``factor``-times finer grid."""
        nx, ny = f.shape
        F = np.fft.fftshift(np.fft.fft2(f))
        F[0, :] = 0.0  # Nyquist modes are dropped in both directions
        F[:, 0] = 0.0
        mx, my = nx * factor, ny * factor
        out = np.zeros((mx, my), dtype=complex)
        ox, oy = (mx - nx) // 2, (my - ny) // 2
        out[ox : ox + nx, oy : oy + ny] = F
        return np.real(np.fft.ifft2(np.fft.ifftshift(out))) * factor * factor

    def coarsen(self, f, factor: int = 2) -> np.ndarray:
        """Fourier truncation from a ``factor``-times finer grid back to this grid."""
        mx, my = f.shape
        nx, ny = mx // factor, my // factor
        F = np.fft.fftshift(np.fft.fft2(f))
        ox, oy = (mx - nx) // 2, (my - ny) // 2
        G = F[ox : ox + nx, oy : oy + ny].copy()
        G[0, :] = 0.0
        G[:, 0] = 0.0
        return np.real(np.fft.ifft2(np.fft.ifftshift(G))) / (factor * factor)

    def interpolator(self, f):
        """Periodic cubic interpolant of a grid field, callable on points (..., 2)."""
        xs = np.concatenate([self.x[-3:] - self.geom.a, self.x, self.x[:3] + self.geom.a])
        ys = np.concatenate([self.y[-3:] - self.geom.b, self.y, self.y[:3] + self.geom.b])
        fp = np.pad(f, 3, mode="wrap")
        rgi = RegularGridInterpolator((xs, ys), fp, method="cubic")
        per = np.array([self.geom.a, self.geom.b])

        def call(pts):
            pts = np.asarray(pts, float)
            return rgi(np.mod(pts, per).reshape(-1, 2)).reshape(pts.shape[:-1])

        return call
