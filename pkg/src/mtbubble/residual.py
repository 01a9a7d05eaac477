"""Residual of the ansatz, the weighted star-norm and the approximate kernel.

Every pointwise quantity near a bubble is formed as ``scaled value`` times
``exp(log_scale)`` so that ``e^{U}`` (up to ``exp(1/lambda)``) never has to
be represented.  Ratios such as ``R / rho`` are taken between scaled values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.linalg import subspace_angles
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, LinearOperator, eigsh
from scipy.stats import qmc

from .ansatz import AnsatzField, BubbleParams, Cutoff, assemble_ansatz, close_parameters, log_bubble_density
from .errors import EigensolverFailure, GridTooCoarse, QuadratureFailure
from .lattice import TorusGeometry, reduce_to_fundamental
from .quadrature import MultiscaleQuadrature
from .reduced import Configuration
from .spectral import PeriodicGrid

DELTA_CONST = 10.0
MIN_SHELLS = 32
REGIMES = ("core", "log-annulus", "sqrt-annulus", "far")


# ---------------------------------------------------------------------------
# weight profile


@dataclass(frozen=True)
class WeightProfile:
    """``rho = 1 + sum_j 1_{B_r0(xi_j)} rho_j`` with the two-scale ``rho_j``."""

    params: BubbleParams
    delta_const: float = DELTA_CONST

    def log_inner_radius(self, j: int) -> float:
        """``log(delta_const * eps |log eps|^2)``: end of the core regime."""
        le = float(self.params.log_eps[j])
        return float(np.log(self.delta_const) + le + 2 * np.log(abs(le)))

    def log_sqrt_radius(self, j: int) -> float:
        """``log(delta_const * sqrt(eps))``."""
        return float(np.log(self.delta_const) + 0.5 * self.params.log_eps[j])

    def log_rho_j(self, j: int, logr) -> np.ndarray:
        p = self.params
        logr = np.asarray(logr, float)
        cut = Cutoff(p.r0)
        logD = self.log_inner_radius(j)
        logU = log_bubble_density(logr, float(p.log_delta[j]))
        w = logU + 2 * float(p.log_eps[j])
        with np.errstate(over="ignore", divide="ignore"):
            s = np.exp(logr - logD)
            c1 = cut(p.r0 * s)
            c2 = 1.0 - cut(2 * p.r0 * s)
            t1 = np.log(c1) + np.log1p(np.abs(w) + w * w) + logU
            inner = np.logaddexp(np.log1p(np.abs(logr)) + p.lam * p.m[j] ** 2 * w * w, -np.log(p.lam))
            t2 = np.log(c2) + inner + logU
        return np.logaddexp(t1, t2)

    def log_rho_local(self, j: int, logr) -> np.ndarray:
        """``log rho`` at ``xi_j + exp(logr) u``; the other balls are disjoint from ``B_{2 r0}(xi_j)``."""
        logr = np.asarray(logr, float)
        inside = logr < np.log(self.params.r0)
        out = np.zeros_like(logr)
        out[inside] = np.logaddexp(0.0, self.log_rho_j(j, logr[inside]))
        return out

    def log_rho(self, x) -> np.ndarray:
        p = self.params
        x = np.asarray(x, float).reshape(-1, 2)
        out = np.zeros(len(x))
        for j in range(p.k):
            y = reduce_to_fundamental(x - p.centers[j], p.geom)
            r = np.hypot(y[:, 0], y[:, 1])
            inside = r < p.r0
            with np.errstate(divide="ignore"):
                out[inside] = np.logaddexp(out[inside], self.log_rho_j(j, np.log(r[inside])))
        return out


# ---------------------------------------------------------------------------
# sample cloud


@dataclass
class SampleCloud:
    """Structured evaluation points: log-spaced shells per bubble and regime, plus far-field nodes."""

    centers: np.ndarray
    shells: list  # per bubble: list of (regime, logr array)
    directions: np.ndarray
    far: np.ndarray

    def local_points(self):
        """Yield ``(j, regime, logr, u)`` with one row per sample."""
        nd = len(self.directions)
        for j, regs in enumerate(self.shells):
            for name, lr in regs:
                yield j, name, np.repeat(lr, nd), np.tile(self.directions, (len(lr), 1))

    @property
    def size(self) -> int:
        n = len(self.far)
        for regs in self.shells:
            n += sum(len(lr) for _, lr in regs) * len(self.directions)
        return n


def build_cloud(
    profile: WeightProfile, shells: int = 48, n_dir: int = 16, n_far: int = 4096, seed: int = 0
) -> SampleCloud:
    if shells < MIN_SHELLS:
        raise ValueError(f"need at least {MIN_SHELLS} shells per regime")
    p = profile.params
    lr0 = np.log(p.r0)
    per = []
    for j in range(p.k):
        ld = float(p.log_delta[j])
        edges = [ld + np.log(1e-3), profile.log_inner_radius(j), profile.log_sqrt_radius(j), lr0]
        regs = []
        for name, lo, hi in zip(REGIMES[:3], edges[:-1], edges[1:]):
            if hi - lo <= 1e-9:
                continue  # regime empty at this lambda
            regs.append((name, np.linspace(lo, hi, shells, endpoint=name != "sqrt-annulus")))
        per.append(regs)
    th = 2 * np.pi * (np.arange(n_dir) + 0.5) / n_dir
    dirs = np.stack([np.cos(th), np.sin(th)], -1)
    g = p.geom
    sob = qmc.Sobol(2, scramble=True, seed=seed).random(n_far) * [g.a, g.b]
    keep = np.ones(len(sob), bool)
    for c in p.centers:
        d = reduce_to_fundamental(sob - c, g)
        keep &= np.hypot(d[:, 0], d[:, 1]) >= p.r0
    return SampleCloud(p.centers.copy(), per, dirs, sob[keep])


# ---------------------------------------------------------------------------
# residual and moments


@dataclass(frozen=True)
class MomentIntegrals:
    """``lambda int V e^{lambda V^2}``, ``int e^{lambda V^2}``, ``-int V Lap V`` and their targets."""

    lam: float
    moment_v: float
    moment_e: float
    dirichlet: float
    target_v: float
    target_e: float

    @property
    def energy(self) -> float:
        """``J(U) = (lambda/2)(int |grad V|^2 - int e^{lambda V^2})``."""
        return 0.5 * self.lam * (self.dirichlet - self.moment_e)

    @property
    def error_v(self) -> float:
        return self.moment_v - self.target_v

    @property
    def error_e(self) -> float:
        return self.moment_e - self.target_e


def ansatz_quadrature(ansatz: AnsatzField, grid_n: int = 256, **kw) -> MultiscaleQuadrature:
    p = ansatz.params
    return MultiscaleQuadrature(p.geom, p.centers, p.r0, p.log_delta, grid_n=grid_n, **kw)


def moment_integrals(ansatz: AnsatzField, quad: MultiscaleQuadrature | None = None) -> MomentIntegrals:
    p = ansatz.params
    lam = p.lam
    quad = ansatz_quadrature(ansatz) if quad is None else quad
    acc = {"v": 0.0, "e": 0.0, "d": 0.0}
    with np.errstate(over="raise"):
        try:
            for pt in quad.patches:
                V, logd = ansatz.log_fields_local(pt.j, pt.logr, pt.u)
                ew = np.exp(lam * V * V + pt.logw)
                acc["e"] += float(np.sum(ew))
                acc["v"] += float(np.sum(lam * V * ew))
                mass_term = np.sum(p.m * ansatz.mass) / p.geom.area
                dens = np.exp(logd + pt.logw)
                acc["d"] += float(np.sum(V * (p.m @ dens)) - np.sum(V * np.exp(pt.logw)) * mass_term)
            x, w = quad.global_nodes.x, quad.global_nodes.w
            V, logd = ansatz.log_fields(x)
            e = np.exp(lam * V * V)
            acc["e"] += float(np.sum(e * w))
            acc["v"] += float(np.sum(lam * V * e * w))
            lap = -(p.m @ (np.exp(logd) - ansatz.mass[:, None] / p.geom.area))
            acc["d"] += float(np.sum(-V * lap * w))
        except FloatingPointError as exc:
            raise QuadratureFailure(f"moment integrand overflowed at lambda={lam:g}") from exc
    return MomentIntegrals(
        lam=lam,
        moment_v=acc["v"],
        moment_e=acc["e"],
        dirichlet=acc["d"],
        target_v=8 * np.pi * float(np.sum(p.m)),
        target_e=16 * np.pi * float(np.sum(p.m**2)) + p.geom.area,
    )


def _scaled_terms(ansatz: AnsatzField, V, logd, lam_mean: float):
    """``(s, R e^{-s}, (f'(V) - K) e^{-s})`` with ``s`` the log of the largest term."""
    p = ansatz.params
    lam = p.lam
    q = lam * V * V
    s = np.maximum(0.0, np.max(logd, axis=0))
    s = np.maximum(s, q + np.log1p(lam * np.abs(V)) + np.log1p(2 * q))
    es = np.exp(-s)
    dens = np.exp(logd - s)
    lapV = -(p.m @ dens) + np.sum(p.m * ansatz.mass) / p.geom.area * es
    fv = np.exp(q - s)
    R = lapV + lam * V * fv - lam_mean * es
    gap = lam * fv * (1 + 2 * q) - dens.sum(axis=0)
    return s, R, gap


@dataclass
class ResidualReport:
    lam: float
    star_norm: float
    argmax_regime: str
    regime_sups: dict
    gap_norm: float
    sup_norm: float
    moments: MomentIntegrals
    delta_const: float
    samples: dict = field(default_factory=dict, repr=False)

    def as_dict(self) -> dict:
        m = self.moments
        return {
            "lambda": self.lam,
            "star_norm": self.star_norm,
            "star_norm_over_lambda": self.star_norm / self.lam,
            "argmax_regime": self.argmax_regime,
            "regime_sups": dict(self.regime_sups),
            "gap_norm": self.gap_norm,
            "sup_norm": self.sup_norm,
            "moment_v": m.moment_v,
            "moment_v_target": m.target_v,
            "moment_e": m.moment_e,
            "moment_e_target": m.target_e,
            "ansatz_energy": m.energy,
            "delta_const": self.delta_const,
        }


def star_norm(values, log_rho, regimes=None) -> tuple[float, str | None]:
    """``sup |values| / rho`` over samples; also the regime label of the maximiser."""
    r = np.abs(np.asarray(values, float)) * np.exp(-np.asarray(log_rho, float))
    i = int(np.argmax(r))
    return float(r[i]), (None if regimes is None else regimes[i])


def residual_field(x, ansatz: AnsatzField, mean_term: float) -> np.ndarray:
    """``R(x) = Lap V + lambda (V e^{lambda V^2} - mean_term / |T|)`` at absolute points.

    ``mean_term`` is ``int V e^{lambda V^2}``; use :func:`moment_integrals`.
    Values may overflow to ``inf`` at the cores of very thin bubbles; use
    :func:`residual_report` for scaled evaluation.
    """
    p = ansatz.params
    V, logd = ansatz.log_fields(x)
    s, R, _ = _scaled_terms(ansatz, V, logd, p.lam * mean_term / p.geom.area)
    with np.errstate(over="ignore"):
        return R * np.exp(s)


def residual_report(
    ansatz: AnsatzField,
    profile: WeightProfile | None = None,
    cloud: SampleCloud | None = None,
    quad: MultiscaleQuadrature | None = None,
    keep_samples: bool = False,
) -> ResidualReport:
    p = ansatz.params
    profile = WeightProfile(p) if profile is None else profile
    cloud = build_cloud(profile) if cloud is None else cloud
    mom = moment_integrals(ansatz, quad)
    lam_mean = p.lam * (mom.moment_v / p.lam) / p.geom.area
    sups = {}
    gsup = 0.0
    plain = 0.0
    samples = {}

    def record(name, s, R, gap, logrho):
        nonlocal gsup, plain
        rr = np.abs(R) * np.exp(s - logrho)
        gg = np.abs(gap) * np.exp(s - logrho)
        sups[name] = max(sups.get(name, 0.0), float(rr.max()))
        gsup = max(gsup, float(gg.max()))
        with np.errstate(over="ignore"):
            plain = max(plain, float(np.max(np.abs(R) * np.exp(s))))
        if keep_samples:
            samples.setdefault(name, []).append(rr)

    for j, name, lr, u in cloud.local_points():
        V, logd = ansatz.log_fields_local(j, lr, u)
        s, R, gap = _scaled_terms(ansatz, V, logd, lam_mean)
        record(name, s, R, gap, profile.log_rho_local(j, lr))
    if len(cloud.far):
        V, logd = ansatz.log_fields(cloud.far)
        s, R, gap = _scaled_terms(ansatz, V, logd, lam_mean)
        record("far", s, R, gap, profile.log_rho(cloud.far))
    best = max(sups, key=sups.get)
    return ResidualReport(
        lam=p.lam,
        star_norm=sups[best],
        argmax_regime=best,
        regime_sups=sups,
        gap_norm=gsup,
        sup_norm=plain,
        moments=mom,
        delta_const=profile.delta_const,
        samples={k: np.concatenate(v) for k, v in samples.items()},
    )


def linearization_gap(ansatz: AnsatzField, profile: WeightProfile | None = None, cloud=None) -> float:
    """``||f'(V) - K||_*`` on the sample cloud."""
    return residual_report(ansatz, profile, cloud).gap_norm


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    ci_low: float
    ci_high: float

    def as_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "ci": [self.ci_low, self.ci_high]}


def loglog_fit(x, y, level: float = 0.95) -> SlopeFit:
    lx, ly = np.log(np.asarray(x, float)), np.log(np.abs(np.asarray(y, float)))
    res = stats.linregress(lx, ly)
    n = len(lx)
    half = stats.t.ppf(0.5 + level / 2, max(n - 2, 1)) * res.stderr if n > 2 else np.inf
    return SlopeFit(float(res.slope), float(res.intercept), float(res.slope - half), float(res.slope + half))


@dataclass
class ResidualSweep:
    reports: list
    fit: SlopeFit

    @property
    def lams(self) -> np.ndarray:
        return np.array([r.lam for r in self.reports])

    @property
    def star_norms(self) -> np.ndarray:
        return np.array([r.star_norm for r in self.reports])

    def as_dict(self) -> dict:
        return {"reports": [r.as_dict() for r in self.reports], "fit": self.fit.as_dict()}


def residual_sweep(
    config: Configuration,
    geom: TorusGeometry,
    lams,
    delta_const: float = DELTA_CONST,
    mode: str = "expansion",
    grid_n: int = 256,
    seed: int = 0,
    shells: int = 48,
) -> ResidualSweep:
    reports = []
    for lam in lams:
        params = close_parameters(config, float(lam), geom)
        ans = assemble_ansatz(params, mode, grid_n)
        prof = WeightProfile(params, delta_const)
        reports.append(residual_report(ans, prof, build_cloud(prof, shells=shells, seed=seed)))
    fit = loglog_fit([r.lam for r in reports], [r.star_norm for r in reports])
    return ResidualSweep(reports, fit)


# ---------------------------------------------------------------------------
# approximate kernel


def kernel_profiles(y, log_delta: float) -> np.ndarray:
    """``Z_0, Z_1, Z_2`` at offsets ``y`` (last axis 2): the bubble's dilation and translation modes."""
    y = np.asarray(y, float)
    d = np.exp(log_delta)
    r2 = np.sum(y * y, axis=-1)
    den = d * d + r2
    return np.stack([2 * (d * d - r2) / den, 4 * d * y[..., 0] / den, 4 * d * y[..., 1] / den])


@dataclass
class KernelFields:
    grid: PeriodicGrid
    Z: np.ndarray  # (3, nx, ny)
    PZ: np.ndarray  # (3, nx, ny), mean zero
    source: np.ndarray  # chi e^U Z = -Lap PZ + mean

    def gram(self) -> np.ndarray:
        """``int Lap PZ_a . PZ_b``."""
        g = self.grid
        n = len(self.PZ)
        out = np.empty((n, n))
        for a in range(n):
            for b in range(n):
                out[a, b] = -g.dirichlet_product(self.PZ[a], self.PZ[b])
        return out


def kernel_fields(j: int, params: BubbleParams, n: int = 256) -> KernelFields:
    grid = PeriodicGrid(params.geom, n)
    ld = float(params.log_delta[j])
    if 2 * np.exp(ld) / grid.spacing < 4:
        raise GridTooCoarse(f"delta={np.exp(ld):.3g} is not resolved by an {n}-point grid")
    y = reduce_to_fundamental(grid.nodes() - params.centers[j], params.geom)
    r = np.hypot(y[..., 0], y[..., 1])
    with np.errstate(divide="ignore"):
        eU = params.cutoff(r) * np.exp(log_bubble_density(np.log(r), ld))
    Z = kernel_profiles(y, ld)
    src = eU[None] * Z
    PZ = np.stack([grid.solve_poisson(s) for s in src])
    return KernelFields(grid, Z, PZ, src)


@dataclass
class SpectrumReport:
    metric: str
    eigenvalues: np.ndarray  # sorted by magnitude
    near_kernel: int
    threshold: float
    gap_ratio: float
    principal_angles_deg: np.ndarray
    excluded: list

    def as_dict(self) -> dict:
        return {
            "metric": self.metric,
            "eigenvalues": self.eigenvalues.tolist(),
            "near_kernel": self.near_kernel,
            "threshold": self.threshold,
            "gap_ratio": self.gap_ratio,
            "principal_angles_deg": self.principal_angles_deg.tolist(),
            "excluded": self.excluded,
        }


def _potential(params: BubbleParams, grid: PeriodicGrid) -> np.ndarray:
    K = np.zeros(grid.shape)
    for j in range(params.k):
        y = reduce_to_fundamental(grid.nodes() - params.centers[j], params.geom)
        r = np.hypot(y[..., 0], y[..., 1])
        with np.errstate(divide="ignore"):
            K += params.cutoff(r) * np.exp(log_bubble_density(np.log(r), float(params.log_delta[j])))
    return K


def near_kernel_spectrum(
    params: BubbleParams, n: int = 256, metric: str = "dirichlet", threshold: float = 1 / 3, tol: float = 1e-10
) -> SpectrumReport:
    """Eigenvalues of ``L = Lap + K - mean(K .)`` on mean-zero fields closest to zero.

    ``dirichlet``: ``L phi = sigma (-Lap) phi``, i.e. the symmetric operator
    ``-I + (-Lap)^{-1/2} K (-Lap)^{-1/2}``; its essential part sits at ``-1``
    and the near-kernel is read off relative to that unit scale.
    ``l2``: the plain operator ``P (Lap + K) P``; far slower and dominated by
    the Laplacian's own spectrum.
    """
    k = params.k
    grid = PeriodicGrid(params.geom, n)
    for j in range(k):
        if 2 * params.delta[j] / grid.spacing < 4:
            raise GridTooCoarse(f"delta={params.delta[j]:.3g} is not resolved by an {n}-point grid")
    K = _potential(params, grid)
    N = n * n
    nev = 3 * k + 3
    excluded = []
    if metric == "dirichlet":
        half = grid.inverse_sqrt_neg_laplacian

        def mv(v):
            f = half(v.reshape(grid.shape))
            g = K * f
            return (-v.reshape(grid.shape) + half(g - g.mean())).ravel()

        op = LinearOperator((N, N), matvec=mv, dtype=float)
        # the log-capacity mode lies far above zero; ask for one extra
        try:
            w, vec = eigsh(op, k=nev + 1, which="LA", tol=tol)
        except (ArpackError, ArpackNoConvergence) as exc:
            raise EigensolverFailure(str(exc)) from exc
        phis = np.stack([half(vec[:, i].reshape(grid.shape)) for i in range(len(w))])
    elif metric == "l2":

        def mv(v):
            f = v.reshape(grid.shape)
            f = f - f.mean()
            out = grid.laplacian(f) + K * f
            return (out - out.mean()).ravel()

        op = LinearOperator((N, N), matvec=mv, dtype=float)
        try:
            w, vec = eigsh(op, k=nev + 2, which="LA", tol=tol)
        except (ArpackError, ArpackNoConvergence) as exc:
            raise EigensolverFailure(str(exc)) from exc
        # the constant direction is annihilated by the projection
        const = np.abs(vec.mean(axis=0)) * np.sqrt(N) > 0.5
        excluded = [float(x) for x in w[const]]
        w, vec = w[~const], vec[:, ~const]
        phis = np.stack([vec[:, i].reshape(grid.shape) for i in range(len(w))])
    else:
        raise ValueError(f"unknown metric {metric!r}")
    order = np.argsort(np.abs(w))
    w = w[order][:nev]
    phis = phis[order][:nev]
    near = int(np.sum(np.abs(w) < threshold))
    m = 3 * k
    gap = float(np.abs(w[m]) / np.max(np.abs(w[:m]))) if len(w) > m else float("nan")
    # principal angles between the 3k leading eigenfunctions and span{PZ}
    pz = np.concatenate([kernel_fields(j, params, n).PZ for j in range(k)])
    if metric == "dirichlet":
        sq = lambda f: np.real(np.fft.ifft2(np.sqrt(grid._k2) * np.fft.fft2(f)))  # noqa: E731
        A = np.stack([sq(f).ravel() for f in phis[:m]], 1)
        B = np.stack([sq(f).ravel() for f in pz], 1)
    else:
        A = np.stack([f.ravel() for f in phis[:m]], 1)
        B = np.stack([f.ravel() for f in pz], 1)
    ang = np.degrees(subspace_angles(A, B))
    return SpectrumReport(metric, w, near, threshold, gap, np.sort(ang), excluded)
