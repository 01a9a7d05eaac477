"""Damped Newton-Krylov solution of ``Lap v + lambda (v e^{lambda v^2} - mean) = 0`` on a Fourier grid."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.sparse.linalg import LinearOperator, gmres

from .ansatz import RESOLVE_POINTS, AnsatzField, BubbleParams, close_parameters, project_bubble
from .errors import GridTooCoarse, LinearSolveStagnation, NoConvergence, OverflowGuard
from .lattice import TorusGeometry, reduce_to_fundamental, theta_green
from .reduced import Configuration, FamilyCatalog, WeightBranch, family_catalog, psi_k, seeds_from_catalog
from .residual import ansatz_quadrature, moment_integrals
from .spectral import PeriodicGrid

log = logging.getLogger(__name__)

EXP_LIMIT = 700.0


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 40
    max_halvings: int = 20
    gmres_rtol: float = 1e-10
    gmres_restart: int = 300
    gmres_maxiter: int = 3
    dealias: bool = True
    armijo: float = 1e-4
    # iterate and residual in long double; the k^2 in the Laplacian lifts
    # float64 rounding to ~2e-10 on a 512^2 grid
    extended: bool = True
    # above this size, seed from the refined solution on the half-size grid
    coarse_min: int = 256


@dataclass
class SolveResult:
    v: np.ndarray
    iterations: int
    residual: float
    distance_to_seed: float
    converged: bool
    history: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "distance_to_seed": self.distance_to_seed,
            "converged": self.converged,
            "history": self.history,
        }


def _nonlinearity(v, lam):
    q = lam * v * v
    top = float(q.max())
    if top > EXP_LIMIT:
        raise OverflowGuard(f"lambda v^2 reaches {top:.1f} > {EXP_LIMIT:.0f}")
    e = np.exp(q)
    return lam * v * e, lam * e * (1 + 2 * q)


def _refine_hat(vh, grid: PeriodicGrid, factor: int = 2) -> np.ndarray:
    F = sfft.fftshift(vh).copy()
    F[0, :] = 0.0
    F[:, 0] = 0.0
    nx, ny = vh.shape
    mx, my = nx * factor, ny * factor
    out = np.zeros((mx, my), dtype=vh.dtype)
    ox, oy = (mx - nx) // 2, (my - ny) // 2
    out[ox : ox + nx, oy : oy + ny] = F
    return np.real(sfft.ifft2(sfft.ifftshift(out))) * factor * factor


def _coarsen(f, factor: int = 2) -> np.ndarray:
    """Dtype-preserving counterpart of :meth:`PeriodicGrid.coarsen`."""
    mx, my = f.shape
    nx, ny = mx // factor, my // factor
    F = sfft.fftshift(sfft.fft2(f))
    ox, oy = (mx - nx) // 2, (my - ny) // 2
    G = F[ox : ox + nx, oy : oy + ny].copy()
    G[0, :] = 0.0
    G[:, 0] = 0.0
    return np.real(sfft.ifft2(sfft.ifftshift(G))) / (factor * factor)


def _residual_hat(vh, lam: float, grid: PeriodicGrid, dealias: bool) -> np.ndarray:
    """``F`` from Fourier coefficients of ``v``, in the precision of ``vh``.

    Working from coefficients keeps the Laplacian free of the rounding noise a
    physical-space copy of ``v`` carries in its highest modes, which ``k^2``
    would otherwise amplify to about ``1e-10`` on a 256^2 grid.
    """
    k2 = grid._k2.astype(vh.real.dtype)
    lap = np.real(sfft.ifft2(-k2 * vh))
    if dealias:
        f, _ = _nonlinearity(_refine_hat(vh, grid), lam)
        f = _coarsen(f)
    else:
        f, _ = _nonlinearity(np.real(sfft.ifft2(vh)), lam)
    out = lap + f
    return out - out.mean()


def nonlinear_residual(v, lam: float, grid: PeriodicGrid, dealias: bool = True) -> np.ndarray:
    """``F(v) = Lap v + lambda (v e^{lambda v^2} - mean)``; the product is formed on a 2x grid when dealiasing."""
    return _residual_hat(sfft.fft2(np.asarray(v)), lam, grid, dealias)


def jacobian(v, lam: float, grid: PeriodicGrid, dealias: bool = True):
    """Linearisation of :func:`nonlinear_residual` at ``v`` as a callable on grid fields."""
    if dealias:
        _, fp = _nonlinearity(grid.refine(v), lam)

        def apply(p):
            q = grid.coarsen(fp * grid.refine(p))
            out = grid.laplacian(p) + q
            return out - out.mean()

    else:
        _, fp = _nonlinearity(v, lam)

        def apply(p):
            q = fp * p
            out = grid.laplacian(p) + q
            return out - out.mean()

    return apply


def _rms(f) -> float:
    return float(np.sqrt(np.mean(f * f)))


def reflection(grid: PeriodicGrid, center):
    """Projector onto fields even under ``x -> 2 center - x``; ``center`` must sit on a half-node."""
    c = np.asarray(center, float)
    k = 2 * c / np.array([grid.hx, grid.hy])
    if np.any(np.abs(k - np.round(k)) > 1e-9):
        raise ValueError("reflection centre must lie on the grid or halfway between nodes")
    k = np.round(k).astype(int)
    ix = (k[0] - np.arange(grid.nx)) % grid.nx
    iy = (k[1] - np.arange(grid.ny)) % grid.ny

    def proj(f):
        return 0.5 * (f + f[np.ix_(ix, iy)])

    return proj


def newton_solve(
    seed, lam: float, grid: PeriodicGrid, cfg: SolverConfig | None = None, params: BubbleParams | None = None,
    symmetry_center=None,
) -> SolveResult:
    """Damped Newton with preconditioned GMRES on the mean-zero subspace.

    The line search backtracks on the RMS residual; convergence is declared on
    the sup-norm.  ``params``, when given, is checked for grid resolvability.
    With ``symmetry_center`` every iterate is kept even under point
    reflection about it, which removes the translation modes from the
    Jacobian's kernel.
    Raises :class:`NoConvergence` (with ``.result`` holding the last iterate).
    """
    cfg = SolverConfig() if cfg is None else cfg
    if params is not None:
        check_resolvable(params, grid)
    sym = (lambda f: f) if symmetry_center is None else reflection(grid, symmetry_center)
    seed = np.asarray(seed, float)
    seed = sym(seed - seed.mean())
    vh = sfft.fft2(seed.astype(np.longdouble if cfg.extended else float))
    vh[0, 0] = 0.0
    v = seed.copy()
    shape = grid.shape
    n = v.size
    precond = LinearOperator((n, n), matvec=lambda r: -grid.solve_poisson(r.reshape(shape)).ravel())
    hist = []
    F = _residual_hat(vh, lam, grid, cfg.dealias)
    for it in range(cfg.max_iter + 1):
        sup = float(np.abs(F).max())
        hist.append(sup)
        log.debug("newton %d sup=%.3e", it, sup)
        if sup <= cfg.tol:
            return SolveResult(v, it, sup, float(np.abs(v - seed).max()), True, hist)
        if it == cfg.max_iter:
            break
        J = jacobian(v, lam, grid, cfg.dealias)
        op = LinearOperator((n, n), matvec=lambda p: sym(J(sym(p.reshape(shape)))).ravel())
        dv, _ = gmres(
            op, -sym(F).astype(float).ravel(), M=precond, rtol=cfg.gmres_rtol, restart=cfg.gmres_restart, maxiter=cfg.gmres_maxiter
        )
        dv = sym(dv.reshape(shape))
        dv -= dv.mean()
        dvh = np.fft.fft2(dv)
        dvh[0, 0] = 0.0
        lin = _rms(J(dv) + F) / max(_rms(F), 1e-300)
        if not lin < 0.5:
            raise LinearSolveStagnation(f"GMRES reduced the linear residual only to {lin:.3g}")
        r0 = _rms(F)
        step = 1.0
        for _ in range(cfg.max_halvings + 1):
            try:
                trial = _residual_hat(vh + step * dvh, lam, grid, cfg.dealias)
                # sufficient decrease in RMS; near round-off a drop of the sup-norm also counts
                if _rms(trial) < r0 * (1 - cfg.armijo * step) or np.abs(trial).max() < 0.5 * sup:
                    break
            except OverflowGuard:
                pass
            step *= 0.5
        else:
            err = NoConvergence(f"line search failed at iteration {it}")
            err.result = SolveResult(v, it, sup, float(np.abs(v - seed).max()), False, hist)
            raise err
        vh = vh + step * dvh
        v = np.real(sfft.ifft2(vh)).astype(float)
        F = trial
    err = NoConvergence(f"no convergence in {cfg.max_iter} iterations (sup residual {hist[-1]:.3g})")
    err.result = SolveResult(v, cfg.max_iter, hist[-1], float(np.abs(v - seed).max()), False, hist)
    raise err


# ---------------------------------------------------------------------------
# seeds


def check_resolvable(params: BubbleParams, grid: PeriodicGrid) -> None:
    pts = 2 * params.delta / grid.spacing
    if np.any(pts < RESOLVE_POINTS):
        raise GridTooCoarse(
            "core diameters span " + ", ".join(f"{x:.3g}" for x in pts) + f" grid points; need >= {RESOLVE_POINTS:g}"
        )


def grid_ansatz(params: BubbleParams, n: int) -> np.ndarray:
    """``V = sum m_j P U_j`` with each projection solved directly on the grid."""
    return sum(params.m[j] * project_bubble(j, params, n, "grid") for j in range(params.k))


# ---------------------------------------------------------------------------
# energy


def energy(u, lam: float, grid: PeriodicGrid) -> float:
    """``J(u) = 1/2 int |grad u|^2 - lambda/2 int e^{u^2}``."""
    u = np.asarray(u, float)
    if float(np.max(u * u)) > EXP_LIMIT:
        raise OverflowGuard("u^2 exceeds the exponent limit")
    return 0.5 * grid.dirichlet_product(u, u) - 0.5 * lam * grid.integrate(np.exp(u * u))


@dataclass(frozen=True)
class EnergyReport:
    lam: float
    k: int
    energy: float
    prediction: float
    area: float

    @property
    def deviation(self) -> float:
        return self.energy - self.prediction

    @property
    def scaled_deviation(self) -> float:
        """Deviation over ``lambda^2 |log lambda|^2``."""
        return self.deviation / (self.lam * np.log(self.lam)) ** 2

    def as_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "k": self.k,
            "energy": self.energy,
            "prediction": self.prediction,
            "deviation": self.deviation,
            "scaled_deviation": self.scaled_deviation,
        }


def energy_prediction(lam: float, k: int, area: float, psi: float) -> float:
    return 2 * np.pi * k - 0.5 * lam * area + 8 * np.pi * lam * psi


def ansatz_energy_report(config: Configuration, lam: float, geom: TorusGeometry, grid_n: int = 256) -> EnergyReport:
    """Mesh-free ``J(U)`` of the expansion-mode ansatz against its predicted expansion."""
    params = close_parameters(config, lam, geom)
    ans = AnsatzField(params, "expansion", grid_n)
    mom = moment_integrals(ans, ansatz_quadrature(ans, grid_n))
    psi = psi_k(config, geom)
    return EnergyReport(lam, config.k, mom.energy, energy_prediction(lam, config.k, geom.area, psi), geom.area)


# ---------------------------------------------------------------------------
# far field and signatures


@dataclass(frozen=True)
class FarFieldReport:
    sup: float
    lam: float
    nodes: int
    min_distance: float

    @property
    def ratio(self) -> float:
        return self.sup / self.lam

    def as_dict(self) -> dict:
        return {"sup": self.sup, "ratio": self.ratio, "nodes": self.nodes, "min_distance": self.min_distance}


def far_field_check(v, params: BubbleParams, grid: PeriodicGrid, min_distance: float | None = None) -> FarFieldReport:
    """``sup |v - 8 pi sum m_j G(., xi_j)|`` over nodes at least ``min_distance`` (default ``4 r0``) from every centre."""
    dmin = 4 * params.r0 if min_distance is None else min_distance
    x = grid.nodes().reshape(-1, 2)
    keep = np.ones(len(x), bool)
    for c in params.centers:
        d = reduce_to_fundamental(x - c, params.geom)
        keep &= np.hypot(d[:, 0], d[:, 1]) >= dmin * (1 - 1e-12)
    if not keep.any():
        raise ValueError("no grid node lies in the requested far-field set")
    g = theta_green(params.geom)
    target = sum(8 * np.pi * params.m[j] * g.value(x[keep] - params.centers[j]) for j in range(params.k))
    sup = float(np.max(np.abs(np.asarray(v).reshape(-1)[keep] - target)))
    return FarFieldReport(sup, params.lam, int(keep.sum()), dmin)


@dataclass(frozen=True)
class Signature:
    """Translation-free description of a two-peak field."""

    offset: tuple  # second peak minus first, reduced and sign-normalised
    height_ratio: float  # lower peak over higher peak
    heights: tuple

    def as_dict(self) -> dict:
        return {"offset": list(self.offset), "height_ratio": self.height_ratio, "heights": list(self.heights)}


def _peaks(v, grid: PeriodicGrid, count: int):
    from scipy.ndimage import maximum_filter

    mx = maximum_filter(v, size=5, mode="wrap")
    idx = np.argwhere(v == mx)
    vals = v[idx[:, 0], idx[:, 1]]
    order = np.argsort(vals)[::-1][:count]
    return idx[order], vals[order]


def signature(v, grid: PeriodicGrid, peaks: int = 2) -> Signature:
    idx, vals = _peaks(np.asarray(v), grid, peaks)
    pos = idx * np.array([grid.hx, grid.hy])
    if len(pos) < 2:
        return Signature((0.0, 0.0), 0.0, tuple(float(x) for x in vals))
    d = reduce_to_fundamental(pos[1] - pos[0], grid.geom)
    # z and -z describe the same pair once translations are quotiented
    d = np.abs(d)
    d = np.minimum(d, np.array([grid.geom.a, grid.geom.b]) - d)
    return Signature((float(d[0]), float(d[1])), float(vals[1] / vals[0]), (float(vals[0]), float(vals[1])))


def same_family(s1: Signature, s2: Signature, grid: PeriodicGrid, cells: float = 2.0, rel: float = 0.01) -> bool:
    off = np.abs(np.subtract(s1.offset, s2.offset))
    return bool(off[0] <= cells * grid.hx and off[1] <= cells * grid.hy and abs(s1.height_ratio - s2.height_ratio) <= rel)


def count_distinct(sigs, grid: PeriodicGrid) -> int:
    reps = []
    for s in sigs:
        if not any(same_family(s, r, grid) for r in reps):
            reps.append(s)
    return len(reps)


# ---------------------------------------------------------------------------
# families and continuation


@dataclass
class FamilyRun:
    period: str
    branch: WeightBranch
    lam: float
    result: SolveResult | None
    error: str | None
    signature: Signature | None = None
    energy: float | None = None
    far_field: FarFieldReport | None = None

    @property
    def converged(self) -> bool:
        return self.result is not None and self.result.converged

    def as_dict(self) -> dict:
        return {
            "period": self.period,
            "branch": self.branch.as_dict(),
            "lambda": self.lam,
            "converged": self.converged,
            "error": self.error,
            "solve": None if self.result is None else self.result.as_dict(),
            "signature": None if self.signature is None else self.signature.as_dict(),
            "energy": self.energy,
            "far_field": None if self.far_field is None else self.far_field.as_dict(),
        }


def solve_family(
    period: str, branch: WeightBranch, config: Configuration, lam: float, geom: TorusGeometry, n: int,
    cfg: SolverConfig | None = None,
) -> FamilyRun:
    grid = PeriodicGrid(geom, n)
    try:
        params = close_parameters(config, lam, geom)
        check_resolvable(params, grid)
        V = grid_ansatz(params, n)
        seed = V
        c = SolverConfig() if cfg is None else cfg
        if n // 2 >= c.coarse_min:
            coarse = solve_family(period, branch, config, lam, geom, n // 2, cfg)
            if coarse.converged:
                seed = PeriodicGrid(geom, n // 2).refine(coarse.result.v)
        res = newton_solve(seed, lam, grid, cfg, params, symmetry_center=config.points[0])
        res.distance_to_seed = float(np.abs(res.v - V).max())
    except NoConvergence as exc:
        return FamilyRun(period, branch, lam, getattr(exc, "result", None), f"{type(exc).__name__}: {exc}")
    except (GridTooCoarse, LinearSolveStagnation, OverflowGuard) as exc:
        return FamilyRun(period, branch, lam, None, f"{type(exc).__name__}: {exc}")
    u = np.sqrt(lam) * res.v
    run = FamilyRun(period, branch, lam, res, None)
    run.signature = signature(res.v, grid)
    run.energy = energy(u, lam, grid)
    try:
        run.far_field = far_field_check(res.v, params, grid)
    except ValueError:
        run.far_field = None
    return run


def enumerate_families(
    tau: float, lam: float, n: int, geom: TorusGeometry | None = None, catalog: FamilyCatalog | None = None,
    cfg: SolverConfig | None = None,
) -> list[FamilyRun]:
    geom = TorusGeometry.from_tau(tau) if geom is None else geom
    catalog = family_catalog(tau, geom) if catalog is None else catalog
    return [solve_family(name, br, conf, lam, geom, n, cfg) for name, br, conf in seeds_from_catalog(catalog, geom)]


def continuation(
    lambda_path, config: Configuration, geom: TorusGeometry, n: int, cfg: SolverConfig | None = None,
    max_ratio: float = 2.0,
) -> list[SolveResult]:
    """Follow one family along ``lambda_path``; each solve starts from the previous correction.

    Stops (returning what was computed) at the resolvability boundary or on
    a failed solve.
    """
    lams = [float(x) for x in lambda_path]
    for a, b in zip(lams[:-1], lams[1:]):
        if b > a * (1 + 1e-12) or a / b > max_ratio:
            raise ValueError("lambda path must be non-increasing with step ratio <= max_ratio")
    grid = PeriodicGrid(geom, n)
    out: list[SolveResult] = []
    phi = None
    for lam in lams:
        params = close_parameters(config, lam, geom)
        try:
            check_resolvable(params, grid)
        except GridTooCoarse as exc:
            log.info("continuation stops at lambda=%g: %s", lam, exc)
            break
        V = grid_ansatz(params, n)
        seed = V if phi is None else V + phi
        try:
            res = newton_solve(seed, lam, grid, cfg, params, symmetry_center=config.points[0])
        except (NoConvergence, LinearSolveStagnation, OverflowGuard) as exc:
            log.info("continuation stops at lambda=%g: %s", lam, exc)
            break
        res.distance_to_seed = float(np.abs(res.v - V).max())
        out.append(res)
        phi = res.v - V
    return out
