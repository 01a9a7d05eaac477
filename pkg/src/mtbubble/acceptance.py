"""The eleven acceptance checks, each returning measured values and a verdict."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .ansatz import (
    RESOLVE_POINTS,
    _correction_source,
    close_parameters,
    chi_ell_integral,
    concentration_integrals,
    params_for_delta,
)
from .errors import UnresolvableScale
from .lattice import (
    EwaldGreen,
    TorusGeometry,
    f1,
    f2,
    half_period_values,
    tau_thresholds,
    theta_green,
)
from .quadrature import MultiscaleQuadrature
from .reduced import (
    Configuration,
    degeneracy_margin,
    f0_map,
    family_catalog,
    seeds_from_catalog,
    solve_weights,
    weight_gradient,
    weight_hessian,
)
from .residual import kernel_fields, loglog_fit, near_kernel_spectrum, residual_sweep
from .solver import SolverConfig, ansatz_energy_report, count_distinct, enumerate_families, energy_prediction
from .spectral import PeriodicGrid

PASS = "PASS"
FAIL = "FAIL"
NOT_REPRODUCIBLE = "NOT-REPRODUCIBLE-AT-DESK-SCALE"


@dataclass
class CriterionResult:
    number: int
    title: str
    status: str
    measured: dict
    checks: dict
    budget_s: float
    elapsed_s: float = 0.0
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def line(self) -> str:
        bad = [k for k, v in self.checks.items() if not v]
        tail = "" if not bad else " failing: " + ", ".join(bad)
        return f"[{self.status}] {self.number:2d} {self.title} ({self.elapsed_s:.1f}s / {self.budget_s:g}s){tail}"

    def as_dict(self) -> dict:
        return {
            "number": self.number,
            "title": self.title,
            "status": self.status,
            "measured": self.measured,
            "checks": self.checks,
            "budget_s": self.budget_s,
            "elapsed_s": self.elapsed_s,
            "notes": self.notes,
        }


def _verdict(checks: dict) -> str:
    return PASS if all(checks.values()) else FAIL


def _timed(fn):
    def run(*a, **kw):
        t0 = time.perf_counter()
        res = fn(*a, **kw)
        res.elapsed_s = time.perf_counter() - t0
        res.checks["within_runtime_budget"] = res.elapsed_s < res.budget_s
        if res.status != NOT_REPRODUCIBLE:
            res.status = _verdict(res.checks)
        return res

    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


def _spread(x) -> float:
    """max/min of absolute values."""
    a = np.abs(np.asarray(x, float))
    return float(a.max() / a.min())


# ---------------------------------------------------------------------------


@_timed
def criterion_1() -> CriterionResult:
    """Half-period values at the square torus, and both evaluators against the series."""
    g = TorusGeometry(1.0, 1.0)
    tab = half_period_values(1.0)
    checks = {
        "f1_near_-0.03": abs(tab.f1 + 0.03) <= 0.005,
        "f2_near_-0.03": abs(tab.f2 + 0.03) <= 0.005,
        "f3_near_-0.06": abs(tab.f3 + 0.06) <= 0.005,
    }
    th, ew = theta_green(g), EwaldGreen(g)
    series = {"p1": tab.f1, "p2": tab.f2, "p3": tab.f3}
    devs = {}
    for name, p in g.half_periods.items():
        devs[f"theta_{name}"] = abs(float(th.value(p)) - series[name])
        devs[f"ewald_{name}"] = abs(float(ew.value(p)) - series[name])
    checks["evaluators_match_series_1e-10"] = max(devs.values()) <= 1e-10
    measured = {"f1": tab.f1, "f2": tab.f2, "f3": tab.f3, "max_evaluator_deviation": max(devs.values()), **devs}
    return CriterionResult(1, "half-period golden values", "", measured, checks, 1.0)


@_timed
def criterion_2() -> CriterionResult:
    """Aspect-ratio thresholds."""
    t0, t1 = tau_thresholds()
    m = {"tau0": t0, "tau1": t1, "f1_tau1": f1(t1), "f2_tau0": f2(t0), "product_minus_1": t0 * t1 - 1}
    checks = {
        "f1_root": abs(m["f1_tau1"]) <= 1e-12,
        "f2_root": abs(m["f2_tau0"]) <= 1e-12,
        "modular": abs(m["product_minus_1"]) <= 1e-10,
        "ordering": t0 < 1 < t1,
    }
    return CriterionResult(2, "tau thresholds", "", m, checks, 1.0)


@_timed
def criterion_3(seed: int = 0) -> CriterionResult:
    """Theta against Ewald evaluators, zero mean, and scale invariance."""
    rng = np.random.default_rng(seed)
    worst = {}
    means = {}
    for tau in (0.5, 1.0, 2.0):
        g = TorusGeometry.from_tau(tau)
        pts = rng.uniform(-0.5, 0.5, (100, 2)) * [g.a, g.b]
        # stay clear of the pole
        pts = pts[np.hypot(pts[:, 0], pts[:, 1]) > 1e-3 * g.min_side]
        th, ew = theta_green(g), EwaldGreen(g)
        worst[f"tau={tau:g}"] = float(np.max(np.abs(th.value(pts) - ew.value(pts))))
        q = MultiscaleQuadrature(g, [[0.0, 0.0]], g.min_side / 8, [np.log(g.min_side / 8)])
        means[f"tau={tau:g}"] = q.integrate(
            lambda p: (th.regular(p.offsets()) - p.logr / (2 * np.pi)) * np.exp(p.logw), th.value
        )
    g = TorusGeometry(1.0, 1.0)
    s = 2.5
    pts = rng.uniform(0.05, 0.45, (100, 2))
    scale_dev = float(np.max(np.abs(theta_green(g.scaled(s)).value(s * pts) - theta_green(g).value(pts))))
    checks = {
        "evaluators_agree_1e-10": max(worst.values()) <= 1e-10,
        "zero_mean_1e-8": max(abs(v) for v in means.values()) <= 1e-8,
        "scale_invariance_1e-12": scale_dev <= 1e-12,
    }
    m = {"max_evaluator_gap": worst, "mean": means, "scale_deviation": scale_dev}
    return CriterionResult(3, "Green cross-validation", "", m, checks, 10.0)


def _psi2_weight_gradient(m, A, B):
    return weight_gradient(m[0], m[1], A, B)


@_timed
def criterion_4(seed: int = 0) -> CriterionResult:
    """Weight system: fixed points, branch count, stationarity, Hessian and degeneracy margin."""
    rng = np.random.default_rng(seed)
    A = rng.uniform(-5, 5, 1000)
    B = rng.uniform(-3, 3, 1000)
    B[np.abs(B) < 1e-3] = 0.5
    worst_fp = 0.0
    for a, b in zip(A, B):
        m0 = np.exp((b - a - 1) / 2)
        root = brentq(lambda t: (f0_map(np.exp(t), a, b) - np.exp(t)) / np.exp(t), np.log(m0) - 0.5, np.log(m0) + 0.5,
                      xtol=1e-15, rtol=1e-15)
        worst_fp = max(worst_fp, abs(np.exp(root) / m0 - 1))
    counts, stat, hdev = [], 0.0, 0.0
    for b in np.linspace(-0.95, -0.05, 19):
        a = float(rng.uniform(-2, 4))
        brs = solve_weights(a, float(b))
        counts.append(len(brs))
        for br in brs:
            m = np.array([br.m1, br.m2])
            stat = max(stat, float(np.max(np.abs(_psi2_weight_gradient(m, a, b)))))
            # finite-difference Hessian of psi_2 in the weights, from its gradient
            H = np.empty((2, 2))
            for i in range(2):
                h = 1e-6 * m[i]
                e = np.zeros(2)
                e[i] = h
                H[:, i] = (_psi2_weight_gradient(m + e, a, b) - _psi2_weight_gradient(m - e, a, b)) / (2 * h)
            det_fd = np.linalg.det(0.5 * (H + H.T))
            hdev = max(hdev, abs(det_fd / br.hessdet - 1))
            assert np.allclose(weight_hessian(m[0], m[1], a, b), weight_hessian(m[0], m[1], a, b).T)
    grid = np.linspace(-1, 0, 100_001)[1:-1]
    margins = degeneracy_margin(grid)
    ends = (float(degeneracy_margin(-1.0)), float(degeneracy_margin(0.0)))
    checks = {
        "diagonal_fixed_point_1e-12": worst_fp <= 1e-12,
        "three_branches_for_B_in_(-1,0)": all(c == 3 for c in counts),
        "stationarity_1e-10": stat <= 1e-10,
        "hessdet_matches_fd_1e-6": hdev <= 1e-6,
        "margin_positive": bool(np.all(margins > 0)),
        "margin_endpoints": ends == (0.0, 2.0),
    }
    m = {
        "fixed_point_rel_dev": worst_fp,
        "branch_counts": counts,
        "max_stationarity_residual": stat,
        "max_hessdet_rel_dev": hdev,
        "min_margin": float(margins.min()),
        "margin_endpoints": ends,
    }
    return CriterionResult(4, "weight system", "", m, checks, 30.0)


@_timed
def criterion_5() -> CriterionResult:
    """Family catalogs at tau = 1, 2 and 1/2."""
    sq = family_catalog(1.0)
    Bs = {e.name: e.B for e in sq.periods}
    checks = {
        "square_B_in_(-1,0)": all(-1 < b < 0 for b in Bs.values()),
        "square_nine_families": sq.total_families == 9,
    }
    m = {"square": {"B": Bs, "total": sq.total_families}}
    notes = []
    for tau in (2.0, 0.5):
        cat = family_catalog(tau)
        single_ok = all(e.count == 1 for e in cat.periods if e.f >= 0)
        has_nonneg = any(e.f >= 0 for e in cat.periods)
        flagged_ok = all(
            any(e.name in f for f in cat.flags) for e in cat.periods if e.B <= -1 and e.count != 3
        )
        checks[f"tau={tau:g}_single_branch_where_f>=0"] = single_ok and has_nonneg
        checks[f"tau={tau:g}_deviations_flagged"] = flagged_ok
        m[f"tau={tau:g}"] = {
            "counts": {e.name: e.count for e in cat.periods},
            "B": {e.name: e.B for e in cat.periods},
            "total": cat.total_families,
            "flags": cat.flags,
        }
        notes.extend(cat.flags)
    return CriterionResult(5, "family catalog", "", m, checks, 60.0, notes=notes)


@_timed
def criterion_6(n: int = 512) -> CriterionResult:
    """Projection against its closed-form surrogate, slope in delta."""
    g = TorusGeometry(1.0, 1.0)
    grid = PeriodicGrid(g, n)
    deltas = np.logspace(-3, -1, 9)
    errs = []
    for d in deltas:
        p = params_for_delta(g, [0.5, 0.5], d)
        ld = float(p.log_delta[0])
        # PU - surrogate solves a smooth Poisson problem; its mean fixes PU to zero mean
        psi = grid.solve_poisson(_correction_source(grid, p.centers[0], ld, p.r0, g))
        psi += -chi_ell_integral(ld, p.r0) / g.area
        errs.append(float(np.abs(psi).max()))
    errs = np.array(errs)
    fit = loglog_fit(deltas, errs)
    rate = deltas**2 * np.abs(np.log(deltas))
    fit_rate = loglog_fit(deltas, rate)
    checks = {"slope_in_[1.8,2.2]": 1.8 <= fit.slope <= 2.2}
    m = {
        "deltas": deltas,
        "sup_errors": errs,
        "slope": fit.slope,
        "slope_ci": [fit.ci_low, fit.ci_high],
        "error_over_d2logd": errs / rate,
        "slope_of_d2logd_itself": fit_rate.slope,
        "slope_of_error_over_logd": loglog_fit(deltas, errs / np.abs(np.log(deltas))).slope,
    }
    return CriterionResult(6, "projection expansion", "", m, checks, 120.0)


@_timed
def criterion_7() -> CriterionResult:
    """Concentration integrals with constant test function."""
    deltas = 1e-2 * 0.5 ** np.arange(4)
    ratios = []
    for d in deltas:
        ci = concentration_integrals(None, float(d), r0=0.125, a=1.0)
        ratios.append([e / d**2 for e in ci.errors])
    ratios = np.array(ratios)
    spreads = [_spread(ratios[:, i]) for i in range(3)]
    checks = {f"integral_{i + 1}_error/delta^2_bounded": s <= 3 for i, s in enumerate(spreads)}
    m = {"deltas": deltas, "error_over_delta2": ratios, "spread": spreads}
    return CriterionResult(7, "concentration integrals", "", m, checks, 60.0)


def square_p3_configuration():
    cat = family_catalog(1.0)
    br = next(b for e in cat.periods if e.name == "p3" for b in e.branches if b.kind == "diagonal")
    return Configuration([[0.25, 0.25], [0.75, 0.75]], [br.m1, br.m2])


@_timed
def criterion_8(lams=None, seed: int = 0) -> CriterionResult:
    """Residual star-norm and moment integrals over a lambda decade."""
    lams = np.logspace(-3, -2, 5) if lams is None else np.asarray(lams)
    g = TorusGeometry(1.0, 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnresolvableScale)
        sw = residual_sweep(square_p3_configuration(), g, lams, seed=seed)
    s = sw.star_norms
    cv = np.array([r.moments.error_v / r.lam for r in sw.reports])
    ce = np.array([r.moments.error_e / (r.lam * np.log(r.lam) ** 2) for r in sw.reports])
    gap = np.array([r.gap_norm / r.lam for r in sw.reports])
    checks = {
        "star/lambda_varies_<3": _spread(s / lams) < 3,
        "slope_in_[0.8,1.2]": 0.8 <= sw.fit.slope <= 1.2,
        "C'_bounded": _spread(cv) <= 3,
        "C''_bounded": _spread(ce) <= 3,
    }
    m = {
        "lambdas": lams,
        "star_norm": s,
        "star_over_lambda": s / lams,
        "slope": sw.fit.slope,
        "slope_ci": [sw.fit.ci_low, sw.fit.ci_high],
        "argmax_regime": [r.argmax_regime for r in sw.reports],
        "C_prime": cv,
        "C_double_prime": ce,
        "moment_e_error_over_lambda": [r.moments.error_e / r.lam for r in sw.reports],
        "gap_over_lambda": gap,
    }
    return CriterionResult(8, "residual bound", "", m, checks, 300.0)


@_timed
def criterion_9(lams=None) -> CriterionResult:
    """Ansatz energy against its expansion over a lambda decade."""
    lams = np.logspace(-3, -2, 5) if lams is None else np.asarray(lams)
    g = TorusGeometry(1.0, 1.0)
    conf = square_p3_configuration()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnresolvableScale)
        reps = [ansatz_energy_report(conf, float(lam), g) for lam in lams]
    scaled = np.array([r.scaled_deviation for r in reps])
    checks = {"scaled_deviation_varies_<=3": _spread(scaled) <= 3}
    m = {
        "lambdas": lams,
        "energy": [r.energy for r in reps],
        "prediction": [r.prediction for r in reps],
        "deviation": [r.deviation for r in reps],
        "deviation_over_l2log2": scaled,
        "deviation_over_l2": [r.deviation / r.lam**2 for r in reps],
    }
    return CriterionResult(9, "energy expansion", "", m, checks, 300.0)


@_timed
def criterion_10(n: int = 256, delta: float = 1e-2) -> CriterionResult:
    """Kernel Gram matrix and near-kernel spectrum of the linearised operator, one bubble."""
    g = TorusGeometry(1.0, 1.0)
    p = params_for_delta(g, [0.5, 0.5], delta)
    G = kernel_fields(0, p, n).gram()
    target = -32 * np.pi / 3
    diag = np.diag(G)
    off = G - np.diag(diag)
    sr = near_kernel_spectrum(p, n)
    checks = {
        "gram_diagonal_5pct": bool(np.all(np.abs(diag / target - 1) <= 0.05)),
        "gram_offdiag_5pct": float(np.abs(off).max()) <= 0.05 * float(np.abs(diag).min()),
        "three_near_kernel": sr.near_kernel == 3,
        "gap_ratio_>=5": sr.gap_ratio >= 5,
        "angles_<=15deg": float(sr.principal_angles_deg.max()) <= 15,
    }
    m = {"gram": G, "target": target, "spectrum": sr.as_dict()}
    return CriterionResult(10, "kernel structure", "", m, checks, 300.0)


@_timed
def criterion_11(lams=(6.0, 8.0), n: int = 512, cfg: SolverConfig | None = None) -> CriterionResult:
    """Discrete Newton solves from every square-torus seed."""
    g = TorusGeometry(1.0, 1.0)
    cat = family_catalog(1.0)
    evidence = {}
    window = []
    best = None
    for lam in lams:
        runs = enumerate_families(1.0, float(lam), n, g, cat, cfg)
        evidence[f"lambda={lam:g}"] = [
            {
                "seed": f"{r.period}/{r.branch.kind}",
                "converged": r.converged,
                "error": r.error,
                "residual": None if r.result is None else r.result.residual,
                "distance_to_seed": None if r.result is None else r.result.distance_to_seed,
                "energy": r.energy,
                "far_field_ratio": None if r.far_field is None else r.far_field.ratio,
            }
            for r in runs
        ]
        scales = {}
        for name, br, conf in seeds_from_catalog(cat, g):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UnresolvableScale)
                ld = float(close_parameters(conf, float(lam), g).log_delta.min())
            scales[f"{name}/{br.kind}"] = {
                "log10_delta_min": ld / np.log(10),
                "grid_needed": float(RESOLVE_POINTS * g.min_side / (2 * np.exp(ld))) if ld > -700 else float("inf"),
            }
        evidence[f"lambda={lam:g} scales"] = scales
        if all(r.converged for r in runs):
            window.append(float(lam))
            best = (lam, runs)
    m = {"candidates": list(map(float, lams)), "grid": n, "window": window, "evidence": evidence}
    if best is None:
        conv = {k: sum(e["converged"] for e in v) for k, v in evidence.items() if not k.endswith("scales")}
        m["converged_per_lambda"] = conv
        res = CriterionResult(11, "discrete solve", NOT_REPRODUCIBLE, m, {"evidence_recorded": bool(evidence)}, 1800.0)
        res.notes.append("no lambda at which all nine seeds converge")
        res.notes.append(
            "each pair seed is the translate by its half period of the matching pair_swapped seed, "
            "so at most six classes are distinct modulo translation"
        )
        return res
    lam, runs = best
    grid = PeriodicGrid(g, n)
    sigs = [r.signature for r in runs]
    distinct = count_distinct(sigs, grid)
    pred = energy_prediction(lam, 2, g.area, 0.0)
    m.update(
        distinct_modulo_translation=distinct,
        energies=[r.energy for r in runs],
        energy_minus_4pi_over_lambda=[(r.energy - 4 * np.pi) / lam for r in runs],
        prediction_leading=pred,
    )
    checks = {
        "all_converged": True,
        "pairwise_distinct": distinct == len(runs),
        "far_field_reported": all(r.far_field is not None for r in runs),
    }
    return CriterionResult(11, "discrete solve", "", m, checks, 1800.0)


CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
    11: criterion_11,
}


def run_criteria(numbers=None, **kw) -> list[CriterionResult]:
    numbers = sorted(CRITERIA) if numbers is None else numbers
    out = []
    for k in numbers:
        out.append(CRITERIA[k](**kw.get(k, {})))
    return out
