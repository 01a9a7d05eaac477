"""Command-line entry point: ``mtbubble {green,catalog,ansatz,residual,solve,verify}``."""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import acceptance
from .ansatz import close_parameters, assemble_ansatz
from .config import RunConfig
from .errors import ConfigError, MTBubbleError, UnresolvableScale
from .fieldio import save_field
from .lattice import (
    EwaldGreen,
    TorusGeometry,
    half_period_criticality,
    half_period_values,
    robin_constant,
    tau_thresholds,
    theta_green,
)
from .reduced import family_catalog, psi_k, seeds_from_catalog
from .report import (
    Envelope,
    plot_field,
    plot_half_periods,
    plot_loglog,
    plot_spectrum,
    plot_weight_branches,
    write_table,
)
from .residual import WeightProfile, build_cloud, loglog_fit, residual_report
from .solver import SolverConfig, ansatz_energy_report, count_distinct, solve_family
from .spectral import PeriodicGrid

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3, 4
log = logging.getLogger("mtbubble")


def _map(fn, items, workers: int):
    """Ordered map; results do not depend on the worker count."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _seeds(cfg: RunConfig, geom: TorusGeometry):
    cat = family_catalog(cfg.tau, geom, cfg.weight_tol)
    return cat, [s for s in seeds_from_catalog(cat, geom) if s[0] in cfg.periods and s[1].kind in cfg.branches]


# ---------------------------------------------------------------------------
# commands


def cmd_green(cfg: RunConfig, out: Path) -> int:
    env = Envelope("green", cfg)
    taus = np.logspace(np.log10(0.25), np.log10(4.0), 41)
    rows = []
    for t in taus:
        tab = half_period_values(float(t), cfg.series_tol)
        rows.append({"tau": float(t), "f1": tab.f1, "f2": tab.f2, "f3": tab.f3, "terms": tab.truncation_terms,
                     "bound": tab.truncation_bound})
    t0, t1 = tau_thresholds()
    geom = TorusGeometry(cfg.a, cfg.b)
    rng = np.random.default_rng(cfg.seed)
    pts = rng.uniform(-0.5, 0.5, (100, 2)) * [geom.a, geom.b]
    gap = float(np.max(np.abs(theta_green(geom).value(pts) - EwaldGreen(geom).value(pts))))
    here = half_period_values(cfg.tau, cfg.series_tol)
    env.add("table", rows)
    env.add("thresholds", {"tau0": t0, "tau1": t1, "product": t0 * t1})
    env.add("geometry", {"a": geom.a, "b": geom.b, "tau": geom.tau, "half_periods": here.as_dict(),
                         "robin": robin_constant(geom), "evaluator_gap": gap,
                         "criticality": [c.as_dict() for c in half_period_criticality(geom)]})
    write_table(out / "green_table.csv", rows)
    plot_half_periods(taus, [r["f1"] for r in rows], [r["f2"] for r in rows], [r["f3"] for r in rows], (t0, t1),
                      out / "green_half_periods.png")
    env.write(out)
    print(f"tau={cfg.tau:g}: f1={here.f1:.6f} f2={here.f2:.6f} f3={here.f3:.6f}")
    print(f"thresholds: tau0={t0:.10f} tau1={t1:.10f} tau0*tau1-1={t0 * t1 - 1:.2e}")
    print(f"robin={robin_constant(geom):.12f} evaluator gap={gap:.2e}")
    return EXIT_OK


def cmd_catalog(cfg: RunConfig, out: Path) -> int:
    env = Envelope("catalog", cfg)
    geom = TorusGeometry(cfg.a, cfg.b)
    cat = family_catalog(cfg.tau, geom, cfg.weight_tol)
    env.add("catalog", cat.as_dict())
    rows = [
        {"period": e.name, "f": e.f, "B": e.B, "kind": b.kind, "m1": b.m1, "m2": b.m2, "hessdet": b.hessdet,
         "nondegenerate": b.nondegenerate}
        for e in cat.periods for b in e.branches
    ]
    write_table(out / "catalog_branches.csv", rows)
    plot_weight_branches(cat, out / "catalog_branches.png")
    env.write(out)
    for e in cat.periods:
        print(f"{e.name}: G={e.f:.6f} B={e.B:.6f} branches={e.count}")
    print(f"{cat.total_families} families (regime: {cat.regime})")
    for f in cat.flags:
        print(f"FLAG {f}")
    return EXIT_OK


def cmd_ansatz(cfg: RunConfig, out: Path) -> int:
    env = Envelope("ansatz", cfg)
    geom = TorusGeometry(cfg.a, cfg.b)
    _, seeds = _seeds(cfg, geom)
    grid = PeriodicGrid(geom, cfg.grid)
    items = []
    for name, br, conf in seeds:
        params = close_parameters(conf, cfg.solve_lambda, geom)
        ans = assemble_ansatz(params, "expansion", cfg.grid)
        V = ans.on_grid(cfg.grid)
        stem = out / f"ansatz_{name}_{br.kind}"
        save_field(stem, V, a=geom.a, b=geom.b, lam=cfg.solve_lambda, centers=params.centers, m=params.m,
                   log_delta=params.log_delta, mode="expansion")
        plot_field(V, geom, stem.with_suffix(".png"), f"V  {name}/{br.kind}  lambda={cfg.solve_lambda:g}")
        res_mu, res_e = params.closure_residuals()
        d = params.as_dict()
        d.update(seed=f"{name}/{br.kind}", closure_mu=res_mu, closure_eps=res_e,
                 resolvability=params.resolvability(grid.spacing), mean_V=float(V.mean()))
        items.append(d)
        print(f"{name}/{br.kind}: delta={np.exp(params.log_delta)} points across core={2 * params.delta / grid.spacing}")
    env.add("ansatz", items)
    env.write(out)
    return EXIT_OK


def _residual_one(args):
    conf, lam, geom, delta_const, seed = args
    params = close_parameters(conf, float(lam), geom)
    ans = assemble_ansatz(params, "expansion")
    prof = WeightProfile(params, delta_const)
    rep = residual_report(ans, prof, build_cloud(prof, seed=seed))
    en = ansatz_energy_report(conf, float(lam), geom)
    d = rep.as_dict()
    d.update(energy_prediction=en.prediction, energy_deviation=en.deviation)
    return d


def cmd_residual(cfg: RunConfig, out: Path) -> int:
    env = Envelope("residual", cfg)
    geom = TorusGeometry(cfg.a, cfg.b)
    _, seeds = _seeds(cfg, geom)
    lams = cfg.lambdas()
    for name, br, conf in seeds:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnresolvableScale)
            rows = _map(_residual_one, [(conf, lam, geom, cfg.delta_const, cfg.seed) for lam in lams], cfg.workers)
        fit = loglog_fit(lams, [r["star_norm"] for r in rows])
        tag = f"{name}_{br.kind}"
        env.add(tag, {"sweep": rows, "fit": fit.as_dict(), "psi": psi_k(conf, geom)})
        write_table(out / f"residual_{tag}.csv", rows, [k for k in rows[0] if k != "regime_sups"])
        plot_loglog(lams, {"||R||_*": [r["star_norm"] for r in rows], "||f'(V)-K||_*": [r["gap_norm"] for r in rows],
                           "|J(U) - prediction|": [r["energy_deviation"] for r in rows]},
                    out / f"residual_{tag}.png", ylabel="size", ref_slopes=(1, 2))
        print(f"{tag}: fitted slope {fit.slope:.4f} (95% CI {fit.ci_low:.4f}..{fit.ci_high:.4f})")
    env.write(out)
    return EXIT_OK


def _solve_one(args):
    name, br, conf, lam, geom, n, tol = args
    return solve_family(name, br, conf, lam, geom, n, SolverConfig(tol=tol))


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    env = Envelope("solve", cfg)
    geom = TorusGeometry(cfg.a, cfg.b)
    cat, seeds = _seeds(cfg, geom)
    runs = _map(_solve_one, [(n_, b, c, cfg.solve_lambda, geom, cfg.grid, cfg.newton_tol) for n_, b, c in seeds],
                cfg.workers)
    grid = PeriodicGrid(geom, cfg.grid)
    rows = []
    for r in runs:
        tag = f"{r.period}_{r.branch.kind}"
        if r.converged:
            save_field(out / f"solution_{tag}", r.result.v, a=geom.a, b=geom.b, lam=r.lam, grid=cfg.grid)
            plot_field(r.result.v, geom, out / f"solution_{tag}.png", f"v  {r.period}/{r.branch.kind}  lambda={r.lam:g}")
        rows.append({"seed": tag, "converged": r.converged, "error": r.error,
                     "iterations": None if r.result is None else r.result.iterations,
                     "residual": None if r.result is None else r.result.residual,
                     "distance_to_seed": None if r.result is None else r.result.distance_to_seed,
                     "energy": r.energy, "far_field_ratio": None if r.far_field is None else r.far_field.ratio})
        print(f"{tag}: " + ("converged" if r.converged else f"failed ({r.error})"))
    conv = [r for r in runs if r.converged]
    distinct = count_distinct([r.signature for r in conv], grid) if conv else 0
    env.add("runs", [r.as_dict() for r in runs])
    env.add("summary", {"seeds": len(runs), "converged": len(conv), "distinct_modulo_translation": distinct,
                        "catalog_total": cat.total_families})
    write_table(out / "solve_runs.csv", rows)
    env.write(out)
    print(f"{len(conv)}/{len(runs)} converged, {distinct} distinct modulo translation")
    return EXIT_OK if conv else EXIT_NUMERIC


def cmd_verify(cfg: RunConfig, out: Path, only=None) -> int:
    env = Envelope("verify", cfg)
    numbers = only or sorted(acceptance.CRITERIA)
    kw = {8: {"seed": cfg.seed}}
    if cfg.grid != RunConfig().grid:
        kw[11] = {"n": cfg.grid}
    results = []
    for k in numbers:
        res = acceptance.CRITERIA[k](**kw.get(k, {}))
        print(res.line(), flush=True)
        results.append(res)
        if k == 10:
            plot_spectrum(res.measured["spectrum"]["eigenvalues"], res.measured["spectrum"]["threshold"],
                          out / "kernel_spectrum.png")
    env.add("criteria", [r.as_dict() for r in results])
    env.write(out)
    failed = [r.number for r in results if r.status == acceptance.FAIL]
    print("all criteria pass" if not failed else f"failing criteria: {failed}")
    return EXIT_FAIL if failed else EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtbubble", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI file with a [run] section")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--tau", type=float, help="aspect ratio b/a (a is kept)")
    common.add_argument("--lambda-lo", type=float, dest="lambda_lo")
    common.add_argument("--lambda-hi", type=float, dest="lambda_hi")
    common.add_argument("--lambda-n", type=int, dest="lambda_n")
    common.add_argument("--lambda", type=float, dest="solve_lambda", help="lambda for ansatz/solve")
    common.add_argument("--grid", type=int)
    common.add_argument("--delta-const", type=float, dest="delta_const")
    common.add_argument("--workers", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("green", "half-period table, thresholds, Robin constant"),
        ("catalog", "weight branches and family counts"),
        ("ansatz", "closed parameters and ansatz fields"),
        ("residual", "star-norm sweep, moments and ansatz energy"),
        ("solve", "Newton solves from every catalog seed"),
        ("verify", "acceptance criteria"),
    ):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        if name == "verify":
            sp.add_argument("--only", type=lambda s: [int(x) for x in s.split(",")], help="e.g. 1,2,5")
    return p


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    over = {k: getattr(args, k) for k in ("lambda_lo", "lambda_hi", "lambda_n", "solve_lambda", "grid", "delta_const",
                                           "workers", "seed")}
    if args.out is not None:
        over["out_dir"] = str(args.out)
    if args.tau is not None:
        over["b"] = cfg.a * args.tau
    try:
        return cfg.with_overrides(**over)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cmds = {"green": cmd_green, "catalog": cmd_catalog, "ansatz": cmd_ansatz, "residual": cmd_residual,
            "solve": cmd_solve}
    try:
        if args.command == "verify":
            return cmd_verify(cfg, out, args.only)
        return cmds[args.command](cfg, out)
    except MTBubbleError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
