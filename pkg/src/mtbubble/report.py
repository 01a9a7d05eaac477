"""Report envelopes, structured/columnar output and figures."""

from __future__ import annotations

import csv
import datetime as dt
import json
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from .config import RunConfig  # noqa: E402


def _timestamp() -> str:
    """UTC now, or ``SOURCE_DATE_EPOCH`` when set (reproducible output)."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = dt.datetime.fromtimestamp(int(epoch), dt.timezone.utc) if epoch else dt.datetime.now(dt.timezone.utc)
    return t.strftime("%Y-%m-%dT%H:%M:%SZ")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


class Envelope:
    """Collects module reports for one command and writes them out."""

    def __init__(self, command: str, config: RunConfig):
        self.command = command
        self.config = config
        self.started = _timestamp()
        self.reports: dict = {}

    def add(self, name: str, payload) -> None:
        self.reports[name] = payload

    def as_dict(self) -> dict:
        return {
            "tool": "mtbubble",
            "version": __version__,
            "command": self.command,
            "config_hash": self.config.digest(),
            "config": self.config.to_dict(),
            "timestamps": {"started": self.started, "finished": _timestamp()},
            "reports": self.reports,
        }

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{self.command}.json"
        path.write_text(json.dumps(_jsonable(self.as_dict()), indent=2, sort_keys=True) + "\n")
        return path


def write_table(path, rows: list[dict], columns: list[str] | None = None) -> Path:
    """Columnar text (CSV) with a header row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else v


# ---------------------------------------------------------------------------
# figures


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_half_periods(taus, f1, f2, f3, thresholds, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(taus, f1, label="f1 (p1)")
    ax.plot(taus, f2, label="f2 (p2)")
    ax.plot(taus, f3, label="f3 (p3)")
    ax.axhline(0, color="k", lw=0.5)
    for t in thresholds:
        ax.axvline(t, color="gray", ls="--", lw=0.8)
    ax.axhline(-1 / (4 * np.pi), color="r", ls=":", lw=0.8, label="-1/(4 pi)")
    ax.set_xscale("log")
    ax.set_xlabel("tau = b/a")
    ax.set_ylabel("G at half period")
    ax.legend()
    return _save(fig, path)


def plot_weight_branches(catalog, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 5))
    markers = {"diagonal": "o", "pair": "s", "pair_swapped": "^"}
    for entry in catalog.periods:
        for br in entry.branches:
            ax.loglog(br.m1, br.m2, markers[br.kind], label=f"{entry.name} {br.kind}")
    lim = ax.get_xlim()
    ax.plot(lim, lim, "k-", lw=0.5)
    ax.set_xlabel("m1")
    ax.set_ylabel("m2")
    ax.set_title(f"tau={catalog.tau:g}: {catalog.total_families} families")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_loglog(x, ys: dict, path, xlabel="lambda", ylabel="", ref_slopes=()) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.asarray(x, float)
    for name, y in ys.items():
        ax.loglog(x, np.abs(np.asarray(y, float)), "o-", label=name)
    for s in ref_slopes:
        y0 = np.abs(np.asarray(next(iter(ys.values())), float))[0]
        ax.loglog(x, y0 * (x / x[0]) ** s, "k:", lw=0.8, label=f"slope {s:g}")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    return _save(fig, path)


def plot_field(field, geom, path, title="") -> Path:
    fig, ax = plt.subplots(figsize=(5, 5 * geom.tau))
    im = ax.imshow(np.asarray(field).T, origin="lower", extent=(0, geom.a, 0, geom.b), cmap="viridis")
    fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_title(title)
    return _save(fig, path)


def plot_spectrum(eigs, threshold, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3))
    e = np.asarray(eigs, float)
    ax.semilogy(np.arange(1, len(e) + 1), np.abs(e), "o")
    ax.axhline(threshold, color="r", ls="--", lw=0.8)
    ax.set_xlabel("index (by magnitude)")
    ax.set_ylabel("|eigenvalue|")
    return _save(fig, path)
