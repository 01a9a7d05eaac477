"""Run configuration stored as a plain-text INI file."""

from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .errors import ConfigError

PERIODS = ("p1", "p2", "p3")
BRANCHES = ("diagonal", "pair", "pair_swapped")


@dataclass(frozen=True)
class RunConfig:
    a: float = 1.0
    b: float = 1.0
    # tolerances
    series_tol: float = 1e-15
    weight_tol: float = 1e-12
    newton_tol: float = 1e-10
    # lambda sweep
    lambda_lo: float = 1e-3
    lambda_hi: float = 1e-2
    lambda_n: int = 5
    log_spacing: bool = True
    # discrete solves
    solve_lambda: float = 8.0
    grid: int = 256
    periods: tuple = PERIODS
    branches: tuple = BRANCHES
    # verification
    delta_const: float = 10.0
    seed: int = 0
    workers: int = 1
    out_dir: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not (self.a > 0 and self.b > 0):
            raise ConfigError("side lengths must be positive")
        for name in ("series_tol", "weight_tol", "newton_tol", "delta_const"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.lambda_lo < self.lambda_hi:
            raise ConfigError("need 0 < lambda_lo < lambda_hi")
        if self.lambda_n < 2:
            raise ConfigError("lambda_n must be at least 2")
        if not self.solve_lambda > 0:
            raise ConfigError("solve_lambda must be positive")
        if self.grid < 16 or self.grid % 2:
            raise ConfigError("grid must be even and at least 16")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if not set(self.periods) <= set(PERIODS) or not self.periods:
            raise ConfigError(f"periods must be drawn from {PERIODS}")
        if not set(self.branches) <= set(BRANCHES) or not self.branches:
            raise ConfigError(f"branches must be drawn from {BRANCHES}")

    @property
    def tau(self) -> float:
        return self.b / self.a

    def lambdas(self) -> np.ndarray:
        if self.log_spacing:
            return np.logspace(np.log10(self.lambda_lo), np.log10(self.lambda_hi), self.lambda_n)
        return np.linspace(self.lambda_lo, self.lambda_hi, self.lambda_n)

    # -- serialisation ---------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["periods"] = list(self.periods)
        d["branches"] = list(self.branches)
        return d

    def to_text(self) -> str:
        cp = configparser.ConfigParser()
        sec = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                sec[f.name] = ",".join(v)
            elif isinstance(v, float):
                sec[f.name] = repr(v)
            else:
                sec[f.name] = str(v)
        cp["run"] = sec
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        if "run" not in cp:
            raise ConfigError("missing [run] section")
        return cls.from_mapping(dict(cp["run"]))

    @classmethod
    def from_mapping(cls, raw: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(raw) - set(known)
        if unknown:
            raise ConfigError(f"unknown keys: {sorted(unknown)}")
        kw = {}
        defaults = cls()
        for name, val in raw.items():
            ref = getattr(defaults, name)
            try:
                if isinstance(ref, bool):
                    if isinstance(val, bool):
                        kw[name] = val
                    elif str(val).lower() in ("1", "true", "yes", "on"):
                        kw[name] = True
                    elif str(val).lower() in ("0", "false", "no", "off"):
                        kw[name] = False
                    else:
                        raise ValueError(val)
                elif isinstance(ref, tuple):
                    items = val if isinstance(val, (list, tuple)) else str(val).split(",")
                    kw[name] = tuple(s.strip() for s in items if s.strip())
                else:
                    kw[name] = type(ref)(val)
            except ValueError as exc:
                raise ConfigError(f"bad value for {name}: {val!r}") from exc
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                return cls.from_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; equal configs hash equally."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self
