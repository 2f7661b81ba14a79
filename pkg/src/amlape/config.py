"""Run configuration shared by every CLI command.

A config file is flat TOML whose keys mirror the long CLI flags with dashes
replaced by underscores (``--cv-folds`` becomes ``cv_folds``). Flags given on
the command line override the file.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .links import LINK_NAMES
from .simulate import DESIGNS

SCHEMA_VERSION = 1
COMMANDS = ("estimate", "simulate", "oracle", "decompose")
ESTIMATOR_CHOICES = ("aml", "wz", "plugin", "all")


class ConfigError(ValueError):
    """One or more invalid settings; ``problems`` lists them all."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


@dataclass
class RunConfig:
    command: str = "estimate"
    input: str | None = None
    response: str | None = None
    focal: str | None = None
    link: str = "logistic"
    folds: int = 5
    alpha: float = 0.05
    seed: int = 0
    lam: float | None = None
    cv_folds: int = 10
    cv_patience: int | None = None
    estimator: str = "aml"
    output: str | None = None
    # balance solver
    max_iter: int = 20_000
    tol: float = 1e-7
    solver_method: str = "admm"
    smoothing_fallback: bool = True
    diagnostics: str | None = None
    # simulation / oracle / decompose
    designs: list[str] = field(default_factory=lambda: list(DESIGNS))
    n_grid: list[int] = field(default_factory=lambda: [200, 400, 800])
    replications: int = 20
    oracle_draws: int = 1_000_000
    workers: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def estimators(self) -> list[str]:
        return ["aml", "wz", "plugin"] if self.estimator == "all" else [self.estimator]


def field_names() -> list[str]:
    return [f.name for f in fields(RunConfig)]


def load_file(path: str | Path) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError([f"cannot read config file {path}: {exc.strerror}"]) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"config file {path} is not valid TOML: {exc}"]) from None
    out = {}
    unknown = []
    for key, value in raw.items():
        name = key.replace("-", "_")
        name = "lam" if name == "lambda" else name
        if name not in field_names():
            unknown.append(f"unknown config key {key!r}")
        out[name] = value
    if unknown:
        raise ConfigError(unknown)
    return out


def _as(kind, value, name, problems):
    try:
        if kind is bool and isinstance(value, str):
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
            raise ValueError(value)
        return kind(value)
    except (TypeError, ValueError):
        problems.append(f"{name} must be {kind.__name__}, got {value!r}")
        return None


def build(values: dict) -> RunConfig:
    """Coerce and validate settings, collecting every problem before raising."""
    problems: list[str] = []
    cfg = RunConfig()
    for name, value in values.items():
        if value is None:
            continue
        current = getattr(cfg, name)
        if name in ("designs", "n_grid"):
            items = value.split(",") if isinstance(value, str) else list(value)
            kind = str if name == "designs" else int
            conv = [_as(kind, v.strip() if isinstance(v, str) else v, name, problems) for v in items]
            setattr(cfg, name, [v for v in conv if v is not None])
        elif name in ("lam", "cv_patience", "workers", "input", "response", "focal", "output", "diagnostics"):
            kind = {"lam": float, "cv_patience": int, "workers": int}.get(name, str)
            setattr(cfg, name, _as(kind, value, name, problems))
        else:
            converted = _as(type(current), value, name, problems)
            if converted is not None:  # a failed coercion is reported once, not re-checked
                setattr(cfg, name, converted)
    _validate(cfg, problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def _check_header(cfg: RunConfig, problems: list[str]):
    with open(cfg.input, newline="") as fh:
        header = [h.strip() for h in next(csv.reader(fh), [])]
    for role, name in (("response", cfg.response), ("focal", cfg.focal)):
        if name is not None and name not in header:
            problems.append(f"{role} column {name!r} not found in {cfg.input}")
    if cfg.response is not None and cfg.response == cfg.focal:
        problems.append("focal column must differ from the response")


def _validate(cfg: RunConfig, problems: list[str]):
    def check(cond, msg):
        if not cond:
            problems.append(msg)

    check(cfg.command in COMMANDS, f"command must be one of {COMMANDS}")
    check(cfg.link in LINK_NAMES, f"link must be one of {LINK_NAMES}, got {cfg.link!r}")
    check(cfg.estimator in ESTIMATOR_CHOICES, f"estimator must be one of {ESTIMATOR_CHOICES}")
    check(isinstance(cfg.folds, int) and cfg.folds >= 1, "folds must be a positive integer")
    check(isinstance(cfg.cv_folds, int) and cfg.cv_folds >= 2, "cv_folds must be at least 2")
    check(isinstance(cfg.alpha, float) and 0 < cfg.alpha < 1, "alpha must lie in (0, 1)")
    check(cfg.lam is None or (isinstance(cfg.lam, float) and cfg.lam >= 0 and math.isfinite(cfg.lam)),
          "lambda must be a finite nonnegative number")
    check(cfg.cv_patience is None or cfg.cv_patience >= 1, "cv_patience must be positive")
    check(isinstance(cfg.max_iter, int) and cfg.max_iter >= 1, "max_iter must be positive")
    check(isinstance(cfg.tol, float) and cfg.tol > 0, "tol must be positive")
    check(cfg.solver_method in ("admm", "smoothed"), "solver_method must be admm or smoothed")
    check(cfg.workers is None or cfg.workers >= 1, "workers must be positive")
    if cfg.command == "estimate":
        check(cfg.input is not None, "estimate needs --input")
        check(cfg.response is not None, "estimate needs --response")
        check(cfg.focal is not None, "estimate needs --focal")
        if cfg.input is not None:
            if Path(cfg.input).is_file():
                _check_header(cfg, problems)
            else:
                problems.append(f"input file {cfg.input} does not exist")
    if cfg.command in ("simulate", "oracle", "decompose"):
        check(all(d in DESIGNS for d in cfg.designs if d), f"designs must be drawn from {DESIGNS}")
        check(len(cfg.designs) >= 1, "at least one design is required")
        check(all(isinstance(n, int) and n >= 10 for n in cfg.n_grid if n is not None),
              "n_grid entries must be integers >= 10")
        check(isinstance(cfg.oracle_draws, int) and cfg.oracle_draws >= 100_000, "oracle_draws must be >= 1e5")
    if cfg.command == "simulate":
        check(isinstance(cfg.replications, int) and cfg.replications >= 1, "replications must be positive")
    if cfg.command != "estimate":
        check(cfg.output is not None or cfg.command != "simulate", "simulate needs --output")
