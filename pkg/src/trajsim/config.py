"""Run configuration: defaults, named presets, JSON files and flag overrides.

Precedence is flags > config file > preset > defaults. Every run writes the
fully resolved configuration next to its outputs.
"""
from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

DATA_ROOT_ENV = "TRAJSIM_DATA_ROOT"

ALPHA_SWEEP = (-50, -10, -1, -0.1, -0.01, 0.001, 0.1, 1, 10, 50)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data: str | None = None
    data_format: str = "auto"  # auto | dat | csv
    model: dict = field(default_factory=lambda: {
        "kind": "mf", "dim": 32, "lam": 0.1, "epochs": 10, "seed": 0,
        "hidden": 32, "lr": 0.01, "max_len": 50, "batch_size": 64,
    })
    model_path: str | None = None
    user_model: dict = field(default_factory=lambda: {
        "choice": {"variant": "uniform"},
        "feedback": {"variant": "positive"},
        "seed": {"variant": "real_history"},
    })
    cohorts: list[dict] = field(default_factory=list)
    T: int = 150
    k: int = 10
    n_users: int | None = None  # None: every dataset user (real seeds) or 1000 (random seeds)
    popularity_mode: str = "raw_count"
    rho0: float = 1000.0
    split: str | None = None
    master_seed: int = 0
    threads: int = 1
    out: str = "runs/latest"
    plots: bool = True
    preset: str | None = None

    def validate(self, need_model: bool = False) -> "RunConfig":
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.n_users is not None and self.n_users < 1:
            raise ConfigError("n_users must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.popularity_mode not in ("raw_count", "percentile"):
            raise ConfigError(f"popularity_mode must be raw_count or percentile, got {self.popularity_mode!r}")
        if self.data_format not in ("auto", "dat", "csv"):
            raise ConfigError(f"unknown data_format {self.data_format!r}")
        if self.split not in (None, "seed_quartile"):
            raise ConfigError(f"unknown split {self.split!r}")
        m = self.model
        if m.get("kind") not in ("mf", "rnn"):
            raise ConfigError(f"model kind must be mf or rnn, got {m.get('kind')!r}")
        if int(m.get("epochs", 1)) < 1:
            raise ConfigError("epochs must be >= 1")
        if int(m.get("dim", 1)) < 1 or int(m.get("hidden", 1)) < 1:
            raise ConfigError("dim and hidden must be >= 1")
        if float(m.get("lam", 0.0)) < 0:
            raise ConfigError("lambda must be non-negative")
        if float(m.get("lr", 0.0)) < 0:
            raise ConfigError("lr must be non-negative")
        if self.data is None:
            raise ConfigError("no dataset given (--data)")
        if not Path(self.data).exists():
            raise ConfigError(f"dataset file not found: {self.data}")
        if need_model:
            if self.model_path is None:
                raise ConfigError("no model snapshot given (--model-path)")
            if not Path(self.model_path).exists():
                raise ConfigError(f"model snapshot not found: {self.model_path}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return merge(cls(), obj)

    def cohort_specs(self) -> list[tuple[str, dict]]:
        """(name, user-model block) per cohort; a single unnamed cohort if none listed."""
        if not self.cohorts:
            return [("main", self.user_model)]
        out = []
        for c in self.cohorts:
            spec = _deep_update(copy.deepcopy(self.user_model), c.get("user_model", {}))
            out.append((str(c["name"]), spec))
        return out


def _deep_update(base: dict, upd: dict) -> dict:
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = copy.deepcopy(v)
    return base


def merge(cfg: RunConfig, overrides: dict) -> RunConfig:
    d = cfg.to_dict()
    _deep_update(d, overrides)
    return RunConfig(**d)


def _beta(beta: int) -> dict:
    return {"user_model": {"feedback": {"variant": "beta_preference", "beta": beta}}}


PRESETS: dict[str, dict] = {
    # uniform choice, positive feedback, real histories, 150 steps
    "ml1m-unbiased": {
        "user_model": {"choice": {"variant": "uniform"}, "feedback": {"variant": "positive"},
                       "seed": {"variant": "real_history"}},
        "T": 150, "k": 10, "popularity_mode": "raw_count",
    },
    "feedback-compare": {
        "user_model": {"choice": {"variant": "uniform"}, "feedback": {"variant": "positive"},
                       "seed": {"variant": "real_history"}},
        "cohorts": [{"name": "positive"}, {"name": "beta+1", **_beta(1)},
                    {"name": "beta-1", **_beta(-1)}],
        "T": 150, "k": 10, "popularity_mode": "raw_count", "rho0": 1000.0,
    },
    "selection-preference": {
        "user_model": {"choice": {"variant": "alpha_preference"}, "feedback": {"variant": "positive"},
                       "seed": {"variant": "real_history"}},
        "cohorts": [{"name": f"alpha={a}", "user_model": {"choice": {"alpha": a}}}
                    for a in (-10, -1, 0, 1, 10)],
        "T": 150, "k": 10, "popularity_mode": "percentile",
    },
    "alpha-sweep": {
        "user_model": {"choice": {"variant": "alpha_preference"}, "feedback": {"variant": "positive"},
                       "seed": {"variant": "random_single"}},
        "cohorts": [{"name": f"alpha={a}", "user_model": {"choice": {"alpha": a}}}
                    for a in ALPHA_SWEEP],
        "T": 50, "k": 10, "popularity_mode": "percentile", "split": "seed_quartile",
    },
    "seed-quartiles": {
        "user_model": {"choice": {"variant": "uniform"}, "feedback": {"variant": "positive"},
                       "seed": {"variant": "random_single"}},
        "T": 50, "k": 10, "popularity_mode": "percentile", "split": "seed_quartile",
    },
}


def resolve_data_path(path: str | None) -> str | None:
    """Relative dataset paths are looked up under $TRAJSIM_DATA_ROOT when set."""
    if path is None:
        return None
    root = os.environ.get(DATA_ROOT_ENV)
    p = Path(path)
    if root and not p.is_absolute():
        p = Path(root) / p
    return str(p.resolve()) if p.exists() else str(p)


def load_config(config_file: str | None = None, preset: str | None = None,
                overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    file_obj = {}
    if config_file is not None:
        try:
            file_obj = json.loads(Path(config_file).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {config_file}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_file} is not valid JSON: {exc}") from exc
        RunConfig.from_dict(file_obj)  # key check
    preset = (overrides or {}).get("preset") or file_obj.get("preset") or preset
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        cfg = merge(cfg, PRESETS[preset])
        cfg.preset = preset
    cfg = merge(cfg, file_obj)
    cfg = merge(cfg, overrides or {})
    cfg.data = resolve_data_path(cfg.data)
    if cfg.model_path is not None:
        cfg.model_path = str(Path(cfg.model_path).resolve()) if Path(cfg.model_path).exists() \
            else cfg.model_path
    return cfg
