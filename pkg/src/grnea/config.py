"""Pipeline configuration: one JSON document, every key overridable from the CLI.

Schema (all keys optional except where the CLI makes them mandatory)::

    {
      "benchmark": "fiber" | "strain",
      "seed": 0,
      "out": "run",
      "resolution": 64,
      "n_samples": 400, "n_train": 300, "n_test": 100,
      "generator": {ResVaeConfig fields; image_size and seed are filled in},
      "reducer":   {ResVaeConfig fields; latent_dim is always 16},
      "lssvr": {"sigma_factors": [...], "gamma_grid": [...], "k_folds": 5},
      "filter": {"threshold": null, "s_max": 30, "v_min": 221,
                 "quantile": 0.95, "safety": 1.2},
      "arpso": {"iterations": 100, "latent_bound": 3.0, ArpsoConfig fields},
      "cdr": {"tau_mean": 0.15, "tau_var": 0.03, "prior_samples": 1000}
    }

``filter.threshold = null`` means "calibrate from held-out reconstructions".
"""

from __future__ import annotations

import copy
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arpso import ArpsoConfig
from .resvae import FEATURE_DIM, ResVaeConfig

DEFAULTS: dict = {
    "benchmark": "fiber",
    "seed": 0,
    "out": "run",
    "resolution": 64,
    "n_samples": 400,
    "n_train": 300,
    "n_test": 100,
    "generator": {"latent_dim": 32, "kl_weight": 1e-2, "epochs": 80},
    "reducer": {"kl_weight": 1e-4, "epochs": 40},
    "lssvr": {"sigma_factors": list(np.logspace(-1, 1, 9)), "gamma_grid": list(np.logspace(0, 6, 7)),
              "k_folds": 5},
    "filter": {"threshold": None, "s_max": 30, "v_min": 221, "quantile": 0.95, "safety": 1.2},
    "arpso": {"iterations": 100, "latent_bound": 3.0},
    "cdr": {"tau_mean": 0.15, "tau_var": 0.03, "prior_samples": 1000},
}


class ConfigError(ValueError):
    pass


def derive_seed(seed: int, stage: str) -> int:
    """Independent, reproducible sub-seed for one pipeline stage."""
    return int(np.random.SeedSequence([seed, zlib.crc32(stage.encode())]).generate_state(1)[0])


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class PipelineConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __post_init__(self):
        self.raw = _merge(DEFAULTS, self.raw)
        self.validate()

    # -- accessors ---------------------------------------------------------------
    def __getitem__(self, key):
        return self.raw[key]

    @property
    def benchmark(self) -> str:
        return self.raw["benchmark"]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def out(self) -> Path:
        return Path(self.raw["out"])

    @property
    def resolution(self) -> int:
        return int(self.raw["resolution"])

    def _vae(self, key: str, **fixed) -> ResVaeConfig:
        d = {k: v for k, v in self.raw[key].items()}
        d.update(image_size=(self.resolution, self.resolution, 3), seed=derive_seed(self.seed, key), **fixed)
        return ResVaeConfig(**d)

    def generator_config(self) -> ResVaeConfig:
        return self._vae("generator")

    def reducer_config(self) -> ResVaeConfig:
        return self._vae("reducer", latent_dim=FEATURE_DIM)

    def arpso_config(self) -> ArpsoConfig:
        d = {k: v for k, v in self.raw["arpso"].items() if k not in ("iterations", "latent_bound")}
        d["seed"] = derive_seed(self.seed, "arpso")
        return ArpsoConfig(**d)

    # -- validation ---------------------------------------------------------------
    def validate(self) -> None:
        r = self.raw
        from .fieldbench import BENCHMARKS
        if r["benchmark"] not in BENCHMARKS:
            raise ConfigError(f"unknown benchmark {r['benchmark']!r}; choose from {sorted(BENCHMARKS)}")
        for k in ("n_samples", "n_train", "n_test", "resolution"):
            if not isinstance(r[k], int) or isinstance(r[k], bool):
                raise ConfigError(f"{k} must be an integer")
        if r["n_samples"] < 1:
            raise ConfigError("n_samples must be at least 1")
        if r["n_train"] < 2 or r["n_test"] < 0 or r["n_train"] + r["n_test"] > r["n_samples"]:
            raise ConfigError("need n_train >= 2, n_test >= 0 and n_train + n_test <= n_samples")
        if r["arpso"]["iterations"] < 1 or r["arpso"]["latent_bound"] <= 0:
            raise ConfigError("arpso.iterations >= 1 and arpso.latent_bound > 0 required")
        if r["lssvr"]["k_folds"] < 2 or not r["lssvr"]["sigma_factors"] or not r["lssvr"]["gamma_grid"]:
            raise ConfigError("lssvr needs k_folds >= 2 and non-empty grids")
        thr = r["filter"]["threshold"]
        if thr is not None and thr <= 0:
            raise ConfigError("filter.threshold must be positive or null")
        try:
            self.generator_config()
            self.reducer_config()
            self.arpso_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    # -- io ---------------------------------------------------------------------------
    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "PipelineConfig":
        raw = {}
        if path is not None:
            with open(path, encoding="utf-8") as fh:
                try:
                    raw = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
            if not isinstance(raw, dict):
                raise ConfigError(f"{path} must hold a JSON object")
        return cls(_merge(raw, overrides or {}))

    def dumps(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n", encoding="utf-8")
