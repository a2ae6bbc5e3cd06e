"""The single JSON experiment config shared by all CLI subcommands.

Sections map onto the library dataclasses; unknown keys anywhere are an
error. ``seed`` at the top level is the root seed of every command.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .augment import AugmentConfig
from .harness import ExperimentSpec, full_grid
from .io import SyntheticSpec
from .model import PRESETS
from .train import TrainConfig

SEED_ENV = "MILMIX_SEED"


class ConfigError(ValueError):
    pass


_TRAIN_KEYS = ("epochs", "lr", "batch_size", "cosine_decay", "weight_decay", "grad_clip")
_MODEL_KEYS = ("H", "E", "query_activation", "aux_loss_weight")


def defaults() -> dict:
    tc = TrainConfig()
    syn = asdict(SyntheticSpec())
    syn["seed"] = None
    return {
        "seed": 0,
        "dataset": {"manifest": None},
        "synthetic": syn,
        "model": {"preset": "2/2", "H": 128, "E": 128, "query_activation": "identity", "aux_loss_weight": 0.0},
        "train": {k: getattr(tc, k) for k in _TRAIN_KEYS},
        "augment": AugmentConfig().to_dict(),
        "experiment": {
            "grid": "custom",
            "presets": ["EMB", "2/2"],
            "augments": [AugmentConfig().to_dict()],
            "repetitions": 32,
            "train_fraction": 0.8,
            "stratified": True,
            "share_splits": True,
        },
        "analysis": {"n_pairs": 10000, "mode": "wsi_first"},
    }


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        path = f"{where}.{k}" if where else k
        if k not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {path!r} must be an object")
            out[k] = _merge(base[k], v, path)
        else:
            out[k] = v
    return out


def _augment(d: dict, where: str) -> AugmentConfig:
    allowed = {f.name for f in fields(AugmentConfig)}
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown config key(s) {sorted(extra)} in {where}")
    try:
        return AugmentConfig(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class Config:
    raw: dict
    # relative manifest paths resolve against the config file's directory
    base_dir: Path = Path(".")

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def synthetic_spec(self) -> SyntheticSpec:
        s = dict(self.raw["synthetic"])
        if s.get("seed") is None:
            s["seed"] = self.seed
        try:
            spec = SyntheticSpec(**s)
            spec.validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"synthetic: {exc}") from exc
        return spec

    def dataset_source(self):
        manifest = self.raw["dataset"]["manifest"]
        return self.synthetic_spec() if manifest is None else str(self.base_dir / manifest)

    def augment(self) -> AugmentConfig:
        return _augment(self.raw["augment"], "augment")

    def train_config(self, augment: AugmentConfig | None = None) -> TrainConfig:
        t = self.raw["train"]
        try:
            return TrainConfig(augment=augment or self.augment(), seed=self.seed, **t)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"train: {exc}") from exc

    def model_options(self) -> dict:
        return {k: self.raw["model"][k] for k in _MODEL_KEYS}

    def preset(self) -> str:
        p = self.raw["model"]["preset"]
        if p not in PRESETS:
            raise ConfigError(f"model.preset: unknown preset {p!r}; expected one of {list(PRESETS)}")
        return p

    def experiment_spec(self) -> ExperimentSpec:
        e = self.raw["experiment"]
        augments = tuple(_augment(a, f"experiment.augments[{i}]") for i, a in enumerate(e["augments"]))
        if e["grid"] == "full":
            cells = tuple(full_grid())
        elif e["grid"] == "custom":
            cells = None
        else:
            raise ConfigError(f"experiment.grid must be 'custom' or 'full', got {e['grid']!r}")
        try:
            return ExperimentSpec(
                dataset=self.dataset_source(),
                presets=tuple(e["presets"]),
                augments=augments,
                repetitions=int(e["repetitions"]),
                seed=self.seed,
                train_fraction=float(e["train_fraction"]),
                stratified=bool(e["stratified"]),
                share_splits=bool(e["share_splits"]),
                train=self.train_config(AugmentConfig()),
                model_options=self.model_options(),
                cells=cells,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"experiment: {exc}") from exc


def load_config(path=None, seed: int | None = None) -> Config:
    """Defaults, then the file, then ``seed``.

    ``MILMIX_SEED`` is used only when neither the file nor ``seed`` sets one.
    """
    raw = defaults()
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        raw = _merge(raw, user)
    if seed is not None:
        raw["seed"] = int(seed)
    elif "seed" not in user and os.environ.get(SEED_ENV):
        try:
            raw["seed"] = int(os.environ[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    if not isinstance(raw["seed"], int) or raw["seed"] < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {raw['seed']!r}")
    return Config(raw, Path(path).parent if path is not None else Path("."))
