"""Run configuration: one YAML file with ``world``, ``model``, ``loss``, ``train``
and ``paths`` sections plus a top-level ``seed``.  Unknown keys are errors."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import InvalidConfig
from .losses import LossConfig
from .models import ModelConfig
from .synthetic import WorldConfig
from .training import TrainConfig

SECTIONS = ("seed", "world", "model", "loss", "train", "paths")
PATH_KEYS = ("data", "out", "ckpt", "log")


@dataclass
class RunConfig:
    seed: int = 0
    world: WorldConfig = field(default_factory=WorldConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        loss = self.loss.to_dict()
        loss["lambda"] = loss.pop("lam")
        return {
            "seed": self.seed,
            "world": self.world.to_dict(),
            "model": self.model.to_dict(),
            "loss": loss,
            "train": self.train.to_dict(),
            "paths": dict(self.paths),
        }

    def dump(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))
        return path


def _section(raw: dict, name: str) -> dict:
    value = raw.get(name) or {}
    if not isinstance(value, dict):
        raise InvalidConfig(f"section {name!r} must be a mapping")
    return dict(value)


def resolve(raw: dict | None, overrides: dict | None = None) -> RunConfig:
    """Build a validated RunConfig from a parsed mapping.

    ``overrides`` uses dotted keys (``train.ablation``) or ``seed``; CLI flags
    land here and win over file values.
    """
    raw = dict(raw or {})
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
    sections = {name: _section(raw, name) for name in SECTIONS if name != "seed"}
    seed = raw.get("seed", 0)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "seed":
            seed = value
            sections["world"]["seed"] = value
            sections["train"]["seed"] = value
            continue
        section, _, name = key.partition(".")
        if section not in sections or not name:
            raise InvalidConfig(f"unknown override {key!r}")
        sections[section][name] = value

    sections["world"].setdefault("seed", seed)
    sections["train"].setdefault("seed", seed)
    bad_paths = set(sections["paths"]) - set(PATH_KEYS)
    if bad_paths:
        raise InvalidConfig(f"unknown paths keys: {sorted(bad_paths)}")

    try:
        world = WorldConfig.from_dict(sections["world"])
        model_raw = sections["model"]
        model_raw.setdefault("num_classes", world.num_classes)
        model = ModelConfig.from_dict(model_raw)
        loss = LossConfig.from_dict(sections["loss"])
        train = TrainConfig.from_dict(sections["train"])
    except TypeError as e:
        raise InvalidConfig(str(e)) from e
    return RunConfig(int(seed), world, model, loss, train, sections["paths"])


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as e:
            raise InvalidConfig(f"{path}: {e}") from e
        if not isinstance(raw, dict):
            raise InvalidConfig(f"{path}: top level must be a mapping")
    return resolve(raw, overrides)
