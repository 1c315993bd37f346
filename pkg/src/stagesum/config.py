"""Run configuration: one JSON file fully describes a pipeline stage."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any, Optional

from .model import ModelConfig
from .training import TrainConfig

OUTPUT_ROOT_ENV = "STAGESUM_OUT"


def output_root() -> str:
    return os.environ.get(OUTPUT_ROOT_ENV, ".")


@dataclass
class RunConfig:
    """Full experiment description; a run is reproducible from this alone."""

    seed: int = 0
    out_dir: str = "run"
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    vocab: Optional[str] = None
    corpus: dict = field(default_factory=dict)        # {"train": path, "dev": path}
    limits: dict = field(default_factory=dict)        # {"source": int, "target": int}
    scheme: Optional[dict] = None                     # {"encoder":..., "decoder":...}
    partial: Optional[dict] = None                    # {"source": path, "k": int}
    checkpoint: Optional[str] = None
    selection: dict = field(default_factory=lambda: {"mode": "none"})
    decode: dict = field(default_factory=lambda: {"mode": "greedy"})
    generate: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)          # {"references": path, "hypotheses": path}

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
        known = {f_.name for f_ in cls.__dataclass_fields__.values()}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_file(self, path) -> None:
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write("\n")

    # -- resolved views -----------------------------------------------------

    def resolve(self, path: Optional[str]) -> Optional[str]:
        if path is None:
            return None
        if os.path.isabs(path):
            return path
        return os.path.join(output_root(), path)

    @property
    def run_dir(self) -> str:
        return self.resolve(self.out_dir)

    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.model)

    def train_config(self) -> TrainConfig:
        cfg = dict(self.train)
        cfg.setdefault("seed", self.seed)
        return TrainConfig(**cfg)

    def source_limit(self) -> int:
        return int(self.limits.get("source", self.model_config().encoder_positions))

    def target_limit(self) -> int:
        return int(self.limits.get("target", self.model_config().decoder_positions))
