"""Run configuration: JSON-loadable, flag-overridable, typo-rejecting.

Every field has a default; unknown keys at any level raise InvalidConfig.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import InvalidConfig
from .model import ModelConfig


@dataclass
class DataConfig:
    train: str = ""                # JSONL corpus path; empty = bundled corpus
    vocab: str = ""                # vocab JSON path; empty = build from corpus
    output_dir: str = "runs/default"
    radius_cutoff: float | None = None
    strict_geometry: bool = False


@dataclass
class PretrainConfig:
    lr: float = 1e-3
    warmup: int = 50
    steps: int = 200
    batch_size: int = 32
    checkpoint_every: int = 100
    mask_ratio: float = 0.15


@dataclass
class FinetuneConfig:
    task: str = "regression"       # regression | binary | multilabel
    lr: float = 3e-4
    epochs: int = 30
    batch_size: int = 32
    warmup: int = 20
    holdout_fraction: float = 0.2


@dataclass
class RunConfig:
    seed: int = 0
    precision: str = "f32"          # f32 | f64
    tokenizer: str = "substructure"  # substructure | char
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)

    def validate(self) -> None:
        if self.precision not in ("f32", "f64"):
            raise InvalidConfig(f"precision must be f32 or f64, got {self.precision!r}")
        if self.tokenizer not in ("substructure", "char"):
            raise InvalidConfig(f"tokenizer must be substructure or char, got {self.tokenizer!r}")
        if self.model.vocab_size:
            self.model.validate()


def _fill(cls, payload: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - names
    if unknown:
        raise InvalidConfig(f"unknown key(s) {sorted(unknown)} in {where}")
    return payload


def load_run_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise InvalidConfig("config root must be a JSON object")
    top = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - top
    if unknown:
        raise InvalidConfig(f"unknown key(s) {sorted(unknown)} at config root")
    cfg = RunConfig()
    if "model" in raw:
        cfg.model = ModelConfig(**_fill(ModelConfig, raw["model"], "model"))
    if "data" in raw:
        cfg.data = DataConfig(**_fill(DataConfig, raw["data"], "data"))
    if "pretrain" in raw:
        cfg.pretrain = PretrainConfig(**_fill(PretrainConfig, raw["pretrain"], "pretrain"))
    if "finetune" in raw:
        cfg.finetune = FinetuneConfig(**_fill(FinetuneConfig, raw["finetune"], "finetune"))
    for key in ("seed", "precision", "tokenizer"):
        if key in raw:
            setattr(cfg, key, raw[key])
    cfg.validate()
    return cfg
