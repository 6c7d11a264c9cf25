"""Pipeline configuration: one JSON file drives every subcommand.

The file is strict — unknown keys anywhere are rejected so typos fail
loudly instead of silently running defaults.  Command-line flags override
file values after loading.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields

from .errors import ConfigError, DataError
from .model import ModelConfig
from .noising import NoiseConfig, SummaryFilter
from .training import TrainConfig

CONFIG_SCHEMA_VERSION = 1

# fixed artifact names inside the workdir; manifests sit next to each one
ARTIFACTS = {
    "corpus": "corpus.jsonl",
    "references": "references.jsonl",
    "eval_products": "eval_products.json",
    "vocab": "vocab.json",
    "idf": "idf.json",
    "bilm": "bilm.bin",
    "lda": "lda.bin",
    "pairs": "pairs.jsonl",
    "model": "model.ck",
    "train_log": "train_log.jsonl",
    "summaries": "summaries.jsonl",
    "report": "report.json",
    "ablations": "ablations.jsonl",
}


@dataclass
class PipelineConfig:
    seed: int = 0
    workdir: str = "artifacts"
    vocab_size: int = 50_000
    lm_order: int = 3
    topic_count: int = 50
    lda_iterations: int = 60
    lda_infer_iterations: int = 25
    lda_alpha: float | None = None   # None -> the 50/topic_count default
    pair_count: int = 2_000
    pretrain_epochs: int = 1
    dev_fraction: float = 0.05
    dev_limit: int = 32
    beam_size: int = 5
    max_len: int = 30
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    filter: SummaryFilter = field(default_factory=SummaryFilter)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> "PipelineConfig":
        if self.vocab_size < 5:
            raise ConfigError("vocab_size must be at least 5")
        if self.pair_count < 1 or self.beam_size < 1 or self.max_len < 1:
            raise ConfigError("pair_count, beam_size and max_len must be >= 1")
        if self.topic_count < 2:
            raise ConfigError("topic_count must be >= 2")
        if not 0.0 <= self.dev_fraction < 1.0:
            raise ConfigError("dev_fraction must lie in [0, 1)")
        if self.lm_order < 1 or self.lda_iterations < 1 or self.pretrain_epochs < 0:
            raise ConfigError("lm_order and lda_iterations must be >= 1")
        if self.lda_alpha is not None and self.lda_alpha <= 0:
            raise ConfigError("lda_alpha must be positive when given")
        self.noise.validate()
        self.filter.validate()
        self.model.validate()
        self.train.validate()
        return self

    def to_dict(self) -> dict:
        out = {"version": CONFIG_SCHEMA_VERSION}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.to_dict() if hasattr(value, "to_dict") else value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        version = d.pop("version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema version {version!r}")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown pipeline config keys: {sorted(unknown)}")
        nested = {
            "noise": NoiseConfig,
            "filter": SummaryFilter,
            "model": ModelConfig,
            "train": TrainConfig,
        }
        kwargs = {}
        for key, value in d.items():
            if key in nested:
                if not isinstance(value, dict):
                    raise ConfigError(f"config key {key!r} must be an object")
                kwargs[key] = nested[key].from_dict(value)
            else:
                kwargs[key] = value
        return cls(**kwargs).validate()

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except FileNotFoundError as exc:
            raise DataError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must contain a JSON object")
        return cls.from_dict(raw)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    def artifact(self, name: str) -> str:
        return os.path.join(self.workdir, ARTIFACTS[name])
