# config.py
from __future__ import annotations
import json
import os
from enum import Enum
from typing import Optional

from pydantic import BaseModel, Field, model_validator


_CONFIG_PATH = "alpine.json"


class Schedule(str, Enum):
    NONE = "none"
    ALL = "all"
    EVEN = "even"
    ODD = "odd"


class ReportFormat(str, Enum):
    JSON = "json"
    CSV = "csv"


class ModelDims(BaseModel):
    """
    Encoder hyperparameters. d_mha is the hidden size (d), h the head count,
    d_ffnn the feed-forward width, max_len the longest sequence n.
    """

    d_mha: int = Field(gt=0)
    h: int = Field(gt=0)
    d_ffnn: int = Field(gt=0)
    layers: int = Field(gt=0)
    max_len: int = Field(gt=1)
    vocab_size: int = Field(default=1024, gt=3)
    num_classes: int = Field(default=2, gt=0)

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def _check_shapes(self) -> "ModelDims":
        if self.d_mha % self.h != 0:
            raise ValueError(f"d_mha={self.d_mha} is not divisible by h={self.h}")
        if self.d_ffnn < self.d_mha:
            raise ValueError(f"d_ffnn={self.d_ffnn} must be >= d_mha={self.d_mha}")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_mha // self.h

    @classmethod
    def preset(cls, name: str) -> "ModelDims":
        try:
            return DIMS_PRESETS[name]
        except KeyError:
            raise ValueError(
                f"Unknown dims preset {name!r}; expected one of {sorted(DIMS_PRESETS)}"
            ) from None


DIMS_PRESETS: dict[str, ModelDims] = {
    "desk": ModelDims(
        d_mha=64, h=4, d_ffnn=256, layers=12, max_len=128, vocab_size=1024
    ),
    "desk-small": ModelDims(
        d_mha=64, h=4, d_ffnn=256, layers=4, max_len=128, vocab_size=1024
    ),
    # CodeBERT-family shape
    "paper": ModelDims(
        d_mha=768, h=12, d_ffnn=3072, layers=12, max_len=512, vocab_size=50265
    ),
}


class PruneConfig(BaseModel):
    alpha: float = Field(default=1.0, ge=0.0)
    schedule: Schedule = Schedule.NONE
    merge: bool = True

    model_config = {"frozen": True}


class HarnessSettings(BaseModel):
    batch_size: int = Field(default=16, ge=1)
    seed: int = 0
    workers: int = Field(default=1, ge=1)
    init_scale: float = Field(default=0.02, gt=0.0)
    embedding_scale: float = Field(default=1.0, gt=0.0)
    pad_to_max_len: bool = True
    report_format: ReportFormat = ReportFormat.JSON


class AppConfig(BaseModel):
    dims_preset: str = "desk"
    dims: Optional[ModelDims] = None
    prune: PruneConfig = PruneConfig()
    harness: HarnessSettings = HarnessSettings()
    log_level: str = "INFO"

    @classmethod
    def load(cls, path: Optional[str] = None) -> "AppConfig":
        p = path or _CONFIG_PATH
        if not os.path.exists(p):
            if path is None:
                # no config file is fine, built-in defaults apply
                return cls()
            raise FileNotFoundError(f"Config file not found: {p}")
        with open(p, "r", encoding="utf-8") as f:
            raw = json.load(f)
        return cls.model_validate(raw)

    def resolved_dims(self) -> ModelDims:
        return self.dims or ModelDims.preset(self.dims_preset)


_cfg: Optional[AppConfig] = None


def load_config(path: Optional[str] = None, reload: bool = False) -> AppConfig:
    global _cfg
    if _cfg is None or reload:
        _cfg = AppConfig.load(path)
    return _cfg


def get_dims() -> ModelDims:
    return load_config().resolved_dims()


def get_prune_config() -> PruneConfig:
    return load_config().prune


def get_harness_settings() -> HarnessSettings:
    return load_config().harness
