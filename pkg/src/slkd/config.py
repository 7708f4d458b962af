"""Configuration records and strict JSON parsing.

Defaults for the optimizer, schedule and loss weights are the published
training settings; patch size, batch size and step count default to desk
scale (patch 32, batch 4, 2000 steps).
"""
from __future__ import annotations

import json
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, strict=True)


class NetConfig(_Strict):
    levels: int = Field(4, ge=2)
    blocks: tuple[int, ...] = (4, 6, 6, 8)
    base_dim: int = Field(16, ge=4)
    kernel: int = Field(3, ge=1)
    activation: Literal["gelu", "relu"] = "gelu"
    unified_dim: int = Field(16, ge=1)
    unified_level: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if len(self.blocks) != self.levels:
            raise ValueError(f"blocks has {len(self.blocks)} entries but levels is {self.levels}")
        if any(b < 0 for b in self.blocks):
            raise ValueError("blocks must be non-negative")
        if self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        if self.unified_level > self.levels:
            raise ValueError("unified_level exceeds levels")
        return self

    def dim(self, level: int) -> int:
        """Channel width at 1-based ``level``."""
        return self.base_dim * 2 ** (level - 1)


DEFAULT_TEACHER = NetConfig()
DEFAULT_STUDENT = NetConfig(blocks=(1, 2, 2, 4), base_dim=8)


class NetSection(_Strict):
    teacher: NetConfig = DEFAULT_TEACHER
    student: NetConfig = DEFAULT_STUDENT


class LossConfig(_Strict):
    alpha1: float = Field(0.5, ge=0)
    alpha2: float = Field(0.1, ge=0)
    use_nc: bool = True
    use_et: bool = True
    teacherB_input: Literal["clean", "degraded"] = "clean"


class TrainConfig(_Strict):
    steps: int = Field(2000, ge=0)
    batch: int = Field(4, ge=1)
    patch: int = Field(32, ge=8)
    lr: float = Field(1e-4, gt=0)
    lr_min: float = Field(1e-6, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    weight_decay: float = Field(1e-4, ge=0)
    eps: float = Field(1e-8, gt=0)
    seed: int = Field(0, ge=0)
    eval_every: int = Field(200, ge=0)

    @model_validator(mode="after")
    def _check(self):
        if self.lr_min > self.lr:
            raise ValueError("lr_min exceeds lr")
        return self


class ExtractorConfig(_Strict):
    radius: int = Field(3, ge=1)
    sigma: float = Field(7 / 6, gt=0)
    C: float = Field(1e-3, gt=0)
    scales: int = Field(1, ge=1)
    piqe_block: int = Field(8, ge=4)

    def mscn_params(self):
        from .nss import MscnParams

        return MscnParams(self.radius, self.sigma, self.C)


class DataConfig(_Strict):
    root: str
    count: int = Field(80, ge=1)
    size: tuple[int, int] = (64, 64)
    kind: Literal["noise", "blur", "rain"] = "noise"
    params: dict[str, float] = Field(default_factory=dict)
    seed: int = Field(0, ge=0)
    holdout: float = Field(0.2, ge=0, lt=1)

    def manifest(self):
        from .data import DEFAULT_PARAMS, DatasetManifest

        params = {**DEFAULT_PARAMS[self.kind], **self.params}
        return DatasetManifest(self.root, self.count, self.size, self.kind, params,
                               self.seed, self.holdout)


class RunConfig(_Strict):
    net: NetSection = NetSection()
    train: TrainConfig = TrainConfig()
    data: DataConfig
    loss: LossConfig = LossConfig()
    extractor: ExtractorConfig = ExtractorConfig()

    @model_validator(mode="after")
    def _check(self):
        for name in ("teacher", "student"):
            cfg = getattr(self.net, name)
            if self.train.patch % 2 ** (cfg.levels - 1):
                raise ValueError(f"train.patch {self.train.patch} not divisible by "
                                 f"2^{cfg.levels - 1} required by net.{name}")
        return self

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


def _format_error(exc: ValidationError) -> ConfigError:
    err = exc.errors()[0]
    path = ".".join(str(p) for p in err["loc"])
    return ConfigError(path, err["msg"])


def parse_config(text: str) -> RunConfig:
    """Strictly parse a run configuration; errors name the JSON path."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"malformed JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("", "top level must be a JSON object")
    try:
        return RunConfig.model_validate_json(text)
    except ValidationError as exc:
        raise _format_error(exc) from None


def load_config(path) -> RunConfig:
    with open(path) as f:
        return parse_config(f.read())


def net_config_from_json(text: str) -> NetConfig:
    try:
        return NetConfig.model_validate_json(text)
    except ValidationError as exc:
        raise _format_error(exc) from None
