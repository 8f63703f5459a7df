"""Run configuration: one JSON file, validated field by field, unknown keys rejected."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticError

from .diffusion import DiffusionSchedule, GuidanceConfig
from .errors import ValidationError
from .losses import LossWeights
from .network import ModelConfig
from .synth import SynthSpec
from .training import TrainConfig


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Section):
    width: int = Field(32, ge=1)
    blocks: int = Field(4, ge=1)
    state_dim: int = Field(16, ge=1)
    cond_dim: int = Field(64, ge=1)
    time_dim: int = Field(64, ge=2)
    permutations: list[list[int]] = []
    n_perms: int = Field(2, ge=1)
    perm_seed: int = 0
    reset_segments: bool = False
    ssd_method: Literal["dual", "recurrent"] = "dual"
    encoder_depth: int = Field(2, ge=0)
    window: int = Field(512, ge=1)


class DiffusionSection(_Section):
    steps: int = Field(50, ge=2)
    beta_start: float = Field(1e-4, gt=0, lt=1)
    beta_end: float = Field(2e-2, gt=0, lt=1)


class LossSection(_Section):
    pos: float = Field(1.0, ge=0)
    vel: float = Field(1.0, ge=0)
    contact: float = Field(1.0, ge=0)
    kin: float = Field(0.5, ge=0)
    align: float = Field(0.1, ge=0)
    tau: float = Field(0.07, gt=0)


class GuidanceSection(_Section):
    gamma_pos: float = Field(1.0, ge=0)
    gamma_rot: float = Field(0.25, ge=0)
    scale: float = 1.0
    enabled: bool = True


class OptimSection(_Section):
    steps: int = Field(2000, ge=1)
    lr: float = Field(2e-3, gt=0)
    min_lr: float = Field(1e-4, ge=0)
    warmup: int = Field(50, ge=0)
    batch_size: int = Field(4, ge=1)
    grad_clip: float = Field(1.0, gt=0)
    ckpt_every: int = Field(0, ge=0)
    train_limit: Optional[int] = Field(None, ge=1)


class SynthSection(_Section):
    sequences: int = Field(8, ge=1)
    duration: float = Field(5.0, gt=0)
    frame_rate: float = Field(30.0, gt=0)
    bpm: float = Field(120.0, gt=0)
    styles: int = Field(8, ge=2)
    test_styles: int = Field(2, ge=1)
    arm_amplitude: tuple[float, float] = (0.5, 1.0)
    elbow_amplitude: tuple[float, float] = (0.2, 0.6)
    leg_amplitude: tuple[float, float] = (0.3, 0.6)
    twist_amplitude: tuple[float, float] = (0.05, 0.2)
    nod_amplitude: tuple[float, float] = (0.1, 0.3)
    amplitude_jitter: float = Field(0.1, ge=0)
    music_dim: int = Field(16, ge=1)
    vision_dim: int = Field(16, ge=1)
    music_noise: float = Field(0.05, ge=0)
    vision_noise: float = Field(0.05, ge=0)


class RunConfig(_Section):
    seed: int = 0
    topology: Optional[str] = None
    data_root: Optional[str] = None
    model: ModelSection = ModelSection()
    diffusion: DiffusionSection = DiffusionSection()
    loss: LossSection = LossSection()
    guidance: GuidanceSection = GuidanceSection()
    optim: OptimSection = OptimSection()
    synth: SynthSection = SynthSection()

    # builders for the library objects
    def synth_spec(self, seed: int | None = None) -> SynthSpec:
        return SynthSpec(**self.synth.model_dump(), seed=self.seed if seed is None else seed)

    def model_settings(self) -> ModelConfig:
        d = self.model.model_dump()
        d["permutations"] = tuple(tuple(p) for p in d["permutations"])
        return ModelConfig(**d, max_step=self.diffusion.steps,
                           music_dim=self.synth.music_dim, vision_dim=self.synth.vision_dim)

    def schedule(self) -> DiffusionSchedule:
        d = self.diffusion
        return DiffusionSchedule.linear(d.steps, d.beta_start, d.beta_end)

    def loss_weights(self) -> LossWeights:
        return LossWeights(**self.loss.model_dump())

    def guidance_config(self) -> GuidanceConfig:
        return GuidanceConfig(**self.guidance.model_dump())

    def train_config(self, seed: int | None = None, steps: int | None = None) -> TrainConfig:
        d = self.optim.model_dump()
        d.pop("train_limit")
        if steps is not None:
            d["steps"] = steps
        return TrainConfig(**d, seed=self.seed if seed is None else seed)


def _format_errors(exc: PydanticError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def config_from_dict(d: dict) -> RunConfig:
    try:
        cfg = RunConfig.model_validate(d)
    except PydanticError as exc:
        raise ValidationError(f"invalid config: {_format_errors(exc)}") from exc
    # cross-field checks that the library objects enforce
    cfg.synth_spec()
    cfg.train_config()
    cfg.guidance_config()
    if cfg.diffusion.beta_start > cfg.diffusion.beta_end:
        raise ValidationError("invalid config: diffusion.beta_start must not exceed beta_end")
    return cfg


def load_config(path) -> RunConfig:
    """Parse and validate a JSON config; raises ``FileNotFoundError`` if absent."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {p} is not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise ValidationError(f"config {p} must be a JSON object")
    return config_from_dict(d)
