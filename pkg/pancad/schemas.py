from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from pancad.constants import (
    DEFAULT_EPSILON_MM,
    DEFAULT_ETA,
    DEFAULT_K_MAX,
    FEATURE_LINE_WIDTH_PX,
    FEATURE_SCALE_PPM,
    LINE_WIDTH_PX,
    MAX_CANVAS_PIXELS,
    PARALLEL_ANGLE_TOL,
    PYRAMID_CHANNELS,
    PYRAMID_LEVELS,
    VOTE_SAMPLES,
    WALL_THICKNESS_MM,
)


class BaseSchema(BaseModel):
    model_config = ConfigDict(
        validate_assignment=True, populate_by_name=True, extra="forbid"
    )


class GraphConfig(BaseSchema):
    epsilon: float = Field(DEFAULT_EPSILON_MM, gt=0)
    eta: float = Field(DEFAULT_ETA, gt=0, le=1)
    k_max: int = Field(DEFAULT_K_MAX, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    parallel_angle_tol: float = Field(PARALLEL_ANGLE_TOL, gt=0)


class RasterConfig(BaseSchema):
    scale: float = Field(0.1, gt=0)  # pixels per mm
    line_width_px: float = Field(LINE_WIDTH_PX, gt=0)
    max_pixels: int = Field(MAX_CANVAS_PIXELS, ge=1)
    vote_samples: int = Field(VOTE_SAMPLES, ge=2)


class FeatureConfig(BaseSchema):
    scale: float = Field(FEATURE_SCALE_PPM, gt=0)
    levels: int = Field(PYRAMID_LEVELS, ge=1)
    channels: int = Field(PYRAMID_CHANNELS, ge=1, le=PYRAMID_CHANNELS)
    line_width_px: float = Field(FEATURE_LINE_WIDTH_PX, gt=0)
    max_pixels: int = Field(MAX_CANVAS_PIXELS, ge=1)
    use_spatial: bool = True
    use_type: bool = True
    use_cnn: bool = True

    @property
    def dimension(self) -> int:
        dim = 0
        if self.use_spatial:
            dim += 3
        if self.use_type:
            dim += 3
        if self.use_cnn:
            dim += self.levels * self.channels
        return dim

    @model_validator(mode="after")
    def check_any_feature(self):
        if not (self.use_spatial or self.use_type or self.use_cnn):
            raise ValueError("At least one feature group must be enabled.")
        return self


class TrainConfig(BaseSchema):
    lr_max: float = Field(1e-4, gt=0)
    lr_min: float = Field(0.0, ge=0)
    iterations: int = Field(40_000, ge=1)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    margin: float = Field(0.35, ge=0, lt=1)
    scale: float = Field(30.0, gt=0)
    loss_lambda: float = Field(3.0, ge=0, alias="lambda")
    hidden: tuple[int, int, int] = (64, 64, 64)
    seed: int = Field(0, ge=0, lt=2**64)
    weighted_loss: bool = True
    weight_mode: Literal["frequency", "inverse"] = "frequency"
    am_softmax: bool = True
    log_every: int = Field(100, ge=1)

    @field_validator("hidden")
    def check_hidden(cls, value: tuple[int, int, int]) -> tuple[int, int, int]:
        if any(width < 1 for width in value):
            raise ValueError(f"Hidden widths must be positive, got {value}.")
        return value

    @model_validator(mode="after")
    def check_lr_range(self):
        if self.lr_min > self.lr_max:
            raise ValueError("lr_min must not exceed lr_max.")
        return self


class SynthConfig(BaseSchema):
    seed: int = Field(0, ge=0, lt=2**64)
    rows: int = Field(3, ge=1, le=12)
    cols: int = Field(3, ge=1, le=12)
    margin_mm: float = Field(1000.0, ge=0)
    wall_thickness: float = Field(WALL_THICKNESS_MM, gt=0)
    door_density: float = Field(0.5, ge=0, le=1)
    window_density: float = Field(0.5, ge=0, le=1)
    parking_density: float = Field(0.15, ge=0, le=1)
    furniture_density: float = Field(0.6, ge=0, le=1)
    class_set: Literal["synth5", "full"] = "synth5"
    classes: list[str] | None = None
    overlap_free: bool = False


class NoiseConfig(BaseSchema):
    flip_prob: float = Field(0.0, ge=0, le=1)
    drop_prob: float = Field(0.0, ge=0, le=1)
    jitter_mm: float = Field(0.0, ge=0)
    min_score: float = Field(1.0, ge=0, le=1)


class RunConfig(BaseSchema):
    command: str
    inputs: list[Path] = []
    output: Path | None = None
    seed: int = Field(0, ge=0, lt=2**64)
    threads: int = Field(1, ge=1)

    @field_validator("inputs")
    def check_inputs_exist(cls, value: list[Path]) -> list[Path]:
        for path in value:
            if not path.exists():
                raise ValueError(f"Input path '{path}' does not exist.")
        return value
