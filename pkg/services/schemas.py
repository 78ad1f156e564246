# services/schemas.py
from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

_BOOL = {"1", "true", "yes", "on", "y", "t"}


def _split_list(v):
    if isinstance(v, str):
        return [p.strip() for p in v.split(",") if p.strip()]
    return v


class RunConfig(BaseModel):
    """
    Every hyperparameter of a run. File keys are the upper-case field names
    (LR=1e-4, WIDTHS=8,16,32,64,64, ...); unknown keys are rejected.
    """

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    seed: int = 0
    dtype: Literal["float32", "float64"] = "float32"

    # optimizer
    lr: float = Field(1e-4, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)

    # training
    batch_size: int = Field(16, ge=1)
    steps: int = Field(2000, ge=0)
    log_every: int = Field(50, ge=1)
    margin: float = Field(0.1, ge=0)
    l1_coeff: float = Field(5e-6, ge=0)
    train_fraction: float = Field(0.7, gt=0, lt=1)
    original_code: Literal["sum", "encode"] = "sum"
    prefetch: bool = True

    # model
    crop_size: int = Field(64, ge=32)
    widths: List[int] = Field(default_factory=lambda: [8, 16, 32, 64, 64])
    code_dim: int = Field(64, ge=1)
    hidden: List[int] = Field(default_factory=lambda: [256, 64])
    bn_momentum: float = Field(0.9, ge=0, lt=1)
    zero_head: bool = False
    n_voxels: Optional[int] = Field(None, ge=1)  # when set, datasets must match it

    # autoencoder
    ae_epochs: int = Field(200, ge=1)
    ae_lr: float = Field(1e-3, gt=0)
    ae_batch: int = Field(0, ge=0)

    # alignment
    delay_s: float = Field(2.0, ge=0)
    median_window: int = Field(40, ge=1)
    blink_max_ms: int = Field(300, ge=0)
    fmri_target_hz: Optional[float] = None  # defaults to the frame rate

    # evaluation / inference
    hit_threshold: float = Field(0.5, ge=0, le=1)
    z_threshold: float = Field(3.0, ge=0)
    individual_rescale: Literal["clamp", "minmax"] = "clamp"
    sweep_delays: List[float] = Field(default_factory=lambda: [0.0, 2.0, 4.0, 6.0])
    sweep_steps: int = Field(500, ge=0)

    # synthetic generator
    gen_width: int = Field(320, ge=32)
    gen_height: int = Field(180, ge=32)
    gen_duration_s: float = Field(600.0, gt=0)
    gen_fps: float = Field(25.0, gt=0)
    gen_objects: int = Field(3, ge=0)
    gen_voxels: int = Field(256, ge=1)
    gen_networks: int = Field(8, ge=0)
    gen_subjects: int = Field(2, ge=1)
    gen_tr_hz: float = Field(0.5, gt=0)
    gen_delay_s: float = Field(2.0, ge=0)
    gen_noise: float = Field(0.1, ge=0)
    gen_sparsity: float = Field(0.1, gt=0, le=1)
    gen_segment_s: float = Field(8.0, gt=0)
    gen_deviation: float = Field(0.2, ge=0, le=1)
    gen_moving_fraction: float = Field(0.67, ge=0, le=1)
    gen_jitter_px: float = Field(4.0, ge=0)
    gen_saccade_rate: float = Field(0.2, ge=0)
    gen_blink_rate: float = Field(0.1, ge=0)
    gen_blink_ms: int = Field(150, ge=0)
    gen_offscreen_prob: float = Field(0.002, ge=0, le=1)
    gen_hrf_peak_s: float = Field(5.0, gt=0)
    gen_hrf_under_s: float = Field(15.0, gt=0)
    gen_hrf_ratio: float = Field(6.0, gt=0)
    gen_spont_ar: float = Field(0.9, ge=0, lt=1)
    gen_normalize: bool = True

    # runtime
    threads: Optional[int] = Field(None, ge=1)
    log_level: str = "INFO"
    reports_dir: str = "reports"
    report_xlsx: bool = False

    @field_validator("widths", "hidden", "sweep_delays", mode="before")
    @classmethod
    def _csv_list(cls, v):
        return _split_list(v)

    @field_validator("widths")
    @classmethod
    def _five_widths(cls, v: List[int]):
        if len(v) != 5 or any(w < 1 for w in v):
            raise ValueError("WIDTHS needs five positive channel counts")
        return v

    @field_validator("sweep_delays")
    @classmethod
    def _delays(cls, v: List[float]):
        if not v or any(d < 0 for d in v):
            raise ValueError("SWEEP_DELAYS needs one or more delays >= 0")
        return v

    @field_validator("crop_size")
    @classmethod
    def _crop32(cls, v: int):
        if v % 32:
            raise ValueError(f"CROP_SIZE must be divisible by 32, got {v}")
        return v

    @field_validator("zero_head", "prefetch", "report_xlsx", "gen_normalize", mode="before")
    @classmethod
    def _bool(cls, v):
        if isinstance(v, str):
            return v.strip().lower() in _BOOL
        return v

    @field_validator("log_level")
    @classmethod
    def _level(cls, v: str):
        return (v or "INFO").strip().upper()

    @model_validator(mode="after")
    def _crop_fits(self):
        if self.crop_size > min(self.gen_width, self.gen_height):
            raise ValueError(f"CROP_SIZE {self.crop_size} larger than generated frame "
                             f"{self.gen_width}x{self.gen_height}")
        return self

    def model_dims(self) -> Dict[str, object]:
        """The part of the config that fixes tensor shapes."""
        return {"crop_size": self.crop_size, "code_dim": self.code_dim,
                "widths": list(self.widths), "hidden": list(self.hidden)}


class SubjectFiles(BaseModel):
    subject_id: str
    gaze: str
    fmri: str


class DatasetManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: int = 1
    root: Path
    frame_dir: str = "frames"
    frame_ext: Literal["ppm", "png"] = "ppm"
    frame_count: int = Field(..., ge=1)
    fps: float = Field(..., gt=0)
    frame_width: int = Field(..., ge=1)
    frame_height: int = Field(..., ge=1)
    screen_width: int = Field(..., ge=1)
    screen_height: int = Field(..., ge=1)
    fmri_rate_hz: float = Field(..., gt=0)
    fmri_volumes: int = Field(..., ge=2)
    n_voxels: int = Field(..., ge=1)
    subjects: List[SubjectFiles]
    brain_mask: Optional[str] = None
    ground_truth: Optional[str] = None

    @field_validator("subjects")
    @classmethod
    def _unique(cls, v: List[SubjectFiles]):
        if not v:
            raise ValueError("manifest lists no subjects")
        ids = [s.subject_id for s in v]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate subject ids: {ids}")
        return v

    def frame_path(self, index: int) -> Path:
        return self.root / self.frame_dir / f"{index:06d}.{self.frame_ext}"

    def subject(self, subject_id: str) -> SubjectFiles:
        for s in self.subjects:
            if s.subject_id == subject_id:
                return s
        raise KeyError(subject_id)

    @property
    def subject_ids(self) -> List[str]:
        return [s.subject_id for s in self.subjects]


class HitRateReport(BaseModel):
    hits: int = Field(..., ge=0)
    total: int = Field(..., ge=1)
    rate: float = Field(..., ge=0, le=1)
    chance: float = Field(..., ge=0, le=1)
    split: str = "all"
    mode: Literal["group", "individual"] = "group"
    missed_frames: List[int] = Field(default_factory=list)

    @property
    def misses(self) -> int:
        return self.total - self.hits

    @model_validator(mode="after")
    def _counts(self):
        if self.hits > self.total:
            raise ValueError(f"hits {self.hits} > total {self.total}")
        return self


class RelationalStatsRow(BaseModel):
    row: str
    positive: float
    negative: float
    reg_original: float
    reg_blank: float
    regularization: float
    samples: int = 0


class SweepRow(BaseModel):
    delay_s: float
    hit_rate: float
    chance: float
    positive_mean: float
    samples: int
    best: bool = False
