from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Activation = Literal["relu", "sigmoid", "identity", "softmax"]
ConstraintKind = Literal["none", "lightening", "occlusion", "blackout"]


# -- configuration -----------------------------------------------------------


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    learning_rate: float = Field(1e-3, gt=0)
    batch_size: int = Field(64, ge=1)
    epochs: int = Field(10, ge=0)
    optimizer: Literal["sgd", "adam"] = "adam"
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    rng_seed: int = Field(0, ge=0)


class CoverageConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    nc_threshold: float = Field(0.25, ge=0, lt=1)
    k: int = Field(100, ge=1)


class ReconProbConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    num_samples: int = Field(10, ge=1)
    rng_seed: int = Field(0, ge=0)


class ConstraintSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kind: ConstraintKind = "none"
    width: int = Field(0, ge=0)
    height: int = Field(0, ge=0)

    @model_validator(mode="after")
    def rectangle_required(self) -> "ConstraintSpec":
        if self.kind in ("occlusion", "blackout") and (self.width < 1 or self.height < 1):
            raise ValueError(f"{self.kind} needs a width x height rectangle")
        return self


class GenerationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)
    step_size: float = Field(0.1, gt=0)
    max_iterations: int = Field(30, ge=1)
    lam: float = Field(1.0, ge=0, alias="lambda")
    lambda1: float = 1.0
    lambda2: float = 0.1
    constraint: ConstraintSpec = Field(default_factory=ConstraintSpec)
    nc_threshold: float = Field(0.25, ge=0, lt=1)
    rng_seed: int = Field(0, ge=0)
    image_shape: tuple[int, int] | None = None


class BlobSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    num_classes: int = Field(2, ge=1)
    dim: int = Field(2, ge=1)
    n_per_class: int = Field(200, ge=0)
    separation: float = Field(10.0, gt=0)


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    source: Literal["idx", "blobs"] = "blobs"
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    invalid_images: str | None = None
    invalid_labels: str | None = None
    train_subset: int | None = Field(None, ge=1)
    calibration_subset: int | None = Field(None, ge=1)
    blobs: BlobSpec = Field(default_factory=BlobSpec)


class ModelSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    name: str = Field(..., min_length=1)
    hidden: list[int] = Field(default_factory=lambda: [8])
    activation: Literal["relu", "sigmoid"] = "relu"

    @field_validator("hidden")
    def positive_widths(cls, value: list[int]) -> list[int]:
        if any(width < 1 for width in value):
            raise ValueError("hidden widths must be positive")
        return value


class VaeSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    hidden: list[int] = Field(default_factory=lambda: [16])
    latent_dim: int = Field(16, ge=1)
    train: TrainConfig = Field(default_factory=TrainConfig)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    seed: int = Field(0, ge=0)
    data: DataConfig = Field(default_factory=DataConfig)
    models: list[ModelSpec] = Field(
        default_factory=lambda: [ModelSpec(name="model_a"), ModelSpec(name="model_b", hidden=[12])]
    )
    train: TrainConfig = Field(default_factory=TrainConfig)
    vae: VaeSpec = Field(default_factory=VaeSpec)
    coverage: CoverageConfig = Field(default_factory=CoverageConfig)
    generation: GenerationConfig = Field(default_factory=GenerationConfig)
    recon: ReconProbConfig = Field(default_factory=ReconProbConfig)
    seed_count: int = Field(50, ge=1)
    output_dir: str = "runs"

    @field_validator("models")
    def unique_names(cls, value: list[ModelSpec]) -> list[ModelSpec]:
        names = [spec.name for spec in value]
        if len(set(names)) != len(names):
            raise ValueError("model names must be unique")
        return value


# -- file documents ------------------------------------------------------------


class LayerDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")
    activation: Activation
    weights: list[list[float]]
    bias: list[float]


class NetworkDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")
    input_dim: int = Field(..., ge=1)
    layers: list[LayerDocument] = Field(..., min_length=1)


class VaeDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")
    latent_dim: int = Field(..., ge=1)
    encoder: NetworkDocument
    decoder: NetworkDocument


class LayerBoundsDocument(BaseModel):
    low: list[float]
    high: list[float]


class ProfileDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")
    layers: list[LayerBoundsDocument]


class ThresholdDocument(BaseModel):
    model_config = ConfigDict(extra="ignore")
    alpha: float
    f_measure: float = Field(..., ge=0, le=1)
    precision: float = Field(..., ge=0, le=1)
    recall: float = Field(..., ge=0, le=1)
    valid_set: str
    invalid_set: str
    false_positive_rate: float = Field(0.0, ge=0, le=1)
    false_negative_rate: float = Field(0.0, ge=0, le=1)
    separable: bool = True


class CoverageReport(BaseModel):
    nc: float = Field(..., ge=0, le=1)
    kmnc: float = Field(..., ge=0, le=1)
    nbc: float = Field(..., ge=0, le=1)
    snac: float = Field(..., ge=0, le=1)
    inputs: int = Field(..., ge=0)
    neurons: int = Field(..., ge=1)
    k: int = Field(..., ge=1)
    t: float


class SuiteRecordDocument(BaseModel):
    seed: int = Field(..., ge=0)
    iter: int = Field(..., ge=0)
    recon: float
    labels: list[int]
    valid: bool
    input: list[float]


class SuiteSummary(BaseModel):
    seeds: int
    valid: int
    invalid: int
    coverage: CoverageReport
    mode: Literal["baseline", "vae"]
    seed_digest: str
    iterations: int = 0
    validations: int = 0
    seeds_with_tests: int = 0
    nc_progress: list[float] = Field(default_factory=list)
    lam: float = 0.0


class CoverageColumns(BaseModel):
    valid: CoverageReport | None = None
    invalid: CoverageReport | None = None
    total: CoverageReport


class SuiteReport(BaseModel):
    mode: Literal["baseline", "vae"]
    valid: int
    invalid: int
    invalid_percent: float
    coverage: CoverageColumns
    nc_vectors: dict[str, str | None]


class ExperimentReport(BaseModel):
    model: str
    seed_digest: str | None = None
    suites: list[SuiteReport]


class ValidationReport(BaseModel):
    source: str
    total: int
    valid: int
    invalid: int
    invalid_percent: float
    alpha: float
