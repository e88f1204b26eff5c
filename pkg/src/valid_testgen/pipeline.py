"""Pipeline stages behind the command line.

Every stage reads an :class:`ExperimentConfig`, consumes artifacts written by
earlier stages from the output directory and writes its own. Artifact files
never carry wall-clock data, so reruns with the same config and seeds are
byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import ValidationError

from .coverage import ActivationProfile, coverage_of, profile, report
from .data_io import Dataset, load_idx, subset, synth_blobs
from .errors import ConfigError, ContractViolation, MissingArtifactError
from .models import (
    CoverageReport,
    ExperimentConfig,
    ExperimentReport,
    GenerationConfig,
    ReconProbConfig,
    SuiteSummary,
    TrainConfig,
    ValidationReport,
)
from .nn import Network, Trainer, accuracy, dump_document, load_model, save_model, train_classifier
from .reporting import invalid_percent, render_table, suite_report
from .testgen import generate_baseline, generate_vae_guided, load_suite_records, seed_digest, tune_lambda
from .tools import get_logger, log_operation
from .vae import InputValidator, ValidityThreshold, calibrate_threshold, load_vae, reconstruction_scores, save_vae, train_vae

logger = get_logger(__name__)

Mode = Literal["baseline", "vae"]
TUNING_SEEDS = 10


def derive_seed(master: int, stream: str) -> int:
    """Stage seed from the master seed and a stream label."""

    digest = hashlib.sha256(f"{master}:{stream}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def load_config(path: str | Path | None = None, seed: int | None = None) -> ExperimentConfig:
    if path is None:
        cfg = ExperimentConfig()
    else:
        config_path = Path(path)
        if not config_path.exists():
            raise ConfigError("Config file not found", field=str(config_path))
        try:
            cfg = ExperimentConfig.model_validate(json.loads(config_path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Config is not valid JSON ({exc.msg})", field="$") from exc
        except ValidationError as exc:
            first = exc.errors()[0]
            raise ConfigError(first["msg"], field=".".join(str(part) for part in first["loc"]) or "$") from exc
    if seed is not None:
        cfg = cfg.model_copy(update={"seed": seed})
    return _align_nc_threshold(cfg)


def _align_nc_threshold(cfg: ExperimentConfig) -> ExperimentConfig:
    """One NC threshold per run: an explicit value in either section wins, a conflict is an error."""

    generation, coverage = cfg.generation, cfg.coverage
    from_generation = "nc_threshold" in generation.model_fields_set
    from_coverage = "nc_threshold" in coverage.model_fields_set
    if from_generation and from_coverage and generation.nc_threshold != coverage.nc_threshold:
        raise ConfigError(
            f"NC threshold {generation.nc_threshold} conflicts with coverage.nc_threshold={coverage.nc_threshold}",
            field="generation.nc_threshold",
        )
    if from_generation and not from_coverage:
        coverage = coverage.model_copy(update={"nc_threshold": generation.nc_threshold})
    else:
        generation = generation.model_copy(update={"nc_threshold": coverage.nc_threshold})
    return cfg.model_copy(update={"generation": generation, "coverage": coverage})


class Workspace:
    """Artifact layout of one experiment output directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def model_path(self, name: str) -> Path:
        return self.root / "models" / f"{name}.json"

    @property
    def vae_path(self) -> Path:
        return self.root / "vae.json"

    def profile_path(self, name: str) -> Path:
        return self.root / f"profile-{name}.json"

    @property
    def threshold_path(self) -> Path:
        return self.root / "threshold.json"

    def suite_path(self, mode: str) -> Path:
        return self.root / f"suite-{mode}.jsonl"

    def summary_path(self, mode: str) -> Path:
        return self.root / f"summary-{mode}.json"

    def metrics_path(self, stage: str) -> Path:
        return self.root / f"metrics-{stage}.json"

    @property
    def report_path(self) -> Path:
        return self.root / "report.json"

    def require(self, path: Path, stage: str) -> Path:
        if not path.exists():
            raise MissingArtifactError(str(path.relative_to(self.root)) if path.is_relative_to(self.root) else str(path), stage)
        return path

    def write(self, path: Path, payload: bytes) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
        logger.info("Wrote artifact", file_path=str(path))
        return path


@dataclass(frozen=True)
class DataSplits:
    train: Dataset
    test: Dataset
    invalid: Dataset


def _require_field(value: str | None, field: str) -> Path:
    if value is None:
        raise ConfigError("Missing dataset path", field=field)
    path = Path(value)
    if not path.exists():
        raise ConfigError(f"Dataset file not found ({path})", field=field)
    return path


@log_operation("load_data")
def load_data(cfg: ExperimentConfig) -> DataSplits:
    data = cfg.data
    if data.source == "blobs":
        spec = data.blobs
        train = synth_blobs(spec.num_classes, spec.dim, spec.n_per_class, spec.separation, derive_seed(cfg.seed, "data.train"))
        test = synth_blobs(spec.num_classes, spec.dim, spec.n_per_class, spec.separation, derive_seed(cfg.seed, "data.test"))
        invalid = synth_blobs(
            spec.num_classes, spec.dim, spec.n_per_class, spec.separation, derive_seed(cfg.seed, "data.invalid"), shifted=True
        )
    else:
        train = load_idx(_require_field(data.train_images, "data.train_images"), _require_field(data.train_labels, "data.train_labels"))
        test = load_idx(_require_field(data.test_images, "data.test_images"), _require_field(data.test_labels, "data.test_labels"))
        invalid = load_idx(
            _require_field(data.invalid_images, "data.invalid_images"),
            _require_field(data.invalid_labels, "data.invalid_labels"),
        )
    if data.train_subset is not None:
        train = subset(train, data.train_subset, derive_seed(cfg.seed, "data.train_subset"))
    if data.calibration_subset is not None:
        test = subset(test, data.calibration_subset, derive_seed(cfg.seed, "data.calibration_test"))
        invalid = subset(invalid, data.calibration_subset, derive_seed(cfg.seed, "data.calibration_invalid"))
    return DataSplits(train, test, invalid)


def _train_config(cfg: ExperimentConfig, base: TrainConfig, stream: str) -> TrainConfig:
    return base.model_copy(update={"rng_seed": derive_seed(cfg.seed, stream)})


def recon_config(cfg: ExperimentConfig) -> ReconProbConfig:
    return cfg.recon.model_copy(update={"rng_seed": derive_seed(cfg.seed, "recon")})


def _load_models(cfg: ExperimentConfig, workspace: Workspace, stage: str) -> list[Network]:
    models = []
    for spec in cfg.models:
        path = workspace.require(workspace.model_path(spec.name), stage)
        models.append(load_model(path.read_bytes(), file_path=str(path)))
    return models


def _load_validator(cfg: ExperimentConfig, workspace: Workspace, stage: str) -> InputValidator:
    vae_path = workspace.require(workspace.vae_path, stage)
    threshold_path = workspace.require(workspace.threshold_path, stage)
    vae = load_vae(vae_path.read_bytes(), file_path=str(vae_path))
    threshold = ValidityThreshold.from_bytes(threshold_path.read_bytes(), file_path=str(threshold_path))
    return InputValidator(vae, threshold, recon_config(cfg))


def _load_profile(workspace: Workspace, name: str, stage: str, required: bool) -> ActivationProfile | None:
    path = workspace.profile_path(name)
    if not path.exists() and not required:
        return None
    workspace.require(path, stage)
    return ActivationProfile.from_bytes(path.read_bytes(), file_path=str(path))


@log_operation("cmd_train")
def cmd_train(cfg: ExperimentConfig, out: str | Path) -> dict:
    workspace = Workspace(out)
    splits = load_data(cfg)
    metrics: dict[str, dict] = {}
    for spec in cfg.models:
        stage = f"train.{spec.name}"
        train_cfg = _train_config(cfg, cfg.train, stage)
        trainer = Trainer(train_cfg, stage=stage)
        arch = [splits.train.dim, *spec.hidden, splits.train.num_classes]
        net = train_classifier(splits.train, arch, train_cfg, spec.activation, trainer)
        workspace.write(workspace.model_path(spec.name), save_model(net))
        metrics[spec.name] = {
            "train_accuracy": accuracy(net, splits.train.inputs, splits.train.labels),
            "test_accuracy": accuracy(net, splits.test.inputs, splits.test.labels),
            "epoch_losses": trainer.epoch_losses,
        }
        logger.info("Trained classifier", model=spec.name, loss=trainer.epoch_losses[-1] if trainer.epoch_losses else None)
    workspace.write(workspace.metrics_path("train"), dump_document(metrics))
    return metrics


@log_operation("cmd_train_vae")
def cmd_train_vae(cfg: ExperimentConfig, out: str | Path) -> dict:
    workspace = Workspace(out)
    splits = load_data(cfg)
    train_cfg = _train_config(cfg, cfg.vae.train, "train.vae")
    trainer = Trainer(train_cfg, stage="train.vae")
    vae = train_vae(splits.train, cfg.vae.hidden, train_cfg, cfg.vae.latent_dim, trainer)
    workspace.write(workspace.vae_path, save_vae(vae))
    metrics = {"epoch_losses": trainer.epoch_losses, "latent_dim": vae.latent_dim}
    workspace.write(workspace.metrics_path("train-vae"), dump_document(metrics))
    return metrics


@log_operation("cmd_profile")
def cmd_profile(cfg: ExperimentConfig, out: str | Path) -> dict[str, int]:
    workspace = Workspace(out)
    splits = load_data(cfg)
    neurons = {}
    for spec, net in zip(cfg.models, _load_models(cfg, workspace, "profile")):
        workspace.write(workspace.profile_path(spec.name), profile(net, splits.train.inputs).to_bytes())
        neurons[spec.name] = sum(net.layer_widths)
    return neurons


@log_operation("cmd_calibrate")
def cmd_calibrate(cfg: ExperimentConfig, out: str | Path) -> ValidityThreshold:
    workspace = Workspace(out)
    path = workspace.require(workspace.vae_path, "calibrate")
    vae = load_vae(path.read_bytes(), file_path=str(path))
    splits = load_data(cfg)
    recon = recon_config(cfg)
    threshold = calibrate_threshold(
        reconstruction_scores(vae, splits.test.inputs, recon),
        reconstruction_scores(vae, splits.invalid.inputs, recon),
        valid_set=splits.test.name,
        invalid_set=splits.invalid.name,
    )
    workspace.write(workspace.threshold_path, threshold.to_bytes())
    return threshold


def _generation_config(cfg: ExperimentConfig, test: Dataset) -> GenerationConfig:
    update: dict = {"rng_seed": derive_seed(cfg.seed, "generate")}
    if cfg.generation.image_shape is None and test.image_shape is not None:
        update["image_shape"] = tuple(test.image_shape)
    return cfg.generation.model_copy(update=update)


@log_operation("cmd_generate")
def cmd_generate(cfg: ExperimentConfig, out: str | Path, mode: Mode, tune: bool = False) -> SuiteSummary:
    workspace = Workspace(out)
    stage = f"generate.{mode}"
    models = _load_models(cfg, workspace, stage)
    validator = _load_validator(cfg, workspace, stage)
    prof = _load_profile(workspace, cfg.models[0].name, stage, required=False)
    splits = load_data(cfg)
    seeds = subset(splits.test, cfg.seed_count, derive_seed(cfg.seed, "seeds")).inputs
    digest = seed_digest(seeds)
    logger.info("Seed set selected", stage=stage, seeds=len(seeds), digest=digest)

    gen_cfg = _generation_config(cfg, splits.test)
    if mode == "vae" and tune:
        tuning = subset(splits.test, min(TUNING_SEEDS, len(splits.test)), derive_seed(cfg.seed, "tuning")).inputs
        lam, counts = tune_lambda(tuning, models, validator, gen_cfg, coverage_cfg=cfg.coverage)
        workspace.write(workspace.metrics_path("lambda-sweep"), dump_document({str(k): v for k, v in counts.items()} | {"best": lam}))
        gen_cfg = gen_cfg.model_copy(update={"lam": lam})

    generate = generate_vae_guided if mode == "vae" else generate_baseline
    suite = generate(seeds, models, validator, gen_cfg, cfg.coverage, prof)
    summary = suite.summary(digest)
    workspace.write(workspace.suite_path(mode), suite.to_jsonl())
    workspace.write(workspace.summary_path(mode), dump_document(summary.model_dump()))
    return summary


@log_operation("cmd_validate")
def cmd_validate(
    cfg: ExperimentConfig,
    out: str | Path,
    suite: str | Path | None = None,
    images: str | Path | None = None,
    labels: str | Path | None = None,
) -> ValidationReport:
    """Judge a suite file or an IDX pair with the calibrated validator."""

    workspace = Workspace(out)
    validator = _load_validator(cfg, workspace, "validate")
    if suite is not None:
        path = Path(suite)
        if not path.exists():
            raise MissingArtifactError(str(path), "validate")
        records = load_suite_records(path.read_bytes(), file_path=str(path))
        scores = np.array([validator.score(np.asarray(record.input)) for record in records])
        source = path.name
    elif images is not None and labels is not None:
        dataset = load_idx(images, labels)
        scores = reconstruction_scores(validator.vae, dataset.inputs, validator.cfg)
        source = dataset.name
    else:
        raise ContractViolation("validate needs a suite file or an images/labels pair", operation="validate")
    invalid = int(np.sum(scores < validator.threshold.alpha))
    valid = int(scores.size) - invalid
    result = ValidationReport(
        source=source,
        total=int(scores.size),
        valid=valid,
        invalid=invalid,
        invalid_percent=invalid_percent(valid, invalid),
        alpha=validator.threshold.alpha,
    )
    workspace.write(workspace.metrics_path("validate"), dump_document(result.model_dump()))
    return result


@log_operation("cmd_coverage")
def cmd_coverage(cfg: ExperimentConfig, out: str | Path, suite: str | Path, model: str | None = None) -> CoverageReport:
    """Coverage of every input in a suite file on one model (default: the target model)."""

    workspace = Workspace(out)
    name = model or cfg.models[0].name
    if name not in {spec.name for spec in cfg.models}:
        raise ConfigError("Unknown model", field=name)
    model_path = workspace.require(workspace.model_path(name), "coverage")
    net = load_model(model_path.read_bytes(), file_path=str(model_path))
    prof = _load_profile(workspace, name, "coverage", required=False)
    path = Path(suite)
    if not path.exists():
        raise MissingArtifactError(str(path), "coverage")
    records = load_suite_records(path.read_bytes(), file_path=str(path))
    inputs = np.array([record.input for record in records], dtype=np.float64).reshape(-1, net.input_dim)
    result = report(coverage_of(net, inputs, cfg.coverage, prof), cfg.coverage)
    workspace.write(workspace.root / f"coverage-{path.stem}.json", dump_document(result.model_dump()))
    return result


@log_operation("cmd_report")
def cmd_report(cfg: ExperimentConfig, out: str | Path) -> ExperimentReport:
    """Valid/invalid/total coverage of every generated suite on the target model."""

    workspace = Workspace(out)
    name = cfg.models[0].name
    model_path = workspace.require(workspace.model_path(name), "report")
    net = load_model(model_path.read_bytes(), file_path=str(model_path))
    prof = _load_profile(workspace, name, "report", required=True)
    modes = [mode for mode in ("baseline", "vae") if workspace.suite_path(mode).exists()]
    if not modes:
        raise MissingArtifactError("suite-baseline.jsonl or suite-vae.jsonl", "report")

    suites = []
    digest = None
    for mode in modes:
        path = workspace.suite_path(mode)
        records = load_suite_records(path.read_bytes(), file_path=str(path))
        suites.append(suite_report(mode, records, net, cfg.coverage, prof))
        summary_path = workspace.summary_path(mode)
        if summary_path.exists():
            digest = json.loads(summary_path.read_bytes()).get("seed_digest", digest)
    result = ExperimentReport(model=name, seed_digest=digest, suites=suites)
    workspace.write(workspace.report_path, dump_document(result.model_dump()))
    workspace.write(workspace.root / "report.txt", render_table(result).encode("utf-8"))
    return result
