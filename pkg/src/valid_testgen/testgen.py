"""Differential gradient-ascent test generation.

Two generators share one ascent loop: the baseline accepts the first input on
which the models disagree and judges its validity afterwards; the VAE-guided
generator adds the decoder log-density of the input to the objective and only
accepts disagreements that also pass the reconstruction-probability gate.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Graph
from .coverage import ActivationProfile, CoverageState, CoverageTracker, NeuronId, report
from .errors import ContractViolation, ModelFormatError, SafetyViolation, ShapeError
from .models import ConstraintSpec, CoverageConfig, GenerationConfig, SuiteRecordDocument, SuiteSummary
from .nn import Network, dump_document, parse_document, predict
from .tools import get_logger, log_operation
from .vae import InputValidator

logger = get_logger(__name__)

DEFAULT_LAMBDA_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0)


@dataclass(frozen=True)
class TestRecord:
    __test__ = False

    input: np.ndarray
    seed_index: int
    iterations_used: int
    recon_score: float
    predictions: tuple[int, ...]
    valid: bool

    def to_document(self) -> SuiteRecordDocument:
        return SuiteRecordDocument(
            seed=self.seed_index,
            iter=self.iterations_used,
            recon=self.recon_score,
            labels=list(self.predictions),
            valid=self.valid,
            input=self.input.tolist(),
        )


@dataclass
class TestSuite:
    __test__ = False

    mode: str
    config: GenerationConfig
    coverage_config: CoverageConfig
    coverage: CoverageState
    records: list[TestRecord] = field(default_factory=list)
    seeds: int = 0
    iterations: int = 0
    validations: int = 0
    nc_progress: list[float] = field(default_factory=list)

    @property
    def valid_records(self) -> list[TestRecord]:
        return [record for record in self.records if record.valid]

    @property
    def invalid_records(self) -> list[TestRecord]:
        return [record for record in self.records if not record.valid]

    def summary(self, seed_digest: str) -> SuiteSummary:
        return SuiteSummary(
            seeds=self.seeds,
            valid=len(self.valid_records),
            invalid=len(self.invalid_records),
            coverage=report(self.coverage, self.coverage_config),
            mode=self.mode,
            seed_digest=seed_digest,
            iterations=self.iterations,
            validations=self.validations,
            seeds_with_tests=len(self.records),
            nc_progress=self.nc_progress,
            lam=self.config.lam if self.mode == "vae" else 0.0,
        )

    def to_jsonl(self) -> bytes:
        return b"".join(dump_document(record.to_document().model_dump()) + b"\n" for record in self.records)


def load_suite_records(data: bytes, file_path: str | None = None) -> list[SuiteRecordDocument]:
    records = []
    for number, line in enumerate(data.splitlines()):
        if not line.strip():
            continue
        try:
            records.append(parse_document(line, SuiteRecordDocument, file_path))
        except ModelFormatError as exc:
            raise ModelFormatError(exc.message, f"line {number + 1}", file_path) from exc
    return records


def seed_digest(seeds: np.ndarray) -> str:
    """sha256 over the float64 bytes of the seed matrix."""

    return hashlib.sha256(np.ascontiguousarray(seeds, dtype=np.float64).tobytes()).hexdigest()


# -- differential oracle -------------------------------------------------------


def _check_models(models: Sequence[Network]) -> None:
    if len(models) < 2:
        raise ContractViolation("Differential testing needs at least two models", operation="testgen", models=len(models))
    first = models[0]
    for model in models[1:]:
        if model.input_dim != first.input_dim or model.output_dim != first.output_dim:
            raise ContractViolation(
                "Models disagree on input/output dims",
                operation="testgen",
                expected=(first.input_dim, first.output_dim),
                found=(model.input_dim, model.output_dim),
            )


def model_labels(models: Sequence[Network], x: np.ndarray) -> tuple[int, ...]:
    return tuple(predict(model, x)[0] for model in models)


def counter_example(models: Sequence[Network], x: np.ndarray) -> bool:
    _check_models(models)
    return len(set(model_labels(models, x))) > 1


def consensus_label(labels: Sequence[int]) -> int:
    """Most frequent label; ties go to the smallest label."""

    return int(np.argmax(np.bincount(np.asarray(labels, dtype=np.int64))))


def obj1_differential(
    graph: Graph,
    x: int,
    models: Sequence[Network],
    target: int,
    neuron: NeuronId | None,
    cfg: GenerationConfig,
    consensus: int | None = None,
) -> int:
    """sum_{i != d} prob_i[c] - lambda1 * prob_d[c] + lambda2 * activation(neuron of d)."""

    _check_models(models)
    if not 0 <= target < len(models):
        raise ContractViolation("Target model index out of range", operation="obj1", target=target)
    if consensus is None:
        consensus = consensus_label(model_labels(models, graph.value(x)))
    objective = None
    neuron_node = None
    for index, model in enumerate(models):
        coverage_nodes, probs = model.build(graph, x)
        prob_c = graph.take(probs, consensus)
        if index == target:
            term = graph.scale(prob_c, -cfg.lambda1)
            if neuron is not None:
                neuron_node = graph.take(coverage_nodes[neuron.layer_index], neuron.unit_index)
        else:
            term = prob_c
        objective = term if objective is None else graph.add(objective, term)
    if neuron_node is not None and cfg.lambda2 != 0.0:
        objective = graph.add(objective, graph.scale(neuron_node, cfg.lambda2))
    return objective


# -- domain constraints --------------------------------------------------------


def default_image_shape(dim: int) -> tuple[int, int]:
    side = int(round(np.sqrt(dim)))
    return (side, side) if side * side == dim else (1, dim)


def _check_rectangle(constraint: ConstraintSpec, image_shape: tuple[int, int]) -> None:
    rows, cols = image_shape
    if constraint.height > rows or constraint.width > cols:
        raise ContractViolation(
            "Constraint rectangle is larger than the image",
            operation="constrain",
            rectangle=(constraint.height, constraint.width),
            image=image_shape,
        )


def place_rectangle(
    constraint: ConstraintSpec, image_shape: tuple[int, int], rng: np.random.Generator
) -> tuple[int, int] | None:
    """Top-left corner of the occlusion/blackout rectangle for one seed."""

    if constraint.kind not in ("occlusion", "blackout"):
        return None
    _check_rectangle(constraint, image_shape)
    row = int(rng.integers(0, image_shape[0] - constraint.height + 1))
    col = int(rng.integers(0, image_shape[1] - constraint.width + 1))
    return row, col


def constrain(
    gradient: np.ndarray,
    constraint: ConstraintSpec,
    image_shape: tuple[int, int],
    origin: tuple[int, int] | None = None,
) -> np.ndarray:
    grad = np.array(gradient, dtype=np.float64)
    if int(np.prod(image_shape)) != grad.size:
        raise ShapeError("Gradient does not fit image shape", grad.shape, tuple(image_shape), operation="constrain")
    if constraint.kind == "none":
        return grad
    if constraint.kind == "lightening":
        return np.full_like(grad, grad.mean())

    _check_rectangle(constraint, image_shape)
    row, col = origin if origin is not None else (0, 0)
    mask = np.zeros(image_shape, dtype=bool)
    mask[row : row + constraint.height, col : col + constraint.width] = True
    image = np.where(mask, grad.reshape(image_shape), 0.0)
    if constraint.kind == "blackout":
        image = np.minimum(image, 0.0)
    return image.reshape(grad.shape)


# -- generators ----------------------------------------------------------------


class _AscentRun:
    """State shared by both generators across the seeds of one run."""

    def __init__(
        self,
        mode: str,
        models: Sequence[Network],
        validator: InputValidator | None,
        cfg: GenerationConfig,
        coverage_cfg: CoverageConfig | None,
        profile: ActivationProfile | None,
    ):
        _check_models(models)
        self.mode = mode
        self.models = list(models)
        self.validator = validator
        self.cfg = cfg
        if coverage_cfg is not None and coverage_cfg.nc_threshold != cfg.nc_threshold:
            raise ContractViolation(
                "Generation and coverage disagree on the NC threshold",
                operation="generate",
                generation=cfg.nc_threshold,
                coverage=coverage_cfg.nc_threshold,
            )
        self.coverage_cfg = coverage_cfg or CoverageConfig(nc_threshold=cfg.nc_threshold)
        self.tracker = CoverageTracker(self.models[0], self.coverage_cfg, profile)
        self.image_shape = tuple(cfg.image_shape) if cfg.image_shape else default_image_shape(self.models[0].input_dim)
        self.suite = TestSuite(mode, cfg, self.coverage_cfg, self.tracker.state)

    def _gradient(self, x: np.ndarray, neuron: NeuronId | None, rng: np.random.Generator) -> np.ndarray:
        graph = Graph()
        x_node = graph.input(x)
        objective = obj1_differential(graph, x_node, self.models, 0, neuron, self.cfg)
        if self.mode == "vae" and self.cfg.lam > 0:
            eps = rng.standard_normal(self.validator.vae.latent_dim)
            density = self.validator.vae.build_log_density(graph, x_node, eps)
            objective = graph.add(objective, graph.scale(density, self.cfg.lam))
        graph.forward(objective)
        return graph.backward(objective, x_node)

    def _choose_neuron(self, rng: np.random.Generator) -> NeuronId | None:
        uncovered = self.tracker.state.uncovered_neurons()
        if not uncovered:
            return None
        return uncovered[int(rng.integers(len(uncovered)))]

    def run_seed(self, seed_index: int, seed: np.ndarray) -> TestRecord | None:
        cfg = self.cfg
        rng = np.random.default_rng([cfg.rng_seed, seed_index])
        origin = place_rectangle(cfg.constraint, self.image_shape, rng)
        neuron = self._choose_neuron(rng)
        x = np.clip(np.array(seed, dtype=np.float64), 0.0, 1.0)
        for step in range(cfg.max_iterations + 1):
            labels = model_labels(self.models, x)
            if len(set(labels)) > 1:
                record = self._judge(seed_index, step, x, labels)
                if record is not None:
                    return record
            if step == cfg.max_iterations:
                break
            gradient = constrain(self._gradient(x, neuron, rng), cfg.constraint, self.image_shape, origin)
            x = np.clip(x + cfg.step_size * gradient, 0.0, 1.0)
            self.suite.iterations += 1
        return None

    def _judge(self, seed_index: int, step: int, x: np.ndarray, labels: tuple[int, ...]) -> TestRecord | None:
        self.suite.validations += 1
        score = self.validator.score(x)
        valid = score >= self.validator.threshold.alpha
        if self.mode == "vae" and not valid:
            return None
        return TestRecord(x.copy(), seed_index, step, score, labels, valid)

    def run(self, seeds: np.ndarray) -> TestSuite:
        seeds = np.atleast_2d(np.asarray(seeds, dtype=np.float64))
        if seeds.shape[1] != self.models[0].input_dim:
            raise ShapeError("Seeds do not match models", seeds.shape, (self.models[0].input_dim,), operation="generate")
        for seed_index, seed in enumerate(seeds):
            record = self.run_seed(seed_index, seed)
            if record is not None:
                self.suite.records.append(record)
                if record.valid:
                    self.tracker.update(record.input)
                logger.debug("Seed produced a test", seed_index=seed_index, iterations=record.iterations_used)
            self.suite.nc_progress.append(self.tracker.report().nc)
        self.suite.seeds = int(seeds.shape[0])
        self.suite.coverage = self.tracker.state
        logger.info(
            "Generation finished",
            mode=self.mode,
            seeds=self.suite.seeds,
            records=len(self.suite.records),
            iterations=self.suite.iterations,
            validations=self.suite.validations,
        )
        return self.suite


@log_operation("generate_baseline")
def generate_baseline(
    seeds: np.ndarray,
    models: Sequence[Network],
    validator: InputValidator,
    cfg: GenerationConfig,
    coverage_cfg: CoverageConfig | None = None,
    profile: ActivationProfile | None = None,
) -> TestSuite:
    """obj1 ascent; every disagreement is kept and labelled by the validator."""

    return _AscentRun("baseline", models, validator, cfg, coverage_cfg, profile).run(seeds)


def assert_safe(suite: TestSuite, alpha: float, models: Sequence[Network]) -> None:
    for record in suite.records:
        if not record.valid or record.recon_score < alpha or not counter_example(models, record.input):
            raise SafetyViolation(
                "Guided suite contains an invalid record",
                operation="generate_vae_guided",
                seed_index=record.seed_index,
                recon=record.recon_score,
                alpha=alpha,
            )


@log_operation("generate_vae_guided")
def generate_vae_guided(
    seeds: np.ndarray,
    models: Sequence[Network],
    validator: InputValidator,
    cfg: GenerationConfig,
    coverage_cfg: CoverageConfig | None = None,
    profile: ActivationProfile | None = None,
) -> TestSuite:
    """obj1 + lambda * log p(x | decoder) ascent, gated on disagreement and p >= alpha."""

    suite = _AscentRun("vae", models, validator, cfg, coverage_cfg, profile).run(seeds)
    assert_safe(suite, validator.threshold.alpha, models)
    return suite


@log_operation("tune_lambda")
def tune_lambda(
    seeds: np.ndarray,
    models: Sequence[Network],
    validator: InputValidator,
    cfg: GenerationConfig,
    grid: Iterable[float] = DEFAULT_LAMBDA_GRID,
    coverage_cfg: CoverageConfig | None = None,
) -> tuple[float, dict[float, int]]:
    """Density weight with the most valid tests on ``seeds``; ties go to the smaller weight."""

    counts: dict[float, int] = {}
    for lam in sorted(float(value) for value in grid):
        suite = generate_vae_guided(seeds, models, validator, cfg.model_copy(update={"lam": lam}), coverage_cfg)
        counts[lam] = len(suite.valid_records)
        logger.info("Lambda evaluated", operation="tune_lambda", records=counts[lam], lam=lam)
    if not counts:
        raise ContractViolation("Lambda grid is empty", operation="tune_lambda")
    best = max(counts, key=lambda lam: (counts[lam], -lam))
    return best, counts
