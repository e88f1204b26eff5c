from __future__ import annotations

from functools import reduce
from pathlib import Path
from typing import Sequence

import numpy as np

from ..coverage import CoverageState, merge, report
from ..models import CoverageConfig, ReconProbConfig
from ..reporting import invalid_percent
from ..testgen import load_suite_records
from ..vae import InputValidator, ValidityThreshold, load_vae
from ..errors import ContractViolation
from .logger_config import get_logger, log_operation

logger = get_logger(__name__)

ARTIFACT_SUFFIXES = (".json", ".jsonl")


@log_operation("artifact_listing")
def list_artifacts(directory: str | Path) -> list[str]:
    root = Path(directory)
    return sorted(
        path.relative_to(root).as_posix()
        for path in root.rglob("*")
        if path.is_file() and path.suffix.lower() in ARTIFACT_SUFFIXES
    )


@log_operation("score_input")
def score_input(
    vae_path: str | Path,
    threshold_path: str | Path,
    values: Sequence[float],
    num_samples: int = 10,
    rng_seed: int = 0,
) -> dict[str, float | str]:
    vae = load_vae(Path(vae_path).read_bytes(), file_path=str(vae_path))
    threshold = ValidityThreshold.from_bytes(Path(threshold_path).read_bytes(), file_path=str(threshold_path))
    validator = InputValidator(vae, threshold, ReconProbConfig(num_samples=num_samples, rng_seed=rng_seed))
    x = np.asarray(values, dtype=np.float64)
    score = validator.score(x)
    verdict = validator.classify(x)
    logger.info("Scored input", file_path=str(vae_path), alpha=threshold.alpha)
    return {"score": score, "alpha": threshold.alpha, "verdict": verdict.value}


@log_operation("suite_summary")
def summarize_suite(suite_path: str | Path) -> dict[str, float | int]:
    records = load_suite_records(Path(suite_path).read_bytes(), file_path=str(suite_path))
    valid = sum(1 for record in records if record.valid)
    invalid = len(records) - valid
    return {
        "records": len(records),
        "valid": valid,
        "invalid": invalid,
        "invalid_percent": invalid_percent(valid, invalid),
        "mean_iterations": float(np.mean([record.iter for record in records])) if records else 0.0,
    }


def coverage_from_vectors(vectors: Sequence[str], k: int = 1, nc_threshold: float = 0.25) -> dict:
    """NC of each '0'/'1' coverage vector and of their union."""

    if not vectors:
        raise ContractViolation("At least one coverage vector is required", operation="coverage_from_vectors")
    cfg = CoverageConfig(nc_threshold=nc_threshold, k=k)
    states = [CoverageState.from_nc_vector(vector, k=k) for vector in vectors]
    union = reduce(merge, states)
    return {
        "vectors": [report(state, cfg).nc for state in states],
        "union": report(union, cfg).model_dump(),
    }
