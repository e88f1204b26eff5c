from __future__ import annotations

import inspect
import os
from functools import wraps
from pathlib import Path

from fastmcp import FastMCP

from .tools import artifact_helper, get_logger, setup_logger

setup_logger(level=os.getenv("LOG_LEVEL", "INFO"))
LOGGER = get_logger(__name__)

ROOT_PATH = Path(os.getenv("VALID_TESTGEN_ARTIFACT_ROOT", "runs")).resolve()
ROOT_PATH.mkdir(parents=True, exist_ok=True)


def _resolve_path(path: str) -> Path:
    candidate = (ROOT_PATH / path).resolve()
    if not candidate.is_relative_to(ROOT_PATH):
        raise FileNotFoundError("Access to the requested file is not allowed.")
    if not candidate.exists():
        raise FileNotFoundError("Requested file does not exist.")
    return candidate


def _handle_file_operation(func):
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except Exception as exc:
            LOGGER.error("Artifact operation failed", error_type=type(exc).__name__, error_details=str(exc))
            raise

    wrapper.__signature__ = inspect.signature(func)  # type: ignore[attr-defined]
    return wrapper


MCP_APP = FastMCP(name="valid-testgen", version="0.1.0")


@_handle_file_operation
def list_artifacts() -> list[str]:
    """JSON artifacts (models, thresholds, suites, reports) under the artifact root."""

    return artifact_helper.list_artifacts(ROOT_PATH)


@_handle_file_operation
def score_input(vae_path: str, threshold_path: str, values: list[float], num_samples: int = 10) -> dict:
    """Reconstruction probability of one input and its valid/invalid verdict."""

    return artifact_helper.score_input(_resolve_path(vae_path), _resolve_path(threshold_path), values, num_samples=num_samples)


@_handle_file_operation
def summarize_suite(suite_path: str) -> dict:
    """Record, valid and invalid counts of a generated suite file."""

    return artifact_helper.summarize_suite(_resolve_path(suite_path))


@_handle_file_operation
def coverage_from_vectors(vectors: list[str], k: int = 1, nc_threshold: float = 0.25) -> dict:
    """Coverage ratio of each '0'/'1' vector and of their union."""

    return artifact_helper.coverage_from_vectors(vectors, k=k, nc_threshold=nc_threshold)


for _tool in (list_artifacts, score_input, summarize_suite, coverage_from_vectors):
    MCP_APP.tool()(_tool)


def main() -> None:
    LOGGER.info("Starting valid-testgen FastMCP server")
    MCP_APP.run()


if __name__ == "__main__":
    main()
