from __future__ import annotations

import os
from pathlib import Path
from typing import List

import uvicorn
from dotenv import load_dotenv
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .errors import ModelFormatError, ValidTestgenError
from .tools import artifact_helper, get_logger, setup_logger

load_dotenv()

setup_logger(level=os.getenv("LOG_LEVEL", "INFO"))

LOGGER = get_logger(__name__)
LOGGER.info("Starting valid-testgen FastAPI module")

APP = FastAPI(
    title="valid-testgen",
    description="Validity scoring and coverage reporting over valid-testgen artifacts.",
    version="0.1.0",
)

APP.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["GET", "POST"],
    allow_headers=["*"],
)

ARTIFACT_ROOT = Path(os.getenv("VALID_TESTGEN_ARTIFACT_ROOT", "runs")).resolve()
ARTIFACT_ROOT.mkdir(parents=True, exist_ok=True)


def resolve_artifact_path(relative_path: str) -> Path:
    candidate = (ARTIFACT_ROOT / relative_path).resolve()
    if not candidate.is_relative_to(ARTIFACT_ROOT):
        raise HTTPException(status_code=403, detail="File outside allowed path")
    if not candidate.exists():
        raise HTTPException(status_code=404, detail="File not found")
    return candidate


class ScoreRequest(BaseModel):
    vae_path: str = Field(..., min_length=1)
    threshold_path: str = Field(..., min_length=1)
    input: List[float] = Field(..., min_length=1)
    num_samples: int = Field(10, ge=1, le=1000)
    rng_seed: int = Field(0, ge=0)


class CoverageRequest(BaseModel):
    vectors: List[str] = Field(..., min_length=1)
    k: int = Field(1, ge=1)
    nc_threshold: float = Field(0.25, ge=0, lt=1)


@APP.get("/health")
def health_check() -> dict[str, str]:
    return {"status": "healthy", "service": "valid-testgen"}


@APP.get("/artifacts")
def list_artifacts() -> dict[str, list[str]]:
    return {"artifacts": artifact_helper.list_artifacts(ARTIFACT_ROOT)}


@APP.post("/validity/score")
def validity_score(request: ScoreRequest) -> dict:
    vae_path = resolve_artifact_path(request.vae_path)
    threshold_path = resolve_artifact_path(request.threshold_path)
    try:
        return artifact_helper.score_input(
            vae_path, threshold_path, request.input, num_samples=request.num_samples, rng_seed=request.rng_seed
        )
    except ModelFormatError as exc:
        raise HTTPException(status_code=422, detail=exc.message) from exc
    except ValidTestgenError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


@APP.post("/coverage/ratios")
def coverage_ratios(request: CoverageRequest) -> dict:
    try:
        return artifact_helper.coverage_from_vectors(request.vectors, k=request.k, nc_threshold=request.nc_threshold)
    except ValidTestgenError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


def start_fastapi(host: str = "0.0.0.0", port: int = 8000) -> None:
    uvicorn.run("valid_testgen.fastapi_server:APP", host=host, port=port)
