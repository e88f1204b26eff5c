"""Desk-scale MNIST experiments; need the gzipped IDX files on disk."""

import os
from pathlib import Path

import numpy as np
import pytest

from valid_testgen import pipeline
from valid_testgen.models import (
    ConstraintSpec,
    CoverageConfig,
    DataConfig,
    ExperimentConfig,
    GenerationConfig,
    ModelSpec,
    TrainConfig,
    VaeSpec,
)
from valid_testgen.vae import load_vae, reconstruction_scores

MNIST_DIR = os.getenv("VALID_TESTGEN_MNIST_DIR")
FASHION_DIR = os.getenv("VALID_TESTGEN_FASHION_DIR")

pytestmark = [
    pytest.mark.slow,
    pytest.mark.skipif(not (MNIST_DIR and FASHION_DIR), reason="MNIST/FashionMNIST IDX directories not set"),
]


def mnist_config() -> ExperimentConfig:
    mnist, fashion = Path(MNIST_DIR or "."), Path(FASHION_DIR or ".")
    return ExperimentConfig(
        seed=0,
        data=DataConfig(
            source="idx",
            train_images=str(mnist / "train-images-idx3-ubyte.gz"),
            train_labels=str(mnist / "train-labels-idx1-ubyte.gz"),
            test_images=str(mnist / "t10k-images-idx3-ubyte.gz"),
            test_labels=str(mnist / "t10k-labels-idx1-ubyte.gz"),
            invalid_images=str(fashion / "t10k-images-idx3-ubyte.gz"),
            invalid_labels=str(fashion / "t10k-labels-idx1-ubyte.gz"),
            train_subset=10000,
            calibration_subset=2000,
        ),
        models=[ModelSpec(name="dense_a", hidden=[128]), ModelSpec(name="dense_b", hidden=[64, 32])],
        train=TrainConfig(learning_rate=1e-3, batch_size=64, epochs=5),
        vae=VaeSpec(hidden=[256], latent_dim=16, train=TrainConfig(learning_rate=1e-3, batch_size=64, epochs=20)),
        coverage=CoverageConfig(nc_threshold=0.25, k=10),
        generation=GenerationConfig(
            step_size=0.1,
            max_iterations=30,
            constraint=ConstraintSpec(kind="occlusion", width=10, height=10),
        ),
        seed_count=50,
    )


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    cfg = mnist_config()
    out = tmp_path_factory.mktemp("mnist")
    pipeline.cmd_train(cfg, out)
    pipeline.cmd_train_vae(cfg, out)
    pipeline.cmd_profile(cfg, out)
    threshold = pipeline.cmd_calibrate(cfg, out)
    return cfg, out, threshold


def test_vae_scores_separate_mnist_from_fashion(trained):
    cfg, out, _ = trained
    vae = load_vae((out / "vae.json").read_bytes())
    splits = pipeline.load_data(cfg)
    recon = pipeline.recon_config(cfg)
    valid = reconstruction_scores(vae, splits.test.inputs[:500], recon)
    invalid = reconstruction_scores(vae, splits.invalid.inputs[:500], recon)
    assert np.mean(valid) - np.mean(invalid) >= 3.0


def test_calibration_f_measure(trained):
    _, _, threshold = trained
    assert threshold.f_measure >= 0.90
    assert threshold.separable


def test_guided_generation_beats_baseline(trained):
    cfg, out, _ = trained
    baseline = pipeline.cmd_generate(cfg, out, "baseline")
    guided = pipeline.cmd_generate(cfg, out, "vae")
    assert baseline.seed_digest == guided.seed_digest
    assert baseline.invalid > 0
    assert guided.invalid == 0
    assert guided.valid >= 1.2 * baseline.valid
    report = pipeline.cmd_report(cfg, out)
    assert report.suites[0].invalid_percent > 0.0
