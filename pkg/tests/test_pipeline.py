import json
from pathlib import Path

import pytest

from valid_testgen import cli, pipeline
from valid_testgen.errors import ConfigError, MissingArtifactError, NumericError, SafetyViolation, SubsetSizeError

SMALL_CONFIG = {
    "seed": 3,
    "data": {"source": "blobs", "blobs": {"num_classes": 2, "dim": 4, "n_per_class": 30, "separation": 10.0}},
    "models": [{"name": "model_a", "hidden": [6]}, {"name": "model_b", "hidden": [5]}],
    "train": {"learning_rate": 0.01, "batch_size": 16, "epochs": 15},
    "vae": {"hidden": [8], "latent_dim": 2, "train": {"learning_rate": 0.01, "batch_size": 16, "epochs": 15}},
    "coverage": {"k": 5},
    "generation": {"step_size": 0.2, "max_iterations": 5},
    "recon": {"num_samples": 3},
    "seed_count": 6,
}

STAGES = [
    ["train"],
    ["train-vae"],
    ["profile"],
    ["calibrate"],
    ["generate", "--mode", "baseline"],
    ["generate", "--mode", "vae", "--tune-lambda"],
    ["validate", "--suite", "{out}/suite-baseline.jsonl"],
    ["coverage", "--suite", "{out}/suite-vae.jsonl"],
    ["report"],
]


def write_config(directory: Path, **overrides) -> Path:
    path = directory / "config.json"
    path.write_text(json.dumps(SMALL_CONFIG | overrides))
    return path


def run_stages(directory: Path) -> Path:
    config = write_config(directory)
    out = directory / "run"
    for stage in STAGES:
        argv = [part.format(out=out) for part in stage] + ["--config", str(config), "--out", str(out)]
        assert cli.main(argv) == 0, stage
    return out


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    first = run_stages(tmp_path_factory.mktemp("first"))
    second = run_stages(tmp_path_factory.mktemp("second"))
    return first, second


def test_every_stage_writes_its_artifacts(runs):
    out, _ = runs
    for name in (
        "models/model_a.json",
        "models/model_b.json",
        "vae.json",
        "threshold.json",
        "profile-model_a.json",
        "suite-baseline.jsonl",
        "summary-vae.json",
        "metrics-lambda-sweep.json",
        "metrics-validate.json",
        "coverage-suite-vae.json",
        "report.json",
        "report.txt",
    ):
        assert (out / name).exists(), name


def test_reruns_are_byte_identical(runs):
    first, second = runs
    names = sorted(path.relative_to(first) for path in first.rglob("*") if path.is_file())
    assert names == sorted(path.relative_to(second) for path in second.rglob("*") if path.is_file())
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_report_matches_summaries(runs):
    out, _ = runs
    report = json.loads((out / "report.json").read_text())
    assert [suite["mode"] for suite in report["suites"]] == ["baseline", "vae"]
    for suite in report["suites"]:
        summary = json.loads((out / f"summary-{suite['mode']}.json").read_text())
        assert suite["valid"] + suite["invalid"] == summary["valid"] + summary["invalid"]
    guided = report["suites"][1]
    assert guided["invalid"] == 0
    assert guided["coverage"]["invalid"] is None
    assert report["seed_digest"] == json.loads((out / "summary-baseline.json").read_text())["seed_digest"]


def test_validate_reproduces_generation_verdicts(runs):
    out, _ = runs
    summary = json.loads((out / "summary-baseline.json").read_text())
    validation = json.loads((out / "metrics-validate.json").read_text())
    assert (validation["valid"], validation["invalid"]) == (summary["valid"], summary["invalid"])


def test_cli_prints_stage_result(tmp_path, capsys):
    out = tmp_path / "run"
    config = write_config(tmp_path)
    assert cli.main(["train-vae", "--config", str(config), "--out", str(out)]) == 0
    capsys.readouterr()
    assert cli.main(["calibrate", "--config", str(config), "--out", str(out)]) == 0
    payload = json.loads(capsys.readouterr().out)
    threshold = json.loads((out / "threshold.json").read_text())
    assert threshold["valid_set"] == "blobs" and threshold["invalid_set"] == "blobs-shifted"
    assert payload["alpha"] == threshold["alpha"]


def test_missing_artifact_exits_one(tmp_path, capsys):
    config = write_config(tmp_path)
    assert cli.main(["calibrate", "--config", str(config), "--out", str(tmp_path / "empty")]) == 1
    assert "vae.json" in capsys.readouterr().err
    with pytest.raises(MissingArtifactError):
        pipeline.cmd_report(pipeline.load_config(config), tmp_path / "empty")


def test_missing_dataset_path_names_the_field(tmp_path):
    cfg = pipeline.load_config(write_config(tmp_path, data={"source": "idx"}))
    with pytest.raises(ConfigError) as exc_info:
        pipeline.load_data(cfg)
    assert exc_info.value.field == "data.train_images"
    assert cli.main(["train", "--config", str(tmp_path / "config.json"), "--out", str(tmp_path / "run")]) == 1


def test_bad_config_is_config_error(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"seed": -1}))
    with pytest.raises(ConfigError) as exc_info:
        pipeline.load_config(path)
    assert exc_info.value.field == "seed"
    path.write_text("{not json")
    with pytest.raises(ConfigError) as exc_info:
        pipeline.load_config(path)
    assert exc_info.value.field == "$"
    with pytest.raises(ConfigError):
        pipeline.load_config(tmp_path / "absent.json")
    assert cli.main(["train", "--config", str(path), "--out", str(tmp_path / "run")]) == 1


def test_usage_errors_exit_one(tmp_path):
    with pytest.raises(SystemExit) as exc_info:
        cli.main(["frobnicate"])
    assert exc_info.value.code == 1
    with pytest.raises(SystemExit) as exc_info:
        cli.main(["generate", "--mode", "random"])
    assert exc_info.value.code == 1
    assert cli.main(["train", "--seed", "-1", "--config", str(write_config(tmp_path))]) == 1


def test_runtime_errors_exit_two():
    assert cli.exit_code(NumericError("bad score")) == 2
    assert cli.exit_code(SafetyViolation("unsafe")) == 2
    assert cli.exit_code(SubsetSizeError("too many")) == 1


def test_oversized_seed_count_is_subset_error(tmp_path):
    out = tmp_path / "run"
    config = write_config(tmp_path, seed_count=1000)
    for stage in (["train"], ["train-vae"], ["calibrate"]):
        assert cli.main(stage + ["--config", str(config), "--out", str(out)]) == 0
    assert cli.main(["generate", "--mode", "baseline", "--config", str(config), "--out", str(out)]) == 1


def test_derived_seeds_are_stable_and_distinct():
    assert pipeline.derive_seed(0, "data.train") == pipeline.derive_seed(0, "data.train")
    assert pipeline.derive_seed(0, "data.train") != pipeline.derive_seed(0, "data.test")
    assert pipeline.derive_seed(0, "data.train") != pipeline.derive_seed(1, "data.train")
    assert 0 <= pipeline.derive_seed(7, "recon") < 2**63


def test_seed_flag_overrides_config(tmp_path):
    cfg = pipeline.load_config(write_config(tmp_path), seed=11)
    assert cfg.seed == 11
    first = pipeline.load_data(cfg)
    second = pipeline.load_data(pipeline.load_config(write_config(tmp_path), seed=12))
    assert first.train.inputs.tolist() != second.train.inputs.tolist()


def test_nc_threshold_is_shared_between_sections(tmp_path):
    cfg = pipeline.load_config(write_config(tmp_path, generation={"nc_threshold": 0.6}))
    assert cfg.coverage.nc_threshold == 0.6
    cfg = pipeline.load_config(write_config(tmp_path, coverage={"k": 5, "nc_threshold": 0.4}))
    assert cfg.generation.nc_threshold == 0.4
    cfg = pipeline.load_config(write_config(tmp_path, coverage={"nc_threshold": 0.3}, generation={"nc_threshold": 0.3}))
    assert cfg.generation.nc_threshold == cfg.coverage.nc_threshold == 0.3
    with pytest.raises(ConfigError) as exc_info:
        pipeline.load_config(write_config(tmp_path, coverage={"nc_threshold": 0.3}, generation={"nc_threshold": 0.5}))
    assert exc_info.value.field == "generation.nc_threshold"
