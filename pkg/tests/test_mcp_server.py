import json

import pytest

from helpers import FIXTURES, identity_vae, threshold_at
from valid_testgen import mcp_server
from valid_testgen.errors import ContractViolation
from valid_testgen.vae import save_vae


@pytest.fixture
def artifact_root(tmp_path, monkeypatch):
    root = (tmp_path / "runs").resolve()
    (root / "models").mkdir(parents=True)
    (root / "models" / "model_a.json").write_bytes((FIXTURES / "model_2_2_2.json").read_bytes())
    (root / "vae.json").write_bytes(save_vae(identity_vae()))
    (root / "threshold.json").write_bytes(threshold_at(0.0).to_bytes())
    (root / "notes.txt").write_text("ignored")
    monkeypatch.setattr(mcp_server, "ROOT_PATH", root)
    return root


def test_list_artifacts_picks_up_json(artifact_root):
    assert mcp_server.list_artifacts() == ["models/model_a.json", "threshold.json", "vae.json"]


def test_score_input_tool(artifact_root):
    result = mcp_server.score_input("vae.json", "threshold.json", [0.2, 0.9], num_samples=3)
    assert result["verdict"] == "invalid"
    assert result["score"] < result["alpha"] == 0.0


def test_paths_outside_root_are_refused(artifact_root):
    with pytest.raises(FileNotFoundError):
        mcp_server.score_input("../vae.json", "threshold.json", [0.2, 0.9])
    with pytest.raises(FileNotFoundError):
        mcp_server.summarize_suite("suite-vae.jsonl")


def test_summarize_suite_tool(artifact_root):
    lines = [
        {"seed": 0, "iter": 2, "recon": -1.0, "labels": [0, 1], "valid": True, "input": [0.1, 0.2]},
        {"seed": 3, "iter": 4, "recon": -9.0, "labels": [1, 0], "valid": False, "input": [0.5, 0.2]},
    ]
    (artifact_root / "suite-baseline.jsonl").write_text("".join(json.dumps(line) + "\n" for line in lines))
    assert mcp_server.summarize_suite("suite-baseline.jsonl") == {
        "records": 2,
        "valid": 1,
        "invalid": 1,
        "invalid_percent": 50.0,
        "mean_iterations": 3.0,
    }


def test_coverage_from_vectors_tool():
    result = mcp_server.coverage_from_vectors(["1100", "0110"])
    assert result["vectors"] == [0.5, 0.5]
    assert result["union"]["nc"] == 0.75
    with pytest.raises(ContractViolation):
        mcp_server.coverage_from_vectors([])
