import json

import pytest
from fastapi import HTTPException
from fastapi.testclient import TestClient

import valid_testgen.fastapi_server as fastapi_server
from helpers import FIXTURES, identity_vae, threshold_at
from valid_testgen.vae import save_vae


@pytest.fixture
def artifact_root(tmp_path, monkeypatch):
    root = (tmp_path / "runs").resolve()
    root.mkdir()
    (root / "vae.json").write_bytes(save_vae(identity_vae()))
    (root / "threshold.json").write_bytes(threshold_at(-10.0).to_bytes())
    monkeypatch.setattr(fastapi_server, "ARTIFACT_ROOT", root)
    return root


def test_resolve_artifact_path_within_root(artifact_root):
    assert fastapi_server.resolve_artifact_path("vae.json") == artifact_root / "vae.json"


def test_resolve_artifact_path_rejects_escape(artifact_root):
    with pytest.raises(HTTPException) as exc_info:
        fastapi_server.resolve_artifact_path("../secret.json")
    assert exc_info.value.status_code == 403


def test_resolve_artifact_path_missing_file(artifact_root):
    with pytest.raises(HTTPException) as exc_info:
        fastapi_server.resolve_artifact_path("absent.json")
    assert exc_info.value.status_code == 404


def test_health_and_listing(artifact_root):
    client = TestClient(fastapi_server.APP)
    assert client.get("/health").json() == {"status": "healthy", "service": "valid-testgen"}
    assert client.get("/artifacts").json() == {"artifacts": ["threshold.json", "vae.json"]}


def test_score_route(artifact_root):
    client = TestClient(fastapi_server.APP)
    payload = {"vae_path": "vae.json", "threshold_path": "threshold.json", "input": [0.5, 0.5]}
    response = client.post("/validity/score", json=payload)
    assert response.status_code == 200
    body = response.json()
    assert body["verdict"] == "valid"
    assert body["alpha"] == -10.0
    assert body["score"] == pytest.approx(-1.8378770664093453, abs=1e-9)


def test_score_route_errors(artifact_root):
    client = TestClient(fastapi_server.APP)
    (artifact_root / "broken.json").write_text("{}")
    base = {"vae_path": "vae.json", "threshold_path": "threshold.json"}
    assert client.post("/validity/score", json=base | {"input": [0.5, 0.5, 0.5]}).status_code == 400
    assert client.post("/validity/score", json=base | {"vae_path": "broken.json", "input": [0.5, 0.5]}).status_code == 422
    assert client.post("/validity/score", json=base | {"vae_path": "../x.json", "input": [0.5]}).status_code == 403


def test_coverage_route():
    vectors = json.loads((FIXTURES / "coverage_vectors.json").read_text())
    client = TestClient(fastapi_server.APP)
    response = client.post("/coverage/ratios", json={"vectors": [vectors["valid"], vectors["invalid"]]})
    assert response.status_code == 200
    assert [round(value, 3) for value in response.json()["vectors"]] == [0.692, 0.673]
    assert round(response.json()["union"]["nc"], 3) == 0.808
    assert client.post("/coverage/ratios", json={"vectors": ["01", "011"]}).status_code == 400
