from fastapi.testclient import TestClient
from unittest.mock import patch

from main import app
from app.core.config import settings
from app.core.exceptions import SingularMatrixError
from app.models.results import ResultRow
from app.services.experiments import write_results

client = TestClient(app)


def test_health_check():
    """Test health check endpoint"""
    response = client.get("/api/v1/healthz")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "ok"
    assert body["output_dir"] == settings.OUTPUT_DIR
    assert body["threads"] >= 1


@patch("app.api.v1.endpoints.estimation.monte_carlo_classical")
def test_estimation_nmse_success(mock_monte_carlo):
    """Test NMSE endpoint with a successful Monte Carlo run"""
    mock_monte_carlo.return_value = [
        ResultRow(link_id=3, estimator="ls", snr_db=0.0, nmse=0.1),
        ResultRow(link_id=3, estimator="lmmse_per_entry", snr_db=0.0, nmse=0.05),
    ]

    # Make the request
    response = client.post("/api/v1/estimation/nmse", json={"link_id": 3, "snr_db": [0.0], "trials": 10})

    # Assert the response
    assert response.status_code == 200
    body = response.json()
    assert [row["estimator"] for row in body] == ["ls", "lmmse_per_entry"]
    assert abs(body[0]["nmse_db"] + 10.0) < 1e-9

    cfg, link_id, trials = mock_monte_carlo.call_args[0]
    assert link_id == 3 and trials == 10
    assert cfg.snr_grid_db == [0.0]


@patch("app.api.v1.endpoints.estimation.monte_carlo_classical")
def test_estimation_nmse_numeric_failure(mock_monte_carlo):
    """Test NMSE endpoint when the estimator hits a singular system"""
    mock_monte_carlo.side_effect = SingularMatrixError("ls_double: H2k is rank deficient")

    response = client.post("/api/v1/estimation/nmse", json={"link_id": 3})

    assert response.status_code == 422
    assert "rank deficient" in response.json()["detail"]


def test_estimation_nmse_rejects_bad_request():
    """Test NMSE endpoint validation of link id and trial count"""
    assert client.post("/api/v1/estimation/nmse", json={"link_id": 4}).status_code == 422
    assert client.post("/api/v1/estimation/nmse", json={"trials": 5000}).status_code == 422


def test_results_missing(tmp_path, monkeypatch):
    """Test results endpoint before any evaluation has run"""
    monkeypatch.setattr(settings, "OUTPUT_DIR", str(tmp_path))

    response = client.get("/api/v1/results")

    assert response.status_code == 404
    assert "results.csv" in response.json()["detail"]


def test_results_success(tmp_path, monkeypatch):
    """Test results endpoint reads the rows written by an evaluation"""
    monkeypatch.setattr(settings, "OUTPUT_DIR", str(tmp_path))
    rows = [
        ResultRow(link_id=1, estimator="ls", snr_db=-10.0, nmse=0.5),
        ResultRow(link_id=1, estimator="ls", snr_db=15.0, nmse=0.001),
    ]
    write_results(tmp_path / "results.csv", rows)

    response = client.get("/api/v1/results")

    assert response.status_code == 200
    body = response.json()
    assert len(body) == 2
    assert body[1]["snr_db"] == 15.0
    assert abs(body[1]["nmse"] - 0.001) < 1e-12


def test_results_with_zero_nmse(tmp_path, monkeypatch):
    """Test results endpoint serves a perfect estimate with a null dB value"""
    monkeypatch.setattr(settings, "OUTPUT_DIR", str(tmp_path))
    rows = [
        ResultRow(link_id=3, estimator="oracle", snr_db=0.0, nmse=0.0),
        ResultRow(link_id=3, estimator="ls", snr_db=0.0, nmse=0.1),
    ]
    assert rows[0].nmse_db is None
    write_results(tmp_path / "results.csv", rows)

    response = client.get("/api/v1/results")

    assert response.status_code == 200
    body = response.json()
    assert body[0]["nmse"] == 0.0 and body[0]["nmse_db"] is None
    assert abs(body[1]["nmse_db"] + 10.0) < 1e-9
