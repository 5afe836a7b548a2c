import pytest
import requests

from progressive_distill import monitor_client


class FakeResponse:
    def __init__(self, payload, status_code=200):
        self.payload = payload
        self.status_code = status_code

    def raise_for_status(self):
        if self.status_code >= 400:
            raise requests.exceptions.HTTPError(f"{self.status_code} error")

    def json(self):
        return self.payload


@pytest.fixture
def calls(monkeypatch):
    recorded = []

    def fake_get(url, timeout):
        recorded.append(("GET", url, None))
        if url.endswith("/runs/missing"):
            return FakeResponse({"error": "unknown run missing"}, 404)
        return FakeResponse({"run_id": url.rsplit("/", 1)[-1], "status": "running"})

    def fake_post(url, json=None, timeout=None):
        recorded.append(("POST", url, json))
        return FakeResponse({"status": "started", "run_id": (json or {}).get("run_id", "auto")})

    monkeypatch.setattr(monitor_client.requests, "get", fake_get)
    monkeypatch.setattr(monitor_client.requests, "post", fake_post)
    return recorded


def _unreachable(*args, **kwargs):
    raise requests.exceptions.ConnectionError("connection refused")


class TestMonitorClient:
    def test_fetch_status(self, calls):
        status = monitor_client.fetch_run_status("r1", base_url="http://monitor:9000/")
        assert status == {"run_id": "r1", "status": "running"}
        assert calls[0][1] == "http://monitor:9000/runs/r1"

    def test_fetch_unknown_run(self, calls):
        assert monitor_client.fetch_run_status("missing", base_url="http://m") is None

    def test_start_payload(self, calls):
        result = monitor_client.start_remote_run("configs/smoke.yaml", run_id="r2", base_url="http://m")
        assert result["run_id"] == "r2"
        assert calls[0] == (
            "POST", "http://m/runs/start",
            {"config_path": "configs/smoke.yaml", "allow_violations": False, "run_id": "r2"},
        )

    def test_stop(self, calls):
        assert monitor_client.stop_remote_run("r3", base_url="http://m")
        assert calls[0][1] == "http://m/runs/r3/stop"

    def test_unreachable_monitor(self, monkeypatch):
        monkeypatch.setattr(monitor_client.requests, "get", _unreachable)
        monkeypatch.setattr(monitor_client.requests, "post", _unreachable)
        assert monitor_client.fetch_run_status("r1", base_url="http://m") is None
        assert monitor_client.start_remote_run("x.yaml", base_url="http://m")["status"] == "error"
        assert monitor_client.stop_remote_run("r1", base_url="http://m") is False
