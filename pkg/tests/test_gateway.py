"""Gateway endpoints, configuration precedence, and the CLI surface."""

from __future__ import annotations

import json
import re
import socket

import pytest
from fastapi.testclient import TestClient

from ledgerlens.cli import main as cli_main
from ledgerlens.gateway import (
    BackendConfig,
    ServiceConfig,
    build_app,
    load_config,
)
from conftest import GOLDEN_UTTERANCE



@pytest.fixture()
def client(orchestrator):
    return TestClient(build_app(orchestrator), raise_server_exceptions=False)


class TestEndpoints:
    def test_health(self, client):
        response = client.get("/v1/health")
        assert response.status_code == 200
        assert response.json() == {"status": "ok"}

    def test_model_summary(self, client, small_world):
        model, _, _, _ = small_world
        body = client.get("/v1/model").json()
        assert body["feature_schema"]["version"] == model.feature_schema.version
        assert body["trees"] == len(model.trees)
        assert body["config"]["max_depth"] == model.config.max_depth

    def test_message_flow_with_trace(self, client):
        session_id = client.post("/v1/sessions").json()["session_id"]
        response = client.post(
            f"/v1/sessions/{session_id}/messages", json={"text": GOLDEN_UTTERANCE}
        )
        assert response.status_code == 200
        body = response.json()
        assert body["error"] is None
        assert body["scores"], body
        assert f"{body['scores'][0]['Probability']:.2f}"[:3] in body["reply"]
        trace = client.get(
            f"/v1/sessions/{session_id}/traces/{body['trace_id']}"
        ).json()
        assert [m["Stage"] for m in trace["messages"]] == ["parse", "detect", "explain"]

    def test_unknown_session_404(self, client):
        response = client.post("/v1/sessions/nope/messages", json={"text": "hi"})
        assert response.status_code == 404
        assert response.json()["code"] == "UnknownSession"

    def test_unknown_trace_404(self, client):
        session_id = client.post("/v1/sessions").json()["session_id"]
        response = client.get(f"/v1/sessions/{session_id}/traces/none")
        assert response.status_code == 404
        assert response.json()["code"] == "UnknownTrace"

    def test_malformed_body_is_structured_error(self, client):
        session_id = client.post("/v1/sessions").json()["session_id"]
        response = client.post(
            f"/v1/sessions/{session_id}/messages",
            content=b"{not json",
            headers={"content-type": "application/json"},
        )
        assert response.status_code == 400
        assert response.json()["code"] == "MalformedRequest"
        response = client.post(f"/v1/sessions/{session_id}/messages", json={"nope": 1})
        assert response.status_code == 400

    def test_detect_batch(self, client, small_dataset):
        tx = small_dataset.transactions[-1]
        record = {
            "tx_id": "batch-1",
            "timestamp": tx.timestamp.isoformat(),
            "receiving_address": tx.receiving_address,
            "counterparty_address": tx.counterparty_address,
            "value_btc": tx.value_btc,
            "usd_value": tx.usd_value,
            "direction": tx.direction.value,
        }
        response = client.post("/v1/detect", json={"transactions": [record]})
        assert response.status_code == 200
        scores = response.json()["scores"]
        assert len(scores) == 1
        assert 0.0 < scores[0]["Probability"] < 1.0

    def test_detect_rejects_invalid_record(self, client):
        response = client.post("/v1/detect", json={"transactions": [{"tx_id": "x"}]})
        assert response.status_code == 400
        assert response.json()["code"] == "ValidationError"

    def test_no_network_io_with_deterministic_backends(self, client, monkeypatch):
        """The full turn path must work with outbound sockets forbidden."""

        def deny(*args, **kwargs):
            raise AssertionError("network call attempted")

        monkeypatch.setattr(socket.socket, "connect", deny)
        session_id = client.post("/v1/sessions").json()["session_id"]
        response = client.post(
            f"/v1/sessions/{session_id}/messages", json={"text": GOLDEN_UTTERANCE}
        )
        assert response.status_code == 200
        assert response.json()["error"] is None


class TestConfig:
    def test_defaults(self):
        config = load_config(env={})
        assert config.parser_backend.kind == "deterministic"
        assert config.threshold == 0.5

    def test_file_then_env_precedence(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"port": 9101, "model_path": "from-file.json"}))
        config = load_config(path, env={"LEDGERLENS_PORT": "9200"})
        assert config.port == 9200
        assert config.model_path == "from-file.json"

    def test_remote_backend_from_env(self):
        config = load_config(env={"LEDGERLENS_PARSER_ENDPOINT": "http://127.0.0.1:9/parse"})
        assert config.parser_backend.kind == "remote"
        assert config.parser_backend.endpoint.endswith("/parse")

    def test_backend_validation(self):
        with pytest.raises(Exception):
            BackendConfig(kind="remote", endpoint="not-a-url")
        with pytest.raises(Exception):
            BackendConfig(deadline_ms=0)


@pytest.fixture(scope="module")
def cli_artifacts(tmp_path_factory):
    """generate + train once for the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data_dir = root / "data"
    model_path = root / "model.json"
    assert cli_main(["generate", "--out", str(data_dir), "--seed", "3", "--n", "900"]) == 0
    assert cli_main([
        "train",
        "--data", str(data_dir / "transactions.csv"),
        "--allowlist", str(data_dir / "allowlist.txt"),
        "--out", str(model_path),
        "--rounds", "30",
        "--max-depth", "3",
    ]) == 0
    return data_dir, model_path


class TestCli:
    def test_generate_deterministic(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert cli_main(["generate", "--out", str(a), "--seed", "7", "--n", "400"]) == 0
        assert cli_main(["generate", "--out", str(b), "--seed", "7", "--n", "400"]) == 0
        assert (a / "transactions.csv").read_bytes() == (b / "transactions.csv").read_bytes()

    def test_eval_prints_metrics(self, cli_artifacts, capsys):
        data_dir, model_path = cli_artifacts
        code = cli_main([
            "eval",
            "--data", str(data_dir / "transactions.csv"),
            "--allowlist", str(data_dir / "allowlist.txt"),
            "--model", str(model_path),
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "precision" in out and "f1" in out

    def test_ask_prints_scored_narrative(self, cli_artifacts, capsys):
        data_dir, model_path = cli_artifacts
        code = cli_main([
            "ask", GOLDEN_UTTERANCE,
            "--model", str(model_path),
            "--data", str(data_dir / "transactions.csv"),
            "--allowlist", str(data_dir / "allowlist.txt"),
            "--now", "2024-12-30T12:00:00+00:00",
            "--trace",
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "anomaly score" in out
        assert re.search(r"\(\d\.\d\d\)", out)  # the 2-decimal score in the narrative
        assert "[parse]" in out and "[detect]" in out and "[explain]" in out

    def test_usage_error_exit_code(self, capsys):
        assert cli_main(["train"]) == 1  # --data is required
        assert "usage error" in capsys.readouterr().err

    def test_runtime_error_exit_code(self, tmp_path, capsys):
        code = cli_main([
            "eval", "--data", str(tmp_path / "absent.csv"), "--model", "none.json",
        ])
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_api_cli_parity(self, cli_artifacts, small_world):
        """ask and the POST path produce the same reply for the same inputs."""
        from ledgerlens.gateway import build_orchestrator

        data_dir, model_path = cli_artifacts
        config = ServiceConfig(
            model_path=str(model_path),
            data_path=str(data_dir / "transactions.csv"),
            allowlist_path=str(data_dir / "allowlist.txt"),
            now="2024-12-30T12:00:00+00:00",
        )
        orch_a = build_orchestrator(config)
        orch_b = build_orchestrator(config)
        session_a = orch_a.new_session()
        reply_a = orch_a.handle_turn(session_a, GOLDEN_UTTERANCE).reply
        client = TestClient(build_app(orch_b))
        session_b = client.post("/v1/sessions").json()["session_id"]
        reply_b = client.post(
            f"/v1/sessions/{session_b}/messages", json={"text": GOLDEN_UTTERANCE}
        ).json()["reply"]
        assert reply_a == reply_b
