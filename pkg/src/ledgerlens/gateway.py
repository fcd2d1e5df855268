"""HTTP/JSON gateway over the orchestrator, plus service configuration.

Precedence for settings: environment variables over config-file values over
defaults. With both backends deterministic the service makes no outbound
network calls.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .dataio import load_allowlist, load_clusters, load_csv, load_model
from .domain import DomainError, ValidationError, parse_timestamp, validate_transaction
from .explain import HttpExplainerBackend
from .features import FeatureExtractor, build_counterparty_graph, temporal_split
from .parsing import HttpParserBackend
from .session import AgentMessage, Orchestrator, UnknownTrace

ENV_PREFIX = "LEDGERLENS_"


@dataclass
class BackendConfig:
    kind: str = "deterministic"  # deterministic | remote
    endpoint: str = ""
    deadline_ms: int = 10_000

    def __post_init__(self) -> None:
        if self.kind not in ("deterministic", "remote"):
            raise DomainError(f"unknown backend kind: {self.kind}")
        if self.deadline_ms <= 0:
            raise DomainError("backend deadline must be positive")
        if self.kind == "remote" and not self.endpoint.startswith(("http://", "https://")):
            raise DomainError(f"remote backend endpoint is not a URL: {self.endpoint!r}")


@dataclass
class ServiceConfig:
    port: int = 8800
    model_path: str = "model.json"
    data_path: str = "transactions.csv"
    allowlist_path: str = ""
    clusters_path: str = ""
    parser_backend: BackendConfig = field(default_factory=BackendConfig)
    explainer_backend: BackendConfig = field(default_factory=BackendConfig)
    prompt_template_versions: dict[str, str] = field(
        default_factory=lambda: {"parser": "parser-v1", "explainer": "explainer-v1"}
    )
    threshold: float = 0.5
    split_boundary: str = "2023-01-01T00:00:00+00:00"
    cors_origins: tuple[str, ...] = ("*",)
    # Optional fixed clock (ISO timestamp); useful when serving a static corpus.
    now: str = ""


def _backend_from(value: Any, default: BackendConfig) -> BackendConfig:
    if isinstance(value, str):
        return BackendConfig(kind="remote", endpoint=value) if value else default
    if isinstance(value, dict):
        return BackendConfig(
            kind=value.get("kind", "remote" if value.get("endpoint") else "deterministic"),
            endpoint=value.get("endpoint", ""),
            deadline_ms=int(value.get("deadline_ms", default.deadline_ms)),
        )
    return default


def load_config(path: str | Path | None = None, env: dict[str, str] | None = None) -> ServiceConfig:
    env = dict(os.environ if env is None else env)
    config = ServiceConfig()
    if path:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        config.port = int(doc.get("port", config.port))
        config.model_path = doc.get("model_path", config.model_path)
        config.data_path = doc.get("data_path", config.data_path)
        config.allowlist_path = doc.get("allowlist_path", config.allowlist_path)
        config.clusters_path = doc.get("clusters_path", config.clusters_path)
        config.parser_backend = _backend_from(doc.get("parser_backend"), config.parser_backend)
        config.explainer_backend = _backend_from(
            doc.get("explainer_backend"), config.explainer_backend
        )
        config.prompt_template_versions.update(doc.get("prompt_template_versions", {}))
        config.threshold = float(doc.get("threshold", config.threshold))
        config.split_boundary = doc.get("split_boundary", config.split_boundary)
        config.cors_origins = tuple(doc.get("cors_origins", config.cors_origins))
        config.now = doc.get("now", config.now)

    if env.get(ENV_PREFIX + "PORT"):
        config.port = int(env[ENV_PREFIX + "PORT"])
    if env.get(ENV_PREFIX + "MODEL_PATH"):
        config.model_path = env[ENV_PREFIX + "MODEL_PATH"]
    if env.get(ENV_PREFIX + "DATA_PATH"):
        config.data_path = env[ENV_PREFIX + "DATA_PATH"]
    if env.get(ENV_PREFIX + "ALLOWLIST_PATH"):
        config.allowlist_path = env[ENV_PREFIX + "ALLOWLIST_PATH"]
    if env.get(ENV_PREFIX + "PARSER_ENDPOINT"):
        config.parser_backend = BackendConfig(
            kind="remote", endpoint=env[ENV_PREFIX + "PARSER_ENDPOINT"]
        )
    if env.get(ENV_PREFIX + "EXPLAINER_ENDPOINT"):
        config.explainer_backend = BackendConfig(
            kind="remote", endpoint=env[ENV_PREFIX + "EXPLAINER_ENDPOINT"]
        )
    return config


def build_orchestrator(config: ServiceConfig) -> Orchestrator:
    """Load the model and corpus and wire backends per config."""
    model = load_model(config.model_path)
    transactions, _ = load_csv(config.data_path)
    boundary = parse_timestamp(config.split_boundary)
    train_window, _ = temporal_split(transactions, boundary)
    graph = build_counterparty_graph(train_window)
    verified = load_allowlist(config.allowlist_path) if config.allowlist_path else frozenset()
    clusters = load_clusters(config.clusters_path) if config.clusters_path else {}
    extractor = FeatureExtractor(
        transactions, graph, verified, schema=model.feature_schema
    )
    parser_backend = None
    if config.parser_backend.kind == "remote":
        parser_backend = HttpParserBackend(
            config.parser_backend.endpoint, config.parser_backend.deadline_ms
        )
    explainer_backend = None
    if config.explainer_backend.kind == "remote":
        explainer_backend = HttpExplainerBackend(
            config.explainer_backend.endpoint, config.explainer_backend.deadline_ms
        )
    clock = None
    if config.now:
        fixed = parse_timestamp(config.now)
        clock = lambda: fixed  # noqa: E731 - tiny fixed clock
    return Orchestrator(
        model=model,
        extractor=extractor,
        clusters=clusters,
        threshold=config.threshold,
        parser_backend=parser_backend,
        explainer_backend=explainer_backend,
        backend_deadline_ms=config.parser_backend.deadline_ms,
        clock=clock,
    )


def _message_document(message: AgentMessage) -> dict[str, Any]:
    return {
        "Trace": message.trace_id,
        "Session": message.session_id,
        "Turn": message.turn_index,
        "Stage": message.stage.value,
        "Schema Version": message.schema_version,
        "Timestamp": message.timestamp.isoformat(),
        "Duration Ms": message.duration_ms,
        "Annotations": list(message.annotations),
        "Payload": message.payload,
    }


def _error_response(status: int, code: str, message: str, trace_id: str | None = None
                    ) -> JSONResponse:
    body: dict[str, Any] = {"code": code, "message": message}
    if trace_id:
        body["trace_id"] = trace_id
    return JSONResponse(status_code=status, content=body)


def build_app(orchestrator: Orchestrator, config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    app = FastAPI(title="ledgerlens gateway")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(config.cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(Exception)
    async def unhandled(request: Request, exc: Exception) -> JSONResponse:
        return _error_response(500, type(exc).__name__, str(exc))

    @app.exception_handler(json.JSONDecodeError)
    async def bad_json(request: Request, exc: json.JSONDecodeError) -> JSONResponse:
        return _error_response(400, "MalformedRequest", str(exc))

    @app.get("/v1/health")
    def health() -> dict[str, str]:
        return {"status": "ok"}

    @app.get("/v1/model")
    def model_summary() -> dict[str, Any]:
        model = orchestrator.model
        return {
            "feature_schema": {
                "version": model.feature_schema.version,
                "names": list(model.feature_schema.names),
            },
            "trees": len(model.trees),
            "learning_rate": model.learning_rate,
            "base_margin": model.base_margin,
            "threshold": orchestrator.threshold,
            "config": {
                "rounds": model.config.rounds,
                "max_depth": model.config.max_depth,
                "learning_rate": model.config.learning_rate,
                "l2_weight": model.config.l2_weight,
                "min_split_gain": model.config.min_split_gain,
                "min_child_hessian": model.config.min_child_hessian,
                "seed": model.config.seed,
            },
            "prompt_template_versions": config.prompt_template_versions,
        }

    @app.post("/v1/sessions")
    def create_session() -> dict[str, str]:
        session = orchestrator.new_session()
        return {"session_id": session.session_id}

    @app.post("/v1/sessions/{session_id}/messages")
    async def post_message(session_id: str, request: Request) -> Any:
        try:
            body = await request.json()
        except Exception as exc:
            return _error_response(400, "MalformedRequest", f"body is not JSON: {exc}")
        if not isinstance(body, dict) or not isinstance(body.get("text"), str):
            return _error_response(400, "MalformedRequest", 'body must be {"text": string}')
        try:
            session = orchestrator.get_session(session_id)
        except UnknownTrace as exc:
            return _error_response(404, "UnknownSession", str(exc))
        result = orchestrator.handle_turn(session, body["text"])
        return {
            "reply": result.reply,
            "scores": [
                {
                    "Transaction": s.tx_id,
                    "Probability": s.probability,
                    "Label": s.predicted_label.value,
                    "Risk Band": s.risk_band.value,
                }
                for s in result.scores
            ],
            "clusters": list(result.clusters),
            "trace_id": result.trace_id,
            "error": result.error,
        }

    @app.get("/v1/sessions/{session_id}/traces/{trace_id}")
    def get_trace(session_id: str, trace_id: str) -> Any:
        try:
            session = orchestrator.get_session(session_id)
            messages = orchestrator.get_trace(session, trace_id)
        except UnknownTrace as exc:
            return _error_response(404, "UnknownTrace", str(exc))
        return {"messages": [_message_document(m) for m in messages]}

    @app.post("/v1/detect")
    async def detect(request: Request) -> Any:
        try:
            body = await request.json()
        except Exception as exc:
            return _error_response(400, "MalformedRequest", f"body is not JSON: {exc}")
        if not isinstance(body, dict) or not isinstance(body.get("transactions"), list):
            return _error_response(
                400, "MalformedRequest", 'body must be {"transactions": [records]}'
            )
        scores = []
        for i, record in enumerate(body["transactions"]):
            if not isinstance(record, dict):
                return _error_response(400, "MalformedRequest", f"record {i} is not an object")
            try:
                tx = validate_transaction(record)
            except ValidationError as exc:
                return _error_response(400, "ValidationError", f"record {i}: {exc}")
            from .boosting import predict_proba
            from .domain import make_score

            probability = predict_proba(orchestrator.model, orchestrator.extractor.vector_for(tx))
            score = make_score(tx.tx_id, probability, orchestrator.threshold)
            scores.append(
                {
                    "Transaction": score.tx_id,
                    "Probability": score.probability,
                    "Label": score.predicted_label.value,
                    "Risk Band": score.risk_band.value,
                }
            )
        return {"scores": scores}

    return app


def serve(config: ServiceConfig) -> None:
    """Blocking entry point: build everything and run uvicorn."""
    import uvicorn

    orchestrator = build_orchestrator(config)
    app = build_app(orchestrator, config)
    uvicorn.run(app, host="0.0.0.0", port=config.port, log_level="info")
