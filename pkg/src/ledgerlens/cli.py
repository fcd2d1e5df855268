"""Command-line interface: generate, train, eval, serve, ask.

Exit codes: 0 success, 1 usage error, 2 runtime error. Diagnostics go to
standard error; results go to standard output.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .boosting import TrainConfig, train
from .dataio import (
    GeneratorConfig,
    generate_synthetic,
    load_allowlist,
    load_csv,
    load_model,
    save_model,
    write_dataset,
)
from .domain import DomainError, parse_timestamp
from .evaluation import evaluate
from .features import (
    DEFAULT_SPLIT_BOUNDARY,
    FeatureExtractor,
    build_counterparty_graph,
    default_schema,
    temporal_split,
)
from .gateway import ServiceConfig, build_orchestrator, load_config, serve


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ledgerlens", description="transaction anomaly analysis service")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic labeled dataset")
    p.add_argument("--out", default="data", help="output directory")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n", type=int, default=20_000, dest="n_transactions")
    p.add_argument("--rate", type=float, default=0.178, dest="anomaly_rate")

    p = sub.add_parser("train", help="train a model from a transaction CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="model.json")
    p.add_argument("--allowlist", default="")
    p.add_argument("--boundary", default=DEFAULT_SPLIT_BOUNDARY.isoformat())
    p.add_argument("--rounds", type=int, default=200)
    p.add_argument("--max-depth", type=int, default=4)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--l2", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="evaluate a model on the test side of the split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--allowlist", default="")
    p.add_argument("--boundary", default=DEFAULT_SPLIT_BOUNDARY.isoformat())
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--json", dest="json_out", default="", help="also write the JSON report here")

    p = sub.add_parser("serve", help="serve the HTTP gateway")
    p.add_argument("--config", default="", help="JSON config file")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--model", default="")
    p.add_argument("--data", default="")
    p.add_argument("--allowlist", default="")
    p.add_argument("--clusters", default="")
    p.add_argument("--now", default="", help="fix the session clock (ISO timestamp)")

    p = sub.add_parser("ask", help="run one query through the local loop, no server")
    p.add_argument("text")
    p.add_argument("--config", default="", help="JSON config file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--allowlist", default="")
    p.add_argument("--clusters", default="")
    p.add_argument("--now", default="", help="fix the session clock (ISO timestamp)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--trace", action="store_true", help="print the per-stage trace")

    return parser


def _features_for(transactions, extractor):
    X = np.array([extractor.vector_for(tx).values for tx in transactions], dtype=np.float64)
    y = [1 if tx.label.value == "anomalous" else 0 for tx in transactions]
    return X, y


def _cmd_generate(args) -> int:
    config = GeneratorConfig(
        seed=args.seed, n_transactions=args.n_transactions, anomaly_rate=args.anomaly_rate
    )
    dataset = generate_synthetic(config)
    paths = write_dataset(dataset, args.out)
    anomalous = sum(1 for t in dataset.transactions if t.label.value == "anomalous")
    print(f"wrote {len(dataset.transactions)} transactions ({anomalous} anomalous)")
    for name, path in paths.items():
        print(f"  {name}: {path}")
    return 0


def _cmd_train(args) -> int:
    transactions, report = load_csv(args.data)
    boundary = parse_timestamp(args.boundary)
    train_set, test_set = temporal_split(transactions, boundary)
    if not train_set:
        raise DomainError("no rows before the split boundary; nothing to train on")
    graph = build_counterparty_graph(train_set)
    verified = load_allowlist(args.allowlist) if args.allowlist else frozenset()
    extractor = FeatureExtractor(transactions, graph, verified, schema=default_schema())
    X, y = _features_for(train_set, extractor)
    config = TrainConfig(
        rounds=args.rounds,
        max_depth=args.max_depth,
        learning_rate=args.learning_rate,
        l2_weight=args.l2,
        seed=args.seed,
    )
    model = train(X, y, config, schema=extractor.schema)
    save_model(model, args.out)
    print(
        f"trained {len(model.trees)} trees on {len(train_set)} rows "
        f"({report.accepted} accepted, {report.total_rows - report.accepted} dropped); "
        f"{len(test_set)} rows held out after {boundary.date()}"
    )
    print(f"model written to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    transactions, _ = load_csv(args.data)
    model = load_model(args.model)
    boundary = parse_timestamp(args.boundary)
    train_set, test_set = temporal_split(transactions, boundary)
    graph = build_counterparty_graph(train_set)
    verified = load_allowlist(args.allowlist) if args.allowlist else frozenset()
    extractor = FeatureExtractor(transactions, graph, verified, schema=model.feature_schema)
    report = evaluate(
        model,
        extractor,
        test_set,
        threshold=args.threshold,
        fingerprint={"train_rows": len(train_set), "test_rows": len(test_set)},
    )
    print(report.to_text())
    if args.json_out:
        Path(args.json_out).write_text(report.to_json(), encoding="utf-8")
        print(f"json report written to {args.json_out}", file=sys.stderr)
    return 0


def _service_config(args) -> ServiceConfig:
    config = load_config(args.config or None)
    if getattr(args, "port", 0):
        config.port = args.port
    if args.model:
        config.model_path = args.model
    if args.data:
        config.data_path = args.data
    if args.allowlist:
        config.allowlist_path = args.allowlist
    if getattr(args, "clusters", ""):
        config.clusters_path = args.clusters
    if args.now:
        config.now = args.now
    return config


def _cmd_serve(args) -> int:
    serve(_service_config(args))
    return 0


def _cmd_ask(args) -> int:
    config = _service_config(args)
    config.threshold = args.threshold
    orchestrator = build_orchestrator(config)
    session = orchestrator.new_session()
    result = orchestrator.handle_turn(session, args.text)
    print(result.reply)
    if result.scores:
        print()
        for score in result.scores:
            print(
                f"  {score.tx_id}  p={score.probability:.4f}  "
                f"{score.predicted_label.value} ({score.risk_band.value})"
            )
    if args.trace:
        print()
        for message in orchestrator.get_trace(session, result.trace_id):
            print(f"[{message.stage.value}] {message.duration_ms:.1f} ms")
            for key, value in message.payload.items():
                print(f"    {key}: {value}")
    return 0 if result.error is None else 2


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "serve": _cmd_serve,
    "ask": _cmd_ask,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
