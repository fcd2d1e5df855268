"""Shared fixtures: a small fast synthetic corpus and a model trained on it."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from ledgerlens.boosting import TrainConfig, train
from ledgerlens.dataio import GeneratorConfig, generate_synthetic
from ledgerlens.features import (
    FeatureExtractor,
    build_counterparty_graph,
    default_schema,
    temporal_split,
)
from ledgerlens.session import Orchestrator

# The verbatim single-transaction query and its expected wire document.
GOLDEN_UTTERANCE = (
    "On September 20, 2025, at 11:00 PM (UTC+9), I received 0.8 BTC "
    "(worth about $51,200) to my address 1A2b3C from the counterparty "
    "bc1qxxx. Please check if this transaction looks suspicious."
)
GOLDEN_DOCUMENT = {
    "Date": "2025-09-20T23:00:00+09:00",
    "Receiving Address": "1A2b3C...",
    "Counterparty Address": "bc1qxxx",
    "Value": 0.8,
    "USD Value": 51200.0,
}

SMALL_GENERATOR = GeneratorConfig(seed=11, n_transactions=6000, n_wallets=24,
                                  n_verified_counterparties=16,
                                  n_unverified_counterparties=30)
SMALL_TRAIN = TrainConfig(rounds=40, max_depth=3)

# The orchestrator fixture pins its clock here; scripted "past month" queries
# therefore cover (CLOCK - 30 days, CLOCK].
CLOCK = datetime(2024, 12, 30, 12, 0, tzinfo=timezone.utc)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic(SMALL_GENERATOR)


@pytest.fixture(scope="session")
def small_world(small_dataset):
    """(model, extractor, dataset, train/test split) on the small corpus."""
    transactions = small_dataset.transactions
    train_set, test_set = temporal_split(transactions)
    graph = build_counterparty_graph(train_set)
    extractor = FeatureExtractor(
        transactions, graph, small_dataset.allowlist, schema=default_schema()
    )
    X = np.array([extractor.vector_for(t).values for t in train_set])
    y = [1 if t.label.value == "anomalous" else 0 for t in train_set]
    model = train(X, y, SMALL_TRAIN, schema=extractor.schema)
    return model, extractor, small_dataset, (train_set, test_set)


@pytest.fixture()
def orchestrator(small_world):
    model, extractor, dataset, _ = small_world
    return Orchestrator(
        model=model,
        extractor=extractor,
        clusters=dataset.clusters,
        clock=lambda: CLOCK,
    )


@pytest.fixture()
def analysis_wallet(small_dataset):
    """A wallet whose trailing month mixes exchange and other counterparties,
    so a cluster refinement keeps a non-empty strict subset."""
    start = CLOCK - timedelta(days=30)
    clusters = small_dataset.clusters
    exchange: dict[str, int] = {}
    other: dict[str, int] = {}
    for tx in small_dataset.transactions:
        if start < tx.timestamp <= CLOCK:
            bucket = exchange if clusters.get(tx.counterparty_address) == "exchange" else other
            bucket[tx.receiving_address] = bucket.get(tx.receiving_address, 0) + 1
    mixed = [w for w in exchange if other.get(w, 0) >= 1]
    assert mixed, "small corpus must contain a mixed-activity wallet"
    return max(mixed, key=lambda w: exchange[w] + other.get(w, 0))
