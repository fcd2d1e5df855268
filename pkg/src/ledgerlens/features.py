"""Feature engineering: wallet-history windows, counterparty graph, temporal split.

Every feature is computed strictly from data earlier than the transaction
being scored; trailing windows are half-open intervals (t - W, t).
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Iterable, Sequence

from .domain import Direction, DomainError, Transaction

DEFAULT_SPLIT_BOUNDARY = datetime(2023, 1, 1, tzinfo=timezone.utc)

_BASE_FEATURE_NAMES = (
    "value_btc",
    "usd_value",
    "log1p_usd_value",
    "hour_of_day",
    "is_off_peak",
    "day_of_week",
    "direction_out",
    "value_pctile_30d",
    "tx_count_24h",
    "tx_count_7d",
    "mean_usd_7d",
    "std_usd_7d",
    "unique_counterparties_7d",
    "counterparty_in_degree",
    "counterparty_out_degree",
    "counterparty_verified",
)

OFF_PEAK_START = 22  # local-time hours in [22:00, 06:00) count as off-peak
OFF_PEAK_END = 6


class SchemaMismatch(DomainError):
    """Feature vector and model disagree on the schema version."""


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered, versioned feature name list; embedded in persisted models."""

    version: int
    names: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.names)) != len(self.names):
            raise DomainError("feature names must be unique")

    @property
    def arity(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


def default_schema(equal_value_burst: bool = False) -> FeatureSchema:
    """Version 1 is the base 16-feature schema; version 2 swaps tx_count_7d
    for equal_value_burst (trailing-1h transfers within 1% of this USD value)."""
    if not equal_value_burst:
        return FeatureSchema(version=1, names=_BASE_FEATURE_NAMES)
    names = list(_BASE_FEATURE_NAMES)
    names[names.index("tx_count_7d")] = "equal_value_burst"
    return FeatureSchema(version=2, names=tuple(names))


@dataclass(frozen=True)
class FeatureVector:
    schema_version: int
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if any(not math.isfinite(v) for v in self.values):
            raise DomainError("feature vector contains a non-finite value")


class CounterpartyGraph:
    """Directed payer -> payee multigraph; node degrees count edge multiplicity."""

    def __init__(self) -> None:
        self._in: dict[str, int] = defaultdict(int)
        self._out: dict[str, int] = defaultdict(int)
        self._edges: dict[tuple[str, str], int] = defaultdict(int)

    def add_edge(self, payer: str, payee: str) -> None:
        self._edges[(payer, payee)] += 1
        self._out[payer] += 1
        self._in[payee] += 1

    def in_degree(self, address: str) -> int:
        return self._in.get(address, 0)

    def out_degree(self, address: str) -> int:
        return self._out.get(address, 0)

    def multiplicity(self, payer: str, payee: str) -> int:
        return self._edges.get((payer, payee), 0)

    @property
    def nodes(self) -> set[str]:
        return set(self._in) | set(self._out)

    @property
    def total_edges(self) -> int:
        return sum(self._edges.values())


def transaction_flow(tx: Transaction) -> tuple[str, str]:
    """(payer, payee) for a transaction, resolved from its direction."""
    if tx.direction is Direction.OUTGOING:
        return tx.receiving_address, tx.counterparty_address
    return tx.counterparty_address, tx.receiving_address


def build_counterparty_graph(transactions: Iterable[Transaction]) -> CounterpartyGraph:
    graph = CounterpartyGraph()
    for tx in transactions:
        payer, payee = transaction_flow(tx)
        graph.add_edge(payer, payee)
    return graph


def percentile_rank(value: float, window: Sequence[float]) -> float:
    """Fraction of window elements strictly below value; 0.5 on an empty window."""
    if not window:
        return 0.5
    below = sum(1 for w in window if w < value)
    return below / len(window)


def temporal_split(
    transactions: Iterable[Transaction],
    boundary: datetime = DEFAULT_SPLIT_BOUNDARY,
) -> tuple[list[Transaction], list[Transaction]]:
    """Partition by timestamp: strictly before the boundary trains, the rest tests."""
    train: list[Transaction] = []
    test: list[Transaction] = []
    for tx in transactions:
        (train if tx.timestamp < boundary else test).append(tx)
    return train, test


def compute_features(
    tx: Transaction,
    history: Sequence[Transaction],
    graph: CounterpartyGraph,
    verified: frozenset[str] | set[str],
    schema: FeatureSchema,
) -> FeatureVector:
    """The feature vector for one transaction.

    history holds the receiving wallet's transactions; anything not strictly
    earlier than tx.timestamp is ignored so the vector can never read
    future data.
    """
    t = tx.timestamp
    prior = [h for h in history if h.timestamp < t]

    def window(days: float) -> list[Transaction]:
        start = t - timedelta(days=days)
        return [h for h in prior if h.timestamp > start]

    w7 = window(7)
    w1 = window(1)
    w30_usd = [h.usd_value for h in window(30)]
    usd7 = [h.usd_value for h in w7]

    hour = t.hour + t.minute / 60.0
    is_off_peak = 1.0 if (t.hour >= OFF_PEAK_START or t.hour < OFF_PEAK_END) else 0.0
    mean7 = sum(usd7) / len(usd7) if usd7 else 0.0
    if len(usd7) >= 2:
        var7 = sum((u - mean7) ** 2 for u in usd7) / len(usd7)
        std7 = math.sqrt(var7)
    else:
        std7 = 0.0

    values: dict[str, float] = {
        "value_btc": tx.value_btc,
        "usd_value": tx.usd_value,
        "log1p_usd_value": math.log1p(tx.usd_value),
        "hour_of_day": hour,
        "is_off_peak": is_off_peak,
        "day_of_week": float(t.weekday()),
        "direction_out": 1.0 if tx.direction is Direction.OUTGOING else 0.0,
        "value_pctile_30d": percentile_rank(tx.usd_value, w30_usd),
        "tx_count_24h": float(len(w1)),
        "tx_count_7d": float(len(w7)),
        "mean_usd_7d": mean7,
        "std_usd_7d": std7,
        "unique_counterparties_7d": float(len({h.counterparty_address for h in w7})),
        "counterparty_in_degree": float(graph.in_degree(tx.counterparty_address)),
        "counterparty_out_degree": float(graph.out_degree(tx.counterparty_address)),
        "counterparty_verified": 1.0 if tx.counterparty_address in verified else 0.0,
    }
    if "equal_value_burst" in schema.names:
        start = t - timedelta(hours=1)
        tol = 0.01 * tx.usd_value
        values["equal_value_burst"] = float(
            sum(
                1
                for h in prior
                if h.timestamp > start and abs(h.usd_value - tx.usd_value) <= tol
            )
        )
    return FeatureVector(schema.version, tuple(values[name] for name in schema.names))


class FeatureExtractor:
    """Binds a transaction corpus, graph, and allow-list into one feature source.

    Wallet histories are indexed once; lookups bisect on timestamps, so
    per-transaction feature computation touches only the relevant window.
    """

    def __init__(
        self,
        transactions: Iterable[Transaction],
        graph: CounterpartyGraph,
        verified: Iterable[str] = (),
        schema: FeatureSchema | None = None,
    ) -> None:
        self.schema = schema or default_schema()
        self.graph = graph
        self.verified = frozenset(verified)
        self._by_wallet: dict[str, list[Transaction]] = defaultdict(list)
        for tx in transactions:
            self._by_wallet[tx.receiving_address].append(tx)
        for txs in self._by_wallet.values():
            txs.sort(key=lambda tx: tx.timestamp)
        self._times: dict[str, list[datetime]] = {
            wallet: [tx.timestamp for tx in txs] for wallet, txs in self._by_wallet.items()
        }

    def history(self, tx: Transaction) -> list[Transaction]:
        """The wallet's transactions strictly earlier than tx.timestamp."""
        txs = self._by_wallet.get(tx.receiving_address, [])
        times = self._times.get(tx.receiving_address, [])
        cut = bisect_left(times, tx.timestamp)
        return txs[:cut]

    def wallet_window(self, wallet: str, start: datetime, end: datetime) -> list[Transaction]:
        """Transactions of a wallet with start < timestamp <= end."""
        txs = self._by_wallet.get(wallet, [])
        times = self._times.get(wallet, [])
        lo = bisect_right(times, start)
        hi = bisect_right(times, end)
        return txs[lo:hi]

    def wallets(self) -> list[str]:
        return sorted(self._by_wallet)

    def vector_for(self, tx: Transaction) -> FeatureVector:
        return compute_features(tx, self.history(tx), self.graph, self.verified, self.schema)
