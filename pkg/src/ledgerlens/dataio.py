"""Dataset ingestion, synthetic corpus generation, and model persistence.

The synthetic generator stands in for the unavailable labeled corpus: it
reproduces the documented class ratio (anomaly_rate 0.178) and time span
(2020-2024) with mixing-style anomalies: bursts of near-equal-value
night-time transfers fanning out to fresh, unverified counterparties.
Labels are assigned at generation, so their provenance is by construction;
the realism gap versus real mixing data is documented, not bridged.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .boosting import TrainConfig, TreeEnsemble, TreeNode
from .domain import (
    Direction,
    DomainError,
    Label,
    Transaction,
    ValidationError,
    format_timestamp,
    validate_transaction,
)
from .features import FeatureSchema

MODEL_FORMAT_VERSION = 1

CSV_COLUMNS = (
    "tx_id",
    "timestamp",
    "receiving_address",
    "counterparty_address",
    "value_btc",
    "usd_value",
    "direction",
    "label",
)

_BASE58_ALPHABET = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"
_BECH32_ALPHABET = "qpzry9x8gf2tvdw0s3jn54khce6mua7l"


class FileUnreadable(DomainError):
    pass


class MissingHeader(DomainError):
    pass


class InvalidConfig(DomainError):
    pass


class VersionMismatch(DomainError):
    pass


class CorruptDocument(DomainError):
    pass


@dataclass
class IngestReport:
    """Row accounting for one CSV load; dropped rows are counted per reason."""

    total_rows: int = 0
    accepted: int = 0
    dropped: dict[str, int] = field(default_factory=dict)

    def count_drop(self, code: str) -> None:
        self.dropped[code] = self.dropped.get(code, 0) + 1


def load_csv(path: str | Path) -> tuple[list[Transaction], IngestReport]:
    """Read a transaction CSV, dropping rows that fail validation.

    Rows are dropped only for missing/invalid key fields, never for extreme
    values. The report counts drops per issue code.
    """
    path = Path(path)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc
    with handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise MissingHeader(f"{path} has no header row")
        missing_cols = set(CSV_COLUMNS[:6]) - set(reader.fieldnames)
        if missing_cols:
            raise MissingHeader(f"{path} lacks columns: {', '.join(sorted(missing_cols))}")
        report = IngestReport()
        transactions: list[Transaction] = []
        for row in reader:
            report.total_rows += 1
            try:
                transactions.append(validate_transaction(row))
                report.accepted += 1
            except ValidationError as exc:
                for issue in exc.issues:
                    report.count_drop(issue.code)
    return transactions, report


def save_csv(transactions: list[Transaction], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for tx in transactions:
            writer.writerow(
                [
                    tx.tx_id,
                    format_timestamp(tx.timestamp),
                    tx.receiving_address,
                    tx.counterparty_address,
                    repr(tx.value_btc),
                    repr(tx.usd_value),
                    tx.direction.value,
                    tx.label.value,
                ]
            )


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 7
    n_transactions: int = 20_000
    anomaly_rate: float = 0.178
    start: datetime = datetime(2020, 1, 1, tzinfo=timezone.utc)
    end: datetime = datetime(2024, 12, 31, tzinfo=timezone.utc)
    n_wallets: int = 120
    n_verified_counterparties: int = 60
    n_unverified_counterparties: int = 150
    burst_size_range: tuple[int, int] = (5, 20)
    cluster_labels: tuple[str, ...] = ("exchange", "mixer", "unknown")

    def __post_init__(self) -> None:
        if self.n_transactions < 1:
            raise InvalidConfig("n_transactions must be positive")
        if not 0.0 < self.anomaly_rate < 1.0:
            raise InvalidConfig("anomaly_rate must be inside (0, 1)")
        if self.start >= self.end:
            raise InvalidConfig("start must precede end")
        lo, hi = self.burst_size_range
        if lo < 1 or hi < lo:
            raise InvalidConfig("burst_size_range must satisfy 1 <= low <= high")
        if self.n_wallets < 1 or self.n_verified_counterparties < 1:
            raise InvalidConfig("wallet and counterparty pools must be non-empty")


@dataclass(frozen=True)
class CounterpartyInfo:
    cluster: str
    verified: bool


@dataclass
class GeneratedDataset:
    transactions: list[Transaction]
    counterparties: dict[str, CounterpartyInfo]

    @property
    def allowlist(self) -> list[str]:
        return sorted(a for a, info in self.counterparties.items() if info.verified)

    @property
    def clusters(self) -> dict[str, str]:
        return {a: info.cluster for a, info in self.counterparties.items()}


def _random_base58(rng: np.random.Generator, prefix: str, length: int) -> str:
    body = "".join(
        _BASE58_ALPHABET[i] for i in rng.integers(0, len(_BASE58_ALPHABET), size=length)
    )
    return prefix + body


def _random_bech32(rng: np.random.Generator, length: int) -> str:
    body = "".join(
        _BECH32_ALPHABET[i] for i in rng.integers(0, len(_BECH32_ALPHABET), size=length)
    )
    return "bc1q" + body


def _price_usd(moment: datetime, start: datetime) -> float:
    """Smooth synthetic BTC price path so USD and BTC values stay consistent."""
    days = (moment - start).total_seconds() / 86_400.0
    return (
        28_000.0
        + 9_000.0 * math.sin(2 * math.pi * days / 480.0)
        + 5_000.0 * math.sin(2 * math.pi * days / 97.0 + 1.3)
        + 9.5 * days
    )


def generate_synthetic(config: GeneratorConfig = GeneratorConfig()) -> GeneratedDataset:
    """A labeled corpus with background traffic and mixing bursts.

    Deterministic per seed: the same config yields a byte-identical CSV. The
    anomalous row count is exactly round(anomaly_rate * n_transactions).
    """
    rng = np.random.default_rng(config.seed)
    span_seconds = (config.end - config.start).total_seconds()

    wallets = [_random_base58(rng, "1", 32) for _ in range(config.n_wallets)]
    verified_pool = [_random_bech32(rng, 30) for _ in range(config.n_verified_counterparties)]
    unknown_pool = [
        _random_base58(rng, "3", 32) for _ in range(config.n_unverified_counterparties)
    ]
    counterparties: dict[str, CounterpartyInfo] = {}
    for address in verified_pool:
        counterparties[address] = CounterpartyInfo(cluster="exchange", verified=True)
    for address in unknown_pool:
        counterparties[address] = CounterpartyInfo(cluster="unknown", verified=False)

    n_anomalous = round(config.anomaly_rate * config.n_transactions)
    n_normal = config.n_transactions - n_anomalous
    wallet_weights = rng.dirichlet(np.full(config.n_wallets, 2.0))

    rows: list[tuple[datetime, str, str, float, float, Direction, Label]] = []

    # Background traffic: daytime-biased, log-normal values, counterparties
    # mostly drawn from reusable pools; a slice of one-off fresh addresses
    # keeps "never seen before" from acting as a label oracle.
    for _ in range(n_normal):
        wallet = wallets[int(rng.choice(config.n_wallets, p=wallet_weights))]
        offset = float(rng.uniform(0.0, span_seconds))
        moment = config.start + timedelta(seconds=offset)
        if rng.random() < 0.85:
            hour = int(np.clip(round(rng.normal(14.0, 3.5)), 6, 21))
        else:
            hour = int(rng.integers(0, 24))
        moment = moment.replace(hour=hour, minute=int(rng.integers(0, 60)),
                                second=int(rng.integers(0, 60)), microsecond=0)
        value_btc = float(rng.lognormal(mean=-3.2, sigma=1.1))
        usd_value = value_btc * _price_usd(moment, config.start)
        roll = rng.random()
        if roll < 0.72:
            counterparty = verified_pool[int(rng.integers(0, len(verified_pool)))]
        elif roll < 0.92:
            counterparty = unknown_pool[int(rng.integers(0, len(unknown_pool)))]
        else:
            counterparty = _random_base58(rng, "3", 32)
            counterparties[counterparty] = CounterpartyInfo(cluster="unknown", verified=False)
        direction = Direction.INCOMING if rng.random() < 0.55 else Direction.OUTGOING
        rows.append((moment, wallet, counterparty, value_btc, usd_value, direction, Label.NORMAL))

    # Mixing bursts: near-equal values minutes apart, night-biased, fanning
    # out to fresh unverified counterparties; a share reuses known mixer
    # addresses and some bursts run in daytime, so classes overlap.
    mixer_pool = [_random_base58(rng, "3", 32) for _ in range(30)]
    for address in mixer_pool:
        counterparties[address] = CounterpartyInfo(cluster="mixer", verified=False)
    lo, hi = config.burst_size_range
    remaining = n_anomalous
    denominations = np.array([0.1, 0.2, 0.5, 1.0, 2.0])
    while remaining > 0:
        burst = int(min(remaining, rng.integers(lo, hi + 1)))
        remaining -= burst
        wallet = wallets[int(rng.integers(0, config.n_wallets))]
        offset = float(rng.uniform(0.0, span_seconds - 86_400.0))
        start_moment = config.start + timedelta(seconds=offset)
        if rng.random() < 0.8:
            hour = int((22 + rng.integers(0, 8)) % 24)  # 22:00-05:59
        else:
            hour = int(rng.integers(0, 24))
        start_moment = start_moment.replace(hour=hour, minute=int(rng.integers(0, 50)),
                                            second=int(rng.integers(0, 60)), microsecond=0)
        base_value = float(rng.choice(denominations) * rng.lognormal(0.0, 0.1))
        moment = start_moment
        for _ in range(burst):
            moment = moment + timedelta(seconds=float(rng.integers(20, 240)))
            value_btc = base_value * float(1.0 + rng.uniform(-0.008, 0.008))
            usd_value = value_btc * _price_usd(moment, config.start)
            if rng.random() < 0.7:
                counterparty = _random_base58(rng, "3", 32)
                counterparties[counterparty] = CounterpartyInfo(cluster="mixer", verified=False)
            else:
                counterparty = mixer_pool[int(rng.integers(0, len(mixer_pool)))]
            direction = Direction.OUTGOING if rng.random() < 0.8 else Direction.INCOMING
            rows.append(
                (moment, wallet, counterparty, value_btc, usd_value, direction, Label.ANOMALOUS)
            )

    rows.sort(key=lambda row: (row[0], row[1], row[2]))
    transactions = [
        Transaction(
            tx_id=f"tx{i:06d}",
            timestamp=moment,
            receiving_address=wallet,
            counterparty_address=counterparty,
            value_btc=value_btc,
            usd_value=usd_value,
            direction=direction,
            label=label,
        )
        for i, (moment, wallet, counterparty, value_btc, usd_value, direction, label) in enumerate(
            rows
        )
    ]
    return GeneratedDataset(transactions=transactions, counterparties=counterparties)


def write_dataset(dataset: GeneratedDataset, directory: str | Path) -> dict[str, Path]:
    """transactions.csv + allowlist.txt + counterparties.csv under directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "transactions": directory / "transactions.csv",
        "allowlist": directory / "allowlist.txt",
        "counterparties": directory / "counterparties.csv",
    }
    save_csv(dataset.transactions, paths["transactions"])
    paths["allowlist"].write_text("\n".join(dataset.allowlist) + "\n", encoding="utf-8")
    with paths["counterparties"].open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["address", "cluster", "verified"])
        for address in sorted(dataset.counterparties):
            info = dataset.counterparties[address]
            writer.writerow([address, info.cluster, "1" if info.verified else "0"])
    return paths


def load_allowlist(path: str | Path) -> frozenset[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


def load_clusters(path: str | Path) -> dict[str, str]:
    try:
        handle = Path(path).open(newline="", encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc
    with handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or "address" not in reader.fieldnames:
            raise MissingHeader(f"{path} lacks an address column")
        return {row["address"]: row.get("cluster", "unknown") for row in reader}


# --- model persistence -------------------------------------------------------


def _node_to_doc(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"weight": node.node_value, "cover": node.cover}
    return {
        "feature_index": node.feature_index,
        "threshold": node.threshold,
        "node_value": node.node_value,
        "cover": node.cover,
        "left": _node_to_doc(node.left),
        "right": _node_to_doc(node.right),
    }


def _node_from_doc(doc: dict) -> TreeNode:
    if "weight" in doc:
        return TreeNode(cover=float(doc["cover"]), node_value=float(doc["weight"]))
    return TreeNode(
        cover=float(doc["cover"]),
        node_value=float(doc["node_value"]),
        feature_index=int(doc["feature_index"]),
        threshold=float(doc["threshold"]),
        left=_node_from_doc(doc["left"]),
        right=_node_from_doc(doc["right"]),
    )


def model_document(model: TreeEnsemble) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "config": asdict(model.config),
        "feature_schema": {
            "version": model.feature_schema.version,
            "names": list(model.feature_schema.names),
        },
        "base_margin": model.base_margin,
        "learning_rate": model.learning_rate,
        "trees": [_node_to_doc(t) for t in model.trees],
    }


def save_model(model: TreeEnsemble, path: str | Path) -> None:
    """Human-readable JSON persistence; predictions round-trip bit for bit."""
    Path(path).write_text(
        json.dumps(model_document(model), indent=1), encoding="utf-8"
    )


def load_model(path: str | Path) -> TreeEnsemble:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptDocument(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise CorruptDocument(f"{path} lacks a format_version")
    if doc["format_version"] != MODEL_FORMAT_VERSION:
        raise VersionMismatch(
            f"model format {doc['format_version']} unsupported (expected {MODEL_FORMAT_VERSION})"
        )
    try:
        schema = FeatureSchema(
            version=int(doc["feature_schema"]["version"]),
            names=tuple(doc["feature_schema"]["names"]),
        )
        config = TrainConfig(**doc["config"])
        trees = tuple(_node_from_doc(t) for t in doc["trees"])
        return TreeEnsemble(
            trees=trees,
            learning_rate=float(doc["learning_rate"]),
            base_margin=float(doc["base_margin"]),
            feature_schema=schema,
            config=config,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptDocument(f"{path} is malformed: {exc}") from exc
