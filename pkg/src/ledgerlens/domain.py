"""Core value types: transactions, parsed query intents, anomaly scores.

All types here are immutable and safe to share between threads. The wire
format for analyst queries is UTF-8 JSON with fixed key names; a
transaction-check document carries exactly five keys ("Date",
"Receiving Address", "Counterparty Address", "Value", "USD Value").
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Mapping

# Monetary fields are floats internally; equality checks use this tolerance.
MONEY_TOL = 1e-8

# Risk-band cutoffs on the anomaly probability.
HIGH_BAND_MIN = 0.80
MODERATE_BAND_MIN = 0.50

TRANSACTION_CHECK_KEYS = (
    "Date",
    "Receiving Address",
    "Counterparty Address",
    "Value",
    "USD Value",
)

KEY_FIELDS = ("tx_id", "timestamp", "receiving_address", "counterparty_address", "usd_value")


class Direction(str, Enum):
    INCOMING = "incoming"
    OUTGOING = "outgoing"


class Label(str, Enum):
    NORMAL = "normal"
    ANOMALOUS = "anomalous"
    UNLABELED = "unlabeled"


class IntentKind(str, Enum):
    TRANSACTION_CHECK = "transaction_check"
    WINDOW_ANALYSIS = "window_analysis"
    FOLLOW_UP = "follow_up"
    REFINEMENT = "refinement"


class RiskBand(str, Enum):
    LOW = "low"
    MODERATE = "moderate"
    HIGH = "high"


class DomainError(Exception):
    """Base class for all errors raised by this package."""


@dataclass(frozen=True)
class Issue:
    """One validation problem: a code plus the offending field."""

    code: str  # MissingField | MalformedTimestamp | NegativeValue | EmptyField
    field: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.code}({self.field})" + (f": {self.detail}" if self.detail else "")


class ValidationError(DomainError):
    """Raised when a raw record cannot become a Transaction.

    Carries every problem found, not just the first one.
    """

    def __init__(self, issues: list[Issue]):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))


class SchemaViolation(DomainError):
    """Raised when a wire document does not match the query schema."""


def risk_band(probability: float) -> RiskBand:
    """Deterministic band for a probability: high >= 0.80, moderate >= 0.50."""
    if probability >= HIGH_BAND_MIN:
        return RiskBand.HIGH
    if probability >= MODERATE_BAND_MIN:
        return RiskBand.MODERATE
    return RiskBand.LOW


def parse_timestamp(raw: str) -> datetime:
    """Parse an ISO-8601 timestamp; the UTC offset is mandatory.

    Accepts a trailing "Z" as an alias for +00:00.
    """
    text = raw.strip()
    if text.endswith("Z") or text.endswith("z"):
        text = text[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(text)
    except ValueError as exc:
        raise ValueError(f"not an ISO-8601 timestamp: {raw!r}") from exc
    if ts.tzinfo is None:
        raise ValueError(f"timestamp lacks a UTC offset: {raw!r}")
    return ts


def format_timestamp(ts: datetime) -> str:
    """ISO-8601 with the timestamp's own offset, e.g. 2025-09-20T23:00:00+09:00."""
    return ts.isoformat()


def to_utc(ts: datetime) -> datetime:
    return ts.astimezone(timezone.utc)


@dataclass(frozen=True)
class Transaction:
    """One ledger record, as flat as the source data: no chain structures."""

    tx_id: str
    timestamp: datetime  # aware; original offset preserved
    receiving_address: str
    counterparty_address: str
    value_btc: float
    usd_value: float
    direction: Direction = Direction.INCOMING
    label: Label = Label.UNLABELED

    def __post_init__(self) -> None:
        issues = []
        if not self.tx_id:
            issues.append(Issue("EmptyField", "tx_id"))
        if not self.receiving_address:
            issues.append(Issue("EmptyField", "receiving_address"))
        if self.timestamp.tzinfo is None:
            issues.append(Issue("MalformedTimestamp", "timestamp", "offset required"))
        if self.value_btc < 0:
            issues.append(Issue("NegativeValue", "value_btc"))
        if self.usd_value < 0:
            issues.append(Issue("NegativeValue", "usd_value"))
        if issues:
            raise ValidationError(issues)


def validate_transaction(raw: Mapping[str, Any]) -> Transaction:
    """Build a Transaction from a raw key/value record.

    Total over arbitrary string input: either returns a well-formed
    Transaction or raises ValidationError naming every missing or invalid
    key field. Extreme values are retained; there is no value-based filtering.
    """
    issues: list[Issue] = []

    def text_field(name: str, required: bool) -> str:
        value = raw.get(name)
        if value is None or str(value).strip() == "":
            if required:
                issues.append(Issue("MissingField", name))
            return ""
        return str(value).strip()

    tx_id = text_field("tx_id", required=True)
    receiving = text_field("receiving_address", required=True)
    counterparty = text_field("counterparty_address", required=True)

    ts: datetime | None = None
    raw_ts = raw.get("timestamp")
    if raw_ts is None or str(raw_ts).strip() == "":
        issues.append(Issue("MissingField", "timestamp"))
    elif isinstance(raw_ts, datetime):
        if raw_ts.tzinfo is None:
            issues.append(Issue("MalformedTimestamp", "timestamp", "offset required"))
        else:
            ts = raw_ts
    else:
        try:
            ts = parse_timestamp(str(raw_ts))
        except ValueError as exc:
            issues.append(Issue("MalformedTimestamp", "timestamp", str(exc)))

    def money_field(name: str, required: bool) -> float:
        value = raw.get(name)
        if value is None or str(value).strip() == "":
            if required:
                issues.append(Issue("MissingField", name))
            return 0.0
        try:
            amount = float(value)
        except (TypeError, ValueError):
            issues.append(Issue("MissingField", name, f"not a number: {value!r}"))
            return 0.0
        if amount != amount or amount in (float("inf"), float("-inf")) or amount < 0:
            issues.append(Issue("NegativeValue", name))
            return 0.0
        return amount

    usd_value = money_field("usd_value", required=True)
    value_btc = money_field("value_btc", required=False)

    direction = Direction.INCOMING
    raw_dir = str(raw.get("direction", "") or "").strip().lower()
    if raw_dir in (d.value for d in Direction):
        direction = Direction(raw_dir)

    label = Label.UNLABELED
    raw_label = str(raw.get("label", "") or "").strip().lower()
    if raw_label in (l.value for l in Label):
        label = Label(raw_label)

    if issues:
        raise ValidationError(issues)
    assert ts is not None
    return Transaction(
        tx_id=tx_id,
        timestamp=ts,
        receiving_address=receiving,
        counterparty_address=counterparty,
        value_btc=value_btc,
        usd_value=usd_value,
        direction=direction,
        label=label,
    )


FILTER_OPS = ("=", "!=", "<", "<=", ">", ">=")
FILTER_FIELDS = (
    "usd_value",
    "value_btc",
    "usd_value_pctile",
    "cluster_class",
    "counterparty_class",  # verified | unverified, resolved via the allow-list
    "counterparty_address",
    "direction",
)


@dataclass(frozen=True)
class Filter:
    """One refinement predicate, e.g. cluster_class = exchange."""

    field: str
    op: str
    value: Any

    def __post_init__(self) -> None:
        if self.op not in FILTER_OPS:
            raise SchemaViolation(f"unknown filter op: {self.op!r}")
        if self.field not in FILTER_FIELDS:
            raise SchemaViolation(f"unknown filter field: {self.field!r}")


@dataclass(frozen=True)
class ParsedIntent:
    """The normalized machine-readable query a parsing pass emits."""

    kind: IntentKind
    date: datetime | None = None
    day_range: int | None = None
    receiving_address: str | None = None
    counterparty_address: str | None = None
    value: float | None = None
    usd_value: float | None = None
    filters: tuple[Filter, ...] = ()

    def __post_init__(self) -> None:
        if self.day_range is not None and self.day_range < 1:
            raise SchemaViolation("day_range must be >= 1")
        if self.kind is IntentKind.TRANSACTION_CHECK:
            missing = [
                name
                for name, value in (
                    ("date", self.date),
                    ("receiving_address", self.receiving_address),
                    ("counterparty_address", self.counterparty_address),
                    ("value", self.value),
                    ("usd_value", self.usd_value),
                )
                if value is None
            ]
            if missing:
                raise SchemaViolation(
                    "transaction_check requires " + ", ".join(missing)
                )
        elif self.kind is IntentKind.WINDOW_ANALYSIS:
            if self.receiving_address is None or self.day_range is None:
                raise SchemaViolation(
                    "window_analysis requires receiving_address and day_range"
                )


@dataclass(frozen=True)
class AnomalyScore:
    """Per-transaction detector verdict."""

    tx_id: str
    probability: float
    predicted_label: Label
    threshold: float
    risk_band: RiskBand

    def __post_init__(self) -> None:
        if not 0.0 <= self.probability <= 1.0:
            raise DomainError(f"probability out of range: {self.probability}")
        if not 0.0 < self.threshold < 1.0:
            raise DomainError(f"threshold out of range: {self.threshold}")
        expected = Label.ANOMALOUS if self.probability >= self.threshold else Label.NORMAL
        if self.predicted_label is not expected:
            raise DomainError("predicted_label inconsistent with threshold")
        if self.risk_band is not risk_band(self.probability):
            raise DomainError("risk_band inconsistent with probability")


def make_score(tx_id: str, probability: float, threshold: float = 0.5) -> AnomalyScore:
    label = Label.ANOMALOUS if probability >= threshold else Label.NORMAL
    return AnomalyScore(tx_id, probability, label, threshold, risk_band(probability))


# --- wire schema -----------------------------------------------------------


def _filter_to_doc(f: Filter) -> dict[str, Any]:
    return {"Field": f.field, "Op": f.op, "Value": f.value}


def _filter_from_doc(doc: Any) -> Filter:
    if not isinstance(doc, Mapping) or set(doc) != {"Field", "Op", "Value"}:
        raise SchemaViolation(f"malformed filter entry: {doc!r}")
    try:
        return Filter(str(doc["Field"]), str(doc["Op"]), doc["Value"])
    except SchemaViolation:
        raise
    except Exception as exc:  # pragma: no cover - defensive
        raise SchemaViolation(str(exc)) from exc


def intent_document(intent: ParsedIntent) -> dict[str, Any]:
    """The wire document for an intent, as a plain dict.

    A transaction_check maps to exactly the five canonical keys; it cannot
    carry filters on the wire. Other kinds use a "Kind" discriminator.
    """
    if intent.kind is IntentKind.TRANSACTION_CHECK:
        if intent.filters:
            raise SchemaViolation("transaction_check wire form cannot carry filters")
        assert intent.date is not None
        return {
            "Date": format_timestamp(intent.date),
            "Receiving Address": intent.receiving_address,
            "Counterparty Address": intent.counterparty_address,
            "Value": intent.value,
            "USD Value": intent.usd_value,
        }
    doc: dict[str, Any] = {"Kind": intent.kind.value}
    if intent.date is not None:
        doc["Date"] = format_timestamp(intent.date)
    if intent.receiving_address is not None:
        doc["Receiving Address"] = intent.receiving_address
    if intent.day_range is not None:
        doc["Day Range"] = intent.day_range
    if intent.counterparty_address is not None:
        doc["Counterparty Address"] = intent.counterparty_address
    if intent.value is not None:
        doc["Value"] = intent.value
    if intent.usd_value is not None:
        doc["USD Value"] = intent.usd_value
    if intent.filters:
        doc["Filters"] = [_filter_to_doc(f) for f in intent.filters]
    return doc


def serialize_intent(intent: ParsedIntent) -> str:
    """UTF-8 JSON wire form. deserialize_intent(serialize_intent(x)) == x."""
    return json.dumps(intent_document(intent), ensure_ascii=False, indent=2)


_WINDOW_KEYS = {
    "Kind",
    "Date",
    "Receiving Address",
    "Day Range",
    "Counterparty Address",
    "Value",
    "USD Value",
    "Filters",
}


def deserialize_intent(doc: str | Mapping[str, Any]) -> ParsedIntent:
    """Parse a wire document back into a ParsedIntent.

    Raises SchemaViolation on unknown keys, missing keys, or malformed values.
    """
    if isinstance(doc, (str, bytes)):
        try:
            data = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"not a JSON document: {exc}") from exc
    else:
        data = dict(doc)
    if not isinstance(data, dict):
        raise SchemaViolation("wire document must be a JSON object")

    def number(key: str) -> float:
        value = data[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaViolation(f"{key!r} must be a number")
        if value < 0:
            raise SchemaViolation(f"{key!r} must be non-negative")
        return float(value)

    if "Kind" not in data:
        expected = set(TRANSACTION_CHECK_KEYS)
        present = set(data)
        if present != expected:
            unknown = sorted(present - expected)
            missing = sorted(expected - present)
            parts = []
            if unknown:
                parts.append("unknown keys: " + ", ".join(unknown))
            if missing:
                parts.append("missing keys: " + ", ".join(missing))
            raise SchemaViolation("; ".join(parts))
        try:
            date = parse_timestamp(str(data["Date"]))
        except ValueError as exc:
            raise SchemaViolation(str(exc)) from exc
        return ParsedIntent(
            kind=IntentKind.TRANSACTION_CHECK,
            date=date,
            receiving_address=str(data["Receiving Address"]),
            counterparty_address=str(data["Counterparty Address"]),
            value=number("Value"),
            usd_value=number("USD Value"),
        )

    kind_raw = data["Kind"]
    try:
        kind = IntentKind(kind_raw)
    except ValueError as exc:
        raise SchemaViolation(f"unknown intent kind: {kind_raw!r}") from exc
    if kind is IntentKind.TRANSACTION_CHECK:
        raise SchemaViolation('transaction_check documents must not carry "Kind"')
    unknown = sorted(set(data) - _WINDOW_KEYS)
    if unknown:
        raise SchemaViolation("unknown keys: " + ", ".join(unknown))

    date = None
    if "Date" in data:
        try:
            date = parse_timestamp(str(data["Date"]))
        except ValueError as exc:
            raise SchemaViolation(str(exc)) from exc
    day_range = None
    if "Day Range" in data:
        raw_range = data["Day Range"]
        if isinstance(raw_range, bool) or not isinstance(raw_range, int):
            raise SchemaViolation('"Day Range" must be an integer')
        day_range = raw_range
    filters = tuple(_filter_from_doc(f) for f in data.get("Filters", []))
    try:
        return ParsedIntent(
            kind=kind,
            date=date,
            day_range=day_range,
            receiving_address=(
                str(data["Receiving Address"]) if "Receiving Address" in data else None
            ),
            counterparty_address=(
                str(data["Counterparty Address"]) if "Counterparty Address" in data else None
            ),
            value=number("Value") if "Value" in data else None,
            usd_value=number("USD Value") if "USD Value" in data else None,
            filters=filters,
        )
    except SchemaViolation:
        raise
