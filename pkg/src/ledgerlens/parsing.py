"""Free-form analyst utterances to normalized query intents.

The deterministic grammar targets the utterance family the service actually
sees: single-transaction checks ("On September 20, 2025, at 11:00 PM (UTC+9),
I received 0.8 BTC ..."), wallet window requests ("past week, my wallet"),
follow-up questions, and refinement clauses ("only exchange-linked
clusters"). Anything else produces a clarification request, never a guess.

A remote text-completion backend can be plugged in; its output is validated
against the wire schema and any violation falls back to the deterministic
parser, so the observable contract is backend-independent.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from typing import Any, Mapping, Protocol

from .domain import (
    DomainError,
    Filter,
    IntentKind,
    ParsedIntent,
    SchemaViolation,
    deserialize_intent,
    parse_timestamp,
)

# Pinned prompt for remote parser backends; bump the version when editing.
PARSER_TEMPLATE_VERSION = "parser-v1"
PARSER_TEMPLATE = (
    "Extract wallet address, time range, and transaction details from the "
    "following description and output a JSON schema."
)

DEFAULT_BACKEND_DEADLINE_MS = 10_000

# Base58 P2PKH/P2SH addresses are 26-35 chars; shorter matches are treated as
# truncated and canonicalized with a "..." marker. Bech32 tokens pass verbatim.
_FULL_BASE58_LEN = 26
_ADDRESS_RE = re.compile(
    r"(?<![0-9A-Za-z])(bc1[a-z0-9]{3,87}|[13][1-9A-HJ-NP-Za-km-z]{2,34})(\.\.\.)?"
)

_BTC_VALUE_RE = re.compile(r"(\d+(?:\.\d+)?)\s*BTC\b", re.IGNORECASE)
_USD_VALUE_RE = re.compile(
    r"(?:\$\s*(\d[\d,]*(?:\.\d+)?)|(\d[\d,]*(?:\.\d+)?)\s*USD\b)", re.IGNORECASE
)

_MONTHS = {
    name: i + 1
    for i, name in enumerate(
        "january february march april may june july august september october november december".split()
    )
}
_PROSE_DATE_RE = re.compile(
    r"\b(January|February|March|April|May|June|July|August|September|October|November|December)"
    r"\s+(\d{1,2})(?:st|nd|rd|th)?,?\s+(\d{4})"
    r"(?:,?\s+at\s+(\d{1,2})(?::(\d{2}))?\s*(AM|PM)?)?",
    re.IGNORECASE,
)
_UTC_OFFSET_RE = re.compile(r"\(\s*UTC\s*([+-])\s*(\d{1,2})(?::(\d{2}))?\s*\)", re.IGNORECASE)
_ISO_DATE_RE = re.compile(
    r"\b(\d{4}-\d{2}-\d{2}T\d{2}:\d{2}(?::\d{2})?(?:Z|[+-]\d{2}:?\d{2})?)"
)
_RANGE_RE = re.compile(
    r"\b(?:past|last|previous|prior)\s+(?:(\d+)\s+)?(hour|day|week|month)s?\b", re.IGNORECASE
)

_REFINEMENT_CUE_RE = re.compile(
    r"^\s*(?:only|just|exclude|keep|restrict|narrow|filter)\b|\bonly\b", re.IGNORECASE
)
_FOLLOWUP_CUE_RE = re.compile(
    r"\b(?:why|how come|what (?:made|makes)|explain|elaborate|tell me more)\b", re.IGNORECASE
)
_MY_WALLET_RE = re.compile(r"\bmy (?:wallet|address|account)\b", re.IGNORECASE)
_CHECK_CUE_RE = re.compile(r"\b(?:check|suspicious|anomal|look|verify|flag)", re.IGNORECASE)

# Human labels used in clarification questions; the question must mention
# every missing field.
_FIELD_LABELS = {
    "query": "what to analyze (a specific transaction, or a wallet and time window)",
    "date": "the transaction date",
    "day_range": "the time window (for example, past week)",
    "receiving_address": "the receiving wallet address",
    "counterparty_address": "the counterparty address",
    "value": "the BTC value",
    "usd_value": "the USD value",
}


class NoPriorQuery(DomainError):
    """A refinement arrived with no completed query to narrow."""


@dataclass(frozen=True)
class ClarificationRequest:
    missing: tuple[str, ...]
    question: str

    def __post_init__(self) -> None:
        if not self.missing:
            raise DomainError("clarification must name at least one missing field")
        lowered = self.question.lower()
        for name in self.missing:
            label = _FIELD_LABELS.get(name, name)
            if label.lower() not in lowered and name.lower() not in lowered:
                raise DomainError(f"clarification question does not mention {name!r}")


@dataclass(frozen=True)
class ParseOutcome:
    """Exactly one of intent / clarification is set."""

    intent: ParsedIntent | None = None
    clarification: ClarificationRequest | None = None
    annotations: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if (self.intent is None) == (self.clarification is None):
            raise DomainError("outcome must hold exactly one of intent, clarification")


@dataclass(frozen=True)
class TimeRef:
    """A resolved time phrase: either a point instant or a trailing day count."""

    point: datetime | None = None
    days: int | None = None


def clarification_for(missing: list[str]) -> ClarificationRequest:
    labels = [_FIELD_LABELS.get(name, name) for name in missing]
    question = "To proceed I still need: " + "; ".join(labels) + "."
    return ClarificationRequest(missing=tuple(missing), question=question)


def canonical_address(token: str, ellipsized: bool) -> str:
    """Normalize an address token; truncated base58 prefixes get a "..." marker."""
    if ellipsized:
        return token + "..."
    if token.lower().startswith("bc1"):
        return token
    if len(token) < _FULL_BASE58_LEN:
        return token + "..."
    return token


def extract_addresses(text: str) -> list[tuple[str, int]]:
    """(canonical address, match position) for every address-shaped token."""
    out = []
    for m in _ADDRESS_RE.finditer(text):
        out.append((canonical_address(m.group(1), m.group(2) is not None), m.start()))
    return out


def resolve_time_phrase(phrase: str, now: datetime | None = None) -> TimeRef | None:
    """Map a time phrase to a point datetime or a trailing day range.

    "past week" -> 7 days; "past N days/weeks/months" -> N / 7N / 30N;
    prose dates ("On September 20, 2025, at 11:00 PM (UTC+9)") and ISO
    timestamps -> point. Unrecognized phrases resolve to None so the caller
    can ask for clarification.
    """
    now = now or datetime.now(timezone.utc)

    m = _RANGE_RE.search(phrase)
    if m:
        count = int(m.group(1)) if m.group(1) else 1
        unit = m.group(2).lower()
        per_unit = {"hour": 0, "day": 1, "week": 7, "month": 30}[unit]
        days = max(1, count * per_unit) if unit != "hour" else max(1, round(count / 24) or 1)
        return TimeRef(days=days)

    m = _ISO_DATE_RE.search(phrase)
    if m:
        raw = m.group(1)
        if not re.search(r"(?:Z|[+-]\d{2}:?\d{2})$", raw):
            raw += "+00:00"
        raw = re.sub(r"([+-]\d{2})(\d{2})$", r"\1:\2", raw)
        try:
            return TimeRef(point=parse_timestamp(raw))
        except ValueError:
            return None

    m = _PROSE_DATE_RE.search(phrase)
    if m:
        month = _MONTHS[m.group(1).lower()]
        day = int(m.group(2))
        year = int(m.group(3))
        hour = int(m.group(4)) if m.group(4) else 0
        minute = int(m.group(5)) if m.group(5) else 0
        meridiem = (m.group(6) or "").upper()
        if meridiem == "PM" and hour != 12:
            hour += 12
        elif meridiem == "AM" and hour == 12:
            hour = 0
        tz = timezone.utc
        om = _UTC_OFFSET_RE.search(phrase)
        if om:
            sign = -1 if om.group(1) == "-" else 1
            offset = timedelta(hours=int(om.group(2)), minutes=int(om.group(3) or 0))
            tz = timezone(sign * offset)
        try:
            return TimeRef(point=datetime(year, month, day, hour, minute, tzinfo=tz))
        except ValueError:
            return None

    lowered = phrase.lower()
    if "yesterday" in lowered or "today" in lowered:
        base = now if "today" in lowered else now - timedelta(days=1)
        return TimeRef(point=base.replace(hour=0, minute=0, second=0, microsecond=0))
    return None


def _parse_decimal(raw: str) -> float:
    return float(raw.replace(",", ""))


def parse_filters(text: str) -> tuple[Filter, ...]:
    """The refinement vocabulary: cluster classes, value thresholds, direction."""
    filters: list[Filter] = []
    lowered = text.lower()
    for cluster in ("exchange", "mixer", "unknown"):
        if re.search(rf"\b{cluster}(?:-linked|-related| linked| related)? cluster", lowered) or re.search(
            rf"\b{cluster}-linked\b", lowered
        ):
            filters.append(Filter("cluster_class", "=", cluster))
    m = re.search(r"\b(?:over|above|more than|greater than)\s+\$?\s*(\d[\d,]*(?:\.\d+)?)", lowered)
    if m:
        filters.append(Filter("usd_value", ">", _parse_decimal(m.group(1))))
    m = re.search(r"\b(?:under|below|less than)\s+\$?\s*(\d[\d,]*(?:\.\d+)?)", lowered)
    if m:
        filters.append(Filter("usd_value", "<", _parse_decimal(m.group(1))))
    if not any(f.field == "usd_value" for f in filters):
        if re.search(r"\bhigh[- ]value\b|\blarge\b|\bbig\b", lowered):
            filters.append(Filter("usd_value_pctile", ">", 0.95))
        elif re.search(r"\bsmall\b|\blow[- ]value\b", lowered):
            filters.append(Filter("usd_value_pctile", "<", 0.5))
    if re.search(r"\bunverified\b", lowered):
        filters.append(Filter("counterparty_class", "=", "unverified"))
    elif re.search(r"\bverified\b", lowered):
        filters.append(Filter("counterparty_class", "=", "verified"))
    if re.search(r"\bincoming\b", lowered):
        filters.append(Filter("direction", "=", "incoming"))
    elif re.search(r"\boutgoing\b", lowered):
        filters.append(Filter("direction", "=", "outgoing"))
    for address, pos in extract_addresses(text):
        cue = text[max(0, pos - 24) : pos].lower()
        if "to " in cue or "with " in cue or "counterparty" in cue or "involving" in cue:
            filters.append(Filter("counterparty_address", "=", address))
    return tuple(filters)


def _assign_addresses(text: str) -> tuple[str | None, str | None, bool]:
    """(receiving, counterparty, wants_bound_wallet) from address tokens and cues."""
    receiving: str | None = None
    counterparty: str | None = None
    leftovers: list[str] = []
    previous_end = 0
    for address, pos in extract_addresses(text):
        # The cue window never reaches past the previous address token.
        cue = text[max(previous_end, pos - 32) : pos].lower()
        previous_end = pos + len(address)
        if re.search(r"\bmy\b", cue):
            receiving = receiving or address
        elif "counterparty" in cue or re.search(r"\bfrom\b", cue):
            counterparty = counterparty or address
        else:
            leftovers.append(address)
    for address in leftovers:
        if receiving is None:
            receiving = address
        elif counterparty is None:
            counterparty = address
    wants_bound = receiving is None and _MY_WALLET_RE.search(text) is not None
    return receiving, counterparty, wants_bound


def parse_utterance(text: str, context: Any = None, now: datetime | None = None) -> ParseOutcome:
    """Deterministic parse of one analyst utterance.

    Pure in (text, context, now). Required fields that cannot be resolved
    from the utterance or the session context yield a single batched
    ClarificationRequest.
    """
    stripped = text.strip()
    if not stripped:
        return ParseOutcome(clarification=clarification_for(["query"]))

    if _FOLLOWUP_CUE_RE.search(stripped):
        return ParseOutcome(intent=ParsedIntent(kind=IntentKind.FOLLOW_UP))

    filters = parse_filters(stripped)
    if _REFINEMENT_CUE_RE.search(stripped):
        return ParseOutcome(intent=ParsedIntent(kind=IntentKind.REFINEMENT, filters=filters))

    time_ref = resolve_time_phrase(stripped, now=now)
    receiving, counterparty, wants_bound = _assign_addresses(stripped)
    if receiving is None and (wants_bound or _MY_WALLET_RE.search(stripped)):
        receiving = getattr(context, "bound_wallet", None)

    btc_match = _BTC_VALUE_RE.search(stripped)
    value = _parse_decimal(btc_match.group(1)) if btc_match else None
    usd_match = _USD_VALUE_RE.search(stripped)
    usd_value = _parse_decimal(usd_match.group(1) or usd_match.group(2)) if usd_match else None

    point = time_ref.point if time_ref else None
    days = time_ref.days if time_ref else None

    transaction_like = point is not None or value is not None or usd_value is not None
    if transaction_like and days is None:
        missing = [
            name
            for name, got in (
                ("date", point),
                ("receiving_address", receiving),
                ("counterparty_address", counterparty),
                ("value", value),
                ("usd_value", usd_value),
            )
            if got is None
        ]
        if missing:
            return ParseOutcome(clarification=clarification_for(missing))
        # A transaction check names its fields explicitly; incidental filter
        # vocabulary is dropped so the intent stays wire-representable.
        return ParseOutcome(
            intent=ParsedIntent(
                kind=IntentKind.TRANSACTION_CHECK,
                date=point,
                receiving_address=receiving,
                counterparty_address=counterparty,
                value=value,
                usd_value=usd_value,
            )
        )

    if days is not None or receiving is not None or wants_bound or _CHECK_CUE_RE.search(stripped):
        missing = []
        if receiving is None:
            missing.append("receiving_address")
        if days is None:
            missing.append("day_range")
        if missing:
            return ParseOutcome(clarification=clarification_for(missing))
        return ParseOutcome(
            intent=ParsedIntent(
                kind=IntentKind.WINDOW_ANALYSIS,
                receiving_address=receiving,
                day_range=days,
                counterparty_address=counterparty,
                filters=filters,
            )
        )

    return ParseOutcome(clarification=clarification_for(["query"]))


def merge_refinement(previous: ParsedIntent | None, text: str) -> ParsedIntent:
    """Narrow the previous intent with the refinement clauses found in text.

    Filters are only ever added, never removed, so the refined query can
    match at most what the previous one matched.
    """
    if previous is None:
        raise NoPriorQuery("no completed query to refine")
    added = parse_filters(text)
    new_filters = previous.filters + tuple(f for f in added if f not in previous.filters)
    return replace(previous, filters=new_filters)


class ParserBackend(Protocol):
    """External text-completion endpoint honoring the prompt-template contract."""

    def complete(self, request: Mapping[str, str]) -> Mapping[str, Any]:
        """{"template", "text"} -> {"document": <JSON text>}; may raise."""
        ...


class HttpParserBackend:
    """POSTs the template contract to a remote endpoint as JSON."""

    def __init__(self, endpoint: str, deadline_ms: int = DEFAULT_BACKEND_DEADLINE_MS):
        self.endpoint = endpoint
        self.deadline_ms = deadline_ms

    def complete(self, request: Mapping[str, str]) -> Mapping[str, Any]:
        import httpx

        response = httpx.post(self.endpoint, json=dict(request), timeout=self.deadline_ms / 1000)
        response.raise_for_status()
        return response.json()


def call_with_deadline(fn, deadline_ms: int):
    """Run fn() in a worker thread, raising TimeoutError past the deadline.

    The pool is shut down without joining so a stuck backend cannot stall
    the caller.
    """
    pool = ThreadPoolExecutor(max_workers=1)
    try:
        future = pool.submit(fn)
        return future.result(timeout=deadline_ms / 1000)
    except FutureTimeout as exc:
        raise TimeoutError(f"backend exceeded {deadline_ms} ms") from exc
    finally:
        pool.shutdown(wait=False, cancel_futures=True)


def remote_parse(
    text: str,
    backend: ParserBackend,
    context: Any = None,
    now: datetime | None = None,
    template: str = PARSER_TEMPLATE,
    deadline_ms: int = DEFAULT_BACKEND_DEADLINE_MS,
) -> ParseOutcome:
    """Parse via a remote backend, falling back to the deterministic grammar.

    Every backend failure mode (unreachable, slow, malformed document) ends
    in the deterministic result; the failure is recorded on the outcome's
    annotations for the audit trace, never surfaced to the caller.
    """
    annotation: str | None = None
    try:
        response = call_with_deadline(
            lambda: backend.complete({"template": template, "text": text}), deadline_ms
        )
        document = response["document"] if isinstance(response, Mapping) else None
        if document is None:
            raise SchemaViolation("backend response lacks a document")
        intent = deserialize_intent(document)
        return ParseOutcome(intent=intent)
    except SchemaViolation as exc:
        annotation = f"SchemaViolation: {exc}"
    except Exception as exc:
        annotation = f"BackendUnavailable: {type(exc).__name__}: {exc}"
    fallback = parse_utterance(text, context=context, now=now)
    return replace(fallback, annotations=fallback.annotations + (annotation,))
