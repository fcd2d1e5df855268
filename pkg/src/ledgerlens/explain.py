"""Grounded narrative explanations for anomaly scores.

A narrative may only leave this module if every numeric token and feature
claim in it traces back to the evidence record it describes. The validator
is deliberately conservative: numerals it cannot match fail the narrative.
Remote explainer backends are welcome to phrase things better, but anything
that fails validation is replaced by the deterministic template.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Any, Mapping, Protocol, Sequence

from .boosting import AttributionRecord
from .domain import AnomalyScore, DomainError, RiskBand, SchemaViolation
from .features import FeatureSchema, FeatureVector, SchemaMismatch
from .parsing import DEFAULT_BACKEND_DEADLINE_MS, call_with_deadline

EXPLAINER_TEMPLATE_VERSION = "explainer-v1"
EXPLAINER_TEMPLATE = (
    "Write a concise risk summary with probabilistic rationale for the "
    "supplied evidence document. Use only numbers that appear in it."
)

DEFAULT_TOP_K = 3

# Comparator vocabulary attached to evidence clues.
C_PCT95 = "exceeds the 95th-percentile value"
C_FREQ = "high transfer frequency"
C_FREQ_SMALL = "high frequency of small-value transfers"
C_SPARSE = "sparse recent transfer activity"
C_BURST = "burst of near-equal-value transfers"
C_UNVERIFIED = "unverified counterparty"
C_VERIFIED = "verified counterparty"
C_UNKNOWN = "unknown counterparty"
C_CONNECTED = "well-connected counterparty"
C_MANY_COUNTERPARTIES = "many distinct counterparties"
C_OFF_PEAK = "during off-peak hours"
C_DAYTIME = "during business hours"
C_OUTGOING = "outgoing transfer"
C_INCOMING = "incoming transfer"
C_WEEKEND = "on a weekend"
C_VOLATILE = "volatile recent values"
C_VALUE_SHIFT = "shifted weekly value pattern"

_FREQ_FEATURES = frozenset({"tx_count_24h", "tx_count_7d", "equal_value_burst"})
_VALUE_FEATURES = frozenset(
    {"usd_value", "log1p_usd_value", "value_btc", "value_pctile_30d"}
)
_NOVELTY_FEATURES = frozenset(
    {
        "counterparty_in_degree",
        "counterparty_out_degree",
        "unique_counterparties_7d",
        "counterparty_verified",
    }
)


class NoPriorResult(DomainError):
    """A follow-up arrived in a session with no scored result to discuss."""


@dataclass(frozen=True)
class FeatureClue:
    """One attributed feature: raw value, margin contribution, human comparator."""

    name: str
    value: float
    contribution: float
    comparator: str


@dataclass(frozen=True)
class Evidence:
    tx_id: str
    probability: float
    risk_band: RiskBand
    top_features: tuple[FeatureClue, ...]
    counterparty_verified: bool
    off_peak: bool

    def __post_init__(self) -> None:
        mags = [abs(c.contribution) for c in self.top_features]
        if any(mags[i] < mags[i + 1] for i in range(len(mags) - 1)):
            raise DomainError("top_features must be ordered by |contribution| descending")

    @property
    def feature_names(self) -> frozenset[str]:
        return frozenset(c.name for c in self.top_features)


@dataclass(frozen=True)
class Explanation:
    narrative: str
    evidence: Evidence
    grounded: bool
    # (clause text, feature names backing it) pairs for UI highlighting.
    grounding_map: tuple[tuple[str, tuple[str, ...]], ...] = ()
    annotations: tuple[str, ...] = ()


@dataclass(frozen=True)
class GroundingReport:
    ok: bool
    offending: tuple[str, ...] = ()


def _comparator(name: str, value: float, small_value: bool) -> str:
    if name == "value_pctile_30d":
        if value > 0.95:
            return C_PCT95
        return f"at the {int(round(value * 100))}th percentile of recent value"
    if name in ("tx_count_24h", "tx_count_7d"):
        high = value >= (5 if name == "tx_count_24h" else 10)
        if not high:
            return C_SPARSE
        return C_FREQ_SMALL if small_value else C_FREQ
    if name == "equal_value_burst":
        return C_BURST if value >= 2 else C_SPARSE
    if name == "counterparty_verified":
        return C_UNVERIFIED if value == 0 else C_VERIFIED
    if name in ("counterparty_in_degree", "counterparty_out_degree"):
        return C_UNKNOWN if value == 0 else C_CONNECTED
    if name == "unique_counterparties_7d":
        return C_MANY_COUNTERPARTIES if value >= 5 else "few distinct counterparties"
    if name == "is_off_peak":
        return C_OFF_PEAK if value == 1 else C_DAYTIME
    if name == "hour_of_day":
        return C_OFF_PEAK if value >= 22 or value < 6 else C_DAYTIME
    if name == "direction_out":
        return C_OUTGOING if value == 1 else C_INCOMING
    if name == "day_of_week":
        return C_WEEKEND if value >= 5 else "on a weekday"
    if name == "std_usd_7d":
        return C_VOLATILE
    if name == "mean_usd_7d":
        return C_VALUE_SHIFT
    if name == "usd_value":
        return f"USD value of {_format_value(value)}"
    if name == "value_btc":
        return f"BTC value of {_format_value(value)}"
    if name == "log1p_usd_value":
        return "unusual transfer size"
    return f"{name} at {_format_value(value)}"


def _format_value(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    text = f"{value:.6f}".rstrip("0").rstrip(".")
    return text if text else "0"


def build_evidence(
    score: AnomalyScore,
    attr: AttributionRecord,
    vector: FeatureVector,
    schema: FeatureSchema,
    k: int = DEFAULT_TOP_K,
) -> Evidence:
    """Select the top-k features by |contribution| and attach comparators."""
    if vector.schema_version != schema.version:
        raise SchemaMismatch("vector and schema versions differ")
    if len(attr.contributions) != schema.arity:
        raise SchemaMismatch("attribution arity differs from schema arity")

    values = dict(zip(schema.names, vector.values))
    small_value = values.get("value_pctile_30d", 0.5) < 0.5
    ranked = sorted(
        (
            (name, values[name], contribution)
            for name, contribution in zip(schema.names, attr.contributions)
            if contribution != 0.0
        ),
        key=lambda item: (-abs(item[2]), schema.index(item[0])),
    )
    clues = tuple(
        FeatureClue(name, value, contribution, _comparator(name, value, small_value))
        for name, value, contribution in ranked[:k]
    )
    return Evidence(
        tx_id=score.tx_id,
        probability=score.probability,
        risk_band=score.risk_band,
        top_features=clues,
        counterparty_verified=values.get("counterparty_verified", 1.0) == 1.0,
        off_peak=values.get("is_off_peak", 0.0) == 1.0,
    )


def _compose_reason(
    evidence: Evidence,
) -> tuple[str, list[tuple[str, tuple[str, ...]]]]:
    subject: tuple[str, list[str]] | None = None
    counterparty: tuple[str, list[str]] | None = None
    timing: tuple[str, list[str]] | None = None
    extras: list[tuple[str, list[str]]] = []
    for clue in evidence.top_features:
        c = clue.comparator
        if c == C_PCT95 and subject is None:
            subject = ("repeated transfers exceeding the 95th-percentile value", [clue.name])
        elif c == C_FREQ_SMALL and subject is None:
            subject = ("an unusually high frequency of small-value transfers", [clue.name])
        elif c == C_FREQ and subject is None:
            subject = ("repeated transfers", [clue.name])
        elif c == C_BURST and subject is None:
            subject = ("a burst of near-equal-value transfers", [clue.name])
        elif c in (C_UNVERIFIED, C_UNKNOWN) and counterparty is None:
            noun = "unverified" if c == C_UNVERIFIED else "unknown"
            counterparty = (f"to {noun} counterparties", [clue.name])
        elif c == C_OFF_PEAK and timing is None:
            timing = ("during off-peak hours", [clue.name])
        else:
            extras.append((c, [clue.name]))

    if subject is None:
        subject = ("transfers", [])
    main_text = subject[0]
    main_features = list(subject[1])
    if counterparty is not None:
        main_text += " " + counterparty[0]
        main_features += counterparty[1]
    if timing is not None:
        main_text += " " + timing[0]
        main_features += timing[1]

    clauses = [(main_text, tuple(main_features))] + [(t, tuple(f)) for t, f in extras]
    texts = [t for t, _ in clauses]
    if len(texts) == 1:
        reason = texts[0]
    else:
        reason = ", ".join(texts[:-1]) + " and " + texts[-1]
    return reason, clauses


def render_narrative(evidence: Evidence, style: str = "concise") -> Explanation:
    """Deterministic template rendering; grounded by construction."""
    if style != "concise":
        raise DomainError(f"unknown narrative style: {style!r}")
    band = evidence.risk_band.value
    p = f"{evidence.probability:.2f}"
    if not evidence.top_features:
        narrative = (
            f"This transaction shows a {band} anomaly score ({p}); "
            "no individual feature stands out."
        )
        grounding_map: tuple[tuple[str, tuple[str, ...]], ...] = ()
    else:
        reason, clauses = _compose_reason(evidence)
        narrative = f"This transaction shows a {band} anomaly score ({p}) due to {reason}."
        grounding_map = tuple(clauses)
    report = validate_grounding(narrative, evidence)
    if not report.ok:  # pragma: no cover - template and validator move together
        raise DomainError(f"template narrative failed grounding: {report.offending}")
    return Explanation(
        narrative=narrative, evidence=evidence, grounded=True, grounding_map=grounding_map
    )


# Standalone numerals only: digits inside identifiers (tx ids, feature
# names) don't count, but a sentence-ending period after a number does.
_NUMERAL_RE = re.compile(
    r"(?<![A-Za-z0-9_.])(\d+(?:\.\d+)?)(?:st|nd|rd|th)?(?![A-Za-z0-9_])(?!\.\d)"
)
_BAND_RE = re.compile(r"\b(high|moderate|low)\s+anomaly\b", re.IGNORECASE)

# Feature concepts the validator recognizes; a concept must be backed by a
# matching evidence feature or by a comparator that states it verbatim.
_CONCEPT_PATTERNS: tuple[tuple[re.Pattern[str], frozenset[str]], ...] = (
    (re.compile(r"\boff-peak\b", re.IGNORECASE), frozenset({"is_off_peak", "hour_of_day"})),
    (re.compile(r"\bbusiness hours\b", re.IGNORECASE), frozenset({"is_off_peak", "hour_of_day"})),
    (re.compile(r"\bunverified\b", re.IGNORECASE), frozenset({"counterparty_verified"})),
    (re.compile(r"\bverified\b", re.IGNORECASE), frozenset({"counterparty_verified"})),
    (re.compile(r"\bunknown counterpart\w*", re.IGNORECASE), _NOVELTY_FEATURES),
    (re.compile(r"\bpercentile\b", re.IGNORECASE), frozenset({"value_pctile_30d"})),
    (re.compile(r"\bfrequency\b", re.IGNORECASE), _FREQ_FEATURES),
    (re.compile(r"\bburst\b", re.IGNORECASE), frozenset({"equal_value_burst", "tx_count_24h"})),
    (re.compile(r"\bsmall-value\b", re.IGNORECASE), _VALUE_FEATURES | _FREQ_FEATURES),
    (re.compile(r"\bhigh-value\b", re.IGNORECASE), _VALUE_FEATURES),
    (re.compile(r"\boutgoing\b", re.IGNORECASE), frozenset({"direction_out"})),
    (re.compile(r"\bincoming\b", re.IGNORECASE), frozenset({"direction_out"})),
    (
        re.compile(r"\bdistinct counterpart\w*", re.IGNORECASE),
        frozenset({"unique_counterparties_7d"}),
    ),
)

_NUMERAL_TOL = 5.0000001e-3  # two-decimal rounding slack


def _allowed_numbers(evidence: Evidence) -> list[float]:
    allowed = [evidence.probability]
    for clue in evidence.top_features:
        allowed.append(clue.value)
        allowed.append(clue.contribution)
        allowed.append(abs(clue.contribution))
        if "pctile" in clue.name:
            allowed.append(round(clue.value * 100))
            if clue.value > 0.95:
                allowed.append(95.0)
    return allowed


def validate_grounding(narrative: str, evidence: Evidence) -> GroundingReport:
    """Check that every numeral and feature concept traces to the evidence.

    The two-decimal probability must be present; each numeral must match the
    probability, a feature value, a contribution, or a percentile integer;
    each recognized feature concept must be backed by an evidence entry.
    """
    offending: list[str] = []
    if not narrative.strip():
        return GroundingReport(False, ("<empty narrative>",))

    p_token = f"{evidence.probability:.2f}"
    if p_token not in narrative:
        offending.append(f"<missing probability {p_token}>")

    allowed = _allowed_numbers(evidence)
    for match in _NUMERAL_RE.finditer(narrative):
        token = match.group(1)
        value = float(token)
        if not any(abs(value - a) <= _NUMERAL_TOL for a in allowed):
            offending.append(token)

    for band_word in _BAND_RE.findall(narrative):
        if band_word.lower() != evidence.risk_band.value:
            offending.append(f"{band_word} anomaly")

    names = evidence.feature_names
    comparators = " | ".join(c.comparator for c in evidence.top_features).lower()
    for pattern, features in _CONCEPT_PATTERNS:
        m = pattern.search(narrative)
        if m is None:
            continue
        if names & features:
            continue
        if m.group(0).lower() in comparators:
            continue
        offending.append(m.group(0))

    return GroundingReport(not offending, tuple(offending))


def answer_followup(
    question: str,
    last_results: Sequence[tuple[AnomalyScore, Evidence]] | None,
) -> Explanation:
    """Re-render stored evidence with expanded, per-feature detail.

    Raises NoPriorResult when the session has nothing scored yet. Questions
    about transactions outside the stored results get a scoped refusal that
    names what is available.
    """
    if not last_results:
        raise NoPriorResult("no scored result in this session yet")

    available = {score.tx_id: evidence for score, evidence in last_results}
    asked = [t for t in re.findall(r"\b[0-9a-zA-Z]{6,}\b", question) if t in available]
    mentioned_unknown = [
        t
        for t in re.findall(r"\btx[0-9a-zA-Z_-]+\b", question)
        if t not in available
    ]
    top_score, top_evidence = last_results[0]
    if mentioned_unknown and not asked:
        refusal = (
            f"I have no scored result for {mentioned_unknown[0]}. The most recent "
            f"analysis covers {top_score.tx_id}, which shows a "
            f"{top_evidence.risk_band.value} anomaly score ({top_evidence.probability:.2f})."
        )
        report = validate_grounding(refusal, top_evidence)
        return Explanation(
            narrative=refusal,
            evidence=top_evidence,
            grounded=report.ok,
            annotations=("ScopedRefusal",),
        )

    evidence = available[asked[0]] if asked else top_evidence
    base = render_narrative(evidence)
    if not evidence.top_features:
        return base
    details = "; ".join(
        f"{clue.comparator} ({clue.name} = {_format_value(clue.value)}, "
        f"contribution {clue.contribution:+.2f})"
        for clue in evidence.top_features
    )
    narrative = base.narrative + " Contributing factors: " + details + "."
    report = validate_grounding(narrative, evidence)
    if not report.ok:  # pragma: no cover - expansion stays within evidence
        raise DomainError(f"expanded narrative failed grounding: {report.offending}")
    return Explanation(
        narrative=narrative,
        evidence=evidence,
        grounded=True,
        grounding_map=base.grounding_map,
    )


def evidence_document(evidence: Evidence) -> dict[str, Any]:
    """The JSON shape of an evidence record for traces and backends."""
    return {
        "Transaction": evidence.tx_id,
        "Probability": evidence.probability,
        "Risk Band": evidence.risk_band.value,
        "Top Features": [
            {
                "Name": clue.name,
                "Value": clue.value,
                "Contribution": clue.contribution,
                "Comparator": clue.comparator,
            }
            for clue in evidence.top_features
        ],
        "Counterparty Verified": evidence.counterparty_verified,
        "Off Peak": evidence.off_peak,
    }


class ExplainerBackend(Protocol):
    """External narrative generator constrained by the style template."""

    def complete(self, request: Mapping[str, Any]) -> Mapping[str, Any]:
        """{"style_template", "evidence_document"} -> {"narrative": str}."""
        ...


class HttpExplainerBackend:
    def __init__(self, endpoint: str, deadline_ms: int = DEFAULT_BACKEND_DEADLINE_MS):
        self.endpoint = endpoint
        self.deadline_ms = deadline_ms

    def complete(self, request: Mapping[str, Any]) -> Mapping[str, Any]:
        import httpx

        response = httpx.post(self.endpoint, json=dict(request), timeout=self.deadline_ms / 1000)
        response.raise_for_status()
        return response.json()


def remote_explain(
    evidence: Evidence,
    backend: ExplainerBackend,
    template: str = EXPLAINER_TEMPLATE,
    deadline_ms: int = DEFAULT_BACKEND_DEADLINE_MS,
) -> Explanation:
    """Explain via a remote backend; anything ungrounded falls back to the template."""
    annotation: str | None = None
    try:
        response = call_with_deadline(
            lambda: backend.complete(
                {"style_template": template, "evidence_document": evidence_document(evidence)}
            ),
            deadline_ms,
        )
        narrative = response.get("narrative") if isinstance(response, Mapping) else None
        if not isinstance(narrative, str):
            raise SchemaViolation("backend response lacks a narrative")
        report = validate_grounding(narrative, evidence)
        if report.ok:
            return Explanation(narrative=narrative, evidence=evidence, grounded=True)
        annotation = "UngroundedNarrative: " + ", ".join(report.offending)
    except SchemaViolation as exc:
        annotation = f"SchemaViolation: {exc}"
    except Exception as exc:
        annotation = f"BackendUnavailable: {type(exc).__name__}: {exc}"
    fallback = render_narrative(evidence)
    return replace(fallback, annotations=fallback.annotations + (annotation,))
