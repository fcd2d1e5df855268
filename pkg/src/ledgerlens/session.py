"""Per-session orchestration of the parse -> detect -> explain loop.

Sessions are ephemeral and fully isolated: state never crosses session
boundaries and nothing survives a process restart. Every executed stage
appends one AgentMessage to the turn's trace, so a reply can be
reconstructed from its trace alone.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from enum import Enum
from time import perf_counter
from typing import Any, Callable, Mapping, Sequence

from .boosting import TreeEnsemble, attribute, predict_proba
from .domain import (
    AnomalyScore,
    Direction,
    DomainError,
    Filter,
    IntentKind,
    ParsedIntent,
    SchemaViolation,
    Transaction,
    intent_document,
    make_score,
)
from .explain import (
    Evidence,
    Explanation,
    ExplainerBackend,
    NoPriorResult,
    build_evidence,
    answer_followup,
    remote_explain,
    render_narrative,
)
from .features import FeatureExtractor, percentile_rank
from .parsing import (
    ClarificationRequest,
    NoPriorQuery,
    ParseOutcome,
    ParserBackend,
    merge_refinement,
    parse_utterance,
    remote_parse,
)

MESSAGE_SCHEMA_VERSION = 1


class UnknownTrace(DomainError):
    pass


class StoreUnavailable(DomainError):
    pass


class Stage(str, Enum):
    PARSE = "parse"
    CLARIFY = "clarify"
    DETECT = "detect"
    EXPLAIN = "explain"
    REFINE = "refine"


@dataclass(frozen=True)
class AgentMessage:
    trace_id: str
    session_id: str
    turn_index: int
    stage: Stage
    schema_version: int
    timestamp: datetime
    payload: Mapping[str, Any]
    duration_ms: float = 0.0
    annotations: tuple[str, ...] = ()


@dataclass(frozen=True)
class Turn:
    index: int
    user_text: str
    reply: str
    scores: tuple[AnomalyScore, ...]
    trace_id: str


@dataclass(frozen=True)
class TurnResult:
    reply: str
    scores: tuple[AnomalyScore, ...]
    trace_id: str
    error: str | None = None
    # Distinct counterparty clusters in the scored set; feeds UI refinement chips.
    clusters: tuple[str, ...] = ()


@dataclass
class _PendingClarification:
    request: ClarificationRequest
    utterance: str


@dataclass
class SessionContext:
    """Intra-session memory: turns, the last intent, the last scored results."""

    session_id: str
    created_at: datetime
    clock: Callable[[], datetime]
    turns: list[Turn] = field(default_factory=list)
    bound_wallet: str | None = None
    last_intent: ParsedIntent | None = None
    last_results: list[tuple[AnomalyScore, Evidence]] = field(default_factory=list)
    last_transactions: list[Transaction] = field(default_factory=list)
    pending: _PendingClarification | None = None
    traces: dict[str, list[AgentMessage]] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)


def _compare(left: Any, op: str, right: Any) -> bool:
    if op == "=":
        return left == right
    if op == "!=":
        return left != right
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == ">":
        return left > right
    return left >= right


def apply_filters(
    transactions: Sequence[Transaction],
    filters: Sequence[Filter],
    clusters: Mapping[str, str],
    baseline_usd: Sequence[float] | None = None,
    verified: frozenset[str] | set[str] = frozenset(),
) -> list[Transaction]:
    """Keep the transactions satisfying every filter.

    Percentile filters resolve against baseline_usd (the current result
    window) so "high-value" means "above the window's 95th percentile".
    """
    window = list(baseline_usd) if baseline_usd is not None else [t.usd_value for t in transactions]

    def matches(tx: Transaction, f: Filter) -> bool:
        if f.field == "usd_value":
            return _compare(tx.usd_value, f.op, float(f.value))
        if f.field == "value_btc":
            return _compare(tx.value_btc, f.op, float(f.value))
        if f.field == "usd_value_pctile":
            return _compare(percentile_rank(tx.usd_value, window), f.op, float(f.value))
        if f.field == "cluster_class":
            return _compare(clusters.get(tx.counterparty_address, "unknown"), f.op, f.value)
        if f.field == "counterparty_class":
            cls = "verified" if tx.counterparty_address in verified else "unverified"
            return _compare(cls, f.op, f.value)
        if f.field == "direction":
            return _compare(tx.direction.value, f.op, f.value)
        if f.field == "counterparty_address":
            wanted = str(f.value)
            if wanted.endswith("..."):
                return tx.counterparty_address.startswith(wanted[:-3])
            return _compare(tx.counterparty_address, f.op, wanted)
        return True

    return [tx for tx in transactions if all(matches(tx, f) for f in filters)]


class Orchestrator:
    """Runs turns against one model, one transaction corpus, one clock."""

    def __init__(
        self,
        model: TreeEnsemble,
        extractor: FeatureExtractor,
        clusters: Mapping[str, str] | None = None,
        threshold: float = 0.5,
        parser_backend: ParserBackend | None = None,
        explainer_backend: ExplainerBackend | None = None,
        backend_deadline_ms: int = 10_000,
        clock: Callable[[], datetime] | None = None,
    ) -> None:
        if model.feature_schema.version != extractor.schema.version:
            raise SchemaViolation("model and feature extractor schema versions differ")
        self.model = model
        self.extractor = extractor
        self.clusters = dict(clusters or {})
        self.threshold = threshold
        self.parser_backend = parser_backend
        self.explainer_backend = explainer_backend
        self.backend_deadline_ms = backend_deadline_ms
        self.default_clock = clock or (lambda: datetime.now(timezone.utc))
        self.sessions: dict[str, SessionContext] = {}
        self._registry_lock = threading.Lock()

    # -- session lifecycle --------------------------------------------------

    def new_session(self, clock: Callable[[], datetime] | None = None) -> SessionContext:
        clk = clock or self.default_clock
        session = SessionContext(
            session_id=uuid.uuid4().hex, created_at=clk(), clock=clk
        )
        with self._registry_lock:
            self.sessions[session.session_id] = session
        return session

    def get_session(self, session_id: str) -> SessionContext:
        try:
            return self.sessions[session_id]
        except KeyError as exc:
            raise UnknownTrace(f"unknown session: {session_id}") from exc

    def get_trace(self, session: SessionContext, trace_id: str) -> list[AgentMessage]:
        try:
            return list(session.traces[trace_id])
        except KeyError as exc:
            raise UnknownTrace(f"unknown trace: {trace_id}") from exc

    # -- turn pipeline ------------------------------------------------------

    def handle_turn(self, session: SessionContext, text: str) -> TurnResult:
        with session.lock:
            return self._handle_turn_locked(session, text)

    def _handle_turn_locked(self, session: SessionContext, text: str) -> TurnResult:
        turn_index = len(session.turns)
        trace_id = f"t{turn_index}-{uuid.uuid4().hex[:10]}"
        messages: list[AgentMessage] = []
        session.traces[trace_id] = messages
        now = session.clock()

        def record(stage: Stage, payload: Mapping[str, Any], started: float,
                   annotations: tuple[str, ...] = ()) -> None:
            messages.append(
                AgentMessage(
                    trace_id=trace_id,
                    session_id=session.session_id,
                    turn_index=turn_index,
                    stage=stage,
                    schema_version=MESSAGE_SCHEMA_VERSION,
                    timestamp=session.clock(),
                    payload=dict(payload),
                    duration_ms=(perf_counter() - started) * 1000.0,
                    annotations=annotations,
                )
            )

        def finish(reply: str, scores: Sequence[AnomalyScore] = (), error: str | None = None,
                   clusters: Sequence[str] = ()) -> TurnResult:
            session.turns.append(
                Turn(turn_index, text, reply, tuple(scores), trace_id)
            )
            return TurnResult(reply, tuple(scores), trace_id, error, tuple(clusters))

        try:
            return self._run_pipeline(session, text, now, record, finish)
        except DomainError as exc:
            started = perf_counter()
            record(
                Stage.EXPLAIN,
                {"Error": type(exc).__name__, "Message": str(exc)},
                started,
                annotations=(type(exc).__name__,),
            )
            return finish(f"The request could not be completed: {exc}",
                          error=type(exc).__name__)

    def _parse(self, text: str, session: SessionContext, now: datetime) -> ParseOutcome:
        if self.parser_backend is not None:
            return remote_parse(
                text,
                self.parser_backend,
                context=session,
                now=now,
                deadline_ms=self.backend_deadline_ms,
            )
        return parse_utterance(text, context=session, now=now)

    def _run_pipeline(self, session, text, now, record, finish) -> TurnResult:
        started = perf_counter()
        parse_input = text
        if session.pending is not None:
            parse_input = session.pending.utterance + "\n" + text
        outcome = self._parse(parse_input, session, now)

        intent = outcome.intent
        if session.pending is not None and intent is not None and intent.kind in (
            IntentKind.REFINEMENT,
            IntentKind.FOLLOW_UP,
        ):
            # An unanswered clarification wins over refinement chatter.
            outcome = ParseOutcome(clarification=session.pending.request)
            intent = None

        if outcome.clarification is not None:
            clarification = outcome.clarification
            record(
                Stage.PARSE,
                {"Status": "clarification_needed", "Missing": list(clarification.missing)},
                started,
                annotations=outcome.annotations,
            )
            started = perf_counter()
            record(Stage.CLARIFY, {"Question": clarification.question}, started)
            session.pending = _PendingClarification(clarification, parse_input)
            return finish(clarification.question)

        assert intent is not None
        session.pending = None

        if intent.kind is IntentKind.FOLLOW_UP:
            record(Stage.PARSE, {"Kind": "follow_up", "Question": text}, started,
                   annotations=outcome.annotations)
            started = perf_counter()
            try:
                explanation = answer_followup(text, session.last_results)
            except NoPriorResult as exc:
                record(Stage.EXPLAIN, {"Error": "NoPriorResult", "Message": str(exc)},
                       started, annotations=("NoPriorResult",))
                return finish(
                    "There is no scored result in this session to explain yet.",
                    error="NoPriorResult",
                )
            record(Stage.EXPLAIN, self._explain_payload("", explanation), started,
                   annotations=explanation.annotations)
            return finish(explanation.narrative,
                          [score for score, _ in session.last_results])

        if intent.kind is IntentKind.REFINEMENT:
            try:
                merged = merge_refinement(session.last_intent, text)
            except NoPriorQuery as exc:
                record(Stage.REFINE, {"Error": "NoPriorQuery", "Message": str(exc)},
                       started, annotations=("NoPriorQuery",))
                return finish("There is no earlier query to refine; ask one first.",
                              error="NoPriorQuery")
            record(
                Stage.REFINE,
                {
                    "Intent": self._intent_payload(merged),
                    "Added Filters": [
                        {"Field": f.field, "Op": f.op, "Value": f.value}
                        for f in intent.filters
                    ],
                },
                started,
                annotations=outcome.annotations,
            )
            candidates = apply_filters(
                session.last_transactions,
                merged.filters,
                self.clusters,
                baseline_usd=[t.usd_value for t in session.last_transactions],
                verified=self.extractor.verified,
            )
            return self._detect_and_explain(session, merged, candidates, now, record, finish,
                                            summarize=True)

        record(Stage.PARSE, {"Intent": self._intent_payload(intent)}, started,
               annotations=outcome.annotations)

        if intent.kind is IntentKind.TRANSACTION_CHECK:
            tx = Transaction(
                tx_id=f"query-{len(session.turns)}",
                timestamp=intent.date,
                receiving_address=intent.receiving_address,
                counterparty_address=intent.counterparty_address,
                value_btc=intent.value,
                usd_value=intent.usd_value,
                direction=Direction.INCOMING,
            )
            return self._detect_and_explain(session, intent, [tx], now, record, finish,
                                            summarize=False)

        # window_analysis
        end = now
        start = now - timedelta(days=intent.day_range)
        candidates = self.extractor.wallet_window(intent.receiving_address, start, end)
        if intent.counterparty_address is not None:
            candidates = [
                t for t in candidates if t.counterparty_address == intent.counterparty_address
            ]
        candidates = apply_filters(candidates, intent.filters, self.clusters,
                                   verified=self.extractor.verified)
        return self._detect_and_explain(session, intent, candidates, now, record, finish,
                                        summarize=True)

    # -- stages -------------------------------------------------------------

    def _detect_and_explain(self, session, intent, transactions, now, record, finish,
                            summarize: bool) -> TurnResult:
        started = perf_counter()
        scored: list[tuple[Transaction, AnomalyScore, Evidence]] = []
        for tx in transactions:
            vector = self.extractor.vector_for(tx)
            probability = predict_proba(self.model, vector)
            score = make_score(tx.tx_id, probability, self.threshold)
            evidence = build_evidence(
                score, attribute(self.model, vector), vector, self.extractor.schema
            )
            scored.append((tx, score, evidence))
        scored.sort(key=lambda item: -item[1].probability)
        record(
            Stage.DETECT,
            {
                "Threshold": self.threshold,
                "Count": len(scored),
                "Scores": [self._score_payload(score) for _, score, _ in scored],
            },
            started,
        )

        started = perf_counter()
        session.last_intent = intent
        if intent.receiving_address:
            session.bound_wallet = intent.receiving_address
        session.last_transactions = [tx for tx, _, _ in scored]
        session.last_results = [(score, evidence) for _, score, evidence in scored]

        if not scored:
            reply = "No transactions matched that query window; nothing to score."
            record(Stage.EXPLAIN, {"Reply": reply, "Narrative": "", "Evidence": []}, started)
            return finish(reply)

        _, top_score, top_evidence = scored[0]
        explanation = self._explain(top_evidence)
        reply = explanation.narrative
        if summarize:
            flagged = sum(1 for _, s, _ in scored if s.predicted_label.value == "anomalous")
            reply = (
                f"Scored {len(scored)} transactions; {flagged} flagged anomalous. "
                f"Top result {top_score.tx_id}: " + explanation.narrative
            )
        record(
            Stage.EXPLAIN,
            self._explain_payload(reply, explanation,
                                  extra_evidence=[e for _, _, e in scored[1:]]),
            started,
            annotations=explanation.annotations,
        )
        observed = sorted(
            {self.clusters.get(tx.counterparty_address, "unknown") for tx, _, _ in scored}
        )
        return finish(reply, [score for _, score, _ in scored], clusters=observed)

    def _explain(self, evidence: Evidence) -> Explanation:
        if self.explainer_backend is not None:
            return remote_explain(
                evidence, self.explainer_backend, deadline_ms=self.backend_deadline_ms
            )
        return render_narrative(evidence)

    # -- payload shaping ----------------------------------------------------

    def _intent_payload(self, intent: ParsedIntent) -> dict[str, Any]:
        try:
            return intent_document(intent)
        except SchemaViolation:
            stripped = intent_document(replace(intent, filters=()))
            stripped["Filters"] = [
                {"Field": f.field, "Op": f.op, "Value": f.value} for f in intent.filters
            ]
            return stripped

    @staticmethod
    def _score_payload(score: AnomalyScore) -> dict[str, Any]:
        return {
            "Transaction": score.tx_id,
            "Probability": score.probability,
            "Label": score.predicted_label.value,
            "Risk Band": score.risk_band.value,
        }

    @staticmethod
    def _explain_payload(reply: str, explanation: Explanation,
                         extra_evidence: Sequence[Evidence] = ()) -> dict[str, Any]:
        from .explain import evidence_document

        return {
            "Reply": reply or explanation.narrative,
            "Narrative": explanation.narrative,
            "Grounded": explanation.grounded,
            "Grounding Map": [
                {"Clause": clause, "Features": list(names)}
                for clause, names in explanation.grounding_map
            ],
            "Evidence": [evidence_document(explanation.evidence)]
            + [evidence_document(e) for e in extra_evidence],
        }
