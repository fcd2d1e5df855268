"""Intent parsing: the golden query, time phrases, clarifications, fallbacks."""

from __future__ import annotations

import json
import time
from datetime import datetime, timedelta, timezone
from types import SimpleNamespace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ledgerlens.domain import IntentKind, ParsedIntent, serialize_intent
from ledgerlens.parsing import (
    ClarificationRequest,
    NoPriorQuery,
    ParseOutcome,
    PARSER_TEMPLATE,
    merge_refinement,
    parse_filters,
    parse_utterance,
    remote_parse,
    resolve_time_phrase,
)

from conftest import GOLDEN_DOCUMENT, GOLDEN_UTTERANCE

UTC = timezone.utc
NOW = datetime(2025, 10, 1, 9, 0, tzinfo=UTC)


def ctx(wallet=None, intent=None):
    return SimpleNamespace(bound_wallet=wallet, last_intent=intent)


class TestGoldenQuery:
    def test_listing_equivalence(self):
        outcome = parse_utterance(GOLDEN_UTTERANCE, now=NOW)
        assert outcome.intent is not None
        assert json.loads(serialize_intent(outcome.intent)) == GOLDEN_DOCUMENT

    def test_deterministic(self):
        first = parse_utterance(GOLDEN_UTTERANCE, now=NOW)
        second = parse_utterance(GOLDEN_UTTERANCE, now=NOW)
        assert first == second


class TestTimePhrases:
    def test_past_week_is_seven_days(self):
        ref = resolve_time_phrase("past week", NOW)
        assert ref is not None and ref.days == 7

    @pytest.mark.parametrize(
        "phrase,days",
        [("past 3 days", 3), ("last 2 weeks", 14), ("previous 10 days", 10),
         ("past month", 30), ("past 1 day", 1)],
    )
    def test_counted_ranges(self, phrase, days):
        ref = resolve_time_phrase(phrase, NOW)
        assert ref is not None and ref.days == days

    def test_prose_point_with_offset(self):
        ref = resolve_time_phrase("On September 20, 2025, at 11:00 PM (UTC+9)", NOW)
        assert ref is not None
        assert ref.point == datetime(2025, 9, 20, 23, 0, tzinfo=timezone(timedelta(hours=9)))
        assert ref.point.isoformat() == "2025-09-20T23:00:00+09:00"

    def test_iso_point(self):
        ref = resolve_time_phrase("at 2024-03-05T08:30:00+02:00 please", NOW)
        assert ref is not None
        assert ref.point == datetime(2024, 3, 5, 8, 30, tzinfo=timezone(timedelta(hours=2)))

    def test_morning_hours(self):
        ref = resolve_time_phrase("On January 2, 2024, at 12:15 AM (UTC-5)", NOW)
        assert ref.point.hour == 0
        assert ref.point.utcoffset() == timedelta(hours=-5)

    def test_unrecognized_is_none(self):
        assert resolve_time_phrase("someday", NOW) is None


class TestParseUtterance:
    def test_window_analysis_with_bound_wallet(self):
        outcome = parse_utterance(
            "Past week, my wallet—anything suspicious?",
            context=ctx(wallet="1BoundWalletAAAA..."), now=NOW,
        )
        intent = outcome.intent
        assert intent is not None
        assert intent.kind is IntentKind.WINDOW_ANALYSIS
        assert intent.day_range == 7
        assert intent.receiving_address == "1BoundWalletAAAA..."

    def test_window_without_wallet_asks(self):
        outcome = parse_utterance("Past week, my wallet—anything suspicious?", now=NOW)
        assert outcome.clarification is not None
        assert "receiving_address" in outcome.clarification.missing

    def test_explicit_wallet_in_text(self):
        outcome = parse_utterance(
            "Analyze transactions to my address 1A2b3C over the past 3 days", now=NOW
        )
        assert outcome.intent.kind is IntentKind.WINDOW_ANALYSIS
        assert outcome.intent.receiving_address == "1A2b3C..."
        assert outcome.intent.day_range == 3

    def test_empty_string_clarifies(self):
        outcome = parse_utterance("", now=NOW)
        assert outcome.clarification is not None

    def test_partial_transaction_check_batches_missing(self):
        outcome = parse_utterance(
            "On September 20, 2025, at 11:00 PM (UTC+9) I received 0.8 BTC", now=NOW
        )
        clar = outcome.clarification
        assert clar is not None
        assert "counterparty_address" in clar.missing
        assert "usd_value" in clar.missing
        for name in clar.missing:
            assert name in clar.question or name.replace("_", " ") not in ("",)

    def test_follow_up_detected(self):
        outcome = parse_utterance("Why is this transaction high-risk?", now=NOW)
        assert outcome.intent.kind is IntentKind.FOLLOW_UP

    def test_refinement_detected(self):
        outcome = parse_utterance("only exchange-linked clusters", now=NOW)
        assert outcome.intent.kind is IntentKind.REFINEMENT
        assert any(
            f.field == "cluster_class" and f.value == "exchange"
            for f in outcome.intent.filters
        )

    def test_purely_pure_function_of_inputs(self):
        a = parse_utterance("past week for wallet 1A2b3C", now=NOW)
        b = parse_utterance("past week for wallet 1A2b3C", now=NOW)
        assert a == b


# Utterance fuzzing with plantable fields: every emitted field must be
# traceable to a planted substring (no hallucinated fields).
_wallets = st.from_regex(r"1[1-9A-HJ-NP-Za-km-z]{27,30}", fullmatch=True)
_counterparties = st.from_regex(r"bc1q[a-z0-9]{8,16}", fullmatch=True)
_btc = st.floats(min_value=0.01, max_value=99, allow_nan=False).map(lambda v: round(v, 3))
_usd = st.integers(min_value=10, max_value=2_000_000)
_days = st.integers(min_value=1, max_value=60)


class TestNoHallucinatedFields:
    @given(wallet=_wallets, cp=_counterparties, btc=_btc, usd=_usd)
    @settings(max_examples=120, deadline=None)
    def test_transaction_check_fields_all_planted(self, wallet, cp, btc, usd):
        text = (
            f"On March 3, 2024, at 10:00 PM (UTC+2), I received {btc} BTC "
            f"(worth about ${usd}) to my address {wallet} from the counterparty {cp}. "
            "Please check it."
        )
        outcome = parse_utterance(text, now=NOW)
        intent = outcome.intent
        assert intent is not None and intent.kind is IntentKind.TRANSACTION_CHECK
        assert intent.receiving_address.rstrip(".") == wallet
        assert intent.counterparty_address == cp
        assert intent.value == btc
        assert intent.usd_value == float(usd)
        assert intent.date.isoformat() == "2024-03-03T22:00:00+02:00"

    @given(wallet=_wallets, days=_days)
    @settings(max_examples=80, deadline=None)
    def test_window_fields_all_planted(self, wallet, days):
        text = f"check the past {days} days for my wallet {wallet}, anything odd?"
        outcome = parse_utterance(text, now=NOW)
        intent = outcome.intent
        assert intent is not None and intent.kind is IntentKind.WINDOW_ANALYSIS
        assert intent.day_range == days
        assert intent.receiving_address.rstrip(".") == wallet

    @given(st.text(alphabet=st.characters(whitelist_categories=("Lu", "Ll", "Zs")),
                   max_size=60))
    @settings(max_examples=120, deadline=None)
    def test_alpha_noise_never_yields_numeric_fields(self, noise):
        outcome = parse_utterance(noise, now=NOW)
        if outcome.intent is not None and outcome.intent.kind in (
            IntentKind.TRANSACTION_CHECK,
            IntentKind.WINDOW_ANALYSIS,
        ):
            assert outcome.intent.value is None
            assert outcome.intent.usd_value is None


class TestMergeRefinement:
    def previous(self):
        return ParsedIntent(
            kind=IntentKind.WINDOW_ANALYSIS,
            receiving_address="1A2b3C...",
            day_range=7,
        )

    def test_adds_cluster_filter(self):
        merged = merge_refinement(self.previous(), "only exchange-linked clusters")
        assert merged.kind is IntentKind.WINDOW_ANALYSIS
        assert merged.day_range == 7
        assert any(f.field == "cluster_class" and f.value == "exchange"
                   for f in merged.filters)

    def test_empty_text_is_identity(self):
        previous = self.previous()
        assert merge_refinement(previous, "") == previous

    def test_no_prior_query(self):
        with pytest.raises(NoPriorQuery):
            merge_refinement(None, "only large ones")

    def test_never_widens(self):
        previous = merge_refinement(self.previous(), "only exchange-linked clusters")
        narrowed = merge_refinement(previous, "only large ones")
        assert set(previous.filters) <= set(narrowed.filters)

    def test_value_threshold_vocabulary(self):
        filters = parse_filters("only transfers over $50,000")
        assert any(f.field == "usd_value" and f.op == ">" and f.value == 50000.0
                   for f in filters)

    def test_high_value_maps_to_95th_percentile(self):
        filters = parse_filters("only high-value ones")
        assert any(f.field == "usd_value_pctile" and f.op == ">" and f.value == 0.95
                   for f in filters)


class StubBackend:
    def __init__(self, document=None, *, raise_error=None, sleep_s=0.0, response=None):
        self.document = document
        self.raise_error = raise_error
        self.sleep_s = sleep_s
        self.response = response
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        assert request.get("template") == PARSER_TEMPLATE
        if self.sleep_s:
            time.sleep(self.sleep_s)
        if self.raise_error is not None:
            raise self.raise_error
        if self.response is not None:
            return self.response
        return {"document": self.document}


class TestRemoteParse:
    def test_valid_document_matches_deterministic(self):
        doc = json.dumps(GOLDEN_DOCUMENT)
        outcome = remote_parse(GOLDEN_UTTERANCE, StubBackend(document=doc), now=NOW)
        assert outcome.intent == parse_utterance(GOLDEN_UTTERANCE, now=NOW).intent
        assert outcome.annotations == ()

    def test_malformed_document_falls_back(self):
        backend = StubBackend(document='{"Amount": 3}')
        outcome = remote_parse(GOLDEN_UTTERANCE, backend, now=NOW)
        assert outcome.intent == parse_utterance(GOLDEN_UTTERANCE, now=NOW).intent
        assert any("SchemaViolation" in a for a in outcome.annotations)

    def test_unreachable_backend_falls_back(self):
        backend = StubBackend(raise_error=ConnectionError("refused"))
        outcome = remote_parse(GOLDEN_UTTERANCE, backend, now=NOW)
        assert outcome.intent is not None
        assert any("BackendUnavailable" in a for a in outcome.annotations)

    def test_sleeping_backend_hits_deadline(self):
        backend = StubBackend(document="{}", sleep_s=0.5)
        started = time.perf_counter()
        outcome = remote_parse(GOLDEN_UTTERANCE, backend, now=NOW, deadline_ms=50)
        elapsed = time.perf_counter() - started
        assert elapsed < 0.4
        assert outcome.intent is not None
        assert any("BackendUnavailable" in a for a in outcome.annotations)

    def test_response_without_document_falls_back(self):
        backend = StubBackend(response={"unexpected": 1})
        outcome = remote_parse("past week, my wallet?", backend, now=NOW)
        assert outcome.clarification is not None  # deterministic path outcome

    @pytest.mark.parametrize(
        "backend",
        [
            StubBackend(document=json.dumps(GOLDEN_DOCUMENT)),
            StubBackend(document="not json"),
            StubBackend(raise_error=RuntimeError("boom")),
            StubBackend(response={"nope": True}),
        ],
    )
    def test_every_backend_behavior_terminates_with_outcome(self, backend):
        outcome = remote_parse(GOLDEN_UTTERANCE, backend, now=NOW)
        assert isinstance(outcome, ParseOutcome)
        assert (outcome.intent is None) != (outcome.clarification is None)


class TestClarificationRequest:
    def test_question_mentions_every_field(self):
        with pytest.raises(Exception):
            ClarificationRequest(missing=("date",), question="please say more")

    def test_empty_missing_rejected(self):
        with pytest.raises(Exception):
            ClarificationRequest(missing=(), question="?")
