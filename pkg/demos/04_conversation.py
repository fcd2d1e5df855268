"""A multi-turn analyst session: query, refine, ask why, inspect the trace.

Every stage of every turn lands in an auditable trace; this script prints
the stage records after driving the loop. Run after demo 02:

    python3 demos/04_conversation.py
"""

import json
from datetime import timedelta

from ledgerlens import Orchestrator, build_counterparty_graph, load_csv, temporal_split
from ledgerlens.dataio import load_allowlist, load_clusters, load_model
from ledgerlens.features import FeatureExtractor

transactions, _ = load_csv("demo-data/transactions.csv")
model = load_model("demo-data/model.json")
train_set, _ = temporal_split(transactions)
extractor = FeatureExtractor(transactions, build_counterparty_graph(train_set),
                             load_allowlist("demo-data/allowlist.txt"),
                             schema=model.feature_schema)
clusters = load_clusters("demo-data/counterparties.csv")

# Anchor "past week" to the end of the corpus instead of wall time.
corpus_end = max(t.timestamp for t in transactions)
orchestrator = Orchestrator(model, extractor, clusters=clusters,
                            clock=lambda: corpus_end)

# A wallet with mixing bursts in its trailing month makes the loop vivid.
window = [t for t in transactions if t.timestamp > corpus_end - timedelta(days=30)]
anomalous_count: dict[str, int] = {}
for t in window:
    if t.label.value == "anomalous":
        anomalous_count[t.receiving_address] = anomalous_count.get(t.receiving_address, 0) + 1
wallet = max(anomalous_count, key=lambda w: anomalous_count[w])

session = orchestrator.new_session()
script = [
    f"Analyze transactions for my wallet {wallet} over the past month, "
    "anything suspicious?",
    "only mixer-linked clusters",
    "Why is this transaction high-risk?",
]
for text in script:
    print(f"\nanalyst> {text}")
    result = orchestrator.handle_turn(session, text)
    print(f"service> {result.reply}")
    if result.scores:
        flagged = [s for s in result.scores if s.predicted_label.value == "anomalous"]
        print(f"         ({len(result.scores)} scored, {len(flagged)} anomalous, "
              f"trace {result.trace_id})")

print("\n--- audit trace of the last turn ---")
for message in orchestrator.get_trace(session, result.trace_id):
    print(f"[{message.stage.value}] {message.duration_ms:.1f} ms")
    print(json.dumps(message.payload, indent=2, default=str)[:400])
