"""Score one transaction and walk the evidence behind its narrative.

Shows the full explanation chain: probability -> per-feature attribution ->
evidence record -> grounded narrative, plus the validator that polices it.
Run after demos/02_train_and_evaluate.py:

    python3 demos/03_score_and_explain.py
"""

from ledgerlens import (
    attribute,
    build_counterparty_graph,
    build_evidence,
    load_csv,
    predict_proba,
    render_narrative,
    temporal_split,
    validate_grounding,
)
from ledgerlens.dataio import load_allowlist, load_model
from ledgerlens.domain import make_score
from ledgerlens.features import FeatureExtractor

transactions, _ = load_csv("demo-data/transactions.csv")
model = load_model("demo-data/model.json")
train_set, test_set = temporal_split(transactions)
graph = build_counterparty_graph(train_set)
extractor = FeatureExtractor(transactions, graph,
                             load_allowlist("demo-data/allowlist.txt"),
                             schema=model.feature_schema)

# Pick the most suspicious test transaction.
best = max(
    (t for t in test_set),
    key=lambda t: predict_proba(model, extractor.vector_for(t)),
)
vector = extractor.vector_for(best)
probability = predict_proba(model, vector)
print(f"transaction {best.tx_id} ({best.timestamp:%Y-%m-%d %H:%M}, "
      f"${best.usd_value:,.0f}, true label: {best.label.value})")
print(f"anomaly probability: {probability:.4f}\n")

record = attribute(model, vector)
print(f"margin {record.margin:+.3f} = base {record.base:+.3f} + contributions:")
named = sorted(
    zip(model.feature_schema.names, record.contributions, vector.values),
    key=lambda item: -abs(item[1]),
)
for name, contribution, value in named[:6]:
    print(f"  {name:<28} value {value:>10.3f}  contribution {contribution:+.3f}")

score = make_score(best.tx_id, probability)
evidence = build_evidence(score, record, vector, model.feature_schema)
explanation = render_narrative(evidence)
print(f"\nnarrative:\n  {explanation.narrative}")

print("\ngrounding map (clause -> features):")
for clause, features in explanation.grounding_map:
    print(f"  {clause!r} -> {', '.join(features)}")

# The validator rejects anything the evidence cannot back.
bogus = explanation.narrative.replace(f"{probability:.2f}", "0.99")
report = validate_grounding(bogus, evidence)
print(f"\ntampered narrative validates: {report.ok} "
      f"(offending tokens: {list(report.offending)})")
