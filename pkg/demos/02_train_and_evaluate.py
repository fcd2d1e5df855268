"""Train the detector on the pre-2023 window and evaluate on 2023-2024.

Emulates deployment: the model and the counterparty graph only ever see
training-window data, then score strictly later transactions. Run after
demos/01_generate_corpus.py:

    python3 demos/02_train_and_evaluate.py
"""

import numpy as np

from ledgerlens import (
    TrainConfig,
    build_counterparty_graph,
    default_schema,
    evaluate,
    load_csv,
    temporal_split,
    train,
)
from ledgerlens.dataio import load_allowlist, save_model
from ledgerlens.evaluation import score_transactions, threshold_sweep
from ledgerlens.features import FeatureExtractor

transactions, report = load_csv("demo-data/transactions.csv")
print(f"loaded {report.accepted} rows ({report.dropped or 'none dropped'})")

train_set, test_set = temporal_split(transactions)
print(f"temporal split: {len(train_set)} train (pre-2023), {len(test_set)} test")

graph = build_counterparty_graph(train_set)
verified = load_allowlist("demo-data/allowlist.txt")
extractor = FeatureExtractor(transactions, graph, verified, schema=default_schema())

X = np.array([extractor.vector_for(t).values for t in train_set])
y = [1 if t.label.value == "anomalous" else 0 for t in train_set]
model = train(X, y, TrainConfig(), schema=extractor.schema)
save_model(model, "demo-data/model.json")
print(f"trained {len(model.trees)} trees; saved to demo-data/model.json\n")

metrics = evaluate(model, extractor, test_set)
print(metrics.to_text())

# How the operating point moves with the decision threshold.
labeled = [t for t in test_set if t.label.value != "unlabeled"]
probabilities = score_transactions(model, extractor, labeled)
truth = [t.label.value == "anomalous" for t in labeled]
print("\nthreshold  precision  recall")
for threshold, precision, recall in threshold_sweep(
    probabilities, truth, [0.1, 0.3, 0.5, 0.7, 0.9]
):
    print(f"{threshold:9.1f}  {precision:9.3f}  {recall:6.3f}")
