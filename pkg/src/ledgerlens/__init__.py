"""ledgerlens: conversational anomaly analysis for digital-asset transactions.

Pipeline: free-form analyst queries are parsed to a normalized intent
schema, scored by a gradient-boosted tree detector over temporal,
transactional, and graph features, and explained with narratives whose
every number traces back to machine-checkable evidence. Sessions keep
intra-session memory and a per-stage audit trace.
"""

from .boosting import (
    AttributionRecord,
    TrainConfig,
    TreeEnsemble,
    TreeNode,
    attribute,
    classify,
    grad_hess,
    predict_proba,
    train,
)
from .dataio import (
    GeneratorConfig,
    generate_synthetic,
    load_csv,
    load_model,
    save_model,
    write_dataset,
)
from .domain import (
    AnomalyScore,
    Direction,
    Filter,
    IntentKind,
    Label,
    ParsedIntent,
    RiskBand,
    SchemaViolation,
    Transaction,
    ValidationError,
    deserialize_intent,
    serialize_intent,
    validate_transaction,
)
from .evaluation import MetricsReport, evaluate, measure_latency
from .explain import (
    Evidence,
    Explanation,
    build_evidence,
    render_narrative,
    remote_explain,
    validate_grounding,
)
from .features import (
    CounterpartyGraph,
    FeatureExtractor,
    FeatureSchema,
    FeatureVector,
    build_counterparty_graph,
    compute_features,
    default_schema,
    percentile_rank,
    temporal_split,
)
from .gateway import ServiceConfig, build_app, build_orchestrator, load_config
from .parsing import (
    ClarificationRequest,
    ParseOutcome,
    merge_refinement,
    parse_utterance,
    remote_parse,
    resolve_time_phrase,
)
from .session import AgentMessage, Orchestrator, SessionContext, Stage, TurnResult

__version__ = "0.1.0"
