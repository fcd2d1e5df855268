"""Second-order gradient-boosted trees with a logistic objective.

Split finding is exact greedy over sorted feature values with midpoint
thresholds. Gain for a candidate partition (L, R):

    gain = 1/2 * [ G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda)
                   - (G_L+G_R)^2/(H_L+H_R+lambda) ] - gamma

Leaf weight is -G/(H+lambda). A candidate wins when its gain is
non-negative (raw improvement of at least gamma) and both children carry at
least the minimum hessian mass; ties break to the lowest feature index,
then the lowest threshold. Near-tied candidates are re-scored with
order-independent exact sums (math.fsum) so the chosen split is
reproducible and matches exhaustive enumeration bit for bit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import DomainError, Label, RiskBand, risk_band
from .features import FeatureSchema, FeatureVector, SchemaMismatch

# Fast-scan gains within this distance of the best are re-scored exactly.
_TIE_EPS = 1e-9
# Keep probabilities strictly inside (0, 1).
_P_EPS = 1e-15


class EmptyDataset(DomainError):
    pass


class ArityMismatch(DomainError):
    pass


class DegenerateLabels(UserWarning):
    """All training labels identical; the model converges to a constant margin."""


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 200
    max_depth: int = 4
    learning_rate: float = 0.1
    l2_weight: float = 1.0
    min_split_gain: float = 0.0
    min_child_hessian: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rounds < 0:
            raise DomainError("rounds must be >= 0")
        if self.max_depth < 1:
            raise DomainError("max_depth must be >= 1")
        if not 0.0 < self.learning_rate:
            raise DomainError("learning_rate must be positive")
        if self.l2_weight < 0 or self.min_split_gain < 0 or self.min_child_hessian < 0:
            raise DomainError("l2_weight, min_split_gain, min_child_hessian must be >= 0")


@dataclass
class TreeNode:
    """Internal node (feature_index set) or leaf (feature_index None).

    node_value at a leaf is the leaf weight; at an internal node it is the
    cover-weighted mean of descendant leaf weights. cover is the hessian
    mass that reached the node during training.
    """

    cover: float
    node_value: float
    feature_index: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature_index is None

    @property
    def weight(self) -> float:
        if not self.is_leaf:
            raise DomainError("weight is defined on leaves only")
        return self.node_value


@dataclass(frozen=True)
class TreeEnsemble:
    trees: tuple[TreeNode, ...]
    learning_rate: float
    base_margin: float
    feature_schema: FeatureSchema
    config: TrainConfig


@dataclass(frozen=True)
class AttributionRecord:
    """Per-feature margin contributions; base + sum(contributions) == margin."""

    base: float
    contributions: tuple[float, ...]
    margin: float


def sigmoid(margin: float) -> float:
    if margin >= 0:
        p = 1.0 / (1.0 + math.exp(-margin))
    else:
        e = math.exp(margin)
        p = e / (1.0 + e)
    return min(max(p, _P_EPS), 1.0 - _P_EPS)


def grad_hess(margin: float, label: int) -> tuple[float, float]:
    """Gradient and hessian of the logistic loss at a raw margin."""
    if label not in (0, 1):
        raise DomainError(f"label must be 0 or 1, got {label!r}")
    p = sigmoid(margin)
    return p - label, p * (1.0 - p)


def _sigmoid_vec(margins: np.ndarray) -> np.ndarray:
    out = np.empty_like(margins)
    pos = margins >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-margins[pos]))
    e = np.exp(margins[~pos])
    out[~pos] = e / (1.0 + e)
    return np.clip(out, _P_EPS, 1.0 - _P_EPS)


def _gain_formula(gl: float, hl: float, gr: float, hr: float, lam: float, gamma: float) -> float:
    if hl + lam <= 0 or hr + lam <= 0:
        return -math.inf
    return 0.5 * (
        gl * gl / (hl + lam)
        + gr * gr / (hr + lam)
        - (gl + gr) * (gl + gr) / (hl + hr + lam)
    ) - gamma


def _best_split(
    X: np.ndarray, g: np.ndarray, h: np.ndarray, rows: np.ndarray, cfg: TrainConfig
) -> tuple[int, float] | None:
    """Exact greedy argmax of the split gain over all (feature, midpoint) pairs."""
    lam, gamma, min_h = cfg.l2_weight, cfg.min_split_gain, cfg.min_child_hessian
    g_rows = g[rows]
    h_rows = h[rows]

    per_feature: list[tuple[int, np.ndarray, np.ndarray]] = []
    best_fast = -math.inf
    for f in range(X.shape[1]):
        xs = X[rows, f]
        order = np.argsort(xs, kind="stable")
        xs_sorted = xs[order]
        cut = np.nonzero(xs_sorted[:-1] < xs_sorted[1:])[0]
        if cut.size == 0:
            continue
        cg = np.cumsum(g_rows[order])
        ch = np.cumsum(h_rows[order])
        gl, hl = cg[cut], ch[cut]
        gr, hr = cg[-1] - gl, ch[-1] - hl
        thr = 0.5 * (xs_sorted[cut] + xs_sorted[cut + 1])
        # A midpoint that rounds down to the left value would split nothing.
        low = thr <= xs_sorted[cut]
        if low.any():
            thr = np.where(low, xs_sorted[cut + 1], thr)
        with np.errstate(divide="ignore", invalid="ignore"):
            gains = 0.5 * (
                gl * gl / (hl + lam) + gr * gr / (hr + lam) - (gl + gr) ** 2 / (hl + hr + lam)
            ) - gamma
        gains[~np.isfinite(gains) | (hl < min_h) | (hr < min_h)] = -math.inf
        if gains.size:
            best_fast = max(best_fast, float(gains.max()))
        per_feature.append((f, thr, gains))

    if not math.isfinite(best_fast) or best_fast <= -_TIE_EPS:
        return None

    # Re-score near-tied candidates with order-independent sums; first of the
    # exact maxima in (feature, threshold) order wins.
    best: tuple[float, int, float] | None = None
    cutoff = best_fast - _TIE_EPS
    for f, thr, gains in per_feature:
        xs = X[rows, f]
        for i in np.nonzero(gains >= cutoff)[0]:
            t = float(thr[i])
            left = xs < t
            gl = math.fsum(g_rows[left])
            hl = math.fsum(h_rows[left])
            gr = math.fsum(g_rows[~left])
            hr = math.fsum(h_rows[~left])
            if hl < min_h or hr < min_h:
                continue
            gain = _gain_formula(gl, hl, gr, hr, lam, gamma)
            if gain >= 0.0 and (best is None or gain > best[0]):
                best = (gain, f, t)
    if best is None:
        return None
    return best[1], best[2]


def _grow(
    X: np.ndarray, g: np.ndarray, h: np.ndarray, rows: np.ndarray, depth: int, cfg: TrainConfig
) -> TreeNode:
    g_sum = float(np.sum(g[rows]))
    h_sum = float(np.sum(h[rows]))
    if depth < cfg.max_depth and rows.size >= 2:
        found = _best_split(X, g, h, rows, cfg)
        if found is not None:
            f, thr = found
            mask = X[rows, f] < thr
            left = _grow(X, g, h, rows[mask], depth + 1, cfg)
            right = _grow(X, g, h, rows[~mask], depth + 1, cfg)
            cover = left.cover + right.cover
            value = (left.cover * left.node_value + right.cover * right.node_value) / cover
            return TreeNode(
                cover=cover,
                node_value=value,
                feature_index=f,
                threshold=thr,
                left=left,
                right=right,
            )
    den = h_sum + cfg.l2_weight
    return TreeNode(cover=h_sum, node_value=-g_sum / den if den > 0 else 0.0)


def grow_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, cfg: TrainConfig) -> TreeNode:
    """One boosting tree for fixed gradients/hessians; exposed for validation."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    return _grow(X, np.asarray(g, float), np.asarray(h, float), np.arange(X.shape[0]), 0, cfg)


def tree_output(node: TreeNode, row: Sequence[float]) -> float:
    while not node.is_leaf:
        assert node.left is not None and node.right is not None
        node = node.left if row[node.feature_index] < node.threshold else node.right
    return node.node_value


def _tree_outputs(node: TreeNode, X: np.ndarray, rows: np.ndarray, out: np.ndarray) -> None:
    if node.is_leaf:
        out[rows] = node.node_value
        return
    mask = X[rows, node.feature_index] < node.threshold
    _tree_outputs(node.left, X, rows[mask], out)
    _tree_outputs(node.right, X, rows[~mask], out)


def tree_outputs(node: TreeNode, X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0], dtype=np.float64)
    _tree_outputs(node, X, np.arange(X.shape[0]), out)
    return out


def _generic_schema(arity: int) -> FeatureSchema:
    return FeatureSchema(version=0, names=tuple(f"f{i}" for i in range(arity)))


def train(
    features: Sequence[Sequence[float]] | np.ndarray,
    labels: Sequence[int],
    config: TrainConfig = TrainConfig(),
    schema: FeatureSchema | None = None,
) -> TreeEnsemble:
    """Boost config.rounds trees on a row-major feature matrix.

    Deterministic for a fixed seed and input order: the same call produces a
    bitwise-identical ensemble.
    """
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyDataset("training requires a non-empty row-major matrix")
    y = np.asarray(labels, dtype=np.float64)
    if y.shape[0] != X.shape[0]:
        raise ArityMismatch(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if not np.isin(y, (0.0, 1.0)).all():
        raise DomainError("labels must be 0 or 1")
    if schema is None:
        schema = _generic_schema(X.shape[1])
    elif schema.arity != X.shape[1]:
        raise ArityMismatch(f"matrix arity {X.shape[1]} != schema arity {schema.arity}")
    if y.size and (y == y[0]).all():
        warnings.warn(
            "all labels identical; training converges toward a constant margin",
            DegenerateLabels,
            stacklevel=2,
        )

    margins = np.zeros(X.shape[0], dtype=np.float64)
    trees: list[TreeNode] = []
    for _ in range(config.rounds):
        p = _sigmoid_vec(margins)
        g = p - y
        h = p * (1.0 - p)
        root = _grow(X, g, h, np.arange(X.shape[0]), 0, config)
        trees.append(root)
        margins += config.learning_rate * tree_outputs(root, X)
    return TreeEnsemble(
        trees=tuple(trees),
        learning_rate=config.learning_rate,
        base_margin=0.0,
        feature_schema=schema,
        config=config,
    )


def _check_vector(model: TreeEnsemble, x: FeatureVector | Sequence[float]) -> Sequence[float]:
    if isinstance(x, FeatureVector):
        if x.schema_version != model.feature_schema.version:
            raise SchemaMismatch(
                f"vector schema v{x.schema_version} != model schema v{model.feature_schema.version}"
            )
        return x.values
    if len(x) != model.feature_schema.arity:
        raise ArityMismatch(f"vector arity {len(x)} != schema arity {model.feature_schema.arity}")
    return x


def predict_margin(model: TreeEnsemble, x: FeatureVector | Sequence[float]) -> float:
    row = _check_vector(model, x)
    margin = model.base_margin
    for t in model.trees:
        margin += model.learning_rate * tree_output(t, row)
    return margin


def predict_proba(model: TreeEnsemble, x: FeatureVector | Sequence[float]) -> float:
    """Anomaly probability, strictly inside (0, 1)."""
    return sigmoid(predict_margin(model, x))


def predict_proba_batch(model: TreeEnsemble, X: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.shape[1] != model.feature_schema.arity:
        raise ArityMismatch(f"matrix arity {X.shape[1]} != schema arity {model.feature_schema.arity}")
    margins = np.full(X.shape[0], model.base_margin, dtype=np.float64)
    for t in model.trees:
        margins += model.learning_rate * tree_outputs(t, X)
    return _sigmoid_vec(margins)


def attribute(model: TreeEnsemble, x: FeatureVector | Sequence[float]) -> AttributionRecord:
    """Path attribution: each split credits child node_value - node node_value
    (scaled by the learning rate) to its feature; sums telescope to the margin."""
    row = _check_vector(model, x)
    eta = model.learning_rate
    contributions = [0.0] * model.feature_schema.arity
    base = model.base_margin
    margin = model.base_margin
    for tree in model.trees:
        base += eta * tree.node_value
        node = tree
        while not node.is_leaf:
            child = node.left if row[node.feature_index] < node.threshold else node.right
            contributions[node.feature_index] += eta * (child.node_value - node.node_value)
            node = child
        margin += eta * node.node_value
    return AttributionRecord(base=base, contributions=tuple(contributions), margin=margin)


def classify(probability: float, threshold: float = 0.5) -> tuple[Label, RiskBand]:
    """Label (anomalous iff probability >= threshold) plus the risk band."""
    if not 0.0 < threshold < 1.0:
        raise DomainError(f"threshold must be in (0, 1), got {threshold}")
    label = Label.ANOMALOUS if probability >= threshold else Label.NORMAL
    return label, risk_band(probability)
