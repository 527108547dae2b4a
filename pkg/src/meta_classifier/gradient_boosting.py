"""
Gradient-Boosted Meta-Classifier
================================
Author: Perception Fusion Team

Stochastic gradient boosting of depth-limited regression trees under logistic loss.
The fused detector uses it to decide, from the nine fusion metrics of a candidate
box, whether the candidate is a true or a false positive.

Fitting:
- Start from the log-odds of the label mean
- Each round draws a seeded row subsample, fits a CART tree to the residuals
  t - p by squared-error reduction and sets every leaf to one Newton step
  sum(r) / sum(p(1-p)), clamped to +-4 log-odds
- Predictions are sigmoid(base_score + shrinkage * sum of leaf values)

Split search sorts each feature together with residual and hessian, and sums with
exact summation, so the tree never depends on the order of the training rows.

Dependencies: numpy, pydantic
"""

# Standard library imports
import logging
import math
from typing import List, Optional, Sequence, Union

# Third-party imports
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

# Local imports
from ..shared.config import BoostConfig
from ..shared.exceptions import DomainError, ShapeError
from ..shared.models import FEATURE_NAMES, FeatureVector
from ..shared.utils import seed_stream

logger = logging.getLogger(__name__)

LEAF_CLAMP = 4.0
MIN_GAIN = 1e-12
PROB_CLIP = 1e-15


# ========== MODEL TYPES ==========

class TreeNode(BaseModel):
    """
    A split ``{feature_index, threshold, left, right}`` or a leaf ``{value}``.

    Rows with ``x[feature_index] <= threshold`` go left.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    feature_index: Optional[int] = Field(None, ge=0)
    threshold: Optional[float] = None
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    value: Optional[float] = None

    @model_validator(mode="after")
    def _check_kind(self) -> "TreeNode":
        split_parts = (self.feature_index, self.threshold, self.left, self.right)
        if self.value is not None:
            if any(part is not None for part in split_parts):
                raise ValueError("a leaf carries only a value")
            if not math.isfinite(self.value):
                raise ValueError("leaf value must be finite")
        elif any(part is None for part in split_parts):
            raise ValueError("a split needs feature_index, threshold, left and right")
        elif not math.isfinite(self.threshold):  # type: ignore[arg-type]
            raise ValueError("split threshold must be finite")
        return self

    @classmethod
    def leaf(cls, value: float) -> "TreeNode":
        return cls(value=value)

    @property
    def is_leaf(self) -> bool:
        return self.value is not None

    @property
    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth, self.right.depth)  # type: ignore[union-attr]

    def max_feature_index(self) -> int:
        if self.is_leaf:
            return -1
        return max(self.feature_index, self.left.max_feature_index(), self.right.max_feature_index())  # type: ignore

    def evaluate(self, x: Sequence[float]) -> float:
        node = self
        while not node.is_leaf:
            node = node.left if x[node.feature_index] <= node.threshold else node.right  # type: ignore
        return node.value  # type: ignore[return-value]

    def evaluate_matrix(self, X: np.ndarray) -> np.ndarray:
        if self.is_leaf:
            return np.full(len(X), self.value, dtype=np.float64)
        out = np.empty(len(X), dtype=np.float64)
        go_left = X[:, self.feature_index] <= self.threshold
        out[go_left] = self.left.evaluate_matrix(X[go_left])  # type: ignore[union-attr]
        out[~go_left] = self.right.evaluate_matrix(X[~go_left])  # type: ignore[union-attr]
        return out

    def to_preorder(self) -> List[dict]:
        """Pre-order node list: splits as {feature_index, threshold}, leaves as {leaf_value}."""
        if self.is_leaf:
            return [{"leaf_value": self.value}]
        return (
            [{"feature_index": self.feature_index, "threshold": self.threshold}]
            + self.left.to_preorder()  # type: ignore[union-attr]
            + self.right.to_preorder()  # type: ignore[union-attr]
        )

    @classmethod
    def from_preorder(cls, nodes: Sequence[dict]) -> "TreeNode":
        position = 0

        def build() -> "TreeNode":
            nonlocal position
            if position >= len(nodes):
                raise ValueError("pre-order node list ends inside a split")
            entry = nodes[position]
            position += 1
            if "leaf_value" in entry:
                return cls.leaf(float(entry["leaf_value"]))
            left = build()
            right = build()
            return cls(
                feature_index=int(entry["feature_index"]),
                threshold=float(entry["threshold"]),
                left=left,
                right=right,
            )

        root = build()
        if position != len(nodes):
            raise ValueError("pre-order node list has trailing nodes")
        return root


TreeNode.model_rebuild()


class Ensemble(BaseModel):
    """
    Fitted boosted-tree classifier.

    Attributes:
        base_score (float): Initial log-odds
        trees (List[TreeNode]): Tree roots in boosting order
        shrinkage (float): Learning rate applied to every tree output
        n_features (int): Expected feature vector length
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    base_score: float
    trees: List[TreeNode] = Field(default_factory=list)
    shrinkage: float = Field(gt=0.0, le=1.0)
    n_features: int = Field(len(FEATURE_NAMES), ge=1)

    @model_validator(mode="after")
    def _check_trees(self) -> "Ensemble":
        if not math.isfinite(self.base_score):
            raise ValueError("base_score must be finite")
        for tree in self.trees:
            if tree.max_feature_index() >= self.n_features:
                raise ValueError("tree splits on a feature beyond n_features")
        return self

    def to_document(self) -> dict:
        return {
            "base_score": self.base_score,
            "shrinkage": self.shrinkage,
            "n_features": self.n_features,
            "trees": [tree.to_preorder() for tree in self.trees],
        }

    @classmethod
    def from_document(cls, document: dict) -> "Ensemble":
        return cls(
            base_score=float(document["base_score"]),
            shrinkage=float(document["shrinkage"]),
            n_features=int(document["n_features"]),
            trees=[TreeNode.from_preorder(nodes) for nodes in document["trees"]],
        )


# ========== PREDICTION ==========

def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.clip(0.5 * (1.0 + np.tanh(0.5 * z)), PROB_CLIP, 1.0 - PROB_CLIP)


def _as_vector(m: Union[FeatureVector, Sequence[float], np.ndarray], n_features: int) -> np.ndarray:
    x = np.asarray(m.as_tuple() if isinstance(m, FeatureVector) else m, dtype=np.float64)
    if x.shape != (n_features,):
        raise ShapeError(f"feature vector: expected length {n_features}, got shape {x.shape}")
    return x


def raw_scores(e: Ensemble, X: np.ndarray) -> np.ndarray:
    """Log-odds for a feature matrix."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != e.n_features:
        raise ShapeError(f"feature matrix: expected (*, {e.n_features}), got {X.shape}")
    total = np.zeros(len(X))
    for tree in e.trees:
        total += tree.evaluate_matrix(X)
    return e.base_score + e.shrinkage * total


def predict_proba(e: Ensemble, m: Union[FeatureVector, Sequence[float], np.ndarray]) -> float:
    """TP probability of one candidate; bit-identical to ``predict_proba_matrix`` rows."""
    x = _as_vector(m, e.n_features)
    return float(predict_proba_matrix(e, x[None, :])[0])


def predict_proba_matrix(e: Ensemble, X: np.ndarray) -> np.ndarray:
    return _sigmoid(raw_scores(e, X))


def log_loss(labels: np.ndarray, probs: np.ndarray) -> float:
    """Mean logistic loss."""
    t = np.asarray(labels, dtype=np.float64)
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_CLIP, 1.0 - PROB_CLIP)
    return float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))))


# ========== TREE FITTING ==========

def _leaf_value(residuals: np.ndarray, hessians: np.ndarray) -> float:
    denominator = math.fsum(hessians)
    if denominator <= 0.0:
        return 0.0
    value = math.fsum(residuals) / denominator
    return max(-LEAF_CLAMP, min(LEAF_CLAMP, value))


def _best_split(
    X: np.ndarray, r: np.ndarray, h: np.ndarray, rows: np.ndarray, min_leaf: int
) -> Optional[tuple]:
    """(gain, feature, threshold) of the best split of ``rows``, or None."""
    n = len(rows)
    rr = r[rows]
    hh = h[rows]
    centered_base = math.fsum(rr) / n
    best: Optional[tuple] = None
    for j in range(X.shape[1]):
        xs_all = X[rows, j]
        order = np.lexsort((hh, rr, xs_all))
        xs = xs_all[order]
        rc = rr[order] - centered_base
        left_sum = np.cumsum(rc)[:-1]
        total = math.fsum(rc)
        n_left = np.arange(1, n, dtype=np.float64)
        n_right = n - n_left
        gains = left_sum ** 2 / n_left + (total - left_sum) ** 2 / n_right - total ** 2 / n
        valid = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        gains = np.where(valid, gains, -np.inf)
        i = int(np.argmax(gains))
        if best is None or gains[i] > best[0]:
            threshold = 0.5 * (xs[i] + xs[i + 1])
            if not xs[i] <= threshold < xs[i + 1]:
                threshold = xs[i]
            best = (float(gains[i]), j, float(threshold))
    return best


def fit_tree(
    features: np.ndarray,
    residuals: np.ndarray,
    hessians: np.ndarray,
    cfg: BoostConfig,
    active_rows: np.ndarray,
) -> TreeNode:
    """
    Grow one regression tree on ``active_rows``.

    Splits maximize the squared-error reduction of the residuals over all features
    and midpoints between consecutive distinct values; ties go to the lowest
    feature, then the lowest threshold. Leaves hold the clamped Newton value.
    """
    X = np.asarray(features, dtype=np.float64)
    r = np.asarray(residuals, dtype=np.float64)
    h = np.asarray(hessians, dtype=np.float64)
    rows = np.sort(np.asarray(active_rows, dtype=np.int64))
    if len(rows) == 0:
        raise DomainError("fit_tree needs at least one active row")

    def grow(node_rows: np.ndarray, depth: int) -> TreeNode:
        leaf = TreeNode.leaf(_leaf_value(r[node_rows], h[node_rows]))
        if depth >= cfg.max_depth or len(node_rows) < 2 * cfg.min_leaf:
            return leaf
        split = _best_split(X, r, h, node_rows, cfg.min_leaf)
        if split is None or split[0] <= MIN_GAIN:
            return leaf
        _, j, threshold = split
        go_left = X[node_rows, j] <= threshold
        return TreeNode(
            feature_index=j,
            threshold=threshold,
            left=grow(node_rows[go_left], depth + 1),
            right=grow(node_rows[~go_left], depth + 1),
        )

    return grow(rows, 0)


# ========== BOOSTING ==========

class BoostedTreeClassifier:
    """
    Fits an ``Ensemble`` and keeps the per-round training loss.

    Usage:
        classifier = BoostedTreeClassifier(BoostConfig(n_rounds=50))
        ensemble = classifier.fit(X, labels)
        classifier.loss_history  # training log-loss after every round
    """

    def __init__(self, cfg: BoostConfig):
        self.cfg = cfg
        self.loss_history: List[float] = []

    def fit(self, features: np.ndarray, labels: np.ndarray) -> Ensemble:
        """
        Raises:
            ShapeError: Mismatched or non-2D inputs
            DomainError: Fewer than two rows, labels outside {0, 1} or a single class
        """
        X = np.asarray(features, dtype=np.float64)
        t = np.asarray(labels, dtype=np.float64)
        if X.ndim != 2 or t.shape != (len(X),):
            raise ShapeError(f"features {X.shape} and labels {t.shape} do not align")
        if len(X) < 2:
            raise DomainError("boosting needs at least two training rows")
        if not np.all((t == 0.0) | (t == 1.0)):
            raise DomainError("labels must be 0 or 1")
        mean = math.fsum(t) / len(t)
        if mean in (0.0, 1.0):
            raise DomainError("training labels contain a single class")

        cfg = self.cfg
        n = len(X)
        base = math.log(mean / (1.0 - mean))
        sample_size = max(1, int(round(cfg.subsample * n)))
        total = np.zeros(n)
        trees: List[TreeNode] = []
        self.loss_history = []
        logger.info(f"Boosting {cfg.n_rounds} rounds on {n} rows ({int(mean * n)} positive)")

        for round_index in range(cfg.n_rounds):
            p = _sigmoid(base + cfg.shrinkage * total)
            residuals = t - p
            hessians = p * (1.0 - p)
            if sample_size >= n:
                rows = np.arange(n)
            else:
                rng = seed_stream(cfg.seed, "boost", "subsample", round_index)
                rows = np.sort(rng.choice(n, size=sample_size, replace=False))
            tree = fit_tree(X, residuals, hessians, cfg, rows)
            trees.append(tree)
            total += tree.evaluate_matrix(X)
            round_loss = log_loss(t, _sigmoid(base + cfg.shrinkage * total))
            self.loss_history.append(round_loss)
            logger.debug(f"round {round_index + 1}: depth {tree.depth}, training log-loss {round_loss:.6f}")

        return Ensemble(base_score=base, trees=trees, shrinkage=cfg.shrinkage, n_features=X.shape[1])


def fit(features: np.ndarray, labels: np.ndarray, cfg: BoostConfig) -> Ensemble:
    """Fit a boosted ensemble; see ``BoostedTreeClassifier.fit``."""
    return BoostedTreeClassifier(cfg).fit(features, labels)
