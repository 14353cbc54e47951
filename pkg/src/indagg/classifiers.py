"""Bernoulli Naive Bayes and Random Forest over binary indicator vectors.

Both classifiers expose the interpretability outputs shown to operators:
the per-class conditional probability of each indicator firing (NB) and
out-of-bag accuracy plus Gini importances (RF).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .indicators import IndicatorMatrix
from .seeds import FOREST_STREAM, SeedLike, as_key

CLASS_NAMES = ("no_change", "variance", "mean", "trend")


@dataclass
class Prediction:
    label: int
    scores: np.ndarray  # per-class log-posteriors (NB) or vote counts (RF)


def _check_labels(labels: np.ndarray) -> int:
    n_classes = int(labels.max()) + 1
    present = np.bincount(labels, minlength=n_classes)
    if (present == 0).any():
        missing = [c for c in range(n_classes) if present[c] == 0]
        raise ValueError(f"missing class(es) in training labels: {missing}")
    return n_classes


def _onehot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


# ---------------------------------------------------------------------------
# Naive Bayes


@dataclass
class NaiveBayesModel:
    class_priors: np.ndarray  # (C,)
    cond_p: np.ndarray  # (C, p): P(x_j = 1 | class)
    smoothing: float
    feature_ids: list[str] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return self.cond_p.shape[1]


def nb_train(matrix: IndicatorMatrix, smoothing: float = 1.0) -> NaiveBayesModel:
    """Fit priors and smoothed per-class firing probabilities.

    cond_p[c, j] = (count(x_j = 1, c) + eps) / (count(c) + 2 eps), which keeps
    every probability strictly inside (0, 1).
    """
    if smoothing <= 0:
        raise ValueError("smoothing must be > 0")
    labels = matrix.labels
    n_classes = _check_labels(labels)
    onehot = _onehot(labels, n_classes)
    class_counts = onehot.sum(axis=0)  # (C,)
    ones = onehot.T @ matrix.bits.astype(np.float64)  # (C, p)
    cond_p = (ones + smoothing) / (class_counts[:, None] + 2.0 * smoothing)
    priors = class_counts / labels.size
    return NaiveBayesModel(priors, cond_p, smoothing, list(matrix.ids))


def _nb_log_posteriors(model: NaiveBayesModel, bits: np.ndarray) -> np.ndarray:
    """(n, C) log-posteriors (up to the shared evidence constant)."""
    log_p = np.log(model.cond_p)
    log_q = np.log1p(-model.cond_p)
    weights = log_p - log_q  # (C, p)
    bias = np.log(model.class_priors) + log_q.sum(axis=1)  # (C,)
    return bits.astype(np.float64) @ weights.T + bias


def nb_predict_many(model: NaiveBayesModel, bits: np.ndarray) -> np.ndarray:
    """Predicted class codes for a (n, p) bit matrix; ties pick the lowest code."""
    if bits.shape[1] != model.n_features:
        raise ValueError(
            f"feature dimension mismatch: model has {model.n_features}, input has {bits.shape[1]}"
        )
    return np.argmax(_nb_log_posteriors(model, bits), axis=1)


def nb_predict(model: NaiveBayesModel, bits) -> Prediction:
    """Predict one bit vector; all arithmetic stays in the log domain."""
    bits = np.asarray(bits, dtype=np.uint8).reshape(1, -1)
    if bits.shape[1] != model.n_features:
        raise ValueError(
            f"feature dimension mismatch: model has {model.n_features}, input has {bits.shape[1]}"
        )
    scores = _nb_log_posteriors(model, bits)[0]
    return Prediction(label=int(np.argmax(scores)), scores=scores)


def nb_explain(model: NaiveBayesModel, selected: Sequence[int]) -> list[tuple[str, np.ndarray]]:
    """Operator-facing table: (indicator id, per-class firing probability)."""
    for j in selected:
        if not 0 <= j < model.n_features:
            raise ValueError(f"feature index {j} out of range")
    return [(model.feature_ids[j], model.cond_p[:, j].copy()) for j in selected]


def format_explain_table(rows: Sequence[tuple[str, np.ndarray]]) -> str:
    """Render the conditional-probability table with 3 significant digits."""
    n_classes = len(rows[0][1]) if rows else len(CLASS_NAMES)
    names = CLASS_NAMES[:n_classes] if n_classes <= len(CLASS_NAMES) else [
        f"class{c}" for c in range(n_classes)
    ]
    lines = ["indicator," + ",".join(names)]
    for rid, probs in rows:
        lines.append(rid + "," + ",".join(format(p, ".3g") for p in probs))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Random Forest


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    mtry: int | None = None  # default floor(sqrt(p))
    min_leaf: int = 1
    seed: SeedLike = 0

    def resolve_mtry(self, p: int) -> int:
        m = self.mtry if self.mtry is not None else max(1, int(math.isqrt(p)))
        if not 1 <= m <= p:
            raise ValueError(f"mtry must be in [1, {p}], got {m}")
        return m


@dataclass
class Tree:
    """Flat array representation; feature == -1 marks a leaf."""

    feature: np.ndarray  # (nodes,) int32
    left: np.ndarray  # child for bit 0
    right: np.ndarray  # child for bit 1
    counts: np.ndarray  # (nodes, C) class counts from the bootstrap sample


@dataclass
class ForestModel:
    trees: list[Tree]
    oob_accuracy: float
    importances: np.ndarray  # (p,) mean decrease in Gini
    config: ForestConfig
    n_classes: int
    n_features: int
    feature_ids: list[str] = field(default_factory=list)


def _gini(counts: np.ndarray, total: float) -> float:
    return 1.0 - float((counts * counts).sum()) / (total * total)


def _grow_tree(
    bits: np.ndarray,
    labels: np.ndarray,
    rows: np.ndarray,
    rng: np.random.Generator,
    mtry: int,
    min_leaf: int,
    n_classes: int,
    importance_out: np.ndarray,
) -> Tree:
    n_total, p = bits.shape
    feature: list[int] = []
    left: list[int] = []
    right: list[int] = []
    counts: list[np.ndarray] = []
    # stack of (node_id, row index array); children allocated before descent
    stack: list[tuple[int, np.ndarray]] = []

    def new_node(idx_rows: np.ndarray) -> int:
        node_id = len(feature)
        feature.append(-1)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(labels[idx_rows], minlength=n_classes))
        return node_id

    root = new_node(rows)
    stack.append((root, rows))
    while stack:
        node_id, idx_rows = stack.pop()
        node_counts = counts[node_id]
        n_node = idx_rows.size
        if n_node < min_leaf or (node_counts > 0).sum() <= 1:
            continue  # leaf: too small or pure
        cand = np.sort(rng.choice(p, size=mtry, replace=False))
        sub = bits[idx_rows[:, None], cand]  # (n_node, mtry)
        # one fused bincount: cell = candidate*2C + bit*C + label
        codes = (np.arange(mtry) * (2 * n_classes))[None, :] + sub * n_classes + labels[idx_rows][:, None]
        cells = np.bincount(codes.ravel(), minlength=mtry * 2 * n_classes).reshape(
            mtry, 2, n_classes
        )
        ones = cells[:, 1, :]
        n1 = ones.sum(axis=1).astype(float)
        n0 = n_node - n1
        with np.errstate(divide="ignore", invalid="ignore"):
            sq1 = (ones * ones).sum(axis=1) / n1
            sq0 = (cells[:, 0, :] ** 2).sum(axis=1) / n0
        parent_sq = float((node_counts * node_counts).sum()) / n_node
        # decrease in weighted Gini, times n_node (positive iff the split helps)
        gain = np.where((n1 > 0) & (n0 > 0), sq0 + sq1 - parent_sq, -np.inf)
        best = int(np.argmax(gain))
        if not gain[best] > 0.0:
            continue  # no split reduces Gini
        f = int(cand[best])
        mask = bits[idx_rows, f] == 1
        rows1 = idx_rows[mask]
        rows0 = idx_rows[~mask]
        importance_out[f] += gain[best] / n_total
        feature[node_id] = f
        left_id = new_node(rows0)
        right_id = new_node(rows1)
        left[node_id] = left_id
        right[node_id] = right_id
        stack.append((left_id, rows0))
        stack.append((right_id, rows1))

    return Tree(
        feature=np.array(feature, dtype=np.int32),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        counts=np.vstack(counts).astype(np.int64),
    )


def _tree_leaf_votes(tree: Tree, bits: np.ndarray) -> np.ndarray:
    """Per-row majority class of the reached leaf (ties pick the lowest code)."""
    cur = np.zeros(bits.shape[0], dtype=np.int32)
    active = np.flatnonzero(tree.feature[cur] >= 0)
    while active.size:
        f = tree.feature[cur[active]]
        bit = bits[active, f]
        nxt = np.where(bit == 1, tree.right[cur[active]], tree.left[cur[active]])
        cur[active] = nxt
        active = active[tree.feature[nxt] >= 0]
    return np.argmax(tree.counts[cur], axis=1)


def rf_train(matrix: IndicatorMatrix, config: ForestConfig = ForestConfig()) -> ForestModel:
    """Grow a forest of fully-developed trees on bootstrap samples.

    Tree t draws from the substream (FOREST_STREAM, seed..., t), so training
    is bit-reproducible regardless of evaluation order. Out-of-bag accuracy
    is the majority vote over the trees that did not see each row; rows that
    are in-bag everywhere are left out of the estimate.
    """
    if config.n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if config.min_leaf < 1:
        raise ValueError("min_leaf must be >= 1")
    bits = matrix.bits
    labels = matrix.labels
    n, p = bits.shape
    n_classes = _check_labels(labels)
    mtry = config.resolve_mtry(p)
    seed_key = as_key(config.seed)

    importances = np.zeros(p)
    oob_votes = np.zeros((n, n_classes), dtype=np.int64)
    trees = []
    for t in range(config.n_trees):
        rng = np.random.default_rng((FOREST_STREAM, *seed_key, t))
        sample = rng.integers(0, n, size=n)
        tree = _grow_tree(bits, labels, sample, rng, mtry, config.min_leaf, n_classes, importances)
        trees.append(tree)
        in_bag = np.zeros(n, dtype=bool)
        in_bag[sample] = True
        oob_rows = np.flatnonzero(~in_bag)
        if oob_rows.size:
            votes = _tree_leaf_votes(tree, bits[oob_rows])
            oob_votes[oob_rows, votes] += 1
    importances /= config.n_trees

    voted = oob_votes.sum(axis=1) > 0
    oob_pred = np.argmax(oob_votes[voted], axis=1)
    oob_accuracy = float((oob_pred == labels[voted]).mean()) if voted.any() else float("nan")
    return ForestModel(
        trees=trees,
        oob_accuracy=oob_accuracy,
        importances=importances,
        config=config,
        n_classes=n_classes,
        n_features=p,
        feature_ids=list(matrix.ids),
    )


def rf_predict_many(model: ForestModel, bits: np.ndarray) -> np.ndarray:
    """Majority vote over trees for a (n, p) bit matrix; ties pick the lowest code."""
    if bits.shape[1] != model.n_features:
        raise ValueError(
            f"feature dimension mismatch: model has {model.n_features}, input has {bits.shape[1]}"
        )
    votes = np.zeros((bits.shape[0], model.n_classes), dtype=np.int64)
    rows = np.arange(bits.shape[0])
    for tree in model.trees:
        votes[rows, _tree_leaf_votes(tree, bits)] += 1
    return np.argmax(votes, axis=1)


def rf_predict(model: ForestModel, bits) -> Prediction:
    bits = np.asarray(bits, dtype=np.uint8).reshape(1, -1)
    if bits.shape[1] != model.n_features:
        raise ValueError(
            f"feature dimension mismatch: model has {model.n_features}, input has {bits.shape[1]}"
        )
    votes = np.zeros(model.n_classes, dtype=np.int64)
    for tree in model.trees:
        votes[_tree_leaf_votes(tree, bits)[0]] += 1
    return Prediction(label=int(np.argmax(votes)), scores=votes.astype(float))


def rf_importance(model: ForestModel) -> np.ndarray:
    """Mean decrease in Gini per feature; zero for never-used features."""
    return model.importances.copy()


# ---------------------------------------------------------------------------
# model serialization


def nb_to_dict(model: NaiveBayesModel) -> dict:
    return {
        "type": "naive_bayes",
        "class_priors": model.class_priors.tolist(),
        "cond_p": model.cond_p.tolist(),
        "smoothing": model.smoothing,
        "feature_ids": model.feature_ids,
    }


def nb_from_dict(obj: dict) -> NaiveBayesModel:
    return NaiveBayesModel(
        class_priors=np.asarray(obj["class_priors"], dtype=float),
        cond_p=np.asarray(obj["cond_p"], dtype=float),
        smoothing=float(obj["smoothing"]),
        feature_ids=list(obj["feature_ids"]),
    )


def _tree_to_dict(tree: Tree, node: int = 0) -> dict:
    if tree.feature[node] < 0:
        return {"leaf_counts": tree.counts[node].tolist()}
    return {
        "feature": int(tree.feature[node]),
        "left": _tree_to_dict(tree, int(tree.left[node])),
        "right": _tree_to_dict(tree, int(tree.right[node])),
    }


def _tree_from_dict(obj: dict, n_classes: int) -> Tree:
    feature: list[int] = []
    left: list[int] = []
    right: list[int] = []
    counts: list[list[int]] = []

    def build(node_obj: dict) -> int:
        node_id = len(feature)
        feature.append(-1)
        left.append(-1)
        right.append(-1)
        counts.append([0] * n_classes)
        if "leaf_counts" in node_obj:
            counts[node_id] = list(node_obj["leaf_counts"])
        else:
            feature[node_id] = int(node_obj["feature"])
            left[node_id] = build(node_obj["left"])
            right[node_id] = build(node_obj["right"])
        return node_id

    build(obj)
    return Tree(
        feature=np.array(feature, dtype=np.int32),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        counts=np.array(counts, dtype=np.int64),
    )


def rf_to_dict(model: ForestModel) -> dict:
    return {
        "type": "random_forest",
        "config": {
            "n_trees": model.config.n_trees,
            "mtry": model.config.mtry,
            "min_leaf": model.config.min_leaf,
            "seed": list(as_key(model.config.seed)),
        },
        "n_classes": model.n_classes,
        "n_features": model.n_features,
        "oob_accuracy": model.oob_accuracy,
        "importances": model.importances.tolist(),
        "feature_ids": model.feature_ids,
        "trees": [_tree_to_dict(t) for t in model.trees],
    }


def rf_from_dict(obj: dict) -> ForestModel:
    cfg = obj["config"]
    config = ForestConfig(
        n_trees=int(cfg["n_trees"]),
        mtry=cfg["mtry"],
        min_leaf=int(cfg["min_leaf"]),
        seed=tuple(cfg["seed"]),
    )
    n_classes = int(obj["n_classes"])
    return ForestModel(
        trees=[_tree_from_dict(t, n_classes) for t in obj["trees"]],
        oob_accuracy=float(obj["oob_accuracy"]),
        importances=np.asarray(obj["importances"], dtype=float),
        config=config,
        n_classes=n_classes,
        n_features=int(obj["n_features"]),
        feature_ids=list(obj["feature_ids"]),
    )


def write_model(model, path: str | Path) -> None:
    obj = nb_to_dict(model) if isinstance(model, NaiveBayesModel) else rf_to_dict(model)
    with open(path, "w") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def read_model(path: str | Path):
    with open(path) as fh:
        obj = json.load(fh)
    if obj.get("type") == "naive_bayes":
        return nb_from_dict(obj)
    if obj.get("type") == "random_forest":
        return rf_from_dict(obj)
    raise ValueError(f"unknown model type: {obj.get('type')!r}")
