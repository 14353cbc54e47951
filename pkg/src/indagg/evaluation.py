"""Evaluation protocol: stratified split, balanced test subsets, accuracy
reports, forward-selection curves and the confirmation-indicator ablation."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .classifiers import ForestConfig, nb_predict_many, nb_train, rf_predict_many, rf_train
from .indicators import IndicatorMatrix, IndicatorSpec, featurize
from .seeds import SPLIT_STREAM, SUBSET_STREAM, SeedLike, as_key, substream
from .selection import RankedList
from .signalgen import SignalRecord

N_CLASSES = 4


@dataclass(frozen=True)
class SplitPlan:
    train_size: int = 1000
    test_size: int = 5000
    stratified: bool = True
    seed: SeedLike = 0


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer quotas proportional to weights, summing exactly to total."""
    exact = weights / weights.sum() * total
    quotas = np.floor(exact).astype(int)
    remainder = total - quotas.sum()
    # distribute leftovers by largest fractional part, ties to the lower index
    order = np.lexsort((np.arange(len(weights)), -(exact - quotas)))
    quotas[order[:remainder]] += 1
    return quotas


def stratified_split(labels, plan: SplitPlan) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint (train, test) index arrays preserving class proportions.

    Quotas come from largest-remainder rounding, so per-class counts are
    within one of exact proportionality. Indices are returned sorted.
    """
    labels = np.asarray(labels)
    n = labels.size
    if plan.train_size + plan.test_size > n:
        raise ValueError(
            f"dataset of size {n} cannot provide {plan.train_size}+{plan.test_size} split"
        )
    rng = substream(SPLIT_STREAM, plan.seed)
    if not plan.stratified:
        perm = rng.permutation(n)
        train = np.sort(perm[: plan.train_size])
        test = np.sort(perm[plan.train_size : plan.train_size + plan.test_size])
        return train, test
    classes = np.unique(labels)
    class_counts = np.array([(labels == c).sum() for c in classes], dtype=float)
    train_quota = _largest_remainder(class_counts, plan.train_size)
    test_quota = _largest_remainder(class_counts, plan.test_size)
    train_parts, test_parts = [], []
    for c, q_train, q_test in zip(classes, train_quota, test_quota):
        idx = np.flatnonzero(labels == c)
        perm = idx[rng.permutation(idx.size)]
        if q_train + q_test > idx.size:
            raise ValueError(f"class {c} has {idx.size} records, needs {q_train + q_test}")
        train_parts.append(perm[:q_train])
        test_parts.append(perm[q_train : q_train + q_test])
    return np.sort(np.concatenate(train_parts)), np.sort(np.concatenate(test_parts))


def balanced_subsets(
    test_labels, k: int = 10, size: int = 500, seed: SeedLike = 0
) -> list[np.ndarray]:
    """k index sets of the given size whose class mix matches the test set.

    Subsets are drawn independently of each other (a record may appear in
    several) but without replacement within a subset.
    """
    test_labels = np.asarray(test_labels)
    rng = substream(SUBSET_STREAM, seed)
    classes = np.unique(test_labels)
    class_counts = np.array([(test_labels == c).sum() for c in classes], dtype=float)
    quotas = _largest_remainder(class_counts, size)
    subsets = []
    for _ in range(k):
        parts = []
        for c, quota in zip(classes, quotas):
            idx = np.flatnonzero(test_labels == c)
            parts.append(rng.choice(idx, size=quota, replace=False))
        subsets.append(np.sort(np.concatenate(parts)))
    return subsets


def score(preds, labels, n_classes: int = N_CLASSES):
    """(accuracy, confusion matrix, per-class error); rows are true classes."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError("predictions and labels must have equal length")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    accuracy = float(np.trace(confusion)) / labels.size
    row_sums = confusion.sum(axis=1)
    diag = np.diag(confusion)
    per_class_error = np.where(row_sums > 0, 1.0 - diag / np.maximum(row_sums, 1), 0.0)
    return accuracy, confusion, per_class_error


@dataclass
class EvalReport:
    train_accuracy: float
    oob_accuracy: float | None
    subset_accuracies: np.ndarray
    mean: float
    std: float
    confusion: np.ndarray  # on the full test set
    per_class_error: np.ndarray


@dataclass
class EvalContext:
    """Everything one model evaluation needs: split matrices and subsets."""

    train: IndicatorMatrix
    test: IndicatorMatrix
    subsets: list[np.ndarray]
    nb_smoothing: float = 1.0
    rf: ForestConfig = field(default_factory=ForestConfig)


def make_context(
    matrix: IndicatorMatrix,
    split_plan: SplitPlan,
    subset_seed: SeedLike,
    n_subsets: int = 10,
    subset_size: int = 500,
    nb_smoothing: float = 1.0,
    rf: ForestConfig = ForestConfig(),
) -> EvalContext:
    train_idx, test_idx = stratified_split(matrix.labels, split_plan)
    train = matrix.select_rows(train_idx)
    test = matrix.select_rows(test_idx)
    subsets = balanced_subsets(test.labels, k=n_subsets, size=subset_size, seed=subset_seed)
    return EvalContext(train=train, test=test, subsets=subsets, nb_smoothing=nb_smoothing, rf=rf)


def _report(preds_train, preds_test, ctx: EvalContext, oob: float | None) -> EvalReport:
    train_acc = float((preds_train == ctx.train.labels).mean())
    _, confusion, per_class = score(preds_test, ctx.test.labels)
    subset_acc = np.array(
        [float((preds_test[s] == ctx.test.labels[s]).mean()) for s in ctx.subsets]
    )
    return EvalReport(
        train_accuracy=train_acc,
        oob_accuracy=oob,
        subset_accuracies=subset_acc,
        mean=float(subset_acc.mean()),
        std=float(subset_acc.std(ddof=1)) if subset_acc.size > 1 else 0.0,
        confusion=confusion,
        per_class_error=per_class,
    )


def evaluate_nb(ctx: EvalContext, columns: Sequence[int]) -> EvalReport:
    """Train Naive Bayes on the given columns and report all accuracies."""
    cols = sorted(columns)
    train = ctx.train.select_columns(cols)
    model = nb_train(train, smoothing=ctx.nb_smoothing)
    preds_train = nb_predict_many(model, train.bits)
    preds_test = nb_predict_many(model, ctx.test.bits[:, cols])
    return _report(preds_train, preds_test, ctx, oob=None)


def evaluate_rf(ctx: EvalContext, columns: Sequence[int], seed_extra: tuple[int, ...] = ()) -> EvalReport:
    """Train a forest on the given columns; the forest stream gets seed_extra.

    Columns are used as a set (ascending order), so two rankings selecting
    the same columns train the identical forest.
    """
    cols = sorted(columns)
    train = ctx.train.select_columns(cols)
    config = ForestConfig(
        n_trees=ctx.rf.n_trees,
        mtry=ctx.rf.mtry,
        min_leaf=ctx.rf.min_leaf,
        seed=(*as_key(ctx.rf.seed), *seed_extra),
    )
    model = rf_train(train, config)
    preds_train = rf_predict_many(model, train.bits)
    preds_test = rf_predict_many(model, ctx.test.bits[:, cols])
    return _report(preds_train, preds_test, ctx, oob=model.oob_accuracy)


@dataclass
class CurveRow:
    k: int
    nb_train: float
    nb_test_mean: float
    nb_test_std: float
    rf_train: float
    rf_oob: float
    rf_test_mean: float
    rf_test_std: float
    nb_class_error: np.ndarray
    rf_class_error: np.ndarray


def forward_selection_eval(
    ctx: EvalContext, ranked: RankedList, ks: Sequence[int]
) -> list[CurveRow]:
    """Accuracy curves over growing prefixes of the ranking.

    For each k the first k ranked columns (as a set) feed one NB and one RF
    training; the forest at size k uses the substream tagged k, so the run
    at k = p reproduces the all-indicator evaluation exactly.
    """
    if max(ks) > len(ranked.order):
        raise ValueError("ks exceed the length of the ranking")
    rows = []
    for k in ks:
        cols = ranked.order[:k]
        nb_rep = evaluate_nb(ctx, cols)
        rf_rep = evaluate_rf(ctx, cols, seed_extra=(k,))
        rows.append(
            CurveRow(
                k=k,
                nb_train=nb_rep.train_accuracy,
                nb_test_mean=nb_rep.mean,
                nb_test_std=nb_rep.std,
                rf_train=rf_rep.train_accuracy,
                rf_oob=rf_rep.oob_accuracy,
                rf_test_mean=rf_rep.mean,
                rf_test_std=rf_rep.std,
                nb_class_error=nb_rep.per_class_error,
                rf_class_error=rf_rep.per_class_error,
            )
        )
    return rows


def pick_optimal_k(rows: Sequence[CurveRow], k_max: int = 20) -> int:
    """k in 1..k_max maximizing NB training accuracy; ties pick the smallest k.

    Training-set selection is enough here because NB training and test
    accuracies track each other closely.
    """
    by_k = {row.k: row for row in rows}
    missing = [k for k in range(1, k_max + 1) if k not in by_k]
    if missing:
        raise ValueError(f"curve must cover k = 1..{k_max}; missing {missing}")
    best_k, best_acc = 1, -1.0
    for k in range(1, k_max + 1):
        acc = by_k[k].nb_train
        if acc > best_acc:
            best_k, best_acc = k, acc
    return best_k


def ablation_confirmation(
    records: Sequence[SignalRecord],
    full_specs: Sequence[IndicatorSpec],
    any_specs: Sequence[IndicatorSpec],
    split_plan: SplitPlan,
    subset_seed: SeedLike,
    rf: ForestConfig,
    n_subsets: int = 10,
    subset_size: int = 500,
    jobs: int = 1,
) -> tuple[EvalReport, EvalReport, EvalContext, EvalContext]:
    """Evaluate the same signals with and without confirmation indicators.

    The full grid is featurized once; the reduced matrix reuses its columns
    whenever the reduced grid is a subset, so both runs share the identical
    signals, split and subsets.
    """
    matrix_full = featurize(records, full_specs, jobs=jobs)
    col_by_id = {spec_id: c for c, spec_id in enumerate(matrix_full.ids)}
    reduced_ids = [s.id for s in any_specs]
    if all(rid in col_by_id for rid in reduced_ids):
        matrix_any = matrix_full.select_columns([col_by_id[rid] for rid in reduced_ids])
    else:
        matrix_any = featurize(records, any_specs, jobs=jobs)
    ctx_full = make_context(matrix_full, split_plan, subset_seed, n_subsets, subset_size, rf=rf)
    ctx_any = make_context(matrix_any, split_plan, subset_seed, n_subsets, subset_size, rf=rf)
    rep_full = evaluate_rf(ctx_full, range(len(full_specs)), seed_extra=(len(full_specs),))
    rep_any = evaluate_rf(ctx_any, range(len(any_specs)), seed_extra=(len(any_specs),))
    return rep_full, rep_any, ctx_full, ctx_any


# ---------------------------------------------------------------------------
# serialization


def report_to_dict(report: EvalReport) -> dict:
    return {
        "train_accuracy": report.train_accuracy,
        "oob_accuracy": report.oob_accuracy,
        "subset_accuracies": report.subset_accuracies.tolist(),
        "mean": report.mean,
        "std": report.std,
        "confusion": report.confusion.tolist(),
        "per_class_error": report.per_class_error.tolist(),
    }


def write_report(report: EvalReport, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(report_to_dict(report), fh, indent=2)
        fh.write("\n")


CURVE_COLUMNS = (
    ["k", "nb_train", "nb_test_mean", "nb_test_std", "rf_train", "rf_oob", "rf_test_mean", "rf_test_std"]
    + [f"nb_err_{c}" for c in range(N_CLASSES)]
    + [f"rf_err_{c}" for c in range(N_CLASSES)]
)


def write_curves(rows: Sequence[CurveRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_COLUMNS)
        for r in rows:
            writer.writerow(
                [r.k]
                + [repr(v) for v in (r.nb_train, r.nb_test_mean, r.nb_test_std,
                                     r.rf_train, r.rf_oob, r.rf_test_mean, r.rf_test_std)]
                + [repr(float(v)) for v in r.nb_class_error]
                + [repr(float(v)) for v in r.rf_class_error]
            )


def read_curves(path: str | Path) -> list[CurveRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CURVE_COLUMNS:
            raise ValueError("unexpected curves CSV header")
        rows = []
        for rec in reader:
            vals = [float(v) for v in rec[1:]]
            rows.append(
                CurveRow(
                    k=int(rec[0]),
                    nb_train=vals[0],
                    nb_test_mean=vals[1],
                    nb_test_std=vals[2],
                    rf_train=vals[3],
                    rf_oob=vals[4],
                    rf_test_mean=vals[5],
                    rf_test_std=vals[6],
                    nb_class_error=np.array(vals[7:11]),
                    rf_class_error=np.array(vals[11:15]),
                )
            )
    return rows
