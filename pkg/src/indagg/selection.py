"""Mutual information on discrete columns and the greedy mRMR ranking."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .indicators import IndicatorMatrix

_LOG2 = np.log(2.0)


@dataclass
class RankedList:
    """mRMR ordering of columns with the score each pick had when selected."""

    order: list[int]
    scores: list[float]


def mutual_information(x, y) -> float:
    """Plug-in mutual information between two discrete columns, in bits."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("columns must be 1-d and of equal length")
    if x.size == 0:
        raise ValueError("columns must be non-empty")
    _, xi = np.unique(x, return_inverse=True)
    _, yi = np.unique(y, return_inverse=True)
    kx = int(xi.max()) + 1
    ky = int(yi.max()) + 1
    counts = np.bincount(xi * ky + yi, minlength=kx * ky).reshape(kx, ky)
    return _mi_from_counts(counts)


def _mi_from_counts(counts: np.ndarray) -> float:
    n = counts.sum()
    pxy = counts / n
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = counts > 0
    mi = (pxy[nz] * np.log2(pxy[nz] / (px * py)[nz])).sum()
    return float(max(mi, 0.0))


def _relevance(bits_f: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """MI(column; labels) for every column of a 0/1 matrix, in bits."""
    n, p = bits_f.shape
    n_classes = int(labels.max()) + 1
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), labels] = 1.0
    class_tot = onehot.sum(axis=0)  # (C,)
    ones_c = bits_f.T @ onehot  # (p, C) count of x=1 per class
    zeros_c = class_tot[None, :] - ones_c
    cells = np.stack([zeros_c, ones_c], axis=1)  # (p, 2, C)
    n1 = bits_f.sum(axis=0)
    marg_x = np.stack([n - n1, n1], axis=1)  # (p, 2)
    return _mi_cells(cells, marg_x, class_tot[None, :].repeat(p, axis=0), n)


def _mi_cells(cells: np.ndarray, marg_rows: np.ndarray, marg_cols: np.ndarray, n: int) -> np.ndarray:
    """MI from joint cell counts (p, R, C) and marginal counts; all exact integers."""
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.log(cells * n) - np.log(marg_rows[:, :, None]) - np.log(marg_cols[:, None, :])
        terms = np.where(cells > 0, cells * logs, 0.0)
    mi = terms.sum(axis=(1, 2)) / (n * _LOG2)
    return np.maximum(mi, 0.0)


def _pair_mi(bits_f: np.ndarray, col: np.ndarray) -> np.ndarray:
    """MI(every column; one binary column), in bits."""
    n, p = bits_f.shape
    n11 = bits_f.T @ col  # (p,)
    x1 = bits_f.sum(axis=0)
    y1 = float(col.sum())
    n10 = x1 - n11
    n01 = y1 - n11
    n00 = n - x1 - y1 + n11
    cells = np.stack(
        [np.stack([n00, n01], axis=1), np.stack([n10, n11], axis=1)], axis=1
    )  # (p, 2, 2): [x][y]
    marg_x = np.stack([n - x1, x1], axis=1)
    marg_y = np.tile(np.array([n - y1, y1]), (p, 1))
    return _mi_cells(cells, marg_x, marg_y, n)


def mrmr_rank(matrix: IndicatorMatrix, k: int) -> RankedList:
    """Greedy minimum-redundancy maximum-relevance ranking (difference form).

    First pick maximizes MI(column; labels); pick t+1 maximizes
    MI(column; labels) - mean over selected columns of MI(column; selected).
    Ties break toward the lower column index.
    """
    n, p = matrix.bits.shape
    if not 1 <= k <= p:
        raise ValueError(f"k must be in [1, {p}], got {k}")
    bits_f = matrix.bits.astype(np.float64)
    relevance = _relevance(bits_f, matrix.labels)
    first = int(np.argmax(relevance))
    order = [first]
    scores = [float(relevance[first])]
    redundancy_sum = np.zeros(p)
    taken = np.zeros(p, dtype=bool)
    taken[first] = True
    for _ in range(1, k):
        redundancy_sum += _pair_mi(bits_f, bits_f[:, order[-1]])
        criterion = relevance - redundancy_sum / len(order)
        criterion[taken] = -np.inf
        pick = int(np.argmax(criterion))
        order.append(pick)
        scores.append(float(criterion[pick]))
        taken[pick] = True
    return RankedList(order=order, scores=scores)


def write_ranking(ranked: RankedList, ids: Sequence[str], path: str | Path) -> None:
    """CSV with columns rank, column_index, indicator_id, score."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "column_index", "indicator_id", "score"])
        for rank, (col, score) in enumerate(zip(ranked.order, ranked.scores), start=1):
            writer.writerow([rank, col, ids[col], repr(score)])


def read_ranking(path: str | Path) -> tuple[RankedList, list[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["rank", "column_index", "indicator_id", "score"]:
            raise ValueError("unexpected ranking CSV header")
        order, scores, ids = [], [], []
        for row in reader:
            order.append(int(row[1]))
            ids.append(row[2])
            scores.append(float(row[3]))
    return RankedList(order=order, scores=scores), ids
