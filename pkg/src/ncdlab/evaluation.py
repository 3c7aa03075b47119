"""Cluster assignment and permutation-optimal clustering accuracy.

Accuracy maximizes the match count over all bijections between predicted
clusters and hidden classes, solved on the confusion matrix by the
Hungarian method (scipy's linear_sum_assignment). A factorial brute-force
twin serves as the correctness oracle for small class counts.

Hidden labels enter the program only through this module.
"""

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractError

METRICS_HEADER = "epoch,acc,ce,bce,mse,ncl,scl,total"


@dataclass
class ClusteringResult:
    assignments: np.ndarray    # predicted cluster per sample
    acc: float
    permutation: np.ndarray    # permutation[predicted] = matched true class
    confusion: np.ndarray      # confusion[true, predicted] counts


def assign_clusters(ms, inputs: np.ndarray) -> np.ndarray:
    """Argmax of the unlabeled head per sample; ties pick the lowest index."""
    tape = ms.forward_batch(inputs)
    return np.argmax(tape.probs_u, axis=1)


def _validated(y_true, y_pred, num_classes):
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ContractError("label arrays must be 1-d and equal length")
    if y_true.size == 0:
        raise ContractError("label arrays must be nonempty")
    for arr in (y_true, y_pred):
        if np.any((arr < 0) | (arr >= num_classes)):
            raise ContractError("label out of range")
    return y_true, y_pred


def clustering_acc(y_true, y_pred, num_classes: int) -> ClusteringResult:
    """Hungarian-matched clustering accuracy."""
    y_true, y_pred = _validated(y_true, y_pred, num_classes)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    # weight[pred, true]: maximize matched counts over bijections
    weight = confusion.T
    rows, cols = linear_sum_assignment(weight, maximize=True)
    permutation = np.empty(num_classes, dtype=np.int64)
    permutation[rows] = cols
    matches = int(weight[rows, cols].sum())
    return ClusteringResult(
        assignments=y_pred,
        acc=matches / y_true.size,
        permutation=permutation,
        confusion=confusion,
    )


def acc_bruteforce(y_true, y_pred, num_classes: int) -> float:
    """Exhaustive maximum over all permutations; oracle for clustering_acc."""
    if num_classes > 8:
        raise ContractError("brute force limited to at most 8 classes")
    y_true, y_pred = _validated(y_true, y_pred, num_classes)
    best = 0
    for perm in itertools.permutations(range(num_classes)):
        mapped = np.asarray(perm)[y_pred]
        best = max(best, int(np.sum(mapped == y_true)))
    return best / y_true.size


def append_metrics(path, epoch: int, acc: float, report) -> None:
    """Append one evaluation row; writes the fixed header on first use."""
    row = ",".join([str(epoch), repr(float(acc))] + [
        repr(float(v)) for v in (report.ce, report.bce, report.mse,
                                 report.ncl, report.scl, report.total)
    ])
    with open(path, "a") as fh:
        if fh.tell() == 0:
            fh.write(METRICS_HEADER + "\n")
        fh.write(row + "\n")
