"""Evaluation metrics: per-AU F1, macro expression F1, CCC and the multi-task composite."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import AU_MISSING, EXPR_MISSING
from .losses import ccc

__all__ = [
    "DegenerateMetricWarning", "F1Result", "ccc", "f1_binary", "f1_au", "macro_f1_expr", "mtl_score",
]


class DegenerateMetricWarning(UserWarning):
    """F1 was defined as 0 because there are no positives in either target or prediction."""


@dataclass(frozen=True)
class F1Result:
    per_class: np.ndarray
    mean: float
    degenerate: tuple[int, ...] = ()


def _f1_counts(tp: int, fp: int, fn: int) -> tuple[float, bool]:
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0, True
    return 2 * tp / denom, False


def f1_binary(pred, target) -> float:
    """2TP / (2TP + FP + FN) for {0, 1} sequences; 0.0 with a warning when nothing is positive."""
    pred = np.asarray(pred).astype(bool)
    target = np.asarray(target).astype(bool)
    if pred.shape != target.shape:
        raise ValueError("pred and target lengths differ")
    if pred.size == 0:
        raise ValueError("f1 of an empty sequence")
    tp = int(np.sum(pred & target))
    fp = int(np.sum(pred & ~target))
    fn = int(np.sum(~pred & target))
    f1, degenerate = _f1_counts(tp, fp, fn)
    if degenerate:
        warnings.warn("no positives in target or prediction; F1 set to 0", DegenerateMetricWarning,
                      stacklevel=2)
    return f1


def f1_au(probs, targets, threshold: float = 0.5) -> F1Result:
    """Per-AU F1 over unmasked entries of (N, H) probabilities and {0, 1, -1} targets."""
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets)
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    if probs.shape != targets.shape or probs.ndim != 2:
        raise ValueError("probs and targets must both be (N, H)")
    pred = probs >= threshold
    scores, degenerate = [], []
    for h in range(targets.shape[1]):
        m = targets[:, h] != AU_MISSING
        if not m.any():
            raise ValueError(f"AU {h} has no labeled entries")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateMetricWarning)
            scores.append(f1_binary(pred[m, h], targets[m, h]))
        if caught:
            degenerate.append(h)
    scores = np.array(scores)
    return F1Result(scores, float(scores.mean()), tuple(degenerate))


def macro_f1_expr(logits, targets, num_classes: int | None = None) -> F1Result:
    """Argmax predictions, one-vs-rest F1 per class, unweighted mean over all classes.

    Classes absent from both targets and predictions score 0 and are listed
    in ``degenerate``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    num_classes = num_classes or logits.shape[1]
    m = targets != EXPR_MISSING
    if not m.any():
        raise ValueError("no labeled expression samples")
    pred = logits[m].argmax(axis=1)
    tgt = targets[m]
    scores, degenerate = [], []
    for c in range(num_classes):
        tp = int(np.sum((pred == c) & (tgt == c)))
        fp = int(np.sum((pred == c) & (tgt != c)))
        fn = int(np.sum((pred != c) & (tgt == c)))
        f1, deg = _f1_counts(tp, fp, fn)
        scores.append(f1)
        if deg:
            degenerate.append(c)
    scores = np.array(scores)
    return F1Result(scores, float(scores.mean()), tuple(degenerate))


def mtl_score(ccc_v: float, ccc_a: float, expr_f1s, au_f1s) -> float:
    """Half the CCC sum plus the mean expression F1 plus the mean AU F1 (max 3)."""
    expr_f1s = np.asarray(expr_f1s, dtype=np.float64)
    au_f1s = np.asarray(au_f1s, dtype=np.float64)
    return float(0.5 * (ccc_v + ccc_a) + expr_f1s.sum() / len(expr_f1s) + au_f1s.sum() / len(au_f1s))


def evaluation_summary(au_probs, au_labels, expr_logits, expr_labels, va, va_labels,
                       threshold: float = 0.5) -> dict:
    """Per-task metrics and the composite for frame-aligned predictions and sentinel-coded labels.

    A task with no labeled frames is listed under ``absent_tasks``; its
    composite terms count as 0 and ``partial`` is set.
    """
    au_labels = np.asarray(au_labels)
    expr_labels = np.asarray(expr_labels)
    va_labels = np.asarray(va_labels, dtype=np.float64)
    va = np.asarray(va, dtype=np.float64)
    report: dict = {"absent_tasks": []}
    au_f1s = expr_f1s = None
    ccc_v = ccc_a = 0.0

    if (au_labels != AU_MISSING).any():
        res = f1_au(au_probs, au_labels, threshold)
        au_f1s = res.per_class
        report.update(f1_au=res.mean, f1_au_per_class=res.per_class.tolist(),
                      f1_au_degenerate=list(res.degenerate))
    else:
        report["absent_tasks"].append("au")
    if (expr_labels != EXPR_MISSING).any():
        res = macro_f1_expr(expr_logits, expr_labels)
        expr_f1s = res.per_class
        report.update(f1_expr=res.mean, f1_expr_per_class=res.per_class.tolist(),
                      f1_expr_degenerate=list(res.degenerate))
    else:
        report["absent_tasks"].append("expr")
    m = (va_labels != -5.0).all(axis=1)
    if m.sum() >= 2:
        ccc_v = ccc(va[m, 0], va_labels[m, 0])
        ccc_a = ccc(va[m, 1], va_labels[m, 1])
        report.update(ccc_v=ccc_v, ccc_a=ccc_a, ccc_va_mean=0.5 * (ccc_v + ccc_a))
    else:
        report["absent_tasks"].append("va")

    report["mtl_score"] = mtl_score(
        ccc_v, ccc_a,
        expr_f1s if expr_f1s is not None else [0.0],
        au_f1s if au_f1s is not None else [0.0],
    )
    report["partial"] = bool(report["absent_tasks"])
    return report
