"""Reference oracles used by the test-suite.

Everything here is deliberately naive (plain Python loops, 64-bit floats)
and imports nothing from the rest of the package.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


def finite_diff_grad(fn: Callable[[np.ndarray], float], point, epsilon: float = 1e-6,
                     coords: Sequence[int] | None = None) -> np.ndarray:
    """Central-difference gradient of a scalar function at ``point``.

    With ``coords`` only those flat coordinates are estimated and the result
    has ``len(coords)`` entries; otherwise the result has the shape of ``point``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = np.array(point, dtype=np.float64)
    flat = x.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    out = np.empty(len(idx))
    for j, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + epsilon
        fp = float(fn(x))
        flat[i] = orig - epsilon
        fm = float(fn(x))
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ValueError(f"non-finite function value at coordinate {i}")
        out[j] = (fp - fm) / (2 * epsilon)
    return out.reshape(x.shape) if coords is None else out


def relative_error(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|); differences below ``floor`` count as exact."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(a - n)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return np.where(diff <= floor, 0.0, diff / scale)


def oracle_ccc(pred: Sequence[float], target: Sequence[float]) -> float:
    x = [float(v) for v in pred]
    y = [float(v) for v in target]
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    vx = sum((a - mx) ** 2 for a in x) / n
    vy = sum((b - my) ** 2 for b in y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    denom = vx + vy + (mx - my) ** 2
    if denom == 0:
        return 1.0
    return 2 * cov / denom


def oracle_confusion(pred: Sequence[int], target: Sequence[int], num_classes: int) -> list[list[int]]:
    """Rows are targets, columns are predictions."""
    cm = [[0] * num_classes for _ in range(num_classes)]
    for p, t in zip(pred, target):
        cm[int(t)][int(p)] += 1
    return cm


def oracle_f1(pred: Sequence[int], target: Sequence[int]) -> float:
    """Binary F1 via precision and recall; 0 when undefined."""
    tp = fp = fn = 0
    for p, t in zip(pred, target):
        if p and t:
            tp += 1
        elif p and not t:
            fp += 1
        elif t and not p:
            fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def oracle_macro_f1(pred: Sequence[int], target: Sequence[int], num_classes: int) -> float:
    cm = oracle_confusion(pred, target, num_classes)
    total = 0.0
    for c in range(num_classes):
        tp = cm[c][c]
        fp = sum(cm[r][c] for r in range(num_classes)) - tp
        fn = sum(cm[c]) - tp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        total += 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return total / num_classes


def oracle_mtl(ccc_v: float, ccc_a: float, expr_f1s: Sequence[float], au_f1s: Sequence[float]) -> float:
    total = (ccc_v + ccc_a) / 2
    for f in expr_f1s:
        total += f / 8
    for f in au_f1s:
        total += f / 12
    return total


def oracle_smooth(seq: Sequence[Sequence[float]], mu: float) -> list[list[float]]:
    out = [list(map(float, seq[0]))]
    for eps in seq[1:]:
        out.append([(e + mu * p) / (1 + mu) for e, p in zip(eps, out[-1])])
    return out
