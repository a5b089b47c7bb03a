import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smmnet.metrics import (
    DegenerateMetricWarning, ccc, evaluation_summary, f1_au, f1_binary, macro_f1_expr, mtl_score,
)
from smmnet.verification import oracle_ccc, oracle_confusion, oracle_f1, oracle_macro_f1, oracle_mtl


def test_f1_binary_formula():
    # TP=2, FP=1, FN=1
    assert f1_binary([1, 1, 1, 0, 0], [1, 1, 0, 1, 0]) == pytest.approx(4 / 6)


def test_f1_binary_perfect_and_zero():
    assert f1_binary([0, 1, 1], [0, 1, 1]) == 1.0
    assert f1_binary([1, 0], [0, 1]) == 0.0


def test_f1_binary_degenerate_warns():
    with pytest.warns(DegenerateMetricWarning):
        assert f1_binary([0, 0], [0, 0]) == 0.0


def test_f1_binary_errors():
    with pytest.raises(ValueError):
        f1_binary([], [])
    with pytest.raises(ValueError):
        f1_binary([1], [1, 0])


def test_f1_exhaustive_length_two():
    # closed form: F1 = 2TP / (2TP + FP + FN), 0 when nothing is positive
    table = {}
    for bits in itertools.product([0, 1], repeat=4):
        p, t = bits[:2], bits[2:]
        tp = sum(a and b for a, b in zip(p, t))
        fp = sum(a and not b for a, b in zip(p, t))
        fn = sum(b and not a for a, b in zip(p, t))
        table[bits] = 2 * tp / (2 * tp + fp + fn) if (tp + fp + fn) else 0.0
    assert len(table) == 16
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateMetricWarning)
        for bits, expected in table.items():
            assert f1_binary(bits[:2], bits[2:]) == pytest.approx(expected)
            assert oracle_f1(bits[:2], bits[2:]) == pytest.approx(expected)


def test_f1_au_examples():
    t = np.array([[1, 0], [0, 1], [1, 1]])
    assert f1_au(t.astype(float), t).mean == 1.0
    probs = np.array([[0.9, 0.9], [0.1, 0.1], [0.8, 0.2]])
    targets = np.array([[1, 0], [0, 1], [1, 1]])
    res = f1_au(probs, targets)
    assert res.per_class.tolist() == [1.0, 0.0]
    assert res.mean == 0.5


def test_f1_au_threshold_inclusive():
    assert f1_au([[0.5]], [[1]]).mean == 1.0


def test_f1_au_masks_and_errors():
    probs = np.array([[0.9, 0.9], [0.9, 0.1]])
    targets = np.array([[1, -1], [-1, -1]])
    with pytest.raises(ValueError, match="AU 1"):
        f1_au(probs, targets)
    targets = np.array([[1, -1], [-1, 0]])
    assert f1_au(probs, targets).per_class[0] == 1.0
    with pytest.raises(ValueError):
        f1_au(probs, targets, threshold=1.0)


def test_macro_f1_hand_confusion():
    # confusion rows = targets: [[1, 1], [0, 2]]
    targets = [0, 0, 1, 1]
    preds = [0, 1, 1, 1]
    logits = np.eye(2)[preds]
    assert macro_f1_expr(logits, targets).mean == pytest.approx((2 / 3 + 4 / 5) / 2)
    assert oracle_confusion(preds, targets, 2) == [[1, 1], [0, 2]]
    assert oracle_macro_f1(preds, targets, 2) == pytest.approx(0.7333, abs=1e-4)


def test_macro_f1_perfect_and_single_class():
    y = np.arange(8).repeat(3)
    assert macro_f1_expr(np.eye(8)[y], y).mean == 1.0
    res = macro_f1_expr(np.eye(8)[np.zeros_like(y)], y)
    # class 0: TP=3, FP=21 -> 6/27
    assert res.mean == pytest.approx((6 / 27) / 8)
    assert res.degenerate == ()


def test_macro_f1_absent_class_flagged():
    y = np.array([0, 1, 1])
    res = macro_f1_expr(np.eye(8)[y], y)
    assert res.degenerate == tuple(range(2, 8))
    assert res.mean == pytest.approx(2 / 8)


def test_macro_f1_all_masked():
    with pytest.raises(ValueError):
        macro_f1_expr(np.zeros((2, 8)), [-1, -1])


def test_mtl_examples():
    assert mtl_score(1.0, 1.0, [1.0] * 8, [1.0] * 12) == 3.0
    assert mtl_score(0.5, 0.5, [0.5] * 8, [0.5] * 12) == pytest.approx(1.5)


def test_mtl_weights_by_unit_construction():
    base = mtl_score(0, 0, [0] * 8, [0] * 12)
    assert base == 0.0
    assert mtl_score(1, 0, [0] * 8, [0] * 12) == 0.5
    assert mtl_score(0, 1, [0] * 8, [0] * 12) == 0.5
    for k in range(8):
        e = [0.0] * 8
        e[k] = 1.0
        assert mtl_score(0, 0, e, [0] * 12) == pytest.approx(1 / 8, abs=1e-15)
    for k in range(12):
        a = [0.0] * 12
        a[k] = 1.0
        assert mtl_score(0, 0, [0] * 8, a) == pytest.approx(1 / 12, abs=1e-15)


@given(st.lists(st.floats(0, 1), min_size=22, max_size=22), st.integers(0, 21), st.floats(0, 0.5))
@settings(max_examples=100, deadline=None)
def test_mtl_monotone(vals, k, bump):
    def score(v):
        return mtl_score(v[0], v[1], v[2:10], v[10:22])
    up = list(vals)
    up[k] = min(1.0, up[k] + bump)
    assert score(up) >= score(vals) - 1e-15


def test_oracle_agreement_random_instances():
    rng = np.random.default_rng(0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateMetricWarning)
        for _ in range(1000):
            n = int(rng.integers(2, 12))
            p, t = rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)
            assert ccc(p, t) == pytest.approx(oracle_ccc(p, t), rel=1e-9, abs=1e-12)

            bp, bt = rng.integers(0, 2, n), rng.integers(0, 2, n)
            assert f1_binary(bp, bt) == pytest.approx(oracle_f1(bp, bt), abs=1e-12)

            probs = rng.uniform(size=(n, 3))
            tg = rng.integers(0, 2, (n, 3))
            res = f1_au(probs, tg)
            expected = [oracle_f1((probs[:, h] >= 0.5).astype(int), tg[:, h]) for h in range(3)]
            np.testing.assert_allclose(res.per_class, expected, atol=1e-12)

            logits = rng.normal(size=(n, 8))
            y = rng.integers(0, 8, n)
            assert macro_f1_expr(logits, y).mean == pytest.approx(
                oracle_macro_f1(logits.argmax(1), y, 8), abs=1e-12)

            e, a = rng.uniform(size=8), rng.uniform(size=12)
            v, ar = rng.uniform(-1, 1, 2)
            assert mtl_score(v, ar, e, a) == pytest.approx(oracle_mtl(v, ar, e, a), abs=1e-12)


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=12), st.randoms())
@settings(max_examples=100, deadline=None)
def test_f1_permutation_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateMetricWarning)
        a = f1_binary(*zip(*pairs))
        b = f1_binary(*zip(*shuffled))
    assert a == b


def test_macro_f1_shift_invariance():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(30, 8))
    y = rng.integers(0, 8, 30)
    shifted = logits + rng.normal(size=(30, 1)) * 10
    assert macro_f1_expr(shifted, y).mean == macro_f1_expr(logits, y).mean


def test_ccc_concatenation_matches_oracle():
    rng = np.random.default_rng(2)
    parts = [rng.uniform(-1, 1, (k, 2)) for k in (3, 7, 5)]
    p = np.concatenate([x[:, 0] for x in parts])
    t = np.concatenate([x[:, 1] for x in parts])
    assert ccc(p, t) == pytest.approx(oracle_ccc(p, t), rel=1e-12)


def test_summary_partial_when_task_absent():
    rep = evaluation_summary(
        au_probs=np.full((2, 12), 0.9), au_labels=np.ones((2, 12), int),
        expr_logits=np.zeros((2, 8)), expr_labels=np.array([-1, -1]),
        va=np.zeros((2, 2)), va_labels=np.full((2, 2), -5.0),
    )
    assert rep["absent_tasks"] == ["expr", "va"]
    assert rep["partial"] is True
    assert rep["mtl_score"] == pytest.approx(1.0)


def test_summary_full():
    y = np.arange(8)
    va = np.linspace(-0.9, 0.9, 8)[:, None].repeat(2, 1)
    au = np.tile([[0, 1], [1, 0]], (4, 6))
    rep = evaluation_summary(au.astype(float), au, np.eye(8)[y], y, va, va)
    assert rep["mtl_score"] == pytest.approx(3.0)
    assert rep["partial"] is False
    assert {"f1_au", "f1_expr", "ccc_v", "ccc_a", "ccc_va_mean"} <= rep.keys()
