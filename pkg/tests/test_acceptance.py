"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line; conftest prints them in the terminal summary.
"""
import math
import time
import warnings
from contextlib import contextmanager

import numpy as np
import torch

from conftest import grad_check
from smmnet.backbone_roi import BackboneConfig, extract_feature_map, extract_roi_features
from smmnet.data import SyntheticConfig, TaskWeights, make_synthetic_dataset
from smmnet.losses import LossBatch, au_loss, expr_loss, total_loss, va_loss
from smmnet.message_space import MessageSpace, verify_linearity_equivalence
from smmnet.metrics import DegenerateMetricWarning, ccc, f1_au, macro_f1_expr, mtl_score
from smmnet.model import ModelConfig, SMMEmotionNet
from smmnet.temporal import SmoothingConfig, grid_search_mu, smooth_sequence, smoothed_mtl, synthetic_feature_videos
from smmnet.trainer import BatchSampler, TrainConfig, evaluate, make_batch, train
from smmnet.verification import oracle_ccc, oracle_f1, oracle_macro_f1, oracle_mtl, relative_error

RESULTS: list[str] = []


@contextmanager
def criterion(number: int, title: str):
    start = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        RESULTS.append(f"FAIL  AC{number} {title} ({time.perf_counter() - start:.1f}s): {exc}".splitlines()[0])
        raise
    RESULTS.append(f"PASS  AC{number} {title} ({time.perf_counter() - start:.1f}s)")


def test_ac1_linearity_equivalence():
    with criterion(1, "linearity equivalence, 100 draws within 1e-9"):
        start = time.perf_counter()
        for seed in range(100):
            g = torch.Generator().manual_seed(seed)
            space = MessageSpace(17, 16).double()
            space.reset_parameters(g)
            with torch.no_grad():
                for p in space.parameters():
                    p.copy_(torch.randn(p.shape, generator=g, dtype=torch.float64))
            rois = torch.randn(4, 17, 16, generator=g, dtype=torch.float64)
            assert verify_linearity_equivalence(rois, space, tol=1e-9), f"draw {seed}"
        assert time.perf_counter() - start < 5.0


def test_ac2_gradient_suite():
    with criterion(2, "gradient suite, >= 500 coordinates, rel err < 1e-4"):
        start = time.perf_counter()
        g = torch.Generator().manual_seed(5)
        n = 4
        au = torch.tensor([[1, 0, -1] * 4, [0, 1, 1] * 4, [-1] * 12, [1] * 6 + [0] * 6])
        ex = torch.tensor([2, -1, 7, 0])
        va = torch.tensor([[0.2, -0.4], [-0.6, 0.1], [0.9, 0.7], [-5.0, -5.0]], dtype=torch.float64)
        weights = TaskWeights(np.linspace(0.5, 3, 12), np.linspace(0.4, 2.5, 8))
        au_logits = torch.randn(n, 12, generator=g, dtype=torch.float64, requires_grad=True)
        expr_logits = torch.randn(n, 8, generator=g, dtype=torch.float64, requires_grad=True)
        va_pred = (torch.rand(n, 2, generator=g, dtype=torch.float64) - 0.5).requires_grad_(True)
        batch = LossBatch(au_logits, au, expr_logits, ex, va_pred, va, weights)
        analytic, numeric = [], []
        for fn, params in [(au_loss, [au_logits]), (expr_loss, [expr_logits]), (va_loss, [va_pred]),
                           (total_loss, [au_logits, expr_logits, va_pred])]:
            a, nu = grad_check(lambda fn=fn: fn(batch), params, n_coords=60)
            analytic.append(a)
            numeric.append(nu)

        # full forward: images -> backbone -> both spaces -> summed losses, toy profile
        model = SMMEmotionNet(ModelConfig(), seed=2).double()
        images = torch.rand(3, 3, 64, 64, generator=g, dtype=torch.float64)
        lab_au = torch.tensor([[1, 0] * 6, [-1] * 12, [-1] * 12])
        lab_ex = torch.tensor([-1, 3, -1])
        lab_va = torch.tensor([[-5.0, -5.0], [0.4, -0.1], [-0.3, 0.6]], dtype=torch.float64)

        def full():
            p = model(images)
            return total_loss(LossBatch(p.au_logits, lab_au, p.expr_logits, lab_ex, p.va, lab_va, weights))

        a, nu = grad_check(full, list(model.parameters()), n_coords=500, seed=1)
        analytic.append(a)
        numeric.append(nu)
        analytic, numeric = np.concatenate(analytic), np.concatenate(numeric)
        err = relative_error(analytic, numeric)
        assert len(err) >= 500, len(err)
        assert err.max() < 1e-4, f"max relative error {err.max():.2e} over {len(err)} coordinates"
        assert time.perf_counter() - start < 120
        diff = np.abs(analytic - numeric)
        scale = np.maximum(np.abs(analytic), np.abs(numeric))
        big = scale >= 1e-6
        RESULTS.append(f"      AC2 detail: {len(err)} coordinates, max relative error {err.max():.2e} "
                       f"(max |a - n| {diff.max():.1e}; unfloored ratio {(diff[big] / scale[big]).max():.1e} "
                       f"over {int(big.sum())} coordinates with |g| >= 1e-6)")


def test_ac3_masking():
    with criterion(3, "masking gives exact zero head gradients; all-masked loss 0"):
        ds = make_synthetic_dataset(SyntheticConfig(), seed=0)
        weights = TaskWeights.from_index(ds)
        heads = {
            "au": ["sign_space.au_weight", "sign_space.au_bias"],
            "expr": ["message_space.expr_weight", "message_space.expr_bias"],
            "va": ["message_space.va_weight", "message_space.va_bias"],
        }
        for comp, missing in [((4, 0, 0), ("expr", "va")), ((0, 4, 0), ("au", "va")), ((0, 0, 4), ("au", "expr")),
                              ((2, 2, 0), ("va",))]:
            model = SMMEmotionNet(ModelConfig(), seed=0).double()
            total_loss(make_batch(BatchSampler(ds, comp, 0, torch.float64), model, weights)).backward()
            grads = dict(model.named_parameters())
            for task in missing:
                for name in heads[task]:
                    assert torch.count_nonzero(grads[name].grad) == 0, (comp, name)

        model = SMMEmotionNet(ModelConfig(), seed=0).double()
        p = model(torch.rand(3, 3, 64, 64, dtype=torch.float64))
        masked = LossBatch(p.au_logits, torch.full((3, 12), -1), p.expr_logits, torch.full((3,), -1),
                           p.va, torch.full((3, 2), -5.0, dtype=torch.float64), weights)
        loss = total_loss(masked)
        assert loss.item() == 0.0
        loss.backward()
        assert all(torch.count_nonzero(q.grad) == 0 for q in model.parameters() if q.grad is not None)


def test_ac4_metric_oracles():
    with criterion(4, "metric oracles on 1000 instances; perfect composite 3.0; composite weights"):
        rng = np.random.default_rng(2024)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateMetricWarning)
            for _ in range(1000):
                n = int(rng.integers(2, 16))
                p, t = rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)
                assert math.isclose(ccc(p, t), oracle_ccc(p, t), rel_tol=1e-9, abs_tol=1e-12)
                probs, tg = rng.uniform(size=(n, 12)), rng.integers(0, 2, (n, 12))
                got = f1_au(probs, tg).per_class
                want = [oracle_f1((probs[:, h] >= 0.5).astype(int), tg[:, h]) for h in range(12)]
                assert np.allclose(got, want, rtol=0, atol=1e-12)
                logits, y = rng.normal(size=(n, 8)), rng.integers(0, 8, n)
                assert math.isclose(macro_f1_expr(logits, y).mean, oracle_macro_f1(logits.argmax(1), y, 8),
                                    abs_tol=1e-12)
                e, a, v = rng.uniform(size=8), rng.uniform(size=12), rng.uniform(-1, 1, 2)
                assert math.isclose(mtl_score(v[0], v[1], e, a), oracle_mtl(v[0], v[1], e, a), abs_tol=1e-12)
        assert mtl_score(1.0, 1.0, [1.0] * 8, [1.0] * 12) == 3.0
        assert mtl_score(1, 0, [0] * 8, [0] * 12) == 0.5 and mtl_score(0, 1, [0] * 8, [0] * 12) == 0.5
        for k in range(8):
            assert math.isclose(mtl_score(0, 0, np.eye(8)[k], [0] * 12), 1 / 8, abs_tol=1e-15)
        for k in range(12):
            assert math.isclose(mtl_score(0, 0, [0] * 8, np.eye(12)[k]), 1 / 12, abs_tol=1e-15)


def test_ac5_smoothing():
    with criterion(5, "smoothing identity, fixed point, convex hull, mu=1e6 limit"):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(30, 6))
        assert np.array_equal(smooth_sequence(x, 0.0), x)
        c = np.full((25, 4), -0.83)
        assert np.array_equal(smooth_sequence(c, 3.0), c)
        for _ in range(100):
            s = rng.normal(size=(int(rng.integers(1, 40)), 5))
            out = smooth_sequence(s, float(rng.uniform(0, 10)))
            lo, hi = np.minimum.accumulate(s, axis=0), np.maximum.accumulate(s, axis=0)
            assert ((out >= lo - 1e-12) & (out <= hi + 1e-12)).all()
        assert np.abs(smooth_sequence(x, 1e6) - x[0]).max() < 1e-3


def test_ac6_closed_form_losses():
    with criterion(6, "closed-form loss values"):
        w = TaskWeights(np.ones(1), np.ones(8))
        b = LossBatch(torch.zeros(1, 1, dtype=torch.float64), torch.tensor([[1]]),
                      torch.zeros(2, 8, dtype=torch.float64), torch.tensor([0, 6]),
                      torch.tensor([[0.1, -0.3], [0.5, 0.2], [-0.7, 0.9]], dtype=torch.float64),
                      torch.tensor([[0.1, -0.3], [0.5, 0.2], [-0.7, 0.9]], dtype=torch.float64), w)
        assert abs(au_loss(b).item() - 0.6931) < 1e-4
        assert abs(expr_loss(b).item() - 2.0794) < 1e-4
        assert abs(va_loss(b).item()) < 1e-6


OVERFIT = TrainConfig(lr0=3e-3, momentum=0.9, total_iters=2000, batch_au=4, batch_expr=8, batch_va=4, seed=0)


def test_ac7_overfit_run(tmp_path):
    with criterion(7, "overfit run: loss -50%, train mtl >= 2.5, < 10 min, bitwise reproducible"):
        start = time.perf_counter()
        ds = make_synthetic_dataset(SyntheticConfig(), seed=0)
        assert len(ds) == 16
        first = train(OVERFIT, ds, ModelConfig(), out_dir=tmp_path / "a")
        elapsed = time.perf_counter() - start
        initial, final = first.log[0]["loss"], first.log[-1]["loss"]
        assert final <= 0.5 * initial, (initial, final)
        report = evaluate(tmp_path / "a" / "final.npz", ds)
        assert report["mtl_score"] >= 2.5, report["mtl_score"]
        assert elapsed < 600, elapsed
        train(OVERFIT, ds, ModelConfig(), out_dir=tmp_path / "b")
        for name in ("train_log.jsonl", "final.npz"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
        RESULTS.append(f"      AC7 detail: loss {initial:.4f} -> {final:.4f}, train mtl_score "
                       f"{report['mtl_score']:.4f}, one run {elapsed:.1f}s")


def test_ac8_mu_search_sanity():
    with criterion(8, "mu search: 0 without noise; > 0 and higher composite with noise"):
        model = SMMEmotionNet(ModelConfig(), seed=0)
        clean = synthetic_feature_videos(model, noise=0.0, seed=1)
        res = grid_search_mu(model, clean)
        assert (res.mu_au, res.mu_msg) == (0.0, 0.0), (res.mu_au, res.mu_msg)
        noisy = synthetic_feature_videos(model, noise=1.0, seed=1)
        res = grid_search_mu(model, noisy)
        assert res.mu_au > 0 and res.mu_msg > 0, (res.mu_au, res.mu_msg)
        static = smoothed_mtl(model, noisy, SmoothingConfig.static())
        smooth = smoothed_mtl(model, noisy, SmoothingConfig(res.mu_au, res.mu_msg))
        assert smooth > static, (static, smooth)
        RESULTS.append(f"      AC8 detail: noisy set mu_au={res.mu_au:g} mu_msg={res.mu_msg:g}, "
                       f"composite {static:.4f} -> {smooth:.4f}")


def test_ac9_shape_conformance():
    with criterion(9, "paper-profile shapes"):
        cfg = ModelConfig.paper()
        model = SMMEmotionNet(cfg, seed=0)
        image = np.random.default_rng(0).random((299, 299, 3))
        with torch.no_grad():
            fmap = extract_feature_map(image, model.backbone_roi)
            rois = extract_roi_features(fmap, model.backbone_roi)
            pred = model.predict_images(image[None])
        assert tuple(fmap.shape) == (17, 17, 768)
        assert tuple(rois.shape) == (17, 16)
        assert tuple(pred.signs.shape) == (1, 12, 16)
        assert tuple(pred.au_logits.shape) == (1, 12)
        assert tuple(pred.expr_logits.shape) == (1, 8)
        assert tuple(pred.va.shape) == (1, 2)
        assert ((pred.va > -1) & (pred.va < 1)).all()
        assert BackboneConfig.paper().map_height == 17

