"""Multi-task training loop (SGD + momentum, cosine annealing) and evaluation."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .backbone_roi import images_to_tensor
from .data import DatasetIndex, TaskWeights
from .losses import LossBatch, NonFiniteError, loss_breakdown
from .metrics import evaluation_summary
from .model import ModelConfig, SMMEmotionNet, load_checkpoint, save_checkpoint
from .temporal import FramePredictions, SmoothingConfig, apply_smoothed_heads

log = logging.getLogger(__name__)

TASKS = ("au", "expr", "va")


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-3
    momentum: float = 0.9
    total_iters: int = 2000
    batch_au: int = 8
    batch_expr: int = 8
    batch_va: int = 8
    seed: int = 0
    checkpoint_every: int = 0
    balance_weights: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.lr0 < 0:
            raise ValueError("lr0 must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.total_iters < 1:
            raise ValueError("total_iters must be >= 1")

    @property
    def composition(self) -> tuple[int, int, int]:
        return (self.batch_au, self.batch_expr, self.batch_va)

    @property
    def torch_dtype(self) -> torch.dtype:
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]


def cosine_lr(iteration: int, total: int, lr0: float) -> float:
    """``lr0 * (1 + cos(pi * iteration / total)) / 2``, exactly 0 at the end."""
    if not 0 <= iteration <= total:
        raise ValueError(f"iteration {iteration} outside [0, {total}]")
    if iteration == total:
        return 0.0
    return max(lr0 * 0.5 * (1.0 + math.cos(math.pi * iteration / total)), 0.0)


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, snapshot: dict):
        self.iteration = iteration
        self.snapshot = snapshot
        super().__init__(f"non-finite loss at iteration {iteration}: {snapshot}")


class BatchSampler:
    """Deterministic mixed-task batches drawn from the three uni-task subsets.

    Each subset is walked in a seeded random order and reshuffled when
    exhausted. Frames are assigned to the first task they are labeled for
    (AU, then EXPR, then VA); other tasks' labels on a drawn frame are masked
    so it contributes only to its own subset's loss.
    """

    def __init__(self, index: DatasetIndex, composition=(8, 8, 8), seed: int = 0,
                 dtype: torch.dtype = torch.float32):
        self.index = index
        self.composition = tuple(composition)
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype
        labels = index.labels()
        au_has = (labels["au"] != -1).any(axis=1)
        ex_has = labels["expr"] != -1
        va_has = (labels["va"] != -5.0).all(axis=1)
        self.pools = {
            "au": np.flatnonzero(au_has),
            "expr": np.flatnonzero(ex_has & ~au_has),
            "va": np.flatnonzero(va_has & ~au_has & ~ex_has),
        }
        for task, k in zip(TASKS, self.composition):
            if k > 0 and len(self.pools[task]) == 0:
                raise ValueError(f"{task} subset is empty but its sub-batch size is {k}")
        self._order = {t: np.empty(0, dtype=np.int64) for t in TASKS}
        self._images = images_to_tensor(index.images(), dtype)
        self._labels = labels

    def _draw(self, task: str, k: int) -> np.ndarray:
        out = []
        while k > 0:
            if len(self._order[task]) == 0:
                self._order[task] = self.rng.permutation(self.pools[task])
            take = self._order[task][:k]
            self._order[task] = self._order[task][k:]
            out.append(take)
            k -= len(take)
        return np.concatenate(out) if out else np.empty(0, dtype=np.int64)

    def next(self) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
        """Images (N, 3, S, S) and masked label tensors for one batch."""
        parts = [self._draw(t, k) for t, k in zip(TASKS, self.composition)]
        idx = np.concatenate(parts)
        n_au, n_ex = len(parts[0]), len(parts[1])
        au = self._labels["au"][idx].copy()
        ex = self._labels["expr"][idx].copy()
        va = self._labels["va"][idx].copy()
        au[n_au:] = -1
        ex[:n_au] = -1
        ex[n_au + n_ex:] = -1
        va[: n_au + n_ex] = -5.0
        labels = {
            "au": torch.as_tensor(au),
            "expr": torch.as_tensor(ex),
            "va": torch.as_tensor(va, dtype=self.dtype),
        }
        return self._images[torch.as_tensor(idx)], labels


def make_batch(sampler: BatchSampler, model: SMMEmotionNet, weights: TaskWeights) -> LossBatch:
    images, labels = sampler.next()
    pred = model(images)
    return LossBatch(pred.au_logits, labels["au"], pred.expr_logits, labels["expr"],
                     pred.va, labels["va"], weights)


@contextmanager
def single_thread():
    prev = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(prev)


@dataclass
class TrainResult:
    model: SMMEmotionNet
    log: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    weights: TaskWeights | None = None


def _task_weights(config: TrainConfig, index: DatasetIndex, model_config: ModelConfig) -> TaskWeights:
    if config.balance_weights:
        return TaskWeights.from_index(index, model_config.num_expr)
    return TaskWeights.uniform(model_config.sign.num_au, model_config.num_expr)


def train(
    config: TrainConfig,
    dataset: DatasetIndex,
    model_config: ModelConfig = ModelConfig(),
    out_dir: str | Path | None = None,
    model: SMMEmotionNet | None = None,
) -> TrainResult:
    """Run ``config.total_iters`` SGD steps on the summed task losses.

    With ``out_dir`` the per-iteration log is written to ``train_log.jsonl``
    and checkpoints to ``ckpt_<iter>.npz`` (every ``checkpoint_every``
    iterations) plus ``final.npz``.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    dtype = config.torch_dtype
    torch.manual_seed(config.seed)
    if model is None:
        model = SMMEmotionNet(model_config, seed=config.seed)
    model = model.to(dtype)
    weights = _task_weights(config, dataset, model.config)
    sampler = BatchSampler(dataset, config.composition, config.seed, dtype)
    opt = torch.optim.SGD(model.parameters(), lr=config.lr0, momentum=config.momentum)
    result = TrainResult(model, weights=weights)
    log_fh = open(out / "train_log.jsonl", "w", encoding="utf-8") if out is not None else None

    try:
        with single_thread():
            model.train()
            for it in range(config.total_iters):
                lr = cosine_lr(it, config.total_iters, config.lr0)
                for group in opt.param_groups:
                    group["lr"] = lr
                try:
                    parts = loss_breakdown(make_batch(sampler, model, weights))
                    record = {"iter": it, "lr": lr, **parts.as_floats()}
                except NonFiniteError as exc:
                    parts, record = None, {"iter": it, "lr": lr, "error": str(exc), "loss": math.nan}
                if not math.isfinite(record["loss"]):
                    if out is not None:
                        save_checkpoint(model, out / "diverged.npz", {"iter": it})
                    raise TrainingDiverged(it, record)
                opt.zero_grad(set_to_none=False)
                parts.total.backward()
                opt.step()
                result.log.append(record)
                if log_fh is not None:
                    log_fh.write(json.dumps(record) + "\n")
                if out is not None and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
                    path = out / f"ckpt_{it + 1:07d}.npz"
                    save_checkpoint(model, path, {"iter": it + 1})
                    result.checkpoints.append(path)
                if it % 100 == 0:
                    log.debug("iter %d lr %.3g loss %.4f", it, lr, record["loss"])
    finally:
        if log_fh is not None:
            log_fh.close()
    model.eval()
    if out is not None:
        path = out / "final.npz"
        save_checkpoint(model, path, {"iter": config.total_iters,
                                      "train_config": dataclasses.asdict(config)})
        result.checkpoints.append(path)
    return result


def evaluate_predictions(preds: FramePredictions, index: DatasetIndex, threshold: float = 0.5) -> dict:
    """Score frame predictions against the labels of the matching index records."""
    pos = {(r.video_id, r.frame_index): i for i, r in enumerate(index.records)}
    try:
        order = [pos[(v, int(f))] for v, f in zip(preds.video_ids, preds.frame_index)]
    except KeyError as exc:
        raise ValueError(f"prediction for unknown frame {exc.args[0]}") from None
    lab = index.labels([index.records[i] for i in order])
    return evaluation_summary(preds.au_probs, lab["au"], preds.expr_logits, lab["expr"],
                              preds.va, lab["va"], threshold)


def evaluate(model, index: DatasetIndex, smoothing: SmoothingConfig | None = None) -> dict:
    """Static (or smoothed) per-task metrics and composite score on ``index``.

    ``model`` is an :class:`SMMEmotionNet` or a checkpoint path.
    """
    if not isinstance(model, SMMEmotionNet):
        model, _ = load_checkpoint(model)
    smoothing = smoothing or SmoothingConfig.static()
    with single_thread():
        preds = apply_smoothed_heads(model, index, smoothing)
    report = evaluate_predictions(preds, index)
    report["smoothing"] = {"mu_au": smoothing.mu_au, "mu_msg": smoothing.mu_msg}
    report["num_frames"] = len(preds)
    return report
