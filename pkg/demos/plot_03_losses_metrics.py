"""
Masked losses and challenge metrics
===================================
"""
import numpy as np
import torch

from smmnet.data import TaskWeights
from smmnet.losses import LossBatch, loss_breakdown
from smmnet.metrics import evaluation_summary, mtl_score

# Three frames, one per task. Everything not labeled is masked out.
batch = LossBatch(
    au_logits=torch.zeros(3, 12), au_labels=torch.tensor([[1] * 12, [-1] * 12, [-1] * 12]),
    expr_logits=torch.zeros(3, 8), expr_labels=torch.tensor([-1, 4, -1]),
    va_pred=torch.tensor([[0.0, 0.0], [0.0, 0.0], [0.3, -0.2]]),
    va_labels=torch.tensor([[-5.0, -5.0], [-5.0, -5.0], [0.5, 0.1]]),
    weights=TaskWeights.uniform(),
)
parts = loss_breakdown(batch)
# log 2 for the AU term, log 8 for the uniform expression term; a single
# VA sample cannot define a CCC, so that term is skipped
print({k: round(v, 4) for k, v in parts.as_floats().items()}, "va used:", parts.has_va)

# Composite score: half the CCC sum plus mean expression F1 plus mean AU F1.
print("perfect:", mtl_score(1, 1, [1] * 8, [1] * 12))
print("all halves:", mtl_score(0.5, 0.5, [0.5] * 8, [0.5] * 12))

rng = np.random.default_rng(0)
n = 64
au = rng.integers(0, 2, (n, 12))
expr = rng.integers(0, 8, n)
va = rng.uniform(-1, 1, (n, 2))
report = evaluation_summary(
    np.clip(au + rng.normal(0, 0.4, au.shape), 0, 1), au,
    np.eye(8)[expr] + rng.normal(0, 0.6, (n, 8)), expr,
    np.clip(va + rng.normal(0, 0.3, va.shape), -1, 1), va,
)
for key in ("f1_au", "f1_expr", "ccc_v", "ccc_a", "mtl_score"):
    print(f"{key:>10s} {report[key]:.3f}")
