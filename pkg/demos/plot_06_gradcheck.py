"""
Checking gradients against central differences
==============================================
"""
import numpy as np
import torch

from smmnet.data import TaskWeights
from smmnet.losses import LossBatch, total_loss
from smmnet.model import ModelConfig, SMMEmotionNet
from smmnet.verification import finite_diff_grad, relative_error

torch.manual_seed(0)
model = SMMEmotionNet(ModelConfig(), seed=0).double()
images = torch.rand(3, 3, 64, 64, dtype=torch.float64)
labels = dict(au=torch.tensor([[1, 0] * 6, [-1] * 12, [-1] * 12]), expr=torch.tensor([-1, 2, -1]),
              va=torch.tensor([[-5.0, -5.0], [0.2, 0.1], [-0.4, 0.5]], dtype=torch.float64))


def loss():
    p = model(images)
    return total_loss(LossBatch(p.au_logits, labels["au"], p.expr_logits, labels["expr"], p.va, labels["va"],
                                TaskWeights.uniform()))


param = model.message_space.expr_weight
(analytic,) = torch.autograd.grad(loss(), param)
base = param.detach().clone()


def f(x):
    with torch.no_grad():
        param.copy_(torch.from_numpy(x))
        return float(loss())


numeric = finite_diff_grad(f, base.numpy(), coords=list(range(0, base.numel(), 7)))
with torch.no_grad():
    param.copy_(base)
err = relative_error(analytic.reshape(-1)[::7].numpy(), numeric)
a = analytic.reshape(-1)[::7].numpy()
print("analytic", a[:4])
print("numeric ", numeric[:4])
# differences under 1e-8 count as exact; the raw ratio shows how close they are
raw = np.abs(a - numeric) / np.maximum(np.abs(a), np.abs(numeric))
print(f"{len(err)} coordinates, max relative error {err.max():.2e} (raw {raw.max():.2e})")
