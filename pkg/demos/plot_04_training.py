"""
Overfitting a toy mixed-task set
================================

SGD with momentum and a cosine schedule on 16 synthetic frames.
"""
import sys
import tempfile
from pathlib import Path

from smmnet.data import SyntheticConfig, make_synthetic_dataset
from smmnet.model import ModelConfig
from smmnet.reports import metrics_table, plot_training
from smmnet.trainer import TrainConfig, evaluate, train

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
out = Path(tempfile.mkdtemp())
data = make_synthetic_dataset(SyntheticConfig(), seed=0)

# each batch mixes 4 AU, 8 expression and 4 VA frames
config = TrainConfig(lr0=3e-3, total_iters=iters, batch_au=4, batch_expr=8, batch_va=4)
result = train(config, data, ModelConfig(), out_dir=out)
print(f"loss {result.log[0]['loss']:.3f} -> {result.log[-1]['loss']:.3f}")

print(metrics_table(evaluate(out / "final.npz", data)))
plot_training(result.log, out / "training.png")
print("curves:", out / "training.png")
