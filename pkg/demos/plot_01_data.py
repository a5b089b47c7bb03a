"""
Manifests, label masks and class weights
========================================

A manifest is one JSON line per frame. Missing labels use sentinels:
-1 for AU and expression, -5.0 for valence/arousal.
"""
import tempfile
from pathlib import Path

import numpy as np

from smmnet.data import (
    SyntheticConfig, TaskWeights, downsample_sequence, load_manifest, make_synthetic_dataset, save_dataset,
)

# A small synthetic corpus: every video belongs to exactly one task subset.
index = make_synthetic_dataset(SyntheticConfig(au_videos=3, expr_videos=3, va_videos=3, expr_frames=16), seed=0)
print(len(index), "frames in", len(index.videos), "videos")
print("labeled frames per task:", dict(index.task_coverage))

# Write it to disk and read it back.
out = Path(tempfile.mkdtemp()) / "synthetic"
manifest = save_dataset(index, out)
print(manifest.read_text().splitlines()[0][:120], "...")
index = load_manifest(manifest)

# Balancing weights come from the training distribution:
# AU positives get neg/pos, expression classes get N / (C * n_c).
w = TaskWeights.from_index(index)
print("AU weights:", np.round(w.au_weights, 2))
print("EXPR weights:", np.round(w.expr_weights, 2))

# Temporal down-sampling keeps every 8th frame of each video.
small = downsample_sequence(index, 8)
print("after 8x down-sampling:", len(small), "frames")

# The rendered images hide the labels in simple spatial patterns.
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

fig, axes = plt.subplots(1, 3, figsize=(9, 3))
for ax, vid in zip(axes, [index.video_ids("au")[0], index.video_ids("expr")[0], index.video_ids("va")[0]]):
    ax.imshow(index.load_image(index.video(vid)[0]))
    ax.set_title(vid)
    ax.axis("off")
fig.savefig(out / "frames.png", dpi=80)
print("figure:", out / "frames.png")
