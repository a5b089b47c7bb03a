"""File formats: prediction CSV, evaluation/fold reports, training-log plots."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .temporal import FramePredictions, MuSearchResult


def write_predictions(preds: FramePredictions, path: str | Path) -> None:
    """One row per frame: ids, AU probabilities, expression probabilities, valence, arousal."""
    n_au = preds.au_probs.shape[1]
    n_ex = preds.expr_logits.shape[1]
    header = (["video_id", "frame_index"] + [f"au_{h}" for h in range(n_au)]
              + [f"expr_{c}" for c in range(n_ex)] + ["valence", "arousal"])
    probs = preds.expr_probs
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, vid in enumerate(preds.video_ids):
            row = [vid, int(preds.frame_index[i])]
            row += [repr(float(x)) for x in preds.au_probs[i]]
            row += [repr(float(x)) for x in probs[i]]
            row += [repr(float(preds.va[i, 0])), repr(float(preds.va[i, 1]))]
            w.writerow(row)


def read_predictions(path: str | Path) -> FramePredictions:
    """Inverse of :func:`write_predictions`; expression columns come back as log-probabilities."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty prediction file")
    header, body = rows[0], rows[1:]
    au_cols = [i for i, h in enumerate(header) if h.startswith("au_")]
    ex_cols = [i for i, h in enumerate(header) if h.startswith("expr_")]
    va_cols = [header.index("valence"), header.index("arousal")]
    data = np.array([[float(r[i]) for i in au_cols + ex_cols + va_cols] for r in body]).reshape(
        len(body), len(au_cols) + len(ex_cols) + 2)
    n_au, n_ex = len(au_cols), len(ex_cols)
    with np.errstate(divide="ignore"):
        expr = np.log(data[:, n_au: n_au + n_ex])
    return FramePredictions(
        [r[0] for r in body], np.array([int(r[1]) for r in body], dtype=np.int64),
        data[:, :n_au], expr, data[:, n_au + n_ex:],
    )


def write_json(obj: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_train_log(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def metrics_table(report: dict) -> str:
    """Markdown table of the headline metrics of an evaluation report."""
    keys = ["f1_au", "f1_expr", "ccc_v", "ccc_a", "ccc_va_mean", "mtl_score"]
    head = "| " + " | ".join(keys) + " |"
    sep = "|" + "---|" * len(keys)
    vals = "| " + " | ".join(f"{report[k]:.4f}" if k in report else "n/a" for k in keys) + " |"
    return "\n".join([head, sep, vals])


def fold_table(result: dict) -> str:
    rows = result["table"]
    keys = [k for k in ("f1_au", "f1_expr", "ccc_va") if k in rows[0]]
    lines = ["| fold | " + " | ".join(keys) + " |", "|---|" + "---|" * len(keys)]
    for r in rows:
        lines.append(f"| {r['fold']} | " + " | ".join(f"{r[k]:.4f}" for k in keys) + " |")
    return "\n".join(lines)


def plot_training(log: list[dict], path: str | Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    it = [r["iter"] for r in log]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for key in ("loss", "loss_au", "loss_expr", "loss_va"):
        ax1.plot(it, [r[key] for r in log], label=key)
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(it, [r["lr"] for r in log])
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("learning rate")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_mu_search(result: MuSearchResult | dict, path: str | Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    d = result.to_dict() if isinstance(result, MuSearchResult) else result
    fig, ax = plt.subplots(figsize=(6, 4))
    for task, per_mu in d["per_fold"].items():
        mus = [float(m) for m in per_mu]
        ax.plot(mus, [np.mean(v) for v in per_mu.values()], marker="o", label=task)
    ax.axvline(d["mu_au"], color="gray", ls=":", label="selected mu (AU)")
    ax.axvline(d["mu_msg"], color="black", ls="--", label="selected mu (message)")
    ax.set_xlabel("mu")
    ax.set_ylabel("mean fold metric")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
