"""Frame manifests with incomplete multi-task labels.

A manifest is a UTF-8 file with one JSON object per line::

    {"video_id": "v0", "frame_index": 0, "image": "frames/v0_00000.npy",
     "au": [0, 1, -1, ...], "expr": -1, "valence": -5.0, "arousal": -5.0}

Missing labels use ``-1`` for AU and EXPR and ``-5.0`` for valence/arousal.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

NUM_AU = 12
NUM_EXPR = 8
AU_MISSING = -1
EXPR_MISSING = -1
VA_MISSING = -5.0

MANIFEST_FIELDS = ("video_id", "frame_index", "image", "au", "expr", "valence", "arousal")

ImageRef = Union[str, np.ndarray]


class ManifestError(ValueError):
    """Raised when a manifest line cannot be turned into a valid record."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class FrameRecord:
    video_id: str
    frame_index: int
    image_ref: ImageRef
    au_labels: tuple[int, ...]
    expr_label: int = EXPR_MISSING
    valence: float = VA_MISSING
    arousal: float = VA_MISSING

    def __post_init__(self):
        object.__setattr__(self, "au_labels", tuple(int(a) for a in self.au_labels))
        validate_record(self)

    @property
    def has_au(self) -> bool:
        return any(a != AU_MISSING for a in self.au_labels)

    @property
    def has_expr(self) -> bool:
        return self.expr_label != EXPR_MISSING

    @property
    def has_va(self) -> bool:
        return self.valence != VA_MISSING

    def to_json(self) -> dict:
        if not isinstance(self.image_ref, str):
            raise ManifestError(
                f"record {self.video_id}/{self.frame_index} holds an inline image; "
                "use save_dataset to write it to disk"
            )
        return {
            "video_id": self.video_id,
            "frame_index": self.frame_index,
            "image": self.image_ref,
            "au": list(self.au_labels),
            "expr": self.expr_label,
            "valence": float(self.valence),
            "arousal": float(self.arousal),
        }


def validate_record(rec: FrameRecord) -> None:
    if not isinstance(rec.frame_index, (int, np.integer)) or rec.frame_index < 0:
        raise ManifestError(f"frame_index must be a non-negative integer, got {rec.frame_index!r}")
    for a in rec.au_labels:
        if a not in (0, 1, AU_MISSING):
            raise ManifestError(f"AU label out of range: {a}")
    if not (rec.expr_label == EXPR_MISSING or 0 <= rec.expr_label < NUM_EXPR):
        raise ManifestError(f"expr label out of range: {rec.expr_label}")
    v_missing = rec.valence == VA_MISSING
    a_missing = rec.arousal == VA_MISSING
    if v_missing != a_missing:
        raise ManifestError("valence and arousal must be both present or both missing")
    if not v_missing:
        for name, val in (("valence", rec.valence), ("arousal", rec.arousal)):
            if not (np.isfinite(val) and -1.0 <= val <= 1.0):
                raise ManifestError(f"{name} label out of range: {val}")


@dataclass(frozen=True, eq=False)
class DatasetIndex:
    """Immutable, per-video ordered collection of frame records.

    ``videos`` maps each video id to the ``(start, stop)`` slice of
    ``records`` holding its frames in increasing ``frame_index`` order.
    """

    records: tuple[FrameRecord, ...]
    videos: Mapping[str, tuple[int, int]]
    root: Path | None = None
    task_coverage: Mapping[str, int] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "videos", MappingProxyType(dict(self.videos)))
        object.__setattr__(
            self,
            "task_coverage",
            MappingProxyType(
                {
                    "au": sum(r.has_au for r in self.records),
                    "expr": sum(r.has_expr for r in self.records),
                    "va": sum(r.has_va for r in self.records),
                }
            ),
        )

    def __len__(self) -> int:
        return len(self.records)

    @property
    def num_au(self) -> int:
        return len(self.records[0].au_labels) if self.records else NUM_AU

    def video(self, video_id: str) -> tuple[FrameRecord, ...]:
        start, stop = self.videos[video_id]
        return self.records[start:stop]

    def video_ids(self, task: str | None = None) -> list[str]:
        """Video ids in index order; with ``task`` only videos having that task's labels."""
        if task is None:
            return list(self.videos)
        attr = {"au": "has_au", "expr": "has_expr", "va": "has_va"}[task]
        return [v for v in self.videos if any(getattr(r, attr) for r in self.video(v))]

    def subset(self, video_ids: Iterable[str]) -> "DatasetIndex":
        recs = [r for v in video_ids for r in self.video(v)]
        return build_index(recs, root=self.root)

    def load_image(self, rec: FrameRecord) -> np.ndarray:
        if isinstance(rec.image_ref, np.ndarray):
            return rec.image_ref
        path = Path(rec.image_ref)
        if not path.is_absolute() and self.root is not None:
            path = self.root / path
        return np.load(path)

    def images(self, records: Sequence[FrameRecord] | None = None) -> np.ndarray:
        """Stack images of ``records`` (default: all) into an (N, H, W, 3) float32 array."""
        records = self.records if records is None else records
        return np.stack([self.load_image(r) for r in records]).astype(np.float32)

    def labels(self, records: Sequence[FrameRecord] | None = None) -> dict[str, np.ndarray]:
        records = self.records if records is None else records
        return {
            "au": np.array([r.au_labels for r in records], dtype=np.int64).reshape(len(records), -1),
            "expr": np.array([r.expr_label for r in records], dtype=np.int64),
            "va": np.array([[r.valence, r.arousal] for r in records], dtype=np.float64).reshape(-1, 2),
        }


def build_index(records: Iterable[FrameRecord], root: Path | None = None) -> DatasetIndex:
    """Group records by video (first-appearance order) and sort frames within each."""
    by_video: dict[str, list[FrameRecord]] = {}
    for rec in records:
        by_video.setdefault(rec.video_id, []).append(rec)
    ordered: list[FrameRecord] = []
    videos = {}
    for vid, recs in by_video.items():
        recs.sort(key=lambda r: r.frame_index)
        for a, b in zip(recs, recs[1:]):
            if a.frame_index == b.frame_index:
                raise ManifestError(f"duplicate frame ({vid!r}, {a.frame_index})")
        videos[vid] = (len(ordered), len(ordered) + len(recs))
        ordered.extend(recs)
    return DatasetIndex(tuple(ordered), videos, root)


def _parse_line(obj: dict, num_au: int | None) -> FrameRecord:
    missing = [k for k in MANIFEST_FIELDS if k not in obj]
    if missing:
        raise ValueError(f"missing fields {missing}")
    au = obj["au"]
    if not isinstance(au, list) or any(not isinstance(a, int) or isinstance(a, bool) for a in au):
        raise ValueError("au must be a list of integers")
    if num_au is not None and len(au) != num_au:
        raise ValueError(f"expected {num_au} AU labels, got {len(au)}")
    if not isinstance(obj["expr"], int) or isinstance(obj["expr"], bool):
        raise ValueError("expr must be an integer")
    if not isinstance(obj["frame_index"], int) or isinstance(obj["frame_index"], bool):
        raise ValueError("frame_index must be an integer")
    return FrameRecord(
        video_id=str(obj["video_id"]),
        frame_index=obj["frame_index"],
        image_ref=str(obj["image"]),
        au_labels=tuple(au),
        expr_label=obj["expr"],
        valence=float(obj["valence"]),
        arousal=float(obj["arousal"]),
    )


def load_manifest(path: str | Path, num_au: int | None = None) -> DatasetIndex:
    """Read a line-delimited manifest. Relative image paths resolve against its directory."""
    path = Path(path)
    records = []
    seen: set[tuple[str, int]] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("record must be a JSON object")
                rec = _parse_line(obj, num_au)
            except ManifestError as exc:
                raise ManifestError(str(exc), lineno) from None
            except (ValueError, TypeError) as exc:
                raise ManifestError(f"parse failure: {exc}", lineno) from None
            if num_au is None:
                num_au = len(rec.au_labels)
            key = (rec.video_id, rec.frame_index)
            if key in seen:
                raise ManifestError(f"duplicate frame {key}", lineno)
            seen.add(key)
            records.append(rec)
    return build_index(records, root=path.parent)


def dump_manifest(index: DatasetIndex) -> str:
    return "".join(json.dumps(r.to_json()) + "\n" for r in index.records)


def write_manifest(index: DatasetIndex, path: str | Path) -> None:
    Path(path).write_text(dump_manifest(index), encoding="utf-8")


def _label_counts(index: DatasetIndex) -> dict[str, np.ndarray]:
    return index.labels()


def compute_au_weights(index: DatasetIndex) -> np.ndarray:
    """Per-AU positive-class weight: labeled negatives divided by labeled positives."""
    au = _label_counts(index)["au"]
    pos = (au == 1).sum(axis=0)
    neg = (au == 0).sum(axis=0)
    for i, (p, n) in enumerate(zip(pos, neg)):
        if p == 0 or n == 0:
            raise ValueError(f"AU {i} has {p} positive and {n} negative labels; both must be >= 1")
    return neg / pos


def compute_expr_weights(index: DatasetIndex, num_classes: int = NUM_EXPR) -> np.ndarray:
    """Inverse class frequency normalized so a uniform distribution gives all ones."""
    expr = _label_counts(index)["expr"]
    expr = expr[expr != EXPR_MISSING]
    counts = np.bincount(expr, minlength=num_classes)
    for c, n in enumerate(counts):
        if n == 0:
            raise ValueError(f"expression class {c} has no labeled samples")
    return len(expr) / (num_classes * counts)


@dataclass(frozen=True)
class TaskWeights:
    au_weights: np.ndarray
    expr_weights: np.ndarray

    def __post_init__(self):
        for name in ("au_weights", "expr_weights"):
            w = np.asarray(getattr(self, name), dtype=np.float64)
            if not (np.all(np.isfinite(w)) and np.all(w > 0)):
                raise ValueError(f"{name} must be finite and positive")
            object.__setattr__(self, name, w)

    @classmethod
    def from_index(cls, index: DatasetIndex, num_classes: int = NUM_EXPR) -> "TaskWeights":
        return cls(compute_au_weights(index), compute_expr_weights(index, num_classes))

    @classmethod
    def uniform(cls, num_au: int = NUM_AU, num_classes: int = NUM_EXPR) -> "TaskWeights":
        return cls(np.ones(num_au), np.ones(num_classes))


def downsample_sequence(index: DatasetIndex, factor: int = 8) -> DatasetIndex:
    """Keep every ``factor``-th frame of each video, starting at its first frame."""
    if factor < 1:
        raise ValueError(f"down-sampling factor must be >= 1, got {factor}")
    kept = [r for v in index.videos for r in index.video(v)[::factor]]
    return build_index(kept, root=index.root)


@dataclass(frozen=True)
class SyntheticConfig:
    """Desk-scale stand-in for the AU-only, EXPR-only and VA-only video subsets.

    Every frame renders all three latent label sets into the image; only the
    labels of the video's own task subset are exposed. ``au_missing_rate``
    blanks that fraction of AU labels inside the AU subset.
    """

    au_videos: int = 2
    expr_videos: int = 2
    va_videos: int = 2
    au_frames: int = 2
    expr_frames: int = 4
    va_frames: int = 2
    image_size: int = 64
    num_au: int = NUM_AU
    num_expr: int = NUM_EXPR
    pixel_noise: float = 0.02
    au_missing_rate: float = 0.0
    segment_length: int = 4


def _cell_boxes(n: int, size: int, band: tuple[float, float]) -> list[tuple[int, int, int, int]]:
    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    top, bottom = int(band[0] * size), int(band[1] * size)
    ch = (bottom - top) // rows
    cw = size // cols
    boxes = []
    for k in range(n):
        r, c = divmod(k, cols)
        y0 = top + r * ch
        x0 = c * cw
        pad_y, pad_x = max(ch // 6, 1), max(cw // 6, 1)
        boxes.append((y0 + pad_y, y0 + ch - pad_y, x0 + pad_x, x0 + cw - pad_x))
    return boxes


def render_frame(
    au_bits: np.ndarray,
    expr: int,
    va: np.ndarray,
    cfg: SyntheticConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw planted patterns: AU cells (channel 0), an expression cell (channel 1), VA shading (channel 2)."""
    s = cfg.image_size
    img = np.zeros((s, s, 3), dtype=np.float64)
    for bit, (y0, y1, x0, x1) in zip(au_bits, _cell_boxes(cfg.num_au, s, (0.0, 0.5))):
        img[y0:y1, x0:x1, 0] = 0.9 if bit else 0.1
    y0, y1, x0, x1 = _cell_boxes(cfg.num_expr, s, (0.5, 1.0))[expr]
    img[y0:y1, x0:x1, 1] = 0.9
    half = s // 2
    img[:, :half, 2] = 0.5 + 0.4 * va[0]
    img[:, half:, 2] = 0.5 + 0.4 * va[1]
    img += cfg.pixel_noise * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _latent_sequence(n: int, cfg: SyntheticConfig, rng: np.random.Generator):
    """Piecewise-constant AU/EXPR and slowly drifting VA latents for one video."""
    au = np.zeros((n, cfg.num_au), dtype=np.int64)
    expr = np.zeros(n, dtype=np.int64)
    for start in range(0, n, cfg.segment_length):
        stop = min(start + cfg.segment_length, n)
        au[start:stop] = rng.integers(0, 2, cfg.num_au)
        expr[start:stop] = rng.integers(0, cfg.num_expr)
    steps = rng.normal(0.0, 0.3, size=(n, 2))
    va = np.tanh(np.cumsum(steps, axis=0) + rng.uniform(-1, 1, size=2))
    return au, expr, va


def make_synthetic_dataset(config: SyntheticConfig = SyntheticConfig(), seed: int = 0) -> DatasetIndex:
    """Build a deterministic three-subset dataset with inline images.

    Labels within each subset are adjusted so that every AU has at least one
    positive and one negative label and every expression class occurs when
    the subset has enough frames.
    """
    cfg = config
    n_au = cfg.au_videos * cfg.au_frames
    n_expr = cfg.expr_videos * cfg.expr_frames
    n_va = cfg.va_videos * cfg.va_frames
    if n_au + n_expr + n_va == 0:
        raise ValueError("synthetic dataset must request at least one frame")
    rng = np.random.default_rng(seed)

    groups = []
    for task, nv, nf in (("au", cfg.au_videos, cfg.au_frames),
                         ("expr", cfg.expr_videos, cfg.expr_frames),
                         ("va", cfg.va_videos, cfg.va_frames)):
        if nv and nf:
            lat = [_latent_sequence(nf, cfg, rng) for _ in range(nv)]
            groups.append((task, lat))

    for task, lat in groups:
        if task == "au":
            bits = np.concatenate([l[0] for l in lat])
            for h in range(cfg.num_au):
                if len(bits) >= 2 and bits[:, h].all():
                    bits[rng.integers(len(bits)), h] = 0
                if len(bits) >= 2 and not bits[:, h].any():
                    bits[rng.integers(len(bits)), h] = 1
                if len(bits) >= 2 and bits[:, h].all():
                    bits[0 if bits[0, h] else 1, h] = 0
            offs = 0
            for l in lat:
                l[0][:] = bits[offs: offs + len(l[0])]
                offs += len(l[0])
        elif task == "expr":
            # (video, start, stop) units that receive one class each
            units = [(l, a, min(a + cfg.segment_length, len(l[1])))
                     for l in lat for a in range(0, len(l[1]), cfg.segment_length)]
            if len(units) < cfg.num_expr:
                units = [(l, t, t + 1) for l in lat for t in range(len(l[1]))]
            if len(units) >= cfg.num_expr:
                reps = -(-len(units) // cfg.num_expr)
                classes = np.concatenate([rng.permutation(cfg.num_expr) for _ in range(reps)])
                for (l, a, b), c in zip(units, classes):
                    l[1][a:b] = c

    records = []
    for task, lat in groups:
        for v, (au, expr, va) in enumerate(lat):
            vid = f"{task}_{v:03d}"
            for t in range(len(expr)):
                img = render_frame(au[t], int(expr[t]), va[t], cfg, rng)
                au_lab = [AU_MISSING] * cfg.num_au
                expr_lab, val, aro = EXPR_MISSING, VA_MISSING, VA_MISSING
                if task == "au":
                    au_lab = [int(b) for b in au[t]]
                    if cfg.au_missing_rate > 0:
                        drop = rng.random(cfg.num_au) < cfg.au_missing_rate
                        au_lab = [AU_MISSING if d else b for b, d in zip(au_lab, drop)]
                elif task == "expr":
                    expr_lab = int(expr[t])
                else:
                    val, aro = float(np.float32(va[t, 0])), float(np.float32(va[t, 1]))
                records.append(FrameRecord(vid, t, img, tuple(au_lab), expr_lab, val, aro))
    return build_index(records)


def save_dataset(index: DatasetIndex, directory: str | Path, manifest_name: str = "manifest.jsonl") -> Path:
    """Write inline images as ``.npy`` files under ``frames/`` plus the manifest; returns its path."""
    directory = Path(directory)
    frames = directory / "frames"
    frames.mkdir(parents=True, exist_ok=True)
    out = []
    for rec in index.records:
        if isinstance(rec.image_ref, np.ndarray):
            rel = f"frames/{rec.video_id}_{rec.frame_index:06d}.npy"
            np.save(directory / rel, rec.image_ref)
            rec = FrameRecord(rec.video_id, rec.frame_index, rel, rec.au_labels,
                              rec.expr_label, rec.valence, rec.arousal)
        out.append(rec)
    path = directory / manifest_name
    write_manifest(build_index(out, root=directory), path)
    return path


def fold_assignment(video_ids: Sequence[str], folds: int, seed: int = 0) -> dict[str, int]:
    """Deterministic, balanced fold id per video: order by seeded hash, then deal round-robin."""
    keyed = sorted(video_ids, key=lambda v: hashlib.sha256(f"{seed}:{v}".encode()).hexdigest())
    return {v: i % folds for i, v in enumerate(keyed)}
