"""Dice, blob-wise precision and clip-level fire classification.

A predicted blob is a true positive when it covers more than ``overlap``
(default 30%) of some ground-truth blob, measured as intersection over the
gt blob's area (``normalizer="gt"``) or as IoU (``normalizer="iou"``).
A clip is classified as fire when more than ``overlap`` of its gt blobs are
matched; clips without gt blobs count as fire as soon as anything is
predicted.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigError, InputError
from .ir_labeling import EIGHT_CONNECTED


@dataclass(frozen=True)
class EvalConfig:
    overlap: float = 0.30
    normalizer: str = "gt"

    def __post_init__(self):
        if not 0.0 <= self.overlap < 1.0:
            raise ConfigError(f"eval.overlap must be in [0, 1), got {self.overlap}")
        if self.normalizer not in ("gt", "iou"):
            raise ConfigError(f"eval.normalizer must be 'gt' or 'iou', got {self.normalizer!r}")


def _binary(mask, name):
    arr = np.asarray(mask)
    if not np.isin(arr, (0, 1)).all():
        raise InputError(f"{name} must be binary")
    return arr.astype(bool)


def dice_score(pred_mask, gt_mask) -> float:
    """2|P & G| / (|P| + |G|); two empty masks score 1.0."""
    p, g = _binary(pred_mask, "prediction"), _binary(gt_mask, "ground truth")
    if p.shape != g.shape:
        raise InputError(f"shape mismatch: prediction {p.shape} vs ground truth {g.shape}")
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / total


@dataclass(frozen=True)
class Blob:
    flat: np.ndarray = field(repr=False)  # sorted linear pixel indices
    shape: tuple[int, int]
    bbox: tuple[int, int, int, int]  # top, left, bottom, right (inclusive)
    centroid: tuple[float, float]

    @property
    def area(self) -> int:
        return int(self.flat.size)

    @property
    def coords(self) -> np.ndarray:
        return np.stack(np.unravel_index(self.flat, self.shape), axis=1)

    def intersection(self, other: "Blob") -> int:
        return int(np.intersect1d(self.flat, other.flat, assume_unique=True).size)


def extract_blobs(mask) -> list[Blob]:
    """8-connected components ordered by the (top, left) corner of their bbox."""
    m = _binary(mask, "mask")
    if not m.any():
        return []
    labels, n = ndimage.label(m, structure=EIGHT_CONNECTED)
    flat_labels = labels.ravel()
    order = np.argsort(flat_labels, kind="stable")
    bounds = np.searchsorted(flat_labels[order], np.arange(1, n + 2))
    blobs = []
    for k in range(n):
        idx = order[bounds[k] : bounds[k + 1]]
        rows, cols = np.unravel_index(idx, m.shape)
        blobs.append(
            Blob(
                flat=np.sort(idx),
                shape=m.shape,
                bbox=(int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())),
                centroid=(float(rows.mean()), float(cols.mean())),
            )
        )
    blobs.sort(key=lambda b: (b.bbox[0], b.bbox[1]))
    return blobs


def _exceeds(inter: int, denom: int, overlap: float) -> bool:
    # exact rational comparison so a 30% overlap is never rounded above 0.30
    frac = Fraction(overlap).limit_denominator(10**6)
    return denom > 0 and inter * frac.denominator > frac.numerator * denom


def _overlaps(pred: Blob, gt: Blob, cfg: EvalConfig) -> bool:
    inter = pred.intersection(gt)
    denom = gt.area if cfg.normalizer == "gt" else pred.area + gt.area - inter
    return _exceeds(inter, denom, cfg.overlap)


def _match_matrix(pred_blobs, gt_blobs, cfg) -> np.ndarray:
    out = np.zeros((len(pred_blobs), len(gt_blobs)), dtype=bool)
    for i, p in enumerate(pred_blobs):
        for j, g in enumerate(gt_blobs):
            out[i, j] = _overlaps(p, g, cfg)
    return out


def blob_precision(pred_blobs: Sequence[Blob], gt_blobs: Sequence[Blob], cfg: EvalConfig | None = None):
    """Returns ``(tp, fp, precision)``; precision is ``None`` with no predicted blobs."""
    cfg = cfg or EvalConfig()
    hits = _match_matrix(pred_blobs, gt_blobs, cfg)
    tp = int(hits.any(axis=1).sum()) if len(gt_blobs) else 0
    fp = len(pred_blobs) - tp
    precision = tp / (tp + fp) if tp + fp else None
    return tp, fp, precision


def classify_clip(pred_blobs: Sequence[Blob], gt_blobs: Sequence[Blob], cfg: EvalConfig | None = None):
    """Returns ``(gt_is_fire, pred_is_fire)``."""
    cfg = cfg or EvalConfig()
    gt_fire = len(gt_blobs) > 0
    if not gt_fire:
        return False, len(pred_blobs) > 0
    matched = int(_match_matrix(pred_blobs, gt_blobs, cfg).any(axis=0).sum())
    return True, _exceeds(matched, len(gt_blobs), cfg.overlap)


@dataclass
class ClipMetrics:
    clip_id: str
    dice: float
    tp: int
    fp: int
    precision: float | None
    n_gt_blobs: int
    gt_fire: bool
    pred_fire: bool

    @property
    def correct(self) -> bool:
        return self.gt_fire == self.pred_fire


def score_clip(clip_id: str, pred_mask, gt_mask, cfg: EvalConfig | None = None) -> ClipMetrics:
    cfg = cfg or EvalConfig()
    if pred_mask is None:
        raise InputError(f"clip {clip_id}: missing prediction")
    if gt_mask is None:
        raise InputError(f"clip {clip_id}: missing ground truth")
    try:
        dice = dice_score(pred_mask, gt_mask)
    except InputError as exc:
        raise InputError(f"clip {clip_id}: {exc}") from exc
    pb, gb = extract_blobs(pred_mask), extract_blobs(gt_mask)
    tp, fp, prec = blob_precision(pb, gb, cfg)
    gt_fire, pred_fire = classify_clip(pb, gb, cfg)
    return ClipMetrics(clip_id, dice, tp, fp, prec, len(gb), gt_fire, pred_fire)


@dataclass
class MetricsReport:
    clips: list[ClipMetrics]
    mean_dice: float = math.nan
    precision: float | None = None
    accuracy: float = math.nan
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.counts:
            self.recompute()

    def recompute(self) -> "MetricsReport":
        n = len(self.clips)
        defined = [c.precision for c in self.clips if c.precision is not None]
        self.mean_dice = float(np.mean([c.dice for c in self.clips])) if n else math.nan
        self.precision = float(np.mean(defined)) if defined else None
        self.accuracy = sum(c.correct for c in self.clips) / n if n else math.nan
        self.counts = {
            "clips": n,
            "fire_clips": sum(c.gt_fire for c in self.clips),
            "precision_defined": len(defined),
            "tp": sum(c.tp for c in self.clips),
            "fp": sum(c.fp for c in self.clips),
            "correct": sum(c.correct for c in self.clips),
        }
        return self

    def aggregate(self) -> dict:
        return {
            "mean_dice": self.mean_dice,
            "precision": self.precision,
            "accuracy": self.accuracy,
            "counts": dict(self.counts),
        }

    def to_records(self) -> list[dict]:
        rows = [{"kind": "clip", **asdict(c)} for c in self.clips]
        rows.append({"kind": "aggregate", **self.aggregate()})
        return rows

    def write_jsonl(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for row in self.to_records():
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    @classmethod
    def read_jsonl(cls, path: str | Path) -> "MetricsReport":
        clips, agg = [], None
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                row = json.loads(line)
                kind = row.pop("kind")
                if kind == "clip":
                    clips.append(ClipMetrics(**row))
                else:
                    agg = row
        if agg is None:
            return cls(clips)
        return cls(clips, agg["mean_dice"], agg["precision"], agg["accuracy"], agg["counts"])

    def table(self) -> str:
        lines = [f"{'clip_id':<28} {'dice':>7} {'tp':>4} {'fp':>4} {'prec':>7} {'gt':>5} {'pred':>5}"]
        for c in self.clips:
            prec = "-" if c.precision is None else f"{c.precision:.4f}"
            lines.append(
                f"{c.clip_id:<28} {c.dice:>7.4f} {c.tp:>4} {c.fp:>4} {prec:>7} "
                f"{'fire' if c.gt_fire else 'none':>5} {'fire' if c.pred_fire else 'none':>5}"
            )
        prec = "-" if self.precision is None else f"{100 * self.precision:.2f}"
        lines.append(
            f"mean dice {100 * self.mean_dice:.2f}  precision {prec}  "
            f"accuracy {100 * self.accuracy:.2f}  ({self.counts.get('clips', 0)} clips)"
        )
        return "\n".join(lines)


def evaluate_masks(items: Iterable[tuple[str, np.ndarray, np.ndarray]], cfg: EvalConfig | None = None):
    """Score ``(clip_id, pred_mask, gt_mask)`` triples."""
    return MetricsReport([score_clip(cid, p, g, cfg) for cid, p, g in items])


def evaluate_dataset(model, clips, infer_cfg=None, eval_cfg=None) -> MetricsReport:
    """Run the model on every clip and score the binarized maps against the clip gt."""
    from .inference import InferenceConfig, predict_clip

    infer_cfg = infer_cfg or InferenceConfig(window=model.seq_len)
    if len(clips) == 0:
        raise InputError("evaluation split is empty")
    items = []
    for clip in clips:
        seg = predict_clip(model, clip.frames, infer_cfg)
        items.append((clip.clip_id, seg.mask(infer_cfg.binarize_threshold), clip.gt_mask))
    return evaluate_masks(items, eval_cfg)
