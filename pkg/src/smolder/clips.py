"""Video ingestion, clip building, train/test splitting and the manifest file.

Manifest format (UTF-8 CSV)::

    # smolder-manifest v1 seq_len=20 policy=crop
    clip_id,split,gt_path,frame_path_1,...,frame_path_T
    scene_000_c0000,train,gt/scene_000_c0000_gt.png,../data/scene_000/rgb/frame_00000.png,...

Relative paths are resolved against the manifest's directory.  Frames are
read back through the same crop/resize policy used at build time.
"""
from __future__ import annotations

import csv
import logging
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Sequence

import cv2
import numpy as np

from . import imageio
from .errors import ConfigError, IngestionError, InputError
from .ir_labeling import LabelingConfig, label_clip, normalize_ir

log = logging.getLogger(__name__)

MANIFEST_VERSION = "v1"
SPLITS = ("train", "test")


@dataclass(frozen=True)
class IngestConfig:
    multiple: int = 32
    policy: Literal["crop", "resize"] = "crop"

    def __post_init__(self):
        if self.policy not in ("crop", "resize"):
            raise ConfigError(f"dataset.policy must be 'crop' or 'resize', got {self.policy!r}")
        if self.multiple < 1:
            raise ConfigError("dataset.multiple must be >= 1")


@dataclass
class Clip:
    frames: np.ndarray  # (T, H, W, 3) float32 in [0, 1]
    gt_mask: np.ndarray  # (H, W) uint8 in {0, 1}
    clip_id: str
    source: Literal["real", "synthetic"] = "real"
    frame_paths: tuple[str, ...] | None = None
    ir_masks: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise InputError(f"clip {self.clip_id}: frames must be (T, H, W, 3), got {frames.shape}")
        h, w = frames.shape[1:3]
        if h % 32 or w % 32:
            raise InputError(f"clip {self.clip_id}: frame size {h}x{w} is not a multiple of 32")
        if np.shape(self.gt_mask) != (h, w):
            raise InputError(f"clip {self.clip_id}: gt mask {np.shape(self.gt_mask)} != frames {h}x{w}")
        frames.setflags(write=False)
        self.frames = frames
        self.gt_mask = np.asarray(self.gt_mask, dtype=np.uint8)

    @property
    def seq_len(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class ManifestRecord:
    clip_id: str
    split: str
    gt_path: str
    frame_paths: tuple[str, ...]


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    seq_len: int = 20
    policy: str = "crop"
    root: Path | None = None  # directory relative paths resolve against

    def __post_init__(self):
        self.check_disjoint()

    @property
    def counts(self) -> dict[str, int]:
        out = {s: 0 for s in SPLITS}
        for r in self.records:
            out[r.split] = out.get(r.split, 0) + 1
        return out

    def split(self, name: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == name]

    def check_disjoint(self) -> None:
        ids: dict[str, str] = {}
        frames: dict[str, str] = {}
        for r in self.records:
            if r.split not in SPLITS:
                raise InputError(f"clip {r.clip_id}: unknown split {r.split!r}")
            if r.clip_id in ids:
                raise InputError(f"duplicate clip id {r.clip_id}")
            ids[r.clip_id] = r.split
            for p in r.frame_paths:
                other = frames.setdefault(p, r.split)
                if other != r.split:
                    raise InputError(f"frame {p} shared between train and test (clip {r.clip_id})")

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() or self.root is None else self.root / p


def fit_to_multiple(img: np.ndarray, multiple: int = 32, policy: str = "crop") -> np.ndarray:
    """Crop bottom/right (or resize) so height and width are multiples of ``multiple``."""
    h, w = img.shape[:2]
    th, tw = h - h % multiple, w - w % multiple
    if th == 0 or tw == 0:
        raise IngestionError(f"frame {h}x{w} is smaller than one {multiple}-pixel block")
    if (th, tw) == (h, w):
        return img
    if policy == "crop":
        return img[:th, :tw]
    return cv2.resize(img, (tw, th), interpolation=cv2.INTER_AREA)


def _read_source(source, gray: bool) -> list:
    """Frames from a directory, a video file, or an in-memory sequence."""
    if isinstance(source, (str, os.PathLike)):
        path = Path(source)
        if path.is_dir():
            return [(p, None) for p in imageio.list_frames(path)]
        if path.suffix.lower() in imageio.VIDEO_EXTS:
            return [(None, f) for f in imageio.read_video(path, gray=gray)]
        raise IngestionError(f"unsupported source {path}")
    return [(None, f) for f in source]


def ingest_video(rgb_source, ir_source, cfg: IngestConfig | None = None):
    """Decode paired RGB and IR sources into index-aligned frame pairs.

    Each source is a frame directory, a video file or a sequence of arrays.
    RGB frames come back as float32 ``(H, W, 3)`` with H, W multiples of
    ``cfg.multiple``; IR frames are normalized to [0, 1] and brought to the
    same size.  Returns ``(pairs, rgb_paths)`` where ``rgb_paths`` holds the
    source file per frame (``None`` for non-file sources).
    """
    cfg = cfg or IngestConfig()
    rgb_items = _read_source(rgb_source, gray=False)
    ir_items = _read_source(ir_source, gray=True)
    if len(rgb_items) != len(ir_items):
        raise IngestionError(f"frame count mismatch: {len(rgb_items)} RGB vs {len(ir_items)} IR")
    pairs, paths = [], []
    size = None
    for i, ((rgb_path, rgb), (ir_path, ir)) in enumerate(zip(rgb_items, ir_items)):
        try:
            if rgb is None:
                rgb = imageio.read_rgb(rgb_path)
            if ir is None:
                ir = imageio.read_gray(ir_path)
        except IngestionError as exc:
            raise IngestionError(f"frame {i}: {exc}") from exc
        rgb = fit_to_multiple(np.asarray(rgb, np.float32), cfg.multiple, cfg.policy)
        if size is None:
            size = rgb.shape[:2]
        elif rgb.shape[:2] != size:
            raise IngestionError(f"frame {i}: RGB size {rgb.shape[:2]} differs from {size}")
        irf = normalize_ir(ir)
        if irf.shape != size:
            irf = _match_ir(irf, size, cfg.policy)
        pairs.append((rgb, irf))
        paths.append(str(rgb_path) if rgb_path is not None else None)
    return pairs, paths


def _match_ir(ir: np.ndarray, size, policy: str) -> np.ndarray:
    h, w = size
    if policy == "crop" and ir.shape[0] >= h and ir.shape[1] >= w and (
        ir.shape[0] - h < 32 and ir.shape[1] - w < 32
    ):
        return ir[:h, :w]
    return cv2.resize(ir, (w, h), interpolation=cv2.INTER_LINEAR)


def build_clips(
    pairs: Sequence,
    seq_len: int = 20,
    labeling_cfg: LabelingConfig | None = None,
    prefix: str = "clip",
    source: str = "real",
    frame_paths: Sequence[str | None] | None = None,
) -> list[Clip]:
    """Cut frame pairs into non-overlapping clips with a majority-vote gt mask."""
    if seq_len < 1:
        raise ConfigError("seq_len must be >= 1")
    n = len(pairs) // seq_len
    if n == 0:
        warnings.warn(f"{prefix}: {len(pairs)} frames < seq_len {seq_len}, no clips built", stacklevel=2)
        return []
    dropped = len(pairs) - n * seq_len
    if dropped:
        log.info("%s: dropping %d trailing frames", prefix, dropped)
    clips = []
    for k in range(n):
        window = pairs[k * seq_len : (k + 1) * seq_len]
        masks, gt = label_clip([ir for _, ir in window], labeling_cfg)
        paths = None
        if frame_paths is not None:
            chunk = frame_paths[k * seq_len : (k + 1) * seq_len]
            if all(p is not None for p in chunk):
                paths = tuple(chunk)
        clips.append(
            Clip(
                frames=np.stack([rgb for rgb, _ in window]),
                gt_mask=gt,
                clip_id=f"{prefix}_c{k:04d}",
                source=source,
                frame_paths=paths,
                ir_masks=np.stack(masks),
            )
        )
    return clips


def split_dataset(clips: Sequence[Clip], test_fraction: float, seed: int = 0) -> DatasetManifest:
    """Assign clips to train/test by a seeded shuffle.

    The test share is ``round(n * test_fraction)`` clamped so both splits are
    nonempty whenever ``n >= 2``.  Records carry the clips' source frame paths
    when known; gt paths are filled in by :func:`write_dataset`.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"dataset.test_fraction must be in (0, 1), got {test_fraction}")
    if len(clips) == 0:
        raise InputError("cannot split an empty clip list")
    ids = [c.clip_id for c in clips]
    if len(set(ids)) != len(ids):
        raise InputError("clip ids must be unique")
    n = len(ids)
    n_test = int(round(n * test_fraction))
    if n >= 2:
        n_test = min(max(n_test, 1), n - 1)
    else:
        n_test = 0
    order = np.random.default_rng(seed).permutation(n)
    test_idx = set(order[:n_test].tolist())
    records = [
        ManifestRecord(
            clip_id=c.clip_id,
            split="test" if i in test_idx else "train",
            gt_path="",
            frame_paths=tuple(c.frame_paths or ()),
        )
        for i, c in enumerate(clips)
    ]
    return DatasetManifest(records, seq_len=clips[0].seq_len)


def write_dataset(
    clips: Sequence[Clip],
    split: DatasetManifest,
    out_dir: str | Path,
    policy: str = "crop",
) -> DatasetManifest:
    """Write gt masks (and frames for in-memory clips) plus ``manifest.csv``."""
    assignment = {r.clip_id: r.split for r in split.records}
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seq_lens = {c.seq_len for c in clips}
    if len(seq_lens) != 1:
        raise InputError(f"clips have mixed lengths {sorted(seq_lens)}")
    records = []
    for clip in clips:
        gt_path = out_dir / "gt" / f"{clip.clip_id}_gt.png"
        imageio.write_mask(gt_path, clip.gt_mask)
        if clip.frame_paths is not None:
            frame_paths = [Path(p).resolve() for p in clip.frame_paths]
        else:
            frame_paths = []
            for t, frame in enumerate(clip.frames):
                p = out_dir / "frames" / clip.clip_id / f"frame_{t:05d}.png"
                imageio.write_rgb(p, frame)
                frame_paths.append(p)
        records.append(
            ManifestRecord(
                clip_id=clip.clip_id,
                split=assignment[clip.clip_id],
                gt_path=_rel(gt_path, out_dir),
                frame_paths=tuple(_rel(p, out_dir) for p in frame_paths),
            )
        )
    manifest = DatasetManifest(records, seq_len=seq_lens.pop(), policy=policy, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.csv")
    return manifest


def _rel(path: Path, base: Path) -> str:
    return os.path.relpath(Path(path).resolve(), base.resolve())


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# smolder-manifest {MANIFEST_VERSION} seq_len={manifest.seq_len} policy={manifest.policy}\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["clip_id", "split", "gt_path"] + [f"frame_path_{i + 1}" for i in range(manifest.seq_len)]
        )
        for r in manifest.records:
            writer.writerow([r.clip_id, r.split, r.gt_path, *r.frame_paths])


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"manifest not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) < 3 or header[1] != "smolder-manifest" or header[2] != MANIFEST_VERSION:
            raise IngestionError(f"{path}: not a {MANIFEST_VERSION} manifest")
        meta = dict(kv.split("=", 1) for kv in header[3:])
        seq_len = int(meta.get("seq_len", 20))
        reader = csv.reader(fh)
        next(reader)
        records = []
        for row in reader:
            if not row:
                continue
            if len(row) != 3 + seq_len:
                raise IngestionError(f"{path}: clip {row[0]} has {len(row) - 3} frames, expected {seq_len}")
            records.append(ManifestRecord(row[0], row[1], row[2], tuple(row[3:])))
    return DatasetManifest(records, seq_len=seq_len, policy=meta.get("policy", "crop"), root=path.parent)


def load_clip(manifest: DatasetManifest, record: ManifestRecord) -> Clip:
    gt_path = manifest.resolve(record.gt_path)
    if not gt_path.is_file():
        raise IngestionError(f"clip {record.clip_id}: missing ground truth {gt_path}")
    gt = imageio.read_mask(gt_path)
    frames = []
    for i, p in enumerate(record.frame_paths):
        try:
            rgb = imageio.read_rgb(manifest.resolve(p))
        except IngestionError as exc:
            raise IngestionError(f"clip {record.clip_id} frame {i}: {exc}") from exc
        frames.append(fit_to_multiple(rgb, 32, manifest.policy))
    return Clip(np.stack(frames), gt, record.clip_id, frame_paths=record.frame_paths)


def load_split(manifest: DatasetManifest, split: str) -> list[Clip]:
    return [load_clip(manifest, r) for r in manifest.split(split)]


def iter_scene_dirs(data_dir: str | Path) -> Iterable[Path]:
    """Scene directories under ``data_dir`` holding ``rgb/`` and ``ir/`` subfolders."""
    data_dir = Path(data_dir)
    if (data_dir / "rgb").is_dir():
        yield data_dir
        return
    for d in sorted(p for p in data_dir.iterdir() if p.is_dir()):
        if (d / "rgb").is_dir() and (d / "ir").is_dir():
            yield d
