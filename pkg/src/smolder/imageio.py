"""PNG and video frame reading/writing on top of OpenCV."""
from __future__ import annotations

import re
from pathlib import Path

import cv2
import numpy as np

from .errors import IngestionError

FRAME_EXTS = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")
VIDEO_EXTS = (".mp4", ".avi", ".mov", ".mkv")

_INDEX_RE = re.compile(r"(\d+)(?!.*\d)")


def frame_index(path: Path) -> int:
    m = _INDEX_RE.search(Path(path).stem)
    if m is None:
        raise IngestionError(f"no frame index in file name {path}")
    return int(m.group(1))


def list_frames(directory: str | Path) -> list[Path]:
    """Frame files in a directory ordered by the trailing number in their names."""
    directory = Path(directory)
    if not directory.is_dir():
        raise IngestionError(f"frame directory not found: {directory}")
    files = [p for p in directory.iterdir() if p.suffix.lower() in FRAME_EXTS]
    return sorted(files, key=frame_index)


def read_rgb(path: str | Path) -> np.ndarray:
    """Read an image as float32 RGB in [0, 1]."""
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise IngestionError(f"unreadable frame: {path}")
    scale = 65535.0 if img.dtype == np.uint16 else 255.0
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    elif img.shape[2] == 4:
        img = img[:, :, :3]
    img = cv2.cvtColor(img, cv2.COLOR_BGR2RGB)
    return img.astype(np.float32) / scale


def read_gray(path: str | Path) -> np.ndarray:
    """Read a single-channel image keeping its native dtype (uint8 or uint16)."""
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise IngestionError(f"unreadable frame: {path}")
    if img.ndim == 3:
        img = cv2.cvtColor(img[:, :, :3], cv2.COLOR_BGR2GRAY)
    return img


def read_video(path: str | Path, gray: bool = False) -> list[np.ndarray]:
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise IngestionError(f"cannot open video {path}")
    frames = []
    try:
        while True:
            ok, img = cap.read()
            if not ok:
                break
            if gray:
                frames.append(cv2.cvtColor(img, cv2.COLOR_BGR2GRAY))
            else:
                frames.append(cv2.cvtColor(img, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0)
    finally:
        cap.release()
    return frames


def write_rgb(path: str | Path, rgb: np.ndarray) -> None:
    img = np.clip(np.rint(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)
    _write(path, cv2.cvtColor(img, cv2.COLOR_RGB2BGR))


def write_gray(path: str | Path, values: np.ndarray) -> None:
    """Write a [0, 1] float map as 8-bit, value = round(255 * v)."""
    img = np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    _write(path, img)


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    _write(path, (np.asarray(mask) > 0).astype(np.uint8) * 255)


def read_mask(path: str | Path) -> np.ndarray:
    img = read_gray(path)
    return (img > 0).astype(np.uint8)


def _write(path, img):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), img):
        raise IngestionError(f"failed to write {path}")
