"""IR heat map -> binary fire mask labeling.

The chain is: box smoothing, hard threshold relative to the frame maximum,
dilation, hole filling, erosion and small-object removal.  A clip's
per-frame masks are fused into one ground truth by per-pixel majority vote.

Frames are plain 2-D ``float`` arrays in ``[0, 1]``; masks are ``uint8``
arrays holding only 0 and 1.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .errors import ConfigError, InputError

MIN_FRAME_SIZE = 32

# 8-connectivity for foreground blobs, 4-connectivity for background during fill.
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class LabelingConfig:
    smooth_kernel: int = 5
    threshold_fraction: float = 0.85
    dilate_kernel: int = 5
    dilate_iters: int = 2
    erode_kernel: int = 5
    erode_iters: int = 1
    min_blob_area: int = 200
    # even-length clips: a 50/50 split counts as fire
    tie_to_fire: bool = True

    def __post_init__(self):
        for name in ("smooth_kernel", "dilate_kernel", "erode_kernel"):
            k = getattr(self, name)
            if k < 3 or k % 2 == 0:
                raise ConfigError(f"labeling.{name} must be an odd integer >= 3, got {k}")
        for name in ("dilate_iters", "erode_iters", "min_blob_area"):
            if getattr(self, name) < 0:
                raise ConfigError(f"labeling.{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 < self.threshold_fraction <= 1.0:
            raise ConfigError(
                f"labeling.threshold_fraction must be in (0, 1], got {self.threshold_fraction}"
            )

    def digest(self) -> str:
        """Short stable hash, stored in checkpoints to tie a model to its labels."""
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def normalize_ir(raw: np.ndarray) -> np.ndarray:
    """Bring a raw IR frame to float64 in [0, 1].

    8-bit input is divided by 255 and 16-bit by 65535; floating input is
    min-max normalized within the frame (a constant frame maps to zeros).
    Multi-channel input is averaged to one channel.
    """
    arr = np.asarray(raw)
    if arr.ndim == 3:
        arr = arr.mean(axis=2) if arr.dtype.kind == "f" else arr.mean(axis=2).astype(arr.dtype)
    if arr.ndim != 2:
        raise InputError(f"IR frame must be 2-D, got shape {arr.shape}")
    if min(arr.shape) < MIN_FRAME_SIZE:
        raise InputError(f"IR frame must be at least {MIN_FRAME_SIZE}x{MIN_FRAME_SIZE}, got {arr.shape}")
    if arr.dtype == np.uint8:
        out = arr.astype(np.float64) / 255.0
    elif arr.dtype == np.uint16:
        out = arr.astype(np.float64) / 65535.0
    elif arr.dtype.kind == "f":
        out = arr.astype(np.float64)
        if not np.all(np.isfinite(out)):
            raise InputError("IR frame contains non-finite values")
        lo, hi = out.min(), out.max()
        out = (out - lo) / (hi - lo) if hi > lo else np.zeros_like(out)
    else:
        raise InputError(f"unsupported IR dtype {arr.dtype}")
    return out


def smooth_frame(frame: np.ndarray, kernel: int) -> np.ndarray:
    """Square mean filter with edge-replicated borders."""
    frame = np.asarray(frame, dtype=np.float64)
    if kernel < 1 or kernel % 2 == 0:
        raise ConfigError(f"smoothing kernel must be odd, got {kernel}")
    if kernel > min(frame.shape):
        raise ConfigError(f"smoothing kernel {kernel} exceeds frame size {frame.shape}")
    r = kernel // 2
    padded = np.pad(frame, r, mode="edge")
    out = sliding_window_view(padded, (kernel, kernel)).mean(axis=(-2, -1))
    # rounding in the mean may step one ulp outside the input range
    return np.clip(out, frame.min(), frame.max())


def threshold_frame(frame: np.ndarray, threshold_fraction: float) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size == 0:
        raise InputError("cannot threshold an empty frame")
    if not 0.0 < threshold_fraction <= 1.0:
        raise ConfigError(f"threshold_fraction must be in (0, 1], got {threshold_fraction}")
    peak = frame.max()
    if peak <= 0:
        return np.zeros(frame.shape, dtype=np.uint8)
    return (frame >= threshold_fraction * peak).astype(np.uint8)


def dilate(mask: np.ndarray, kernel: int, iterations: int) -> np.ndarray:
    """Square-kernel dilation; pixels outside the image count as background."""
    out = np.asarray(mask, dtype=bool)
    if iterations == 0:
        return out.astype(np.uint8)
    # scipy treats iterations=0 as "until stable", hence the guard above
    out = ndimage.binary_dilation(
        out, structure=np.ones((kernel, kernel), bool), iterations=iterations, border_value=0
    )
    return out.astype(np.uint8)


def erode(mask: np.ndarray, kernel: int, iterations: int) -> np.ndarray:
    """Square-kernel erosion; pixels outside the image count as background."""
    out = np.asarray(mask, dtype=bool)
    if iterations == 0:
        return out.astype(np.uint8)
    out = ndimage.binary_erosion(
        out, structure=np.ones((kernel, kernel), bool), iterations=iterations, border_value=0
    )
    return out.astype(np.uint8)


def fill_holes(mask: np.ndarray) -> np.ndarray:
    """Set background regions not 4-connected to the image border to 1."""
    return ndimage.binary_fill_holes(np.asarray(mask, bool), structure=FOUR_CONNECTED).astype(np.uint8)


def remove_small_objects(mask: np.ndarray, min_area: int) -> np.ndarray:
    """Drop 8-connected components with area strictly below ``min_area``."""
    mask = np.asarray(mask, dtype=bool)
    if min_area <= 0 or not mask.any():
        return mask.astype(np.uint8)
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    keep = areas >= min_area
    keep[0] = False
    return keep[labels].astype(np.uint8)


def refine_mask(mask: np.ndarray, cfg: LabelingConfig) -> np.ndarray:
    mask = np.asarray(mask)
    if not np.isin(mask, (0, 1)).all():
        raise InputError("refine_mask expects a binary {0,1} mask")
    out = dilate(mask, cfg.dilate_kernel, cfg.dilate_iters)
    out = fill_holes(out)
    out = erode(out, cfg.erode_kernel, cfg.erode_iters)
    return remove_small_objects(out, cfg.min_blob_area)


def label_ir_frame(frame: np.ndarray, cfg: LabelingConfig | None = None) -> np.ndarray:
    """Full labeling chain for one normalized IR frame."""
    cfg = cfg or LabelingConfig()
    smoothed = smooth_frame(frame, cfg.smooth_kernel)
    return refine_mask(threshold_frame(smoothed, cfg.threshold_fraction), cfg)


def majority_vote(masks: Sequence[np.ndarray], tie_to_fire: bool = True) -> np.ndarray:
    """Fuse T binary masks into one by per-pixel majority.

    A pixel is 1 when more than half the masks mark it.  With an even T and
    an exact half split the result is ``tie_to_fire``.
    """
    if len(masks) == 0:
        raise InputError("majority_vote needs at least one mask")
    shape = np.shape(masks[0])
    for i, m in enumerate(masks):
        if np.shape(m) != shape:
            raise InputError(f"mask {i} has shape {np.shape(m)}, expected {shape}")
    stack = np.stack([np.asarray(m, dtype=np.int32) for m in masks])
    votes = 2 * stack.sum(axis=0)
    t = len(masks)
    fused = votes >= t if tie_to_fire else votes > t
    return fused.astype(np.uint8)


def label_clip(ir_frames: Sequence[np.ndarray], cfg: LabelingConfig | None = None):
    """Label every frame of a clip and fuse them.

    Returns ``(per_frame_masks, fused_mask)``.
    """
    cfg = cfg or LabelingConfig()
    masks = [label_ir_frame(f, cfg) for f in ir_frames]
    return masks, majority_vote(masks, tie_to_fire=cfg.tie_to_fire)
