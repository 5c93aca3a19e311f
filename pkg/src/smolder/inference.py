"""Clip prediction and stride-based sliding-window inference over long videos.

Each window of ``window`` frames yields one map labelling the window's last
frame, so the first ``window - 1`` frames of a video have no prediction.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np
import torch

from . import imageio
from .errors import ConfigError, InputError, ShapeError


@dataclass(frozen=True)
class InferenceConfig:
    window: int = 20
    stride: int = 1
    binarize_threshold: float = 0.5
    device: str = "cpu"
    batch_size: int = 1

    def __post_init__(self):
        if self.window < 1 or self.stride < 1 or self.batch_size < 1:
            raise ConfigError("infer.window, infer.stride and infer.batch_size must be >= 1")
        if not 0.0 < self.binarize_threshold < 1.0:
            raise ConfigError("infer.binarize_threshold must be in (0, 1)")


@dataclass
class SegmentationMap:
    logits: np.ndarray  # (H, W), or (C, H, W) for multi-class models
    frame_index: int | None = None

    @property
    def probs(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.logits.astype(np.float64)))

    def mask(self, threshold: float = 0.5) -> np.ndarray:
        return (self.probs > threshold).astype(np.uint8)


def to_clip_tensor(frames) -> torch.Tensor:
    """(T, 3, H, W) or (T, H, W, 3) frames -> float32 (3, T, H, W)."""
    if torch.is_tensor(frames):
        x = frames.to(torch.float32)
    else:
        x = torch.tensor(np.asarray(frames), dtype=torch.float32)
    if x.ndim != 4:
        raise ShapeError(f"expected 4-D frame stack, got {tuple(x.shape)}")
    if x.shape[1] != 3 and x.shape[-1] == 3:
        x = x.permute(0, 3, 1, 2)
    if x.shape[1] != 3:
        raise ShapeError(f"frames need 3 channels, got {tuple(x.shape)}")
    return x.permute(1, 0, 2, 3)


def _maps(logits: torch.Tensor) -> list[np.ndarray]:
    out = logits.detach().cpu().numpy()
    return [o[0] if o.shape[0] == 1 else o for o in out]


@torch.no_grad()
def predict_batch(model, clips: torch.Tensor, device: str = "cpu") -> list[np.ndarray]:
    """(N, 3, T, H, W) -> per-clip logits maps; model is switched to eval mode."""
    model.eval()
    return _maps(model(clips.to(device)))


def predict_clip(model, frames, cfg: InferenceConfig | None = None) -> SegmentationMap:
    cfg = cfg or InferenceConfig(window=model.seq_len)
    x = to_clip_tensor(frames)
    if x.shape[1] != cfg.window:
        raise ShapeError(f"clip has {x.shape[1]} frames, window is {cfg.window}")
    return SegmentationMap(predict_batch(model, x[None], cfg.device)[0])


def n_windows(n_frames: int, window: int, stride: int) -> int:
    return (n_frames - window) // stride + 1 if n_frames >= window else 0


def sliding_window_infer(model, video, cfg: InferenceConfig | None = None) -> list[SegmentationMap]:
    """One map per window start ``k * stride``, aligned to frame ``k * stride + window - 1``."""
    cfg = cfg or InferenceConfig(window=model.seq_len)
    if cfg.window != model.seq_len:
        raise ConfigError(f"infer.window ({cfg.window}) must equal the model's seq_len ({model.seq_len})")
    x = to_clip_tensor(video)  # (3, N, H, W)
    total = x.shape[1]
    if total < cfg.window:
        raise InputError(f"video has {total} frames; sliding inference needs at least {cfg.window}")
    # (3, K, H, W, window) view -> windows (K, 3, window, H, W) without copying frames
    windows = x.unfold(1, cfg.window, cfg.stride).permute(1, 0, 4, 2, 3)
    out = []
    for start in range(0, windows.shape[0], cfg.batch_size):
        batch = windows[start : start + cfg.batch_size]
        for j, logits in enumerate(predict_batch(model, batch, cfg.device)):
            k = start + j
            out.append(SegmentationMap(logits, frame_index=k * cfg.stride + cfg.window - 1))
    return out


def overlay(rgb: np.ndarray, pred_mask: np.ndarray, gt_mask: np.ndarray | None = None) -> np.ndarray:
    """RGB frame with the prediction contour in red and optional gt contour in green."""
    img = np.clip(np.rint(np.asarray(rgb) * 255), 0, 255).astype(np.uint8).copy()
    for mask, color in ((gt_mask, (0, 255, 0)), (pred_mask, (255, 0, 0))):
        if mask is None:
            continue
        contours, _ = cv2.findContours(
            (np.asarray(mask) > 0).astype(np.uint8), cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE
        )
        cv2.drawContours(img, contours, -1, color, 1)
    return img.astype(np.float32) / 255.0


def write_maps(
    maps: Sequence[SegmentationMap],
    out_dir: str | Path,
    threshold: float = 0.5,
    frames: Sequence[np.ndarray] | None = None,
) -> None:
    """Write ``prob_XXXXX.png`` (round(255 p)), ``mask_XXXXX.png`` and optional overlays."""
    out_dir = Path(out_dir)
    for m in maps:
        idx = m.frame_index if m.frame_index is not None else 0
        probs = m.probs if m.probs.ndim == 2 else m.probs[0]
        imageio.write_gray(out_dir / f"prob_{idx:05d}.png", probs)
        mask = (probs > threshold).astype(np.uint8)
        imageio.write_mask(out_dir / f"mask_{idx:05d}.png", mask)
        if frames is not None:
            imageio.write_rgb(out_dir / f"overlay_{idx:05d}.png", overlay(frames[idx], mask))
