"""Synthetic RGB/IR scene generator for desk-scale runs and tests.

A static hot disk in the IR channel marks the fire; in RGB the same spot is
only visible through a soft white plume that starts there and drifts away
while growing.  Everything is a pure function of the config (seed included).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import cv2
import numpy as np

from .errors import ConfigError

GREEN = np.array([0.20, 0.42, 0.16], np.float32)
BROWN = np.array([0.42, 0.31, 0.17], np.float32)
IR_BACKGROUND = 0.1


@dataclass(frozen=True)
class SynthSceneConfig:
    height: int = 64
    width: int = 64
    n_frames: int = 20
    plume_origin: tuple[float, float] = (32.0, 32.0)
    plume_drift: tuple[float, float] = (-0.5, 1.0)
    plume_growth: float = 0.4
    plume_radius: float = 4.0
    plume_opacity: float = 0.85
    hotspot_radius: float = 10.0
    noise_std: float = 0.02
    seed: int = 0
    seq_len: int = 20

    def __post_init__(self):
        if self.height % 32 or self.width % 32 or self.height <= 0 or self.width <= 0:
            raise ConfigError(f"canvas {self.height}x{self.width} must be a positive multiple of 32")
        if self.n_frames < self.seq_len:
            raise ConfigError(f"n_frames ({self.n_frames}) must be >= seq_len ({self.seq_len})")
        r, c = self.plume_origin
        rad = self.hotspot_radius
        if rad <= 0 or r - rad < 0 or c - rad < 0 or r + rad > self.height - 1 or c + rad > self.width - 1:
            raise ConfigError(
                f"hotspot of radius {rad} at {self.plume_origin} does not fit in "
                f"{self.height}x{self.width} canvas"
            )
        if self.noise_std < 0 or self.plume_radius <= 0 or not 0 <= self.plume_opacity <= 1:
            raise ConfigError("noise_std >= 0, plume_radius > 0 and plume_opacity in [0, 1] required")


def _background(cfg: SynthSceneConfig, rng: np.random.Generator) -> np.ndarray:
    coarse = rng.random((cfg.height // 16 + 1, cfg.width // 16 + 1)).astype(np.float32)
    mix = cv2.resize(coarse, (cfg.width, cfg.height), interpolation=cv2.INTER_CUBIC)
    mix = np.clip(mix, 0.0, 1.0)[:, :, None]
    fine = rng.normal(0.0, 0.03, (cfg.height, cfg.width, 1)).astype(np.float32)
    return np.clip(GREEN * (1 - mix) + BROWN * mix + fine, 0.0, 1.0)


def plume_center(cfg: SynthSceneConfig, t: int) -> tuple[float, float]:
    return (cfg.plume_origin[0] + cfg.plume_drift[0] * t, cfg.plume_origin[1] + cfg.plume_drift[1] * t)


def plume_density(cfg: SynthSceneConfig, t: int) -> np.ndarray:
    """Plume density in [0, 1] at frame ``t`` (Gaussian, width grows linearly)."""
    rows, cols = np.mgrid[0 : cfg.height, 0 : cfg.width].astype(np.float32)
    cr, cc = plume_center(cfg, t)
    sigma = cfg.plume_radius + cfg.plume_growth * t
    return np.exp(-((rows - cr) ** 2 + (cols - cc) ** 2) / (2 * sigma**2))


def hotspot_mask(cfg: SynthSceneConfig) -> np.ndarray:
    rows, cols = np.mgrid[0 : cfg.height, 0 : cfg.width]
    r, c = cfg.plume_origin
    return ((rows - r) ** 2 + (cols - c) ** 2 <= cfg.hotspot_radius**2).astype(np.uint8)


def generate_synthetic_scene(cfg: SynthSceneConfig) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Render ``cfg.n_frames`` frames.

    Returns ``(rgb_frames, ir_frames)``: float32 ``(H, W, 3)`` RGB and float64
    ``(H, W)`` IR, both in [0, 1].
    """
    rng = np.random.default_rng(cfg.seed)
    background = _background(cfg, rng)
    ir = np.where(hotspot_mask(cfg) > 0, 1.0, IR_BACKGROUND)
    rgb_frames, ir_frames = [], []
    for t in range(cfg.n_frames):
        alpha = (cfg.plume_opacity * plume_density(cfg, t))[:, :, None]
        frame = background * (1 - alpha) + alpha
        if cfg.noise_std > 0:
            frame = frame + rng.normal(0.0, cfg.noise_std, frame.shape).astype(np.float32)
        rgb_frames.append(np.clip(frame, 0.0, 1.0).astype(np.float32))
        ir_frames.append(ir.copy())
    return rgb_frames, ir_frames


def random_scene_config(seed: int, height: int = 64, width: int = 64, n_frames: int = 20, **overrides):
    """Scene with a seed-dependent hotspot position and plume direction."""
    rng = np.random.default_rng(seed)
    rad = overrides.pop("hotspot_radius", 10.0)
    margin = rad + 4
    origin = (float(rng.uniform(margin, height - 1 - margin)), float(rng.uniform(margin, width - 1 - margin)))
    angle = rng.uniform(0, 2 * np.pi)
    speed = rng.uniform(0.6, 1.2)
    base = SynthSceneConfig(
        height=height,
        width=width,
        n_frames=n_frames,
        plume_origin=origin,
        plume_drift=(float(speed * np.sin(angle)), float(speed * np.cos(angle))),
        hotspot_radius=rad,
        seed=seed,
    )
    return replace(base, **overrides)
