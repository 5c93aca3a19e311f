"""Dice-loss training loop, step learning-rate schedule and checkpoints."""
from __future__ import annotations

import contextlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .errors import CheckpointError, ConfigError, InputError, TrainingDiverged
from .evaluation import dice_score
from .inference import predict_batch, to_clip_tensor
from .models import BackboneSpec, DecoderConfig, FireSegNet

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "smolder-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lr_init: float = 1e-2
    optimizer: str = "adam"
    epochs: int = 300
    batch_size: int = 5
    lr_step_size: int = 100
    lr_gamma: float = 0.1
    epsilon_dice: float = 1e-6
    seed: int = 0
    deterministic: bool = True
    max_steps: int | None = None  # stop early after this many optimizer steps

    def __post_init__(self):
        if self.lr_init <= 0:
            raise ConfigError(f"train.lr_init must be > 0, got {self.lr_init}")
        if self.optimizer != "adam":
            raise ConfigError(f"train.optimizer must be 'adam', got {self.optimizer!r}")
        if self.epochs < 0:
            raise ConfigError(f"train.epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.lr_step_size < 1:
            raise ConfigError(f"train.lr_step_size must be >= 1, got {self.lr_step_size}")
        if not 0 < self.lr_gamma <= 1:
            raise ConfigError(f"train.lr_gamma must be in (0, 1], got {self.lr_gamma}")
        if self.epsilon_dice <= 0:
            raise ConfigError("train.epsilon_dice must be > 0")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("train.max_steps must be >= 0")


@dataclass
class TrainState:
    epoch: int = 0
    global_step: int = 0
    best_test_dice: float = -math.inf
    lr_current: float = 1e-2
    rng_state: list[int] | None = field(default=None, repr=False)


def dice_loss(p: torch.Tensor, g: torch.Tensor, epsilon: float = 1e-6) -> torch.Tensor:
    """Mean over the batch of ``1 - (2 sum(p g) + eps) / (sum(p^2) + sum(g^2) + eps)``.

    ``p`` holds probabilities and ``g`` binary targets, both shaped (N, ...).
    """
    if p.shape != g.shape:
        raise InputError(f"dice_loss shape mismatch: {tuple(p.shape)} vs {tuple(g.shape)}")
    p = p.reshape(p.shape[0], -1)
    g = g.reshape(g.shape[0], -1).to(p.dtype)
    num = 2 * (p * g).sum(dim=1) + epsilon
    den = (p * p).sum(dim=1) + (g * g).sum(dim=1) + epsilon
    return (1 - num / den).mean()


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    return cfg.lr_init * cfg.lr_gamma ** (epoch // cfg.lr_step_size)


def lr_schedule_step(state: TrainState, cfg: TrainConfig) -> TrainState:
    return replace(state, lr_current=lr_at(state.epoch, cfg))


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(path, model: FireSegNet, state: TrainState, labeling_hash: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "backbone": asdict(model.backbone_spec),
        "decoder": asdict(model.decoder_cfg),
        "labeling_hash": labeling_hash,
        "state": asdict(state),
        "model_state": model.state_dict(),
    }
    torch.save(payload, path)
    return path


def load_checkpoint(
    path,
    backbone: str | None = None,
    labeling_hash: str | None = None,
    device: str = "cpu",
) -> tuple[FireSegNet, TrainState]:
    """Rebuild the model stored at ``path``.

    ``backbone`` and ``labeling_hash``, when given, must match what the
    checkpoint was trained with.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location=device, weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a smolder checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {payload.get('version')} != {CHECKPOINT_VERSION}")
    spec = BackboneSpec(**{**payload["backbone"], "pretrained": False, "weights_path": None})
    if backbone is not None and spec.family != backbone:
        raise CheckpointError(f"{path}: checkpoint backbone {spec.family!r} does not match requested {backbone!r}")
    if labeling_hash is not None and payload.get("labeling_hash") not in (None, labeling_hash):
        raise CheckpointError(f"{path}: labeling config hash {payload['labeling_hash']} != {labeling_hash}")
    model = FireSegNet(spec, DecoderConfig(**payload["decoder"]))
    model.load_state_dict(payload["model_state"])
    model.to(device).eval()
    return model, TrainState(**payload["state"])


# -- training loop -----------------------------------------------------------


@dataclass
class TrainResult:
    state: TrainState
    history: list[dict]
    best_path: Path | None = None
    last_path: Path | None = None


@contextlib.contextmanager
def deterministic_mode(enabled: bool):
    previous = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(enabled)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(previous)


def _batch(clips, idx) -> tuple[torch.Tensor, torch.Tensor]:
    items = [clips[i] for i in idx]
    x = torch.stack([to_clip_tensor(c.frames) for c in items])
    y = torch.stack([torch.as_tensor(c.gt_mask, dtype=torch.float32) for c in items])
    return x, y


def evaluate_split(model, clips, cfg: TrainConfig, device="cpu", threshold=0.5) -> tuple[float, float]:
    """Eval-mode (mean dice loss, mean binary dice score) over ``clips``."""
    losses, dices = [], []
    for start in range(0, len(clips), cfg.batch_size):
        idx = range(start, min(start + cfg.batch_size, len(clips)))
        x, y = _batch(clips, idx)
        logits = predict_batch(model, x, device)
        for lg, gt in zip(logits, y.numpy()):
            probs = torch.sigmoid(torch.as_tensor(lg, dtype=torch.float64))
            losses.append(float(dice_loss(probs[None], torch.as_tensor(gt, dtype=torch.float64)[None], cfg.epsilon_dice)))
            dices.append(dice_score((probs.numpy() > threshold).astype(np.uint8), gt.astype(np.uint8)))
    return float(np.mean(losses)), float(np.mean(dices))


def train_model(
    model: FireSegNet,
    train_clips: Sequence,
    cfg: TrainConfig,
    test_clips: Sequence | None = None,
    run_dir: str | Path | None = None,
    labeling_hash: str | None = None,
    device: str = "cpu",
) -> TrainResult:
    """Adam + Dice loss with a per-epoch step learning rate.

    History rows are ``{"epoch", "split", "dice", "loss", "lr"}``; epoch 0
    rows describe the untrained model.  With ``run_dir`` set, ``ckpt_best.pt``
    (best test dice, or train dice without a test split), ``ckpt_last.pt``
    and ``metrics.jsonl`` are written there.
    """
    if len(train_clips) == 0:
        raise InputError("training split is empty")
    run_dir = Path(run_dir) if run_dir is not None else None
    metrics_fh = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(run_dir / "metrics.jsonl", "w", encoding="utf-8")

    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    model.to(device)
    state = lr_schedule_step(TrainState(), cfg)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=state.lr_current)
    history: list[dict] = []
    result = TrainResult(state, history)

    def record(epoch, split, dice, loss, lr):
        row = {"epoch": epoch, "split": split, "dice": dice, "loss": loss, "lr": lr}
        history.append(row)
        if metrics_fh is not None:
            metrics_fh.write(json.dumps(row) + "\n")
            metrics_fh.flush()

    def checkpoint(name):
        if run_dir is None:
            return None
        state.rng_state = torch.get_rng_state().tolist()
        return save_checkpoint(run_dir / f"ckpt_{name}.pt", model, state, labeling_hash)

    def eval_and_maybe_save(epoch, lr, train_dice=None, train_loss=None):
        if train_dice is None:
            train_loss, train_dice = evaluate_split(model, train_clips, cfg, device)
        record(epoch, "train", train_dice, train_loss, lr)
        score = train_dice
        if test_clips:
            test_loss, score = evaluate_split(model, test_clips, cfg, device)
            record(epoch, "test", score, test_loss, lr)
        if score > state.best_test_dice:
            state.best_test_dice = score
            result.best_path = checkpoint("best")

    try:
        with deterministic_mode(cfg.deterministic):
            eval_and_maybe_save(0, state.lr_current)
            stop = cfg.max_steps is not None and cfg.max_steps == 0
            for epoch in range(cfg.epochs):
                if stop:
                    break
                lr = state.lr_current
                for group in opt.param_groups:
                    group["lr"] = lr
                model.train()
                order = torch.randperm(len(train_clips), generator=gen).tolist()
                losses, dices = [], []
                for start in range(0, len(order), cfg.batch_size):
                    x, y = _batch(train_clips, order[start : start + cfg.batch_size])
                    x, y = x.to(device), y.to(device)
                    probs = torch.sigmoid(model(x)[:, 0])
                    loss = dice_loss(probs, y, cfg.epsilon_dice)
                    if not torch.isfinite(loss):
                        raise TrainingDiverged(
                            f"non-finite loss at epoch {epoch + 1}, step {state.global_step + 1}"
                        )
                    opt.zero_grad(set_to_none=True)
                    loss.backward()
                    opt.step()
                    state.global_step += 1
                    losses.append(loss.item())
                    with torch.no_grad():
                        pred = (probs > 0.5).cpu().numpy().astype(np.uint8)
                        dices.extend(dice_score(p, t) for p, t in zip(pred, y.cpu().numpy().astype(np.uint8)))
                    if cfg.max_steps is not None and state.global_step >= cfg.max_steps:
                        stop = True
                        break
                state.epoch = epoch + 1
                state.lr_current = lr_at(state.epoch, cfg)
                log.info("epoch %d loss %.4f dice %.4f lr %.2e", epoch + 1, np.mean(losses), np.mean(dices), lr)
                eval_and_maybe_save(epoch + 1, lr, float(np.mean(dices)), float(np.mean(losses)))
            result.last_path = checkpoint("last")
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    model.eval()
    return result
