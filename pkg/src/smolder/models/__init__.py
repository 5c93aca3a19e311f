"""Encoder / temporal-decoder segmentation network."""
from __future__ import annotations

import torch
from torch import nn

from ..errors import ShapeError
from .attention import CBAM3d, SCSE3d
from .decoder import DecoderConfig, DecoderPart1, DecoderPart2
from .encoder import FAMILIES, BackboneEncoder, BackboneSpec, encode_clip, extract_pyramid, stack_temporal

__all__ = [
    "FAMILIES",
    "BackboneEncoder",
    "BackboneSpec",
    "CBAM3d",
    "DecoderConfig",
    "FireSegNet",
    "SCSE3d",
    "build_model",
    "extract_pyramid",
    "stack_temporal",
]


class FireSegNet(nn.Module):
    """Clip (N, 3, T, H, W) in [0, 1] -> fire logits (N, n_classes, H, W)."""

    def __init__(self, backbone: BackboneSpec, decoder: DecoderConfig):
        super().__init__()
        self.backbone_spec = backbone
        self.decoder_cfg = decoder
        self.encoder = BackboneEncoder(backbone)
        self.part1 = DecoderPart1(self.encoder.level_channels, decoder)
        self.part2 = DecoderPart2(decoder)

    @property
    def seq_len(self) -> int:
        return self.decoder_cfg.seq_len

    def forward(self, clip: torch.Tensor) -> torch.Tensor:
        if clip.ndim != 5 or clip.shape[1] != 3:
            raise ShapeError(f"encoder: expected (N, 3, T, H, W), got {tuple(clip.shape)}")
        if clip.shape[2] != self.seq_len:
            raise ShapeError(f"encoder: clip has T={clip.shape[2]}, model expects {self.seq_len}")
        x = self._stage("encoder", encode_clip, self.encoder, clip)
        x = self._stage("decoder_part1", self.part1, x)
        x = self._stage("decoder_part2", self.part2, x)
        return x.squeeze(2)

    @staticmethod
    def _stage(name, fn, *args):
        try:
            return fn(*args)
        except ShapeError as exc:
            raise ShapeError(f"{name}: {exc}") from exc
        except RuntimeError as exc:
            raise ShapeError(f"{name}: {exc}") from exc


def build_model(
    backbone: str = "vgg16",
    attention: str = "scse",
    pretrained: bool = False,
    seq_len: int = 20,
    n_classes: int = 1,
    **decoder_kwargs,
) -> FireSegNet:
    return FireSegNet(
        BackboneSpec(family=backbone, pretrained=pretrained),
        DecoderConfig(attention=attention, seq_len=seq_len, n_classes=n_classes, **decoder_kwargs),
    )
