"""Per-frame 2-D backbone returning a 5-level feature pyramid (strides 2..32)."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn
from torchvision import models as tvm

from ..errors import BackboneLoadError, ConfigError, ShapeError

FAMILIES = ("vgg16", "resnet18", "efficientnet_b0", "efficientnet_b1", "mobilenet")

# "mobilenet" resolves to the smallest torchvision variant
MOBILENET_VARIANT = "mobilenet_v3_small"

LEVEL_CHANNELS = {
    "vgg16": (64, 128, 256, 512, 512),
    "resnet18": (64, 64, 128, 256, 512),
    "efficientnet_b0": (16, 24, 40, 112, 320),
    "efficientnet_b1": (16, 24, 40, 112, 320),
    "mobilenet": (16, 16, 24, 48, 96),
}

_TV_BUILDERS = {
    "vgg16": (tvm.vgg16, tvm.VGG16_Weights),
    "resnet18": (tvm.resnet18, tvm.ResNet18_Weights),
    "efficientnet_b0": (tvm.efficientnet_b0, tvm.EfficientNet_B0_Weights),
    "efficientnet_b1": (tvm.efficientnet_b1, tvm.EfficientNet_B1_Weights),
    "mobilenet": (tvm.mobilenet_v3_small, tvm.MobileNet_V3_Small_Weights),
}

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class BackboneSpec:
    family: str = "vgg16"
    pretrained: bool = True
    weights_path: str | None = None
    freeze: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"model.backbone must be one of {FAMILIES}, got {self.family!r}")

    @property
    def level_channels(self) -> tuple[int, ...]:
        return LEVEL_CHANNELS[self.family]

    @property
    def variant(self) -> str:
        return MOBILENET_VARIANT if self.family == "mobilenet" else self.family


def _load_torchvision(spec: BackboneSpec) -> nn.Module:
    build, weights_enum = _TV_BUILDERS[spec.family]
    net = build(weights=None)
    if not spec.pretrained:
        return net
    if spec.weights_path:
        path = Path(spec.weights_path)
        if not path.is_file():
            raise BackboneLoadError(f"backbone weights not found: {path}")
        state = torch.load(path, map_location="cpu", weights_only=True)
    else:
        try:
            state = weights_enum.DEFAULT.get_state_dict(progress=False)
        except Exception as exc:  # download or cache failure
            raise BackboneLoadError(
                f"pretrained {spec.variant} weights unavailable ({exc}); "
                "set model.weights_path or model.pretrained=false"
            ) from exc
    try:
        net.load_state_dict(state)
    except RuntimeError as exc:
        raise BackboneLoadError(f"weights do not match {spec.variant}: {exc}") from exc
    return net


def _stages(family: str, net: nn.Module) -> list[nn.Module]:
    if family == "vgg16":
        f = net.features
        # max-pool outputs: strides 2, 4, 8, 16, 32
        return [f[0:5], f[5:10], f[10:17], f[17:24], f[24:31]]
    if family == "resnet18":
        return [
            nn.Sequential(net.conv1, net.bn1, net.relu),
            nn.Sequential(net.maxpool, net.layer1),
            net.layer2,
            net.layer3,
            net.layer4,
        ]
    f = net.features
    if family.startswith("efficientnet"):
        return [f[0:2], f[2], f[3], f[4:6], f[6:8]]
    return [f[0:1], f[1:2], f[2:4], f[4:9], f[9:12]]


class BackboneEncoder(nn.Module):
    """Wraps a torchvision classifier and exposes its last activation at each stride.

    Input frames are RGB in [0, 1]; ImageNet normalization happens here.
    """

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        self.spec = spec
        self.stages = nn.ModuleList(_stages(spec.family, _load_torchvision(spec)))
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1), persistent=False)
        if spec.freeze:
            for p in self.parameters():
                p.requires_grad_(False)

    @property
    def level_channels(self) -> tuple[int, ...]:
        return self.spec.level_channels

    def forward(self, frames: torch.Tensor) -> list[torch.Tensor]:
        return extract_pyramid(self, frames)


def extract_pyramid(encoder: BackboneEncoder, frames: torch.Tensor) -> list[torch.Tensor]:
    """(N, 3, H, W) -> five maps (N, C_l, H / 2**l, W / 2**l), l = 1..5."""
    if frames.ndim != 4 or frames.shape[1] != 3:
        raise ShapeError(f"expected frames of shape (N, 3, H, W), got {tuple(frames.shape)}")
    h, w = frames.shape[-2:]
    if h % 32 or w % 32:
        raise ShapeError(f"frame size {h}x{w} must be divisible by 32")
    x = (frames - encoder.mean) / encoder.std
    levels = []
    for stage in encoder.stages:
        x = stage(x)
        levels.append(x)
    return levels


def stack_temporal(pyramids: list[list[torch.Tensor]]) -> list[torch.Tensor]:
    """Stack T per-frame pyramids into five (N, C_l, T, h_l, w_l) volumes."""
    if not pyramids:
        raise ShapeError("need at least one pyramid to stack")
    ref = [p.shape for p in pyramids[0]]
    for t, pyr in enumerate(pyramids):
        if len(pyr) != len(ref) or [p.shape for p in pyr] != ref:
            raise ShapeError(f"pyramid {t} shapes {[tuple(p.shape) for p in pyr]} differ from frame 0")
    return [torch.stack([pyr[l] for pyr in pyramids], dim=2) for l in range(len(ref))]


def encode_clip(encoder: BackboneEncoder, clip: torch.Tensor) -> list[torch.Tensor]:
    """(N, 3, T, H, W) -> stacked pyramid, encoding all frames as one batch."""
    n, c, t, h, w = clip.shape
    flat = clip.permute(0, 2, 1, 3, 4).reshape(n * t, c, h, w)
    out = []
    for level in extract_pyramid(encoder, flat):
        _, cl, hl, wl = level.shape
        out.append(level.reshape(n, t, cl, hl, wl).permute(0, 2, 1, 3, 4))
    return out
