"""Temporal 3-D decoder.

Part 1 is a U-Net style decoder over stacked pyramids that keeps the time
axis; Part 2 shrinks time with (k, 1, 1) convolutions until one frame is left.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from ..errors import ConfigError, ShapeError
from .attention import ATTENTION

# Part 2 always leaves exactly this many frames for the final convolution.
PART2_RESIDUAL = 2


@dataclass(frozen=True)
class DecoderConfig:
    attention: str = "scse"
    n_classes: int = 1
    part1_channels: tuple[int, ...] | None = None  # None: halve from the bottleneck width
    time_kernel: int = 4
    n_time_blocks: int = 6
    seq_len: int = 20
    reduction: int = 16

    def __post_init__(self):
        if self.attention not in ATTENTION:
            raise ConfigError(f"model.attention must be one of {sorted(ATTENTION)}, got {self.attention!r}")
        if self.n_classes < 1:
            raise ConfigError("model.n_classes must be >= 1")
        if self.part1_channels is not None:
            object.__setattr__(self, "part1_channels", tuple(int(c) for c in self.part1_channels))
            if len(self.part1_channels) != 5 or min(self.part1_channels) < 2:
                raise ConfigError("model.part1_channels needs 5 widths, each >= 2")
        if self.time_kernel < 2 or self.n_time_blocks < 0:
            raise ConfigError("time_kernel must be >= 2 and n_time_blocks >= 0")
        left = self.seq_len - self.n_time_blocks * (self.time_kernel - 1)
        if left != PART2_RESIDUAL:
            raise ConfigError(
                f"seq_len - n_time_blocks*(time_kernel-1) must equal {PART2_RESIDUAL}, got "
                f"{self.seq_len} - {self.n_time_blocks}*{self.time_kernel - 1} = {left}"
            )

    def widths(self, bottleneck: int) -> tuple[int, ...]:
        if self.part1_channels is not None:
            return self.part1_channels
        return tuple(max(bottleneck // 2**i, 2) for i in range(5))


def conv_block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv3d(cin, cout, 3, padding=1, bias=False),
        nn.BatchNorm3d(cout),
        nn.ReLU(inplace=True),
    )


def upsample(cin: int, cout: int) -> nn.ConvTranspose3d:
    return nn.ConvTranspose3d(cin, cout, kernel_size=(1, 2, 2), stride=(1, 2, 2))


class DecoderPart1(nn.Module):
    """Five {conv -> attention -> 1x2x2 transposed conv} stages, coarse to fine.

    Skip levels are concatenated after each upsampling; the last stage's
    upsampling produces ``n_classes`` channels at full resolution.
    """

    def __init__(self, level_channels, cfg: DecoderConfig):
        super().__init__()
        if len(level_channels) != 5:
            raise ConfigError(f"expected 5 pyramid levels, got {len(level_channels)}")
        self.level_channels = tuple(level_channels)
        widths = cfg.widths(self.level_channels[-1])
        att = ATTENTION[cfg.attention]
        skips = list(reversed(self.level_channels))  # /32, /16, /8, /4, /2
        self.convs = nn.ModuleList()
        self.attns = nn.ModuleList()
        self.ups = nn.ModuleList()
        cin = skips[0]
        for i, w in enumerate(widths):
            self.convs.append(conv_block(cin, w))
            self.attns.append(att(w, cfg.reduction))
            last = i == len(widths) - 1
            self.ups.append(upsample(w, cfg.n_classes if last else w))
            if not last:
                cin = w + skips[i + 1]

    def forward(self, levels: list[torch.Tensor]) -> torch.Tensor:
        if len(levels) != 5:
            raise ShapeError(f"expected 5 pyramid levels, got {len(levels)}")
        for lvl, (x, c) in enumerate(zip(levels, self.level_channels), start=1):
            if x.ndim != 5 or x.shape[1] != c:
                raise ShapeError(f"level {lvl}: expected (N, {c}, T, h, w), got {tuple(x.shape)}")
        skips = levels[::-1]
        x = skips[0]
        for i, (conv, attn, up) in enumerate(zip(self.convs, self.attns, self.ups)):
            x = up(attn(conv(x)))
            if i + 1 < len(skips):
                skip = skips[i + 1]
                if x.shape[2:] != skip.shape[2:]:
                    raise ShapeError(
                        f"stage {i}: upsampled {tuple(x.shape[2:])} does not match skip {tuple(skip.shape[2:])}"
                    )
                x = torch.cat([x, skip], dim=1)
        return x


class TimeBlock(nn.Sequential):
    def __init__(self, channels: int, kernel: int):
        super().__init__(
            nn.Conv3d(channels, channels, (kernel, 1, 1)),
            nn.BatchNorm3d(channels),
            nn.ReLU(inplace=True),
        )


class DecoderPart2(nn.Module):
    """Time blocks shrinking T by ``time_kernel - 1`` each, then a final (2, 1, 1) conv."""

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        self.seq_len = cfg.seq_len
        self.blocks = nn.ModuleList(TimeBlock(cfg.n_classes, cfg.time_kernel) for _ in range(cfg.n_time_blocks))
        self.final = nn.Conv3d(cfg.n_classes, cfg.n_classes, (PART2_RESIDUAL, 1, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 5 or x.shape[2] != self.seq_len:
            raise ShapeError(f"part 2 expects (N, C, {self.seq_len}, H, W), got {tuple(x.shape)}")
        for block in self.blocks:
            x = block(x)
        return self.final(x)
