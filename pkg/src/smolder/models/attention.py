"""Channel/spatial attention blocks adapted to (N, C, T, h, w) volumes.

Channel gates pool over (T, h, w); spatial gates are computed per voxel.
"""
import torch
from torch import nn


def _hidden(channels: int, reduction: int) -> int:
    return max(channels // reduction, 1)


class SCSE3d(nn.Module):
    """Concurrent channel and spatial squeeze-and-excitation, fused by max."""

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        hidden = _hidden(channels, reduction)
        self.cse = nn.Sequential(
            nn.AdaptiveAvgPool3d(1),
            nn.Conv3d(channels, hidden, 1),
            nn.ReLU(inplace=True),
            nn.Conv3d(hidden, channels, 1),
            nn.Sigmoid(),
        )
        self.sse = nn.Sequential(nn.Conv3d(channels, 1, 1), nn.Sigmoid())

    def channel_gate(self, x):
        return self.cse(x)

    def spatial_gate(self, x):
        return self.sse(x)

    def forward(self, x):
        return torch.maximum(x * self.cse(x), x * self.sse(x))


class ChannelGate3d(nn.Module):
    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        hidden = _hidden(channels, reduction)
        self.mlp = nn.Sequential(
            nn.Conv3d(channels, hidden, 1, bias=False),
            nn.ReLU(inplace=True),
            nn.Conv3d(hidden, channels, 1, bias=False),
        )

    def forward(self, x):
        avg = self.mlp(x.mean(dim=(2, 3, 4), keepdim=True))
        mx = self.mlp(x.amax(dim=(2, 3, 4), keepdim=True))
        return torch.sigmoid(avg + mx)


class SpatialGate3d(nn.Module):
    def __init__(self, kernel: int = 7):
        super().__init__()
        pad = kernel // 2
        self.conv = nn.Conv3d(2, 1, (1, kernel, kernel), padding=(0, pad, pad), bias=False)

    def forward(self, x):
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(pooled))


class CBAM3d(nn.Module):
    """Channel attention followed by spatial attention."""

    def __init__(self, channels: int, reduction: int = 16, kernel: int = 7):
        super().__init__()
        self.ca = ChannelGate3d(channels, reduction)
        self.sa = SpatialGate3d(kernel)

    def channel_gate(self, x):
        return self.ca(x)

    def spatial_gate(self, x):
        return self.sa(x * self.ca(x))

    def forward(self, x):
        x = x * self.ca(x)
        return x * self.sa(x)


ATTENTION = {"scse": SCSE3d, "cbam": CBAM3d}
