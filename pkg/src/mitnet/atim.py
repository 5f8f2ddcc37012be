"""Adaptive triple interaction: cross-scale fusion and per-pixel dynamic filters."""
from typing import List, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import NEG_SLOPE, zero_biases


def check_scale_set(scales: Sequence[torch.Tensor], channels: Sequence[int]):
    if len(scales) != len(channels):
        raise ValueError(f"expected {len(channels)} scales, got {len(scales)}")
    h, w = scales[0].shape[-2:]
    for i, (x, c) in enumerate(zip(scales, channels)):
        want = (c, h >> i, w >> i)
        if tuple(x.shape[1:]) != want or (h >> i) << i != h or (w >> i) << i != w:
            raise ValueError(f"scale s{i + 1} has shape {tuple(x.shape)}, expected (b, {want})")


class _Resize(nn.Module):
    """Moves a feature map ``steps`` octaves (positive = down) and to ``c_out`` channels."""

    def __init__(self, c_in, c_out, steps):
        super().__init__()
        self.steps = steps
        if steps > 0:
            layers, c = [], c_in
            for i in range(steps):
                nxt = c_out if i == steps - 1 else c * 2
                layers.append(nn.Conv2d(c, nxt, 2, 2))
                c = nxt
            self.body = nn.Sequential(*layers)
        elif steps < 0:
            self.body = nn.Conv2d(c_in, c_out, 1)
        else:
            self.body = nn.Identity()

    def forward(self, x):
        if self.steps < 0:
            x = F.interpolate(x, scale_factor=2 ** -self.steps, mode="bilinear", align_corners=False)
        return self.body(x)


class CrossScaleFusion(nn.Module):
    """Every output scale sees all input scales: 3x3 conv, resize, concat, 1x1."""

    def __init__(self, channels: Sequence[int] = (20, 40, 80)):
        super().__init__()
        self.channels = tuple(channels)
        n = len(channels)
        self.pre = nn.ModuleList(nn.Conv2d(c, c, 3, 1, 1) for c in channels)
        self.resize = nn.ModuleList(
            nn.ModuleList(_Resize(channels[s], channels[t], t - s) for s in range(n))
            for t in range(n)
        )
        self.fuse = nn.ModuleList(nn.Conv2d(n * c, c, 1) for c in channels)
        zero_biases(self)

    def forward(self, scales: Sequence[torch.Tensor]) -> List[torch.Tensor]:
        check_scale_set(scales, self.channels)
        pre = [conv(x) for conv, x in zip(self.pre, scales)]
        out = []
        for t, fuse in enumerate(self.fuse):
            parts = [self.resize[t][s](p) for s, p in enumerate(pre)]
            out.append(fuse(torch.cat(parts, dim=1)))
        return out


class FilterGenerator(nn.Module):
    """Fuses three same-shaped maps into a bank of k*k*c per-pixel kernels.

    Output channel ``t * c + ch`` holds tap ``t`` (row-major over the k x k
    window) of the kernel for channel ``ch``.
    """

    def __init__(self, channels, k=3):
        super().__init__()
        if k % 2 == 0:
            raise ValueError(f"dynamic kernel size must be odd, got {k}")
        self.channels, self.k = channels, k
        self.fuse = nn.Conv2d(3 * channels, channels, 1)
        self.spatial_context = nn.Conv2d(channels, channels, 3, 1, 1, groups=channels)
        self.channel_context = nn.Conv2d(channels, channels, 1)
        self.act = nn.LeakyReLU(NEG_SLOPE)
        self.project = nn.Conv2d(channels, k * k * channels, 1)
        zero_biases(self)

    def channel_branch(self, fused):
        pooled = fused.mean(dim=(2, 3), keepdim=True)
        return self.channel_context(pooled).expand_as(fused)

    def forward(self, fused_d1, fused_e2, d2):
        if not (fused_d1.shape == fused_e2.shape == d2.shape):
            raise ValueError(
                "filter generator inputs differ in shape: "
                f"{tuple(fused_d1.shape)}, {tuple(fused_e2.shape)}, {tuple(d2.shape)}"
            )
        if d2.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {d2.shape[1]}")
        fused = self.fuse(torch.cat([fused_d1, fused_e2, d2], dim=1))
        ctx = self.spatial_context(fused) + self.channel_branch(fused)
        return self.project(self.act(ctx))


def apply_dynamic_filter(d2: torch.Tensor, bank: torch.Tensor) -> torch.Tensor:
    """``d2 * W + d2`` with a separate depthwise k x k kernel at every pixel.

    The window is a correlation over a reflection-padded input:
    out[b, c, i, j] = sum_{u,v} bank[b, (u*k+v)*C + c, i, j] * pad(d2)[b, c, i+u, j+v].
    """
    b, c, h, w = d2.shape
    if bank.dim() != 4 or bank.shape[0] != b or bank.shape[-2:] != d2.shape[-2:]:
        raise ValueError(f"filter bank {tuple(bank.shape)} does not match features {tuple(d2.shape)}")
    kk, rem = divmod(bank.shape[1], c)
    k = int(round(kk ** 0.5))
    if rem or k * k != kk or k % 2 == 0:
        raise ValueError(f"bank has {bank.shape[1]} channels, not k*k*{c} for an odd k")
    pad = (k - 1) // 2
    src = F.pad(d2, (pad,) * 4, mode="reflect") if pad else d2
    # unfold orders its rows channel-major: (c, k*k)
    patches = F.unfold(src, k).view(b, c, kk, h, w)
    kernels = bank.view(b, kk, c, h, w).transpose(1, 2)
    return (patches * kernels).sum(dim=2) + d2


class ADFB(nn.Module):
    def __init__(self, channels, k=3):
        super().__init__()
        self.generator = FilterGenerator(channels, k)

    def forward(self, fused_d1, fused_e2, d2):
        return apply_dynamic_filter(d2, self.generator(fused_d1, fused_e2, d2))
