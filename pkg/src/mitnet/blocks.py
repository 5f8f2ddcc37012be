"""Feature blocks shared by both stages: RAB/RPB, SAM and resolution changes."""
from dataclasses import dataclass

import torch
import torch.nn as nn

from .spectral import SpectralPair, recompose, split

NEG_SLOPE = 0.2
SPECTRAL_BRANCHES = ("amplitude", "phase", "none")


@dataclass(frozen=True)
class BlockConfig:
    channels: int
    spectral_branch: str = "amplitude"

    def __post_init__(self):
        if self.channels <= 0:
            raise ValueError(f"channels must be positive, got {self.channels}")
        if self.spectral_branch not in SPECTRAL_BRANCHES:
            raise ValueError(
                f"spectral_branch must be one of {SPECTRAL_BRANCHES}, got {self.spectral_branch!r}"
            )


def zero_biases(module: nn.Module):
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)) and m.bias is not None:
            nn.init.zeros_(m.bias)


def _check_channels(x, channels, name):
    if x.dim() != 4 or x.shape[1] != channels:
        raise ValueError(f"{name} expects (b, {channels}, h, w), got {tuple(x.shape)}")


class SpatialResidual(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.act = nn.LeakyReLU(NEG_SLOPE)
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1)

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(x)))


class SpectralTransform(nn.Module):
    """Two 1x1 convs on one spectral plane, leaky-ReLU in between."""

    def __init__(self, channels, non_negative=False):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 1)
        self.act = nn.LeakyReLU(NEG_SLOPE)
        self.conv2 = nn.Conv2d(channels, channels, 1)
        self.non_negative = non_negative
        self.identity = False

    def freeze_identity(self):
        """Replace the transform by the identity map (used for ablation checks)."""
        self.identity = True
        for p in self.parameters():
            p.requires_grad_(False)
        return self

    def forward(self, plane):
        if self.identity:
            return plane
        out = self.conv2(self.act(self.conv1(plane)))
        return out.abs() if self.non_negative else out


class ResidualSpectralBlock(nn.Module):
    """Spatial residual branch plus a frequency branch on one spectral plane.

    ``spectral_branch="amplitude"`` gives the RAB, ``"phase"`` the RPB and
    ``"none"`` a plain spatial residual block.
    """

    def __init__(self, cfg: BlockConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.spatial = SpatialResidual(c)
        if cfg.spectral_branch == "none":
            self.transform = None
            self.fuse = None
        else:
            self.transform = SpectralTransform(c, non_negative=cfg.spectral_branch == "amplitude")
            self.fuse = nn.Conv2d(2 * c, c, 1)
        zero_biases(self)

    def frequency_features(self, f_spa):
        amp, pha = split(f_spa, check=False)
        if self.cfg.spectral_branch == "amplitude":
            amp = self.transform(amp)
        else:
            pha = self.transform(pha)
        return recompose(SpectralPair(amp, pha), strict=False)

    def forward(self, x):
        _check_channels(x, self.cfg.channels, type(self).__name__)
        f_spa = self.spatial(x)
        if self.transform is None:
            return f_spa
        f_fre = self.frequency_features(f_spa)
        return self.fuse(torch.cat([f_spa, f_fre], dim=1))


def RAB(channels):
    return ResidualSpectralBlock(BlockConfig(channels, "amplitude"))


def RPB(channels):
    return ResidualSpectralBlock(BlockConfig(channels, "phase"))


class SAM(nn.Module):
    """Supervised attention between the stages.

    Returns the restored image (residual on ``input_image``) and the stage
    features gated by an attention map computed from that image.
    """

    def __init__(self, channels, image_channels=3):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.conv2 = nn.Conv2d(channels, image_channels, 3, 1, 1)
        self.conv3 = nn.Conv2d(image_channels, channels, 3, 1, 1)
        self.channels = channels
        zero_biases(self)

    def attention(self, restored):
        return torch.sigmoid(self.conv3(restored))

    def forward(self, features, input_image):
        _check_channels(features, self.channels, "SAM")
        if features.shape[-2:] != input_image.shape[-2:]:
            raise ValueError(
                f"SAM spatial mismatch: features {tuple(features.shape[-2:])} "
                f"vs image {tuple(input_image.shape[-2:])}"
            )
        restored = self.conv2(features) + input_image
        gated = self.conv1(features) * self.attention(restored) + features
        return restored, gated


class Downsample(nn.Module):
    """Strided 3x3 conv: half resolution, double channels."""

    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv2d(channels, 2 * channels, 3, 2, 1)
        zero_biases(self)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % 2 or w % 2:
            raise ValueError(f"downsample needs even spatial dims, got {h}x{w}")
        return self.conv(x)


class Upsample(nn.Module):
    """Transposed 2x2 conv: double resolution, half channels."""

    def __init__(self, channels):
        super().__init__()
        if channels % 2:
            raise ValueError(f"upsample needs an even channel count, got {channels}")
        self.conv = nn.ConvTranspose2d(channels, channels // 2, 2, 2)
        zero_biases(self)

    def forward(self, x):
        return self.conv(x)
