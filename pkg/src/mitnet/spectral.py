"""Per-channel orthonormal 2-D Fourier analysis and amplitude/phase helpers.

All transforms act on the last two dims of a (batch, channels, H, W) tensor,
one channel at a time, with ``norm="ortho"`` so that the forward and inverse
transforms both carry the 1/sqrt(HW) factor. Spectra are never fft-shifted.
"""
import math
from typing import NamedTuple

import torch

# floor under the square root / in the phase denominator; gradients only
AMP_EPS = 1e-8
RESIDUE_TOL = 1e-4


class SpectralPair(NamedTuple):
    amplitude: torch.Tensor
    phase: torch.Tensor


def _check_finite(x, name="input"):
    if not torch.isfinite(x).all():
        raise ValueError(f"{name} contains NaN or Inf values")


def forward_fft(x: torch.Tensor, check: bool = True) -> torch.Tensor:
    if check:
        _check_finite(x)
    return torch.fft.fft2(x, norm="ortho")


def inverse_fft(z: torch.Tensor) -> torch.Tensor:
    return torch.fft.ifft2(z, norm="ortho")


class _Polar(torch.autograd.Function):
    """(re, im) -> (|z|, arg z) with exact values and floored gradients.

    The forward values are exact, so zero bins stay exactly zero and
    arg(0) = 0. The backward uses |z|^2 + AMP_EPS so that it stays finite at
    the origin of the complex plane.
    """

    @staticmethod
    def forward(ctx, re, im):
        amp = torch.sqrt(re * re + im * im)
        phase = torch.atan2(im, re)
        # atan2 yields -pi for (-x, -0.0); fold into (-pi, pi]
        phase = torch.where(phase <= -math.pi, phase + 2 * math.pi, phase)
        ctx.save_for_backward(re, im)
        return amp, phase

    @staticmethod
    def backward(ctx, g_amp, g_phase):
        re, im = ctx.saved_tensors
        r2 = re * re + im * im + AMP_EPS
        r = torch.sqrt(r2)
        g_re = g_amp * re / r - g_phase * im / r2
        g_im = g_amp * im / r + g_phase * re / r2
        return g_re, g_im


def polar(z: torch.Tensor) -> SpectralPair:
    # real/imag are strided views; atan2 is far slower on those
    amp, phase = _Polar.apply(z.real.contiguous(), z.imag.contiguous())
    return SpectralPair(amp, phase)


def split(x: torch.Tensor, check: bool = True) -> SpectralPair:
    """Amplitude and phase planes of the per-channel spectrum of ``x``."""
    return polar(forward_fft(x, check=check))


def recompose(pair: SpectralPair, strict: bool = True) -> torch.Tensor:
    """Inverse transform of ``amplitude * exp(i * phase)``, real part only.

    With ``strict`` the imaginary residue is checked: a residue above
    RESIDUE_TOL of the output magnitude means the spectrum was not conjugate
    symmetric and a ValueError is raised. Network blocks that edit the phase
    plane pass ``strict=False`` and keep the real part.
    """
    amp, phase = pair
    if amp.shape != phase.shape:
        raise ValueError(f"amplitude {tuple(amp.shape)} and phase {tuple(phase.shape)} differ")
    if strict and (amp < 0).any():
        raise ValueError("amplitude must be non-negative")
    z = torch.complex(amp * torch.cos(phase), amp * torch.sin(phase))
    out = inverse_fft(z)
    if strict:
        with torch.no_grad():
            residue = out.imag.abs().max()
            scale = out.real.abs().max()
            if residue > RESIDUE_TOL * scale + 1e-12:
                raise ValueError(
                    f"imaginary residue {residue.item():.3g} exceeds tolerance "
                    f"(output magnitude {scale.item():.3g}); spectrum is not conjugate symmetric"
                )
    return out.real


def amp_swap(src_amp: torch.Tensor, src_phase: torch.Tensor) -> torch.Tensor:
    """Image with the amplitude spectrum of ``src_amp`` and phase of ``src_phase``."""
    if src_amp.shape != src_phase.shape:
        raise ValueError(
            f"shape mismatch: {tuple(src_amp.shape)} vs {tuple(src_phase.shape)}"
        )
    amp = split(src_amp).amplitude
    phase = split(src_phase).phase
    return recompose(SpectralPair(amp, phase), strict=False)


def amplitude(x: torch.Tensor) -> torch.Tensor:
    return split(x).amplitude


def phase(x: torch.Tensor) -> torch.Tensor:
    return split(x).phase
