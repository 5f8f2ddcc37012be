import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mitnet.spectral import SpectralPair, amp_swap, forward_fft, recompose, split
from oracles import direct_dft2, direct_idft2, finite_difference_check


def rand(*shape, seed=0, dtype=torch.float64):
    return torch.rand(*shape, generator=torch.Generator().manual_seed(seed), dtype=dtype)


def test_constant_image_dc_only():
    z = forward_fft(torch.ones(1, 1, 4, 4, dtype=torch.float64))
    expected = torch.zeros(4, 4, dtype=torch.complex128)
    expected[0, 0] = 4.0
    assert torch.allclose(z[0, 0], expected, atol=1e-12)


def test_zero_image_zero_spectrum():
    assert torch.count_nonzero(forward_fft(torch.zeros(2, 3, 8, 8))) == 0


@pytest.mark.parametrize("h,w", [(3, 3), (4, 6), (8, 8)])
def test_fft_matches_direct_dft(h, w):
    x = rand(1, 1, h, w, seed=h * 10 + w)
    got = forward_fft(x)[0, 0].numpy()
    np.testing.assert_allclose(got, direct_dft2(x[0, 0].numpy()), atol=1e-6)


def test_fft_rejects_non_finite():
    x = torch.zeros(1, 1, 4, 4)
    x[0, 0, 1, 1] = float("nan")
    with pytest.raises(ValueError, match="NaN"):
        forward_fft(x)


def test_split_constant_image():
    amp, pha = split(torch.ones(1, 1, 4, 4, dtype=torch.float64))
    assert amp[0, 0, 0, 0].item() == pytest.approx(4.0)
    assert pha[0, 0, 0, 0].item() == 0.0
    amp_rest = amp[0, 0].clone()
    amp_rest[0, 0] = 0
    assert amp_rest.abs().max() < 1e-12


def test_split_scaling_doubles_amplitude_keeps_phase():
    x = rand(1, 3, 6, 6, seed=1)
    a1, p1 = split(x)
    a2, p2 = split(2 * x)
    assert torch.allclose(a2, 2 * a1, atol=1e-12)
    assert torch.allclose(p2, p1, atol=1e-12)


def test_split_matches_direct_dft():
    x = rand(1, 1, 5, 5, seed=2)
    ref = direct_dft2(x[0, 0].numpy())
    amp, pha = split(x)
    np.testing.assert_allclose(amp[0, 0].numpy(), np.abs(ref), atol=1e-6)
    np.testing.assert_allclose(pha[0, 0].numpy(), np.angle(ref), atol=1e-6)


def test_phase_range_half_open():
    # the Nyquist bin of [1, 3] has value -1 with a -0.0 imaginary part
    x = torch.tensor([[[[1.0, 3.0], [1.0, 3.0]]]], dtype=torch.float64)
    _, pha = split(x)
    assert (pha > -math.pi).all() and (pha <= math.pi).all()
    assert pha[0, 0, 0, 1].item() == pytest.approx(math.pi)


def test_recompose_round_trip():
    x = rand(2, 3, 8, 8, seed=3)
    y = recompose(split(x))
    assert ((y - x).abs().max() / x.abs().max()) < 1e-5


def test_recompose_zero_amplitude():
    z = torch.zeros(1, 2, 4, 4)
    assert torch.count_nonzero(recompose(SpectralPair(z, rand(1, 2, 4, 4, dtype=torch.float32)))) == 0


def test_recompose_matches_inverse_direct_dft():
    # conjugate-symmetric 2x2 spectrum: all bins are their own mirror, so real
    z = np.array([[2.0, -0.5], [1.25, 0.75]], dtype=np.complex128)
    pair = SpectralPair(torch.tensor(np.abs(z))[None, None], torch.tensor(np.angle(z))[None, None])
    got = recompose(pair)[0, 0].numpy()
    np.testing.assert_allclose(got, direct_idft2(z).real, atol=1e-12)


def test_recompose_flags_non_symmetric_spectrum():
    amp = torch.ones(1, 1, 4, 4, dtype=torch.float64)
    pha = torch.zeros(1, 1, 4, 4, dtype=torch.float64)
    pha[0, 0, 0, 1] = 1.0  # mirror bin (0, 3) keeps phase 0
    with pytest.raises(ValueError, match="imaginary residue"):
        recompose(SpectralPair(amp, pha))
    # non-strict mode keeps the real part
    assert recompose(SpectralPair(amp, pha), strict=False).shape == (1, 1, 4, 4)


def test_amp_swap_identities():
    x = rand(1, 3, 8, 8, seed=4)
    assert torch.allclose(amp_swap(x, x), x, atol=1e-10)
    assert torch.count_nonzero(amp_swap(torch.zeros_like(x), x)) == 0


def test_amp_swap_takes_amplitude_and_phase():
    a, b = rand(1, 3, 8, 8, seed=5), rand(1, 3, 8, 8, seed=6)
    out = amp_swap(a, b)
    amp_a, _ = split(a)
    amp_o, pha_o = split(out)
    _, pha_b = split(b)
    assert (amp_o - amp_a).abs().max() < 1e-5
    mask = amp_a > 1e-3
    dphi = torch.remainder(pha_o - pha_b + math.pi, 2 * math.pi) - math.pi
    assert dphi[mask].abs().max() < 1e-5


def test_amp_swap_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        amp_swap(torch.zeros(1, 3, 8, 8), torch.zeros(1, 3, 8, 4))


def test_per_channel_independence():
    x = rand(1, 3, 6, 6, seed=7)
    amp, pha = split(x)
    for c in range(3):
        a_c, p_c = split(x[:, c:c + 1])
        assert torch.equal(a_c, amp[:, c:c + 1])
        assert torch.equal(p_c, pha[:, c:c + 1])


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), h=st.integers(2, 12), w=st.integers(2, 12))
def test_round_trip_and_parseval_property(seed, h, w):
    x = torch.randn(2, 3, h, w, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
    amp, pha = split(x)
    y = recompose(SpectralPair(amp, pha))
    assert (y - x).abs().max() / x.abs().max() < 1e-5
    energy = (x ** 2).sum()
    assert abs((amp ** 2).sum() - energy) / energy < 1e-5


def test_gradients_through_split_and_recompose():
    x = rand(1, 2, 6, 6, seed=8)

    def fn(x):
        amp, pha = split(x)
        return recompose(SpectralPair(amp * 1.3, pha), strict=False) + amp.mean() * pha

    assert finite_difference_check(fn, [x]) < 1e-3


def test_gradient_finite_at_zero_amplitude():
    x = torch.ones(1, 1, 4, 4, dtype=torch.float64, requires_grad=True)
    amp, pha = split(x)
    (amp.sum() + pha.sum()).backward()
    assert torch.isfinite(x.grad).all()
