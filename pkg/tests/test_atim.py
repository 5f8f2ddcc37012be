import numpy as np
import pytest
import torch

from mitnet.atim import ADFB, CrossScaleFusion, FilterGenerator, apply_dynamic_filter
from oracles import finite_difference_check, loop_dynamic_filter


def scale_set(h=32, b=1, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return [torch.randn(b, c, h >> i, h >> i, generator=g, dtype=dtype) for i, c in enumerate((20, 40, 80))]


def test_cross_scale_shapes():
    torch.manual_seed(0)
    out = CrossScaleFusion()(scale_set(32))
    assert [tuple(o.shape[1:]) for o in out] == [(20, 32, 32), (40, 16, 16), (80, 8, 8)]


def test_cross_scale_zero():
    out = CrossScaleFusion()([torch.zeros_like(s) for s in scale_set(16)])
    assert all(torch.count_nonzero(o) == 0 for o in out)


def test_cross_scale_connectivity():
    torch.manual_seed(1)
    fusion = CrossScaleFusion()
    scales = [s.requires_grad_(True) for s in scale_set(16, seed=1)]
    out = fusion(scales)
    for o in out:
        (g,) = torch.autograd.grad(o.sum(), scales[2], retain_graph=True)
        assert g.abs().sum() > 0


def test_cross_scale_rejects_bad_ladder():
    bad = scale_set(16)
    bad[1] = torch.zeros(1, 40, 7, 7)
    with pytest.raises(ValueError, match="s2"):
        CrossScaleFusion()(bad)


def test_filter_bank_shape():
    torch.manual_seed(2)
    gen = FilterGenerator(20, k=3)
    x = torch.randn(1, 20, 32, 32)
    assert gen(x, x, x).shape == (1, 180, 32, 32)


def test_filter_bank_zero():
    gen = FilterGenerator(8)
    z = torch.zeros(1, 8, 6, 6)
    assert torch.count_nonzero(gen(z, z, z)) == 0


def test_channel_context_spatially_uniform():
    torch.manual_seed(3)
    gen = FilterGenerator(8)
    ctx = gen.channel_branch(torch.randn(2, 8, 6, 6))
    assert torch.equal(ctx, ctx[..., :1, :1].expand_as(ctx))


def test_filter_generator_shape_mismatch():
    gen = FilterGenerator(8)
    with pytest.raises(ValueError, match="differ in shape"):
        gen(torch.zeros(1, 8, 6, 6), torch.zeros(1, 8, 6, 6), torch.zeros(1, 8, 4, 4))


def identity_bank(b, c, h, w, k=3):
    bank = torch.zeros(b, k * k * c, h, w)
    centre = (k * k) // 2
    bank[:, centre * c:(centre + 1) * c] = 1.0
    return bank


def test_identity_bank_doubles():
    d2 = torch.randn(2, 5, 6, 6)
    assert torch.allclose(apply_dynamic_filter(d2, identity_bank(2, 5, 6, 6)), 2 * d2)


def test_zero_bank_is_residual():
    d2 = torch.randn(1, 4, 6, 6)
    assert torch.equal(apply_dynamic_filter(d2, torch.zeros(1, 36, 6, 6)), d2)


def test_matches_loop_oracle_example():
    g = torch.Generator().manual_seed(4)
    d2 = torch.randn(1, 4, 6, 6, generator=g, dtype=torch.float64)
    bank = torch.randn(1, 36, 6, 6, generator=g, dtype=torch.float64)
    got = apply_dynamic_filter(d2, bank).numpy()
    np.testing.assert_allclose(got, loop_dynamic_filter(d2.numpy(), bank.numpy(), 3), atol=1e-6)


def test_locality():
    g = torch.Generator().manual_seed(5)
    d2 = torch.randn(1, 3, 6, 6, generator=g, dtype=torch.float64)
    bank = torch.randn(1, 27, 6, 6, generator=g, dtype=torch.float64)
    base = apply_dynamic_filter(d2, bank)
    bank2 = bank.clone()
    bank2[..., 2, 3] += 1.0
    changed = (apply_dynamic_filter(d2, bank2) - base).abs().sum(1)[0] > 0
    expected = torch.zeros(6, 6, dtype=torch.bool)
    expected[2, 3] = True
    assert torch.equal(changed, expected)


def test_apply_rejects_mismatch():
    with pytest.raises(ValueError):
        apply_dynamic_filter(torch.zeros(1, 4, 6, 6), torch.zeros(1, 35, 6, 6))
    with pytest.raises(ValueError):
        apply_dynamic_filter(torch.zeros(1, 4, 6, 6), torch.zeros(1, 36, 5, 6))


def test_adfb_gradient_check():
    torch.manual_seed(6)
    adfb = ADFB(4).double()
    g = torch.Generator().manual_seed(6)
    inputs = [torch.randn(1, 4, 6, 6, generator=g, dtype=torch.float64) for _ in range(3)]
    assert finite_difference_check(adfb, inputs) < 1e-3
