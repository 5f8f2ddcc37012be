"""Stage losses on spatial and frequency domains and the weighted total."""
from dataclasses import dataclass

import torch

from .spectral import amp_swap, forward_fft, split


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.05
    beta: float = 0.05
    gamma: float = 0.001

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")


def _same_shape(*xs):
    shapes = {tuple(x.shape) for x in xs}
    if len(shapes) != 1:
        raise ValueError(f"loss inputs differ in shape: {sorted(shapes)}")


def mae(a, b):
    return (a - b).abs().mean()


def stage1_loss(y1, x_hazy, x_gt, w: LossWeights = LossWeights()):
    """Spatial MAE to the (gt amplitude, hazy phase) target plus amplitude MAE."""
    _same_shape(y1, x_hazy, x_gt)
    target = amp_swap(x_gt, x_hazy)
    loss = mae(y1, target)
    if w.alpha:
        loss = loss + w.alpha * mae(split(y1).amplitude, split(x_gt).amplitude)
    return loss


def stage1_loss_phase_first(y1, x_hazy, x_gt, w: LossWeights = LossWeights()):
    """Stage-1 loss when the phase stage runs first (swapped-order ablation).

    The target keeps the hazy amplitude and takes the ground-truth phase; the
    frequency term compares phase planes.
    """
    _same_shape(y1, x_hazy, x_gt)
    target = amp_swap(x_hazy, x_gt)
    loss = mae(y1, target)
    if w.alpha:
        loss = loss + w.alpha * mae(split(y1).phase, split(x_gt).phase)
    return loss


def complex_mae(z1, z2):
    d = z1 - z2
    return (d.real.abs() + d.imag.abs()).mean()


def stage2_loss(y2, x_gt, w: LossWeights = LossWeights()):
    _same_shape(y2, x_gt)
    loss = mae(y2, x_gt)
    if w.beta:
        loss = loss + w.beta * complex_mae(forward_fft(y2), forward_fft(x_gt))
    return loss


def total_loss(l1, l2, mi, gamma: float = 0.001):
    """``l1 + l2 + gamma * mi`` where ``mi`` is the multi-scale MI sum (or None)."""
    if mi is None or gamma == 0:
        return l1 + l2
    return l1 + l2 + gamma * mi
