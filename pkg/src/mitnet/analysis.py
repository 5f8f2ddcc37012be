"""Diagnostics: colour/grey histograms, amplitude vs phase disparity, feature grids."""
import json
import math
from pathlib import Path

import numpy as np
import torch

from .spectral import amp_swap, split

LUMA = (0.299, 0.587, 0.114)
BINS = 256


def grayscale(img: torch.Tensor) -> torch.Tensor:
    w = torch.tensor(LUMA, dtype=img.dtype).view(3, 1, 1)
    return (img * w).sum(0, keepdim=True)


def histograms(img: torch.Tensor, bins=BINS) -> np.ndarray:
    """(4, bins) normalized histograms: R, G, B and grey, for a (3, H, W) image."""
    planes = list(img.detach().clamp(0, 1)) + [grayscale(img.detach().clamp(0, 1))[0]]
    out = []
    for p in planes:
        h, _ = np.histogram(p.double().numpy().ravel(), bins=bins, range=(0.0, 1.0))
        out.append(h / max(h.sum(), 1))
    return np.stack(out)


def histogram_l1(a: torch.Tensor, b: torch.Tensor) -> float:
    return float(np.abs(histograms(a) - histograms(b)).sum())


def disparity(hazy: torch.Tensor, clean: torch.Tensor) -> dict:
    """How much of the hazy/clean difference sits in amplitude vs phase.

    The amplitude map is the error of (hazy amplitude, clean phase) against
    the clean image, the phase map that of (clean amplitude, hazy phase).
    Energies are mean squares of those maps.
    """
    hazy, clean = hazy.double().unsqueeze(0), clean.double().unsqueeze(0)
    amp_map = (amp_swap(hazy, clean) - clean)[0]
    pha_map = (amp_swap(clean, hazy) - clean)[0]
    sh, sc = split(hazy), split(clean)
    dphase = torch.remainder(sh.phase - sc.phase + math.pi, 2 * math.pi) - math.pi
    return {
        "amplitude_map": amp_map,
        "phase_map": pha_map,
        "amplitude_energy": float((amp_map ** 2).mean()),
        "phase_energy": float((pha_map ** 2).mean()),
        "amplitude_spectrum_diff": (sh.amplitude - sc.amplitude)[0].abs(),
        "phase_spectrum_diff": dphase[0].abs(),
    }


def feature_grid(features: torch.Tensor, cols=5) -> np.ndarray:
    """Tile (C, H, W) maps into one image, each map min-max scaled."""
    f = features.detach().double()
    c, h, w = f.shape
    rows = math.ceil(c / cols)
    grid = np.zeros((rows * (h + 1) - 1, cols * (w + 1) - 1))
    for i in range(c):
        m = f[i]
        lo, hi = m.min(), m.max()
        m = (m - lo) / (hi - lo) if hi > lo else torch.zeros_like(m)
        r, q = divmod(i, cols)
        grid[r * (h + 1):r * (h + 1) + h, q * (w + 1):q * (w + 1) + w] = m.numpy()
    return grid


def _save_gray(arr, path):
    from PIL import Image

    a = np.asarray(arr, dtype=np.float64)
    lo, hi = a.min(), a.max()
    a = (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)
    Image.fromarray(np.round(a * 255).astype(np.uint8)).save(path)


def _plot_histograms(hists: dict, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = list(hists)
    fig, axes = plt.subplots(2, len(names), figsize=(3 * len(names), 5), squeeze=False)
    x = (np.arange(BINS) + 0.5) / BINS
    for j, name in enumerate(names):
        h = hists[name]
        for k, colour in enumerate("rgb"):
            axes[0, j].plot(x, h[k], color=colour, lw=0.8)
        axes[1, j].plot(x, h[3], color="k", lw=0.8)
        axes[0, j].set_title(name)
    fig.tight_layout()
    fig.savefig(path, dpi=80)
    plt.close(fig)


@torch.no_grad()
def analyze(model, hazy: torch.Tensor, reference: torch.Tensor, outdir, config_hash=""):
    """Writes histogram, disparity and feature artifacts; returns a summary dict."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    model.eval()
    s1, s2 = model(hazy.unsqueeze(0))
    y1, y2 = s1.image[0], s2.image[0]

    hists = {"input": histograms(hazy), "stage1": histograms(y1),
             "output": histograms(y2), "reference": histograms(reference)}
    np.savetxt(outdir / "histograms.csv", np.concatenate(list(hists.values())), delimiter=",",
               header=f"config_hash={config_hash}; rows: R,G,B,grey per image in order {list(hists)}")
    _plot_histograms(hists, outdir / "histograms.png")

    disp = disparity(hazy, reference)
    _save_gray(disp["amplitude_map"].abs().mean(0), outdir / "disparity_amplitude.png")
    _save_gray(disp["phase_map"].abs().mean(0), outdir / "disparity_phase.png")
    _save_gray(torch.log1p(disp["amplitude_spectrum_diff"].mean(0)), outdir / "spectrum_amplitude_diff.png")
    _save_gray(disp["phase_spectrum_diff"].mean(0), outdir / "spectrum_phase_diff.png")

    d1, d2 = s1.decoder[0][0], s2.decoder[0][0]
    _save_gray(feature_grid(d1), outdir / "features_stage1.png")
    _save_gray(feature_grid(d2), outdir / "features_stage2.png")
    _save_gray(feature_grid(d2 - d1), outdir / "features_difference.png")

    summary = {
        "config_hash": config_hash,
        "histogram_l1_input_vs_reference": histogram_l1(hazy, reference),
        "histogram_l1_output_vs_reference": histogram_l1(y2, reference),
        "amplitude_disparity_energy": disp["amplitude_energy"],
        "phase_disparity_energy": disp["phase_energy"],
        "feature_difference_mean_abs": float((d2 - d1).abs().mean()),
    }
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary
