"""Paired dehazing data: folder loading, augmentation, synthetic haze and metrics."""
import logging
import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}
PSNR_LOG_CAP = 100.0


@dataclass
class PairedSample:
    hazy: torch.Tensor  # (3, H, W) in [0, 1]
    gt: torch.Tensor
    id: str

    def __post_init__(self):
        if self.hazy.shape != self.gt.shape:
            raise ValueError(f"sample {self.id}: hazy {tuple(self.hazy.shape)} vs gt {tuple(self.gt.shape)}")


@dataclass(frozen=True)
class HazeParams:
    atmospheric_light: float
    beta: float
    depth: np.ndarray  # (H, W) in [0, 1]

    def transmission(self) -> np.ndarray:
        return np.exp(-self.beta * np.asarray(self.depth, dtype=np.float64))


# --- image io -------------------------------------------------------------

def read_image(path) -> torch.Tensor:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def write_image(img: torch.Tensor, path):
    arr = img.detach().clamp(0, 1).permute(1, 2, 0).cpu().numpy()
    Image.fromarray(np.round(arr * 255).astype(np.uint8)).save(path)


# --- dataset folders --------------------------------------------------------

def _images(folder: Path):
    return {p.stem: p for p in sorted(folder.iterdir()) if p.suffix.lower() in IMAGE_EXTS}


def match_stem(hazy_stem: str, gt_stems) -> Optional[str]:
    """GT stem for a hazy stem: exact match, else the part before the first '_'.

    RESIDE names hazy images ``<scene>_<A>_<beta>`` against a gt ``<scene>``.
    """
    if hazy_stem in gt_stems:
        return hazy_stem
    prefix = hazy_stem.split("_", 1)[0]
    return prefix if prefix in gt_stems else None


def dataset_pairs(root):
    root = Path(root)
    hazy_dir, gt_dir = root / "hazy", root / "gt"
    for d in (hazy_dir, gt_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"missing directory {d}")
    hazy, gt = _images(hazy_dir), _images(gt_dir)
    pairs, used = [], set()
    orphans = []
    for stem in sorted(hazy):
        g = match_stem(stem, gt)
        if g is None:
            orphans.append(hazy[stem].name)
        else:
            pairs.append((stem, hazy[stem], gt[g]))
            used.add(g)
    orphans += [gt[s].name for s in sorted(set(gt) - used)]
    if orphans:
        log.warning("unmatched files in %s: %s", root, ", ".join(orphans))
    if not pairs:
        raise ValueError(f"no matched pairs in {root}: {len(hazy)} hazy, {len(gt)} gt files")
    return pairs


def load_dataset(root) -> List[PairedSample]:
    return [PairedSample(read_image(h), read_image(g), stem) for stem, h, g in dataset_pairs(root)]


def save_dataset(samples: Sequence[PairedSample], root):
    root = Path(root)
    (root / "hazy").mkdir(parents=True, exist_ok=True)
    (root / "gt").mkdir(parents=True, exist_ok=True)
    for s in samples:
        write_image(s.hazy, root / "hazy" / f"{s.id}.png")
        write_image(s.gt, root / "gt" / f"{s.id}.png")


# --- augmentation ------------------------------------------------------------

def sample_seed(global_seed: int, epoch: int, sample_id: str) -> int:
    """Per-sample RNG seed that does not depend on worker or visiting order."""
    ss = np.random.SeedSequence([global_seed, epoch, zlib.crc32(sample_id.encode())])
    return int(ss.generate_state(1)[0])


def random_crop(sample: PairedSample, patch: int, rng: np.random.Generator) -> PairedSample:
    _, h, w = sample.hazy.shape
    if patch > h or patch > w:
        raise ValueError(f"patch {patch} larger than image {h}x{w} ({sample.id})")
    top = int(rng.integers(0, h - patch + 1))
    left = int(rng.integers(0, w - patch + 1))
    sl = (slice(None), slice(top, top + patch), slice(left, left + patch))
    return PairedSample(sample.hazy[sl], sample.gt[sl], sample.id)


def flip_rotate(img, hflip, vflip, rot):
    if hflip:
        img = img.flip(-1)
    if vflip:
        img = img.flip(-2)
    if rot:
        img = torch.rot90(img, rot, dims=(-2, -1))
    return img


def augment(sample: PairedSample, seed: int, patch: Optional[int] = None) -> PairedSample:
    """Same random crop, flips and 90-degree rotation on both images."""
    rng = np.random.default_rng(seed)
    if patch is not None:
        sample = random_crop(sample, patch, rng)
    hflip, vflip = bool(rng.integers(2)), bool(rng.integers(2))
    rot = int(rng.integers(4))
    return PairedSample(
        flip_rotate(sample.hazy, hflip, vflip, rot).contiguous(),
        flip_rotate(sample.gt, hflip, vflip, rot).contiguous(),
        sample.id,
    )


def batches(samples, batch_size, epoch, seed, patch=None, augment_on=True):
    """Deterministic (hazy, gt) batches for one epoch."""
    order = np.random.default_rng([seed, epoch]).permutation(len(samples))
    for start in range(0, len(order), batch_size):
        chunk = [samples[i] for i in order[start:start + batch_size]]
        if augment_on:
            chunk = [augment(s, sample_seed(seed, epoch, s.id), patch) for s in chunk]
        elif patch is not None:
            chunk = [random_crop(s, patch, np.random.default_rng(sample_seed(seed, epoch, s.id))) for s in chunk]
        yield torch.stack([s.hazy for s in chunk]), torch.stack([s.gt for s in chunk])


# --- synthetic haze ------------------------------------------------------------

def synthesize_haze(clean, params: HazeParams):
    """I = J * t + A * (1 - t), t = exp(-beta * d), clipped to [0, 1].

    ``clean`` is (..., H, W) as a tensor or array; the depth map broadcasts.
    """
    t = params.transmission()
    a = params.atmospheric_light
    if isinstance(clean, torch.Tensor):
        t = torch.as_tensor(t, dtype=clean.dtype, device=clean.device)
        return (clean * t + a * (1 - t)).clamp(0, 1)
    return np.clip(clean * t + a * (1 - t), 0, 1)


def _smooth_field(rng, h, w, n_waves=3):
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    f = np.zeros((h, w))
    for _ in range(n_waves):
        fy, fx = rng.uniform(0.3, 2.5, size=2)
        ph = rng.uniform(0, 2 * np.pi)
        f += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * (fy * yy + fx * xx) + ph)
    f -= f.min()
    return f / max(f.max(), 1e-12)


def synthetic_clean(rng, size=64):
    """Smooth colour fields with a few flat-coloured rectangles."""
    img = np.stack([0.15 + 0.7 * _smooth_field(rng, size, size) for _ in range(3)])
    for _ in range(int(rng.integers(2, 5))):
        y0, x0 = rng.integers(0, size - 8, size=2)
        hh, ww = rng.integers(6, size // 2, size=2)
        img[:, y0:y0 + hh, x0:x0 + ww] = rng.uniform(0.05, 0.95, size=(3, 1, 1))
    return np.clip(img, 0, 1)


def random_haze_params(rng, size=64) -> HazeParams:
    depth = 0.3 + 0.7 * _smooth_field(rng, size, size, n_waves=2)
    return HazeParams(
        atmospheric_light=float(rng.uniform(0.6, 1.0)),
        beta=float(rng.uniform(0.4, 2.0)),
        depth=depth,
    )


def make_synthetic_pairs(n=8, size=64, seed=0) -> List[PairedSample]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        clean = synthetic_clean(rng, size)
        hazy = synthesize_haze(clean, random_haze_params(rng, size))
        out.append(PairedSample(
            torch.from_numpy(hazy).float(), torch.from_numpy(clean).float(), f"syn{i:04d}"
        ))
    return out


# --- metrics -----------------------------------------------------------------

def _as_tensor(x):
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x))


def psnr(a, b) -> float:
    """PSNR in dB for data range 1; ``inf`` for identical inputs."""
    a, b = _as_tensor(a).double(), _as_tensor(b).double()
    if a.shape != b.shape:
        raise ValueError(f"psnr shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    mse = ((a - b) ** 2).mean().item()
    if mse == 0:
        return math.inf
    return 10 * math.log10(1.0 / mse)


def log_psnr(value: float) -> float:
    return min(value, PSNR_LOG_CAP)


def gaussian_window(size=11, sigma=1.5):
    r = (size - 1) / 2
    g = torch.exp(-((torch.arange(size, dtype=torch.float64) - r) ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return g[:, None] * g[None, :]


def ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03) -> float:
    """Mean SSIM over channels (and batch) with a Gaussian window, data range 1.

    Statistics are taken over valid window positions only. Images smaller
    than the window use the largest odd window that fits.
    """
    a, b = _as_tensor(a).double(), _as_tensor(b).double()
    if a.shape != b.shape:
        raise ValueError(f"ssim shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    while a.dim() < 4:
        a, b = a.unsqueeze(0), b.unsqueeze(0)
    n, c, h, w = a.shape
    size = min(window, h, w)
    size -= (size + 1) % 2
    kern = gaussian_window(size, sigma).expand(c, 1, size, size)
    c1, c2 = k1 ** 2, k2 ** 2

    def filt(x):
        return F.conv2d(x, kern, groups=c)

    mu_a, mu_b = filt(a), filt(b)
    s_aa = filt(a * a) - mu_a ** 2
    s_bb = filt(b * b) - mu_b ** 2
    s_ab = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (s_aa + s_bb + c2)
    return (num / den).mean().item()
