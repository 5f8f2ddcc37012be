"""Training loop, evaluation and the metrics CSV stream."""
import csv
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import torch

from . import data as D
from .checkpoint import load_checkpoint, save_checkpoint, set_rng_state
from .config import RunConfig, save_config
from .miloss import embedding_cosine, multi_scale_mi
from .model import MITNet
from .objective import stage1_loss, stage1_loss_phase_first, stage2_loss, total_loss

log = logging.getLogger(__name__)

METRICS_VERSION = "v1"
METRICS_COLUMNS = ("epoch", "iter", "l1", "l2", "lmi", "total", "psnr", "ssim", "lr", "wall_time")


class TrainingDiverged(RuntimeError):
    pass


def compute_losses(model: MITNet, x_hazy, x_gt, weights):
    s1, s2 = model(x_hazy)
    first = stage1_loss if model.cfg.stage_order == "amplitude_first" else stage1_loss_phase_first
    l1 = first(s1.image, x_hazy, x_gt, weights)
    l2 = stage2_loss(s2.image, x_gt, weights)
    lmi = multi_scale_mi(s1.embeddings, s2.embeddings) if s1.embeddings is not None else None
    total = total_loss(l1, l2, lmi, weights.gamma)
    return {"l1": l1, "l2": l2, "lmi": lmi, "total": total}


def learning_rate(cfg: RunConfig, epoch: int) -> float:
    """Initial rate halved every ``optim.halve_every`` epochs (epochs count from 1)."""
    return cfg.optim.lr * 0.5 ** ((epoch - 1) // cfg.optim.halve_every)


def make_optimizer(cfg: RunConfig, model):
    o = cfg.optim
    return torch.optim.Adam(model.parameters(), lr=o.lr, betas=(o.beta1, o.beta2), eps=o.eps)


def load_samples(source: str, cfg: RunConfig) -> List[D.PairedSample]:
    if source == "synthetic":
        d = cfg.data
        return D.make_synthetic_pairs(d.synthetic_pairs, d.synthetic_size, d.synthetic_seed)
    return D.load_dataset(source)


@torch.no_grad()
def evaluate(model: MITNet, samples, batch_size=8):
    """Per-image (id, psnr, ssim) of the clamped stage-2 output."""
    was_training = model.training
    model.eval()
    rows = []
    try:
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            shapes = {tuple(s.hazy.shape) for s in chunk}
            groups = [chunk] if len(shapes) == 1 else [[s] for s in chunk]
            for group in groups:
                x = torch.stack([s.hazy for s in group])
                y = model(x)[1].image
                for s, out in zip(group, y):
                    rows.append((s.id, D.psnr(out, s.gt), D.ssim(out, s.gt)))
    finally:
        model.train(was_training)
    return rows


def mean_metrics(rows):
    if not rows:
        return math.nan, math.nan
    p = sum(D.log_psnr(r[1]) for r in rows) / len(rows)
    s = sum(r[2] for r in rows) / len(rows)
    return p, s


@torch.no_grad()
def embedding_similarity(model: MITNet, samples) -> float:
    """Mean cosine similarity between paired-scale MI embeddings."""
    was_training = model.training
    model.eval()
    try:
        x = torch.stack([s.hazy for s in samples])
        s1, s2 = model(x, embed=True)
        return embedding_cosine(s1.embeddings, s2.embeddings)
    finally:
        model.train(was_training)


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


class MetricsWriter:
    """Append-only CSV with a versioned schema and a config-hash header."""

    def __init__(self, path, cfg: RunConfig, keep_through_epoch: Optional[int] = None):
        self.path = Path(path)
        header = f"# mitnet-metrics {METRICS_VERSION} config_hash={cfg.hash()}"
        if keep_through_epoch is not None and self.path.exists():
            kept = []
            with self.path.open() as f:
                lines = f.read().splitlines()
            for line in lines[2:]:
                if int(line.split(",", 1)[0]) <= keep_through_epoch:
                    kept.append(line)
            self.path.write_text("\n".join([header, ",".join(METRICS_COLUMNS), *kept]) + "\n")
        else:
            self.path.write_text(header + "\n" + ",".join(METRICS_COLUMNS) + "\n")

    def write(self, row: dict):
        with self.path.open("a", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow(_fmt(row.get(c)) for c in METRICS_COLUMNS)


def read_metrics(path):
    with open(path) as f:
        lines = f.read().splitlines()
    return lines[0], list(csv.DictReader(lines[1:]))


def _all_finite(model, *tensors):
    ts = list(tensors) + [p for p in model.parameters()]
    return all(torch.isfinite(t).all() for t in ts)


def _diverged(out, epoch, iteration, x, g, detail):
    dump = out / "nan_dump.pt"
    torch.save({"epoch": epoch, "iter": iteration, "detail": detail, "hazy": x.cpu(), "gt": g.cpu()}, dump)
    raise TrainingDiverged(f"non-finite loss at epoch {epoch} iter {iteration}: {detail} (dump: {dump})")


@dataclass
class TrainResult:
    out_dir: Path
    model: MITNet
    epoch: int
    iteration: int
    best_psnr: float
    last_psnr: float
    last_ssim: float
    losses: List[float]


def train(cfg: RunConfig, resume: Optional[str] = None, stop_epoch: Optional[int] = None,
          max_iters: Optional[int] = None, samples=None, val_samples=None) -> TrainResult:
    """Train from scratch or resume from a checkpoint.

    ``stop_epoch`` ends the run early (for interrupted-run tests); ``max_iters``
    caps the total iteration count.
    """
    if cfg.train.threads:
        torch.set_num_threads(cfg.train.threads)
    device = torch.device(cfg.train.device)
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.txt")

    samples = samples if samples is not None else load_samples(cfg.data.train, cfg)
    if val_samples is None:
        val_samples = load_samples(cfg.data.val, cfg) if cfg.data.val else samples
    weights = cfg.loss

    torch.manual_seed(cfg.train.seed)
    if resume:
        _, model, payload = load_checkpoint(resume, expect_model=cfg.model)
        model.to(device)
        optimizer = make_optimizer(cfg, model)
        optimizer.load_state_dict(payload["optimizer"])
        set_rng_state(payload["rng"])
        start_epoch = payload["epoch"] + 1
        iteration = payload["iteration"]
        best = payload.get("best_psnr", -math.inf)
        wall_offset = payload.get("wall_time", 0.0)
        writer = MetricsWriter(out / "metrics.csv", cfg, keep_through_epoch=payload["epoch"])
    else:
        model = MITNet(cfg.model).to(device)
        optimizer = make_optimizer(cfg, model)
        start_epoch, iteration, best, wall_offset = 1, 0, -math.inf, 0.0
        writer = MetricsWriter(out / "metrics.csv", cfg)

    model.train()
    t0 = time.perf_counter()
    last_epoch = stop_epoch if stop_epoch is not None else cfg.train.epochs
    p_mean = s_mean = math.nan
    losses = []
    epoch = start_epoch - 1
    for epoch in range(start_epoch, last_epoch + 1):
        lr = learning_rate(cfg, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        batch_iter = list(D.batches(samples, cfg.train.batch_size, epoch, cfg.train.seed,
                                    patch=cfg.train.patch_size, augment_on=cfg.train.augment))
        for b, (x, g) in enumerate(batch_iter):
            if max_iters is not None and iteration >= max_iters:
                break
            x, g = x.to(device), g.to(device)
            try:
                parts = compute_losses(model, x, g, weights)
            except ValueError as e:
                # the spectral ops refuse NaN/Inf; report that as divergence when it is one
                if _all_finite(model, x, g):
                    raise
                _diverged(out, epoch, iteration + 1, x, g, str(e))
            vals = {k: (v.item() if v is not None else None) for k, v in parts.items()}
            if not all(math.isfinite(v) for v in vals.values() if v is not None):
                _diverged(out, epoch, iteration + 1, x, g, vals)
            optimizer.zero_grad(set_to_none=True)
            parts["total"].backward()
            if cfg.optim.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.optim.grad_clip)
            optimizer.step()
            iteration += 1
            losses.append(vals["total"])
            row = dict(epoch=epoch, iter=iteration, lr=lr, **vals)
            last_batch = b == len(batch_iter) - 1
            if last_batch and cfg.train.eval_every and epoch % cfg.train.eval_every == 0:
                p_mean, s_mean = mean_metrics(evaluate(model, val_samples))
                row.update(psnr=p_mean, ssim=s_mean)
            row["wall_time"] = round(wall_offset + time.perf_counter() - t0, 3)
            writer.write(row)
        wall = wall_offset + time.perf_counter() - t0
        if not math.isnan(p_mean) and p_mean > best:
            best = p_mean
            save_checkpoint(out / "best.pt", cfg, model, optimizer, epoch, iteration,
                            best_psnr=best, wall_time=wall)
        save_checkpoint(out / "last.pt", cfg, model, optimizer, epoch, iteration,
                        best_psnr=best, wall_time=wall)
        log.info("epoch %d iter %d loss %.5f psnr %.3f", epoch, iteration,
                 losses[-1] if losses else math.nan, p_mean)
        if max_iters is not None and iteration >= max_iters:
            break
    return TrainResult(out, model, epoch, iteration, best, p_mean, s_mean, losses)
