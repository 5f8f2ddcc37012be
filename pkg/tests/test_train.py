import math

import pytest
import torch

from mitnet.config import RunConfig
from mitnet.train import TrainingDiverged, learning_rate, read_metrics, train

TINY_MODEL = {"base_channels": 4, "d_emb": 16, "mi_hidden": 8}


def tiny(tmp_path, **train_over):
    return RunConfig().with_overrides(
        model=TINY_MODEL,
        train={"epochs": 3, "batch_size": 2, "patch_size": 16, **train_over},
        data={"synthetic_pairs": 4, "synthetic_size": 16},
        output={"dir": str(tmp_path)},
    )


def strip_wall(rows):
    return [{k: v for k, v in r.items() if k != "wall_time"} for r in rows]


def test_learning_rate_schedule():
    cfg = RunConfig().with_overrides(optim={"lr": 1.0, "halve_every": 2})
    assert [learning_rate(cfg, e) for e in (1, 2, 3, 4, 5)] == [1.0, 1.0, 0.5, 0.5, 0.25]


def test_train_writes_artifacts(tmp_path):
    cfg = tiny(tmp_path)
    res = train(cfg)
    assert res.iteration == 6 and res.epoch == 3
    for name in ("metrics.csv", "best.pt", "last.pt", "config.txt"):
        assert (tmp_path / name).exists()
    header, rows = read_metrics(tmp_path / "metrics.csv")
    assert header == f"# mitnet-metrics v1 config_hash={cfg.hash()}"
    assert len(rows) == 6
    assert all(r["lmi"] != "" for r in rows)
    assert sum(r["psnr"] != "" for r in rows) == 3


def test_metrics_deterministic(tmp_path):
    a = train(tiny(tmp_path / "a"))
    b = train(tiny(tmp_path / "b"))
    assert a.losses == b.losses
    assert strip_wall(read_metrics(tmp_path / "a/metrics.csv")[1]) == strip_wall(read_metrics(tmp_path / "b/metrics.csv")[1])


def test_resume_matches_uninterrupted(tmp_path):
    full = tiny(tmp_path / "full")
    train(full)
    part = tiny(tmp_path / "part")
    train(part, stop_epoch=1)
    train(part, resume=str(tmp_path / "part/last.pt"))
    _, rows_full = read_metrics(tmp_path / "full/metrics.csv")
    _, rows_part = read_metrics(tmp_path / "part/metrics.csv")
    assert strip_wall(rows_full) == strip_wall(rows_part)


def test_resume_rejects_other_model(tmp_path):
    train(tiny(tmp_path), stop_epoch=1)
    other = tiny(tmp_path).with_overrides(model={"use_adfb": False})
    with pytest.raises(ValueError, match="differs"):
        train(other, resume=str(tmp_path / "last.pt"))


def test_max_iters(tmp_path):
    assert train(tiny(tmp_path), max_iters=1).iteration == 1


def test_gradient_clipping_runs(tmp_path):
    cfg = tiny(tmp_path).with_overrides(optim={"grad_clip": 0.1})
    res = train(cfg, max_iters=2)
    assert all(math.isfinite(v) for v in res.losses)


def test_divergence_dumps_batch(tmp_path):
    cfg = tiny(tmp_path)
    from mitnet.data import make_synthetic_pairs, PairedSample

    bad = [PairedSample(s.hazy * float("nan"), s.gt, s.id) for s in make_synthetic_pairs(2, 16)]
    with pytest.raises(TrainingDiverged, match="non-finite"):
        train(cfg, samples=bad)
    assert torch.load(tmp_path / "nan_dump.pt")["iter"] == 1
