"""Single-file checkpoints: config, weights, optimizer state, counters and RNG state."""
import random
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, RunConfig
from .model import MITNet, ModelConfig

FORMAT = "mitnet-ckpt-v1"


def rng_state():
    return {
        "torch": torch.get_rng_state(),
        "numpy": np.random.get_state(),
        "python": random.getstate(),
    }


def set_rng_state(state):
    torch.set_rng_state(state["torch"])
    np.random.set_state(state["numpy"])
    random.setstate(state["python"])


def save_checkpoint(path, cfg: RunConfig, model, optimizer=None, epoch=0, iteration=0, **extra):
    payload = {
        "format": FORMAT,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "iteration": iteration,
        "seed": cfg.train.seed,
        "rng": rng_state(),
        **extra,
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def read_checkpoint(path):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise ConfigError(f"{path} is not a {FORMAT} checkpoint")
    return payload


def load_checkpoint(path, expect_model: ModelConfig = None):
    """Returns (run config, model with weights loaded, raw payload).

    When ``expect_model`` is given the stored model config must match it;
    the check runs before any weights are touched.
    """
    payload = read_checkpoint(path)
    cfg = RunConfig.from_dict(payload["config"])
    if expect_model is not None and expect_model != cfg.model:
        diff = {
            k: (v, getattr(expect_model, k))
            for k, v in cfg.model.to_dict().items()
            if getattr(expect_model, k) != v
        }
        raise ConfigError(f"checkpoint model config differs (stored, expected): {diff}")
    model = MITNet(cfg.model)
    model.load_state_dict(payload["model"])
    return cfg, model, payload
