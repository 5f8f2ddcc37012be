"""Two-stage MITNet assembly and the ablation variant factory."""
from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .atim import ADFB, CrossScaleFusion
from .blocks import SAM, BlockConfig, Downsample, ResidualSpectralBlock, Upsample, zero_biases
from .miloss import EmbeddingHead
from .spectral import amp_swap

STAGE_ORDERS = ("amplitude_first", "phase_first")
STAGE2_INPUTS = ("amp_swap", "raw_y1")


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 20
    units_per_stage: int = 7
    scales: int = 4
    image_channels: int = 3
    adfb_k: int = 3
    d_emb: int = 128
    mi_hidden: int = 64
    use_spectral_rab: bool = True
    use_spectral_rpb: bool = True
    stage_order: str = "amplitude_first"
    stage2_input_mode: str = "amp_swap"
    use_triple_interaction: bool = True
    use_adfb: bool = True
    use_mic: bool = True

    def __post_init__(self):
        if self.base_channels <= 0 or self.base_channels % 2:
            raise ValueError(f"base_channels must be a positive even number, got {self.base_channels}")
        if self.scales < 2:
            raise ValueError("need at least two scales")
        if self.units_per_stage != 2 * self.scales - 1:
            raise ValueError(
                f"units_per_stage must be 2*scales-1 = {2 * self.scales - 1} "
                f"(encoder + bottleneck + decoder), got {self.units_per_stage}"
            )
        if self.stage_order not in STAGE_ORDERS:
            raise ValueError(f"stage_order must be one of {STAGE_ORDERS}")
        if self.stage2_input_mode not in STAGE2_INPUTS:
            raise ValueError(f"stage2_input_mode must be one of {STAGE2_INPUTS}")
        if self.adfb_k % 2 == 0:
            raise ValueError("adfb_k must be odd")

    @property
    def channels(self) -> List[int]:
        return [self.base_channels * 2 ** i for i in range(self.scales)]

    @property
    def pad_multiple(self) -> int:
        return 2 ** (self.scales - 1)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


_ABLATION_BASE = dict(use_triple_interaction=False, use_adfb=False, use_mic=False)

VARIANTS = {
    "M1": dict(_ABLATION_BASE, use_spectral_rab=False, use_spectral_rpb=False),
    "M2": dict(_ABLATION_BASE, use_spectral_rab=False),
    "M3": dict(_ABLATION_BASE, use_spectral_rpb=False),
    "M4": dict(_ABLATION_BASE, stage_order="phase_first"),
    "M5": dict(_ABLATION_BASE, stage2_input_mode="raw_y1"),
    "M6": dict(_ABLATION_BASE),
    "Ma": dict(_ABLATION_BASE),
    "Mb": dict(_ABLATION_BASE, use_triple_interaction=True),
    "Mc": dict(_ABLATION_BASE, use_adfb=True),
    "Md": dict(_ABLATION_BASE, use_triple_interaction=True, use_adfb=True),
    "Me": dict(use_triple_interaction=True, use_adfb=True, use_mic=True),
}

# switches every variant pins explicitly; all other fields come from ``cfg``
_VARIANT_KEYS = (
    "use_spectral_rab", "use_spectral_rpb", "stage_order", "stage2_input_mode",
    "use_triple_interaction", "use_adfb", "use_mic",
)


def build_variant(name: str, cfg: Optional[ModelConfig] = None) -> ModelConfig:
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; valid names: {', '.join(VARIANTS)}")
    cfg = cfg or ModelConfig()
    defaults = ModelConfig()
    switches = {k: getattr(defaults, k) for k in _VARIANT_KEYS}
    switches.update(VARIANTS[name])
    return replace(cfg, **switches)


@dataclass
class StageBundle:
    image: torch.Tensor
    encoder: List[torch.Tensor] = field(default_factory=list)
    decoder: List[torch.Tensor] = field(default_factory=list)
    embeddings: Optional[List[torch.Tensor]] = None


def _unit(channels, branch, spectral_on):
    return ResidualSpectralBlock(BlockConfig(channels, branch if spectral_on else "none"))


class Stage(nn.Module):
    """U-shaped stage: one unit per encoder scale, a bottleneck unit, one per decoder scale.

    ``merge`` selects how decoder scale i (above the bottleneck) combines the
    upsampled path with extra inputs: ``"skip"`` concatenates the same-scale
    encoder output (stage 1); ``"cross"`` concatenates two cross-stage maps
    supplied by the caller (stage 2).
    """

    def __init__(self, cfg: ModelConfig, branch: str, spectral_on: bool, merge: str):
        super().__init__()
        ch = cfg.channels
        n = cfg.scales
        self.merge_mode = merge
        self.head = nn.Conv2d(cfg.image_channels, ch[0], 3, 1, 1)
        self.enc = nn.ModuleList(_unit(ch[i], branch, spectral_on) for i in range(n - 1))
        self.down = nn.ModuleList(Downsample(ch[i]) for i in range(n - 1))
        self.bottleneck = _unit(ch[-1], branch, spectral_on)
        self.up = nn.ModuleList(Upsample(ch[i + 1]) for i in range(n - 1))
        n_in = 2 if merge == "skip" else 3
        self.merge = nn.ModuleList(nn.Conv2d(n_in * ch[i], ch[i], 1) for i in range(n - 1))
        self.dec = nn.ModuleList(_unit(ch[i], branch, spectral_on) for i in range(n - 1))
        zero_biases(self.head)
        zero_biases(self.merge)

    def encode(self, x, extra=None):
        f = self.head(x)
        if extra is not None:
            f = f + extra
        feats = []
        for unit, down in zip(self.enc, self.down):
            f = unit(f)
            feats.append(f)
            f = down(f)
        return feats, self.bottleneck(f)

    def decode_step(self, i, f, extras):
        f = self.up[i](f)
        f = self.merge[i](torch.cat([f, *extras], dim=1))
        return self.dec[i](f)


class MITNet(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        ch = cfg.channels
        n_up = cfg.scales - 1
        amp_first = cfg.stage_order == "amplitude_first"
        rab = ("amplitude", cfg.use_spectral_rab)
        rpb = ("phase", cfg.use_spectral_rpb)
        first, second = (rab, rpb) if amp_first else (rpb, rab)
        self.stage1 = Stage(cfg, *first, merge="skip")
        self.stage2 = Stage(cfg, *second, merge="cross")
        self.sam = SAM(ch[0], cfg.image_channels)
        self.tail = nn.Conv2d(ch[0], cfg.image_channels, 3, 1, 1)
        zero_biases(self.tail)
        if cfg.use_triple_interaction:
            self.fuse_d1 = CrossScaleFusion(ch[:n_up])
            self.fuse_e2 = CrossScaleFusion(ch[:n_up])
        if cfg.use_adfb:
            self.adfb = nn.ModuleList(ADFB(c, cfg.adfb_k) for c in ch[:n_up])
        if cfg.use_mic:
            self.embed_d = nn.ModuleList(EmbeddingHead(c, cfg.mi_hidden, cfg.d_emb) for c in ch[:n_up])
            self.embed_e = nn.ModuleList(EmbeddingHead(c, cfg.mi_hidden, cfg.d_emb) for c in ch[:n_up])

    def training_only_modules(self):
        if self.cfg.use_mic:
            return [self.embed_d, self.embed_e]
        return []

    def stage2_input(self, y1, x_hazy):
        if self.cfg.stage2_input_mode == "raw_y1":
            return y1
        if self.cfg.stage_order == "amplitude_first":
            return amp_swap(y1, x_hazy)
        return amp_swap(x_hazy, y1)

    def _pad(self, x):
        m = self.cfg.pad_multiple
        h, w = x.shape[-2:]
        ph, pw = (-h) % m, (-w) % m
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="replicate")
        return x, (h, w)

    def forward(self, x_hazy, embed: Optional[bool] = None):
        if x_hazy.dim() != 4 or x_hazy.shape[1] != self.cfg.image_channels:
            raise ValueError(f"expected (b, {self.cfg.image_channels}, h, w), got {tuple(x_hazy.shape)}")
        if embed is None:
            embed = self.training and self.cfg.use_mic
        x, (h, w) = self._pad(x_hazy)
        n_up = self.cfg.scales - 1

        # stage 1
        enc1, f = self.stage1.encode(x)
        dec1 = [None] * n_up
        for i in reversed(range(n_up)):
            f = self.stage1.decode_step(i, f, [enc1[i]])
            dec1[i] = f
        y1, gated = self.sam(dec1[0], x)

        # stage 2
        x2 = self.stage2_input(y1, x)
        enc2, f = self.stage2.encode(x2, extra=gated)
        if self.cfg.use_triple_interaction:
            d1_in, e2_in = self.fuse_d1(dec1), self.fuse_e2(enc2)
        else:
            d1_in, e2_in = dec1, enc2
        dec2 = [None] * n_up
        for i in reversed(range(n_up)):
            f = self.stage2.decode_step(i, f, [d1_in[i], e2_in[i]])
            if self.cfg.use_adfb:
                f = self.adfb[i](d1_in[i], e2_in[i], f)
            dec2[i] = f
        y2 = self.tail(dec2[0]) + x2

        emb_d = emb_e = None
        if embed:
            if not self.cfg.use_mic:
                raise ValueError("embeddings requested but the model has no MI heads")
            emb_d = [head(d) for head, d in zip(self.embed_d, dec1)]
            emb_e = [head(e) for head, e in zip(self.embed_e, enc2)]

        y1, y2 = y1[..., :h, :w], y2[..., :h, :w]
        if not self.training:
            y1, y2 = y1.clamp(0, 1), y2.clamp(0, 1)
        s1 = StageBundle(y1, enc1, dec1, emb_d)
        s2 = StageBundle(y2, enc2, dec2, emb_e)
        return s1, s2


def _numel(modules):
    return sum(p.numel() for m in modules for p in m.parameters())


def count_parameters(cfg_or_model) -> int:
    """Inference parameters: everything except the training-only MI heads."""
    model = cfg_or_model if isinstance(cfg_or_model, nn.Module) else MITNet(cfg_or_model)
    return _numel([model]) - _numel(model.training_only_modules())


def count_training_only_parameters(cfg_or_model) -> int:
    model = cfg_or_model if isinstance(cfg_or_model, nn.Module) else MITNet(cfg_or_model)
    return _numel(model.training_only_modules())
