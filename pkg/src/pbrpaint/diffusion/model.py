"""Triple-head denoising U-Net and its single-head counterpart.

Layout (triple head, width w, input H x W):

    per head i:   conv_in_i(z_i) + cond features  -> ResBlock_i -> Down_i (2w, H/2)
    trunk:        fuse(3 x 2w) -> ResBlock -> Down (4w, H/4)
                  -> ResBlock(+tag) -> ResBlock -> Up (2w, H/2) + skip -> ResBlock
                  -> Up (w, H) + the three full-resolution head skips -> final conv (w)
    per head i:   ResBlock_i -> conv_out_i (3 channels)

Heads see the input only through the trunk output, so the three material
maps are decoded by disjoint parameter sets.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..material import DimensionError

MODALITIES = ("albedo", "rm", "bump")
N_MODEL_CHANNELS = 9
ESTIMATOR_COND = 7  # image 3, confidence 1, normal 3
ESTIMATOR_COND_NO_CONF = 6
REFINER_COND = 13  # masked materials 9, hole mask 1, CCM 3


@dataclass(frozen=True)
class ModelConfig:
    cond_channels: int = ESTIMATOR_COND
    width: int = 32
    n_tags: int = 12
    tag_dim: int = 16
    heads: int = 3  # 3 = triple head, 1 = single head over all nine channels
    groups: int = 8

    def __post_init__(self):
        if self.heads not in (1, 3):
            raise ValueError(f"heads must be 1 or 3, got {self.heads}")
        if self.width < 1 or self.cond_channels < 1:
            raise ValueError("width and cond_channels must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def _groups(ch: int, want: int) -> int:
    g = min(want, ch)
    while ch % g:
        g -= 1
    return g


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], -1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, emb_dim: int, groups: int = 8):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(cin, groups), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.emb = nn.Linear(emb_dim, cout)
        self.norm2 = nn.GroupNorm(_groups(cout, groups), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class Down(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Up(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, padding=1)

    def forward(self, x, size):
        return self.conv(F.interpolate(x, size=size, mode="nearest"))


class OutHead(nn.Module):
    """Full-resolution decoder block plus output convolution for one modality."""

    def __init__(self, w: int, cout: int, emb_dim: int, groups: int):
        super().__init__()
        self.block = ResBlock(w, w, emb_dim, groups)
        self.norm = nn.GroupNorm(_groups(w, groups), w)
        self.conv_out = nn.Conv2d(w, cout, 3, padding=1)

    def forward(self, h, emb):
        return self.conv_out(F.silu(self.norm(self.block(h, emb))))


class Denoiser(nn.Module):
    """Predicts v for the 9-channel material latent given conditioning, timestep and tag."""

    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = c = config
        w, g = c.width, c.groups
        emb_dim = 4 * w
        self.time_mlp = nn.Sequential(nn.Linear(w, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim))
        self.tag_table = nn.Embedding(c.n_tags, c.tag_dim)
        self.cond_enc = nn.Sequential(nn.Conv2d(c.cond_channels, w, 3, padding=1), nn.SiLU(),
                                      nn.Conv2d(w, w, 3, padding=1))
        n = c.heads
        per_head_in = N_MODEL_CHANNELS // n
        self.conv_in = nn.ModuleList(nn.Conv2d(per_head_in, w, 3, padding=1) for _ in range(n))
        self.enc_block = nn.ModuleList(ResBlock(w, w, emb_dim, g) for _ in range(n))
        self.enc_down = nn.ModuleList(Down(w, 2 * w) for _ in range(n))

        self.fuse = nn.Conv2d(n * 2 * w, 2 * w, 1)
        self.mid_in = ResBlock(2 * w, 2 * w, emb_dim, g)
        self.down = Down(2 * w, 4 * w)
        self.bottleneck = ResBlock(4 * w + c.tag_dim, 4 * w, emb_dim, g)
        self.bottleneck2 = ResBlock(4 * w, 4 * w, emb_dim, g)
        self.up_half = Up(4 * w, 2 * w)
        self.mid_out = ResBlock(4 * w, 2 * w, emb_dim, g)
        self.up_full = Up(2 * w, w)
        self.trunk_final = nn.Conv2d(w + n * w, w, 3, padding=1)

        self.heads = nn.ModuleList(OutHead(w, per_head_in, emb_dim, g) for _ in range(n))

    # parameter groups used by tests and ablations
    def head_parameters(self, i: int):
        return list(self.heads[i].parameters())

    def trunk_parameters(self):
        own = {id(p) for h in self.heads for p in h.parameters()}
        return [p for p in self.parameters() if id(p) not in own]

    def embed(self, t: torch.Tensor, dtype) -> torch.Tensor:
        return self.time_mlp(timestep_embedding(t, self.config.width).to(dtype))

    def trunk(self, z: torch.Tensor, cond: torch.Tensor, t: torch.Tensor, tag: torch.Tensor):
        c = self.config
        B, C, H, W = z.shape
        if C != N_MODEL_CHANNELS:
            raise DimensionError(f"latent needs {N_MODEL_CHANNELS} channels, got {C}")
        if cond.shape[0] != B or cond.shape[1] != c.cond_channels or tuple(cond.shape[2:]) != (H, W):
            raise DimensionError(f"conditioning {tuple(cond.shape)} does not match latent {tuple(z.shape)}")
        t = torch.as_tensor(t).reshape(-1)
        t = t.expand(B) if t.numel() == 1 else t
        tag = torch.as_tensor(tag, dtype=torch.long).reshape(-1)
        tag = tag.expand(B) if tag.numel() == 1 else tag
        emb = self.embed(t, z.dtype)
        cf = self.cond_enc(cond)
        step = N_MODEL_CHANNELS // c.heads
        skips, downs = [], []
        for i in range(c.heads):
            h = self.conv_in[i](z[:, i * step:(i + 1) * step]) + cf
            h = self.enc_block[i](h, emb)
            skips.append(h)
            downs.append(self.enc_down[i](h))
        h = self.mid_in(self.fuse(torch.cat(downs, 1)), emb)
        half = h
        h = self.down(h)
        tag_map = self.tag_table(tag)[:, :, None, None].expand(-1, -1, *h.shape[2:])
        h = self.bottleneck(torch.cat([h, tag_map], 1), emb)
        h = self.bottleneck2(h, emb)
        h = self.up_half(h, half.shape[2:])
        h = self.mid_out(torch.cat([h, half], 1), emb)
        h = self.up_full(h, (H, W))
        h = self.trunk_final(torch.cat([h] + skips, 1))
        return h, emb

    def decode(self, h: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        return torch.cat([head(h, emb) for head in self.heads], 1)

    def forward(self, z: torch.Tensor, cond: torch.Tensor, t, tag) -> torch.Tensor:
        """``z`` (B, 9, H, W), ``cond`` (B, C, H, W) -> predicted v (B, 9, H, W)."""
        h, emb = self.trunk(z, cond, t, tag)
        return self.decode(h, emb)

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_model(config: ModelConfig = ModelConfig(), seed: int | None = None) -> Denoiser:
    if seed is not None:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            return Denoiser(config)
    return Denoiser(config)
