"""Music/vision encoders, fusion, timestep FiLM and cross-attention.

The encoders read precomputed per-frame feature tracks (``music_feat`` and
``vision_feat`` in a sample container), so a pretrained backbone can be
slotted in upstream without touching this module.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, ValidationError


@dataclass
class ConditioningBundle:
    z_a: torch.Tensor  # (..., T, D_c) music embedding
    z_v: torch.Tensor  # (..., T, D_c) vision embedding
    z: torch.Tensor  # (..., T, D_c) fused condition


def sinusoidal_embedding(positions, dim: int, max_period: float = 10000.0):
    """Standard transformer sine/cosine table evaluated at ``positions``."""
    positions = torch.as_tensor(positions)
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = positions.to(torch.float64)[..., None] * freqs
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class SelfAttentionLayer(nn.Module):
    """Pre-norm single-head self-attention followed by a GELU MLP."""

    def __init__(self, dim: int, mlp_ratio: int = 2):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_ratio * dim), nn.GELU(),
                                 nn.Linear(mlp_ratio * dim, dim))

    def forward(self, x):
        q, k, v = self.qkv(self.norm1(x)).chunk(3, dim=-1)
        w = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1]), dim=-1)
        x = x + self.proj(w @ v)
        return x + self.mlp(self.norm2(x))


class SequenceEncoder(nn.Module):
    """Small attention encoder mapping ``(..., T, in_dim)`` features to ``(..., T, D_c)``.

    Positions are injected with a fixed sinusoidal table, so reordering frames
    changes the output.  ``window`` caps the sequence length.
    """

    def __init__(self, in_dim: int, cond_dim: int = 64, depth: int = 2, window: int = 512,
                 zero_init_head: bool = False):
        super().__init__()
        self.in_dim, self.cond_dim, self.window = in_dim, cond_dim, window
        self.inp = nn.Linear(in_dim, cond_dim)
        self.layers = nn.ModuleList(SelfAttentionLayer(cond_dim) for _ in range(depth))
        self.norm = nn.LayerNorm(cond_dim)
        self.head = nn.Linear(cond_dim, cond_dim)
        self.register_buffer("pos_table", sinusoidal_embedding(torch.arange(window), cond_dim).float(),
                             persistent=False)
        if zero_init_head:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def forward(self, feats):
        if feats.shape[-1] != self.in_dim:
            raise ConfigurationError(f"expected {self.in_dim} feature channels, got {feats.shape[-1]}")
        T = feats.shape[-2]
        if not 1 <= T <= self.window:
            raise ValidationError(f"sequence length {T} outside the configured window [1, {self.window}]")
        if not torch.isfinite(feats).all():
            raise ValidationError("feature track contains non-finite values")
        h = self.inp(feats) + self.pos_table[:T].to(feats.dtype)
        for layer in self.layers:
            h = layer(h)
        return self.head(self.norm(h))


class Fusion(nn.Module):
    """Per-frame concatenation of both embeddings followed by a linear map to ``D_c``."""

    def __init__(self, cond_dim: int = 64):
        super().__init__()
        self.lin = nn.Linear(2 * cond_dim, cond_dim)
        nn.init.zeros_(self.lin.bias)

    def forward(self, z_a, z_v):
        if z_a.shape != z_v.shape:
            raise ValidationError(f"music {tuple(z_a.shape)} and vision {tuple(z_v.shape)} embeddings differ")
        return self.lin(torch.cat([z_a, z_v], dim=-1))


class ConditionEncoder(nn.Module):
    def __init__(self, music_dim: int, vision_dim: int, cond_dim: int = 64, depth: int = 2,
                 window: int = 512):
        super().__init__()
        self.music = SequenceEncoder(music_dim, cond_dim, depth, window)
        self.vision = SequenceEncoder(vision_dim, cond_dim, depth, window)
        self.fusion = Fusion(cond_dim)

    def forward(self, music_feat, vision_feat) -> ConditioningBundle:
        if music_feat.shape[-2] != vision_feat.shape[-2]:
            raise ValidationError("music and vision tracks have different lengths")
        z_a = self.music(music_feat)
        z_v = self.vision(vision_feat)
        return ConditioningBundle(z_a, z_v, self.fusion(z_a, z_v))


def encode_music(encoder: ConditionEncoder, features):
    return encoder.music(features)


def encode_vision(encoder: ConditionEncoder, features):
    return encoder.vision(features)


def fuse(encoder: ConditionEncoder, z_a, z_v):
    return encoder.fusion(z_a, z_v)


class DenseFiLM(nn.Module):
    """Timestep -> per-channel ``(scale, shift)``.

    The last layer is zero-initialized and the scale is offset by one, so a
    fresh module applies the identity map.
    """

    def __init__(self, channels: int, max_step: int, embed_dim: int = 64):
        super().__init__()
        self.channels, self.max_step, self.embed_dim = channels, max_step, embed_dim
        self.mlp = nn.Sequential(nn.Linear(embed_dim, embed_dim), nn.SiLU())
        self.out = nn.Linear(embed_dim, 2 * channels)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, m):
        m = torch.as_tensor(m)
        if bool(((m < 1) | (m > self.max_step)).any()):
            raise ValidationError(f"timestep outside [1, {self.max_step}]: {m.tolist()}")
        dtype = self.out.weight.dtype
        emb = sinusoidal_embedding(m, self.embed_dim).to(dtype)
        delta = self.out(self.mlp(emb))
        d_scale, shift = delta.chunk(2, dim=-1)
        return 1.0 + d_scale, shift


def film_embed(film: DenseFiLM, m):
    return film(m)


def apply_film(x, scale, shift):
    """``scale * x + shift`` broadcasting ``(B, C)`` over the middle axes of ``x``."""
    extra = x.dim() - scale.dim()
    shape = scale.shape[:-1] + (1,) * extra + scale.shape[-1:]
    return scale.reshape(shape) * x + shift.reshape(shape)


class CrossAttention(nn.Module):
    """Single-head attention: queries from tokens, keys/values from ``z``; residual output.

    The output projection starts at zero so the layer begins as the identity.
    """

    def __init__(self, dim: int, cond_dim: int):
        super().__init__()
        self.dim, self.cond_dim = dim, cond_dim
        self.norm = nn.LayerNorm(dim)
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(cond_dim, 2 * dim)
        self.out = nn.Linear(dim, dim)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def attention_weights(self, tokens, z):
        q = self.q(self.norm(tokens))
        k, _ = self.kv(z).chunk(2, dim=-1)
        return torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.dim), dim=-1)

    def forward(self, tokens, z):
        """``tokens (B, ..., C)`` attend over ``z (B, S, D_c)``; shape preserved."""
        if tokens.shape[-1] != self.dim or z.shape[-1] != self.cond_dim:
            raise ConfigurationError(
                f"cross-attention expects widths ({self.dim}, {self.cond_dim}), "
                f"got ({tokens.shape[-1]}, {z.shape[-1]})")
        flat = tokens.reshape(tokens.shape[0], -1, self.dim)
        _, v = self.kv(z).chunk(2, dim=-1)
        attended = self.attention_weights(flat, z) @ v
        return tokens + self.out(attended).reshape(tokens.shape)


def cross_attend(layer: CrossAttention, tokens, z):
    return layer(tokens, z)
