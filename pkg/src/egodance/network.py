"""Skeleton Mamba denoiser.

Data flows through each block as ``(B, T, J', C)`` where ``J'`` is the token
count of the topology (24 joints plus the root-translation token) and ``C``
the per-joint working width.  Inside a block:

    tokenize -> group scan (MSSD) -> joint scan -> inverse tokenize
             -> temporal scan (forward + backward) -> cross-attention on z

with FiLM timestep modulation in front and residual connections around each
stage.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .conditioning import ConditionEncoder, CrossAttention, DenseFiLM, apply_film, sinusoidal_embedding
from .errors import ConfigurationError, NumericFailure, ValidationError
from .skeleton import SkeletonTopology
from .ssd import SsdParams, ssd_scan


# --------------------------------------------------------------------------- tokenizer

def human_tokenize(x, topo: SkeletonTopology):
    """``(..., J', D)`` -> ``(..., G, P * D)``; slots follow each group's declared order."""
    if x.shape[-2] != topo.token_count:
        raise ConfigurationError(f"pose has {x.shape[-2]} joints, topology expects {topo.token_count}")
    idx = topo.group_index().to(x.device)
    g = x[..., idx, :]  # (..., G, P, D)
    return g.reshape(*g.shape[:-2], -1)


def inverse_human_tokenize(joints, topo: SkeletonTopology):
    """``(..., G, P, D)`` -> ``(..., J', D)`` averaging every slot that holds a joint.

    The mean is accumulated as a running update ``m += (x_k - m) / k``, which
    reproduces identical copies bit-for-bit.
    """
    G, P = topo.group_count, topo.group_size
    if joints.shape[-3:-1] != (G, P):
        raise ConfigurationError(f"expected (..., {G}, {P}, D) group joints, got {tuple(joints.shape)}")
    table, mask = topo.slot_table
    flat = joints.reshape(*joints.shape[:-3], G * P, joints.shape[-1])
    table = table.to(joints.device)
    mask = mask.to(device=joints.device, dtype=joints.dtype)
    m = flat[..., table[0], :]
    for k in range(1, table.shape[0]):
        w = (mask[k] / (k + 1)).unsqueeze(-1)
        m = m + w * (flat[..., table[k], :] - m)
    return m


# --------------------------------------------------------------------------- group scan

class PermutationSet:
    """``n`` permutations of the ``G`` group tokens; the first is the identity."""

    def __init__(self, perms):
        perms = [list(map(int, p)) for p in perms]
        if not perms:
            raise ValidationError("need at least one permutation")
        G = len(perms[0])
        for p in perms:
            if sorted(p) != list(range(G)):
                raise ValidationError(f"{p} is not a permutation of range({G})")
        if perms[0] != list(range(G)):
            raise ValidationError("the first permutation must be the identity")
        self.perms = torch.tensor(perms, dtype=torch.long)
        self.inverse = torch.argsort(self.perms, dim=1)

    @property
    def n(self) -> int:
        return self.perms.shape[0]

    @property
    def size(self) -> int:
        return self.perms.shape[1]

    @classmethod
    def default(cls, G: int, n: int = 2, seed: int = 0) -> "PermutationSet":
        """Identity and reversal, then seeded random permutations up to ``n``."""
        perms = [list(range(G))]
        if n >= 2:
            perms.append(list(range(G))[::-1])
        rng = np.random.default_rng(seed)
        while len(perms) < n:
            perms.append(rng.permutation(G).tolist())
        return cls(perms)

    def tolist(self):
        return self.perms.tolist()


def mssd(g, perms: PermutationSet, params: SsdParams, reset_segments: bool = False,
         method: str = "dual"):
    """Multi-directional SSD over the group axis (axis -2) of ``g (..., G, E)``.

    Each permuted copy of the tokens is concatenated along the group axis and
    one SSD runs over all ``n * G`` tokens, so state flows from one segment to
    the next.  ``reset_segments`` scans every segment from a zero state
    instead.  Outputs are mapped back with the inverse permutations and
    averaged.
    """
    G = g.shape[-2]
    if perms.size != G:
        raise ValidationError(f"permutations act on {perms.size} tokens, input has {G}")
    p = perms.perms.to(g.device)
    segments = [g[..., p[i], :] for i in range(perms.n)]
    if reset_segments:
        out = ssd_scan(torch.stack(segments, dim=-3), params, method=method)
        outs = out.unbind(dim=-3)
    else:
        out = ssd_scan(torch.cat(segments, dim=-2), params, method=method)
        outs = out.split(G, dim=-2)
    inv = perms.inverse.to(g.device)
    restored = [o[..., inv[i], :] for i, o in enumerate(outs)]
    if len(restored) == 1:
        return restored[0]
    return torch.stack(restored, dim=0).mean(dim=0)


# --------------------------------------------------------------------------- joint / temporal scans

class JointScan(nn.Module):
    """Linear map of each group token, rearranged to ``P`` joints and scanned along them.

    One SSD parameter set is shared by all ``G`` groups.
    """

    def __init__(self, group_size: int, width: int, state_dim: int = 16, method: str = "dual"):
        super().__init__()
        self.P, self.width, self.method = group_size, width, method
        self.linear = nn.Linear(group_size * width, group_size * width)
        self.ssd = SsdParams(width, state_dim)

    def forward(self, y):
        if y.shape[-1] != self.P * self.width:
            raise ConfigurationError(f"group tokens have width {y.shape[-1]}, expected {self.P * self.width}")
        yp = self.linear(y).reshape(*y.shape[:-1], self.P, self.width)
        return ssd_scan(yp, self.ssd, method=self.method)


def joint_scan(y, topo: SkeletonTopology, layer: JointScan):
    if y.shape[-2] != topo.group_count:
        raise ConfigurationError(f"expected {topo.group_count} group tokens, got {y.shape[-2]}")
    return layer(y)


class TemporalScan(nn.Module):
    """Forward and backward SSDs along time, merged by sum then a linear projection."""

    def __init__(self, width: int, state_dim: int = 16, method: str = "dual",
                 zero_init_merge: bool = True):
        super().__init__()
        self.method = method
        self.fwd = SsdParams(width, state_dim)
        self.bwd = SsdParams(width, state_dim)
        # branch sums grow with sequence length; normalize before projecting
        self.merge_norm = nn.LayerNorm(width)
        self.merge = nn.Linear(width, width)
        if zero_init_merge:
            nn.init.zeros_(self.merge.weight)
            nn.init.zeros_(self.merge.bias)

    def branches(self, t):
        """Forward and backward branch outputs for ``t (..., T, J, D)``."""
        tp = t.transpose(-3, -2)  # (..., J, T, D)
        f = ssd_scan(tp, self.fwd, "forward", self.method)
        b = ssd_scan(tp, self.bwd, "backward", self.method)
        return f.transpose(-3, -2), b.transpose(-3, -2)

    def forward(self, t):
        f, b = self.branches(t)
        return self.merge(self.merge_norm(f + b))


def temporal_scan(t, layer: TemporalScan):
    return layer(t)


# --------------------------------------------------------------------------- blocks

@dataclass
class ModelConfig:
    width: int = 32
    blocks: int = 4
    state_dim: int = 16
    cond_dim: int = 64
    time_dim: int = 64
    max_step: int = 50
    permutations: tuple = ()  # explicit permutation list; empty means PermutationSet.default
    n_perms: int = 2
    perm_seed: int = 0
    reset_segments: bool = False
    ssd_method: str = "dual"
    music_dim: int = 16
    vision_dim: int = 16
    encoder_depth: int = 2
    window: int = 512

    def to_dict(self):
        d = asdict(self)
        d["permutations"] = [list(p) for p in self.permutations]
        return d


class SkeletonBlock(nn.Module):
    def __init__(self, topo: SkeletonTopology, cfg: ModelConfig, perms: PermutationSet):
        super().__init__()
        C, P = cfg.width, topo.group_size
        self.topo, self.perms, self.reset_segments, self.method = topo, perms, cfg.reset_segments, cfg.ssd_method
        self.film = DenseFiLM(C, cfg.max_step, cfg.time_dim)
        self.norm1 = nn.LayerNorm(C)
        self.group_ssd = SsdParams(P * C, cfg.state_dim)
        self.joint_scan = JointScan(P, C, cfg.state_dim, cfg.ssd_method)
        self.spatial_norm = nn.LayerNorm(C)
        self.spatial_out = nn.Linear(C, C)
        nn.init.zeros_(self.spatial_out.weight)
        nn.init.zeros_(self.spatial_out.bias)
        self.norm2 = nn.LayerNorm(C)
        self.temporal = TemporalScan(C, cfg.state_dim, cfg.ssd_method)
        self.cross = CrossAttention(C, cfg.cond_dim)
        self.capture = False
        self.captured = None

    def spatial(self, u):
        g = human_tokenize(u, self.topo)
        y = mssd(g, self.perms, self.group_ssd, self.reset_segments, self.method)
        j = joint_scan(y, self.topo, self.joint_scan)
        t = inverse_human_tokenize(j, self.topo)
        if self.capture:
            self.captured = t.detach()
        return t

    def forward(self, h, z, m):
        scale, shift = self.film(m)
        u = apply_film(self.norm1(h), scale, shift)
        h = h + self.spatial_out(self.spatial_norm(self.spatial(u)))
        h = h + self.temporal(self.norm2(h))
        return self.cross(h, z)


class SkeletonDenoiser(nn.Module):
    """Predicts the clean motion ``x0`` from ``x_m (B, T, J', D)``, step ``m`` and condition ``z``."""

    def __init__(self, topo: SkeletonTopology, cfg: ModelConfig | None = None, in_dim: int = 6):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.topo, self.cfg = topo, cfg
        if cfg.permutations:
            self.perms = PermutationSet(cfg.permutations)
        else:
            self.perms = PermutationSet.default(topo.group_count, cfg.n_perms, cfg.perm_seed)
        self.lift = nn.Linear(in_dim, cfg.width)
        self.joint_embed = nn.Parameter(0.1 * torch.randn(topo.token_count, cfg.width))
        self.cond_in = nn.Linear(cfg.cond_dim, cfg.width)
        self.blocks = nn.ModuleList(SkeletonBlock(topo, cfg, self.perms) for _ in range(cfg.blocks))
        self.out_norm = nn.LayerNorm(cfg.width)
        self.out = nn.Linear(cfg.width, in_dim)
        # step-dependent per-channel skip from x_m to the x0 estimate; zero at init
        self.skip = nn.Linear(cfg.time_dim, in_dim)
        nn.init.zeros_(self.skip.weight)
        nn.init.zeros_(self.skip.bias)

    def forward(self, x_m, m, z):
        if x_m.shape[-2] != self.topo.token_count:
            raise ConfigurationError(f"motion has {x_m.shape[-2]} tokens, expected {self.topo.token_count}")
        if z.shape[-1] != self.cfg.cond_dim:
            raise ConfigurationError(f"condition width {z.shape[-1]} != {self.cfg.cond_dim}")
        m = torch.as_tensor(m, device=x_m.device)
        if m.dim() == 0:
            m = m.expand(x_m.shape[0])
        T = x_m.shape[-3]
        if z.shape[-2] != T:
            raise ConfigurationError(f"condition has {z.shape[-2]} frames, motion has {T}")
        # frame index, so queries can find their own frame of z in cross-attention,
        # plus the frame's own condition broadcast over joints
        frame_pe = sinusoidal_embedding(torch.arange(T), self.cfg.width).to(x_m.dtype)
        h = self.lift(x_m) + self.joint_embed + (frame_pe + self.cond_in(z)).unsqueeze(-2)
        for i, block in enumerate(self.blocks):
            h = block(h, z, m)
            if not torch.isfinite(h).all():
                raise NumericFailure(f"non-finite activations after block {i}", where=i)
        gate = self.skip(sinusoidal_embedding(m, self.cfg.time_dim).to(x_m.dtype))[:, None, None, :]
        return self.out(self.out_norm(h)) + gate * x_m


class EgoMusicModel(nn.Module):
    """Condition encoders plus the skeleton denoiser."""

    def __init__(self, topo: SkeletonTopology, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.topo, self.cfg = topo, cfg
        self.encoder = ConditionEncoder(cfg.music_dim, cfg.vision_dim, cfg.cond_dim,
                                        cfg.encoder_depth, cfg.window)
        self.denoiser = SkeletonDenoiser(topo, cfg)

    def condition(self, music, vision):
        return self.encoder(music, vision)

    def forward(self, x_m, m, music, vision):
        return self.denoiser(x_m, m, self.condition(music, vision).z)
