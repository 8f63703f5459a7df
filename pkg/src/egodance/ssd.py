"""Selective state-space (SSD) sequence kernel.

The kernel uses a scalar per-step decay, so the linear recurrence

    h_t = a_t * h_{t-1} + B_t x_t^T,     y_t = C_t^T h_t

has an exact quadratic dual

    Y = (L o (C B^T)) X,    L[i, j] = prod_{s=j+1..i} a_s  (i >= j), else 0

where ``L`` is a lower-triangular 1-semiseparable mask.  Both forms are
implemented here; the recurrent one is the reference, the dual one is what
the network uses because it vectorizes over the scan axis.

Shapes: a sequence is ``(..., L, E)`` with the scan axis second to last.
Gates are ``a: (..., L)``, ``B, C: (..., L, N)``.  The hidden state is
``(..., N, E)``.
"""
from __future__ import annotations

from typing import Literal

import torch
from torch import nn

from .errors import ConfigurationError, ValidationError

Direction = Literal["forward", "backward"]


class SsdParams(nn.Module):
    """Learnable maps producing input-dependent gates ``a_t, B_t, C_t``.

    A single affine map reads each position and emits ``1 + 2 * state_dim``
    values: the decay logit, ``B_t`` and ``C_t``.  The decay is squashed
    into ``[eps, 1 - eps]`` so it stays strictly inside ``(0, 1)`` even when
    the sigmoid saturates in floating point.
    """

    def __init__(self, model_dim: int, state_dim: int = 16, decay_eps: float = 1e-6,
                 decay_init: float = 0.9):
        super().__init__()
        if model_dim < 1 or state_dim < 1:
            raise ConfigurationError(
                f"model_dim and state_dim must be positive, got {model_dim}, {state_dim}")
        if not 0.0 < decay_eps < 0.5:
            raise ConfigurationError(f"decay_eps must lie in (0, 0.5), got {decay_eps}")
        self.model_dim = model_dim
        self.state_dim = state_dim
        self.decay_eps = decay_eps
        self.proj = nn.Linear(model_dim, 1 + 2 * state_dim)
        with torch.no_grad():
            self.proj.weight.mul_(0.5)
            p = (decay_init - decay_eps) / (1.0 - 2.0 * decay_eps)
            self.proj.bias[0] = float(torch.logit(torch.tensor(p)))

    def gates(self, x: torch.Tensor):
        if x.shape[-1] != self.model_dim:
            raise ConfigurationError(
                f"sequence has {x.shape[-1]} channels, SSD expects {self.model_dim}")
        out = self.proj(x)
        n = self.state_dim
        a = self.decay_eps + (1.0 - 2.0 * self.decay_eps) * torch.sigmoid(out[..., 0])
        return a, out[..., 1:1 + n], out[..., 1 + n:]


def scan_recurrent(x, a, B, C):
    """Step-by-step evaluation of the recurrence over axis -2 of ``x``."""
    L = x.shape[-2]
    h = x.new_zeros(x.shape[:-2] + (B.shape[-1], x.shape[-1]))
    ys = []
    for t in range(L):
        h = a[..., t, None, None] * h + B[..., t, :, None] * x[..., t, None, :]
        ys.append(torch.einsum("...n,...ne->...e", C[..., t, :], h))
    return torch.stack(ys, dim=-2)


def segment_log_decay(a):
    """``S[..., i, j] = sum_{s=j+1..i} log a_s`` for ``i >= j``, ``-inf`` above.

    Built with a masked cumulative sum so ``a_s = 0`` yields ``-inf`` entries
    rather than ``-inf - -inf``.
    """
    L = a.shape[-1]
    log_a = torch.log(a)
    rep = log_a.unsqueeze(-1).expand(*log_a.shape, L)  # rep[..., s, j] = log a_s
    strict = torch.tril(torch.ones(L, L, dtype=torch.bool, device=a.device), diagonal=-1)
    rep = rep.masked_fill(~strict, 0.0)
    seg = torch.cumsum(rep, dim=-2)
    lower = torch.tril(torch.ones(L, L, dtype=torch.bool, device=a.device))
    return seg.masked_fill(~lower, float("-inf"))


def decay_mask(a):
    """The 1-semiseparable mask ``L`` as an explicit ``(..., L, L)`` tensor."""
    return torch.exp(segment_log_decay(a))


def scan_dual(x, a, B, C):
    """Quadratic masked-attention form of the same scan."""
    scores = torch.einsum("...in,...jn->...ij", C, B)
    return (decay_mask(a) * scores) @ x


def scan_dual_fast(x, a, B, C, reverse: bool = False):
    """Dual form from differences of one cumulative log-decay; needs ``a > 0``.

    ``reverse`` evaluates the backward scan directly with an upper-triangular
    mask, ``L[i, j] = prod_{s=i..j-1} a_s`` for ``j >= i``.
    """
    L = a.shape[-1]
    cs = torch.cumsum(torch.log(a), dim=-1)
    if reverse:
        ecs = cs - torch.log(a)
        seg = ecs.unsqueeze(-2) - ecs.unsqueeze(-1)  # [i, j] = ecs_j - ecs_i
        keep = torch.triu(torch.ones(L, L, dtype=torch.bool, device=a.device))
    else:
        seg = cs.unsqueeze(-1) - cs.unsqueeze(-2)  # [i, j] = cs_i - cs_j
        keep = torch.tril(torch.ones(L, L, dtype=torch.bool, device=a.device))
    mask = torch.where(keep, torch.exp(torch.clamp(seg, max=0.0)), torch.zeros((), dtype=a.dtype))
    scores = torch.einsum("...in,...jn->...ij", C, B)
    return (mask * scores) @ x


def _check_sequence(seq):
    if seq.dim() < 2:
        raise ConfigurationError(f"sequence must be (..., L, E), got shape {tuple(seq.shape)}")
    if seq.shape[-2] < 1:
        raise ValidationError("sequence length must be at least 1")
    if not torch.isfinite(seq).all():
        raise ValidationError("sequence contains non-finite values")


def _directed(fn, seq, params, direction):
    if direction == "forward":
        return fn(seq, *params.gates(seq))
    if direction == "backward":
        rev = torch.flip(seq, dims=(-2,))
        return torch.flip(fn(rev, *params.gates(rev)), dims=(-2,))
    raise ConfigurationError(f"direction must be 'forward' or 'backward', got {direction!r}")


def ssd_scan_recurrent(seq, params: SsdParams, direction: Direction = "forward"):
    """Recurrent SSD scan; position ``t`` sees only ``<= t`` (forward) or ``>= t``."""
    _check_sequence(seq)
    return _directed(scan_recurrent, seq, params, direction)


def ssd_scan_dual(seq, params: SsdParams):
    """Forward SSD scan evaluated through the masked-attention dual."""
    _check_sequence(seq)
    return _directed(scan_dual, seq, params, "forward")


def ssd_scan(seq, params: SsdParams, direction: Direction = "forward", method: str = "dual"):
    """Unchecked scan used inside the network.

    ``method`` is ``"dual"`` (vectorized quadratic form) or ``"recurrent"``;
    they agree to rounding error.
    """
    if method == "recurrent":
        return _directed(scan_recurrent, seq, params, direction)
    if method != "dual":
        raise ConfigurationError(f"unknown SSD method {method!r}")
    if direction not in ("forward", "backward"):
        raise ConfigurationError(f"direction must be 'forward' or 'backward', got {direction!r}")
    return scan_dual_fast(seq, *params.gates(seq), reverse=direction == "backward")


@torch.no_grad()
def causality_probe(seq, params: SsdParams, k: int, eps: float = 1e-2,
                    direction: Direction = "forward") -> float:
    """Max-abs change of outputs strictly upstream of ``k`` after nudging input ``k``.

    Upstream means positions ``< k`` for a forward scan and ``> k`` for a
    backward one.  A causal scan reports exactly 0.0.
    """
    _check_sequence(seq)
    L = seq.shape[-2]
    if not 0 <= k < L:
        raise ValidationError(f"probe position {k} outside [0, {L})")
    base = ssd_scan_recurrent(seq, params, direction)
    bumped = seq.clone()
    bumped[..., k, :] += eps
    out = ssd_scan_recurrent(bumped, params, direction)
    diff = (out - base).abs()
    upstream = diff[..., :k, :] if direction == "forward" else diff[..., k + 1:, :]
    if upstream.numel() == 0:
        return 0.0
    return float(upstream.max())
