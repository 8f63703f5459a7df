"""Noise schedule, forward noising and ancestral sampling (plain and head-guided).

Timesteps run ``1..M``; index 0 denotes clean data (``alpha_bar[0] = 1``).
The denoiser predicts the clean sample, and each reverse step uses the
Gaussian posterior ``q(x_{m-1} | x_m, x0_hat)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import NumericFailure, ValidationError
from .kinematics import HeadTrajectory, extract_head, geodesic_sq
from .skeleton import SkeletonTopology, unpack_motion


@dataclass
class DiffusionSchedule:
    betas: np.ndarray  # (M,), betas[m - 1] is beta_m
    alpha_bar: np.ndarray = field(init=False)  # (M + 1,)
    coef_x0: np.ndarray = field(init=False)  # (M + 1,) posterior mean coefficient on x0
    coef_xm: np.ndarray = field(init=False)  # (M + 1,) posterior mean coefficient on x_m
    posterior_var: np.ndarray = field(init=False)  # (M + 1,)
    step_var: np.ndarray = field(init=False)  # posterior_var with step 1 clipped to step 2

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size < 1:
            raise ValidationError("betas must be a non-empty 1-D array")
        if not np.all((b > 0) & (b < 1)):
            raise ValidationError("every beta must lie strictly in (0, 1)")
        self.betas = b
        ab = np.concatenate([[1.0], np.cumprod(1.0 - b)])
        self.alpha_bar = ab
        prev, cur = ab[:-1], ab[1:]
        self.coef_x0 = np.concatenate([[1.0], np.sqrt(prev) * b / (1.0 - cur)])
        self.coef_xm = np.concatenate([[0.0], np.sqrt(1.0 - b) * (1.0 - prev) / (1.0 - cur)])
        self.posterior_var = np.concatenate([[0.0], b * (1.0 - prev) / (1.0 - cur)])
        sv = self.posterior_var.copy()
        sv[1] = sv[2] if b.size >= 2 else b[0]
        self.step_var = sv

    @classmethod
    def linear(cls, steps: int = 50, beta_start: float = 1e-4, beta_end: float = 2e-2):
        if steps < 1:
            raise ValidationError(f"step count must be positive, got {steps}")
        return cls(np.linspace(beta_start, beta_end, steps))

    @property
    def M(self) -> int:
        return self.betas.size

    def to_dict(self):
        return {"betas": self.betas.tolist()}


def _step_tensor(m, schedule, lo=0):
    m = torch.as_tensor(m, dtype=torch.long)
    if bool(((m < lo) | (m > schedule.M)).any()):
        raise ValidationError(f"timestep outside [{lo}, {schedule.M}]: {m.tolist()}")
    return m


def _gather(arr, m, like):
    v = torch.as_tensor(arr, dtype=like.dtype, device=like.device)[m]
    return v.reshape(v.shape + (1,) * (like.dim() - v.dim()))


def q_sample(x0, m, noise, schedule: DiffusionSchedule):
    """``sqrt(alpha_bar_m) x0 + sqrt(1 - alpha_bar_m) noise``; ``m`` scalar or per batch item."""
    m = _step_tensor(m, schedule)
    if noise.shape != x0.shape:
        raise ValidationError(f"noise shape {tuple(noise.shape)} != x0 shape {tuple(x0.shape)}")
    ab = _gather(schedule.alpha_bar, m, x0)
    return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * noise


def posterior_mean(x0_hat, x_m, m: int, schedule: DiffusionSchedule):
    return schedule.coef_x0[m] * x0_hat + schedule.coef_xm[m] * x_m


@dataclass
class GuidanceConfig:
    gamma_pos: float = 1.0
    gamma_rot: float = 0.25
    scale: float = 1.0
    enabled: bool = True

    def __post_init__(self):
        for name in ("gamma_pos", "gamma_rot", "scale"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"guidance {name} must be finite")
        if self.gamma_pos < 0 or self.gamma_rot < 0:
            raise ValidationError("guidance weights must be nonnegative")


def goal_head(x, target: HeadTrajectory, cfg: GuidanceConfig, topo: SkeletonTopology):
    """Head goal ``gamma_pos * mean ||p - p_hat||^2 + gamma_rot * mean ||log(R R_hat^T)||_F^2``.

    ``x`` is packed motion ``(..., T, J', 6)``; the value is per leading item.
    """
    rot6d, root = unpack_motion(x)
    head = extract_head(rot6d, root, topo)
    p_hat = torch.as_tensor(target.position, dtype=x.dtype)
    R_hat = torch.as_tensor(target.rotation, dtype=x.dtype)
    g_pos = ((head.position - p_hat) ** 2).sum(-1).mean(-1)
    g_rot = geodesic_sq(head.rotation, R_hat).mean(-1)
    return cfg.gamma_pos * g_pos + cfg.gamma_rot * g_rot


def goal_gradient(mu, target, cfg, topo):
    """``xi``: gradient of the log-goal ``-G_head`` with respect to the motion, at ``mu``."""
    with torch.enable_grad():
        x = mu.detach().requires_grad_(True)
        g = goal_head(x, target, cfg, topo).sum()
        (grad,) = torch.autograd.grad(g, x)
    return -grad


def guided_mean(mu, var: float, xi, scale: float):
    """``mu + scale * Sigma * xi`` with the isotropic step variance ``Sigma``."""
    return mu + scale * var * xi


@torch.no_grad()
def sample(denoiser, z, schedule: DiffusionSchedule, seed: int, shape, guide=None,
           return_trajectory: bool = False):
    """Ancestral reverse diffusion from ``x_M ~ N(0, I)``.

    ``guide(mu, m, var)`` may return a shifted mean; it is how
    :func:`guided_sample` hooks in.  Noise is drawn from a private generator
    in the same order with or without guidance.
    """
    gen = torch.Generator().manual_seed(int(seed))
    dtype = z.dtype
    x = torch.randn(shape, generator=gen, dtype=dtype)
    traj = []
    for m in range(schedule.M, 0, -1):
        steps = torch.full((shape[0],), m, dtype=torch.long)
        x0_hat = denoiser(x, steps, z)
        mu = posterior_mean(x0_hat, x, m, schedule)
        var = float(schedule.step_var[m])
        if guide is not None:
            mu = guide(mu, m, var)
        if m > 1:
            x = mu + np.sqrt(var) * torch.randn(shape, generator=gen, dtype=dtype)
        else:
            x = mu
        if not torch.isfinite(x).all():
            raise NumericFailure(f"non-finite sample at reverse step {m}", where=m)
        if return_trajectory:
            traj.append(x.clone())
    return (x, traj) if return_trajectory else x


def guided_sample(denoiser, z, target: HeadTrajectory, schedule: DiffusionSchedule,
                  cfg: GuidanceConfig, seed: int, shape, topo: SkeletonTopology):
    """Reverse diffusion where each step draws from ``N(mu + scale * Sigma * xi, Sigma)``."""
    if not cfg.enabled or cfg.scale == 0.0:
        return sample(denoiser, z, schedule, seed, shape)
    target.validate()

    def guide(mu, m, var):
        xi = goal_gradient(mu, target, cfg, topo)
        if not torch.isfinite(xi).all():
            raise NumericFailure(f"non-finite guidance gradient at reverse step {m}", where=m)
        return guided_mean(mu, var, xi, cfg.scale)

    return sample(denoiser, z, schedule, seed, shape, guide=guide)
