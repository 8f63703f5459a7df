"""Training objectives: clean-sample diffusion loss, kinematic losses, ego-music alignment."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .diffusion import DiffusionSchedule, q_sample
from .errors import NumericFailure, ValidationError
from .kinematics import forward_kinematics
from .skeleton import SkeletonTopology, unpack_motion


@dataclass
class LossWeights:
    pos: float = 1.0
    vel: float = 1.0
    contact: float = 1.0
    kin: float = 0.5
    align: float = 0.1
    tau: float = 0.07

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not np.isfinite(v):
                raise ValidationError(f"loss weight {k} must be finite")
            if v < 0:
                raise ValidationError(f"loss weight {k} must be nonnegative")
        if self.tau <= 0:
            raise ValidationError("temperature tau must be positive")


def kinematic_loss(x0_hat, x0, contacts, topo: SkeletonTopology, weights: LossWeights):
    """Position, velocity and foot-contact losses on forward-kinematics joints.

    Squared errors are summed over xyz and averaged over frames and joints.
    ``contacts (..., T, 2)`` marks frames where the ground-truth feet are
    planted; the contact term penalizes predicted foot motion there.
    """
    if contacts is None:
        raise ValidationError("kinematic loss needs foot-contact labels")
    pred_pos, _ = forward_kinematics(*unpack_motion(x0_hat), topo)
    gt_pos, _ = forward_kinematics(*unpack_motion(x0), topo)
    l_pos = ((pred_pos - gt_pos) ** 2).sum(-1).mean()
    pred_vel = pred_pos[..., 1:, :, :] - pred_pos[..., :-1, :, :]
    gt_vel = gt_pos[..., 1:, :, :] - gt_pos[..., :-1, :, :]
    if pred_vel.shape[-3] == 0:
        l_vel = l_contact = pred_pos.new_zeros(())
    else:
        l_vel = ((pred_vel - gt_vel) ** 2).sum(-1).mean()
        contacts = torch.as_tensor(contacts, dtype=x0_hat.dtype)
        if contacts.shape[-1] != 2 or contacts.shape[-2] != x0_hat.shape[-3]:
            raise ValidationError(f"contacts must be (..., T, 2), got {tuple(contacts.shape)}")
        foot_vel = pred_vel[..., list(topo.feet), :]
        mask = contacts[..., :-1, :]
        n = mask.sum()
        l_contact = ((foot_vel ** 2).sum(-1) * mask).sum() / n.clamp(min=1.0)
    total = weights.pos * l_pos + weights.vel * l_vel + weights.contact * l_contact
    return total, {"pos": l_pos, "vel": l_vel, "contact": l_contact}


def alignment_loss(z_a, z_v, tau: float = 0.07):
    """Symmetric frame-level InfoNCE between music and vision embeddings.

    Frame ``i`` of one modality must pick frame ``i`` of the other among all
    ``T`` frames; both directions are averaged.  Works on ``(T, D)`` or
    ``(B, T, D)``.
    """
    if z_a.shape != z_v.shape:
        raise ValidationError(f"embedding shapes differ: {tuple(z_a.shape)} vs {tuple(z_v.shape)}")
    na = torch.linalg.vector_norm(z_a, dim=-1, keepdim=True)
    nv = torch.linalg.vector_norm(z_v, dim=-1, keepdim=True)
    if bool((na == 0).any() or (nv == 0).any()):
        raise ValidationError("zero-norm embedding row; cosine similarity undefined")
    sim = (z_a / na) @ (z_v / nv).transpose(-1, -2) / tau
    T = sim.shape[-1]
    flat = sim.reshape(-1, T, T)
    target = torch.arange(T, device=sim.device).repeat(flat.shape[0])
    a2v = F.cross_entropy(flat.reshape(-1, T), target)
    v2a = F.cross_entropy(flat.transpose(-1, -2).reshape(-1, T), target)
    return 0.5 * (a2v + v2a)


def simple_loss(x0_hat, x0):
    return ((x0_hat - x0) ** 2).mean()


def total_loss(batch: dict, model, schedule: DiffusionSchedule, weights: LossWeights,
               generator: torch.Generator | None = None, steps=None, noise=None):
    """``L_simple + kin * L_kin + align * L_align`` and a float report of every component.

    ``batch`` holds packed motion ``x0 (B, T, J', 6)``, ``music``, ``vision``
    and ``contacts``.  Timesteps and noise are drawn from ``generator`` unless
    given explicitly.
    """
    x0 = batch["x0"]
    B = x0.shape[0]
    if steps is None:
        steps = torch.randint(1, schedule.M + 1, (B,), generator=generator)
    if noise is None:
        noise = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    cond = model.condition(batch["music"], batch["vision"])
    x_m = q_sample(x0, steps, noise, schedule)
    x0_hat = model.denoiser(x_m, steps, cond.z)

    l_simple = simple_loss(x0_hat, x0)
    l_kin, kin_parts = kinematic_loss(x0_hat, x0, batch["contacts"], model.topo, weights)
    l_align = alignment_loss(cond.z_a, cond.z_v, weights.tau)
    parts = {"simple": l_simple, "kin": l_kin, "align": l_align, **kin_parts}
    for name, v in parts.items():
        if not torch.isfinite(v):
            raise NumericFailure(f"loss component {name} is not finite", where=name)
    total = l_simple + weights.kin * l_kin + weights.align * l_align
    report = {"total": float(total.detach()), **{k: float(v.detach()) for k, v in parts.items()}}
    return total, report
