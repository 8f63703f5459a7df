"""Rotations, forward kinematics, head extraction and foot contacts.

Conventions: y is up, the ground plane is ``y = 0``, positions are meters.
A 6D rotation is the first two *columns* of the rotation matrix.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ValidationError
from .skeleton import SkeletonTopology

UP_AXIS = 1
HORIZONTAL_AXES = (0, 2)
CONTACT_HEIGHT = 0.05  # m
CONTACT_SPEED = 0.2  # m/s


class ShortSequenceWarning(UserWarning):
    """Raised when velocities are requested for fewer than two frames."""


@dataclass
class HeadTrajectory:
    position: torch.Tensor  # (T, 3)
    rotation: torch.Tensor  # (T, 3, 3)

    def validate(self, atol: float = 1e-6) -> "HeadTrajectory":
        R = torch.as_tensor(self.rotation, dtype=torch.float64)
        if R.dim() != 3 or R.shape[-2:] != (3, 3):
            raise ValidationError(f"head rotations must be (T, 3, 3), got {tuple(R.shape)}")
        if tuple(torch.as_tensor(self.position).shape) != (R.shape[0], 3):
            raise ValidationError("head positions must be (T, 3) matching the rotations")
        check_rotations(R, atol)
        return self


def check_rotations(R, atol: float = 1e-6) -> None:
    R = torch.as_tensor(R, dtype=torch.float64)
    eye = torch.eye(3, dtype=R.dtype)
    orth = (R.transpose(-1, -2) @ R - eye).abs().amax() if R.numel() else 0.0
    det = (torch.linalg.det(R) - 1.0).abs().amax() if R.numel() else 0.0
    if orth > atol or det > atol:
        raise ValidationError(
            f"not a rotation: orthonormality error {float(orth):.3g}, determinant error {float(det):.3g}")


def rot6d_to_matrix(r6, check: bool = True):
    """Gram-Schmidt two 3-vectors into a rotation matrix with them as columns 1-2."""
    a1, a2 = r6[..., :3], r6[..., 3:6]
    n1 = torch.linalg.vector_norm(a1, dim=-1, keepdim=True)
    if check and bool((n1 == 0).any()):
        raise ValidationError("6D rotation has a zero-norm first column")
    b1 = a1 / n1
    b2 = a2 - (b1 * a2).sum(-1, keepdim=True) * b1
    n2 = torch.linalg.vector_norm(b2, dim=-1, keepdim=True)
    if check and bool((n2 == 0).any()):
        raise ValidationError("6D rotation columns are colinear or the second is zero")
    b2 = b2 / n2
    b3 = torch.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], dim=-1)


def matrix_to_rot6d(R):
    return torch.cat([R[..., :, 0], R[..., :, 1]], dim=-1)


def axis_angle_to_matrix(axis, angle):
    """Rodrigues' formula; ``axis`` (..., 3) need not be normalized."""
    axis = torch.as_tensor(axis, dtype=torch.float64)
    angle = torch.as_tensor(angle, dtype=axis.dtype)
    k = axis / torch.linalg.vector_norm(axis, dim=-1, keepdim=True)
    K = torch.zeros(k.shape[:-1] + (3, 3), dtype=k.dtype)
    K[..., 0, 1], K[..., 0, 2] = -k[..., 2], k[..., 1]
    K[..., 1, 0], K[..., 1, 2] = k[..., 2], -k[..., 0]
    K[..., 2, 0], K[..., 2, 1] = -k[..., 1], k[..., 0]
    s, c = torch.sin(angle)[..., None, None], torch.cos(angle)[..., None, None]
    eye = torch.eye(3, dtype=k.dtype).expand(K.shape)
    return eye + s * K + (1 - c) * (K @ K)


def _safe_sqrt(x):
    pos = x > 0
    return torch.where(pos, torch.sqrt(torch.where(pos, x, torch.ones_like(x))), torch.zeros_like(x))


def rotation_angle(R):
    """Rotation angle in ``[0, pi]``, stable at both ends of the range."""
    w = torch.stack([R[..., 2, 1] - R[..., 1, 2],
                     R[..., 0, 2] - R[..., 2, 0],
                     R[..., 1, 0] - R[..., 0, 1]], dim=-1)
    sin2 = _safe_sqrt((w * w).sum(-1))  # 2 sin(theta)
    cos2 = R[..., 0, 0] + R[..., 1, 1] + R[..., 2, 2] - 1.0  # 2 cos(theta)
    return torch.atan2(sin2, cos2)


def geodesic_sq(R1, R2):
    """``||log(R1 R2^T)||_F^2``, which equals ``2 theta^2`` for relative angle theta."""
    theta = rotation_angle(R1 @ R2.transpose(-1, -2))
    return 2.0 * theta * theta


def forward_kinematics(rot6d, root_pos, topo: SkeletonTopology, joints=None):
    """Global joint positions ``(..., J, 3)`` and rotations ``(..., J, 3, 3)``.

    ``joints`` restricts evaluation to a root-first chain (e.g.
    ``topo.chain(topo.head)``); the outputs are then indexed along that chain.
    """
    local = rot6d_to_matrix(rot6d)
    offsets = torch.as_tensor(topo.offsets, dtype=rot6d.dtype, device=rot6d.device)
    order = topo.order if joints is None else joints
    pos, rot = {}, {}
    for j in order:
        p = topo.parents[j]
        if p < 0:
            rot[j] = local[..., j, :, :]
            pos[j] = root_pos
        else:
            rot[j] = rot[p] @ local[..., j, :, :]
            pos[j] = pos[p] + (rot[p] @ offsets[j].unsqueeze(-1)).squeeze(-1)
    keys = range(topo.joint_count) if joints is None else joints
    return (torch.stack([pos[j] for j in keys], dim=-2),
            torch.stack([rot[j] for j in keys], dim=-3))


def extract_head(rot6d, root_pos, topo: SkeletonTopology) -> HeadTrajectory:
    """Global head position and rotation, evaluating only the root-to-head chain."""
    chain = topo.chain(topo.head)
    pos, rot = forward_kinematics(rot6d, root_pos, topo, joints=chain)
    return HeadTrajectory(pos[..., -1, :], rot[..., -1, :, :])


def central_velocity(x, frame_rate: float = 1.0, axis: int = 0):
    """Central differences (one-sided at the ends), per second when ``frame_rate`` is given."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[axis] < 2:
        return np.zeros_like(x)
    return np.gradient(x, axis=axis) * frame_rate


def foot_velocity_and_contacts(positions, topo: SkeletonTopology, frame_rate: float,
                               height_thresh: float = CONTACT_HEIGHT,
                               vel_thresh: float = CONTACT_SPEED):
    """Foot speeds (m/s) and contact labels, both ``(T, 2)`` in ``topo.feet`` order.

    A frame is in contact when the foot is below ``height_thresh`` and slower
    than ``vel_thresh``.
    """
    if not frame_rate > 0:
        raise ValidationError(f"frame_rate must be positive, got {frame_rate}")
    feet = np.asarray(positions, dtype=np.float64)[:, list(topo.feet), :]
    if feet.shape[0] < 2:
        warnings.warn("fewer than two frames; foot velocities set to zero", ShortSequenceWarning)
    vel = central_velocity(feet, frame_rate, axis=0)
    speed = np.linalg.norm(vel, axis=-1)
    contacts = (feet[..., UP_AXIS] < height_thresh) & (speed < vel_thresh)
    return speed, contacts


def head_angular_speed(head_rot, frame_rate: float):
    """Per-frame head angular speed (rad/s) from consecutive relative rotations."""
    R = torch.as_tensor(head_rot, dtype=torch.float64)
    T = R.shape[0]
    if T < 2:
        return np.zeros(T)
    step = rotation_angle(R[1:] @ R[:-1].transpose(-1, -2)).numpy() * frame_rate
    # centre the forward differences on frames
    out = np.empty(T)
    out[0], out[-1] = step[0], step[-1]
    out[1:-1] = 0.5 * (step[:-1] + step[1:])
    return out


def yaw_matrix(angle: float):
    return axis_angle_to_matrix(torch.tensor([0.0, 1.0, 0.0], dtype=torch.float64),
                                torch.tensor(float(angle), dtype=torch.float64))
