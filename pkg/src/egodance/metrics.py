"""Evaluation metrics for generated motion.

Units: positions in mm for ``t_head``/``mpjpe``, acceleration error in
mm/frame^2, foot skating in m/s.  All functions accept numpy arrays or
tensors and return Python floats.

Foot skating::

    fs = mean over contact frames (foot height h < H) of  v * (2 - 2 ** (h / H))

with ``v`` the horizontal central-difference foot speed (m/s) and ``H`` the
contact height.  The weight is 1 at the ground and falls to 0 at ``H``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch

from .errors import ValidationError
from .kinematics import CONTACT_HEIGHT, HORIZONTAL_AXES, UP_AXIS, central_velocity, head_angular_speed
from .skeleton import SkeletonTopology

BEAT_SIGMA = 3.0  # frames


def _np(x):
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise ValidationError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValidationError(f"{what}: empty input")


def o_head(pred_rot, gt_rot) -> float:
    """Mean Frobenius norm ``||R - R_hat||_F`` over frames."""
    a, b = _np(pred_rot), _np(gt_rot)
    _same_shape(a, b, "o_head")
    if a.shape[-2:] != (3, 3):
        raise ValidationError(f"o_head expects (..., 3, 3) rotations, got {a.shape}")
    return float(np.linalg.norm(a - b, axis=(-2, -1)).mean())


def t_head(pred_pos, gt_pos) -> float:
    """Mean head translation error in mm (inputs in meters)."""
    a, b = _np(pred_pos), _np(gt_pos)
    _same_shape(a, b, "t_head")
    return float(np.linalg.norm(a - b, axis=-1).mean() * 1000.0)


def mpjpe(pred_pos, gt_pos) -> float:
    """Mean per-joint position error in mm over frames and joints (global positions)."""
    a, b = _np(pred_pos), _np(gt_pos)
    _same_shape(a, b, "mpjpe")
    return float(np.linalg.norm(a - b, axis=-1).mean() * 1000.0)


def accel_error(pred_pos, gt_pos) -> float:
    """Mean norm of the second-difference discrepancy, mm/frame^2; frames on axis -3."""
    a, b = _np(pred_pos), _np(gt_pos)
    _same_shape(a, b, "accel_error")
    if a.ndim < 3 or a.shape[-3] < 3:
        raise ValidationError("accel_error needs (..., T, J, 3) with T >= 3")
    acc = lambda x: x[..., 2:, :, :] - 2.0 * x[..., 1:-1, :, :] + x[..., :-2, :, :]  # noqa: E731
    return float(np.linalg.norm(acc(a) - acc(b), axis=-1).mean() * 1000.0)


def foot_skate(positions, topo: SkeletonTopology, frame_rate: float = 30.0,
               height_thresh: float = CONTACT_HEIGHT) -> float:
    """Height-weighted horizontal foot speed over contact frames; 0 if no contacts."""
    pos = _np(positions)
    if pos.ndim != 3 or pos.shape[-1] != 3:
        raise ValidationError(f"foot_skate expects (T, J, 3) positions, got {pos.shape}")
    if not (frame_rate > 0 and height_thresh > 0):
        raise ValidationError("frame_rate and height_thresh must be positive")
    feet = pos[:, list(topo.feet), :]
    h = feet[..., UP_AXIS]
    v = np.linalg.norm(central_velocity(feet[..., list(HORIZONTAL_AXES)], frame_rate, axis=0), axis=-1)
    contact = h < height_thresh
    if not contact.any():
        return 0.0
    weight = np.clip(2.0 - np.power(2.0, h / height_thresh), 0.0, 1.0)
    return float((v * weight)[contact].mean())


def kinematic_velocity(positions, frame_rate: float = 30.0) -> np.ndarray:
    """Mean joint speed per frame (m/s) from central differences; ``(T, J, 3) -> (T,)``."""
    pos = _np(positions)
    if pos.ndim != 3 or pos.shape[-1] != 3:
        raise ValidationError(f"expected (T, J, 3) positions, got {pos.shape}")
    return np.linalg.norm(central_velocity(pos, frame_rate, axis=0), axis=-1).mean(-1)


def local_extrema(signal) -> np.ndarray:
    """Indices of local maxima and minima, plateaus reported at their first frame.

    End frames count when they differ from their only neighbour.
    """
    x = _np(signal).reshape(-1)
    T = x.size
    if T < 2:
        return np.zeros(0, dtype=np.int64)
    # collapse plateaus to runs and compare each run to its neighbours
    starts = np.flatnonzero(np.concatenate([[True], x[1:] != x[:-1]]))
    vals = x[starts]
    n = vals.size
    if n == 1:
        return np.zeros(0, dtype=np.int64)
    left = np.concatenate([[np.nan], vals[:-1]])
    right = np.concatenate([vals[1:], [np.nan]])
    with np.errstate(invalid="ignore"):
        is_max = ~(vals < left) & ~(vals < right)
        is_min = ~(vals > left) & ~(vals > right)
    return starts[is_max | is_min].astype(np.int64)


def beat_alignment(motion_positions, beats, sigma: float = BEAT_SIGMA, frame_rate: float = 30.0,
                   extrema=None) -> float:
    """Mean over music beats of ``exp(-d^2 / (2 sigma^2))``, ``d`` in frames to the nearest
    kinematic-velocity extremum."""
    beats = np.asarray(beats, dtype=np.float64).reshape(-1)
    if beats.size < 1:
        raise ValidationError("beat_alignment needs at least one beat")
    if not sigma > 0:
        raise ValidationError("sigma must be positive")
    if extrema is None:
        extrema = local_extrema(kinematic_velocity(motion_positions, frame_rate))
    extrema = np.asarray(extrema, dtype=np.float64)
    if extrema.size == 0:
        return 0.0
    d = np.abs(beats[:, None] - extrema[None, :]).min(axis=1)
    return float(np.clip(np.exp(-d ** 2 / (2.0 * sigma ** 2)).mean(), 0.0, 1.0))


def pearson(a, b) -> float:
    a, b = _np(a).reshape(-1), _np(b).reshape(-1)
    _same_shape(a, b, "pearson")
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        raise ValidationError("correlation undefined for a zero-variance track")
    return float(((a - a.mean()) * (b - b.mean())).mean() / (sa * sb))


def mmv(motion_positions, beats, head_rot, flow_proxy, frame_rate: float = 30.0,
        sigma: float = BEAT_SIGMA) -> float:
    """Motion-music-vision score: harmonic mean of beat alignment and ``clamp(r, 0, 1)``
    where ``r`` is the Pearson correlation of head angular speed with the flow proxy."""
    ba = beat_alignment(motion_positions, beats, sigma, frame_rate)
    r = min(max(pearson(head_angular_speed(head_rot, frame_rate), flow_proxy), 0.0), 1.0)
    if ba + r == 0:
        return 0.0
    return float(2.0 * ba * r / (ba + r))


@dataclass
class EvalReport:
    name: str
    o_head: float
    t_head: float
    mpjpe: float
    accel: float
    fs: float
    beat_align: float
    mmv: float

    FIELDS = ("name", "o_head", "t_head", "mpjpe", "accel", "fs", "beat_align", "mmv")

    def row(self):
        return asdict(self)


def evaluate_sequence(name, pred_pos, pred_head_rot, gt_pos, gt_head_rot, beats, flow_proxy,
                      topo: SkeletonTopology, frame_rate: float = 30.0) -> EvalReport:
    """All metrics for one sequence; ``*_pos`` are global joint positions ``(T, J, 3)``."""
    pp, gp = _np(pred_pos), _np(gt_pos)
    _same_shape(pp, gp, name)
    return EvalReport(
        name=name,
        o_head=o_head(pred_head_rot, gt_head_rot),
        t_head=t_head(pp[:, topo.head], gp[:, topo.head]),
        mpjpe=mpjpe(pp, gp),
        accel=accel_error(pp, gp),
        fs=foot_skate(pp, topo, frame_rate),
        beat_align=beat_alignment(pp, beats, frame_rate=frame_rate),
        mmv=mmv(pp, beats, pred_head_rot, flow_proxy, frame_rate),
    )


def aggregate(reports: list[EvalReport]) -> EvalReport:
    if not reports:
        raise ValidationError("no reports to aggregate")
    vals = {f: float(np.mean([getattr(r, f) for r in reports])) for f in EvalReport.FIELDS[1:]}
    return EvalReport(name="mean", **vals)
