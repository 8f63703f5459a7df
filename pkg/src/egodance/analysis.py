"""Joint-embedding similarity and motion/music/vision correlation reports."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import torch

from .diffusion import DiffusionSchedule, q_sample
from .errors import ValidationError
from .metrics import beat_alignment, kinematic_velocity, local_extrema, mmv, pearson
from .kinematics import head_angular_speed
from .network import EgoMusicModel
from .skeleton import SkeletonTopology

ARM_GROUPS = ("left_arm", "right_arm")


@torch.no_grad()
def joint_embeddings(model: EgoMusicModel, batch: dict, schedule: DiffusionSchedule,
                     step: int = 1, seed: int = 0, block: int = -1) -> np.ndarray:
    """Per-token joint-scan outputs of one block averaged over frames and samples, ``(J', C)``.

    The clean motion is noised to ``step`` with fixed noise before the pass.
    """
    den = model.denoiser
    target = den.blocks[block]
    gen = torch.Generator().manual_seed(seed)
    x0 = batch["x0"]
    x_m = q_sample(x0, step, torch.randn(x0.shape, generator=gen, dtype=x0.dtype), schedule)
    z = model.condition(batch["music"], batch["vision"]).z
    target.capture = True
    try:
        den(x_m, step, z)
        feats = target.captured
    finally:
        target.capture, target.captured = False, None
    return feats.reshape(-1, *feats.shape[-2:]).mean(0).double().numpy()


def cosine_matrix(emb: np.ndarray) -> np.ndarray:
    emb = np.asarray(emb, dtype=np.float64)
    norms = np.linalg.norm(emb, axis=-1, keepdims=True)
    if (norms == 0).any():
        raise ValidationError("zero-norm joint embedding; cosine undefined")
    unit = emb / norms
    cos = unit @ unit.T
    cos = 0.5 * (cos + cos.T)
    np.fill_diagonal(cos, 1.0)
    return cos


def joint_embedding_cosine(model: EgoMusicModel, batch: dict, schedule: DiffusionSchedule,
                           **kw) -> np.ndarray:
    """``(J, J)`` cosine similarity of real joints (the root-translation token is dropped)."""
    emb = joint_embeddings(model, batch, schedule, **kw)
    return cosine_matrix(emb[:model.topo.joint_count])


def arm_joint_sets(topo: SkeletonTopology):
    """Joints of the left and right arm groups with shared joints removed."""
    if not all(n in topo.group_names for n in ARM_GROUPS):
        raise ValidationError(f"topology has no groups named {ARM_GROUPS}")
    left, right = (set(topo.group_of(n)) for n in ARM_GROUPS)
    shared = left & right
    return sorted(left - shared), sorted(right - shared)


def arm_similarity(cos: np.ndarray, topo: SkeletonTopology) -> dict:
    """Mean within-arm similarity (off-diagonal pairs of each arm) and mean left-right similarity."""
    left, right = arm_joint_sets(topo)
    within = [cos[i, j] for arm in (left, right) for i in arm for j in arm if i != j]
    cross = [cos[i, j] for i in left for j in right]
    return {"within": float(np.mean(within)), "cross": float(np.mean(cross))}


def write_matrix_csv(path, matrix: np.ndarray, names) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["joint", *names])
        for name, row in zip(names, matrix):
            w.writerow([name, *(f"{v:.9g}" for v in row)])


def correlation_report(positions, beats, flow_proxy, head_rot=None, frame_rate: float = 30.0,
                       out=None) -> dict:
    """Aligned per-frame series (kinematic velocity, beat impulses, flow proxy) and scores.

    With ``out`` set, the series go to that CSV file.
    """
    vel = kinematic_velocity(positions, frame_rate)
    T = vel.size
    flow = np.asarray(flow_proxy, dtype=np.float64).reshape(-1)
    if flow.size != T:
        raise ValidationError(f"flow proxy has {flow.size} frames, motion has {T}")
    beats = np.asarray(beats, dtype=np.int64).reshape(-1)
    if beats.size and (beats.min() < 0 or beats.max() >= T):
        raise ValidationError("beat index outside the sequence")
    impulse = np.zeros(T, dtype=np.int64)
    impulse[beats] = 1
    extrema = np.zeros(T, dtype=np.int64)
    extrema[local_extrema(vel)] = 1
    series = {"frame": np.arange(T), "kinematic_velocity": vel, "beat": impulse,
              "velocity_extremum": extrema, "flow_proxy": flow}
    scores = {"beat_alignment": beat_alignment(positions, beats, frame_rate=frame_rate)}
    if head_rot is not None:
        ang = head_angular_speed(head_rot, frame_rate)
        series["head_angular_speed"] = ang
        scores["flow_correlation"] = pearson(ang, flow)
        scores["mmv"] = mmv(positions, beats, head_rot, flow, frame_rate)
    if out is not None:
        cols = list(series)
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for t in range(T):
                w.writerow([_fmt(series[c][t]) for c in cols])
    return {"series": series, "scores": scores}


def write_scores_csv(path, scores: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["score", "value"])
        for k in sorted(scores):
            w.writerow([k, f"{scores[k]:.9g}"])


def _fmt(v):
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    return f"{float(v):.9g}"


def read_csv_columns(path) -> dict:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    return {k: [r[k] for r in rows] for k in rows[0]}
