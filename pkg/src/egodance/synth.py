"""Deterministic synthetic dance data with known motion, music and vision coupling.

Every limb is driven by one beat-locked oscillator

    s(t) = sin(pi * t / P),    P = frame_rate * 60 / bpm  (frames per beat)

so ``|ds/dt|`` and with it the joint speeds peak on the beat frames.  Legs
lift one at a time through a hip/knee/ankle triple ``(-a, 2a, -a)`` that
keeps the foot horizontally fixed, so a grounded foot never slides.

Music features are a fixed random mixing of beat impulses, an onset envelope
and bar phase; vision features mix a smoothed head angular-speed track (the
optical-flow proxy) with head orientation.  Both get smooth additive noise.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.ndimage import gaussian_filter1d, uniform_filter1d

from .container import read_container, write_container
from .errors import ValidationError
from .kinematics import (HeadTrajectory, axis_angle_to_matrix, foot_velocity_and_contacts,
                         forward_kinematics, head_angular_speed, matrix_to_rot6d)
from .skeleton import MotionSequence, SkeletonTopology, load_topology

ROOT_HEIGHT = 0.90  # m, puts the default skeleton's feet on the ground
DATASET_INDEX = "dataset.json"

# default-topology joints driven by the generator
PELVIS, L_HIP, R_HIP, SPINE1, L_KNEE, R_KNEE = 0, 1, 2, 3, 4, 5
L_ANKLE, R_ANKLE, NECK = 7, 8, 12
L_SHOULDER, R_SHOULDER, L_ELBOW, R_ELBOW = 16, 17, 18, 19

_X, _Y, _Z = (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)


@dataclass
class SynthSpec:
    sequences: int = 8
    duration: float = 5.0  # seconds
    frame_rate: float = 30.0
    bpm: float = 120.0
    styles: int = 8
    test_styles: int = 2
    arm_amplitude: tuple[float, float] = (0.5, 1.0)  # rad, style range
    elbow_amplitude: tuple[float, float] = (0.2, 0.6)
    leg_amplitude: tuple[float, float] = (0.3, 0.6)
    twist_amplitude: tuple[float, float] = (0.05, 0.2)
    nod_amplitude: tuple[float, float] = (0.1, 0.3)
    amplitude_jitter: float = 0.1  # relative, per sequence
    music_dim: int = 16
    vision_dim: int = 16
    music_noise: float = 0.05
    vision_noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("arm_amplitude", "elbow_amplitude", "leg_amplitude",
                     "twist_amplitude", "nod_amplitude"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and 0 <= lo <= hi):
                raise ValidationError(f"{name} must be a range 0 <= lo <= hi, got {(lo, hi)}")
            setattr(self, name, (float(lo), float(hi)))
        if not (np.isfinite(self.bpm) and self.bpm > 0):
            raise ValidationError(f"bpm must be positive, got {self.bpm}")
        if not (np.isfinite(self.frame_rate) and self.frame_rate > 0):
            raise ValidationError(f"frame_rate must be positive, got {self.frame_rate}")
        if not (np.isfinite(self.duration) and self.duration > 0):
            raise ValidationError(f"duration must be positive, got {self.duration}")
        frames = self.duration * self.frame_rate
        if abs(frames - round(frames)) > 1e-9:
            raise ValidationError(f"duration * frame_rate must be an integer, got {frames}")
        if self.sequences < 1:
            raise ValidationError(f"sequences must be at least 1, got {self.sequences}")
        if not 1 <= self.test_styles < self.styles:
            raise ValidationError(f"test_styles must lie in [1, styles), got {self.test_styles}")
        if self.music_dim < 1 or self.vision_dim < 1:
            raise ValidationError("feature dims must be positive")
        for name in ("music_noise", "vision_noise", "amplitude_jitter"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} must be nonnegative, got {v}")

    @property
    def frames(self) -> int:
        return int(round(self.duration * self.frame_rate))

    @property
    def beat_period(self) -> float:
        """Frames per beat."""
        return self.frame_rate * 60.0 / self.bpm

    def style_of(self, index: int) -> int:
        return index % self.styles

    def is_test_style(self, style: int) -> bool:
        return style >= self.styles - self.test_styles

    def to_dict(self):
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown synth fields: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class SampleRecord:
    motion: MotionSequence
    beats: np.ndarray  # (K,) int64 frame indices
    music_feat: np.ndarray  # (T, D_m) float32
    vision_feat: np.ndarray  # (T, D_v) float32
    flow_proxy: np.ndarray  # (T,) float64
    head: HeadTrajectory
    contacts: np.ndarray  # (T, 2) bool
    style: int
    index: int
    extra: dict = field(default_factory=dict)

    def to_arrays(self) -> dict:
        return {
            "rot6d": self.motion.rot6d.numpy(),
            "root_pos": self.motion.root_pos.numpy(),
            "frame_rate": np.array([self.motion.frame_rate]),
            "beats": self.beats.astype(np.int64),
            "music_feat": self.music_feat,
            "vision_feat": self.vision_feat,
            "flow_proxy": self.flow_proxy,
            "head_pos": np.asarray(self.head.position),
            "head_rot": np.asarray(self.head.rotation),
            "contacts": self.contacts.astype(np.uint8),
            "style": np.array([self.style], dtype=np.int64),
            "index": np.array([self.index], dtype=np.int64),
        }

    @classmethod
    def from_arrays(cls, a: dict) -> "SampleRecord":
        missing = {"rot6d", "root_pos", "beats", "music_feat", "vision_feat", "flow_proxy",
                   "head_pos", "head_rot", "contacts", "style", "index", "frame_rate"} - set(a)
        if missing:
            raise ValidationError(f"sample is missing arrays: {sorted(missing)}")
        return cls(
            motion=MotionSequence(torch.from_numpy(a["rot6d"]), torch.from_numpy(a["root_pos"]),
                                  float(a["frame_rate"][0])),
            beats=a["beats"], music_feat=a["music_feat"], vision_feat=a["vision_feat"],
            flow_proxy=a["flow_proxy"],
            head=HeadTrajectory(torch.from_numpy(a["head_pos"]), torch.from_numpy(a["head_rot"])),
            contacts=a["contacts"].astype(bool), style=int(a["style"][0]), index=int(a["index"][0]))


def beat_frames(frames: int, beat_period: float) -> np.ndarray:
    k = np.arange(int(np.floor((frames - 1) / beat_period)) + 1)
    beats = np.round(k * beat_period).astype(np.int64)
    return beats[beats < frames]


def style_parameters(spec: SynthSpec, style: int) -> dict:
    rng = np.random.default_rng([spec.seed, 1, style])
    u = lambda rng_range: float(rng.uniform(*rng_range))  # noqa: E731
    return {
        "yaw": float(rng.uniform(-np.pi, np.pi)),
        "arm": u(spec.arm_amplitude),
        "elbow": u(spec.elbow_amplitude),
        "leg": u(spec.leg_amplitude),
        "twist": u(spec.twist_amplitude),
        "nod": u(spec.nod_amplitude),
        # +1 mirrors the left limb onto the right, -1 makes them move in opposite phase
        "arm_sign": float(rng.choice([-1.0, 1.0])),
        "elbow_sign": float(rng.choice([-1.0, 1.0])),
        "lead_leg": int(rng.integers(2)),
    }


def _rot(axis, angle):
    return axis_angle_to_matrix(torch.tensor(axis, dtype=torch.float64).expand(angle.shape + (3,)),
                                angle)


def dance_rotations(spec: SynthSpec, params: dict, jitter: np.ndarray, topo: SkeletonTopology):
    """Local joint rotations ``(T, J, 3, 3)`` for one sequence."""
    T = spec.frames
    t = torch.arange(T, dtype=torch.float64)
    s = torch.sin(np.pi * t / spec.beat_period)
    R = torch.eye(3, dtype=torch.float64).repeat(T, topo.joint_count, 1, 1)
    arm, elbow, leg, twist, nod = (params[k] * (1.0 + j) for k, j in
                                   zip(("arm", "elbow", "leg", "twist", "nod"), jitter))

    R[:, PELVIS] = _rot(_Y, torch.full((T,), params["yaw"], dtype=torch.float64))
    R[:, SPINE1] = _rot(_Y, twist * s)
    R[:, NECK] = _rot(_X, nod * s)
    R[:, L_SHOULDER] = _rot(_Z, arm * s)
    R[:, R_SHOULDER] = _rot(_Z, -params["arm_sign"] * arm * s)
    R[:, L_ELBOW] = _rot(_Y, elbow * s)
    R[:, R_ELBOW] = _rot(_Y, -params["elbow_sign"] * elbow * s)
    # cubic lift keeps leg speed flat around the beat, where the feet swap
    lift = [leg * torch.clamp(s, min=0.0) ** 3, leg * torch.clamp(-s, min=0.0) ** 3]
    if params["lead_leg"]:
        lift.reverse()
    for (hip, knee, ankle), a in zip(((L_HIP, L_KNEE, L_ANKLE), (R_HIP, R_KNEE, R_ANKLE)), lift):
        R[:, hip] = _rot(_X, -a)
        R[:, knee] = _rot(_X, 2.0 * a)
        R[:, ankle] = _rot(_X, -a)
    return R


def _onset_envelope(T, beats, tau=3.0):
    env = np.zeros(T)
    last = None
    bset = set(beats.tolist())
    for t in range(T):
        if t in bset:
            last = t
        if last is not None:
            env[t] = np.exp(-(t - last) / tau)
    return env


def _mixing(spec: SynthSpec, rows: int, cols: int, which: int):
    rng = np.random.default_rng([spec.seed, 2, which])
    return rng.standard_normal((rows, cols)) / np.sqrt(rows)


def _smooth_noise(rng, shape, level, sigma=2.0):
    if level == 0:
        return np.zeros(shape)
    n = gaussian_filter1d(rng.standard_normal(shape), sigma, axis=0, mode="nearest")
    return level * n / max(float(n.std()), 1e-12)


def generate_sequence(spec: SynthSpec, index: int, topo: SkeletonTopology | None = None) -> SampleRecord:
    """One fully deterministic sample; identical ``(spec, index)`` gives identical bytes."""
    if not isinstance(spec, SynthSpec):
        raise ValidationError("spec must be a SynthSpec")
    if index < 0:
        raise ValidationError(f"index must be nonnegative, got {index}")
    topo = topo or load_topology()
    if topo.joint_count != 24:
        raise ValidationError("the generator drives the 24-joint default skeleton")
    style = spec.style_of(index)
    params = style_parameters(spec, style)
    rng = np.random.default_rng([spec.seed, 3, index])
    jitter = spec.amplitude_jitter * rng.uniform(-1.0, 1.0, size=5)
    T, fr = spec.frames, spec.frame_rate

    local = dance_rotations(spec, params, jitter, topo)
    rot6d = matrix_to_rot6d(local)
    root = torch.zeros(T, 3, dtype=torch.float64)
    root[:, 1] = ROOT_HEIGHT
    motion = MotionSequence(rot6d, root, fr)

    pos, rot = forward_kinematics(rot6d, root, topo)
    head = HeadTrajectory(pos[:, topo.head].clone(), rot[:, topo.head].clone())
    _, contacts = foot_velocity_and_contacts(pos.numpy(), topo, fr)

    beats = beat_frames(T, spec.beat_period)
    t = np.arange(T, dtype=np.float64)
    impulse = np.zeros(T)
    impulse[beats] = 1.0
    bar = np.pi * t / spec.beat_period
    music_base = np.stack([impulse, _onset_envelope(T, beats), np.sin(bar), np.cos(bar),
                           np.sin(2 * bar), np.cos(2 * bar)], axis=1)
    music = music_base @ _mixing(spec, music_base.shape[1], spec.music_dim, 0)
    music = music + _smooth_noise(rng, music.shape, spec.music_noise)

    ang = head_angular_speed(head.rotation, fr)
    smooth = uniform_filter1d(ang, size=3, mode="nearest")
    flow = smooth + spec.vision_noise * max(float(smooth.std()), 1e-6) * rng.standard_normal(T)
    forward = head.rotation[:, :, 2].numpy()
    up = head.rotation[:, :, 1].numpy()
    scale = max(float(np.abs(flow).max()), 1e-6)
    vision_base = np.concatenate([flow[:, None] / scale, forward, up], axis=1)
    vision = vision_base @ _mixing(spec, vision_base.shape[1], spec.vision_dim, 1)
    vision = vision + _smooth_noise(rng, vision.shape, spec.vision_noise)

    return SampleRecord(motion=motion, beats=beats, music_feat=music.astype(np.float32),
                        vision_feat=vision.astype(np.float32), flow_proxy=flow, head=head,
                        contacts=contacts, style=style, index=index, extra={"params": params})


def sample_name(index: int) -> str:
    return f"sample_{index:04d}"


def build_dataset(spec: SynthSpec, out_path, topo: SkeletonTopology | None = None) -> dict:
    """Write every sample as a container plus a ``dataset.json`` index of the split."""
    out = Path(out_path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc
    samples = []
    for i in range(spec.sequences):
        rec = generate_sequence(spec, i, topo)
        name = sample_name(i)
        split = "test" if spec.is_test_style(rec.style) else "train"
        write_container(out / name, rec.to_arrays(), attrs={"style": rec.style, "split": split})
        samples.append({"name": name, "index": i, "style": rec.style, "split": split})
    manifest = {
        "format": "egodance-dataset",
        "version": 1,
        "spec": spec.to_dict(),
        "samples": samples,
        "splits": {s: [d["name"] for d in samples if d["split"] == s] for s in ("train", "test")},
    }
    try:
        (out / DATASET_INDEX).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {out / DATASET_INDEX}: {exc}") from exc
    return manifest


def load_dataset_index(root) -> dict:
    path = Path(root) / DATASET_INDEX
    if not path.is_file():
        raise ValidationError(f"{root} has no {DATASET_INDEX}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from exc


def load_sample(root, name: str) -> SampleRecord:
    return SampleRecord.from_arrays(read_container(Path(root) / name))


def load_split(root, split: str = "train", limit: int | None = None) -> list[SampleRecord]:
    index = load_dataset_index(root)
    if split not in index["splits"]:
        raise ValidationError(f"unknown split {split!r}")
    names = index["splits"][split][:limit]
    return [load_sample(root, n) for n in names]
