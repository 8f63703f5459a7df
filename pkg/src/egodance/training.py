"""Training loop, checkpoints and sampling helpers on top of the model and losses."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .container import read_attrs, read_container, write_container
from .diffusion import DiffusionSchedule, GuidanceConfig, guided_sample, q_sample, sample
from .errors import NumericFailure, ValidationError
from .kinematics import HeadTrajectory, forward_kinematics
from .losses import LossWeights, simple_loss, total_loss
from .network import EgoMusicModel, ModelConfig
from .skeleton import SkeletonTopology, pack_motion, topology_from_dict, unpack_motion
from .synth import SampleRecord

LOSS_COLUMNS = ("step", "total", "simple", "kin", "align", "pos", "vel", "contact", "lr")


@dataclass
class TrainConfig:
    steps: int = 2000
    lr: float = 2e-3
    min_lr: float = 1e-4
    warmup: int = 50
    batch_size: int = 4
    grad_clip: float = 1.0
    ckpt_every: int = 0  # 0: only the final checkpoint
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValidationError("steps and batch_size must be positive")
        if not (self.lr > 0 and 0 <= self.min_lr <= self.lr):
            raise ValidationError("need lr > 0 and 0 <= min_lr <= lr")
        if self.warmup < 0 or self.ckpt_every < 0 or not self.grad_clip > 0:
            raise ValidationError("warmup and ckpt_every must be nonnegative, grad_clip positive")

    def lr_at(self, step: int) -> float:
        """Linear warmup then cosine decay to ``min_lr``; ``step`` counts from 0."""
        if step < self.warmup:
            return self.lr * (step + 1) / self.warmup
        span = max(self.steps - self.warmup, 1)
        frac = min((step - self.warmup) / span, 1.0)
        return self.min_lr + 0.5 * (self.lr - self.min_lr) * (1.0 + math.cos(math.pi * frac))


def make_batch(records: list[SampleRecord], dtype=torch.float32) -> dict:
    """Stack records into the training batch dictionary."""
    if not records:
        raise ValidationError("no samples to batch")
    T = {r.motion.frames for r in records}
    if len(T) != 1:
        raise ValidationError(f"samples have differing lengths {sorted(T)}")
    x0 = torch.stack([pack_motion(r.motion.rot6d, r.motion.root_pos) for r in records]).to(dtype)
    return {
        "x0": x0,
        "music": torch.stack([torch.from_numpy(np.asarray(r.music_feat)) for r in records]).to(dtype),
        "vision": torch.stack([torch.from_numpy(np.asarray(r.vision_feat)) for r in records]).to(dtype),
        "contacts": torch.stack([torch.from_numpy(np.asarray(r.contacts, dtype=np.float64))
                                 for r in records]).to(dtype),
    }


def _subset(batch, idx):
    return {k: v[idx] for k, v in batch.items()}


@torch.no_grad()
def probe_simple_loss(model: EgoMusicModel, batch: dict, schedule: DiffusionSchedule,
                      levels: int = 10, seed: int = 1234) -> float:
    """``L_simple`` averaged over a fixed grid of noise levels and fixed noise.

    Independent of training randomness, so values before and after training
    are directly comparable.
    """
    gen = torch.Generator().manual_seed(seed)
    steps = np.unique(np.linspace(1, schedule.M, levels).round().astype(int))
    z = model.condition(batch["music"], batch["vision"]).z
    x0 = batch["x0"]
    losses = []
    for m in steps:
        noise = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
        x_m = q_sample(x0, int(m), noise, schedule)
        losses.append(float(simple_loss(model.denoiser(x_m, int(m), z), x0)))
    return float(np.mean(losses))


def train(model: EgoMusicModel, records: list[SampleRecord], schedule: DiffusionSchedule,
          weights: LossWeights, cfg: TrainConfig, out_dir=None, log=None) -> list[dict]:
    """Optimize ``model`` in place; returns the per-step loss reports.

    With ``out_dir`` set, writes ``losses.csv`` and checkpoints there.
    """
    batch = make_batch(records)
    N = batch["x0"].shape[0]
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    history = []
    model.train()
    for step in range(cfg.steps):
        lr = cfg.lr_at(step)
        for group in opt.param_groups:
            group["lr"] = lr
        if cfg.batch_size >= N:
            sub = batch
        else:
            sub = _subset(batch, torch.randperm(N, generator=gen)[:cfg.batch_size])
        loss, report = total_loss(sub, model, schedule, weights, generator=gen)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        norm = torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        if not torch.isfinite(norm):
            raise NumericFailure(f"non-finite gradient at step {step + 1}", where=step + 1)
        opt.step()
        report = {"step": step + 1, **report, "lr": lr}
        history.append(report)
        if log is not None:
            log(report)
        if out is not None and cfg.ckpt_every and (step + 1) % cfg.ckpt_every == 0 and step + 1 < cfg.steps:
            save_checkpoint(out / f"ckpt_{step + 1:06d}", model, schedule, {"step": step + 1})
    model.eval()
    if out is not None:
        write_loss_csv(out / "losses.csv", history)
        save_checkpoint(out / "checkpoint", model, schedule, {"step": cfg.steps})
    return history


def write_loss_csv(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOSS_COLUMNS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(float(v)) if k != "step" else v) for k, v in row.items()
                        if k in LOSS_COLUMNS})


# --------------------------------------------------------------------------- checkpoints

def save_checkpoint(path, model: EgoMusicModel, schedule: DiffusionSchedule, extra: dict | None = None):
    state = {k: v.detach().cpu() for k, v in model.state_dict().items()}
    attrs = {
        "kind": "checkpoint",
        "model": model.cfg.to_dict(),
        "topology": model.topo.to_dict(),
        "schedule": schedule.to_dict(),
        "dtype": str(next(iter(state.values())).dtype).replace("torch.", ""),
        **(extra or {}),
    }
    return write_container(path, {k: v.numpy() for k, v in state.items()}, attrs)


def load_checkpoint(path):
    """Rebuild ``(model, schedule, attrs)`` from a checkpoint container."""
    attrs = read_attrs(path)
    if attrs.get("kind") != "checkpoint":
        raise ValidationError(f"{path} is not a checkpoint")
    cfg_d = dict(attrs["model"])
    cfg_d["permutations"] = tuple(tuple(p) for p in cfg_d.get("permutations", ()))
    cfg = ModelConfig(**cfg_d)
    topo = topology_from_dict(attrs["topology"])
    model = EgoMusicModel(topo, cfg)
    arrays = read_container(path)
    state = {k: torch.from_numpy(v) for k, v in arrays.items()}
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise ValidationError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
    model.load_state_dict(state)
    model.to(getattr(torch, attrs.get("dtype", "float32")))
    model.eval()
    schedule = DiffusionSchedule(np.asarray(attrs["schedule"]["betas"]))
    return model, schedule, attrs


# --------------------------------------------------------------------------- sampling

def condition_for(model: EgoMusicModel, record: SampleRecord):
    dtype = next(model.parameters()).dtype
    music = torch.as_tensor(np.asarray(record.music_feat)).to(dtype)[None]
    vision = torch.as_tensor(np.asarray(record.vision_feat)).to(dtype)[None]
    with torch.no_grad():
        return model.condition(music, vision).z


def generate_motion(model: EgoMusicModel, record: SampleRecord, schedule: DiffusionSchedule,
                    seed: int, guidance: GuidanceConfig | None = None,
                    head_target: HeadTrajectory | None = None):
    """Packed motion ``(T, J', 6)`` for one record, optionally head-guided."""
    z = condition_for(model, record)
    shape = (1, record.motion.frames, model.topo.token_count, 6)
    if guidance is None or not guidance.enabled:
        x = sample(model.denoiser, z, schedule, seed, shape)
    else:
        target = head_target if head_target is not None else record.head
        target = HeadTrajectory(torch.as_tensor(target.position).to(z.dtype),
                                torch.as_tensor(target.rotation).to(z.dtype))
        x = guided_sample(model.denoiser, z, target, schedule, guidance, seed, shape, model.topo)
    return x[0]


def motion_positions(x, topo: SkeletonTopology):
    """Global joint positions and rotations (float64) of packed motion ``(T, J', 6)``."""
    rot6d, root = unpack_motion(torch.as_tensor(x).to(torch.float64))
    return forward_kinematics(rot6d, root, topo)


def training_history_summary(history: list[dict]) -> dict:
    first, last = history[0], history[-1]
    return {k: (first[k], last[k]) for k in ("total", "simple", "kin", "align")}



