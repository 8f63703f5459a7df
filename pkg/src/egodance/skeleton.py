"""Skeleton topology, motion containers and the packed token layout.

The network consumes a single ``(T, J + 1, 6)`` tensor: the 24 joint 6D
rotations plus one virtual joint that carries the root translation in its
first three channels (last three are zero).  ``pack_motion`` and
``unpack_motion`` convert between that layout and ``MotionSequence``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigurationError, ValidationError

DEFAULT_TOPOLOGY = "default_topology.json"


@dataclass(frozen=True, eq=False)
class SkeletonTopology:
    """Joint tree, bone offsets and the overlapping joint groups.

    ``groups`` index into the token axis, which has ``joint_count`` entries,
    plus one trailing virtual root-translation token when ``root_token`` is
    set.
    """

    parents: tuple[int, ...]
    offsets: np.ndarray  # (J, 3) meters
    groups: tuple[tuple[int, ...], ...]
    head: int
    feet: tuple[int, int]
    group_names: tuple[str, ...] = ()
    joint_names: tuple[str, ...] = ()
    root_token: bool = False
    mirror_pairs: tuple[tuple[int, int], ...] = ()
    order: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        J = len(self.parents)
        offsets = np.asarray(self.offsets, dtype=np.float64)
        object.__setattr__(self, "offsets", offsets)
        if offsets.shape != (J, 3):
            raise ConfigurationError(f"offsets must have shape ({J}, 3), got {offsets.shape}")
        if J < 1 or self.parents[0] != -1:
            raise ConfigurationError("joint 0 must be the root (parent -1)")
        for j, p in enumerate(self.parents[1:], start=1):
            if not 0 <= p < J or p == j:
                raise ConfigurationError(f"joint {j} has invalid parent {p}")
        object.__setattr__(self, "order", _topological_order(self.parents))

        n_tok = self.token_count
        if not self.groups:
            raise ConfigurationError("at least one joint group is required")
        sizes = {len(g) for g in self.groups}
        if len(sizes) != 1:
            raise ConfigurationError(f"all groups must have the same size, got sizes {sorted(sizes)}")
        for g in self.groups:
            if len(set(g)) != len(g):
                raise ConfigurationError(f"group {g} repeats a joint")
            for j in g:
                if not 0 <= j < n_tok:
                    raise ConfigurationError(f"group member {j} outside [0, {n_tok})")
        covered = {j for g in self.groups for j in g}
        missing = sorted(set(range(n_tok)) - covered)
        if missing:
            raise ConfigurationError(f"joints {missing} belong to no group")
        if self.group_names and len(self.group_names) != len(self.groups):
            raise ConfigurationError("group_names must match groups")
        for j in (self.head, *self.feet):
            if not 0 <= j < J:
                raise ConfigurationError(f"head/foot index {j} outside [0, {J})")
        for a, b in self.mirror_pairs:
            if not (0 <= a < J and 0 <= b < J) or a == b:
                raise ConfigurationError(f"invalid mirror pair ({a}, {b})")

    @property
    def joint_count(self) -> int:
        return len(self.parents)

    @property
    def token_count(self) -> int:
        return self.joint_count + int(self.root_token)

    @property
    def group_count(self) -> int:
        return len(self.groups)

    @property
    def group_size(self) -> int:
        return len(self.groups[0])

    def group_index(self) -> torch.Tensor:
        return torch.tensor(self.groups, dtype=torch.long)

    @cached_property
    def slot_table(self):
        """``(depth, J')`` flattened group slots per joint, padded with the first slot, and a 0/1 mask."""
        P = self.group_size
        slots = [[] for _ in range(self.token_count)]
        for gi, group in enumerate(self.groups):
            for pi, j in enumerate(group):
                slots[j].append(gi * P + pi)
        depth = max(len(s) for s in slots)
        table = np.zeros((depth, len(slots)), dtype=np.int64)
        mask = np.zeros((depth, len(slots)))
        for j, s in enumerate(slots):
            table[:, j] = s[0]
            table[:len(s), j] = s
            mask[:len(s), j] = 1.0
        return torch.from_numpy(table), torch.from_numpy(mask)

    def chain(self, joint: int) -> list[int]:
        """Joints from the root down to ``joint`` inclusive."""
        out = [joint]
        while self.parents[out[-1]] != -1:
            out.append(self.parents[out[-1]])
        return out[::-1]

    def mirror_maps(self):
        """Left/right mirror as a token permutation and the group permutation it induces.

        Returns ``(sigma, rho)`` with ``sigma[j]`` the mirror of token ``j``
        and ``rho[g]`` the group whose slots hold the mirrors of group ``g``'s
        slots in the same order; ``None`` if the groups are not closed under
        the mirror.
        """
        if not self.mirror_pairs:
            return None
        sigma = list(range(self.token_count))
        for a, b in self.mirror_pairs:
            sigma[a], sigma[b] = b, a
        index = {g: i for i, g in enumerate(self.groups)}
        rho = []
        for g in self.groups:
            image = tuple(sigma[j] for j in g)
            if image not in index:
                return None
            rho.append(index[image])
        return tuple(sigma), tuple(rho)

    def group_of(self, name: str) -> tuple[int, ...]:
        return self.groups[self.group_names.index(name)]

    def to_dict(self) -> dict:
        return {
            "joint_names": list(self.joint_names),
            "parents": list(self.parents),
            "offsets": self.offsets.tolist(),
            "groups": [{"name": n, "joints": list(g)}
                       for n, g in zip(self.group_names or [f"g{i}" for i in range(len(self.groups))],
                                       self.groups)],
            "head": self.head,
            "feet": list(self.feet),
            "root_token": self.root_token,
            "mirror_pairs": [list(p) for p in self.mirror_pairs],
        }


def _topological_order(parents):
    J = len(parents)
    children = [[] for _ in range(J)]
    for j, p in enumerate(parents):
        if p >= 0:
            children[p].append(j)
    order, stack = [], [0]
    while stack:
        j = stack.pop()
        order.append(j)
        stack.extend(reversed(children[j]))
    if len(order) != J:
        raise ConfigurationError("parent graph is not a tree rooted at joint 0 (cycle or detached joint)")
    return tuple(order)


_REQUIRED = ("parents", "offsets", "groups", "head", "feet")


def topology_from_dict(d: dict) -> SkeletonTopology:
    missing = [k for k in _REQUIRED if k not in d]
    if missing:
        raise ConfigurationError(f"topology is missing keys: {missing}")
    unknown = set(d) - set(_REQUIRED) - {"joint_names", "root_token", "mirror_pairs"}
    if unknown:
        raise ConfigurationError(f"topology has unknown keys: {sorted(unknown)}")
    groups = d["groups"]
    if groups and isinstance(groups[0], dict):
        names = tuple(g["name"] for g in groups)
        groups = [g["joints"] for g in groups]
    else:
        names = ()
    try:
        return SkeletonTopology(
            parents=tuple(int(p) for p in d["parents"]),
            offsets=np.asarray(d["offsets"], dtype=np.float64),
            groups=tuple(tuple(int(j) for j in g) for g in groups),
            head=int(d["head"]),
            feet=tuple(int(f) for f in d["feet"]),
            group_names=names,
            joint_names=tuple(d.get("joint_names", ())),
            root_token=bool(d.get("root_token", False)),
            mirror_pairs=tuple(tuple(int(i) for i in p) for p in d.get("mirror_pairs", ())),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"malformed topology: {exc}") from exc


def load_topology(path: str | Path | None = None) -> SkeletonTopology:
    """Load a topology JSON file; ``None`` loads the bundled SMPL-24 layout."""
    if path is None:
        text = resources.files("egodance.data").joinpath(DEFAULT_TOPOLOGY).read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read topology file {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"topology file {path} is not valid JSON: {exc}") from exc
    return topology_from_dict(d)


def save_topology(topo: SkeletonTopology, path) -> None:
    Path(path).write_text(json.dumps(topo.to_dict(), indent=1) + "\n")


@dataclass
class MotionSequence:
    rot6d: torch.Tensor  # (T, J, 6)
    root_pos: torch.Tensor  # (T, 3)
    frame_rate: float = 30.0

    def __post_init__(self):
        self.rot6d = torch.as_tensor(self.rot6d)
        self.root_pos = torch.as_tensor(self.root_pos)
        if self.rot6d.dim() != 3 or self.rot6d.shape[-1] != 6:
            raise ValidationError(f"rot6d must be (T, J, 6), got {tuple(self.rot6d.shape)}")
        T = self.rot6d.shape[0]
        if T < 1:
            raise ValidationError("motion needs at least one frame")
        if self.root_pos.shape != (T, 3):
            raise ValidationError(f"root_pos must be ({T}, 3), got {tuple(self.root_pos.shape)}")
        if not (torch.isfinite(self.rot6d).all() and torch.isfinite(self.root_pos).all()):
            raise ValidationError("motion contains non-finite values")
        if not self.frame_rate > 0:
            raise ValidationError(f"frame_rate must be positive, got {self.frame_rate}")

    @property
    def frames(self) -> int:
        return self.rot6d.shape[0]


def pack_motion(rot6d, root_pos):
    """``(..., T, J, 6)`` + ``(..., T, 3)`` -> ``(..., T, J + 1, 6)``."""
    root = torch.cat([root_pos, torch.zeros_like(root_pos)], dim=-1)
    return torch.cat([rot6d, root.unsqueeze(-2)], dim=-2)


def unpack_motion(x):
    """Inverse of :func:`pack_motion`; the padding channels are dropped."""
    return x[..., :-1, :], x[..., -1, :3]
