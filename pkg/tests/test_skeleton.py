import json

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from egodance.errors import ConfigurationError, ValidationError
from egodance.network import human_tokenize, inverse_human_tokenize
from egodance.skeleton import (MotionSequence, SkeletonTopology, load_topology, pack_motion,
                               save_topology, topology_from_dict, unpack_motion)


def random_topology(seed, J=None, G=None, P=None):
    """Random tree with G equal-size overlapping groups covering every joint."""
    rng = np.random.default_rng(seed)
    J = J or int(rng.integers(3, 16))
    P = P or int(rng.integers(2, 6))
    G = G or int(np.ceil(J / P)) + int(rng.integers(0, 3))
    parents = [-1] + [int(rng.integers(0, j)) for j in range(1, J)]
    order = rng.permutation(J).tolist()
    groups = []
    for g in range(G):
        chunk = order[g * P:(g + 1) * P]
        others = [j for j in rng.permutation(J).tolist() if j not in chunk]
        chunk = chunk + others[:P - len(chunk)]
        groups.append(tuple(int(j) for j in rng.permutation(chunk)))
    return SkeletonTopology(parents=tuple(parents), offsets=rng.standard_normal((J, 3)) * 0.1,
                            groups=tuple(groups), head=J - 1, feet=(0, J - 1))


def test_default_topology(topo):
    assert topo.joint_count == 24 and topo.token_count == 25
    assert (topo.group_count, topo.group_size) == (5, 6)
    assert topo.head == 15 and topo.feet == (10, 11)
    assert topo.chain(15) == [0, 3, 6, 9, 12, 15]
    # shared joints exist (overlap)
    counts = np.bincount([j for g in topo.groups for j in g])
    assert counts.max() > 1


def test_roundtrip_dict_and_file(topo, tmp_path):
    again = topology_from_dict(json.loads(json.dumps(topo.to_dict())))
    assert again.parents == topo.parents and again.groups == topo.groups
    assert np.array_equal(again.offsets, topo.offsets)
    save_topology(topo, tmp_path / "t.json")
    assert load_topology(tmp_path / "t.json").groups == topo.groups


@pytest.mark.parametrize("mutate, msg", [
    (lambda d: d.update(parents=[-1, 2, 1]), "tree"),
    (lambda d: d.update(groups=[[0, 1], [2]]), "same size"),
    (lambda d: d.update(groups=[[0, 1], [1, 0]]), "no group"),
    (lambda d: d.update(groups=[[0, 5], [1, 2]]), "outside"),
    (lambda d: d.update(head=7), "head"),
    (lambda d: d.update(extra=1), "unknown"),
])
def test_topology_validation(mutate, msg):
    d = {"parents": [-1, 0, 1], "offsets": [[0, 0, 0]] * 3, "groups": [[0, 1], [1, 2]],
         "head": 2, "feet": [1, 2]}
    topology_from_dict(dict(d))
    mutate(d)
    with pytest.raises(ConfigurationError, match=msg):
        topology_from_dict(d)


def test_missing_topology_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_topology(tmp_path / "nope.json")


def test_motion_sequence_validation():
    MotionSequence(torch.zeros(3, 24, 6), torch.zeros(3, 3))
    with pytest.raises(ValidationError):
        MotionSequence(torch.zeros(3, 24, 6), torch.zeros(2, 3))
    with pytest.raises(ValidationError):
        MotionSequence(torch.full((1, 24, 6), float("inf")), torch.zeros(1, 3))
    with pytest.raises(ValidationError):
        MotionSequence(torch.zeros(0, 24, 6), torch.zeros(0, 3))


def test_pack_unpack():
    r6, root = torch.randn(4, 24, 6), torch.randn(4, 3)
    x = pack_motion(r6, root)
    assert x.shape == (4, 25, 6)
    assert torch.equal(x[:, 24, 3:], torch.zeros(4, 3))
    a, b = unpack_motion(x)
    assert torch.equal(a, r6) and torch.equal(b, root)


def test_tokenize_shape_and_slots(topo):
    x = torch.randn(150, 25, 6)
    g = human_tokenize(x, topo)
    assert g.shape == (150, 5, 36)
    gj = g.reshape(150, 5, 6, 6)
    for gi, group in enumerate(topo.groups):
        for pi, j in enumerate(group):
            assert torch.equal(gj[:, gi, pi], x[:, j])
    assert torch.equal(human_tokenize(torch.zeros(2, 25, 6), topo), torch.zeros(2, 5, 36))
    with pytest.raises(ConfigurationError):
        human_tokenize(torch.zeros(2, 24, 6), topo)


def test_inverse_tokenize_averages_shared(topo):
    G, P = topo.group_count, topo.group_size
    j = torch.zeros(1, G, P, 1, dtype=torch.float64)
    # joint 9 sits in both arm groups and the torso group
    slots = [(gi, g.index(9)) for gi, g in enumerate(topo.groups) if 9 in g]
    assert len(slots) == 3
    for (gi, pi), v in zip(slots, (1.0, 3.0, 5.0)):
        j[0, gi, pi, 0] = v
    assert float(inverse_human_tokenize(j, topo)[0, 9, 0]) == 3.0
    # two contributions 1 and 3 average to 2
    left_leg, right_leg = topo.group_of("left_leg"), topo.group_of("right_leg")
    j = torch.zeros(1, G, P, 1, dtype=torch.float64)
    j[0, topo.group_names.index("left_leg"), left_leg.index(0), 0] = 1.0
    j[0, topo.group_names.index("right_leg"), right_leg.index(0), 0] = 3.0
    assert float(inverse_human_tokenize(j, topo)[0, 0, 0]) == 2.0
    with pytest.raises(ConfigurationError):
        inverse_human_tokenize(torch.zeros(1, G, P + 1, 1), topo)


def test_roundtrip_default_exact(topo):
    x = torch.randn(7, 25, 6, dtype=torch.float64)
    g = human_tokenize(x, topo).reshape(7, 5, 6, 6)
    assert torch.equal(inverse_human_tokenize(g, topo), x)


@given(seed=st.integers(0, 100_000))
def test_roundtrip_random_topologies_exact(seed):
    t = random_topology(seed)
    D = 3
    x = torch.randn(4, t.joint_count, D, dtype=torch.float64) * 1e3
    g = human_tokenize(x, t).reshape(4, t.group_count, t.group_size, D)
    assert torch.equal(inverse_human_tokenize(g, t), x)


def test_mirror_maps(topo):
    sigma, rho = topo.mirror_maps()
    names = topo.group_names
    assert names[rho[names.index("left_arm")]] == "right_arm"
    assert names[rho[names.index("torso")]] == "torso"
    assert sigma[24] == 24 and sigma[sigma[13]] == 13
    assert random_topology(0).mirror_maps() is None
