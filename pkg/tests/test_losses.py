import math

import numpy as np
import pytest
import torch

from egodance.diffusion import DiffusionSchedule, GuidanceConfig, goal_head, q_sample
from egodance.errors import NumericFailure, ValidationError
from egodance.kinematics import HeadTrajectory, extract_head, matrix_to_rot6d
from egodance.losses import LossWeights, alignment_loss, kinematic_loss, simple_loss, total_loss
from egodance.network import EgoMusicModel, ModelConfig
from egodance.skeleton import pack_motion, unpack_motion

from conftest import random_rotations
from fdcheck import directional_check


def _motion(seed, T=4, B=None):
    rng = np.random.default_rng(seed)
    lead = () if B is None else (B,)
    r6 = matrix_to_rot6d(random_rotations(rng, lead + (T, 24)))
    root = torch.from_numpy(rng.standard_normal(lead + (T, 3)) * 0.1)
    return pack_motion(r6, root)


def test_weights_validation():
    with pytest.raises(ValidationError):
        LossWeights(kin=-1)
    with pytest.raises(ValidationError):
        LossWeights(tau=0)
    with pytest.raises(ValidationError):
        LossWeights(align=float("inf"))


def test_kinematic_loss_examples(topo):
    x = _motion(0)
    contacts = torch.ones(4, 2, dtype=torch.float64)
    w = LossWeights()
    total, parts = kinematic_loss(x, x, contacts, topo, w)
    assert float(parts["pos"]) == 0 and float(parts["vel"]) == 0
    shifted = x.clone()
    shifted[:, -1, 0] += 0.1
    _, parts = kinematic_loss(shifted, x, torch.zeros(4, 2), topo, w)
    assert float(parts["pos"]) == pytest.approx(0.01, abs=1e-12)
    assert float(parts["vel"]) == pytest.approx(0.0, abs=1e-12)
    assert float(parts["contact"]) == 0.0
    with pytest.raises(ValidationError):
        kinematic_loss(x, x, None, topo, w)
    with pytest.raises(ValidationError):
        kinematic_loss(x, x, torch.ones(3, 2), topo, w)


def test_contact_term_counts_planted_feet(topo):
    x = _motion(1, T=1).expand(3, 25, 6).clone()
    moving = x.clone()
    moving[1:, -1, 0] += torch.tensor([0.2, 0.4], dtype=torch.float64)
    contacts = torch.zeros(3, 2, dtype=torch.float64)
    contacts[0, 0] = 1
    _, parts = kinematic_loss(moving, x, contacts, topo, LossWeights())
    assert float(parts["contact"]) == pytest.approx(0.04, abs=1e-12)


def test_alignment_closed_forms():
    e = torch.eye(2, dtype=torch.float64)
    assert float(alignment_loss(e, e, tau=1.0)) == pytest.approx(-math.log(math.e / (math.e + 1)), abs=1e-6)
    z = torch.ones(5, 3, dtype=torch.float64)
    assert float(alignment_loss(z, z, tau=0.5)) == pytest.approx(math.log(5), abs=1e-12)
    one = torch.randn(1, 8, dtype=torch.float64)
    assert float(alignment_loss(one, one)) == pytest.approx(0.0, abs=1e-12)
    batched = torch.randn(3, 6, 4, dtype=torch.float64)
    per = [float(alignment_loss(batched[i], batched[i].flip(0))) for i in range(3)]
    assert float(alignment_loss(batched, batched.flip(1))) == pytest.approx(np.mean(per), abs=1e-12)
    with pytest.raises(ValidationError):
        alignment_loss(torch.zeros(2, 3), torch.ones(2, 3))
    with pytest.raises(ValidationError):
        alignment_loss(torch.ones(2, 3), torch.ones(3, 3))


def test_alignment_brute_force():
    gen = torch.Generator().manual_seed(3)
    za = torch.randn(5, 4, generator=gen, dtype=torch.float64)
    zv = torch.randn(5, 4, generator=gen, dtype=torch.float64)
    tau = 0.3
    a = za.numpy() / np.linalg.norm(za.numpy(), axis=1, keepdims=True)
    v = zv.numpy() / np.linalg.norm(zv.numpy(), axis=1, keepdims=True)
    s = a @ v.T / tau
    terms = []
    for i in range(5):
        terms.append(-s[i, i] + math.log(sum(math.exp(s[i, k]) for k in range(5))))
        terms.append(-s[i, i] + math.log(sum(math.exp(s[k, i]) for k in range(5))))
    assert float(alignment_loss(za, zv, tau)) == pytest.approx(np.mean(terms), abs=1e-12)


def _tiny_model(topo):
    torch.manual_seed(0)
    cfg = ModelConfig(width=8, blocks=1, state_dim=4, cond_dim=8, time_dim=8, max_step=10,
                      music_dim=3, vision_dim=3, encoder_depth=1, window=16)
    model = EgoMusicModel(topo, cfg).double()
    # move zero-initialized projections off zero so every path carries gradient
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.05 * torch.randn(p.shape, dtype=p.dtype))
    return model


def _batch(B=2, T=4, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return {"x0": _motion(seed, T=T, B=B),
            "music": torch.randn(B, T, 3, generator=gen, dtype=torch.float64),
            "vision": torch.randn(B, T, 3, generator=gen, dtype=torch.float64),
            "contacts": (torch.rand(B, T, 2, generator=gen) > 0.5).double()}


def test_total_loss_decomposes(topo):
    model = _tiny_model(topo)
    batch = _batch()
    w = LossWeights(kin=0.3, align=0.2)
    steps = torch.tensor([3, 7])
    noise = torch.randn(batch["x0"].shape, dtype=torch.float64)
    total, rep = total_loss(batch, model, DiffusionSchedule.linear(10), w, steps=steps, noise=noise)
    assert rep["total"] == pytest.approx(rep["simple"] + 0.3 * rep["kin"] + 0.2 * rep["align"], rel=1e-12)
    assert rep["kin"] == pytest.approx(rep["pos"] + rep["vel"] + rep["contact"], rel=1e-12)
    bad = dict(batch, music=batch["music"].clone())
    bad["music"][0, 0, 0] = float("inf")
    with pytest.raises((NumericFailure, ValidationError)):
        total_loss(bad, model, DiffusionSchedule.linear(10), w, steps=steps, noise=noise)


# finite-difference gradient suite (float64, tiny configs)

def test_fd_simple_loss(topo):
    model = _tiny_model(topo)
    batch = _batch()
    s = DiffusionSchedule.linear(10)
    noise = torch.randn(batch["x0"].shape, dtype=torch.float64)
    steps = torch.tensor([2, 9])
    params = list(model.denoiser.parameters())

    def fn():
        x_m = q_sample(batch["x0"], steps, noise, s)
        return simple_loss(model.denoiser(x_m, steps, model.condition(batch["music"], batch["vision"]).z),
                           batch["x0"])
    assert directional_check(fn, params) < 1e-4


def test_fd_kinematic_loss(topo):
    x0 = _motion(2)
    pred = (x0 + 0.1 * _motion(3)).requires_grad_(True)
    contacts = torch.tensor([[1, 0], [1, 1], [0, 1], [0, 0]], dtype=torch.float64)
    assert directional_check(lambda: kinematic_loss(pred, x0, contacts, topo, LossWeights())[0], [pred]) < 1e-4


def test_fd_alignment_loss():
    gen = torch.Generator().manual_seed(0)
    za = torch.randn(2, 6, 5, generator=gen, dtype=torch.float64, requires_grad=True)
    zv = torch.randn(2, 6, 5, generator=gen, dtype=torch.float64, requires_grad=True)
    assert directional_check(lambda: alignment_loss(za, zv, 0.5), [za, zv]) < 1e-4


def test_fd_goal_head(topo):
    x = _motion(4).requires_grad_(True)
    with torch.no_grad():
        head = extract_head(x[:, :-1], x[:, -1, :3], topo)
        target = HeadTrajectory(head.position + 0.05, head.rotation @ _small_rotation())
    cfg = GuidanceConfig(gamma_pos=1.0, gamma_rot=0.5)
    assert directional_check(lambda: goal_head(x, target, cfg, topo), [x]) < 1e-4


def _small_rotation():
    from egodance.kinematics import axis_angle_to_matrix
    return axis_angle_to_matrix(torch.tensor([0.2, 1.0, -0.4], dtype=torch.float64),
                                torch.tensor(0.3, dtype=torch.float64))


def test_fd_full_denoiser(topo):
    model = _tiny_model(topo)
    batch = _batch(seed=5)
    params = [p for p in model.parameters()]
    x_m = (batch["x0"] + 0.1).requires_grad_(True)
    steps = torch.tensor([1, 10])
    weight = torch.randn(x_m.shape, dtype=torch.float64)

    def fn():
        z = model.condition(batch["music"], batch["vision"]).z
        return (model.denoiser(x_m, steps, z) * weight).sum()
    assert directional_check(fn, params + [x_m], n_dirs=4) < 1e-4
    # per-tensor directions so small parameter groups are not swamped
    for p in params[:: max(1, len(params) // 8)]:
        assert directional_check(fn, [p], n_dirs=1) < 1e-4


def test_unpack_pack_consistency():
    x = _motion(9)
    r, t = unpack_motion(x)
    assert torch.equal(pack_motion(r, t), x)
