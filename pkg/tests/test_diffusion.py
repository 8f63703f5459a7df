import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from egodance.diffusion import (DiffusionSchedule, GuidanceConfig, goal_gradient, goal_head, guided_mean,
                                guided_sample, posterior_mean, q_sample, sample)
from egodance.errors import NumericFailure, ValidationError
from egodance.kinematics import HeadTrajectory, axis_angle_to_matrix, extract_head, matrix_to_rot6d
from egodance.network import ModelConfig, SkeletonDenoiser
from egodance.skeleton import pack_motion

from conftest import random_rotations


def test_schedule_invariants():
    s = DiffusionSchedule.linear()
    assert s.M == 50 and s.alpha_bar[0] == 1.0
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.isclose(s.betas[0], 1e-4) and np.isclose(s.betas[-1], 2e-2)
    with pytest.raises(ValidationError):
        DiffusionSchedule(np.array([0.1, 1.0]))
    with pytest.raises(ValidationError):
        DiffusionSchedule.linear(0)


def test_posterior_coefficients_match_bayes():
    """Compare with the product of Gaussians q(x_m | x_{m-1}) q(x_{m-1} | x0) done in 1-D."""
    s = DiffusionSchedule.linear(20)
    for m in (2, 7, 20):
        a_prev, a_cur, b = s.alpha_bar[m - 1], s.alpha_bar[m], s.betas[m - 1]
        # prior on x_{m-1}: N(sqrt(a_prev) x0, 1 - a_prev); likelihood x_m ~ N(sqrt(1-b) x_{m-1}, b)
        prec = 1 / (1 - a_prev) + (1 - b) / b
        var = 1 / prec
        c0 = var * math.sqrt(a_prev) / (1 - a_prev)
        cm = var * math.sqrt(1 - b) / b
        assert math.isclose(var, s.posterior_var[m], rel_tol=1e-10)
        assert math.isclose(c0, s.coef_x0[m], rel_tol=1e-10)
        assert math.isclose(cm, s.coef_xm[m], rel_tol=1e-10)
    assert s.step_var[1] == s.posterior_var[2] and s.posterior_var[1] == 0.0


def test_q_sample_examples():
    s = DiffusionSchedule.linear()
    x0 = torch.randn(3, 4, dtype=torch.float64)
    assert torch.equal(q_sample(x0, 0, torch.randn_like(x0), s), x0)
    half = DiffusionSchedule(np.array([0.5, 0.5]))
    one = torch.ones(1, dtype=torch.float64)
    assert abs(float(q_sample(one, 1, one, half)) - 2 * math.sqrt(0.5)) < 1e-12
    with pytest.raises(ValidationError):
        q_sample(x0, 51, torch.randn_like(x0), s)
    with pytest.raises(ValidationError):
        q_sample(x0, 1, torch.randn(2, 4), s)


def test_guidance_config_validation():
    with pytest.raises(ValidationError):
        GuidanceConfig(gamma_pos=-1)
    with pytest.raises(ValidationError):
        GuidanceConfig(scale=float("nan"))


def _pose(topo, T=3, seed=0):
    rng = np.random.default_rng(seed)
    r6 = matrix_to_rot6d(random_rotations(rng, (T, 24)))
    root = torch.from_numpy(rng.standard_normal((T, 3)))
    return pack_motion(r6, root)


def test_goal_head_examples(topo):
    x = _pose(topo)
    head = extract_head(x[:, :-1], x[:, -1, :3], topo)
    cfg = GuidanceConfig(gamma_pos=1.0, gamma_rot=1.0)
    assert float(goal_head(x, head, cfg, topo)) == pytest.approx(0.0, abs=1e-12)
    shifted = HeadTrajectory(head.position + torch.tensor([0.01, 0, 0], dtype=torch.float64), head.rotation)
    assert float(goal_head(x, shifted, cfg, topo)) == pytest.approx(1e-4, abs=1e-12)
    flip = axis_angle_to_matrix(torch.tensor([0.3, -1.0, 0.5]), torch.tensor(math.pi, dtype=torch.float64))
    rotated = HeadTrajectory(head.position, flip @ head.rotation)
    g = goal_head(x, rotated, GuidanceConfig(gamma_pos=0.0, gamma_rot=1.0), topo)
    assert float(g) == pytest.approx(2 * math.pi ** 2, abs=1e-6)


def test_goal_head_ignores_non_head_joints(topo):
    x = _pose(topo)
    head = extract_head(x[:, :-1], x[:, -1, :3], topo)
    cfg = GuidanceConfig()
    target = HeadTrajectory(head.position + 0.1, head.rotation)
    x2 = x.clone()
    x2[:, 10] = torch.randn(3, 6, dtype=torch.float64)  # a foot
    assert float(goal_head(x2, target, cfg, topo)) == float(goal_head(x, target, cfg, topo))
    xi = goal_gradient(x, target, cfg, topo)
    off_chain = [j for j in range(25) if j not in topo.chain(topo.head) + [24]]
    assert torch.equal(xi[:, off_chain], torch.zeros_like(xi[:, off_chain]))


def test_goal_gradient_descends(topo):
    x = _pose(topo)
    head = extract_head(x[:, :-1], x[:, -1, :3], topo)
    target = HeadTrajectory(head.position + 0.05, head.rotation)
    cfg = GuidanceConfig()
    xi = goal_gradient(x, target, cfg, topo)
    assert float(goal_head(x + 1e-3 * xi, target, cfg, topo)) < float(goal_head(x, target, cfg, topo))
    mu = torch.zeros(2)
    assert torch.equal(guided_mean(mu, 0.0, torch.ones(2), 5.0), mu)


def _tiny_denoiser(topo, steps=10):
    torch.manual_seed(0)
    cfg = ModelConfig(width=8, blocks=1, state_dim=4, cond_dim=8, time_dim=8, max_step=steps)
    return SkeletonDenoiser(topo, cfg).double()


def test_sampling_determinism_and_guidance_identity(topo):
    s = DiffusionSchedule.linear(10)
    den = _tiny_denoiser(topo)
    z = torch.randn(1, 4, 8, dtype=torch.float64)
    shape = (1, 4, 25, 6)
    a = sample(den, z, s, 3, shape)
    assert torch.equal(a, sample(den, z, s, 3, shape))
    assert not torch.equal(a, sample(den, z, s, 4, shape))
    head = extract_head(a[0, :, :-1], a[0, :, -1, :3], topo)
    target = HeadTrajectory(head.position.detach(), head.rotation.detach())
    off = guided_sample(den, z, target, s, GuidanceConfig(scale=0.0), 3, shape, topo)
    assert torch.equal(off, a)
    disabled = guided_sample(den, z, target, s, GuidanceConfig(enabled=False), 3, shape, topo)
    assert torch.equal(disabled, a)
    on = guided_sample(den, z, target, s, GuidanceConfig(scale=50.0), 3, shape, topo)
    assert not torch.equal(on, a)


def test_single_step_sampler(topo):
    s = DiffusionSchedule(np.array([0.02]))
    den = _tiny_denoiser(topo, steps=1)
    z = torch.randn(1, 2, 8, dtype=torch.float64)
    gen = torch.Generator().manual_seed(9)
    x1 = torch.randn((1, 2, 25, 6), generator=gen, dtype=torch.float64)
    expect = posterior_mean(den(x1, torch.tensor([1]), z), x1, 1, s)
    assert torch.equal(sample(den, z, s, 9, (1, 2, 25, 6)), expect)


def test_sampler_reports_numeric_failure(topo):
    s = DiffusionSchedule.linear(10)
    den = _tiny_denoiser(topo)
    with torch.no_grad():
        den.out.bias.fill_(float("inf"))
    with pytest.raises(NumericFailure) as err:
        sample(den, torch.randn(1, 2, 8, dtype=torch.float64), s, 0, (1, 2, 25, 6))
    assert err.value.where == 10


@given(m=st.sampled_from([1, 25, 50]))
def test_q_sample_moments(m):
    s = DiffusionSchedule.linear()
    n = 100_000
    gen = torch.Generator().manual_seed(m)
    x0 = torch.full((n,), 0.7, dtype=torch.float64)
    xm = q_sample(x0, m, torch.randn(n, generator=gen, dtype=torch.float64), s)
    ab = s.alpha_bar[m]
    mean_se = math.sqrt((1 - ab) / n)
    var_se = (1 - ab) * math.sqrt(2 / (n - 1))
    assert abs(float(xm.mean()) - math.sqrt(ab) * 0.7) < 3 * mean_se
    assert abs(float(xm.var()) - (1 - ab)) < 3 * var_se
