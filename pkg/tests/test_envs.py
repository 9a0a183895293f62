"""Benchmark environments: samplers, heteroscedastic switching, validation."""
from dataclasses import replace

import numpy as np
import pytest

from sgmpc.envs import (
    BoundedLaplace,
    TruncatedStudentT,
    mass_spring_damper,
    sample_noise,
    surgical_planning,
    with_noise_scales,
)


# ---------------------------------------------------------------------------
# noise families


@pytest.mark.parametrize(
    "family",
    [TruncatedStudentT(3.0, 0.1, 0.6), BoundedLaplace(0.05, 0.4)],
)
def test_family_draws_are_truncated(family):
    draws = family.draw(np.random.default_rng(0), 5000, 3)
    assert draws.shape == (5000, 3)
    assert np.abs(draws).max() <= family.trunc_radius + 1e-15


def test_zero_scale_family_draws_zeros():
    fam = TruncatedStudentT(3.0, 0.0, 0.0)
    assert not fam.draw(np.random.default_rng(1), 100, 2).any()


def test_positive_scale_needs_positive_radius():
    with pytest.raises(ValueError):
        TruncatedStudentT(3.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        BoundedLaplace(1.0, 0.0)


# ---------------------------------------------------------------------------
# state-dependent sampling


def test_sample_noise_shapes(msd_env):
    rng = np.random.default_rng(2)
    w, eps = sample_noise(msd_env.noise, np.zeros(2), rng)
    assert w.shape == (2,) and eps.shape == (2,)
    wb, eb = sample_noise(msd_env.noise, np.zeros((7, 2)), rng)
    assert wb.shape == (7, 2) and eb.shape == (7, 2)


def test_sample_noise_mean_obeys_clt(msd_env):
    rng = np.random.default_rng(3)
    n = 100_000
    states = np.zeros((n, 2))  # predicate inactive everywhere
    w, eps = sample_noise(msd_env.noise, states, rng)
    for block in (w, eps):
        mean = block.mean(axis=0)
        band = 3.0 * block.std(axis=0) / np.sqrt(n)
        assert (np.abs(mean) <= band).all()


def test_hetero_rule_multiplies_both_noise_sources(msd_env):
    sampler = msd_env.noise
    assert np.allclose(sampler.multipliers(np.array([[0.3, 0.0], [0.1, 0.0]])), [5.0, 1.0])
    assert sampler.max_multiplier == 5.0

    rng = np.random.default_rng(4)
    n = 100_000
    active = np.tile([0.3, 0.0], (n, 1))
    idle = np.zeros((n, 2))
    w_a, eps_a = sample_noise(sampler, active, rng)
    w_i, eps_i = sample_noise(sampler, idle, rng)
    for hot, cold in ((eps_a, eps_i), (w_a, w_i)):
        ratio = hot.std(axis=0) / cold.std(axis=0)
        assert ((ratio > 4.8) & (ratio < 5.2)).all()


# ---------------------------------------------------------------------------
# environment definitions


def test_mass_spring_damper_shape(msd_env):
    env = msd_env
    assert np.allclose(env.system.a, [[1.0, 0.1], [-0.05, 0.95]])
    assert np.allclose(env.system.b, [[0.0], [0.05]])
    assert np.allclose(env.system.c, np.eye(2))
    assert env.dt == 0.1
    assert env.prs == "half_space"
    assert np.allclose(env.target_state, [0.5, 0.0])
    assert np.allclose(env.constraints.a, [[1.0, 0.0, 0.0]])
    assert np.allclose(env.constraints.b, [0.5])
    assert env.funnel is None


def test_surgical_planning_shape(sp_env):
    env = sp_env
    assert np.allclose(env.system.a, np.eye(5))
    assert np.allclose(env.system.b, 0.075 * np.eye(5))
    assert env.prs == "elliptical"
    assert env.funnel is not None
    assert np.allclose(env.target_state, [0.12, 0.0, 0.0, 0.0, 0.0])
    assert env.dt == 0.075


def test_stage_cost_quadratic(msd_env):
    rng = np.random.default_rng(5)
    for _ in range(5):
        x = rng.normal(size=2)
        u = rng.normal(size=1)
        dx = x - msd_env.target_state
        want = dx @ msd_env.q_env @ dx + u @ msd_env.r_env @ u
        assert msd_env.stage_cost(x, u) == pytest.approx(want, rel=1e-12)


def test_violations_flag_true_constraints(msd_env, sp_env):
    flags = msd_env.violations(np.array([[0.6, 0.0], [0.4, 0.0]]))
    assert flags[0] and not flags[1]
    r = sp_env.funnel.radius(0.06)
    sp_flags = sp_env.violations(
        np.array(
            [
                [0.06, 1.01 * r, 0.0, 0.0, 0.0],
                [0.06, 0.5 * r, 0.0, 0.0, 0.0],
            ]
        )
    )
    assert sp_flags[0] and not sp_flags[1]


def test_environment_validation(msd_env):
    with pytest.raises(ValueError):
        replace(msd_env, dt=0.0)
    with pytest.raises(ValueError):
        replace(msd_env, prs="boxes")
    with pytest.raises(ValueError):
        replace(msd_env, target_state=np.array([2.0, 0.0]))


def test_with_noise_scales_rescales_proportionally(msd_env):
    env0 = with_noise_scales(msd_env, 0.0, 0.0)
    rng = np.random.default_rng(6)
    w, eps = sample_noise(env0.noise, np.zeros((100, 2)), rng)
    assert not w.any() and not eps.any()

    base = msd_env.noise.w_family
    doubled = with_noise_scales(msd_env, 2.0 * base.scale, None)
    scaled = doubled.noise.w_family
    assert scaled.scale == pytest.approx(2.0 * base.scale)
    assert scaled.trunc_radius == pytest.approx(2.0 * base.trunc_radius)
    # eps side untouched
    assert doubled.noise.eps_family.scale == pytest.approx(msd_env.noise.eps_family.scale)
