import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import reference
from wargrid import grid, pde


def quiet_params(**kw):
    """Force parameters with every optional mechanism switched off."""
    base = dict(
        peak_density=8.0,
        radius=5.0,
        centre=(15.0, 15.0),
        diffusion=0.0,
        goal_velocity=(0.0, 0.0),
        attract_strength=0.0,
        repel_strength=0.0,
        aimed_fire=0.0,
        area_fire=0.0,
        fire_decay=0.0,
        switch_mode="fixed",
    )
    base.update(kw)
    return pde.PdeForceParams(**base)


def test_cone_kernel_profile():
    kern = pde.aggregation_kernel(5.0, height=15.0)
    m = kern.half_width
    assert kern.weights.shape == grid.disc_kernel(5.0).weights.shape
    assert kern.weights[m, m] == pytest.approx(15.0)
    assert kern.weights[m, m + 3] == pytest.approx(15.0 * (1 - 3 / 5))
    # offset (3,4) sits exactly on the rim, weight 0 there and beyond
    assert kern.weights[m + 3, m + 4] == 0.0
    assert kern.weights[m + 5, m + 5] == 0.0
    assert kern.weights.min() >= 0.0


def test_cone_kernel_rectangular_cells():
    kern = pde.aggregation_kernel(2.0, dx=0.5, dy=1.0, height=4.0)
    m_x, m_y = kern.weights.shape[0] // 2, kern.weights.shape[1] // 2
    # cell offset (2, 0) is physical distance 1.0 with dx = 0.5
    assert kern.weights[m_x + 2, m_y] == pytest.approx(4.0 * (1 - 1 / 2))
    assert kern.weights[m_x, m_y + 1] == pytest.approx(4.0 * (1 - 1 / 2))


def test_initial_profile_plateau_ramp_mass():
    p = quiet_params()
    fld = pde.initial_profile(100, 100, p)
    assert fld.values[15, 15] == pytest.approx(8.0)
    assert fld.values[15, 19] == pytest.approx(8.0)  # r=4 inside the plateau
    assert fld.values[15, 21] == 0.0  # r=6 beyond the ramp
    inner = fld.values[15, 20]  # r=5, halfway down the cosine ramp
    assert 0.0 < inner < 8.0
    area = np.pi * p.radius**2
    assert grid.total_mass(fld) == pytest.approx(8.0 * area, rel=0.04)


def test_force_params_validation():
    with pytest.raises(grid.ParameterError):
        quiet_params(attract_strength=1.0, attract_radius=1.0, repel_radius=2.0)
    with pytest.raises(grid.ParameterError):
        quiet_params(attack=0)
    with pytest.raises(grid.ParameterError):
        quiet_params(diffusion=-1.0)
    with pytest.raises(grid.ParameterError):
        quiet_params(switch_mode="sideways")
    with pytest.raises(grid.ParameterError):
        quiet_params(sensor_radius=0.0)
    # zero aggregation strengths lift the radius-ordering requirement
    quiet_params(attract_radius=1.0, repel_radius=2.0)


def test_state_rejects_negative_density():
    u = grid.ScalarField(np.zeros((10, 10)))
    bad = grid.ScalarField(np.full((10, 10), -0.1))
    with pytest.raises(ValueError):
        pde.PdeState(u, bad)


def test_f_diff_constant_field_zero():
    p = quiet_params(diffusion=5.0)
    fld = grid.ScalarField(np.full((20, 20), 3.7))
    assert np.max(np.abs(pde.f_diff(fld, p).values)) == 0.0


def test_f_diff_spike_matches_stencil():
    p = quiet_params(diffusion=5.0)
    vals = np.zeros((15, 15))
    vals[7, 8] = 2.0
    out = pde.f_diff(grid.ScalarField(vals), p).values
    assert out[7, 8] == pytest.approx(5.0 * -4 * 2.0)
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        assert out[7 + di, 8 + dj] == pytest.approx(5.0 * 2.0)
    assert out[0, 0] == 0.0


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(float, (12, 14), elements=st.floats(0, 5)))
def test_f_diff_conserves_mass(vals):
    p = quiet_params(diffusion=5.0)
    out = pde.f_diff(grid.ScalarField(vals), p)
    assert abs(out.values.sum()) < 1e-10


def test_f_react_zero_enemy():
    p = quiet_params(aimed_fire=2e-6, area_fire=8e-8, fire_decay=0.2)
    k = grid.firing_kernel(8e-8, 0.2)
    w = grid.ScalarField(np.random.default_rng(0).uniform(0, 4, (10, 10)))
    none = grid.ScalarField(np.zeros((10, 10)))
    assert np.max(np.abs(pde.f_react(w, none, p, k).values)) == 0.0


def test_f_react_uniform_aimed_fire():
    # d = 2e-6 with no area fire loses exactly 2e-6 * enemy everywhere.
    p = quiet_params(aimed_fire=2e-6)
    k = grid.firing_kernel(0.0, 0.0)
    w = grid.ScalarField(np.full((8, 8), 5.0))
    enemy = grid.ScalarField(np.full((8, 8), 3.0))
    out = pde.f_react(w, enemy, p, k).values
    assert np.allclose(out, -2e-6 * 3.0, atol=1e-18)


def test_f_react_matches_bruteforce():
    rng = np.random.default_rng(21)
    p = quiet_params(aimed_fire=1e-3, area_fire=1e-3, fire_decay=1.0)
    k = grid.firing_kernel(1e-3, 1.0)
    w_vals = rng.uniform(0, 2, (16, 16))
    e_vals = rng.uniform(0, 2, (16, 16))
    out = pde.f_react(
        grid.ScalarField(w_vals), grid.ScalarField(e_vals), p, k
    ).values
    conv = reference.conv_loops(e_vals, k.weights)
    expect = -(w_vals * conv + 1e-3 * e_vals)
    assert np.max(np.abs(out - expect)) < 1e-14
    assert out.max() <= 0.0


def _mass_fields(u_vals, v_vals):
    return grid.ScalarField(np.asarray(u_vals, float)), grid.ScalarField(
        np.asarray(v_vals, float)
    )


def test_combat_switch_front_branches():
    p = quiet_params(goal_velocity=(20.0, 20.0), combat_threshold=100.0)
    u_mass = np.full((5, 5), 0.0)
    u_mass[0, 0] = 250.0  # advantage 150: advance
    u_mass[0, 1] = 150.0  # advantage 50: retreat
    u_mass[0, 2] = 200.0  # advantage exactly at the threshold: retreat
    um, vm = _mass_fields(u_mass, np.full((5, 5), 100.0))
    out = pde.combat_switch_front(um, vm, p)
    assert (out.x[0, 0], out.y[0, 0]) == (20.0, 20.0)
    assert (out.x[0, 1], out.y[0, 1]) == (-20.0, -20.0)
    assert (out.x[0, 2], out.y[0, 2]) == (-20.0, -20.0)


def test_combat_switch_front_no_enemy():
    p = quiet_params(goal_velocity=(20.0, 20.0), combat_threshold=100.0)
    um, vm = _mass_fields(np.full((4, 4), 101.0), np.zeros((4, 4)))
    out = pde.combat_switch_front(um, vm, p)
    assert np.all(out.x == 20.0) and np.all(out.y == 20.0)


def test_combat_switch_pursuit_no_enemy():
    p = quiet_params(goal_velocity=(60.0, 60.0), combat_threshold=4.0)
    um, vm = _mass_fields(np.full((6, 6), 9.0), np.zeros((6, 6)))
    out = pde.combat_switch_pursuit(um, vm, p)
    assert np.all(out.x == 60.0) and np.all(out.y == 60.0)


def test_combat_switch_pursuit_ramp_hand_values():
    # Enemy mass ramps along x, so the unit gradient is (1, 0) everywhere
    # and the pursuit speed equals the local enemy mass.
    p = quiet_params(goal_velocity=(60.0, 60.0), combat_threshold=4.0, attack=-1)
    v_mass = np.tile(np.arange(5.0)[:, None] * 2.0, (1, 5))
    u_mass = np.full((5, 5), 0.0)
    u_mass[3, :] = 6.0 + 4.0  # advantage exactly at threshold: pursue
    um, vm = _mass_fields(u_mass, v_mass)
    out = pde.combat_switch_pursuit(um, vm, p)
    assert out.x[3, 2] == pytest.approx(60.0 + 6.0)  # s=+1, v_mass=6
    assert out.x[1, 2] == pytest.approx(60.0 - 2.0)  # s=-1, v_mass=2
    assert np.allclose(out.y, 60.0)


def test_combat_switch_pursuit_sign_mirror():
    rng = np.random.default_rng(3)
    v_vals = rng.uniform(0, 9, (7, 7))
    um_hi, vm = _mass_fields(np.full((7, 7), 1e9), v_vals)
    um_lo, _ = _mass_fields(np.zeros((7, 7)), v_vals)
    p_att = quiet_params(goal_velocity=(5.0, -3.0), combat_threshold=10.0, attack=-1)
    pursue = pde.combat_switch_pursuit(um_hi, vm, p_att)
    flee = pde.combat_switch_pursuit(um_lo, vm, p_att)
    assert np.allclose(pursue.x - 5.0, -(flee.x - 5.0), atol=1e-12)
    assert np.allclose(pursue.y + 3.0, -(flee.y + 3.0), atol=1e-12)


def test_f_vel_zero_field():
    p = quiet_params(goal_velocity=(20.0, 20.0))
    w = grid.ScalarField(np.zeros((10, 10)))
    goal = pde.VectorField(np.full((10, 10), 20.0), np.full((10, 10), 20.0))
    ka = pde.aggregation_kernel(5.0)
    kr = pde.aggregation_kernel(1.2)
    assert np.max(np.abs(pde.f_vel(w, goal, p, ka, kr).values)) == 0.0


def test_f_vel_spike_hand_worked_step():
    # Single spike, constant rightward goal: the only nonzero flux sits on
    # the face ahead of the spike, face velocity (0+4)/2 * 2 = 4 against
    # donor value 4, so the spike loses 16 and the downwind cell gains 16.
    p = quiet_params(goal_velocity=(2.0, 0.0))
    vals = np.zeros((12, 12))
    vals[5, 5] = 4.0
    goal = pde.VectorField(np.full((12, 12), 2.0), np.zeros((12, 12)))
    ka = pde.aggregation_kernel(5.0)
    kr = pde.aggregation_kernel(1.2)
    out = pde.f_vel(grid.ScalarField(vals), goal, p, ka, kr).values
    expect = np.zeros((12, 12))
    expect[5, 5] = -16.0
    expect[6, 5] = 16.0
    assert np.allclose(out, expect, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(hnp.arrays(float, (11, 13), elements=st.floats(0, 6)), st.integers(0, 2**31 - 1))
def test_f_vel_conserves_mass(w_vals, seed):
    rng = np.random.default_rng(seed)
    p = quiet_params(
        goal_velocity=(20.0, -10.0),
        attract_strength=5.0,
        repel_strength=0.5,
        attract_radius=3.0,
        repel_radius=1.2,
    )
    goal = pde.VectorField(
        rng.uniform(-30, 30, (11, 13)), rng.uniform(-30, 30, (11, 13))
    )
    ka = pde.aggregation_kernel(3.0, height=pde.ATTRACT_KERNEL_HEIGHT)
    kr = pde.aggregation_kernel(1.2, height=pde.REPEL_KERNEL_HEIGHT)
    out = pde.f_vel(grid.ScalarField(w_vals), goal, p, ka, kr)
    assert abs(out.values.sum()) < 1e-10


def test_rhs_zero_states():
    p_u = quiet_params()
    p_v = quiet_params(centre=(35.0, 35.0), goal_velocity=(-20.0, -20.0))
    state = pde.PdeState(
        grid.ScalarField(np.zeros((40, 40))), grid.ScalarField(np.zeros((40, 40)))
    )
    du, dv = pde.rhs(state, p_u, p_v)
    assert np.max(np.abs(du.values)) == 0.0
    assert np.max(np.abs(dv.values)) == 0.0


def classic_pair(**overrides):
    common = dict(
        peak_density=5.0,
        radius=5.0,
        inner_threshold=0.5,
        diffusion=5.0,
        attract_strength=5.0,
        repel_strength=0.5,
        attract_radius=5.0,
        repel_radius=2.65,
        sensor_radius=3.0,
        combat_threshold=100.0,
        aimed_fire=2e-6,
        area_fire=8e-8,
        fire_decay=0.2,
        switch_mode="front",
    )
    common.update(overrides)
    p_u = pde.PdeForceParams(centre=(15.0, 15.0), goal_velocity=(20.0, 20.0), **common)
    p_v = pde.PdeForceParams(
        centre=(35.0, 35.0), goal_velocity=(-20.0, -20.0), **common
    )
    return p_u, p_v


def test_rhs_conserves_mass_without_fire():
    p_u, p_v = classic_pair(aimed_fire=0.0, area_fire=0.0, fire_decay=0.0)
    state = pde.initial_state(100, 100, p_u, p_v)
    du, dv = pde.rhs(state, p_u, p_v)
    assert abs(du.values.sum()) < 1e-10
    assert abs(dv.values.sum()) < 1e-10


def test_rhs_point_reflection_antisymmetry():
    # A point-reflected twin with negated goal velocity must evolve as the
    # point reflection of the original, bit-for-bit up to round-off.
    p_u = quiet_params(
        centre=(12.0, 9.0),
        goal_velocity=(14.0, 6.0),
        diffusion=5.0,
        attract_strength=5.0,
        repel_strength=0.5,
        attract_radius=5.0,
        repel_radius=2.65,
        aimed_fire=2e-6,
        area_fire=8e-8,
        fire_decay=0.2,
        switch_mode="pursuit",
        combat_threshold=7.0,
    )
    kw = {k: getattr(p_u, k) for k in (
        "peak_density", "radius", "inner_threshold", "diffusion",
        "attract_strength", "repel_strength", "attract_radius", "repel_radius",
        "sensor_radius", "combat_threshold", "attack", "aimed_fire",
        "area_fire", "fire_decay", "switch_mode",
    )}
    nx = ny = 36
    p_v = pde.PdeForceParams(
        centre=(nx - 1 - 12.0, ny - 1 - 9.0),
        goal_velocity=(-14.0, -6.0),
        **kw,
    )
    u0 = pde.initial_profile(nx, ny, p_u)
    v0 = u0.like(grid.point_reflect(u0.values))
    du, dv = pde.rhs(pde.PdeState(u0, v0), p_u, p_v)
    # not bitwise: the convolution path sums in a different order for the
    # reflected field, and the unit-gradient division amplifies that noise
    assert np.max(np.abs(dv.values - grid.point_reflect(du.values))) < 1e-8


def test_loss_rates_match_react_integral():
    rng = np.random.default_rng(5)
    p_u, p_v = classic_pair()
    rhs = pde.PdeRhs(p_u, p_v)
    u_vals = rng.uniform(0.5, 3.0, (100, 100))
    v_vals = rng.uniform(0.5, 3.0, (100, 100))
    rate_u, rate_v = rhs.loss_rates(u_vals, v_vals)
    full_u = -pde.f_react(
        grid.ScalarField(u_vals), grid.ScalarField(v_vals), p_u, rhs.fire_at_u
    ).values.sum()
    assert rate_u == pytest.approx(full_u)
    assert rate_u > 0 and rate_v > 0


def test_loss_rates_skip_empty_cells():
    p_u, p_v = classic_pair()
    rhs = pde.PdeRhs(p_u, p_v)
    u_vals = np.zeros((100, 100))
    v_vals = np.full((100, 100), 2.0)
    # no u anywhere: aimed fire has nothing to attrit
    assert rhs.loss_rates(u_vals, v_vals)[0] == 0.0
