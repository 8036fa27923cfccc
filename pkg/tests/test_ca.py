"""Lattice engine tests: penalty oracle, stance rules, movement and fire."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wargrid import ca
from wargrid.grid import ParameterError

import reference


def make_params(**kw):
    base = dict(
        squad_size=4, w1=0.0, w2=0.0, w3=0.0, w4=0.0, w5=0.0, w6=0.0,
        sensor_range=3, fire_range=2, threshold_range=1, move_range=1,
        prob_hit=0.0, max_targets=None, defence=1,
        cluster_threshold=0, advance_threshold=0, combat_threshold=0,
        start_centre=(5, 5), start_size=(5, 5), flag=(0, 0),
    )
    base.update(kw)
    return ca.CaForceParams(**base)


def make_state(positions, n_red, health=None, nx=16, ny=16, seed=0, defence=None):
    pos = np.array(positions, dtype=np.int64)
    n = len(pos)
    if health is None:
        health = np.full(n, ca.ALIVE, dtype=np.int64)
    else:
        health = np.array(health, dtype=np.int64)
    occupancy = np.full((nx, ny), -1, dtype=np.int64)
    for k in range(n):
        if health[k] > ca.KILLED:
            assert occupancy[pos[k, 0], pos[k, 1]] == -1
            occupancy[pos[k, 0], pos[k, 1]] = k
    state = ca.CaState(pos, health, n_red, occupancy, np.random.default_rng(seed))
    if defence is not None:
        state.defence_left = np.array(defence, dtype=np.int64)
    return state


def test_force_params_validation():
    with pytest.raises(ParameterError):
        make_params(squad_size=0)
    with pytest.raises(ParameterError):
        make_params(prob_hit=1.5)
    with pytest.raises(ParameterError):
        make_params(sensor_range=-1)
    with pytest.raises(ParameterError):
        make_params(defence=0)
    with pytest.raises(ParameterError):
        make_params(max_targets=-2)
    with pytest.raises(ParameterError):
        make_params(start_size=(0, 5))
    make_params(max_targets=None)  # all-targets spelling is fine


def test_placement_fills_boxes_without_overlap():
    red = make_params(squad_size=20, start_centre=(5, 5), start_size=(7, 7))
    blue = make_params(squad_size=15, start_centre=(12, 12), start_size=(7, 7))
    state = ca.place_forces(red, blue, 20, 20, np.random.default_rng(7))
    assert state.n_agents == 35 and state.n_red == 20
    assert (state.health == ca.ALIVE).all()
    assert state.consistent()
    for k in range(20):
        assert 2 <= state.pos[k, 0] <= 8 and 2 <= state.pos[k, 1] <= 8
    for k in range(20, 35):
        assert 9 <= state.pos[k, 0] <= 15 and 9 <= state.pos[k, 1] <= 15
    cells = {tuple(p) for p in state.pos}
    assert len(cells) == 35


def test_placement_rejects_overfull_box():
    red = make_params(squad_size=30, start_size=(5, 5))
    blue = make_params(squad_size=4, start_centre=(12, 12))
    with pytest.raises(ParameterError):
        ca.place_forces(red, blue, 16, 16, np.random.default_rng(0))


def test_agent_view_and_counts():
    state = make_state([(1, 1), (2, 2), (3, 3)], n_red=2, health=[2, 1, 0])
    assert state.agent(0) == ca.Agent("red", (1, 1), "alive")
    assert state.agent(1) == ca.Agent("red", (2, 2), "injured")
    assert state.agent(2) == ca.Agent("blue", (3, 3), "killed")
    assert state.counts(red=True) == (1, 1)
    assert state.counts(red=False) == (0, 0)


def oracle_params(p_own, p_enemy):
    return {
        "sensor_range": p_own.sensor_range,
        "enemy_sensor_range": p_enemy.sensor_range,
        "own_flag": p_own.flag,
        "enemy_flag": p_enemy.flag,
    }


def test_penalty_hand_value():
    # mover (5,5), one alive enemy at (7,5); candidate one step toward it
    state = make_state([(5, 5), (7, 5)], n_red=1)
    own = make_params(sensor_range=3, flag=(0, 5))
    other = make_params(sensor_range=4, flag=(10, 5))
    w = (0.0, 10.0, 0.0, 0.0, 0.0, 2.0)
    got = ca.penalty(state, 0, (6, 5), w, own, other)
    want = 10.0 / (math.sqrt(2) * 4 * 1) * 1.0 + 2.0 * (4.0 / 5.0)
    assert got == pytest.approx(want, rel=1e-14)


def test_penalty_skips_killed_and_out_of_range():
    state = make_state(
        [(5, 5), (6, 5), (6, 6), (12, 5)], n_red=1, health=[2, 2, 0, 2]
    )
    own = make_params(sensor_range=3)
    other = make_params(sensor_range=3)
    # killed agent at (6,6) and far agent at (12,5) contribute nothing
    w = (0.0, 1.0, 0.0, 1.0, 0.0, 0.0)
    got = ca.penalty(state, 0, (5, 5), w, own, other)
    want = 1.0 / (math.sqrt(2) * 3 * 1) * 1.0
    assert got == pytest.approx(want, rel=1e-14)


def test_penalty_on_flag_stay_or_leave():
    own = make_params(flag=(4, 4))
    other = make_params(flag=(5, 5))
    state = make_state([(5, 5)], n_red=1)
    w = (0, 0, 0, 0, 0.0, 3.0)
    assert ca.penalty(state, 0, (5, 5), w, own, other) == 0.0
    assert ca.penalty(state, 0, (5, 6), w, own, other) == math.inf


def test_penalty_matches_reference_randomized():
    rng = np.random.default_rng(2024)
    for _ in range(300):
        n_red = int(rng.integers(1, 8))
        n_blue = int(rng.integers(1, 8))
        n = n_red + n_blue
        cells = rng.choice(16 * 16, size=n, replace=False)
        pos = np.stack([cells // 16, cells % 16], axis=1)
        health = rng.choice([2, 2, 2, 1, 1, 0], size=n)
        movers = np.flatnonzero(health > 0)
        if not movers.size:
            continue
        k = int(rng.choice(movers))
        own = make_params(
            sensor_range=int(rng.integers(1, 6)),
            flag=(int(rng.integers(16)), int(rng.integers(16))),
        )
        other = make_params(
            sensor_range=int(rng.integers(1, 6)),
            flag=(int(rng.integers(16)), int(rng.integers(16))),
        )
        weights = tuple(
            0.0 if rng.random() < 0.2 else float(rng.uniform(-100, 100))
            for _ in range(6)
        )
        cand = tuple(np.clip(pos[k] + rng.integers(-2, 3, size=2), 0, 15))
        state = make_state(pos, n_red, health=health)
        got = ca.penalty(state, k, cand, weights, own, other)
        want = reference.penalty_loops(
            k, cand, pos, health, n_red, weights, oracle_params(own, other)
        )
        if math.isinf(want):
            assert got == want
        else:
            assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_effective_weights_combat_flip():
    # mover with one friend in the threshold square against three sensed
    # enemies: balance 1 - 3 = -2 under a threshold of 1 flips the enemy
    # weights; a lone distant enemy leaves them alone
    state = make_state(
        [(5, 5), (6, 5), (8, 5), (8, 6), (8, 4)], n_red=2, health=[2, 2, 2, 2, 2]
    )
    p = make_params(w2=50.0, w4=30.0, combat_threshold=1, sensor_range=4,
                    threshold_range=1)
    w, target = ca.effective_weights(state, 0, p)
    assert target is None
    assert w[1] == -50.0 and w[3] == -30.0

    # two close friends against one enemy: balance 2 - 1 meets the threshold
    state2 = make_state([(5, 5), (6, 5), (5, 6), (8, 5)], n_red=3)
    w2, _ = ca.effective_weights(state2, 0, p)
    assert w2[1] == 50.0 and w2[3] == 30.0


def test_effective_weights_combat_disabled_by_zero():
    state = make_state([(5, 5), (8, 5), (8, 6), (8, 4)], n_red=1)
    p = make_params(w2=50.0, combat_threshold=0, sensor_range=4)
    w, _ = ca.effective_weights(state, 0, p)
    assert w[1] == 50.0


def test_effective_weights_advance_flip():
    state = make_state([(5, 5), (12, 12)], n_red=2)
    p = make_params(w6=7.0, advance_threshold=2, threshold_range=2)
    w, _ = ca.effective_weights(state, 0, p)
    assert w[5] == -7.0
    # three friends packed around the mover clear the threshold
    state2 = make_state([(5, 5), (5, 6), (6, 5), (6, 6)], n_red=4)
    w2, _ = ca.effective_weights(state2, 0, p)
    assert w2[5] == 7.0


def test_effective_weights_cluster_zeroes_when_grouped():
    state = make_state([(5, 5), (5, 6), (6, 5)], n_red=3)
    p = make_params(w1=10.0, w3=20.0, cluster_threshold=2, threshold_range=1)
    w, target = ca.effective_weights(state, 0, p)
    assert w[0] == 0.0 and w[2] == 0.0 and target is None


def test_effective_weights_cluster_forces_toward_crowd():
    # mover at (5,5); lone friend at (7,5); pair at (3,5)-(3,6) is denser
    state = make_state([(5, 5), (7, 5), (3, 5), (3, 6)], n_red=4)
    p = make_params(w1=10.0, cluster_threshold=5, sensor_range=4, threshold_range=1)
    w, target = ca.effective_weights(state, 0, p)
    assert target in ((3, 5), (3, 6))
    # forced moves steer by distance to the target, weights untouched
    assert w[0] == 10.0


def test_candidate_cells_own_plus_free():
    state = make_state([(5, 5), (5, 6), (6, 6)], n_red=3)
    cand = {tuple(c) for c in ca.candidate_cells(state, 0, 1)}
    want = {(4, 4), (4, 5), (4, 6), (5, 4), (5, 5), (6, 4), (6, 5)}
    assert cand == want


def test_candidate_cells_clipped_at_walls():
    state = make_state([(0, 0)], n_red=1)
    cand = {tuple(c) for c in ca.candidate_cells(state, 0, 1)}
    assert cand == {(0, 0), (0, 1), (1, 0), (1, 1)}


def test_full_lattice_cannot_move():
    positions = [(i, j) for i in range(2) for j in range(2)]
    state = make_state(positions, n_red=4, nx=2, ny=2)
    p = make_params(w6=5.0, flag=(1, 1))
    before = state.pos.copy()
    ca.move_phase(state, p, p)
    assert (state.pos == before).all()
    assert state.consistent()


def test_zero_weights_tie_break_is_uniform():
    # an unconstrained agent with an all-zero penalty sees nine exact ties
    counts = np.zeros((3, 3), dtype=int)
    p = make_params()
    for trial in range(2000):
        state = make_state([(8, 8)], n_red=1, seed=trial)
        ca.move_phase(state, p, p)
        dx, dy = state.pos[0] - 8
        counts[dx + 1, dy + 1] += 1
    assert counts.sum() == 2000
    # expected 222 per cell; 3 sigma of Binomial(2000, 1/9) is about 42
    assert (np.abs(counts - 2000 / 9) < 60).all()


def test_goal_weight_walks_agent_onto_flag():
    p_red = make_params(prob_hit=0.0)
    p_blue = make_params(flag=(14, 2), prob_hit=0.0)
    state = make_state([(2, 11)], n_red=1)  # red seeks the blue flag
    dist = [math.hypot(2 - 14, 11 - 2)]
    p_red = ca.CaForceParams(**{**p_red.__dict__, "w6": 4.0})
    for _ in range(16):
        ca.ca_step(state, p_red, p_blue)
        dist.append(math.hypot(*(state.pos[0] - (14, 2))))
    assert tuple(state.pos[0]) == (14, 2)
    until = dist.index(0.0)
    assert all(b < a for a, b in zip(dist[:until], dist[1 : until + 1]))


def test_move_choice_minimises_reference_penalty():
    rng = np.random.default_rng(99)
    for trial in range(120):
        n_red = int(rng.integers(1, 6))
        n_blue = int(rng.integers(1, 6))
        n = n_red + n_blue
        cells = rng.choice(14 * 14, size=n, replace=False)
        pos = np.stack([1 + cells // 14, 1 + cells % 14], axis=1)
        health = rng.choice([2, 2, 2, 1, 1, 0], size=n)
        own = make_params(
            w1=float(rng.uniform(-20, 20)), w2=float(rng.uniform(-50, 50)),
            w3=float(rng.uniform(-20, 20)), w4=float(rng.uniform(-50, 50)),
            w5=float(rng.uniform(-5, 5)), w6=float(rng.uniform(-10, 10)),
            sensor_range=int(rng.integers(2, 5)),
            flag=(int(rng.integers(16)), int(rng.integers(16))),
        )
        other = make_params(
            sensor_range=int(rng.integers(2, 5)),
            flag=(int(rng.integers(16)), int(rng.integers(16))),
        )
        state = make_state(pos, n_red, health=health, seed=trial)
        movers = np.flatnonzero(health > 0)
        k = int(rng.choice(movers))
        p_own, p_enemy = (own, other) if k < n_red else (other, own)
        cand = [tuple(c) for c in ca.candidate_cells(state, k, p_own.move_range)]
        weights, target = ca.effective_weights(state, k, p_own)
        if target is not None:
            scores = [math.hypot(c[0] - target[0], c[1] - target[1]) for c in cand]
        else:
            scores = [
                reference.penalty_loops(
                    k, c, pos, health, n_red, weights, oracle_params(p_own, p_enemy)
                )
                for c in cand
            ]
        living = state.health > ca.KILLED
        alive = state.health == ca.ALIVE
        friend, enemy = ca._side_masks(state, k)
        ca._move_one(state, k, p_own, p_enemy, friend, enemy, living, alive,
                     state.occupancy.reshape(-1))
        chosen = scores[cand.index(tuple(state.pos[k]))]
        assert chosen <= min(scores) + 1e-9
        assert state.consistent()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_move_phase_preserves_roster_and_consistency(seed):
    rng = np.random.default_rng(seed)
    n_red = int(rng.integers(1, 8))
    n_blue = int(rng.integers(1, 8))
    n = n_red + n_blue
    cells = rng.choice(12 * 12, size=n, replace=False)
    pos = np.stack([cells // 12, cells % 12], axis=1)
    health = rng.choice([2, 2, 1, 0], size=n)
    state = make_state(pos, n_red, health=health, nx=12, ny=12, seed=seed)
    p = make_params(w2=30.0, w6=2.0, flag=(11, 11), move_range=1)
    before_pos = state.pos.copy()
    before_health = state.health.copy()
    ca.move_phase(state, p, p)
    assert (state.health == before_health).all()  # movement never wounds
    step = np.abs(state.pos - before_pos).max(axis=1)
    assert (step[state.health > ca.KILLED] <= 1).all()
    assert (step[state.health == ca.KILLED] == 0).all()
    assert state.consistent()


def test_fire_needs_range_and_hits_decrement_defence():
    state = make_state([(5, 5), (5, 9)], n_red=1, defence=[3, 3])
    p = make_params(prob_hit=1.0, fire_range=2)
    ca.fire_phase(state, p, p)
    assert (state.defence_left == 3).all()  # out of range, nothing happens
    state2 = make_state([(5, 5), (5, 7)], n_red=1, defence=[3, 3])
    ca.fire_phase(state2, p, p)
    assert tuple(state2.defence_left) == (2, 2)
    assert (state2.health == ca.ALIVE).all()


def test_fire_degrade_and_defence_reset():
    p = make_params(prob_hit=1.0, fire_range=2, defence=2)
    state = make_state([(5, 5), (5, 6)], n_red=1, defence=[2, 2])
    ca.fire_phase(state, p, p)
    assert (state.defence_left == 1).all()
    ca.fire_phase(state, p, p)
    # second hit each: both degrade to injured and defence resets
    assert (state.health == ca.INJURED).all()
    assert (state.defence_left == 2).all()


def test_fire_is_simultaneous_mutual_kill():
    p = make_params(prob_hit=1.0, fire_range=1)
    state = make_state([(5, 5), (5, 6)], n_red=1, health=[1, 1])
    ca.fire_phase(state, p, p)
    assert (state.health == ca.KILLED).all()
    assert (state.occupancy == -1).all()


def test_killed_fire_no_more():
    p = make_params(prob_hit=1.0, fire_range=1)
    state = make_state([(5, 5), (5, 6)], n_red=1, health=[2, 0])
    before = state.defence_left.copy()
    ca.fire_phase(state, p, p)
    assert (state.defence_left == before).all()  # no living target, no shots


def test_injured_keep_full_capability():
    p = make_params(prob_hit=1.0, fire_range=1, w6=3.0, flag=(9, 5))
    state = make_state([(5, 5), (7, 7)], n_red=1, health=[1, 2])
    ca.fire_phase(state, p, p)  # out of range, no change
    ca.move_phase(state, p, p)
    assert tuple(state.pos[0]) != (5, 5)  # injured red still walks to the flag


def test_max_targets_caps_each_shooter():
    # one red against four adjacent blues, certain hits, two targets a phase
    p_red = make_params(prob_hit=1.0, fire_range=1, max_targets=2)
    p_blue = make_params(prob_hit=0.0)
    state = make_state(
        [(5, 5), (4, 5), (6, 5), (5, 4), (5, 6)], n_red=1, defence=[9, 9, 9, 9, 9]
    )
    ca.fire_phase(state, p_red, p_blue)
    spent = 9 * 5 - int(state.defence_left.sum())
    assert spent == 2
    state.defence_left[:] = 9
    p_red_all = make_params(prob_hit=1.0, fire_range=1, max_targets=None)
    ca.fire_phase(state, p_red_all, p_blue)
    assert 9 * 5 - int(state.defence_left.sum()) == 4


def test_point_blank_hits_match_binomial():
    # two lines of five at p=0.3; the corner shooters only reach four
    # enemies within Chebyshev range 3, so each phase fires 2*(4+5+5+5+4)
    # shots; huge defence keeps everyone alive so the state can be reused
    reds = [(5, y) for y in range(5, 10)]
    blues = [(6, y) for y in range(5, 10)]
    p = make_params(prob_hit=0.3, fire_range=3, max_targets=None)
    state = make_state(reds + blues, n_red=5, defence=[10 ** 9] * 10, seed=11)
    trials = 4000
    for _ in range(trials):
        ca.fire_phase(state, p, p)
    total = 10 ** 9 * 10 - int(state.defence_left.sum())
    n_shots = 46 * trials
    mean = n_shots * 0.3
    sigma = math.sqrt(n_shots * 0.3 * 0.7)
    assert abs(total - mean) < 3 * sigma


def test_run_is_deterministic_and_seed_sensitive():
    red = make_params(squad_size=12, w2=40.0, w6=4.0, prob_hit=0.05,
                      fire_range=2, start_centre=(4, 8), flag=(0, 8))
    blue = make_params(squad_size=12, w2=40.0, w6=4.0, prob_hit=0.05,
                       fire_range=2, start_centre=(11, 8), flag=(15, 8))
    a = ca.ca_run(red, blue, seed=5, n_steps=40, nx=16, ny=16, snapshot_steps=(0, 40))
    b = ca.ca_run(red, blue, seed=5, n_steps=40, nx=16, ny=16, snapshot_steps=(0, 40))
    assert (a.alive_red == b.alive_red).all() and (a.alive_blue == b.alive_blue).all()
    for (sa, pa, ha), (sb, pb, hb) in zip(a.snapshots, b.snapshots):
        assert sa == sb and (pa == pb).all() and (ha == hb).all()
    c = ca.ca_run(red, blue, seed=6, n_steps=40, nx=16, ny=16, snapshot_steps=(0, 40))
    assert any(
        (pa != pc).any() for (_, pa, _h), (_, pc, _h2) in zip(a.snapshots, c.snapshots)
    )


def test_run_counts_conserve_and_never_revive():
    red = make_params(squad_size=10, w2=40.0, prob_hit=0.3, fire_range=3,
                      start_centre=(6, 8), start_size=(4, 4))
    blue = make_params(squad_size=10, w2=40.0, prob_hit=0.3, fire_range=3,
                       start_centre=(10, 8), start_size=(4, 4))
    traj = ca.ca_run(red, blue, seed=2, n_steps=60, nx=16, ny=16)
    living_r = traj.alive_red + traj.injured_red
    living_b = traj.alive_blue + traj.injured_blue
    assert (np.diff(living_r) <= 0).all() and (np.diff(living_b) <= 0).all()
    assert living_r[-1] < 10 and living_b[-1] < 10  # the brawl cost something
    assert (traj.alive_red <= 10).all() and (traj.alive_blue <= 10).all()
    assert traj.steps[0] == 0 and traj.steps[-1] == 60


def test_run_centroids_track_living():
    red = make_params(squad_size=2, start_centre=(3, 3), start_size=(2, 2), w6=5.0)
    blue = make_params(squad_size=2, start_centre=(12, 12), start_size=(2, 2), w6=5.0)
    traj = ca.ca_run(red, blue, seed=1, n_steps=3, nx=16, ny=16, snapshot_steps=(3,))
    step, pos, health = traj.snapshots[0]
    live_red = pos[:2][health[:2] > 0]
    assert traj.centroid_red[-1, 0] == pytest.approx(live_red[:, 0].mean())
    assert traj.centroid_red[-1, 1] == pytest.approx(live_red[:, 1].mean())


def test_run_validates_arguments():
    red = make_params()
    blue = make_params(start_centre=(12, 12))
    with pytest.raises(ParameterError):
        ca.ca_run(red, blue, seed=0, n_steps=-1, nx=16, ny=16)
    with pytest.raises(ParameterError):
        ca.ca_run(red, blue, seed=0, n_steps=5, nx=16, ny=16, snapshot_steps=(9,))
