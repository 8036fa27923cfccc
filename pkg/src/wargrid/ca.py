"""Stochastic lattice combat engine.

Two forces of individual agents live on an integer grid, at most one living
agent per cell.  Each step has two phases: every agent (in a freshly
shuffled order) moves to the cell in its movement square that minimises a
weighted penalty score, then all agents fire simultaneously at enemies in
range, judged against the health states from before the phase.

The penalty of a candidate cell sums six terms: mean distance to sensed
alive/injured friends and enemies (four weights, each normalised by
sqrt(2) * sensor range * group size) and the two flag-distance ratios
d_new/d_old.  Threshold-triggered stance rules rewrite the weights before
each move: advance flips the enemy-flag pull when too few friends are
close, cluster zeroes the friend terms once enough friends are close (and
forces a move toward the thickest nearby friendly crowd until then), and
combat flips the enemy-distance weights into retreat when the local troop
balance falls under the combat threshold.

All randomness (move tie-breaks, target selection, hit rolls, placement)
comes from one seeded generator per run, so a (parameters, seed) pair
reproduces a trajectory bit for bit.
"""

from dataclasses import dataclass, field

import numpy as np

from .grid import ParameterError

SQ2 = np.sqrt(2.0)

ALIVE = 2
INJURED = 1
KILLED = 0
_HEALTH_NAMES = {ALIVE: "alive", INJURED: "injured", KILLED: "killed"}


@dataclass
class CaForceParams:
    """One force's rule set: penalty weights, ranges, fire and placement."""

    squad_size: int = 225
    w1: float = 0.0  # alive friendly
    w2: float = 50.0  # alive enemy
    w3: float = 0.0  # injured friendly
    w4: float = 50.0  # injured enemy
    w5: float = 0.0  # own flag
    w6: float = 5.0  # enemy flag
    sensor_range: int = 5
    fire_range: int = 3
    threshold_range: int = 2
    move_range: int = 1
    prob_hit: float = 2e-3
    max_targets: int = 5  # None means every enemy in range
    defence: int = 1
    cluster_threshold: int = 0  # 0 disables, like the other thresholds
    advance_threshold: int = 0
    combat_threshold: int = 0
    start_centre: tuple = (15, 50)
    start_size: tuple = (25, 25)
    flag: tuple = (1, 50)

    def __post_init__(self):
        if self.squad_size < 1:
            raise ParameterError("squad_size must be at least 1")
        for name in ("sensor_range", "fire_range", "threshold_range", "move_range"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be nonnegative")
        if not 0.0 <= self.prob_hit <= 1.0:
            raise ParameterError("prob_hit must lie in [0, 1]")
        if self.max_targets is not None and self.max_targets < 0:
            raise ParameterError("max_targets must be nonnegative or None for all")
        if self.defence < 1:
            raise ParameterError("defence must be at least 1")
        if self.cluster_threshold < 0 or self.advance_threshold < 0:
            raise ParameterError("cluster and advance thresholds must be nonnegative")
        if len(self.start_size) != 2 or min(self.start_size) < 1:
            raise ParameterError("start_size must be two positive extents")
        self.start_centre = tuple(int(c) for c in self.start_centre)
        self.start_size = tuple(int(c) for c in self.start_size)
        self.flag = tuple(int(c) for c in self.flag)


@dataclass
class Agent:
    """Read-only view of one agent, for reporting and tests."""

    force: str
    pos: tuple
    health: str


@dataclass
class CaState:
    """Full engine state: agent arrays, occupancy lattice and rng stream.

    Agents 0..n_red-1 are red, the rest blue.  ``occupancy[x, y]`` holds the
    index of the living agent on that cell or -1.  Killed agents keep their
    last position in ``pos`` but are removed from the lattice.
    """

    pos: np.ndarray
    health: np.ndarray
    n_red: int
    occupancy: np.ndarray
    rng: np.random.Generator
    defence_left: np.ndarray = None
    t: int = 0

    def __post_init__(self):
        if self.defence_left is None:
            self.defence_left = np.ones(len(self.pos), dtype=np.int64)

    @property
    def n_agents(self):
        return len(self.pos)

    def is_red(self, k):
        return k < self.n_red

    def agent(self, k) -> Agent:
        return Agent(
            "red" if k < self.n_red else "blue",
            (int(self.pos[k, 0]), int(self.pos[k, 1])),
            _HEALTH_NAMES[int(self.health[k])],
        )

    def counts(self, red):
        """(alive, injured) for one force."""
        h = self.health[: self.n_red] if red else self.health[self.n_red :]
        return int((h == ALIVE).sum()), int((h == INJURED).sum())

    def consistent(self) -> bool:
        """Occupancy matches the roster; at most one living agent per cell."""
        occ = np.full(self.occupancy.shape, -1, dtype=np.int64)
        for k in range(self.n_agents):
            if self.health[k] == KILLED:
                continue
            x, y = self.pos[k]
            if occ[x, y] != -1:
                return False
            occ[x, y] = k
        return bool(np.array_equal(occ, self.occupancy))


def _box_bounds(centre, size, n_cells):
    half = size // 2
    lo = max(centre - half, 0)
    hi = min(lo + size - 1, n_cells - 1)
    return lo, hi


def place_forces(p_red: CaForceParams, p_blue: CaForceParams, nx, ny, rng) -> CaState:
    """Drop each squad uniformly onto free cells of its start box, red first."""
    n = p_red.squad_size + p_blue.squad_size
    pos = np.zeros((n, 2), dtype=np.int64)
    occupancy = np.full((nx, ny), -1, dtype=np.int64)
    k = 0
    for p in (p_red, p_blue):
        x0, x1 = _box_bounds(p.start_centre[0], p.start_size[0], nx)
        y0, y1 = _box_bounds(p.start_centre[1], p.start_size[1], ny)
        if (x1 - x0 + 1) * (y1 - y0 + 1) < p.squad_size:
            raise ParameterError("start box too small for the squad")
        for _ in range(p.squad_size):
            while True:
                x = int(rng.integers(x0, x1 + 1))
                y = int(rng.integers(y0, y1 + 1))
                if occupancy[x, y] < 0:
                    break
            pos[k] = (x, y)
            occupancy[x, y] = k
            k += 1
    health = np.full(n, ALIVE, dtype=np.int64)
    defence = np.empty(n, dtype=np.int64)
    defence[: p_red.squad_size] = p_red.defence
    defence[p_red.squad_size :] = p_blue.defence
    return CaState(pos, health, p_red.squad_size, occupancy, rng, defence)


def _chebyshev_to(state, k):
    """Chebyshev distance from agent k to every agent; self mapped out of range."""
    d = np.abs(state.pos - state.pos[k]).max(axis=1)
    d[k] = np.iinfo(np.int64).max
    return d


def penalty(state: CaState, k, candidate, weights, p_own: CaForceParams, p_enemy: CaForceParams) -> float:
    """Penalty of one candidate cell for agent k under the given weights.

    Sensing is a Chebyshev square of the mover's sensor range around its
    current cell; distances to the sensed agents are Euclidean from the
    candidate.  Group terms with nobody sensed contribute nothing; a flag
    term from a cell already on the flag scores 0 for staying and infinity
    for any move away.
    """
    cheb = _chebyshev_to(state, k)
    sensed = (state.health > KILLED) & (cheb <= p_own.sensor_range)
    idx = np.flatnonzero(sensed)
    cx, cy = candidate
    total = 0.0
    if idx.size:
        friend = (idx < state.n_red) == (k < state.n_red)
        alive = state.health[idx] == ALIVE
        dists = np.hypot(state.pos[idx, 0] - cx, state.pos[idx, 1] - cy)
        for w, scale, mask in (
            (weights[0], p_own.sensor_range, friend & alive),
            (weights[1], p_enemy.sensor_range, ~friend & alive),
            (weights[2], p_own.sensor_range, friend & ~alive),
            (weights[3], p_enemy.sensor_range, ~friend & ~alive),
        ):
            n = int(mask.sum())
            if n and w:
                total += w / (SQ2 * scale * n) * float(dists[mask].sum())
    px, py = state.pos[k]
    for w, flag in ((weights[4], p_own.flag), (weights[5], p_enemy.flag)):
        if not w:
            continue
        d_old = np.hypot(px - flag[0], py - flag[1])
        d_new = np.hypot(cx - flag[0], cy - flag[1])
        if d_old > 0:
            total += w * d_new / d_old
        elif d_new > 0:
            total += w * np.inf
    return float(total)


def _side_masks(state, k):
    living = state.health > KILLED
    friend = np.zeros(state.n_agents, dtype=bool)
    if k < state.n_red:
        friend[: state.n_red] = True
    else:
        friend[state.n_red :] = True
    friend &= living
    return friend, living & ~friend


def _stance(state, k, p_own, cheb, in_rs, friend, enemy, counts=None):
    rs, rt = p_own.sensor_range, p_own.threshold_range
    if counts is not None:
        n_friend_rt, n_enemy_rs = counts
    else:
        n_friend_rt = int(np.count_nonzero(friend & (cheb <= rt)))
        n_enemy_rs = int(np.count_nonzero(enemy & in_rs))
    w = [p_own.w1, p_own.w2, p_own.w3, p_own.w4, p_own.w5, p_own.w6]
    target = None

    if p_own.advance_threshold and n_friend_rt < p_own.advance_threshold:
        w[5] = -w[5]

    if p_own.cluster_threshold:
        if n_friend_rt >= p_own.cluster_threshold:
            w[0] = 0.0
            w[2] = 0.0
        else:
            near = np.flatnonzero(friend & in_rs)
            if near.size:
                # crowding of a sensed friend: living friendlies (the mover
                # included) within its threshold square, not counting itself.
                # Only agents within rs + rt of the mover can contribute.
                local = friend & (cheb <= rs + rt)
                local[k] = True
                lpos = state.pos[local]
                d = np.abs(state.pos[near][:, None, :] - lpos[None, :, :]).max(axis=2)
                crowd = (d <= rt).sum(axis=1) - 1
                best = near[crowd == crowd.max()]
                if best.size > 1:  # nearest of the most crowded, then lowest index
                    best = best[cheb[best] == cheb[best].min()]
                target = (int(state.pos[best[0], 0]), int(state.pos[best[0], 1]))

    if p_own.combat_threshold:
        if n_friend_rt - n_enemy_rs < p_own.combat_threshold:
            w[1] = -w[1]
            w[3] = -w[3]
    return w, target


def effective_weights(state: CaState, k, p_own: CaForceParams):
    """Stance-adjusted weights for agent k, plus a forced-move target.

    Returns (w1..w6, target): target is None normally, or the cell of the
    most crowded sensed friend when the cluster rule is herding this agent.
    Counts exclude the agent itself and ignore the killed.
    """
    cheb = _chebyshev_to(state, k)
    friend, enemy = _side_masks(state, k)
    w, target = _stance(state, k, p_own, cheb, cheb <= p_own.sensor_range, friend, enemy)
    return tuple(w), target


_OFFSET_CACHE = {}


def _square_offsets(move_range, ny):
    key = (move_range, ny)
    got = _OFFSET_CACHE.get(key)
    if got is None:
        span = np.arange(-move_range, move_range + 1)
        side = 2 * move_range + 1
        ox = np.repeat(span, side)
        oy = np.tile(span, side)
        got = _OFFSET_CACHE[key] = (ox, oy, ox * ny + oy)
    return got


def candidate_cells(state: CaState, k, move_range):
    """The agent's own cell plus every free cell in its movement square."""
    px, py = state.pos[k]
    nx, ny = state.occupancy.shape
    x0, x1 = max(px - move_range, 0), min(px + move_range, nx - 1)
    y0, y1 = max(py - move_range, 0), min(py + move_range, ny - 1)
    free = state.occupancy[x0 : x1 + 1, y0 : y1 + 1] < 0
    free[px - x0, py - y0] = True
    cand = np.argwhere(free)
    cand[:, 0] += x0
    cand[:, 1] += y0
    return cand


def _move_one(state, k, p_own, p_enemy, friend, enemy, living, alive, occ_flat):
    px = int(state.pos[k, 0])
    py = int(state.pos[k, 1])
    nx, ny = state.occupancy.shape
    r = p_own.move_range
    ox, oy, oflat = _square_offsets(r, ny)
    if r <= px < nx - r and r <= py < ny - r:
        cx = px + ox
        cy = py + oy
        occ = occ_flat[px * ny + py + oflat]
    else:
        cx = px + ox
        cy = py + oy
        keep = (cx >= 0) & (cx < nx) & (cy >= 0) & (cy < ny)
        cx = cx[keep]
        cy = cy[keep]
        occ = occ_flat[cx * ny + cy]
    free = (occ < 0) | (occ == k)  # own cell is always a candidate
    if np.count_nonzero(free) == 1:
        return
    cx = cx[free]
    cy = cy[free]

    dx = np.abs(state.pos[:, 0] - px)
    dy = np.abs(state.pos[:, 1] - py)
    cheb = np.maximum(dx, dy, out=dx)
    cheb[k] = 1 << 40
    in_rs = cheb <= p_own.sensor_range
    idx = np.flatnonzero(in_rs & living)
    f = friend[idx]
    al = alive[idx]
    code = (1 - f) + 2 * (1 - al)  # 0 fa, 1 ea, 2 fi, 3 ei
    cnt = np.bincount(code, minlength=4)
    if p_own.threshold_range <= p_own.sensor_range:
        # the sensed set already covers the threshold square
        n_friend_rt = int(np.count_nonzero(f & (cheb[idx] <= p_own.threshold_range)))
        counts = (n_friend_rt, int(cnt[1] + cnt[3]))
    else:
        counts = None

    weights, target = _stance(state, k, p_own, cheb, in_rs, friend, enemy, counts)
    if target is not None:
        score = np.hypot(cx - target[0], cy - target[1])
    else:
        if idx.size:
            wvec = np.array(
                [
                    weights[0] / (SQ2 * p_own.sensor_range),
                    weights[1] / (SQ2 * p_enemy.sensor_range),
                    weights[2] / (SQ2 * p_own.sensor_range),
                    weights[3] / (SQ2 * p_enemy.sensor_range),
                ]
            )
            coef = wvec[code] / cnt[code]  # codes present have cnt >= 1
            dmat = np.hypot(
                cx[:, None] - state.pos[idx, 0], cy[:, None] - state.pos[idx, 1]
            )
            score = dmat @ coef
        else:
            score = np.zeros(cx.size)
        for w, flag in ((weights[4], p_own.flag), (weights[5], p_enemy.flag)):
            if not w:
                continue
            d_new = np.hypot(cx - flag[0], cy - flag[1])
            d_old = np.hypot(px - flag[0], py - flag[1])
            if d_old > 0:
                score = score + (w / d_old) * d_new
            else:
                score = score + np.where(d_new > 0, w * np.inf, 0.0)

    ties = np.flatnonzero(score == score.min())
    pick = ties[state.rng.integers(ties.size)] if ties.size > 1 else ties[0]
    tx = int(cx[pick])
    ty = int(cy[pick])
    occ_flat[px * ny + py] = -1
    occ_flat[tx * ny + ty] = k
    state.pos[k, 0] = tx
    state.pos[k, 1] = ty


def move_phase(state: CaState, p_red: CaForceParams, p_blue: CaForceParams) -> CaState:
    """Move every living agent once, in a freshly shuffled order.

    Moves are sequential: each agent sees the occupancy left by those before
    it, which keeps one-agent-per-cell true without a conflict rule.
    """
    living = state.health > KILLED
    alive = state.health == ALIVE
    red = np.zeros(state.n_agents, dtype=bool)
    red[: state.n_red] = True
    live_red = living & red
    live_blue = living & ~red
    occ_flat = state.occupancy.reshape(-1)
    order = state.rng.permutation(np.flatnonzero(living))
    for k in order:
        if k < state.n_red:
            _move_one(state, k, p_red, p_blue, live_red, live_blue, living, alive, occ_flat)
        else:
            _move_one(state, k, p_blue, p_red, live_blue, live_red, living, alive, occ_flat)
    return state


def fire_phase(state: CaState, p_red: CaForceParams, p_blue: CaForceParams) -> CaState:
    """All living agents shoot at once, judged against pre-phase health.

    Each shooter picks up to max_targets living enemies in its fire square
    (uniformly, without replacement, when it must choose) and lands each
    shot with prob_hit.  Hits are tallied first and applied afterwards, so
    shot resolution cannot depend on agent order; each accumulated hit
    spends one point of defence, and a force's defence buys that many hits
    per health-state downgrade.
    """
    pre = state.health.copy()
    live = np.flatnonzero(pre > KILLED)
    if not live.size:
        return state
    hits = np.zeros(state.n_agents, dtype=np.int64)
    # positions are frozen for the whole phase, so one pairwise Chebyshev
    # matrix over the living serves every shooter
    lp = state.pos[live]
    pair = np.abs(lp[:, None, :] - lp[None, :, :]).max(axis=2)
    live_red = live < state.n_red
    for a in range(live.size):
        red = live_red[a]
        p = p_red if red else p_blue
        if p.prob_hit <= 0.0:
            continue
        in_range = (pair[a] <= p.fire_range) & (live_red != red)
        targets = live[in_range]
        if not targets.size:
            continue
        if p.max_targets is not None and targets.size > p.max_targets:
            if p.max_targets == 0:
                continue
            targets = state.rng.choice(targets, size=p.max_targets, replace=False)
        rolls = state.rng.random(targets.size)
        struck = targets[rolls < p.prob_hit]
        hits[struck] += 1  # targets are distinct, so plain indexing is safe

    for k in np.flatnonzero(hits > 0):
        remaining = hits[k]
        while remaining > 0 and state.health[k] > KILLED:
            remaining -= 1
            state.defence_left[k] -= 1
            if state.defence_left[k] == 0:
                state.health[k] -= 1
                p = p_red if k < state.n_red else p_blue
                state.defence_left[k] = p.defence
                if state.health[k] == KILLED:
                    x, y = state.pos[k]
                    state.occupancy[x, y] = -1
    return state


def ca_step(state: CaState, p_red: CaForceParams, p_blue: CaForceParams) -> CaState:
    move_phase(state, p_red, p_blue)
    fire_phase(state, p_red, p_blue)
    state.t += 1
    return state


@dataclass
class CaTrajectory:
    """Per-step force counts and centroids, plus snapshots at chosen steps.

    Row i of every series describes the state after i steps (row 0 is the
    initial placement).  Snapshots hold (step, positions, health) copies.
    """

    steps: np.ndarray = None
    alive_red: np.ndarray = None
    injured_red: np.ndarray = None
    alive_blue: np.ndarray = None
    injured_blue: np.ndarray = None
    centroid_red: np.ndarray = None
    centroid_blue: np.ndarray = None
    snapshots: list = field(default_factory=list)
    n_red: int = 0
    seed: int = 0


def _force_centroid(state, red):
    sl = slice(0, state.n_red) if red else slice(state.n_red, None)
    living = state.health[sl] > KILLED
    if not living.any():
        return (np.nan, np.nan)
    pts = state.pos[sl][living]
    return (float(pts[:, 0].mean()), float(pts[:, 1].mean()))


def ca_run(p_red: CaForceParams, p_blue: CaForceParams, seed, n_steps,
           nx=100, ny=100, snapshot_steps=()) -> CaTrajectory:
    """Run the automaton for n_steps from a seeded placement."""
    if n_steps < 0:
        raise ParameterError("n_steps must be nonnegative")
    snapshot_steps = sorted(set(int(s) for s in snapshot_steps))
    if snapshot_steps and (snapshot_steps[0] < 0 or snapshot_steps[-1] > n_steps):
        raise ParameterError("snapshot steps must lie in [0, n_steps]")
    rng = np.random.default_rng(seed)
    state = place_forces(p_red, p_blue, nx, ny, rng)
    traj = CaTrajectory(n_red=state.n_red, seed=int(seed))
    series = []

    def record():
        ar, ir = state.counts(red=True)
        ab, ib = state.counts(red=False)
        cr = _force_centroid(state, red=True)
        cb = _force_centroid(state, red=False)
        series.append((state.t, ar, ir, ab, ib, cr[0], cr[1], cb[0], cb[1]))
        if snapshot_steps and state.t == snapshot_steps[0]:
            snapshot_steps.pop(0)
            traj.snapshots.append((state.t, state.pos.copy(), state.health.copy()))

    record()
    for _ in range(n_steps):
        ca_step(state, p_red, p_blue)
        record()

    cols = np.array(series, dtype=float).reshape(-1, 9)
    traj.steps = cols[:, 0].astype(int)
    traj.alive_red = cols[:, 1].astype(int)
    traj.injured_red = cols[:, 2].astype(int)
    traj.alive_blue = cols[:, 3].astype(int)
    traj.injured_blue = cols[:, 4].astype(int)
    traj.centroid_red = cols[:, 5:7]
    traj.centroid_blue = cols[:, 7:9]
    return traj
