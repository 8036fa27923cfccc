"""Continuum combat model: two density fields advect toward their goals,
aggregate through nonlocal attraction/repulsion kernels, diffuse, and
attrit each other through aimed and area fire.

The time derivative of each force splits into three parts:

* ``f_diff``: conservative diffusion with constant scalar coefficient.
* ``f_react``: attrition, ``-(w * (k_fire conv enemy) + d * enemy)``.
* ``f_vel``: conservative transport ``-div(w * V)`` with
  ``V = vel_goal * w + A_a * grad(K_a conv w) - A_r * w * grad(K_r conv w)``,

where ``vel_goal`` is either the constant goal velocity C or a combat
switch that reacts to the local force balance (front reversal, or pursuit
up/down the enemy concentration gradient).  Transport fluxes are assembled
with Koren-limited upwinding and zero-flux walls, so each term conserves
mass on its own; only ``f_react`` moves total mass, and only downward.
"""

from dataclasses import dataclass, field

import numpy as np

from .grid import (
    GeometryError,
    Kernel,
    ParameterError,
    ScalarField,
    VectorField,
    convolve,
    disc_kernel,
    disc_mass,
    firing_kernel,
    gradient,
)

SWITCH_MODES = ("fixed", "front", "pursuit")

# Peak heights of the cone kernels K_a, K_r.  The model fixes only their
# radii; the heights are a normalisation choice, calibrated jointly: a dense
# blob travels as a wave whose front the attraction must not overpower (too
# tall an attraction kernel pins the blob in its own potential well and the
# net velocity relaxes to zero), while the attraction-to-repulsion height
# ratio sets the interior density a marching blob compresses to, and with it
# the travel speed.  This pair keeps blobs coherent yet mobile across the
# whole goal-velocity range of interest (|C| from ~28 to ~85).
ATTRACT_KERNEL_HEIGHT = 15.0
REPEL_KERNEL_HEIGHT = 0.85


@dataclass
class PdeForceParams:
    """One force's parameters: initial blob, motion, sensing and fire."""

    peak_density: float = 8.0
    radius: float = 5.0
    centre: tuple = (15.0, 15.0)
    inner_threshold: float = 0.5  # recorded scenario input, not used by the dynamics
    diffusion: float = 5.0
    goal_velocity: tuple = (20.0, 20.0)
    attract_strength: float = 5.0
    repel_strength: float = 0.5
    attract_radius: float = 5.0
    repel_radius: float = 2.65
    sensor_radius: float = 3.0
    combat_threshold: float = 100.0
    attack: int = -1
    aimed_fire: float = 0.0
    area_fire: float = 0.0
    fire_decay: float = 0.0
    switch_mode: str = "fixed"
    flag: tuple = (50.0, 50.0)

    def __post_init__(self):
        for name in (
            "diffusion",
            "attract_strength",
            "repel_strength",
            "aimed_fire",
            "area_fire",
            "fire_decay",
            "peak_density",
            "radius",
        ):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be nonnegative")
        if self.attract_strength or self.repel_strength:
            if not self.attract_radius > self.repel_radius > 0:
                raise ParameterError(
                    "attract_radius must exceed repel_radius, both positive"
                )
        if self.attack not in (-1, 1):
            raise ParameterError("attack must be -1 or +1")
        if self.switch_mode not in SWITCH_MODES:
            raise ParameterError(f"switch_mode must be one of {SWITCH_MODES}")
        if self.sensor_radius <= 0:
            raise ParameterError("sensor_radius must be positive")
        self.centre = tuple(float(c) for c in self.centre)
        self.goal_velocity = tuple(float(c) for c in self.goal_velocity)
        self.flag = tuple(float(c) for c in self.flag)


@dataclass
class PdeState:
    """Both density fields at one instant."""

    u: ScalarField
    v: ScalarField
    t: float = 0.0

    def __post_init__(self):
        if not self.u.same_geometry(self.v):
            raise GeometryError("u and v must share a grid")
        if self.u.values.min() < 0 or self.v.values.min() < 0:
            raise ValueError("densities must be nonnegative")


def initial_profile(nx, ny, p: PdeForceParams, dx=1.0, dy=1.0) -> ScalarField:
    """Circular plateau of the peak density, cosine-ramped to zero over one cell."""
    x = np.arange(nx)[:, None] * dx
    y = np.arange(ny)[None, :] * dy
    r = np.hypot(x - p.centre[0], y - p.centre[1])
    inner = p.radius - 0.5
    vals = np.where(r <= inner, 1.0, 0.0)
    ramp = (r > inner) & (r < p.radius + 0.5)
    vals[ramp] = 0.5 * (1.0 + np.cos(np.pi * (r[ramp] - inner)))
    return ScalarField(p.peak_density * vals, dx, dy)


def initial_state(nx, ny, p_u, p_v, dx=1.0, dy=1.0) -> PdeState:
    return PdeState(
        initial_profile(nx, ny, p_u, dx, dy), initial_profile(nx, ny, p_v, dx, dy)
    )


def aggregation_kernel(radius, dx=1.0, dy=1.0, height=1.0) -> Kernel:
    """Cone of the given height over a disc: weight height*(1 - r/radius).

    The taper matters: a flat disc has a zero gradient across its interior,
    so a blob wider than the kernel only compresses at its rim and the
    interior density (which sets the travel speed) stalls low.
    """
    base = disc_kernel(radius, dx, dy)
    m_x = base.weights.shape[0] // 2
    m_y = base.weights.shape[1] // 2
    px = (np.arange(base.weights.shape[0]) - m_x) * dx
    py = (np.arange(base.weights.shape[1]) - m_y) * dy
    dist = np.hypot(px[:, None], py[None, :])
    weights = height * np.clip(1.0 - dist / radius, 0.0, None)
    return Kernel("cone", float(radius), weights, dx, dy)


def f_diff(w: ScalarField, p: PdeForceParams) -> ScalarField:
    """div(D grad w) in conservative form with zero-flux walls."""
    padded = np.pad(w.values, 1, mode="edge")
    lap = (padded[2:, 1:-1] - 2 * w.values + padded[:-2, 1:-1]) / w.dx**2
    lap += (padded[1:-1, 2:] - 2 * w.values + padded[1:-1, :-2]) / w.dy**2
    return w.like(p.diffusion * lap)


def f_react(w: ScalarField, enemy: ScalarField, p: PdeForceParams, k_fire: Kernel) -> ScalarField:
    """Attrition of ``w``: area fire through the enemy's firing kernel plus
    aimed fire proportional to enemy density.  Nonpositive for valid inputs."""
    area = w.values * convolve(enemy, k_fire).values if k_fire.weight_sum() else 0.0
    return w.like(-(area + p.aimed_fire * enemy.values))


def combat_switch_front(u_mass: ScalarField, v_mass: ScalarField, p: PdeForceParams) -> VectorField:
    """Goal velocity +C wherever the local mass advantage strictly exceeds
    the combat threshold, -C (retreat) everywhere else."""
    advantaged = (u_mass.values - v_mass.values) > p.combat_threshold
    cx, cy = p.goal_velocity
    return VectorField(
        np.where(advantaged, cx, -cx),
        np.where(advantaged, cy, -cy),
        u_mass.dx,
        u_mass.dy,
    )


def combat_switch_pursuit(u_mass: ScalarField, v_mass: ScalarField, p: PdeForceParams) -> VectorField:
    """Goal velocity C plus the local enemy mass directed along the unit
    gradient of that mass: up it while advantaged (mass lead >= threshold),
    down or up it otherwise according to the attack switch."""
    g = gradient(v_mass)
    mag = np.hypot(g.x, g.y)
    safe = np.where(mag < 1e-12, 1.0, mag)
    ux = np.where(mag < 1e-12, 0.0, g.x / safe)
    uy = np.where(mag < 1e-12, 0.0, g.y / safe)
    s = np.where(u_mass.values - v_mass.values >= p.combat_threshold, 1.0, float(p.attack))
    pursuit = s * v_mass.values
    cx, cy = p.goal_velocity
    return VectorField(cx + pursuit * ux, cy + pursuit * uy, u_mass.dx, u_mass.dy)


def koren(r):
    """Koren's third-order flux limiter."""
    return np.maximum(0.0, np.minimum(np.minimum(2.0 * r, (2.0 + r) / 3.0), 2.0))


def _edge_states_axis0(w, vel):
    """Limited upwind states on the nx-1 interior x-faces of ``w``.

    Face j sits between cells j and j+1 and carries velocity ``vel[j]``.
    The donor cell's value is corrected by the Koren limiter applied to the
    ratio of the upwind to the local slope; faces lacking a second upwind
    neighbour fall back to plain first-order upwinding.
    """
    dloc = w[1:] - w[:-1]
    safe = np.where(dloc == 0.0, 1.0, dloc)

    up_plus = np.zeros_like(dloc)
    up_plus[1:] = dloc[:-1]
    corr_plus = 0.5 * koren(up_plus / safe) * dloc
    corr_plus[0] = 0.0
    state_plus = w[:-1] + np.where(dloc == 0.0, 0.0, corr_plus)

    up_minus = np.zeros_like(dloc)
    up_minus[:-1] = dloc[1:]
    corr_minus = 0.5 * koren(up_minus / safe) * (-dloc)
    corr_minus[-1] = 0.0
    state_minus = w[1:] + np.where(dloc == 0.0, 0.0, corr_minus)

    return np.where(vel >= 0.0, state_plus, state_minus)


def advective_divergence(w, face_vel_x, face_vel_y, dx=1.0, dy=1.0):
    """div(w V) assembled from limited upwind fluxes, zero flux at the walls.

    Velocities live on interior faces: ``face_vel_x[j]`` sits between cells
    j and j+1 along x (shape ``(nx-1, ny)``), likewise for y.  The returned
    array sums to zero exactly because interior fluxes telescope.
    """
    div = np.zeros_like(w)

    flux_x = face_vel_x * _edge_states_axis0(w, face_vel_x)
    div[:-1] += flux_x / dx
    div[1:] -= flux_x / dx

    flux_y = (face_vel_y.T * _edge_states_axis0(w.T, face_vel_y.T)).T
    div[:, :-1] += flux_y / dy
    div[:, 1:] -= flux_y / dy
    return div


def _face_velocity(w, kaw, krw, goal, p, axis, delta):
    """Velocity on interior faces along one axis.

    The goal part averages cell velocity times density onto the face; the
    aggregation parts difference the convolved fields across the face, a
    compact two-point gradient that still feels cell-scale pileups (a
    centred gradient is blind to them, which lets collapse run away).
    """
    if axis == 1:
        w, kaw, krw, goal = w.T, kaw.T, krw.T, goal.T
    wf = 0.5 * (w[:-1] + w[1:])
    vel = wf * 0.5 * (goal[:-1] + goal[1:])
    if p.attract_strength:
        vel = vel + p.attract_strength * (kaw[1:] - kaw[:-1]) / delta
    if p.repel_strength:
        vel = vel - p.repel_strength * wf * (krw[1:] - krw[:-1]) / delta
    return vel.T if axis == 1 else vel


def f_vel(w: ScalarField, vel_goal: VectorField, p: PdeForceParams, K_a: Kernel, K_r: Kernel) -> ScalarField:
    """Transport term -div(w V): goal-directed motion scaled by density,
    attraction up the smoothed own-density gradient, pointwise-scaled
    repulsion down the short-range one."""
    kaw = convolve(w, K_a).values if p.attract_strength else w.values
    krw = convolve(w, K_r).values if p.repel_strength else w.values
    ax = _face_velocity(w.values, kaw, krw, vel_goal.x, p, 0, w.dx)
    ay = _face_velocity(w.values, kaw, krw, vel_goal.y, p, 1, w.dy)
    return w.like(-advective_divergence(w.values, ax, ay, w.dx, w.dy))


class PdeRhs:
    """Right-hand side of the coupled system with all kernels prebuilt.

    Calling it with two density arrays returns the two time derivatives;
    the ScalarField wrapper API lives in :func:`rhs`.
    """

    def __init__(self, p_u: PdeForceParams, p_v: PdeForceParams, dx=1.0, dy=1.0):
        self.p_u = p_u
        self.p_v = p_v
        self.dx = dx
        self.dy = dy
        self.attract_u = aggregation_kernel(p_u.attract_radius, dx, dy, ATTRACT_KERNEL_HEIGHT)
        self.repel_u = aggregation_kernel(p_u.repel_radius, dx, dy, REPEL_KERNEL_HEIGHT)
        self.attract_v = aggregation_kernel(p_v.attract_radius, dx, dy, ATTRACT_KERNEL_HEIGHT)
        self.repel_v = aggregation_kernel(p_v.repel_radius, dx, dy, REPEL_KERNEL_HEIGHT)
        # Each force is shot at through the enemy's firing parameters.
        self.fire_at_u = firing_kernel(p_v.area_fire, p_v.fire_decay, dx=dx, dy=dy)
        self.fire_at_v = firing_kernel(p_u.area_fire, p_u.fire_decay, dx=dx, dy=dy)
        self.sense_u = disc_kernel(p_u.sensor_radius, dx, dy)
        self.sense_v = disc_kernel(p_v.sensor_radius, dx, dy)

    def _one_force(self, w, enemy, p, sense, K_a, K_r, k_fire):
        own_mass = convolve(w, sense)
        enemy_mass = convolve(enemy, sense)
        if p.switch_mode == "front":
            goal = combat_switch_front(own_mass, enemy_mass, p)
        elif p.switch_mode == "pursuit":
            goal = combat_switch_pursuit(own_mass, enemy_mass, p)
        else:
            cx, cy = p.goal_velocity
            goal = VectorField(
                np.full_like(w.values, cx), np.full_like(w.values, cy), w.dx, w.dy
            )
        out = f_vel(w, goal, p, K_a, K_r)
        out.values += f_diff(w, p).values
        out.values += f_react(w, enemy, p, k_fire).values
        return out

    def __call__(self, u_values, v_values):
        u = ScalarField(u_values, self.dx, self.dy)
        v = ScalarField(v_values, self.dx, self.dy)
        du = self._one_force(
            u, v, self.p_u, self.sense_u, self.attract_u, self.repel_u, self.fire_at_u
        )
        dv = self._one_force(
            v, u, self.p_v, self.sense_v, self.attract_v, self.repel_v, self.fire_at_v
        )
        return du.values, dv.values

    def _one_loss(self, w, enemy, p, k_fire):
        r = -f_react(w, enemy, p, k_fire).values
        # Aimed fire only attrits cells that hold any force; the raw term
        # also charges empty cells, which the positivity clamp undoes.
        r[w.values <= 0.0] = 0.0
        return float(r.sum()) * self.dx * self.dy

    def loss_rates(self, u_values, v_values):
        """Instantaneous area-integrated attrition rate of each force.

        Both rates are nonnegative, so a trajectory's accumulated losses
        grow monotonically even though the clamped mass series can wiggle
        at round-off scale.
        """
        u = ScalarField(u_values, self.dx, self.dy)
        v = ScalarField(v_values, self.dx, self.dy)
        return (
            self._one_loss(u, v, self.p_u, self.fire_at_u),
            self._one_loss(v, u, self.p_v, self.fire_at_v),
        )


def rhs(state: PdeState, p_u: PdeForceParams, p_v: PdeForceParams):
    """Time derivative of both fields; see :class:`PdeRhs` for the batch form."""
    du, dv = PdeRhs(p_u, p_v, state.u.dx, state.u.dy)(state.u.values, state.v.values)
    return state.u.like(du), state.v.like(dv)
