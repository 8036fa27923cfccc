"""Adaptive explicit time integration for the combat PDE system.

Space is discretised by the pde module; what remains is a large ODE system
advanced here with the Bogacki-Shampine 3(2) embedded pair.  Step control
compares the embedded error against atol + rtol * |density| per cell, and a
step is also rejected outright if any density dips below -atol, so accepted
states are nonnegative after a final clamp to zero.  Everything is
deterministic: rerunning a configuration reproduces the trajectory bit for
bit.
"""

import bisect
from dataclasses import dataclass, field

import numpy as np

from .grid import ParameterError, ScalarField
from .pde import PdeForceParams, PdeRhs, PdeState

TAU_FLOOR = 1e-15

# Bogacki-Shampine tableau: third-order solution weights b, embedded
# second-order weights bh, stage times c.
_B = (2 / 9, 1 / 3, 4 / 9, 0.0)
_BH = (7 / 24, 1 / 4, 1 / 3, 1 / 8)


class StiffnessError(RuntimeError):
    """Step size collapsed; carries the last good state for diagnosis."""

    def __init__(self, t, state):
        super().__init__(f"step size underflow below {TAU_FLOOR} at t={t:.3e}")
        self.t = t
        self.state = state


@dataclass
class IntegratorConfig:
    t_end: float
    tau0: float = 1e-7
    atol: float = 1e-3
    rtol: float = 1e-3
    snapshot_times: tuple = ()
    safety: float = 0.9

    def __post_init__(self):
        if self.atol <= 0 or self.rtol <= 0:
            raise ParameterError("tolerances must be positive")
        if self.t_end < 0:
            raise ParameterError("t_end must be nonnegative")
        if self.tau0 <= 0 or (self.t_end > 0 and self.tau0 >= self.t_end):
            raise ParameterError("tau0 must satisfy 0 < tau0 < t_end")
        snaps = tuple(float(s) for s in self.snapshot_times)
        if any(s < 0 or s > self.t_end for s in snaps):
            raise ParameterError("snapshot times must lie in [0, t_end]")
        if list(snaps) != sorted(snaps):
            raise ParameterError("snapshot times must be sorted")
        self.snapshot_times = snaps


@dataclass
class RunTrajectory:
    """Snapshots at requested times plus per-accepted-step series.

    ``loss_u``/``loss_v`` are cumulative attrition integrals, nondecreasing
    by construction, so survivor curves derived from them are monotone even
    where the clamped mass series wiggles at round-off scale.
    """

    snapshots: list = field(default_factory=list)
    times: np.ndarray = None
    mass_u: np.ndarray = None
    mass_v: np.ndarray = None
    loss_u: np.ndarray = None
    loss_v: np.ndarray = None
    tau: np.ndarray = None
    min_preclamp: np.ndarray = None
    error: str = None

    @property
    def failed(self):
        return self.error is not None


def _clamp_conservative(values):
    """Zero out undershoots, then rescale so the force's total is untouched.

    A bare clamp injects mass every time a cell dips slightly negative;
    folding the deficit back into the positive cells keeps the mass series
    exactly monotone under attrition instead of monotone-up-to-clamp-noise.
    """
    clipped = np.maximum(values, 0.0)
    before = values.sum()
    after = clipped.sum()
    if after > 0.0 and 0.0 < before < after:
        clipped *= before / after
    return clipped


def _norm(diff_u, diff_v, scale_u, scale_v):
    total = (diff_u / scale_u) ** 2
    n = total.size + diff_v.size
    return float(np.sqrt((total.sum() + ((diff_v / scale_v) ** 2).sum()) / n))


def step(state: PdeState, rhs, tau, cfg: IntegratorConfig):
    """One attempted embedded step.

    ``rhs`` maps two density arrays to their derivatives.  Returns the new
    state (or the input state on rejection), the next step size to try, and
    whether the step was accepted.
    """
    if tau <= 0:
        raise ParameterError("step size must be positive")
    u0 = state.u.values
    v0 = state.v.values

    k1 = rhs(u0, v0)
    k2 = rhs(u0 + 0.5 * tau * k1[0], v0 + 0.5 * tau * k1[1])
    k3 = rhs(u0 + 0.75 * tau * k2[0], v0 + 0.75 * tau * k2[1])
    stages = (k1, k2, k3)
    u3 = u0 + tau * sum(b * k[0] for b, k in zip(_B, stages))
    v3 = v0 + tau * sum(b * k[1] for b, k in zip(_B, stages))
    k4 = rhs(u3, v3)
    stages = (k1, k2, k3, k4)
    u2 = u0 + tau * sum(b * k[0] for b, k in zip(_BH, stages))
    v2 = v0 + tau * sum(b * k[1] for b, k in zip(_BH, stages))

    scale_u = cfg.atol + cfg.rtol * np.maximum(np.abs(u0), np.abs(u3))
    scale_v = cfg.atol + cfg.rtol * np.maximum(np.abs(v0), np.abs(v3))
    err = _norm(u3 - u2, v3 - v2, scale_u, scale_v)
    low = min(float(u3.min()), float(v3.min()))

    if err > 1.0 or low < -cfg.atol:
        return state, tau * 0.5, False

    new = PdeState(
        state.u.like(_clamp_conservative(u3)),
        state.v.like(_clamp_conservative(v3)),
        state.t + tau,
    )
    grow = cfg.safety * (1.0 / max(err, 1e-16)) ** (1.0 / 3.0)
    new._min_preclamp = low
    return new, tau * min(2.0, grow), True


def _interp_state(a: PdeState, b: PdeState, t):
    if b.t == a.t:
        return a.u.copy(), a.v.copy()
    th = (t - a.t) / (b.t - a.t)
    return (
        a.u.like((1 - th) * a.u.values + th * b.u.values),
        a.v.like((1 - th) * a.v.values + th * b.v.values),
    )


def run(initial: PdeState, p_u: PdeForceParams, p_v: PdeForceParams, cfg: IntegratorConfig) -> RunTrajectory:
    """Integrate to t_end, recording snapshots by linear interpolation.

    On stiffness failure the partial trajectory is returned with its error
    field set rather than raising, so callers can inspect what was computed.
    """
    rhs = PdeRhs(p_u, p_v, initial.u.dx, initial.u.dy)
    traj = RunTrajectory()
    series = []

    pending = list(cfg.snapshot_times) or [0.0, cfg.t_end]
    # Snapshots due at the start (and everything when t_end == 0).
    while pending and (pending[0] <= initial.t or cfg.t_end == 0):
        pending.pop(0)
        traj.snapshots.append((initial.t, initial.u.copy(), initial.v.copy()))

    state = state_prev = initial
    tau = cfg.tau0
    lost_u = lost_v = 0.0
    while state.t < cfg.t_end:
        attempt = min(tau, cfg.t_end - state.t)
        new, tau, ok = step(state, rhs, attempt, cfg)
        if not ok:
            if tau < TAU_FLOOR:
                traj.error = str(StiffnessError(state.t, state))
                break
            continue
        rate_u, rate_v = rhs.loss_rates(state.u.values, state.v.values)
        lost_u += attempt * rate_u
        lost_v += attempt * rate_v
        state_prev, state = state, new
        cut = bisect.bisect_right(pending, state.t)
        for s in pending[:cut]:
            su, sv = _interp_state(state_prev, state, s)
            traj.snapshots.append((s, su, sv))
        del pending[:cut]
        series.append(
            (
                state.t,
                state.u.values.sum() * state.u.dx * state.u.dy,
                state.v.values.sum() * state.v.dx * state.v.dy,
                lost_u,
                lost_v,
                attempt,
                state._min_preclamp,
            )
        )

    cols = np.array(series, dtype=float).reshape(-1, 7)
    traj.times = cols[:, 0]
    traj.mass_u = cols[:, 1]
    traj.mass_v = cols[:, 2]
    traj.loss_u = cols[:, 3]
    traj.loss_v = cols[:, 4]
    traj.tau = cols[:, 5]
    traj.min_preclamp = cols[:, 6]
    return traj
