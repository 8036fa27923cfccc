"""Trajectory metrics, seed ensembles and cross-engine comparison.

The metrics are deliberately plain: centroids and their separation, the
principal-axis aspect ratio of a density blob, the accumulated rotation of
the line between the two force centroids, a sector-count encirclement
fraction, and piecewise loss rates on a uniform window grid.  Everything
operates on trajectory series so the same definitions serve both engines.

Rotation is measured from first contact (centroid separation under the
contact radius) and skips increments where either endpoint separation is
below one cell: at sub-cell separation the direction between centroids is
not resolvable on the grid, and including those increments turns grid
noise into spurious turns.
"""

import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .grid import ParameterError

PRECESSION_THRESHOLD = np.pi / 2


def centroid(values):
    """Mass centroid of a density array, (nan, nan) when empty."""
    m = values.sum()
    if m <= 0:
        return (np.nan, np.nan)
    ii, jj = np.indices(values.shape)
    return (float((ii * values).sum() / m), float((jj * values).sum() / m))


def front_aspect(values):
    """Long-to-short principal axis ratio; inf for a degenerate line mass."""
    m = values.sum()
    if m <= 0:
        return 1.0
    ii, jj = np.indices(values.shape)
    cx = (ii * values).sum() / m
    cy = (jj * values).sum() / m
    sxx = (values * (ii - cx) ** 2).sum() / m
    syy = (values * (jj - cy) ** 2).sum() / m
    sxy = (values * (ii - cx) * (jj - cy)).sum() / m
    tr = sxx + syy
    det = sxx * syy - sxy ** 2
    disc = max(tr * tr / 4 - det, 0.0)
    lam1 = tr / 2 + np.sqrt(disc)
    lam2 = tr / 2 - np.sqrt(disc)
    if lam2 <= 1e-12:
        return np.inf
    return float(np.sqrt(lam1 / lam2))


def wrap_angle(a):
    """Map angles into [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def separation_series(red_centroids, blue_centroids):
    d = np.asarray(red_centroids, dtype=float) - np.asarray(blue_centroids, dtype=float)
    return np.hypot(d[:, 0], d[:, 1])


def first_contact_index(separations, contact_radius):
    """Index of the first sample inside the contact radius, or None."""
    hit = np.asarray(separations) < contact_radius
    hit = np.where(np.isnan(separations), False, hit)
    if not hit.any():
        return None
    return int(np.argmax(hit))


def rotation_series(red_centroids, blue_centroids, contact_radius, min_separation=1.0):
    """Accumulated rotation of the red-minus-blue direction, per sample.

    Zero before first contact; afterwards the cumulative sum of wrapped
    angle increments, skipping any increment whose endpoints are closer
    than min_separation or not finite.
    """
    red_centroids = np.asarray(red_centroids, dtype=float)
    blue_centroids = np.asarray(blue_centroids, dtype=float)
    d = red_centroids - blue_centroids
    seps = np.hypot(d[:, 0], d[:, 1])
    out = np.zeros(len(seps))
    k0 = first_contact_index(seps, contact_radius)
    if k0 is None or k0 == len(seps) - 1:
        return out
    ang = np.arctan2(d[:, 1], d[:, 0])
    inc = wrap_angle(np.diff(ang[k0:]))
    ok = (
        np.isfinite(seps[k0:-1])
        & np.isfinite(seps[k0 + 1 :])
        & (seps[k0:-1] >= min_separation)
        & (seps[k0 + 1 :] >= min_separation)
    )
    out[k0 + 1 :] = np.cumsum(np.where(ok, inc, 0.0))
    return out


def rotation_angle(red_centroids, blue_centroids, contact_radius, min_separation=1.0):
    return float(
        rotation_series(red_centroids, blue_centroids, contact_radius, min_separation)[-1]
    )


def classify_rotation(angle, threshold=PRECESSION_THRESHOLD):
    """Bucket a rotation angle: anticlockwise above +threshold, clockwise
    below -threshold, otherwise none."""
    if angle > threshold:
        return "anticlockwise"
    if angle < -threshold:
        return "clockwise"
    return "none"


def encirclement_fraction(surrounded, surrounding, sensor_radius, n_sectors=16):
    """Fraction of bearing sectors held by the surrounding force.

    Sectors are counted on a ring of twice the surrounded force's sensor
    radius about its centroid; a sector counts when it holds more than 1%
    of the ring's mean per-sector mass.
    """
    c = centroid(surrounded)
    if not np.isfinite(c[0]):
        return 0.0
    ii, jj = np.indices(surrounding.shape)
    dist = np.hypot(ii - c[0], jj - c[1])
    ring = dist <= 2.0 * sensor_radius
    total = surrounding[ring].sum()
    if total <= 0:
        return 0.0
    ang = np.arctan2((jj - c[1])[ring], (ii - c[0])[ring])
    sector = ((ang + np.pi) / (2 * np.pi) * n_sectors).astype(int) % n_sectors
    mass = np.bincount(sector, weights=surrounding[ring], minlength=n_sectors)
    return float((mass > 0.01 * total / n_sectors).sum()) / n_sectors


def windowed_rates(times, cumulative, t_end, n_windows=20):
    """Mean rate of a cumulative series on each of n uniform windows."""
    if t_end <= 0:
        raise ParameterError("t_end must be positive for windowed rates")
    edges = np.linspace(0.0, t_end, n_windows + 1)
    vals = np.interp(edges, times, cumulative)
    return np.diff(vals) / (t_end / n_windows), edges


def contact_radius(scenario):
    """Centroid separation that counts as contact: the larger sensor reach."""
    if scenario.engine == "pde":
        return max(scenario.red.sensor_radius, scenario.blue.sensor_radius)
    return float(max(scenario.red.sensor_range, scenario.blue.sensor_range))


# ---------------------------------------------------------------------------
# per-run metric tables (the rows behind metrics.csv)


def pde_centroid_series(traj):
    ts = np.array([s[0] for s in traj.snapshots])
    red = np.array([centroid(s[1].values) for s in traj.snapshots])
    blue = np.array([centroid(s[2].values) for s in traj.snapshots])
    return ts, red, blue


PDE_METRIC_COLUMNS = (
    "time", "mass_red", "mass_blue", "loss_red", "loss_blue",
    "cx_red", "cy_red", "cx_blue", "cy_blue", "separation",
    "aspect_red", "aspect_blue",
    "encircle_blue_around_red", "encircle_red_around_blue", "rotation",
)

CA_METRIC_COLUMNS = (
    "step", "alive_red", "injured_red", "alive_blue", "injured_blue",
    "cx_red", "cy_red", "cx_blue", "cy_blue", "separation", "rotation",
)


def pde_metric_table(traj, scenario):
    ts, red, blue = pde_centroid_series(traj)
    seps = separation_series(red, blue)
    rot = rotation_series(red, blue, contact_radius(scenario))
    rows = []
    for k, (t, snap) in enumerate(zip(ts, traj.snapshots)):
        u = snap[1].values
        v = snap[2].values
        rows.append((
            t, 0.0, 0.0, 0.0, 0.0,
            red[k, 0], red[k, 1], blue[k, 0], blue[k, 1], seps[k],
            front_aspect(u), front_aspect(v),
            encirclement_fraction(u, v, scenario.red.sensor_radius),
            encirclement_fraction(v, u, scenario.blue.sensor_radius),
            rot[k],
        ))
    rows = np.array(rows, dtype=float)
    # masses and cumulative losses interpolated onto snapshot times
    rows[:, 1] = np.interp(ts, traj.times, traj.mass_u)
    rows[:, 2] = np.interp(ts, traj.times, traj.mass_v)
    rows[:, 3] = np.interp(ts, traj.times, traj.loss_u)
    rows[:, 4] = np.interp(ts, traj.times, traj.loss_v)
    return PDE_METRIC_COLUMNS, rows


def ca_metric_table(traj, scenario):
    seps = separation_series(traj.centroid_red, traj.centroid_blue)
    rot = rotation_series(traj.centroid_red, traj.centroid_blue, contact_radius(scenario))
    rows = np.column_stack([
        traj.steps, traj.alive_red, traj.injured_red,
        traj.alive_blue, traj.injured_blue,
        traj.centroid_red[:, 0], traj.centroid_red[:, 1],
        traj.centroid_blue[:, 0], traj.centroid_blue[:, 1],
        seps, rot,
    ]).astype(float)
    return CA_METRIC_COLUMNS, rows


def pde_loss_table(traj):
    cols = ("time", "mass_red", "mass_blue", "loss_red", "loss_blue")
    rows = np.column_stack([traj.times, traj.mass_u, traj.mass_v,
                            traj.loss_u, traj.loss_v])
    return cols, rows


def ca_loss_table(traj):
    cols = ("step", "alive_red", "injured_red", "alive_blue", "injured_blue")
    rows = np.column_stack([traj.steps, traj.alive_red, traj.injured_red,
                            traj.alive_blue, traj.injured_blue]).astype(float)
    return cols, rows


# ---------------------------------------------------------------------------
# seed ensembles (lattice engine)


@dataclass
class SeedResult:
    seed: int
    rotation: float = 0.0
    direction: str = "none"
    crossed: bool = False
    cross_step: int = -1
    survivors_red: int = 0
    survivors_blue: int = 0
    goal_distance_red: float = np.nan
    goal_distance_blue: float = np.nan
    error: str = None


@dataclass
class EnsembleReport:
    scenario_name: str
    n_seeds: int
    seed0: int
    results: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def failures(self):
        return [r for r in self.results if r.error is not None]

    def direction_counts(self):
        counts = {"clockwise": 0, "anticlockwise": 0, "none": 0}
        for r in self.results:
            if r.error is None:
                counts[r.direction] += 1
        return counts

    @property
    def precession_fraction(self):
        ok = [r for r in self.results if r.error is None]
        if not ok:
            return 0.0
        return sum(r.direction != "none" for r in ok) / len(ok)

    @property
    def crossed_fraction(self):
        ok = [r for r in self.results if r.error is None]
        if not ok:
            return 0.0
        return sum(r.crossed for r in ok) / len(ok)


def summarise_ca_run(scenario, seed, traj):
    """Fold one lattice trajectory into a SeedResult."""
    r = SeedResult(seed=seed)
    r.rotation = rotation_angle(
        traj.centroid_red, traj.centroid_blue, contact_radius(scenario)
    )
    r.direction = classify_rotation(r.rotation)
    ahead = traj.centroid_red[:, 0] > traj.centroid_blue[:, 0]
    ahead &= np.isfinite(traj.centroid_red[:, 0]) & np.isfinite(traj.centroid_blue[:, 0])
    if ahead.any():
        r.crossed = True
        r.cross_step = int(traj.steps[np.argmax(ahead)])
    r.survivors_red = int(traj.alive_red[-1] + traj.injured_red[-1])
    r.survivors_blue = int(traj.alive_blue[-1] + traj.injured_blue[-1])
    # each force's goal is the enemy flag
    r.goal_distance_red = float(np.hypot(
        traj.centroid_red[-1, 0] - scenario.blue.flag[0],
        traj.centroid_red[-1, 1] - scenario.blue.flag[1],
    ))
    r.goal_distance_blue = float(np.hypot(
        traj.centroid_blue[-1, 0] - scenario.red.flag[0],
        traj.centroid_blue[-1, 1] - scenario.red.flag[1],
    ))
    return r


def _run_seed(scenario, seed):
    from .scenarios import run_scenario

    try:
        traj = run_scenario(scenario, seed=seed)
        return summarise_ca_run(scenario, seed, traj)
    except Exception as exc:  # a bad seed must not sink the whole ensemble
        return SeedResult(seed=seed, error=f"{type(exc).__name__}: {exc}")


def ensemble(scenario, n_seeds, seed0=0, jobs=1) -> EnsembleReport:
    """Run consecutive seeds of a lattice scenario and fold their metrics.

    Results are ordered by seed regardless of completion order, so a report
    is reproducible for any job count.
    """
    if scenario.engine != "ca":
        raise ParameterError("ensembles are defined for the lattice engine only")
    if n_seeds < 1:
        raise ParameterError("n_seeds must be at least 1")
    seeds = [seed0 + i for i in range(n_seeds)]
    started = _time.perf_counter()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_seed, [scenario] * n_seeds, seeds))
    else:
        results = [_run_seed(scenario, s) for s in seeds]
    return EnsembleReport(
        scenario_name=scenario.name,
        n_seeds=n_seeds,
        seed0=seed0,
        results=results,
        wall_time=_time.perf_counter() - started,
    )


# ---------------------------------------------------------------------------
# cross-engine comparison


@dataclass
class ComparisonReport:
    pde_name: str
    ca_name: str
    n_points: int
    phase: np.ndarray = None
    centroid_rmse_red: float = np.nan
    centroid_rmse_blue: float = np.nan
    survivor_rows: np.ndarray = None
    final_gap_red: float = np.nan
    final_gap_blue: float = np.nan


SURVIVOR_COLUMNS = ("phase", "pde_red", "pde_blue", "ca_red", "ca_blue")


def _phase_axis(times, seps, contact_radius_value):
    """Normalise a clock so phase 1 is first contact; fall back to span."""
    k0 = first_contact_index(seps, contact_radius_value)
    if k0 is None or times[k0] <= 0:
        return None
    return np.asarray(times, dtype=float) / float(times[k0])


def compare_runs(pde_traj, ca_traj, pde_scenario, ca_scenario, n_points=21):
    """Line up one run from each engine on a shared approach phase.

    Both clocks are rescaled so that first centroid contact happens at
    phase 1 (falling back to whole-run normalisation when a run never makes
    contact), then centroid paths and survivor fractions are sampled on a
    common phase grid.  Centroid error is the root mean square distance
    between the engines' paths; survivor fractions are normalised per force
    and compared at the final shared phase.
    """
    ts_p, red_p, blue_p = pde_centroid_series(pde_traj)
    seps_p = separation_series(red_p, blue_p)
    phase_p = _phase_axis(ts_p, seps_p, contact_radius(pde_scenario))

    steps = ca_traj.steps.astype(float)
    seps_c = separation_series(ca_traj.centroid_red, ca_traj.centroid_blue)
    phase_c = _phase_axis(steps, seps_c, contact_radius(ca_scenario))

    if phase_p is None or phase_c is None:
        phase_p = ts_p / ts_p[-1] if ts_p[-1] > 0 else ts_p
        phase_c = steps / steps[-1] if steps[-1] > 0 else steps

    top = min(phase_p[-1], phase_c[-1])
    grid = np.linspace(0.0, top, n_points)

    def sample(phase, series):
        return np.column_stack(
            [np.interp(grid, phase, series[:, 0]), np.interp(grid, phase, series[:, 1])]
        )

    red_pde = sample(phase_p, red_p)
    blue_pde = sample(phase_p, blue_p)
    red_ca = sample(phase_c, ca_traj.centroid_red)
    blue_ca = sample(phase_c, ca_traj.centroid_blue)

    def rmse(a, b):
        d = np.hypot(a[:, 0] - b[:, 0], a[:, 1] - b[:, 1])
        return float(np.sqrt(np.nanmean(d ** 2)))

    surv_pde_red = np.interp(grid, phase_p, np.interp(ts_p, pde_traj.times, pde_traj.mass_u))
    surv_pde_blue = np.interp(grid, phase_p, np.interp(ts_p, pde_traj.times, pde_traj.mass_v))
    living_red = (ca_traj.alive_red + ca_traj.injured_red).astype(float)
    living_blue = (ca_traj.alive_blue + ca_traj.injured_blue).astype(float)
    surv_ca_red = np.interp(grid, phase_c, living_red)
    surv_ca_blue = np.interp(grid, phase_c, living_blue)

    rows = np.column_stack([
        grid,
        surv_pde_red / max(surv_pde_red[0], 1e-300),
        surv_pde_blue / max(surv_pde_blue[0], 1e-300),
        surv_ca_red / max(surv_ca_red[0], 1e-300),
        surv_ca_blue / max(surv_ca_blue[0], 1e-300),
    ])

    return ComparisonReport(
        pde_name=pde_scenario.name,
        ca_name=ca_scenario.name,
        n_points=n_points,
        phase=grid,
        centroid_rmse_red=rmse(red_pde, red_ca),
        centroid_rmse_blue=rmse(blue_pde, blue_ca),
        survivor_rows=rows,
        final_gap_red=float(abs(rows[-1, 1] - rows[-1, 3])),
        final_gap_blue=float(abs(rows[-1, 2] - rows[-1, 4])),
    )
