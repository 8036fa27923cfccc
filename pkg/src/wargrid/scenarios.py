"""Named scenario definitions, INI round-tripping and a shared runner.

A scenario bundles a grid, two force parameter sets and the run settings
for one engine.  The builtin registry covers three families in both
engines: classic fronts (equal forces meet head on and lock), precess
(unequal forces meet and the pair swirls; offset variants seed a rotation
direction) and circle (a timid defender gets surrounded by a bolder
attacker).  Scenarios serialise to a small INI dialect with [scenario],
[force.red] and [force.blue] sections, and any field can be overridden
from key=value strings, so a run is fully described by one text file.
"""

import configparser
import io
from dataclasses import dataclass, fields, replace

import numpy as np

from .ca import CaForceParams, ca_run
from .grid import ParameterError
from .integrator import IntegratorConfig, run as run_pde_trajectory
from .pde import PdeForceParams, initial_state


@dataclass
class PdeScenario:
    name: str
    description: str = ""
    red: PdeForceParams = None
    blue: PdeForceParams = None
    nx: int = 100
    ny: int = 100
    dx: float = 1.0
    dy: float = 1.0
    t_end: float = 1e-2
    tau0: float = 1e-7
    atol: float = 1e-3
    rtol: float = 1e-3
    n_snapshots: int = 81

    engine = "pde"

    def __post_init__(self):
        if self.red is None:
            self.red = PdeForceParams()
        if self.blue is None:
            self.blue = PdeForceParams(
                centre=(35.0, 35.0), goal_velocity=(-20.0, -20.0)
            )
        if self.n_snapshots < 2:
            raise ParameterError("n_snapshots must be at least 2")

    def config(self) -> IntegratorConfig:
        return IntegratorConfig(
            t_end=self.t_end,
            tau0=self.tau0,
            atol=self.atol,
            rtol=self.rtol,
            snapshot_times=tuple(np.linspace(0.0, self.t_end, self.n_snapshots)),
        )


@dataclass
class CaScenario:
    name: str
    description: str = ""
    red: CaForceParams = None
    blue: CaForceParams = None
    nx: int = 100
    ny: int = 100
    n_steps: int = 300
    n_snapshots: int = 11

    engine = "ca"

    def __post_init__(self):
        if self.red is None:
            self.red = CaForceParams()
        if self.blue is None:
            self.blue = CaForceParams(start_centre=(85, 50), flag=(99, 50))
        if self.n_steps < 0:
            raise ParameterError("n_steps must be nonnegative")
        if self.n_snapshots < 2:
            raise ParameterError("n_snapshots must be at least 2")

    def snapshot_steps(self):
        return tuple(
            np.unique(np.linspace(0, self.n_steps, self.n_snapshots).round().astype(int))
        )


def run_scenario(scenario, seed=0):
    """Run a scenario with its stored settings and return the trajectory.

    The seed steers the lattice engine's generator and is ignored by the
    deterministic continuum engine.
    """
    if scenario.engine == "pde":
        state = initial_state(
            scenario.nx, scenario.ny, scenario.red, scenario.blue,
            dx=scenario.dx, dy=scenario.dy,
        )
        return run_pde_trajectory(state, scenario.red, scenario.blue, scenario.config())
    return ca_run(
        scenario.red, scenario.blue, seed=seed, n_steps=scenario.n_steps,
        nx=scenario.nx, ny=scenario.ny, snapshot_steps=scenario.snapshot_steps(),
    )


# ---------------------------------------------------------------------------
# builtin scenarios


def _cf_pde_force(centre, velocity, flag, d=2e-6, beta=8e-8):
    return PdeForceParams(
        peak_density=8.0, radius=5.0, centre=centre, inner_threshold=0.5,
        diffusion=5.0, goal_velocity=velocity, attract_strength=5.0,
        repel_strength=0.5, attract_radius=5.0, repel_radius=2.65,
        sensor_radius=3.0, combat_threshold=100.0, aimed_fire=d,
        area_fire=beta, fire_decay=0.2 if beta else 0.0,
        switch_mode="front", flag=flag,
    )


def _classic_fronts_pde():
    return PdeScenario(
        name="classic-fronts-pde",
        description="Two equal continuum forces advance, meet head on and "
                    "lock into slow parallel fronts.",
        red=_cf_pde_force((15.0, 15.0), (20.0, 20.0), (45.0, 45.0)),
        blue=_cf_pde_force((35.0, 35.0), (-20.0, -20.0), (5.0, 5.0)),
        t_end=1e-2,
    )


def _classic_fronts_pde_offset():
    return PdeScenario(
        name="classic-fronts-pde-offset",
        description="Classic fronts with laterally offset starts: the forces "
                    "brush past each other and carry on to their goals.",
        red=_cf_pde_force((19.0, 15.0), (20.0, 20.0), (41.0, 45.0)),
        blue=_cf_pde_force((31.0, 35.0), (-20.0, -20.0), (9.0, 5.0)),
        t_end=2e-2,
    )


def _precess_pde_force(centre, peak, velocity, repel, sensor, threshold, flag):
    return PdeForceParams(
        peak_density=peak, radius=5.0, centre=centre, inner_threshold=1.0,
        diffusion=5.0, goal_velocity=velocity, attract_strength=5.0,
        repel_strength=repel, attract_radius=5.0, repel_radius=2.65,
        sensor_radius=sensor, combat_threshold=threshold, attack=-1,
        aimed_fire=2e-6, area_fire=8e-8, fire_decay=0.2,
        switch_mode="pursuit", flag=flag,
    )


def _precess_pde(name, mu_red, mu_blue, t_end, note):
    return PdeScenario(
        name=name,
        description="A timid light force and a bold heavy one meet and the "
                    "pair swirls about its joint centre. " + note,
        red=_precess_pde_force(mu_red, 8.0, (60.0, 60.0), 0.5, 3.0, 1e6, (1.0, 1.0)),
        blue=_precess_pde_force(mu_blue, 12.0, (-60.0, -60.0), 1.0, 7.0, 4.0,
                                (49.0, 49.0)),
        t_end=t_end,
    )


def _circle_pde(high_d):
    d = 1e-4 if high_d else 1e-5
    threshold = 20.0 if high_d else 18.0
    sensor_blue = 5.0 if high_d else 4.0
    mk = lambda centre, peak, vel, repel, sensor, flag: PdeForceParams(
        peak_density=peak, radius=5.0, centre=centre, inner_threshold=1.0,
        diffusion=5.0, goal_velocity=vel, attract_strength=5.0,
        repel_strength=repel, attract_radius=5.0, repel_radius=3.1,
        sensor_radius=sensor, combat_threshold=threshold, attack=-1,
        aimed_fire=d, area_fire=0.0, fire_decay=0.0,
        switch_mode="pursuit", flag=flag,
    )
    suffix = "-high-d" if high_d else ""
    note = (" Stronger attrition erodes the ring until the trapped force "
            "breaks away." if high_d else "")
    return PdeScenario(
        name="circle-pde" + suffix,
        description="A bold light force envelops a retreating heavy one and "
                    "holds it encircled." + note,
        red=mk((15.0, 15.0), 8.0, (20.0, 20.0), 0.5, 3.0, (1.0, 1.0)),
        blue=mk((35.0, 35.0), 12.0, (-20.0, -20.0), 1.0, sensor_blue, (49.0, 49.0)),
        t_end=1e-2 if high_d else 8e-3,
    )


def _classic_fronts_ca():
    mk = lambda centre, flag: CaForceParams(
        squad_size=225, w1=0.0, w2=50.0, w3=0.0, w4=50.0, w5=0.0, w6=5.0,
        sensor_range=5, fire_range=3, threshold_range=2, move_range=1,
        prob_hit=2e-3, max_targets=5, defence=1,
        cluster_threshold=0, advance_threshold=0, combat_threshold=3,
        start_centre=centre, start_size=(25, 25), flag=flag,
    )
    return CaScenario(
        name="classic-fronts-ca",
        description="Two equal squads advance, form opposing fronts, grind, "
                    "then slip past each other toward the enemy flags.",
        red=mk((15, 50), (1, 50)),
        blue=mk((85, 50), (99, 50)),
        n_steps=900,
    )


def _precess_ca(flag_offset=False):
    red = CaForceParams(
        squad_size=90, w1=25.0, w2=10.0, w3=75.0, w4=25.0, w5=0.0, w6=50.0,
        sensor_range=5, fire_range=3, threshold_range=2, move_range=1,
        prob_hit=2e-3, max_targets=None, defence=1,
        cluster_threshold=10, advance_threshold=0, combat_threshold=4,
        start_centre=(10, 10), start_size=(20, 20), flag=(1, 1),
    )
    blue = CaForceParams(
        squad_size=90, w1=10.0, w2=35.0, w3=10.0, w4=80.0, w5=0.0, w6=50.0,
        sensor_range=5, fire_range=3, threshold_range=3, move_range=1,
        prob_hit=2e-3, max_targets=None, defence=1,
        cluster_threshold=3, advance_threshold=0, combat_threshold=-5,
        start_centre=(90, 90), start_size=(20, 20), flag=(99, 99),
    )
    if flag_offset:
        blue = replace(blue, flag=(90, 99))
        name = "precess-ca-flag-offset"
        note = (" The displaced blue flag skews the approach and biases the "
                "swirl direction.")
    else:
        name = "precess-ca"
        note = ""
    # run to roughly half strength; past that point the centroid of a
    # depleted force wanders and fake rotation accumulates
    return CaScenario(
        name=name,
        description="Two squads with clashing temperaments meet near the "
                    "centre and the melee slowly rotates." + note,
        red=red,
        blue=blue,
        n_steps=175,
    )


def _circle_ca():
    red = CaForceParams(
        squad_size=200, w1=10.0, w2=50.0, w3=0.0, w4=100.0, w5=0.0, w6=25.0,
        sensor_range=5, fire_range=3, threshold_range=3, move_range=1,
        prob_hit=1e-3, max_targets=999, defence=1,
        cluster_threshold=3, advance_threshold=0, combat_threshold=-7,
        start_centre=(10, 10), start_size=(20, 20), flag=(1, 1),
    )
    blue = CaForceParams(
        squad_size=200, w1=25.0, w2=25.0, w3=75.0, w4=25.0, w5=0.0, w6=75.0,
        sensor_range=5, fire_range=3, threshold_range=3, move_range=1,
        prob_hit=1e-3, max_targets=999, defence=1,
        cluster_threshold=15, advance_threshold=0, combat_threshold=5,
        start_centre=(90, 90), start_size=(20, 20), flag=(99, 99),
    )
    return CaScenario(
        name="circle-ca",
        description="A reckless squad wraps around a cautious one that bunches "
                    "up and gives ground.",
        red=red,
        blue=blue,
        n_steps=400,
    )


_BUILDERS = {
    "classic-fronts-pde": _classic_fronts_pde,
    "classic-fronts-pde-offset": _classic_fronts_pde_offset,
    "classic-fronts-ca": _classic_fronts_ca,
    "precess-pde": lambda: _precess_pde(
        "precess-pde", (15.0, 15.0), (35.0, 35.0), 4e-3,
        "Mirror-symmetric starts leave no preferred direction."),
    "precess-pde-offset-anticlockwise": lambda: _precess_pde(
        "precess-pde-offset-anticlockwise", (18.0, 15.0), (32.0, 35.0), 3.5e-3,
        "Offset starts seed an anticlockwise swirl."),
    "precess-pde-offset-clockwise": lambda: _precess_pde(
        "precess-pde-offset-clockwise", (15.0, 18.0), (35.0, 32.0), 3.5e-3,
        "Offset starts seed a clockwise swirl."),
    "precess-ca": _precess_ca,
    "precess-ca-flag-offset": lambda: _precess_ca(flag_offset=True),
    "circle-pde": lambda: _circle_pde(False),
    "circle-pde-high-d": lambda: _circle_pde(True),
    "circle-ca": _circle_ca,
}


def builtin_names():
    return sorted(_BUILDERS)


def builtin(name):
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ParameterError(
            f"unknown scenario {name!r}; builtins: {', '.join(builtin_names())}"
        ) from None
    return builder()


# ---------------------------------------------------------------------------
# INI round-tripping

_TUPLE_FIELDS = {"centre", "goal_velocity", "flag", "start_centre", "start_size"}
_SCENARIO_META = ("name", "description")


def _format_value(value):
    if value is None:
        return "all"
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(name, kind, text):
    text = text.strip()
    if name == "max_targets":
        return None if text.lower() in ("all", "none") else int(text)
    if name in _TUPLE_FIELDS:
        parts = [p for p in text.replace(",", " ").split() if p]
        if len(parts) != 2:
            raise ParameterError(f"{name} needs two components, got {text!r}")
        return tuple(float(p) for p in parts)
    if kind in (int, "int"):
        return int(text)
    if kind in (float, "float"):
        return float(text)
    return text


def _field_kinds(cls):
    return {f.name: f.type for f in fields(cls)}


def save_ini(scenario, path):
    with open(path, "w") as fh:
        fh.write(to_ini(scenario))


def to_ini(scenario) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["scenario"] = {}
    sec = cp["scenario"]
    sec["name"] = scenario.name
    sec["engine"] = scenario.engine
    sec["description"] = scenario.description
    for f in fields(type(scenario)):
        if f.name in _SCENARIO_META or f.name in ("red", "blue"):
            continue
        sec[f.name] = _format_value(getattr(scenario, f.name))
    for label in ("red", "blue"):
        force = getattr(scenario, label)
        cp[f"force.{label}"] = {
            f.name: _format_value(getattr(force, f.name)) for f in fields(type(force))
        }
    out = io.StringIO()
    cp.write(out)
    return out.getvalue()


def from_ini(text):
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ParameterError(f"bad scenario config: {exc}") from None
    if "scenario" not in cp:
        raise ParameterError("missing [scenario] section")
    unknown = set(cp.sections()) - {"scenario", "force.red", "force.blue"}
    if unknown:
        raise ParameterError(f"unknown sections: {', '.join(sorted(unknown))}")

    meta = dict(cp["scenario"])
    engine = meta.pop("engine", None)
    if engine == "pde":
        scenario_cls, force_cls = PdeScenario, PdeForceParams
    elif engine == "ca":
        scenario_cls, force_cls = CaScenario, CaForceParams
    else:
        raise ParameterError(f"engine must be pde or ca, got {engine!r}")

    kinds = _field_kinds(scenario_cls)
    kwargs = {"name": meta.pop("name", "unnamed"),
              "description": meta.pop("description", "")}
    for key, text_value in meta.items():
        if key not in kinds or key in ("red", "blue"):
            raise ParameterError(f"unknown scenario field {key!r}")
        kwargs[key] = _parse_value(key, kinds[key], text_value)

    force_kinds = _field_kinds(force_cls)
    for label in ("red", "blue"):
        section = f"force.{label}"
        if section not in cp:
            continue
        fkw = {}
        for key, text_value in cp[section].items():
            if key not in force_kinds:
                raise ParameterError(f"unknown {label} force field {key!r}")
            fkw[key] = _parse_value(key, force_kinds[key], text_value)
        kwargs[label] = force_cls(**fkw)
    return scenario_cls(**kwargs)


def load_ini(path):
    with open(path) as fh:
        return from_ini(fh.read())


def apply_overrides(scenario, overrides):
    """Apply {"red.w2": "40", "t_end": "0.02"} style overrides, revalidating."""
    force_kw = {"red": {}, "blue": {}}
    run_kw = {}
    kinds = _field_kinds(type(scenario))
    red_kinds = _field_kinds(type(scenario.red))
    for key, text_value in overrides.items():
        side, _, name = key.partition(".")
        if side in force_kw and name:
            if name not in red_kinds:
                raise ParameterError(f"unknown force field {name!r}")
            force_kw[side][name] = _parse_value(name, red_kinds[name], text_value)
        elif "." in key:
            raise ParameterError(f"override prefix must be red or blue: {key!r}")
        elif key == "engine":
            raise ParameterError("the engine of a scenario cannot be overridden")
        elif key in ("name", "description"):
            run_kw[key] = text_value
        elif key in kinds and key not in ("red", "blue"):
            run_kw[key] = _parse_value(key, kinds[key], text_value)
        else:
            raise ParameterError(f"unknown scenario field {key!r}")
    return replace(
        scenario,
        red=replace(scenario.red, **force_kw["red"]),
        blue=replace(scenario.blue, **force_kw["blue"]),
        **run_kw,
    )
