"""HTTP service exposing scenario runs, ensembles, comparison and rendering.

Thin orchestration only: resolve the requested scenario, call the engine,
fold the trajectory through the analysis helpers and return tables shaped
for the bundle writers.  Invalid scenarios and overrides answer 422;
engine failures (for example a stiff integration) still answer 200 with
the error recorded in the body, because the partial trajectory is data.
"""

import time

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .. import __version__, analysis, bundle, scenarios
from ..grid import ParameterError
from .schemas import (
    CaRunResponse,
    CompareRequest,
    CompareResponse,
    EnsembleRequest,
    EnsembleResponse,
    PdeRunResponse,
    RenderRequest,
    RenderResponse,
    RunRequest,
    ScenarioDetail,
    ScenarioInfo,
    Table,
    finite_or_none,
    safe_rows,
)

ENSEMBLE_RESULT_COLUMNS = (
    "seed", "rotation", "direction", "crossed", "cross_step",
    "survivors_red", "survivors_blue",
    "goal_distance_red", "goal_distance_blue", "error",
)


def _resolve(ref):
    sc = scenarios.builtin(ref.scenario) if ref.scenario else scenarios.from_ini(ref.ini)
    if ref.overrides:
        sc = scenarios.apply_overrides(sc, ref.overrides)
    return sc


def _require_engine(sc, engine):
    if sc.engine != engine:
        raise ParameterError(
            f"scenario {sc.name!r} uses engine {sc.engine!r}, expected {engine!r}"
        )
    return sc


def _snapshot_indices(n, req):
    if not req.include_snapshots or req.max_snapshots == 0 or n == 0:
        return []
    return list(np.unique(np.round(
        np.linspace(0, n - 1, min(n, req.max_snapshots))).astype(int)))


def _table(columns, rows):
    return Table(columns=list(columns), rows=safe_rows(np.asarray(rows).tolist()))


def _fmt(value, spec="%.6g"):
    return spec % value


def _run_pde_payload(sc, req):
    started = time.perf_counter()
    traj = scenarios.run_scenario(sc)
    wall = time.perf_counter() - started

    loss_cols, loss_rows = analysis.pde_loss_table(traj)
    met_cols, met_rows = analysis.pde_metric_table(traj, sc)
    i = {c: k for k, c in enumerate(met_cols)}
    snaps = [
        {
            "time": float(traj.snapshots[k][0]),
            "red": traj.snapshots[k][1].values.tolist(),
            "blue": traj.snapshots[k][2].values.tolist(),
        }
        for k in _snapshot_indices(len(traj.snapshots), req)
    ]
    summary = {
        "scenario": sc.name,
        "engine": "pde",
        "status": "failed: " + traj.error if traj.error else "ok",
        "wall_time": _fmt(wall, "%.2f") + " s",
        "accepted_steps": str(len(traj.times)),
        "time_reached": _fmt(traj.times[-1]) + " of " + _fmt(sc.t_end),
        "mass_red": _fmt(traj.mass_u[0]) + " -> " + _fmt(traj.mass_u[-1]),
        "mass_blue": _fmt(traj.mass_v[0]) + " -> " + _fmt(traj.mass_v[-1]),
        "loss_red": _fmt(traj.loss_u[-1]),
        "loss_blue": _fmt(traj.loss_v[-1]),
        "separation_end": _fmt(met_rows[-1, i["separation"]]),
        "aspect_red_end": _fmt(met_rows[-1, i["aspect_red"]]),
        "aspect_blue_end": _fmt(met_rows[-1, i["aspect_blue"]]),
        "rotation_end": _fmt(met_rows[-1, i["rotation"]]),
        "encircle_red_max": _fmt(met_rows[:, i["encircle_blue_around_red"]].max()),
        "encircle_blue_max": _fmt(met_rows[:, i["encircle_red_around_blue"]].max()),
    }
    return {
        "engine": "pde",
        "scenario_name": sc.name,
        "seed": req.seed,
        "ini": scenarios.to_ini(sc),
        "nx": sc.nx,
        "ny": sc.ny,
        "error": traj.error,
        "wall_time": wall,
        "summary": summary,
        "losses": _table(loss_cols, loss_rows),
        "metrics": _table(met_cols, met_rows),
        "snapshots": snaps,
    }


def _run_ca_payload(sc, req):
    started = time.perf_counter()
    traj = scenarios.run_scenario(sc, seed=req.seed)
    wall = time.perf_counter() - started

    loss_cols, loss_rows = analysis.ca_loss_table(traj)
    met_cols, met_rows = analysis.ca_metric_table(traj, sc)
    folded = analysis.summarise_ca_run(sc, req.seed, traj)
    snaps = []
    for k in _snapshot_indices(len(traj.snapshots), req):
        step, pos, health = traj.snapshots[k]
        agents = [
            ("red" if a < traj.n_red else "blue",
             int(pos[a, 0]), int(pos[a, 1]), int(health[a]))
            for a in range(len(health))
        ]
        snaps.append({"step": int(step), "agents": agents})
    summary = {
        "scenario": sc.name,
        "engine": "ca",
        "status": "ok",
        "seed": str(req.seed),
        "wall_time": _fmt(wall, "%.2f") + " s",
        "steps": str(int(traj.steps[-1])),
        "red_final": "%d alive, %d injured" % (traj.alive_red[-1], traj.injured_red[-1]),
        "blue_final": "%d alive, %d injured" % (traj.alive_blue[-1], traj.injured_blue[-1]),
        "crossed": ("at step %d" % folded.cross_step) if folded.crossed else "no",
        "rotation": _fmt(folded.rotation) + " (" + folded.direction + ")",
        "goal_distance_red": _fmt(folded.goal_distance_red),
        "goal_distance_blue": _fmt(folded.goal_distance_blue),
    }
    return {
        "engine": "ca",
        "scenario_name": sc.name,
        "seed": req.seed,
        "ini": scenarios.to_ini(sc),
        "nx": sc.nx,
        "ny": sc.ny,
        "error": None,
        "wall_time": wall,
        "summary": summary,
        "losses": _table(loss_cols, loss_rows),
        "metrics": _table(met_cols, met_rows),
        "snapshots": snaps,
    }


def create_app() -> FastAPI:
    app = FastAPI(title="wargrid", version=__version__)

    @app.exception_handler(ParameterError)
    async def _parameter_error(request, exc):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/scenarios", response_model=list[ScenarioInfo])
    def list_scenarios():
        out = []
        for name in scenarios.builtin_names():
            sc = scenarios.builtin(name)
            out.append(ScenarioInfo(
                name=sc.name, engine=sc.engine, description=sc.description))
        return out

    @app.get("/scenarios/{name}", response_model=ScenarioDetail)
    def scenario_detail(name: str):
        if name not in scenarios.builtin_names():
            raise HTTPException(status_code=404, detail=f"unknown scenario {name!r}")
        sc = scenarios.builtin(name)
        return ScenarioDetail(name=sc.name, engine=sc.engine,
                              description=sc.description, ini=scenarios.to_ini(sc))

    @app.post("/run/pde", response_model=PdeRunResponse)
    def run_pde(req: RunRequest):
        sc = _require_engine(_resolve(req), "pde")
        return _run_pde_payload(sc, req)

    @app.post("/run/ca", response_model=CaRunResponse)
    def run_ca(req: RunRequest):
        sc = _require_engine(_resolve(req), "ca")
        return _run_ca_payload(sc, req)

    @app.post("/ensemble", response_model=EnsembleResponse)
    def run_ensemble(req: EnsembleRequest):
        sc = _require_engine(_resolve(req), "ca")
        report = analysis.ensemble(sc, req.n_seeds, seed0=req.seed0, jobs=req.jobs)
        rows = [
            [r.seed, finite_or_none(r.rotation), r.direction,
             int(r.crossed), r.cross_step, r.survivors_red, r.survivors_blue,
             finite_or_none(r.goal_distance_red),
             finite_or_none(r.goal_distance_blue), r.error or ""]
            for r in report.results
        ]
        counts = report.direction_counts()
        summary = {
            "scenario": sc.name,
            "engine": "ca",
            "seeds": "%d starting at %d" % (req.n_seeds, req.seed0),
            "wall_time": _fmt(report.wall_time, "%.2f") + " s",
            "failures": str(len(report.failures)),
            "clockwise": str(counts["clockwise"]),
            "anticlockwise": str(counts["anticlockwise"]),
            "none": str(counts["none"]),
            "precession_fraction": _fmt(report.precession_fraction, "%.3f"),
            "crossed_fraction": _fmt(report.crossed_fraction, "%.3f"),
        }
        return EnsembleResponse(
            scenario_name=sc.name,
            ini=scenarios.to_ini(sc),
            n_seeds=req.n_seeds,
            seed0=req.seed0,
            jobs=req.jobs,
            wall_time=report.wall_time,
            counts=counts,
            precession_fraction=report.precession_fraction,
            crossed_fraction=report.crossed_fraction,
            n_failures=len(report.failures),
            summary=summary,
            results=Table(columns=list(ENSEMBLE_RESULT_COLUMNS), rows=rows),
        )

    @app.post("/compare", response_model=CompareResponse)
    def compare(req: CompareRequest):
        pde_sc = _require_engine(_resolve(req.pde), "pde")
        ca_sc = _require_engine(_resolve(req.ca), "ca")
        started = time.perf_counter()
        pde_traj = scenarios.run_scenario(pde_sc)
        ca_traj = scenarios.run_scenario(ca_sc, seed=req.seed)
        report = analysis.compare_runs(
            pde_traj, ca_traj, pde_sc, ca_sc, n_points=req.n_points)
        wall = time.perf_counter() - started
        summary = {
            "pde_scenario": pde_sc.name,
            "ca_scenario": ca_sc.name,
            "seed": str(req.seed),
            "wall_time": _fmt(wall, "%.2f") + " s",
            "pde_status": "failed: " + pde_traj.error if pde_traj.error else "ok",
            "centroid_rmse_red": _fmt(report.centroid_rmse_red),
            "centroid_rmse_blue": _fmt(report.centroid_rmse_blue),
            "final_gap_red": _fmt(report.final_gap_red),
            "final_gap_blue": _fmt(report.final_gap_blue),
        }
        return CompareResponse(
            pde_name=pde_sc.name,
            ca_name=ca_sc.name,
            pde_ini=scenarios.to_ini(pde_sc),
            ca_ini=scenarios.to_ini(ca_sc),
            pde_error=pde_traj.error,
            ca_error=None,
            wall_time=wall,
            centroid_rmse_red=finite_or_none(report.centroid_rmse_red),
            centroid_rmse_blue=finite_or_none(report.centroid_rmse_blue),
            final_gap_red=finite_or_none(report.final_gap_red),
            final_gap_blue=finite_or_none(report.final_gap_blue),
            summary=summary,
            survivors=_table(analysis.SURVIVOR_COLUMNS, report.survivor_rows),
        )

    @app.post("/render", response_model=RenderResponse)
    def render(req: RenderRequest):
        if req.kind == "density":
            text = bundle.ascii_density(np.asarray(req.red), np.asarray(req.blue))
        else:
            text = bundle.ascii_lattice(
                req.nx, req.ny, req.agents,
                red_flag=req.red_flag, blue_flag=req.blue_flag)
        return RenderResponse(text=text)

    return app


app = create_app()
