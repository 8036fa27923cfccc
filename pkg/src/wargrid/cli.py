"""Command line front end, a thin client over the HTTP service.

Every subcommand except serve talks to the service API: by default an
in-process instance, or a remote one with --server.  Run results can be
saved as artifact bundles; render draws a saved bundle snapshot as ascii.

Exit codes: 0 on success, 1 when an engine reports a failure (or the
server errors), 2 for bad usage, unknown scenarios or invalid overrides.
"""

import argparse
import glob
import os
import sys
import warnings

import numpy as np

from . import bundle, scenarios
from .grid import ParameterError


def _open_client(server):
    if server:
        import httpx

        return httpx.Client(base_url=server.rstrip("/"), timeout=600.0)
    warnings.filterwarnings(
        "ignore", message="Using `httpx` with `starlette.testclient`")
    from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def _post(client, path, payload):
    resp = client.post(path, json=payload)
    if resp.status_code >= 400:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        print(f"error: {detail}", file=sys.stderr)
        raise SystemExit(2 if resp.status_code < 500 else 1)
    return resp.json()


def _get(client, path):
    resp = client.get(path)
    if resp.status_code >= 400:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        print(f"error: {detail}", file=sys.stderr)
        raise SystemExit(2 if resp.status_code < 500 else 1)
    return resp.json()


def _print_summary(summary):
    width = max(len(k) for k in summary)
    for key, value in summary.items():
        print(f"{key:<{width}}  {value}")


def _add_scenario_args(parser):
    src = parser.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", help="builtin scenario name")
    src.add_argument("--config", help="scenario INI file")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override a scenario field, e.g. t_end=2e-3 or red.w2=40")
    parser.add_argument("--server", help="remote service URL (default: in-process)")


def _scenario_ref(args, set_values=None):
    overrides = {}
    for item in set_values if set_values is not None else args.set:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ParameterError(f"overrides take the form KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    ref = {"overrides": overrides}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            ref["ini"] = fh.read()
    else:
        ref["scenario"] = args.scenario
    return ref


def cmd_run(args, engine):
    payload = _scenario_ref(args)
    payload["seed"] = args.seed
    payload["include_snapshots"] = not args.no_snapshots
    payload["max_snapshots"] = args.max_snapshots
    with _open_client(args.server) as client:
        body = _post(client, f"/run/{engine}", payload)
    _print_summary(body["summary"])
    if args.out:
        files = bundle.write_run_bundle(args.out, body)
        print(f"wrote {len(files)} files to {args.out}")
    return 1 if body.get("error") else 0


def cmd_ensemble(args):
    payload = _scenario_ref(args)
    payload.update(n_seeds=args.seeds, seed0=args.seed0, jobs=args.jobs)
    with _open_client(args.server) as client:
        body = _post(client, "/ensemble", payload)
    _print_summary(body["summary"])
    if args.out:
        files = bundle.write_ensemble_bundle(args.out, body)
        print(f"wrote {len(files)} files to {args.out}")
    return 1 if body["n_failures"] == body["n_seeds"] else 0


def cmd_compare(args):
    class _Ref:
        pass

    pde_args = _Ref()
    pde_args.scenario, pde_args.config = args.pde_scenario, args.pde_config
    ca_args = _Ref()
    ca_args.scenario, ca_args.config = args.ca_scenario, args.ca_config
    payload = {
        "pde": _scenario_ref(pde_args, args.set_pde),
        "ca": _scenario_ref(ca_args, args.set_ca),
        "seed": args.seed,
        "n_points": args.points,
    }
    with _open_client(args.server) as client:
        body = _post(client, "/compare", payload)
    _print_summary(body["summary"])
    if args.out:
        files = bundle.write_compare_bundle(args.out, body)
        print(f"wrote {len(files)} files to {args.out}")
    return 1 if body.get("pde_error") or body.get("ca_error") else 0


def _pick_snapshot(paths, wanted, label):
    if not paths:
        raise ParameterError("bundle has no snapshots to render")
    numbers = [int(os.path.basename(p).split("_")[1].split(".")[0]) for p in paths]
    if wanted is None:
        return paths[-1]
    if wanted in numbers:
        return paths[numbers.index(wanted)]
    raise ParameterError(
        f"no snapshot {label} {wanted}; available: {', '.join(map(str, numbers))}")


def cmd_render(args):
    sc = scenarios.load_ini(os.path.join(args.bundle, "config.ini"))
    snap_dir = os.path.join(args.bundle, "snapshots")
    if sc.engine == "pde":
        reds = sorted(glob.glob(os.path.join(snap_dir, "snap_*_red.csv")))
        path = _pick_snapshot(reds, args.snapshot, "index")
        red = np.loadtxt(path, delimiter=",")
        blue = np.loadtxt(path.replace("_red.csv", "_blue.csv"), delimiter=",")
        payload = {"kind": "density", "red": red.tolist(), "blue": blue.tolist()}
    else:
        rosters = sorted(glob.glob(os.path.join(snap_dir, "snap_*[0-9].csv")))
        path = _pick_snapshot(rosters, args.snapshot, "step")
        _, _, rows = bundle.read_csv(path)
        agents = [(r[0], int(r[1]), int(r[2]), int(r[3])) for r in rows]
        payload = {
            "kind": "lattice", "nx": sc.nx, "ny": sc.ny, "agents": agents,
            "red_flag": [int(v) for v in sc.red.flag],
            "blue_flag": [int(v) for v in sc.blue.flag],
        }
    with _open_client(args.server) as client:
        text = _post(client, "/render", payload)["text"]
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def cmd_scenarios(args):
    with _open_client(args.server) as client:
        if args.name:
            body = _get(client, f"/scenarios/{args.name}")
            print(body["ini"], end="")
        else:
            entries = _get(client, "/scenarios")
            width = max(len(e["name"]) for e in entries)
            for e in entries:
                print(f"{e['name']:<{width}}  [{e['engine']}]  {e['description']}")
    return 0


def cmd_serve(args):
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wargrid",
        description="Two-force combat dynamics: continuum and lattice engines.")
    sub = parser.add_subparsers(dest="command", required=True)

    for engine, blurb in (("pde", "continuum"), ("ca", "lattice")):
        p = sub.add_parser(f"run-{engine}", help=f"run a {blurb} scenario")
        _add_scenario_args(p)
        p.add_argument("--seed", type=int, default=0,
                       help="random seed (lattice engine only)")
        p.add_argument("--out", help="write an artifact bundle here")
        p.add_argument("--max-snapshots", type=int, default=11)
        p.add_argument("--no-snapshots", action="store_true")
        p.set_defaults(func=lambda a, e=engine: cmd_run(a, e))

    p = sub.add_parser("ensemble", help="run many seeds of a lattice scenario")
    _add_scenario_args(p)
    p.add_argument("--seeds", type=int, required=True, help="number of seeds")
    p.add_argument("--seed0", type=int, default=0, help="first seed")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.add_argument("--out", help="write an artifact bundle here")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("compare", help="line up one run from each engine")
    pde_src = p.add_mutually_exclusive_group(required=True)
    pde_src.add_argument("--pde-scenario")
    pde_src.add_argument("--pde-config")
    ca_src = p.add_mutually_exclusive_group(required=True)
    ca_src.add_argument("--ca-scenario")
    ca_src.add_argument("--ca-config")
    p.add_argument("--set-pde", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--set-ca", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=21)
    p.add_argument("--out", help="write an artifact bundle here")
    p.add_argument("--server", help="remote service URL (default: in-process)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("render", help="draw a bundle snapshot as ascii art")
    p.add_argument("--bundle", required=True, help="bundle directory")
    p.add_argument("--snapshot", type=int,
                   help="snapshot index (continuum) or step (lattice); default last")
    p.add_argument("--out", help="write the picture here instead of stdout")
    p.add_argument("--server", help="remote service URL (default: in-process)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("scenarios", help="list builtins or print one as INI")
    p.add_argument("name", nargs="?", help="print this scenario's INI")
    p.add_argument("--server", help="remote service URL (default: in-process)")
    p.set_defaults(func=cmd_scenarios)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:  # server-side errors, already reported
        return exc.code
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
