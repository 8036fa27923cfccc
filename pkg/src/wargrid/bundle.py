"""Artifact bundles: CSV tables, PGM snapshots and ascii rendering.

A run bundle is a directory holding everything needed to inspect and
reproduce one run: the resolved scenario as config.ini, per-step loss
series and per-snapshot metric series as commented CSV, snapshot fields
as binary PGM plus full-precision CSV, and a human summary.  The bundle
writers consume plain payload dictionaries shaped like the service
responses, so local runs and remote responses produce identical files.

PGM images use the portrait convention: image row 0 is the top of the
arena (largest y), columns run along x, and grey levels scale linearly
from zero to the frame maximum.
"""

import csv
import os

import numpy as np

from .grid import ParameterError

RED_RAMP = " .:-=+*#%@"
BLUE_RAMP = " 123456789"


# ---------------------------------------------------------------------------
# CSV


def _format_cell(value):
    if isinstance(value, str):
        return value
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.10g" % float(value)


def write_csv(path, columns, rows, comments=()):
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])


def read_csv(path):
    """Read a commented CSV back as (comments, columns, rows).

    Cells are floats where they parse as such, otherwise strings.
    """
    comments = []
    with open(path, newline="") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                comments.append(line[1:].strip())
            else:
                lines.append(line)
    reader = csv.reader(lines)
    columns = next(reader)
    rows = []
    for raw in reader:
        row = []
        for cell in raw:
            try:
                row.append(float(cell))
            except ValueError:
                row.append(cell)
        rows.append(row)
    return comments, columns, rows


# ---------------------------------------------------------------------------
# PGM


def grid_to_image(values):
    """Arena array (x, y) to image array (row, col) with y up."""
    return np.asarray(values).T[::-1]


def image_to_grid(img):
    return np.asarray(img)[::-1].T


def write_pgm(path, values, comment=None):
    img = grid_to_image(values).astype(float)
    top = img.max()
    if top > 0:
        img = img / top * 255.0
    data = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n")
        if comment:
            fh.write(f"# {comment}\n".encode())
        fh.write(f"{w} {h}\n255\n".encode())
        fh.write(data.tobytes())


def read_pgm(path):
    """Read a binary PGM written by write_pgm; returns the image array."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ParameterError(f"not a binary PGM file: {path}")
        line = fh.readline()
        while line.startswith(b"#"):
            line = fh.readline()
        w, h = (int(tok) for tok in line.split())
        maxval = int(fh.readline())
        if maxval > 255:
            raise ParameterError("only 8-bit PGM is supported")
        data = np.frombuffer(fh.read(w * h), dtype=np.uint8)
    return data.reshape(h, w)


# ---------------------------------------------------------------------------
# ascii rendering


def _level(value, top):
    # cells fainter than the PGM grey floor draw as empty
    if top <= 0 or value < top / 255.0:
        return 0
    return min(9, max(1, int(np.ceil(9.0 * value / top))))


def ascii_density(red, blue):
    """Ascii picture of two density fields, y up.

    The denser force claims each cell; red uses a symbol ramp, blue uses
    digits, both scaled to their own frame maximum in nine steps.  Cells
    fainter than 1/255 of a force's frame peak draw as empty, matching
    what survives PGM quantisation.
    """
    red = np.asarray(red, dtype=float)
    blue = np.asarray(blue, dtype=float)
    if red.shape != blue.shape:
        raise ParameterError("density fields must share a shape")
    top_r = red.max()
    top_b = blue.max()
    lines = []
    for j in range(red.shape[1] - 1, -1, -1):
        chars = []
        for i in range(red.shape[0]):
            level_r = _level(red[i, j], top_r)
            level_b = _level(blue[i, j], top_b)
            if level_r == 0 and level_b == 0:
                chars.append(" ")
            elif level_r > level_b or (
                    level_r == level_b and red[i, j] >= blue[i, j]):
                chars.append(RED_RAMP[level_r])
            else:
                chars.append(BLUE_RAMP[level_b])
        lines.append("".join(chars))
    return "\n".join(lines) + "\n"


def ascii_lattice(nx, ny, agents, red_flag=None, blue_flag=None):
    """Ascii picture of a lattice roster, y up.

    Agents are (force, x, y, health) with force "red" or "blue"; living
    agents draw as R/B, injured as r/b, flags as *.
    """
    rows = [["."] * nx for _ in range(ny)]

    def put(x, y, ch):
        x, y = int(x), int(y)
        if 0 <= x < nx and 0 <= y < ny:
            rows[ny - 1 - y][x] = ch

    for flag in (red_flag, blue_flag):
        if flag is not None:
            put(flag[0], flag[1], "*")
    for force, x, y, health in agents:
        health = int(health)
        if health <= 0:
            continue
        ch = "R" if str(force) == "red" else "B"
        if health == 1:
            ch = ch.lower()
        put(x, y, ch)
    return "\n".join("".join(r) for r in rows) + "\n"


# ---------------------------------------------------------------------------
# bundle writers


def _write_summary(path, summary):
    with open(path, "w") as fh:
        for key, value in summary.items():
            fh.write(f"{key}: {value}\n")


def _table(payload, key):
    table = payload[key]
    return table["columns"], table["rows"]


def write_run_bundle(out_dir, payload):
    """Write a single-run bundle; returns the list of files written."""
    os.makedirs(out_dir, exist_ok=True)
    snap_dir = os.path.join(out_dir, "snapshots")
    os.makedirs(snap_dir, exist_ok=True)
    written = []

    def emit(name, writer, *args, **kwargs):
        path = os.path.join(out_dir, name)
        writer(path, *args, **kwargs)
        written.append(name)

    engine = payload["engine"]
    stamp = [
        f"scenario: {payload.get('scenario_name', '')}",
        f"engine: {engine}",
        f"seed: {payload.get('seed', 0)}",
    ]

    with open(os.path.join(out_dir, "config.ini"), "w") as fh:
        fh.write(payload["ini"])
    written.append("config.ini")

    emit("losses.csv", write_csv, *_table(payload, "losses"), comments=stamp)
    emit("metrics.csv", write_csv, *_table(payload, "metrics"), comments=stamp)

    for k, snap in enumerate(payload.get("snapshots", ())):
        if engine == "pde":
            label = f"time = {_format_cell(snap['time'])}"
            for force in ("red", "blue"):
                grid = np.asarray(snap[force], dtype=float)
                base = f"snap_{k:03d}_{force}"
                write_pgm(os.path.join(snap_dir, base + ".pgm"), grid, comment=label)
                np.savetxt(os.path.join(snap_dir, base + ".csv"), grid,
                           fmt="%.17g", delimiter=",", header=label)
                written += [f"snapshots/{base}.pgm", f"snapshots/{base}.csv"]
        else:
            step = int(snap["step"])
            base = f"snap_{step:04d}"
            write_csv(os.path.join(snap_dir, base + ".csv"),
                      ("force", "x", "y", "health"), snap["agents"],
                      comments=[f"step = {step}"])
            written.append(f"snapshots/{base}.csv")
            nx, ny = int(payload["nx"]), int(payload["ny"])
            for force in ("red", "blue"):
                grid = np.zeros((nx, ny))
                for f, x, y, health in snap["agents"]:
                    if str(f) == force and int(health) > 0:
                        grid[int(x), int(y)] = 1.0
                name = f"{base}_{force}.pgm"
                write_pgm(os.path.join(snap_dir, name), grid,
                          comment=f"step = {step}")
                written.append(f"snapshots/{name}")

    _write_summary(os.path.join(out_dir, "summary.txt"), payload["summary"])
    written.append("summary.txt")

    if payload.get("error"):
        with open(os.path.join(out_dir, "error.txt"), "w") as fh:
            fh.write(str(payload["error"]) + "\n")
        written.append("error.txt")
    return written


def write_ensemble_bundle(out_dir, payload):
    os.makedirs(out_dir, exist_ok=True)
    written = []
    with open(os.path.join(out_dir, "config.ini"), "w") as fh:
        fh.write(payload["ini"])
    written.append("config.ini")
    columns, rows = _table(payload, "results")
    write_csv(os.path.join(out_dir, "ensemble.csv"), columns, rows,
              comments=[f"scenario: {payload.get('scenario_name', '')}",
                        f"seeds: {payload['seed0']}..{payload['seed0'] + payload['n_seeds'] - 1}"])
    written.append("ensemble.csv")
    _write_summary(os.path.join(out_dir, "summary.txt"), payload["summary"])
    written.append("summary.txt")
    return written


def write_compare_bundle(out_dir, payload):
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for key, name in (("pde_ini", "pde-config.ini"), ("ca_ini", "ca-config.ini")):
        with open(os.path.join(out_dir, name), "w") as fh:
            fh.write(payload[key])
        written.append(name)
    columns, rows = _table(payload, "survivors")
    write_csv(os.path.join(out_dir, "survivors.csv"), columns, rows,
              comments=[f"pde: {payload.get('pde_name', '')}",
                        f"ca: {payload.get('ca_name', '')}"])
    written.append("survivors.csv")
    _write_summary(os.path.join(out_dir, "summary.txt"), payload["summary"])
    written.append("summary.txt")
    return written
