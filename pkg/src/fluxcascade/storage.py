"""Snapshot files, sequence manifests and report writers.

Snapshot binary layout: header-free little-endian float64, C order.  The file
holds the components listed in the sidecar's ``layout`` one after another,
each an ``n*n*n`` block indexed ``[i1, i2, i3]`` with ``i3`` fastest:

    u1 | u2 | u3 | p [| dp1 | dp2 | dp3]

The JSON sidecar next to ``snap_NNNNN.bin`` records n_points_per_axis,
box_length, time, nu, T, layout and dtype.  ``sequence.json`` lists the
snapshots in time order.
"""
from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .field import FieldError, FieldSequence, Grid, ScalarField, Snapshot, VectorField

DTYPE = "<f8"
MANIFEST = "sequence.json"


class StorageError(OSError):
    """Missing, truncated or inconsistent files."""


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="\n") as f:
        f.write(text)
    os.replace(tmp, path)


# --- snapshots ----------------------------------------------------------------------------

def snapshot_layout(snap: Snapshot) -> list:
    if snap.pressure is None:
        raise StorageError(f"snapshot at t={snap.time} has no pressure")
    layout = ["u1", "u2", "u3", "p"]
    if snap.pressure_gradient is not None:
        layout += ["dp1", "dp2", "dp3"]
    return layout


def write_snapshot(path, snap: Snapshot, nu: float, T: float) -> dict:
    path = Path(path)
    g = snap.velocity.grid
    layout = snapshot_layout(snap)
    with open(path, "wb") as f:
        for i in range(3):
            f.write(np.ascontiguousarray(snap.velocity.values[i], dtype=DTYPE).tobytes())
        f.write(np.ascontiguousarray(snap.pressure.values, dtype=DTYPE).tobytes())
        if snap.pressure_gradient is not None:
            for i in range(3):
                f.write(np.ascontiguousarray(snap.pressure_gradient.values[i], dtype=DTYPE).tobytes())
    side = {
        "n_points_per_axis": g.n, "box_length": g.box_length, "time": float(snap.time),
        "nu": float(nu), "T": float(T), "layout": layout, "dtype": "float64 little-endian",
        "order": "C (x1 slowest, x3 fastest)", "file": path.name,
    }
    _write_text(path.with_suffix(".json"), dumps(side))
    return side


def read_snapshot(path, mmap: bool = True) -> tuple[Snapshot, dict]:
    path = Path(path)
    side_path = path.with_suffix(".json")
    if not path.exists() or not side_path.exists():
        raise StorageError(f"missing snapshot file or sidecar: {path}")
    side = json.loads(side_path.read_text())
    try:
        grid = Grid(int(side["n_points_per_axis"]), float(side["box_length"]))
        layout = list(side["layout"])
    except (KeyError, FieldError) as exc:
        raise StorageError(f"bad sidecar {side_path}: {exc}") from exc
    shape = (len(layout),) + grid.shape
    expected = int(np.prod(shape)) * 8
    if path.stat().st_size != expected:
        raise StorageError(f"{path}: size {path.stat().st_size} != expected {expected}")
    if mmap:
        data = np.memmap(path, dtype=DTYPE, mode="r", shape=shape)
    else:
        data = np.fromfile(path, dtype=DTYPE).reshape(shape)
    try:
        vel = VectorField(grid, data[0:3])
        p = ScalarField(grid, data[3])
        gp = VectorField(grid, data[4:7]) if len(layout) == 7 else None
    except FieldError as exc:
        raise StorageError(f"{path}: {exc}") from exc
    return Snapshot(float(side["time"]), vel, p, gp), side


class SequenceWriter:
    """Streams snapshots to a directory; ``close`` writes the manifest."""

    def __init__(self, directory, nu: float, T: float, meta: Optional[dict] = None):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.nu = nu
        self.T = T
        self.meta = dict(meta or {})
        self.files: list = []
        self.times: list = []

    def __call__(self, snap: Snapshot) -> None:
        name = f"snap_{len(self.files):05d}.bin"
        write_snapshot(self.dir / name, snap, self.nu, self.T)
        self.files.append(name)
        self.times.append(float(snap.time))

    def close(self, extra_meta: Optional[dict] = None) -> Path:
        if extra_meta:
            self.meta.update(extra_meta)
        man = {"T": self.T, "nu": self.nu, "snapshots": self.files, "times": self.times, "meta": self.meta}
        path = self.dir / MANIFEST
        _write_text(path, dumps(man))
        return path


def write_sequence(directory, seq: FieldSequence) -> Path:
    w = SequenceWriter(directory, seq.nu, seq.T, seq.meta)
    for s in seq:
        w(s)
    return w.close()


def read_sequence(directory, mmap: bool = True) -> FieldSequence:
    d = Path(directory)
    man_path = d / MANIFEST
    if not man_path.exists():
        raise StorageError(f"no {MANIFEST} in {d}")
    man = json.loads(man_path.read_text())
    snaps = [read_snapshot(d / f, mmap)[0] for f in man["snapshots"]]
    try:
        return FieldSequence(snaps, float(man["T"]), float(man["nu"]), dict(man.get("meta", {})))
    except FieldError as exc:
        raise StorageError(f"{d}: {exc}") from exc


# --- reports --------------------------------------------------------------------------------

def write_json(path, obj) -> None:
    _write_text(Path(path), dumps(obj))


SCALE_COLUMNS = ("kind", "R", "n", "K1", "K2_probe", "K2_effective", "e_R", "E_R", "Phi_R",
                 "Phi_R_volume", "Psi_R", "residual_R", "two_form_max_rel", "balance_residual_max_rel")


def scales_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCALE_COLUMNS)
    for r in rows:
        w.writerow([repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else r[c] for c in SCALE_COLUMNS])
    return buf.getvalue()


def bounds_plot_data(report: dict) -> str:
    """Plain columns for gnuplot: R, Psi_R, cascade lower, cascade upper, balance lower, balance upper."""
    rows = {}
    rb = report["reports"]["ball_cascade"]
    for r in rb["rows"] + rb["informational"]:
        if r["R"] is None:
            continue
        d = rows.setdefault(r["R"], {"Psi": r["value"]})
        if r["name"].startswith("cascade"):
            d["lo"], d["hi"] = r["lower"], r["upper"]
        elif r["name"] == "balance-bracket":
            d["blo"], d["bhi"] = r["lower"], r["upper"]
    lines = ["# R Psi_R cascade_lower cascade_upper balance_lower balance_upper"]
    for R in sorted(rows):
        d = rows[R]
        vals = [R, d["Psi"], d.get("lo"), d.get("hi"), d.get("blo"), d.get("bhi")]
        lines.append(" ".join("nan" if v is None else repr(float(v)) for v in vals))
    return "\n".join(lines) + "\n"


def write_report_bundle(directory, report: dict, name: str = "report") -> list:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = []
    p = d / f"{name}.json"
    write_json(p, report)
    out.append(p)
    if "scales" in report:
        p = d / "scales.csv"
        _write_text(p, scales_csv(report["scales"] + report.get("shell_scales", [])))
        out.append(p)
        p = d / "bounds.dat"
        _write_text(p, bounds_plot_data(report))
        out.append(p)
    return out
