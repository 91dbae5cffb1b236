"""Command-line entry point: ``fluxcascade gen|evolve|analyze|verify|report``.

Configuration is a YAML (or JSON) file with optional blocks; command-line
flags override individual keys.  Defaults:

    grid:     {n: 64, box_length: 2*pi}
    initial:  {type: taylor-green}          # taylor-green | abc | random | zero
              random needs seed; k0 (4), energy (0.5), k_cut (n/3) optional
              abc takes A, B, C (1, 1, 1)
    solver:   {nu: 0.1, dt: 0.01, n_steps: 128, snapshot_every: n_steps/64}
    analysis: see AnalysisConfig (R0 = box_length/6, delta = 0.75, ...)

Exit codes: 0 success, 2 configuration error, 3 data error, 4 bound violated.
"""
from __future__ import annotations

import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import click
import numpy as np
import yaml

from . import diagnostics as dg
from . import storage
from .analysis import AnalysisConfig, AnalysisError, analyze
from .cutoff import CutoffError, make_ball_cutoff
from .field import FieldError, FieldSequence, Grid, ScalarField, Snapshot, VectorField
from .solver import (SolverConfig, SolverError, abc_flow, evolve, global_energy, global_enstrophy,
                     initial_velocity, pressure_from_velocity, SpectralState, taylor_green,
                     taylor_green_pressure)
from .verify import VIOLATED

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_VIOLATION = 0, 2, 3, 4

log = logging.getLogger("fluxcascade")


class ConfigError(click.ClickException):
    exit_code = EXIT_CONFIG


class DataError(click.ClickException):
    exit_code = EXIT_DATA


# --- configuration --------------------------------------------------------------------------

_BLOCKS = ("grid", "initial", "solver", "analysis")


@dataclass
class RunConfig:
    grid: dict = field(default_factory=dict)
    initial: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: Optional[str]) -> "RunConfig":
        if path is None:
            return cls()
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        unknown = set(data) - set(_BLOCKS)
        if unknown:
            raise ConfigError(f"unknown config blocks: {sorted(unknown)}")
        for b in _BLOCKS:
            if not isinstance(data.get(b, {}), dict):
                raise ConfigError(f"config block {b!r} must be a mapping")
        return cls(**{b: dict(data.get(b) or {}) for b in _BLOCKS})

    def override(self, block: str, **kv) -> None:
        getattr(self, block).update({k: v for k, v in kv.items() if v is not None})

    def make_grid(self) -> Grid:
        g = {"n": 64, "box_length": 2 * math.pi, **self.grid}
        unknown = set(g) - {"n", "box_length"}
        if unknown:
            raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
        try:
            return Grid(int(g["n"]), float(g["box_length"]))
        except (FieldError, ValueError, TypeError) as exc:
            raise ConfigError(f"grid: {exc}") from None

    def make_solver(self) -> SolverConfig:
        s = {"nu": 0.1, "dt": 0.01, "n_steps": 128, **self.solver}
        unknown = set(s) - {"nu", "dt", "n_steps", "snapshot_every", "dealias"}
        if unknown:
            raise ConfigError(f"unknown solver keys: {sorted(unknown)}")
        init = {"type": "taylor-green", **self.initial}
        if init["type"] == "random" and "seed" not in init:
            raise ConfigError("random initial data requires a seed")
        try:
            return SolverConfig(nu=float(s["nu"]), dt=float(s["dt"]), n_steps=int(s["n_steps"]),
                                grid=self.make_grid(), initial=init,
                                dealias=float(s.get("dealias", 2.0 / 3.0)),
                                snapshot_every=s.get("snapshot_every"))
        except (SolverError, ValueError, TypeError) as exc:
            raise ConfigError(f"solver: {exc}") from None

    def make_analysis(self) -> AnalysisConfig:
        try:
            return AnalysisConfig.from_dict(self.analysis)
        except (AnalysisError, TypeError, ValueError) as exc:
            raise ConfigError(f"analysis: {exc}") from None


def _load_sequence(path: str) -> FieldSequence:
    try:
        return storage.read_sequence(path)
    except (storage.StorageError, FieldError, OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load sequence {path}: {exc}") from None


def _summary(v: VectorField) -> dict:
    e = global_energy(v)
    ens = global_enstrophy(v)
    # int |grad u|^2 = int |curl u|^2 for periodic solenoidal u
    return {"energy": e, "enstrophy": ens,
            "tau0_estimate": math.sqrt(e / (2 * ens)) if ens > 0 else None}


def _echo_json(obj) -> None:
    click.echo(storage.dumps(obj), nl=False)


# --- commands -------------------------------------------------------------------------------

@click.group()
@click.option("-v", "--verbose", count=True, help="More logging (-vv for debug).")
def main(verbose: int) -> None:
    """Localized energy-flux diagnostics and cascade-bound checks."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("kind", type=click.Choice(["taylor-green", "abc", "random", "zero"]))
@click.option("-o", "--out", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--config", type=click.Path(exists=True, dir_okay=False))
@click.option("--n", type=int, help="Grid points per axis [64].")
@click.option("--box-length", type=float, help="Box side [2*pi].")
@click.option("--nu", type=float, help="Viscosity used for the analytic decay [0.1].")
@click.option("--T", "T", type=float, help="Half window; snapshots span [0, 2T] [1.0].")
@click.option("--snapshots", type=int, default=2, show_default=True,
              help="Analytic snapshots evenly spaced over [0, 2T].")
@click.option("--seed", type=int, help="RNG seed (mandatory for random).")
@click.option("--k0", type=float, help="Spectrum peak for random [4].")
@click.option("--energy", type=float, help="Mean kinetic energy for random [0.5].")
@click.option("--A", "A", type=float)
@click.option("--B", "B", type=float)
@click.option("--C", "C", type=float)
def gen(kind, out, config, n, box_length, nu, T, snapshots, seed, k0, energy, A, B, C):
    """Write an initial or analytic field.

    taylor-green and abc write an exact sequence with analytic pressure at
    evenly spaced times over [0, 2T].  random and zero write the single
    initial snapshot ``initial.bin`` for ``evolve --initial``.
    """
    rc = RunConfig.load(config)
    rc.override("grid", n=n, box_length=box_length)
    rc.override("initial", type=kind, seed=seed, k0=k0, energy=energy, A=A, B=B, C=C)
    grid = rc.make_grid()
    nu = float(rc.solver.get("nu", 0.1) if nu is None else nu)
    T = 1.0 if T is None else T
    if T <= 0 or nu < 0 or snapshots < 2:
        raise ConfigError("need T > 0, nu >= 0 and at least 2 snapshots")
    outp = Path(out)
    outp.mkdir(parents=True, exist_ok=True)
    if kind in ("random", "zero"):
        if kind == "random" and "seed" not in rc.initial:
            raise ConfigError("gen random requires --seed")
        try:
            v = initial_velocity(grid, rc.initial)
        except SolverError as exc:
            raise ConfigError(str(exc)) from None
        st = SpectralState.from_velocity(v)
        storage.write_snapshot(outp / "initial.bin", Snapshot(0.0, v, pressure_from_velocity(st)), nu, T)
        _echo_json({"kind": kind, "initial": rc.initial, **_summary(v)})
        return
    w = storage.SequenceWriter(outp, nu, T, {"generator": kind, "initial": rc.initial})
    first = None
    for t in np.linspace(0.0, 2 * T, snapshots):
        t = float(t)
        if kind == "taylor-green":
            v = taylor_green(grid, t, nu)
            p = taylor_green_pressure(grid, t, nu)
        else:
            ini = {"A": 1.0, "B": 1.0, "C": 1.0, **rc.initial}
            v = abc_flow(grid, ini["A"], ini["B"], ini["C"], t, nu)
            kin = 0.5 * np.sum(v.values ** 2, axis=0)
            p = ScalarField(grid, -(kin - kin.mean()))
        w(Snapshot(t, v, p))
        first = first or v
    w.close()
    _echo_json({"kind": kind, "snapshots": snapshots, "T": T, "nu": nu, **_summary(first)})


@main.command("evolve")
@click.option("-o", "--out", required=True, type=click.Path(file_okay=False))
@click.option("--config", type=click.Path(exists=True, dir_okay=False))
@click.option("--initial", "initial_path", type=click.Path(exists=True, dir_okay=False),
              help="Initial snapshot written by gen (overrides the initial block).")
@click.option("--n", type=int)
@click.option("--nu", type=float)
@click.option("--dt", type=float)
@click.option("--n-steps", type=int)
@click.option("--snapshot-every", type=int)
@click.option("--init", "init_type", type=click.Choice(["taylor-green", "abc", "random", "zero"]))
@click.option("--seed", type=int)
@click.option("--k0", type=float)
def evolve_cmd(out, config, initial_path, n, nu, dt, n_steps, snapshot_every, init_type, seed, k0):
    """Integrate the Navier-Stokes equations and stream snapshots to OUT."""
    rc = RunConfig.load(config)
    rc.override("grid", n=n)
    rc.override("solver", nu=nu, dt=dt, n_steps=n_steps, snapshot_every=snapshot_every)
    rc.override("initial", type=init_type, seed=seed, k0=k0)
    v0 = None
    if initial_path:
        try:
            snap, side = storage.read_snapshot(initial_path, mmap=False)
        except (storage.StorageError, FieldError) as exc:
            raise DataError(str(exc)) from None
        v0 = snap.velocity
        rc.grid.update(n=v0.grid.n, box_length=v0.grid.box_length)
        rc.initial = {"type": "file", "path": Path(initial_path).name}
    elif rc.initial.get("type") == "file":
        raise ConfigError("initial type 'file' needs --initial")
    cfg = rc.make_solver() if v0 is None else _solver_with_file(rc)
    w = storage.SequenceWriter(out, cfg.nu, cfg.T)
    try:
        meta = evolve(cfg, initial=v0, on_snapshot=w, keep=False)
    except SolverError as exc:
        raise DataError(f"solver failed: {exc}") from None
    w.close({"solver": cfg.to_dict(), "energies": meta["energies"]})
    e = meta["energies"]
    _echo_json({"T": cfg.T, "nu": cfg.nu, "snapshots": len(e), "energy_start": e[0], "energy_end": e[-1]})


def _solver_with_file(rc: RunConfig) -> SolverConfig:
    ini = rc.initial
    rc.initial = {"type": "zero"}
    cfg = rc.make_solver()
    rc.initial = ini
    return SolverConfig(cfg.nu, cfg.dt, cfg.n_steps, cfg.grid, ini, cfg.dealias, cfg.snapshot_every)


main.add_command(evolve_cmd, name="evolve")


def _analysis_options(f):
    opts = [
        click.option("--config", type=click.Path(exists=True, dir_okay=False)),
        click.option("--R0", "R0", type=float, help="Integral scale [box_length/6]."),
        click.option("--quadrature", type=click.Choice(list(dg.QUADRATURES)), help="[grid]"),
        click.option("--gamma", type=float, help="Fix gamma instead of choosing it."),
        click.option("--n-scales", type=int, help="Sampled ball radii [8]."),
        click.option("--no-cone", is_flag=True, default=False, help="Radial cutoffs at the rim."),
        click.option("--reference-constants", is_flag=True, default=False, help="Force K1 = K2 = 8."),
        click.option("--warn-only", is_flag=True, default=False,
                     help="Assert bounds even when the time window is too short."),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _run_analysis(data, config, R0, quadrature, gamma, n_scales, no_cone, reference_constants, warn_only,
                  flux_corruption=None) -> dict:
    rc = RunConfig.load(config)
    rc.override("analysis", R0=R0, quadrature=quadrature, gamma=gamma, n_scales=n_scales,
                cone=False if no_cone else None, reference_constants=True if reference_constants else None,
                warn_only=True if warn_only else None, flux_corruption=flux_corruption)
    cfg = rc.make_analysis()
    seq = _load_sequence(data)
    try:
        return analyze(seq, cfg)
    except (AnalysisError, CutoffError) as exc:
        raise ConfigError(str(exc)) from None
    except dg.DiagnosticsError as exc:
        raise DataError(str(exc)) from None


@main.command("analyze")
@click.argument("data", type=click.Path(exists=True, file_okay=False))
@click.option("-o", "--out", required=True, type=click.Path(file_okay=False))
@_analysis_options
def analyze_cmd(data, out, **kw):
    """Compute ensemble averages and bound checks; write report.json, scales.csv, bounds.dat."""
    rep = _run_analysis(data, **kw)
    for p in storage.write_report_bundle(out, rep):
        click.echo(str(p))
    click.echo(f"status: {rep['status']}")


@main.command("verify")
@click.argument("data", type=click.Path(exists=True, file_okay=False))
@click.option("-o", "--out", type=click.Path(file_okay=False), help="Where to write the report bundle.")
@click.option("--report", "report_path", type=click.Path(exists=True, dir_okay=False),
              help="Use an existing analyze report instead of recomputing.")
@click.option("--flux-corruption", type=float, default=None,
              help="TEST HOOK: perturb Psi so that every asserted bound fails.")
@click.option("--local-budget", is_flag=True, default=False,
              help="Check the pointwise-in-time local energy equality instead.")
@click.option("--center", nargs=3, type=float, default=(0.0, 0.0, 0.0), show_default=True)
@click.option("--radius", type=float, help="Ball cutoff radius for --local-budget [box_length/6].")
@click.option("--tol", type=float, default=1e-4, show_default=True, help="Relative residual for --local-budget.")
@_analysis_options
def verify_cmd(data, out, report_path, flux_corruption, local_budget, center, radius, tol, **kw):
    """Check the theorem bounds; exit 4 if any asserted bound is violated."""
    if local_budget:
        seq = _load_sequence(data)
        R = radius or seq.grid.box_length / 6.0
        try:
            psi = make_ball_cutoff(center, R, 2 * R + max(map(abs, center)) + 1.0)
            res = dg.local_budget_check(seq, psi)
        except (CutoffError, dg.DiagnosticsError) as exc:
            raise DataError(str(exc)) from None
        res["tolerance"] = tol
        res["passed"] = res["relative_residual"] <= tol
        if out:
            Path(out).mkdir(parents=True, exist_ok=True)
            storage.write_json(Path(out) / "local_budget.json", res)
        click.echo(f"local budget relative residual {res['relative_residual']:.3e} (tol {tol:g})")
        sys.exit(EXIT_OK if res["passed"] else EXIT_VIOLATION)
    if report_path:
        if flux_corruption:
            raise ConfigError("--flux-corruption needs a fresh analysis, not --report")
        rep = json.loads(Path(report_path).read_text())
    else:
        rep = _run_analysis(data, flux_corruption=flux_corruption, **kw)
    if out:
        storage.write_report_bundle(out, rep, name="verify")
    for name, r in sorted(rep["reports"].items()):
        bad = sum(not row["pass"] for row in r["rows"])
        click.echo(f"{name}: {r['status']} ({len(r['rows'])} asserted, {bad} violated)")
    click.echo(f"status: {rep['status']}")
    sys.exit(EXIT_VIOLATION if rep["status"] == VIOLATED else EXIT_OK)


@main.command("report")
@click.argument("report_json", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", required=True, type=click.Path(file_okay=False))
def report_cmd(report_json, out):
    """Regenerate CSV and plot data from a JSON report and print a summary."""
    try:
        rep = json.loads(Path(report_json).read_text())
        paths = storage.write_report_bundle(out, rep)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"bad report {report_json}: {exc}") from None
    g = rep["global"]
    click.echo(f"R0={rep['R0']:.6g}  tau0={g['tau0']}  gamma={rep['gamma_selected']}  status={rep['status']}")
    click.echo(f"{'R':>10} {'Psi_R':>12} {'nu*E':>12} {'two-form':>10}")
    nu = rep["sequence"]["nu"]
    for r in rep["scales"]:
        click.echo(f"{r['R']:10.4g} {r['Psi_R']:12.5g} {nu * g['E']:12.5g} {r['two_form_max_rel']:10.2e}")
    for p in paths:
        click.echo(str(p))


if __name__ == "__main__":  # pragma: no cover
    main()
