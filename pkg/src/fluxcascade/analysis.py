"""End-to-end cascade analysis of a field sequence.

Builds coverings at the sampled scales, measures the constants (C0 from cutoff
certification and node-level ratios, K1 and K2 from the coverings), runs the
diagnostics in two passes over the snapshots and hands the averages to
``verify``.  The result is a plain dict so that it serializes byte-identically.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from . import diagnostics as dg
from . import verify as vf
from .covering import Covering, build_ball_covering, build_shell_covering, verify_covering
from .cutoff import certify_bounds, make_global_psi0, make_shell_cutoff, make_temporal_cutoff
from .field import FieldSequence

log = logging.getLogger(__name__)


class AnalysisError(ValueError):
    """Invalid analysis configuration."""


@dataclass
class AnalysisConfig:
    R0: Optional[float] = None           # default box_length / 6
    delta: float = 0.75
    n_scales: int = 8
    quadrature: str = "grid"
    cone: bool = True
    certify_samples: Optional[int] = None  # default: the certifier's own (1e5 radial, 2.5e5 cone)
    gamma: Optional[float] = None        # default: largest admissible on the 0.1 grid
    margin: float = 0.1
    shell_x0: tuple = (0.0, 0.0, 0.0)
    shell_radii: Optional[tuple] = None  # (R1, R2); default (R0/2, R0/4) when resolvable
    locality_k: tuple = (-2, -1, 1, 2)
    max_shell_scales: int = 4
    reference_constants: bool = False        # K1 = K2 = 8 instead of the measured pair
    warn_only: bool = False
    flux_corruption: float = 0.0         # test hook: pushes Psi outside every bracket

    def __post_init__(self):
        if self.R0 is not None and not self.R0 > 0:
            raise AnalysisError("R0 must be positive")
        if self.n_scales < 1:
            raise AnalysisError("n_scales must be >= 1")
        if self.quadrature not in dg.QUADRATURES:
            raise AnalysisError(f"quadrature must be one of {dg.QUADRATURES}")
        if self.gamma is not None and not (0 < self.gamma < 1):
            raise AnalysisError("gamma must lie in (0, 1)")
        if not (0 <= self.margin < 1):
            raise AnalysisError("margin must lie in [0, 1)")
        self.shell_x0 = tuple(float(x) for x in self.shell_x0)
        self.locality_k = tuple(int(k) for k in self.locality_k)
        if self.shell_radii is not None:
            self.shell_radii = tuple(float(r) for r in self.shell_radii)

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise AnalysisError(f"unknown analysis keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shell_x0"] = list(self.shell_x0)
        d["locality_k"] = list(self.locality_k)
        d["shell_radii"] = list(self.shell_radii) if self.shell_radii else None
        return d


# --- constants ------------------------------------------------------------------------------

class _Certifier:
    """Caches lap constants: once per interior shape, once per cone radius |x0|.

    psi0 and S(0, R0) are rotation invariant, so a cone cutoff's ratios depend
    on its centre only through |x0|.
    """

    def __init__(self, samples: Optional[int]):
        self.samples = samples
        self.cache: dict = {}
        self.unstable: list = []

    def lap(self, c) -> float:
        key = (c.kind, tuple(c.radii)) if c.kind.endswith("interior") or c.kind == "global-psi0" \
            else (c.kind, tuple(c.radii), round(float(np.linalg.norm(c.center)), 12))
        if key not in self.cache:
            b = certify_bounds(c, self.samples)
            if not b.stable:
                self.unstable.append({"kind": c.kind, "center": list(map(float, c.center)),
                                      "lap_change": b.lap_change, "grad_change": b.grad_change})
            self.cache[key] = b.lap_refined
        return self.cache[key]


def _family_lap(stencils: Sequence[dg.Stencil], cert: _Certifier) -> tuple[float, float]:
    """(max certified lap constant, max node-level lap ratio) over a covering."""
    certified = max(cert.lap(st.cutoff) for st in stencils)
    node = max(st.node_lap_ratio for st in stencils)
    return certified, node


def _k2_effective(cov: Covering, nc: dg.NodeCertificate) -> int:
    return int(max(cov.K2, math.ceil(nc.e_overlap - 1e-9), math.ceil(nc.E_overlap - 1e-9)))


def _key(R: float) -> float:
    return float(f"{R:.12g}")


# --- the pipeline -----------------------------------------------------------------------------

def analyze(seq: FieldSequence, cfg: Optional[AnalysisConfig] = None) -> dict:
    cfg = cfg or AnalysisConfig()
    grid = seq.grid
    R0 = cfg.R0 if cfg.R0 is not None else grid.box_length / 6.0
    h = grid.spacing
    R_res = 4.0 * h
    if R_res > R0:
        raise AnalysisError(f"R0={R0} is below the resolution limit 4h={R_res}")
    delta = cfg.delta
    notes: list = []
    tw = dg.time_weights(seq, delta)
    window_ok = vf.check_time_window(seq.T, R0, seq.nu)
    if not window_ok:
        notes.append(f"T={seq.T:.6g} < R0^2/nu={R0 * R0 / seq.nu:.6g}")

    # pass 1: global averages
    gst = dg.global_stencils(R0, grid, delta)
    glob = dg.global_from_series(dg.element_series(seq, gst, cfg.quadrature), tw, seq.nu, R0)

    cert = _Certifier(cfg.certify_samples)
    temporal = certify_bounds(make_temporal_cutoff(seq.T, delta))
    C_t = temporal.grad_refined
    psi0_lap = cert.lap(make_global_psi0(R0, delta))

    coverings: dict = {}
    stencils: dict = {}

    def ball(R):
        k = _key(R)
        if k not in coverings:
            cov = build_ball_covering(R0, R)
            coverings[k] = cov
            stencils[k] = dg.covering_stencils(cov, grid, delta, cfg.cone)
        return coverings[k], stencils[k]

    psi0_st = gst[0]

    def ball_constants(scales, gamma):
        K1 = K2 = 1
        lap = psi0_lap
        for R in scales:
            cov, sts = ball(R)
            nc = dg.node_certificate(sts, psi0_st, grid.n ** 3)
            K1 = max(K1, cov.K1)
            K2 = max(K2, _k2_effective(cov, nc))
            lap = max(lap, *_family_lap(sts, cert))
        if cfg.reference_constants:
            K1 = K2 = 8
        return vf.Constants(C_t + lap, K1, K2, gamma)

    # scale selection: iterate until the sampled scales reproduce the range they imply
    scales = np.geomspace(R_res, R0, cfg.n_scales)
    gamma = cfg.gamma
    k_ball = None
    for _ in range(4):
        k_ball = ball_constants(scales, gamma or 0.9)
        if glob.tau0 is None:
            break
        g = cfg.gamma or vf.choose_gamma(glob.tau0, k_ball, R0, cfg.margin)
        if g is None:
            gamma = None
            break
        gamma = g
        k_ball = k_ball.with_gamma(g)
        R_min = glob.tau0 / (k_ball.c * g)
        new = np.geomspace(max(R_min, R_res), R0, cfg.n_scales)
        if R_min < R_res:
            notes.append(f"inertial range starts at {R_min:.6g} below the resolution limit {R_res:.6g}")
        if np.allclose(new, scales, rtol=1e-12):
            break
        scales = new
    if gamma is None and glob.tau0 is not None:
        notes.append(f"no gamma in {vf.GAMMA_GRID} meets tau0 <= (1 - {cfg.margin}) c gamma R0; "
                     f"reporting with gamma=0.9")
    scales = [float(s) for s in scales]

    # shells
    def shell_scale_ok(R):
        return R_res * (1 - 1e-12) <= R <= 0.5 * R0 * (1 + 1e-12)

    cond_pre = vf.check_cascade_condition(glob, k_ball) if glob.tau0 is not None else None
    if cond_pre is not None and cond_pre.satisfied:
        wanted = {_key(R * 2.0 ** k) for R in scales for k in cfg.locality_k}
        lo = cond_pre.inertial_range[0]
        shell_scales = sorted(R for R in wanted if shell_scale_ok(R) and R >= lo * (1 - 1e-12))
    elif R_res <= 0.5 * R0:
        m = max(1, min(cfg.max_shell_scales, cfg.n_scales))
        shell_scales = [float(r) for r in np.geomspace(R_res, 0.5 * R0, m)]
    else:
        shell_scales = []
    shell_covs: dict = {}
    shell_sts: dict = {}
    for R in shell_scales:
        cov = build_shell_covering(R0, R)
        shell_covs[_key(R)] = cov
        shell_sts[_key(R)] = dg.covering_stencils(cov, grid, delta, True)

    # single shell
    if cfg.shell_radii is not None:
        R1, R2 = cfg.shell_radii
    else:
        R1, R2 = 0.5 * R0, 0.25 * R0
        if min(R2, R1 - R2) < R_res:
            R1, R2 = R0, 0.5 * R0
            notes.append("default single shell (R0/2, R0/4) under-resolved; using (R0, R0/2)")
    single_cut = make_shell_cutoff(cfg.shell_x0, R1, R2, R0, delta)
    if min(R2, R1 - R2) >= R_res:
        single = [dg.build_stencil(single_cut, grid)]
    else:
        single = []
        notes.append(f"single shell ({R1:.6g}, {R2:.6g}) under-resolved; skipped")

    # pass 2: every element of every covering in one sweep over the snapshots
    blocks = [("ball", _key(R), stencils[_key(R)]) for R in scales]
    blocks += [("shell", k, shell_sts[k]) for k in sorted(shell_sts)]
    if single:
        blocks += [("single", 0.0, single)]
    flat = [st for _, _, sts in blocks for st in sts]
    series = dg.element_series(seq, flat, cfg.quadrature)
    out_ens = {"ball": {}, "shell": {}}
    i = 0
    single_series = None
    for kind, k, sts in blocks:
        part = series[:, i:i + len(sts), :]
        i += len(sts)
        if kind == "single":
            single_series = part
            continue
        cov = coverings[k] if kind == "ball" else shell_covs[k]
        out_ens[kind][k] = dg.ensemble_from_series(part, sts, tw, seq.nu, cov, psi0_st, grid)

    sb = None
    if single:
        el = dg.combine(single_series, tw, seq.nu)
        e_s, E_s = float(el.e[0]), float(el.E[0])
        sb = dg.ShellBudget(R1, R2, min(R2, R1 - R2), e_s, E_s, float(el.Phi[0]), float(el.Phi_volume[0]),
                            float(el.Psi[0]), float(el.residual[0]),
                            float(np.sqrt(e_s / E_s)) if E_s > 0 else None, single_cut.kind,
                            single[0].node_lap_ratio)

    # constants for the shell family and the single shell
    shell_lap = 0.0
    K1s = K2s = 1
    for k, sts in shell_sts.items():
        nc = out_ens["shell"][k].certificate
        K1s = max(K1s, shell_covs[k].K1)
        K2s = max(K2s, _k2_effective(shell_covs[k], nc))
        shell_lap = max(shell_lap, *_family_lap(sts, cert))
    if cfg.reference_constants:
        K1s = K2s = 8
    g_use = gamma or 0.9
    k_shell = vf.Constants(C_t + max(shell_lap, psi0_lap), K1s, K2s, g_use)
    single_lap = max([cert.lap(single_cut)] + [st.node_lap_ratio for st in single])
    k_single = vf.Constants(C_t + single_lap, 1, 1, g_use)

    if cfg.flux_corruption:
        notes.append(f"TEST HOOK: Psi corrupted by factor {cfg.flux_corruption}")
        for fam in out_ens.values():
            for e in fam.values():
                bump = cfg.flux_corruption * (abs(e.Psi_R) + seq.nu * e.E_R
                                              + seq.nu * k_ball.C0 * e.e_R / e.R ** 2 + 1.0)
                e.Psi_R += bump
                e.tilde["Psi"] += bump * e.R ** 3
        if sb is not None:
            sb.Psi_shell += cfg.flux_corruption * (abs(sb.Psi_shell) + seq.nu * sb.E_shell
                                                   + seq.nu * k_single.C0 * sb.e_shell / sb.R_tilde ** 2 + 1.0)

    balls = [out_ens["ball"][_key(R)] for R in scales]
    shells = [out_ens["shell"][k] for k in sorted(out_ens["shell"])]
    reports = {}
    rb = vf.check_theorem_ball_cascade(glob, balls, k_ball, seq.nu, window_ok, cfg.warn_only)
    reports["ball_cascade"] = rb
    cov_reports = []
    for e, R in zip(balls, scales):
        cov = coverings[_key(R)]
        cov_reports.append(vf.check_covering_inequalities(glob, e, cov.K1, _k2_effective(cov, e.certificate),
                                                          cfg.cone))
    for e in shells:
        cov = shell_covs[_key(e.R)]
        cov_reports.append(vf.shell_covering_inequalities(glob, e, cov.K1, _k2_effective(cov, e.certificate)))
    reports["covering_inequalities"] = _merge("covering-inequalities", cov_reports)
    if sb is not None:
        reports["shell_locality"] = vf.check_theorem_shell_locality(sb, k_single, seq.nu, window_ok)
    else:
        reports["shell_locality"] = vf.TheoremReport("shell-locality", status=vf.UNVERIFIABLE,
                                                     notes=["shell cutoff under-resolved on this grid"])
    reports["shell_ensemble"] = vf.check_theorem_shell_ensemble(glob, shells, k_shell, seq.nu, window_ok,
                                                                cfg.warn_only)
    rng = rb.inertial_range if rb.status != vf.UNVERIFIABLE else None
    pairs = vf.exp_locality_pairs(scales, cfg.locality_k)
    ball_map = {_key(R): out_ens["ball"][_key(R)] for R in scales}
    shell_map = dict(out_ens["shell"])
    ep = glob.E_prime / glob.E if (not cfg.cone and glob.E > 0) else None
    reports["locality"] = vf.locality_ratios(ball_map, shell_map, k_ball, k_shell, rng,
                                             [(_key(a), _key(b)) for a, b in pairs], ep)

    # data quality: flux two-form disagreement and balance residual per scale
    rows = []
    for e, R in zip(balls, scales):
        cov = coverings[_key(R)]
        cc = verify_covering(cov, per_axis=40, sphere=10_000)
        rows.append(_scale_row("ball", e, cov, seq.nu, cc))
    shell_rows = []
    for e in shells:
        cov = shell_covs[_key(e.R)]
        cc = verify_covering(cov, per_axis=40, sphere=10_000)
        shell_rows.append(_scale_row("shell", e, cov, seq.nu, cc))
    if cert.unstable:
        notes.append(f"{len(cert.unstable)} cutoff certifications changed > 1% under refinement")

    report = {
        "config": cfg.to_dict(),
        "grid": grid.to_dict(),
        "sequence": {"T": seq.T, "nu": seq.nu, "n_snapshots": len(seq),
                     "t0": float(seq.times[0]), "t1": float(seq.times[-1])},
        "R0": R0,
        "resolution_limit": R_res,
        "time_window_ok": window_ok,
        "global": glob.to_dict(),
        "constants": {
            "C_time": C_t, "C_lap_psi0": psi0_lap,
            "ball": k_ball.to_dict(), "shell": k_shell.to_dict(), "single_shell": k_single.to_dict(),
            "unstable_certifications": cert.unstable,
        },
        "gamma_selected": gamma,
        "scales": rows,
        "shell_scales": shell_rows,
        "single_shell": sb.to_dict() if sb is not None else None,
        "reports": {k: r.to_dict() for k, r in reports.items()},
        "notes": notes,
    }
    report["status"] = overall_status(report)
    return report


def _merge(name: str, reps: list) -> vf.TheoremReport:
    out = vf.TheoremReport(name)
    for r in reps:
        out.rows.extend(r.rows)
        out.informational.extend(r.informational)
        out.notes.extend(r.notes)
    return out.finalize(True)


def _scale_row(kind: str, e: dg.EnsembleAverages, cov: Covering, nu: float, cc) -> dict:
    el = e.elements
    scale = np.maximum(np.abs(el.Phi), nu * el.E)
    with np.errstate(divide="ignore", invalid="ignore"):
        two_form = np.where(scale > 0, np.abs(el.Phi - el.Phi_volume) / scale, 0.0)
        resid = np.where(scale > 0, np.abs(el.residual) / scale, 0.0)
    return {
        "kind": kind, "R": e.R, "n": e.n, "K1": cov.K1, "K2_probe": cov.K2,
        "K2_effective": _k2_effective(cov, e.certificate),
        "e_R": e.e_R, "E_R": e.E_R, "Phi_R": e.Phi_R, "Phi_R_volume": e.Phi_R_volume,
        "Psi_R": e.Psi_R, "residual_R": e.residual_R,
        "tilde": dict(e.tilde),
        "two_form_max_rel": float(two_form.max(initial=0.0)),
        "balance_residual_max_rel": float(resid.max(initial=0.0)),
        "element_kinds": dict(e.kinds),
        "node_certificate": e.certificate.to_dict(),
        "node_C0_lap": e.node_C0_lap,
        "covering_certificate": cc.to_dict(),
    }


def overall_status(report: dict) -> str:
    st = [r["status"] for r in report["reports"].values()]
    if vf.VIOLATED in st:
        return vf.VIOLATED
    if all(s == vf.VERIFIED for s in st):
        return vf.VERIFIED
    return vf.UNVERIFIABLE
