"""Hypothesis checks and inequality assertions on diagnostics outputs.

Nothing here integrates a field: every function takes the averaged quantities
produced by ``diagnostics`` and compares them with the bounds.  A report never
claims the bounds are false; when a hypothesis is unmet it says so, and a
violated bound with the hypotheses in place is an implementation defect.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .diagnostics import EnsembleAverages, GlobalAverages, ShellBudget


class VerifyError(ValueError):
    """Undefined inputs, e.g. tau0 of an identically zero flow."""


VERIFIED = "verified"
VIOLATED = "violated"
UNVERIFIABLE = "unverifiable"
NO_RANGE = "no-inertial-range"

GAMMA_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))
REL_SLACK = 1e-12


@dataclass(frozen=True)
class Constants:
    C0: float
    K1: float
    K2: float
    gamma: float = 0.5

    def __post_init__(self):
        if not (self.C0 > 0 and self.K1 >= 1 and self.K2 >= 1):
            raise VerifyError(f"need C0 > 0 and K1, K2 >= 1, got {self.C0}, {self.K1}, {self.K2}")
        if not (0 < self.gamma < 1):
            raise VerifyError(f"gamma must lie in (0, 1), got {self.gamma}")

    @property
    def c(self) -> float:
        return 1.0 / math.sqrt(self.C0 * self.K1 * self.K2)

    @property
    def c1(self) -> float:
        return 1.0 / self.K1

    @property
    def c2(self) -> float:
        return self.C0 * self.K1 * self.K2

    @property
    def c0_gamma(self) -> float:
        return (1.0 - self.gamma ** 2) / self.K1

    @property
    def c1_gamma(self) -> float:
        return self.K2 * (1.0 + self.gamma ** 2 / (self.K1 * self.K2))

    def with_gamma(self, gamma: float) -> "Constants":
        return Constants(self.C0, self.K1, self.K2, gamma)

    def to_dict(self) -> dict:
        return {"C0": self.C0, "K1": self.K1, "K2": self.K2, "gamma": self.gamma, "c": self.c,
                "c1": self.c1, "c2": self.c2, "c0_gamma": self.c0_gamma, "c1_gamma": self.c1_gamma}


def check_time_window(T: float, R0: float, nu: float) -> bool:
    if not (T > 0 and R0 > 0 and nu > 0):
        raise VerifyError("T, R0 and nu must be positive")
    return T >= R0 * R0 / nu * (1.0 - REL_SLACK)


@dataclass(frozen=True)
class CascadeCondition:
    satisfied: bool
    tau0: float
    threshold: float           # c gamma R0
    margin: float              # 1 - tau0 / threshold
    inertial_range: Optional[tuple]

    def to_dict(self) -> dict:
        return {"satisfied": self.satisfied, "tau0": self.tau0, "threshold": self.threshold,
                "margin": self.margin,
                "inertial_range": list(self.inertial_range) if self.inertial_range else None}


def check_cascade_condition(g: GlobalAverages, k: Constants, R0: Optional[float] = None) -> CascadeCondition:
    if g.tau0 is None:
        raise VerifyError("tau0 undefined (zero enstrophy)")
    R0 = g.R0 if R0 is None else R0
    thr = k.c * k.gamma * R0
    ok = g.tau0 < thr
    rng = (g.tau0 / (k.c * k.gamma), R0) if ok else None
    return CascadeCondition(ok, g.tau0, thr, 1.0 - g.tau0 / thr, rng)


def choose_gamma(tau0: float, k: Constants, R0: float, margin: float = 0.1,
                 grid: Sequence[float] = GAMMA_GRID) -> Optional[float]:
    """Largest gamma on the grid with tau0 <= (1 - margin) c gamma R0, or None."""
    ok = [g for g in grid if tau0 <= (1.0 - margin) * k.c * g * R0]
    return max(ok) if ok else None


def sample_scales(R_min: float, R0: float, n: int = 8) -> np.ndarray:
    if not (0 < R_min <= R0):
        raise VerifyError(f"need 0 < R_min <= R0, got {R_min}, {R0}")
    return np.geomspace(R_min, R0, n)


# --- report structure ---------------------------------------------------------------------

@dataclass
class Assertion:
    name: str
    R: Optional[float]
    value: float
    lower: Optional[float]
    upper: Optional[float]
    passed: bool = field(init=False)
    margin: float = field(init=False)

    def __post_init__(self):
        vals = [abs(x) for x in (self.value, self.lower, self.upper) if x is not None]
        slack = REL_SLACK * max(vals + [0.0])
        lo_ok = self.lower is None or self.value >= self.lower - slack
        hi_ok = self.upper is None or self.value <= self.upper + slack
        self.passed = bool(lo_ok and hi_ok)
        gaps = []
        if self.lower is not None:
            gaps.append(self.value - self.lower)
        if self.upper is not None:
            gaps.append(self.upper - self.value)
        scale = max(vals) if vals and max(vals) > 0 else 1.0
        self.margin = float(min(gaps) / scale) if gaps else 0.0

    def to_dict(self) -> dict:
        return {"name": self.name, "R": self.R, "value": self.value, "lower": self.lower,
                "upper": self.upper, "pass": self.passed, "margin": self.margin}


@dataclass
class TheoremReport:
    name: str
    status: str = VERIFIED
    condition: Optional[CascadeCondition] = None
    rows: list = field(default_factory=list)
    informational: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    constants: Optional[Constants] = None

    def add(self, *a, **kw) -> Assertion:
        row = Assertion(*a, **kw)
        self.rows.append(row)
        return row

    def info(self, *a, **kw) -> Assertion:
        row = Assertion(*a, **kw)
        self.informational.append(row)
        return row

    @property
    def violated(self) -> list:
        return [r for r in self.rows if not r.passed]

    @property
    def inertial_range(self) -> Optional[tuple]:
        return self.condition.inertial_range if self.condition else None

    def finalize(self, certified: bool) -> "TheoremReport":
        if self.status == UNVERIFIABLE:
            return self
        if self.violated:
            self.status = VIOLATED
        elif not certified:
            self.status = NO_RANGE
        else:
            self.status = VERIFIED
        return self

    def to_dict(self) -> dict:
        return {
            "name": self.name, "status": self.status,
            "condition": self.condition.to_dict() if self.condition else None,
            "constants": self.constants.to_dict() if self.constants else None,
            "rows": [r.to_dict() for r in self.rows],
            "informational": [r.to_dict() for r in self.informational],
            "notes": list(self.notes),
        }


def _in_range(R: float, rng: Optional[tuple]) -> bool:
    return rng is not None and rng[0] * (1 - REL_SLACK) <= R <= rng[1] * (1 + REL_SLACK)


# --- balls ---------------------------------------------------------------------------------

def check_theorem_ball_cascade(g: GlobalAverages, ensembles: Iterable[EnsembleAverages], k: Constants,
                               nu: float, time_window_ok: bool = True, warn_only: bool = False) -> TheoremReport:
    """Two-sided cascade bound on every sampled R inside the inertial range.

    The proposition lower bound and the balance bracket
    ``nu E_R -+ nu C0 e_R / R^2`` are asserted at every R.
    """
    rep = TheoremReport("ball-cascade", constants=k)
    ens = list(ensembles)
    if not time_window_ok:
        rep.notes.append("T < R0^2/nu: time-window hypothesis unmet")
        if not warn_only:
            rep.status = UNVERIFIABLE
            return rep
    if g.E == 0.0:
        rep.notes.append("zero enstrophy: degenerate bounds 0 <= 0 <= 0")
        for e in ens:
            rep.add("cascade", e.R, e.Psi_R, 0.0, 0.0)
        return rep.finalize(True)
    cond = check_cascade_condition(g, k)
    rep.condition = cond
    nuE = nu * g.E
    for e in ens:
        R = e.R
        rep.add("proposition-lower", R, e.Psi_R, k.c1 * nuE * (1.0 - k.c2 * g.tau0 ** 2 / R ** 2), None)
        slack = nu * k.C0 * e.e_R / R ** 2
        rep.add("balance-bracket", R, e.Psi_R, nu * e.E_R - slack, nu * e.E_R + slack)
        if cond.satisfied and _in_range(R, cond.inertial_range):
            rep.add("cascade", R, e.Psi_R, k.c0_gamma * nuE, k.c1_gamma * nuE)
        else:
            rep.info("cascade (outside certified range)", R, e.Psi_R, k.c0_gamma * nuE, k.c1_gamma * nuE)
    if not cond.satisfied:
        rep.notes.append(f"no inertial range certified: tau0={cond.tau0:.6g} >= c*gamma*R0={cond.threshold:.6g}")
    return rep.finalize(cond.satisfied)


def check_covering_inequalities(g: GlobalAverages, e: EnsembleAverages, K1: float, K2: float,
                                cone: bool = True) -> TheoremReport:
    """E_R >= E/K1, e_R <= K2 e and E_R <= K2 E (E' replaces E in the first with cones off)."""
    rep = TheoremReport(f"covering-inequalities-{e.kind}")
    if cone:
        rep.add("E_R >= E/K1", e.R, e.E_R, g.E / K1, None)
    else:
        rep.add("E_R >= E'/K1", e.R, e.E_R, g.E_prime / K1, None)
        rep.info("E_R >= E/K1 (cones off, may fail near the rim)", e.R, e.E_R, g.E / K1, None)
    rep.add("e_R <= K2 e", e.R, e.e_R, None, K2 * g.e)
    rep.add("E_R <= K2 E", e.R, e.E_R, None, K2 * g.E)
    return rep.finalize(True)


# --- shells --------------------------------------------------------------------------------

def check_theorem_shell_locality(sb: ShellBudget, k: Constants, nu: float,
                                 time_window_ok: bool = True) -> TheoremReport:
    """Single-shell bound (1 -+ gamma^2) nu E under tau_shell < gamma R~ / sqrt(C0)."""
    rep = TheoremReport("shell-locality", constants=k)
    if not time_window_ok:
        rep.status = UNVERIFIABLE
        rep.notes.append("T < R0^2/nu: time-window hypothesis unmet")
        return rep
    if sb.E_shell == 0.0:
        rep.notes.append("zero enstrophy: degenerate bounds")
        rep.add("shell-cascade", sb.R_tilde, sb.Psi_shell, 0.0, 0.0)
        return rep.finalize(True)
    thr = k.gamma * sb.R_tilde / math.sqrt(k.C0)
    tau = sb.tau_shell
    ok = tau is not None and tau < thr
    rep.condition = CascadeCondition(ok, tau, thr, 1.0 - tau / thr, (sb.R_tilde, sb.R1) if ok else None)
    nuE = nu * sb.E_shell
    slack = nu * k.C0 * sb.e_shell / sb.R_tilde ** 2
    rep.add("balance-bracket", sb.R_tilde, sb.Psi_shell, nuE - slack, nuE + slack)
    if ok:
        rep.add("shell-cascade", sb.R_tilde, sb.Psi_shell, (1 - k.gamma ** 2) * nuE, (1 + k.gamma ** 2) * nuE)
    else:
        rep.status = UNVERIFIABLE
        rep.notes.append(f"tau_shell={tau:.6g} >= gamma R~/sqrt(C0)={thr:.6g}: local condition unmet")
        rep.info("shell-cascade (condition unmet)", sb.R_tilde, sb.Psi_shell,
                 (1 - k.gamma ** 2) * nuE, (1 + k.gamma ** 2) * nuE)
        if rep.violated:
            rep.status = VIOLATED
        return rep
    return rep.finalize(True)


def check_theorem_shell_ensemble(g: GlobalAverages, ensembles: Iterable[EnsembleAverages], k: Constants,
                                 nu: float, time_window_ok: bool = True, warn_only: bool = False) -> TheoremReport:
    """Volume-scaled and per-volume shell-ensemble bounds, plus the tau0 identity."""
    rep = TheoremReport("shell-ensemble", constants=k)
    ens = list(ensembles)
    if not time_window_ok:
        rep.notes.append("T < R0^2/nu: time-window hypothesis unmet")
        if not warn_only:
            rep.status = UNVERIFIABLE
            return rep
    if g.E == 0.0:
        rep.notes.append("zero enstrophy: degenerate bounds")
        for e in ens:
            rep.add("shell-ensemble", e.R, e.tilde["Psi"], 0.0, 0.0)
        return rep.finalize(True)
    cond = check_cascade_condition(g, k)
    rep.condition = cond
    tau_tilde = math.sqrt(g.e_tilde / g.E_tilde)
    rep.add("tau0 identity", None, tau_tilde, g.tau0 * (1 - 1e-14), g.tau0 * (1 + 1e-14))
    nuEt = nu * g.E_tilde
    for e in ens:
        R = e.R
        s3 = (R / g.R0) ** 3
        Pt = e.tilde["Psi"]
        slack = nu * k.C0 * e.tilde["e"] / R ** 2
        rep.add("balance-bracket", R, Pt, nu * e.tilde["E"] - slack, nu * e.tilde["E"] + slack)
        rep.add("proposition-lower", R, Pt, k.c1 * s3 * nuEt * (1.0 - k.c2 * g.tau0 ** 2 / R ** 2), None)
        if cond.satisfied and _in_range(R, cond.inertial_range):
            rep.add("shell-ensemble", R, Pt, k.c0_gamma * s3 * nuEt, k.c1_gamma * s3 * nuEt)
            rep.add("shell-ensemble per volume", R, e.Psi_R, k.c0_gamma * nu * g.E, k.c1_gamma * nu * g.E)
        else:
            rep.info("shell-ensemble (outside certified range)", R, Pt, k.c0_gamma * s3 * nuEt,
                     k.c1_gamma * s3 * nuEt)
    if not cond.satisfied:
        rep.notes.append(f"no inertial range certified: tau0={cond.tau0:.6g} >= c*gamma*R0={cond.threshold:.6g}")
    return rep.finalize(cond.satisfied)


def shell_covering_inequalities(g: GlobalAverages, e: EnsembleAverages, K1: float, K2: float) -> TheoremReport:
    """E~_{2R,R} >= (1/K1)(R/R0)^3 E~, e~ <= K2 (R/R0)^3 e~, E~ <= K2 (R/R0)^3 E~."""
    rep = TheoremReport("covering-inequalities-shells")
    s3 = (e.R / g.R0) ** 3
    rep.add("E~_R12 >= (R/R0)^3 E~/K1", e.R, e.tilde["E"], s3 * g.E_tilde / K1, None)
    rep.add("e~_R12 <= K2 (R/R0)^3 e~", e.R, e.tilde["e"], None, K2 * s3 * g.e_tilde)
    rep.add("E~_R12 <= K2 (R/R0)^3 E~", e.R, e.tilde["E"], None, K2 * s3 * g.E_tilde)
    return rep.finalize(True)


# --- locality ratios -------------------------------------------------------------------------

def locality_bracket(k_shell: Constants, k_ball: Constants, ratio: float) -> tuple[float, float]:
    """Bracket for Psi~_{2R2,R2} / Psi~_R with R2/R = ratio.

    With one set of constants this is [c0/c1, c1/c0] (R2/R)^3; with separate
    measured constants for the two coverings the quotient of the two theorem
    brackets is used.
    """
    r3 = ratio ** 3
    return k_shell.c0_gamma / k_ball.c1_gamma * r3, k_shell.c1_gamma / k_ball.c0_gamma * r3


def locality_ratios(balls: dict, shells: dict, k_ball: Constants, k_shell: Constants,
                    inertial_range: Optional[tuple], pairs: Iterable[tuple],
                    e_prime_ratio: Optional[float] = None) -> TheoremReport:
    """Assert the time-locality and flat per-volume brackets.

    ``balls`` and ``shells`` map R to EnsembleAverages.  ``pairs`` lists
    (R, R2) to test; both must be in the inertial range and available.
    ``e_prime_ratio`` (E'/E, cones off) adds informational rows with the bracket
    widened by that factor on each side; this modified bracket is an interpretation.
    """
    rep = TheoremReport("locality", constants=k_ball)
    if inertial_range is None:
        rep.notes.append("no inertial range certified: locality brackets not asserted")
        return rep.finalize(False)
    n_tested = 0
    for R, R2 in pairs:
        b, s = balls.get(R), shells.get(R2)
        tag = f"R2/R={R2 / R:.6g}"
        if b is None or s is None:
            rep.notes.append(f"{tag} at R={R:.6g}: scale not available")
            continue
        if not (_in_range(R, inertial_range) and _in_range(R2, inertial_range)):
            rep.notes.append(f"{tag} at R={R:.6g}: outside the inertial range")
            continue
        den = b.tilde["Psi"]
        if den <= 0 or s.tilde["Psi"] <= 0:
            rep.status = UNVERIFIABLE
            rep.notes.append(f"{tag}: nonpositive flux, prior bounds violated")
            continue
        lo, hi = locality_bracket(k_shell, k_ball, R2 / R)
        rep.add(f"time-locality {tag}", R, s.tilde["Psi"] / den, lo, hi)
        lo0, hi0 = locality_bracket(k_shell, k_ball, 1.0)
        rep.add(f"space-time-locality {tag}", R, s.Psi_R / b.Psi_R, lo0, hi0)
        if e_prime_ratio is not None and e_prime_ratio > 0:
            rep.info(f"time-locality E'/E-modified (interpretation) {tag}", R, s.tilde["Psi"] / den,
                     lo * e_prime_ratio, hi / e_prime_ratio)
        n_tested += 1
    if n_tested == 0:
        rep.notes.append("no (R, R2) pair had both scales inside the inertial range")
    return rep.finalize(n_tested > 0)


def exp_locality_pairs(scales: Iterable[float], ks: Iterable[int]) -> list:
    """(R, 2^k R) pairs over the given ball scales."""
    return [(R, R * 2.0 ** k) for R in scales for k in ks]
