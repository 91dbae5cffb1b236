import math

import pytest
from hypothesis import given, settings, strategies as st

from fluxcascade import verify as vf
from fluxcascade.diagnostics import EnsembleAverages, GlobalAverages, NodeCertificate, ShellBudget

K = vf.Constants(C0=100.0, K1=9, K2=32, gamma=0.5)
CERT = NodeCertificate(8, 1.0, 2.0, 2.0)


def ens(R, e_R, E_R, Psi_R, kind="balls", tilde=None):
    return EnsembleAverages(kind=kind, R=R, n=4, e_R=e_R, E_R=E_R, Phi_R=Psi_R, Phi_R_volume=Psi_R,
                            Psi_R=Psi_R, residual_R=0.0, tilde=tilde or {}, certificate=CERT,
                            node_C0_grad=7.9, node_C0_lap=46.5)


def glob(e, E, R0=1.0, E_prime=None):
    tau = math.sqrt(e / E) if E > 0 else None
    return GlobalAverages(e, E, E if E_prime is None else E_prime, tau, R0)


@given(C0=st.floats(1.0, 1e4), K1=st.integers(1, 64), K2=st.integers(1, 64), gamma=st.floats(0.01, 0.99))
def test_constants_invariants(C0, K1, K2, gamma):
    k = vf.Constants(C0, K1, K2, gamma)
    assert k.c ** 2 * k.c2 == pytest.approx(1.0, rel=1e-12)
    assert k.c0_gamma < k.c1 <= K2 < k.c1_gamma


@pytest.mark.parametrize("bad", [dict(C0=0.0, K1=1, K2=1), dict(C0=1.0, K1=0.5, K2=1),
                                 dict(C0=1.0, K1=1, K2=1, gamma=1.0)])
def test_constants_reject(bad):
    with pytest.raises(vf.VerifyError):
        vf.Constants(**bad)


def test_time_window():
    assert vf.check_time_window(1.0, 1.0, 1.0)
    assert not vf.check_time_window(0.5, 1.0, 1.0)
    assert vf.check_time_window(10.0, 1.0, 0.1)
    with pytest.raises(vf.VerifyError):
        vf.check_time_window(1.0, 0.0, 1.0)


def test_cascade_condition_boundary():
    R0 = 1.0
    thr = K.c * K.gamma * R0
    g = GlobalAverages(1.0, 1.0, 1.0, 0.9 * thr, R0)
    cond = vf.check_cascade_condition(g, K)
    assert cond.satisfied
    assert cond.inertial_range[0] == pytest.approx(0.9 * R0)
    assert cond.margin == pytest.approx(0.1)
    g_eq = GlobalAverages(1.0, 1.0, 1.0, thr, R0)
    assert not vf.check_cascade_condition(g_eq, K).satisfied
    with pytest.raises(vf.VerifyError):
        vf.check_cascade_condition(GlobalAverages(0.0, 0.0, 0.0, None, R0), K)


def test_choose_gamma():
    # tau0 <= 0.9 c gamma R0 with R0 = 1
    assert vf.choose_gamma(0.8 * K.c, K, 1.0, margin=0.1) == 0.9
    assert vf.choose_gamma(0.85 * K.c, K, 1.0, margin=0.1) is None
    assert vf.choose_gamma(0.3 * K.c, K, 1.0, margin=0.1, grid=(0.2, 0.4)) == 0.4


def test_ball_cascade_degenerate_zero():
    g = GlobalAverages(0.0, 0.0, 0.0, None, 1.0)
    rep = vf.check_theorem_ball_cascade(g, [ens(0.5, 0.0, 0.0, 0.0)], K, nu=0.1)
    assert rep.status == vf.VERIFIED and all(r.passed for r in rep.rows)


def test_ball_cascade_no_range():
    g = glob(1.0, 1.0)  # tau0 = 1, far above c gamma R0
    rep = vf.check_theorem_ball_cascade(g, [ens(0.5, 1.0, 1.0, 0.1)], K, nu=0.1)
    assert rep.status == vf.NO_RANGE
    assert not any(r.name == "cascade" for r in rep.rows)
    assert any(r.name.startswith("cascade") for r in rep.informational)


def _certified_global():
    tau0 = 0.5 * K.c * K.gamma
    return GlobalAverages(tau0 ** 2, 1.0, 1.0, tau0, 1.0)


def test_ball_cascade_verified_and_violated():
    g, nu = _certified_global(), 0.1
    e_R = g.e
    good = ens(1.0, e_R, 1.0, nu * 1.0)
    rep = vf.check_theorem_ball_cascade(g, [good], K, nu)
    assert rep.status == vf.VERIFIED
    assert any(r.name == "cascade" for r in rep.rows)
    bad = ens(1.0, e_R, 1.0, -nu)
    rep = vf.check_theorem_ball_cascade(g, [bad], K, nu)
    assert rep.status == vf.VIOLATED


def test_ball_cascade_time_window():
    g = _certified_global()
    rep = vf.check_theorem_ball_cascade(g, [ens(1.0, g.e, 1.0, 0.1)], K, 0.1, time_window_ok=False)
    assert rep.status == vf.UNVERIFIABLE and not rep.rows
    rep = vf.check_theorem_ball_cascade(g, [ens(1.0, g.e, 1.0, 0.1)], K, 0.1, time_window_ok=False,
                                        warn_only=True)
    assert rep.status == vf.VERIFIED and rep.notes


def _shell_budget(e, E, Psi, R_tilde=0.5):
    tau = math.sqrt(e / E) if E > 0 else None
    return ShellBudget(1.0, 0.5, R_tilde, e, E, Psi, Psi, Psi, 0.0, tau, "shell", 46.5)


def test_shell_locality_cases():
    nu = 0.1
    rep = vf.check_theorem_shell_locality(_shell_budget(0.0, 0.0, 0.0), K, nu)
    assert rep.status == vf.VERIFIED
    thr = K.gamma * 0.5 / math.sqrt(K.C0)
    ok = _shell_budget((0.5 * thr) ** 2, 1.0, nu)
    assert vf.check_theorem_shell_locality(ok, K, nu).status == vf.VERIFIED
    unmet = _shell_budget((2 * thr) ** 2, 1.0, nu)
    rep = vf.check_theorem_shell_locality(unmet, K, nu)
    assert rep.status == vf.UNVERIFIABLE and rep.informational
    assert vf.check_theorem_shell_locality(ok, K, nu, time_window_ok=False).status == vf.UNVERIFIABLE


def test_shell_ensemble_tau0_identity():
    g = GlobalAverages(0.02, 3.0, 3.0, math.sqrt(0.02 / 3.0), 1.3)
    R = 0.65
    s3 = (R / g.R0) ** 3
    tilde = {"e": s3 * g.e_tilde, "E": s3 * g.E_tilde, "Psi": 0.1 * s3 * g.E_tilde}
    rep = vf.check_theorem_shell_ensemble(g, [ens(R, 0.0, 0.0, 0.1 * g.E, "shells", tilde)], K, 0.1)
    ident = [r for r in rep.rows if r.name == "tau0 identity"]
    assert ident and ident[0].passed


def test_locality_bracket_values():
    lo, hi = vf.locality_bracket(K, K, 1.0)
    assert lo < 1.0 < hi
    assert lo == pytest.approx(K.c0_gamma / K.c1_gamma)
    lo8, hi8 = vf.locality_bracket(K, K, 0.5)
    assert (lo8, hi8) == pytest.approx((lo / 8, hi / 8))


def test_locality_ratios_self_pair():
    b = ens(0.5, 1.0, 1.0, 0.2, tilde={"Psi": 0.025})
    s = ens(0.5, 1.0, 1.0, 0.2, "shells", tilde={"Psi": 0.025})
    rep = vf.locality_ratios({0.5: b}, {0.5: s}, K, K, (0.25, 1.0), [(0.5, 0.5)], e_prime_ratio=0.5)
    assert rep.status == vf.VERIFIED
    assert all(r.value == pytest.approx(1.0) for r in rep.rows)
    assert rep.informational  # E'/E-modified rows
    rep = vf.locality_ratios({0.5: b}, {0.5: s}, K, K, None, [(0.5, 0.5)])
    assert rep.status == vf.NO_RANGE


def test_locality_nonpositive_flux():
    b = ens(0.5, 1.0, 1.0, -0.2, tilde={"Psi": -0.025})
    s = ens(0.5, 1.0, 1.0, 0.2, "shells", tilde={"Psi": 0.025})
    rep = vf.locality_ratios({0.5: b}, {0.5: s}, K, K, (0.25, 1.0), [(0.5, 0.5)])
    assert rep.status == vf.UNVERIFIABLE


def test_covering_inequalities_cones_off_uses_E_prime():
    g = glob(1.0, 2.0, E_prime=1.0)
    e = ens(0.5, 1.0, 0.15, 0.0)  # between E'/K1 and E/K1
    assert vf.check_covering_inequalities(g, e, 9, 32, cone=True).status == vf.VIOLATED
    rep = vf.check_covering_inequalities(g, e, 9, 32, cone=False)
    assert rep.status == vf.VERIFIED
    assert not rep.informational[0].passed


@settings(max_examples=50)
@given(v=st.floats(-10, 10), lo=st.floats(-10, 10), width=st.floats(0, 10))
def test_assertion_pass_matches_bracket(v, lo, width):
    a = vf.Assertion("x", None, v, lo, lo + width)
    assert a.passed == (lo - 1e-10 <= v <= lo + width + 1e-10) or abs(v - lo) < 1e-9 or abs(v - lo - width) < 1e-9
    assert (a.margin >= 0) == a.passed or abs(a.margin) < 1e-9
