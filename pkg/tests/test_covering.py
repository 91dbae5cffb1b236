import numpy as np
import pytest

from fluxcascade.covering import (Covering, CoveringError, build_ball_covering, build_shell_covering,
                                  cubic_lattice, half_radius_lattice, min_index_separation,
                                  sublattice_decomposition, verify_covering)

R0 = 1.0


def test_single_ball():
    c = build_ball_covering(R0, R0)
    assert c.n == 1 and np.allclose(c.centers, 0)
    cert = verify_covering(c)
    assert cert.covers and cert.K2_measured == 1 and 1 <= c.n <= c.K1


@pytest.mark.parametrize("frac", [0.5, 0.25])
def test_ball_bracket(frac):
    R = frac * R0
    c = build_ball_covering(R0, R)
    lo = (R0 / R) ** 3
    assert lo <= c.n <= c.K1 * lo
    cert = verify_covering(c)
    assert cert.covers and cert.n_bracket_ok
    if frac == 0.25:
        assert cert.K2_measured <= 33


def test_ball_eighth():
    c = build_ball_covering(R0, R0 / 8)
    cert = verify_covering(c, per_axis=60, sphere=20_000)
    assert cert.covers and cert.K2_measured <= 33


def test_deleting_a_center_exposes_a_probe():
    c = build_ball_covering(R0, R0 / 2)
    # drop the center nearest the origin: its neighbours sit ~2R/sqrt(3) away
    j = np.argmin(np.linalg.norm(c.centers, axis=1))
    cut = Covering(np.delete(c.centers, j, axis=0), c.R, c.R0, c.K1, c.K2, "balls")
    cert = verify_covering(cut)
    assert not cert.covers and cert.uncovered > 0


def test_shell_half():
    c = build_shell_covering(R0, R0 / 2)
    assert np.all(np.linalg.norm(c.centers, axis=1) <= R0 / 2 + 1e-12)
    assert verify_covering(c).covers


def test_shell_quarter():
    R = R0 / 4
    c = build_shell_covering(R0, R)
    assert np.all(np.linalg.norm(c.centers, axis=1) <= R0 - R + 1e-12)
    lo = (R0 / R) ** 3
    assert lo <= c.n <= c.K1 * lo
    cert = verify_covering(c)
    assert cert.covers and cert.contained


def test_shell_radius_limit():
    with pytest.raises(CoveringError):
        build_shell_covering(R0, 0.6 * R0)


@pytest.mark.parametrize("R", [0.5, 0.25, 0.125])
def test_sublattices(R):
    lat = half_radius_lattice(R0, R)
    subs = sublattice_decomposition(lat, R)
    assert len(subs) == 512
    allidx = np.concatenate([s.indices for s in subs])
    assert len(allidx) == len(lat.indices)
    assert len({tuple(i) for i in allidx}) == len(lat.indices)
    for s in subs:
        sep = min_index_separation(s)
        # index separation 8 at spacing R/2 is exactly 4R
        assert sep is None or sep >= 8
        if sep is not None:
            d = np.linalg.norm(s.points[:, None] - s.points[None], axis=2)
            np.fill_diagonal(d, np.inf)
            assert d.min() >= 4 * R * (1 - 1e-12)


def test_sublattice_needs_half_spacing():
    with pytest.raises(CoveringError):
        sublattice_decomposition(cubic_lattice(0.3, 1.0), 0.5)
