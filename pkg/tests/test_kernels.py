import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fluxcascade import _kernels_py as pure
from fluxcascade import kernels

compiled = pytest.importorskip("fluxcascade._kernels")


def _pts(seed, n=4000, span=2.0):
    rng = np.random.default_rng(seed)
    return [rng.uniform(-span, span, n) for _ in range(3)]


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), r_out0=st.floats(0.1, 1.0), width=st.floats(0.05, 1.0),
       inner=st.booleans())
def test_radial_cutoff_parity(seed, r_out0, width, inner):
    x, y, z = _pts(seed)
    r_in = (0.3 * r_out0, 0.6 * r_out0) if inner else (0.0, 0.0)
    a = pure.radial_cutoff_eval(x, y, z, *r_in, r_out0, r_out0 + width)
    b = compiled.radial_cutoff_eval(x, y, z, *r_in, r_out0, r_out0 + width)
    for u, v in zip(a, b):
        np.testing.assert_allclose(v, u, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(u).max()))


def test_stencil_reduce_parity():
    rng = np.random.default_rng(5)
    n = 20_000
    idx = rng.choice(n, 3000, replace=False).astype(np.int64)
    w = rng.uniform(0, 1, idx.size)
    local = [w ** 1.5, w] + [rng.standard_normal(idx.size) for _ in range(4)]
    fields = [rng.standard_normal(n) for _ in range(7)]
    a = np.array(pure.stencil_reduce(idx, *local, *fields))
    b = np.array(compiled.stencil_reduce(idx, *local, *fields))
    np.testing.assert_allclose(b, a, rtol=1e-11)


def test_count_within_parity():
    rng = np.random.default_rng(9)
    pts = rng.uniform(-1, 1, (5000, 3))
    centers = rng.uniform(-1, 1, (60, 3))
    for lo, hi in ((0.0, 0.3), (0.1, 0.4)):
        np.testing.assert_array_equal(compiled.count_within(pts, centers, lo, hi),
                                      pure.count_within(pts, centers, lo, hi))


def test_backend_selected():
    assert kernels.BACKEND in ("python", "cython")
