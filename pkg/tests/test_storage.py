import json

import numpy as np
import pytest

from fluxcascade import storage
from fluxcascade.field import Snapshot, VectorField
from fluxcascade.solver import taylor_green, taylor_green_pressure

from conftest import tg_sequence


def test_snapshot_roundtrip(tmp_path, grid32):
    u, p = taylor_green(grid32, 0.3, 0.1), taylor_green_pressure(grid32, 0.3, 0.1)
    side = storage.write_snapshot(tmp_path / "s.bin", Snapshot(0.3, u, p), nu=0.1, T=1.0)
    assert side["layout"] == ["u1", "u2", "u3", "p"]
    assert (tmp_path / "s.bin").stat().st_size == 4 * 32 ** 3 * 8
    for mm in (True, False):
        snap, side2 = storage.read_snapshot(tmp_path / "s.bin", mmap=mm)
        assert side2 == side and snap.time == 0.3
        np.testing.assert_array_equal(snap.velocity.values, u.values)
        np.testing.assert_array_equal(snap.pressure.values, p.values)
        assert snap.pressure_gradient is None


def test_layout_is_component_major(tmp_path, grid32):
    u = taylor_green(grid32, 0.0, 0.1)
    p = taylor_green_pressure(grid32, 0.0, 0.1)
    storage.write_snapshot(tmp_path / "s.bin", Snapshot(0.0, u, p), 0.1, 1.0)
    raw = np.fromfile(tmp_path / "s.bin", dtype="<f8").reshape(4, 32, 32, 32)
    np.testing.assert_array_equal(raw[1], u.values[1])
    np.testing.assert_array_equal(raw[3], p.values)


def test_pressure_gradient_layout(tmp_path, grid32):
    u = taylor_green(grid32, 0.0, 0.1)
    p = taylor_green_pressure(grid32, 0.0, 0.1)
    gp = VectorField(grid32, np.ones((3,) + grid32.shape))
    side = storage.write_snapshot(tmp_path / "s.bin", Snapshot(0.0, u, p, gp), 0.1, 1.0)
    assert len(side["layout"]) == 7
    snap, _ = storage.read_snapshot(tmp_path / "s.bin")
    np.testing.assert_array_equal(snap.pressure_gradient.values, gp.values)


def test_truncated_and_missing(tmp_path, grid32):
    u = taylor_green(grid32, 0.0, 0.1)
    p = taylor_green_pressure(grid32, 0.0, 0.1)
    storage.write_snapshot(tmp_path / "s.bin", Snapshot(0.0, u, p), 0.1, 1.0)
    data = (tmp_path / "s.bin").read_bytes()
    (tmp_path / "s.bin").write_bytes(data[:-8])
    with pytest.raises(storage.StorageError, match="size"):
        storage.read_snapshot(tmp_path / "s.bin")
    with pytest.raises(storage.StorageError):
        storage.read_snapshot(tmp_path / "nope.bin")
    with pytest.raises(storage.StorageError):
        storage.read_sequence(tmp_path)


def test_sequence_roundtrip(tmp_path, grid32):
    seq = tg_sequence(grid32, 0.1, 0.5, 5)
    man = storage.write_sequence(tmp_path, seq)
    back = storage.read_sequence(tmp_path)
    assert back.T == seq.T and back.nu == seq.nu and len(back) == 5
    np.testing.assert_array_equal(back.times, seq.times)
    np.testing.assert_array_equal(back.snapshots[-1].velocity.values, seq.snapshots[-1].velocity.values)
    first = man.read_text()
    storage.write_sequence(tmp_path, seq)
    assert man.read_text() == first


def test_dumps_is_canonical():
    a = storage.dumps({"b": 1, "a": [1.5, None]})
    assert a == storage.dumps({"a": [1.5, None], "b": 1})
    assert a.endswith("\n") and json.loads(a)["a"][0] == 1.5


def test_scales_csv_reprs():
    row = {c: 0 for c in storage.SCALE_COLUMNS}
    row.update(kind="ball", R=np.float64(0.1))
    text = storage.scales_csv([row])
    assert text.splitlines()[1].startswith("ball,0.1,")
