import json

import numpy as np
import pytest
from click.testing import CliRunner

from fluxcascade import storage
from fluxcascade.field import divergence
from fluxcascade.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, EXIT_VIOLATION, main


@pytest.fixture
def run():
    runner = CliRunner()

    def _run(*args):
        return runner.invoke(main, [str(a) for a in args], catch_exceptions=False)
    return _run


@pytest.fixture
def fast_cfg(tmp_path):
    p = tmp_path / "fast.yaml"
    p.write_text("analysis:\n  n_scales: 3\n  certify_samples: 2000\n")
    return p


@pytest.fixture
def tg_dir(tmp_path, run):
    d = tmp_path / "tg"
    r = run("gen", "taylor-green", "-o", d, "--n", 32, "--nu", 1.0, "--T", 1.2, "--snapshots", 49)
    assert r.exit_code == EXIT_OK, r.output
    return d


def test_gen_tg_summary(tg_dir):
    seq = storage.read_sequence(tg_dir)
    assert len(seq) == 49 and seq.T == 1.2 and seq.nu == 1.0
    man = json.loads((tg_dir / "sequence.json").read_text())
    assert man["meta"]["generator"] == "taylor-green"


def test_gen_random_is_deterministic(tmp_path, run):
    for d in ("a", "b"):
        r = run("gen", "random", "-o", tmp_path / d, "--n", 16, "--seed", 4)
        assert r.exit_code == EXIT_OK
    assert (tmp_path / "a/initial.bin").read_bytes() == (tmp_path / "b/initial.bin").read_bytes()
    r = run("gen", "random", "-o", tmp_path / "c", "--n", 16)
    assert r.exit_code == EXIT_CONFIG


def test_gen_abc_is_divergence_free(tmp_path, run):
    r = run("gen", "abc", "-o", tmp_path / "abc", "--n", 16, "--snapshots", 2)
    assert r.exit_code == EXIT_OK
    seq = storage.read_sequence(tmp_path / "abc")
    v = seq.snapshots[0].velocity
    assert np.abs(divergence(v).values).max() < 1e-10


def test_evolve_from_initial_file(tmp_path, run):
    run("gen", "random", "-o", tmp_path / "ini", "--n", 16, "--seed", 1)
    r = run("evolve", "-o", tmp_path / "ev", "--initial", tmp_path / "ini/initial.bin",
            "--nu", 0.1, "--dt", 0.02, "--n-steps", 8, "--snapshot-every", 4)
    assert r.exit_code == EXIT_OK, r.output
    out = json.loads(r.output)
    assert out["snapshots"] == 3 and out["energy_end"] < out["energy_start"]
    assert len(storage.read_sequence(tmp_path / "ev")) == 3


def test_analyze_then_report(tmp_path, run, tg_dir, fast_cfg):
    r = run("analyze", tg_dir, "-o", tmp_path / "rep", "--config", fast_cfg)
    assert r.exit_code == EXIT_OK, r.output
    rep = tmp_path / "rep/report.json"
    assert rep.exists() and (tmp_path / "rep/scales.csv").exists()
    r = run("report", rep, "-o", tmp_path / "rep2")
    assert r.exit_code == EXIT_OK
    assert (tmp_path / "rep2/scales.csv").read_text() == (tmp_path / "rep/scales.csv").read_text()


def test_verify_exit_codes(tmp_path, run, tg_dir, fast_cfg):
    r = run("verify", tg_dir, "--config", fast_cfg)
    assert r.exit_code == EXIT_OK, r.output
    r = run("verify", tg_dir, "--config", fast_cfg, "--flux-corruption", 10)
    assert r.exit_code == EXIT_VIOLATION
    assert "violated" in r.output


def test_verify_local_budget(tmp_path, run, tg_dir):
    # 32^3 with a radius-1 ball: the residual is spatial, near 7e-3
    r = run("verify", tg_dir, "--local-budget", "--radius", 1.0, "--tol", 2e-2, "-o", tmp_path / "lb")
    assert r.exit_code == EXIT_OK, r.output
    assert json.loads((tmp_path / "lb/local_budget.json").read_text())["passed"]
    r = run("verify", tg_dir, "--local-budget", "--radius", 1.0, "--tol", 1e-6)
    assert r.exit_code == EXIT_VIOLATION


def test_config_and_data_errors(tmp_path, run, tg_dir):
    bad = tmp_path / "bad.yaml"
    bad.write_text("nonsense: {}\n")
    assert run("verify", tg_dir, "--config", bad).exit_code == EXIT_CONFIG
    assert run("verify", tg_dir, "--R0", 0.1).exit_code == EXIT_CONFIG
    broken = tmp_path / "broken"
    broken.mkdir()
    (broken / "sequence.json").write_text('{"T": 1, "nu": 1, "snapshots": ["x.bin"], "times": [0]}')
    assert run("verify", broken).exit_code == EXIT_DATA
    (tg_dir / "snap_00003.bin").write_bytes(b"\0" * 16)
    assert run("analyze", tg_dir, "-o", tmp_path / "x").exit_code == EXIT_DATA
