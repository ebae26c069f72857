from __future__ import annotations

import json

import numpy as np
import pytest

from ftcoherent import persist
from ftcoherent.cli import main
from ftcoherent.config import PRESETS, GridConfig, RunConfig, preset
from ftcoherent.flow import FlowSpec
from ftcoherent.operator import DiffusionSpec

SMALL = RunConfig(flow=FlowSpec(h=0.05, a3_wavenumber="k3"), grid=GridConfig(nx=16, ny=8, n_test=4),
                  diffusion=DiffusionSpec(0.5), name="small")
STILL = RunConfig(flow=FlowSpec(U0=0.0, A1=0.0, A2=0.0, A3=0.0, h=0.5, periodic_x=False),
                  grid=GridConfig(xmin=0, xmax=1, ymin=0, ymax=1, nx=1, ny=1, n_test=4), name="still")


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.ini"
    SMALL.save(path)
    return path


def _run(*args):
    return main([str(a) for a in args])


def test_config_round_trip():
    for cfg in list(PRESETS.values()) + [SMALL, STILL]:
        back = RunConfig.from_ini(cfg.to_ini())
        assert back == cfg
        assert back.hash == cfg.hash
    assert SMALL.replace(out="elsewhere", threads=3).hash == SMALL.hash
    assert SMALL.with_eps(0.25).hash != SMALL.hash


def test_unknown_keys_and_sections_rejected():
    text = SMALL.to_ini()
    with pytest.raises(ValueError, match="unknown keys"):
        RunConfig.from_ini(text.replace("[grid]", "[grid]\ncolour = red"))
    with pytest.raises(ValueError, match="unknown config sections"):
        RunConfig.from_ini(text + "\n[extra]\na = 1\n")
    with pytest.raises(ValueError, match="bad value"):
        RunConfig.from_ini(text.replace("nx = 16", "nx = sixteen"))


def test_presets():
    a, b = preset("stratospheric_6_1"), preset("stratospheric_6_2")
    assert a.grid.make().n_boxes == 2 ** 15 and a.grid.n_test == 400 and a.diffusion.eps == 0.0
    assert b.grid.n_test == 36 and b.diffusion.eps == 0.1 and b.diffusion.n_points == 37
    assert a.flow.t0 == 10.0 and a.flow.t1 == 20.0
    with pytest.raises(ValueError):
        preset("nope")


def test_one_box_identity_build(tmp_path):
    cfg = tmp_path / "still.ini"
    STILL.save(cfg)
    out = tmp_path / "run"
    assert _run("build", "--config", cfg, "--out", out) == 0
    lines = (out / "P.txt").read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1].split() == ["1", "1", "1"]
    assert lines[2].split()[:2] == ["0", "0"] and float(lines[2].split()[2]) == 1.0


def test_pipeline_commands_and_determinism(tmp_path, small_cfg, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert _run("build", "--config", small_cfg, "--out", out) == 0
        assert _run("svd", out) == 0
        assert _run("extract", out) == 0
    for name in ("P.txt", "M.txt", "p.txt", "q.txt", "boxes_x.csv", "boxes_y.csv", "singular_values.csv",
                 "u_2.csv", "v_2.csv", "partition_x.csv", "partition_y.csv", "f.csv", "g.csv", "partition.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    # only the [run] section, which holds the output path, may differ
    assert RunConfig.load(a / "config.ini").hash == RunConfig.load(b / "config.ini").hash
    for svg in ("density_y.svg", "f2.svg", "g2.svg", "partition_x.svg", "partition_y.svg"):
        assert "<svg" in (a / svg).read_text()
    meta = json.loads((a / "metadata.json").read_text())
    assert meta["shape"][0] == 128 and meta["n_stencil"] == 37
    assert meta["implicit_diffusion_radius"] == pytest.approx(0.625)
    capsys.readouterr()
    assert _run("verify", a) == 0
    out = capsys.readouterr().out
    for name in ("row_sums", "sigma1_is_one", "duality", "rho_bound"):
        assert f"PASS {name}" in out
    sv = persist.load_csv(a / "singular_values.csv", SMALL.hash)
    assert sv["sigma"][0] == pytest.approx(1.0, abs=1e-10)


def test_verify_detects_rescaled_row(tmp_path, small_cfg, capsys):
    out = tmp_path / "run"
    assert _run("build", "--config", small_cfg, "--out", out) == 0
    lines = (out / "P.txt").read_text().splitlines()
    i, j, v = lines[2].split()
    lines[2] = f"{i} {j} {float(v) * 1.5:.17g}"
    (out / "P.txt").write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert _run("verify", out) == 3
    text = capsys.readouterr().out
    assert "FAIL row_sums" in text and f"at row {i}" in text


def test_mixed_run_artifacts_rejected(tmp_path, small_cfg, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run("build", "--config", small_cfg, "--out", a) == 0
    other = tmp_path / "other.ini"
    SMALL.with_eps(0.25).save(other)
    assert _run("build", "--config", other, "--out", b) == 0
    (a / "q.txt").write_bytes((b / "q.txt").read_bytes())
    capsys.readouterr()
    assert _run("verify", a) == 1
    assert "hash" in capsys.readouterr().err


def test_missing_artifacts_and_usage_errors(tmp_path, capsys):
    assert _run("svd", tmp_path / "nothing") == 1
    assert _run("build") == 1
    assert _run("build", "--preset", "stratospheric_6_1", "--config", "x.ini") == 1
    assert _run("frobnicate") == 1
    assert _run("extract", tmp_path) == 1
    assert _run("scale", "--preset", "stratospheric_6_1", "--eps", "0.01") == 1
    assert _run("scale", "--preset", "stratospheric_6_1", "--eps", "x") == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exit_code(tmp_path):
    bad = RunConfig(flow=FlowSpec(c3=1e308, h=0.5), grid=GridConfig(nx=2, ny=2, n_test=1))
    path = tmp_path / "bad.ini"
    bad.save(path)
    assert _run("build", "--config", path, "--out", tmp_path / "run") == 2


def test_scale_and_objectivity_commands(tmp_path, small_cfg):
    out = tmp_path / "scale"
    cache = tmp_path / "cache"
    assert _run("scale", "--config", small_cfg, "--eps", "0.7,1.4", "--out", out, "--cache", cache) == 0
    rows = persist.load_csv(out / "scaling.csv", SMALL.hash)
    np.testing.assert_allclose(rows["eps"], [0.7, 1.4])
    assert (out / "gap.svg").exists() and (out / "moduli.svg").exists()
    rep = json.loads((out / "scaling.json").read_text())
    assert np.isfinite(rep["c_hat"])
    out = tmp_path / "obj"
    g = SMALL.grid.make()
    assert _run("objectivity", "--config", small_cfg, "--b0", 2 * g.wx, 0.0, "--b1", 0.0, g.wy, "--out", out,
                "--cache", cache) == 0
    rep = json.loads((out / "objectivity.json").read_text())
    assert rep["grid_exact"] and rep["delta_sigma2"] <= 1e-10 and rep["exact_x"] and rep["exact_y"]
