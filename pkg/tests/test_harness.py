import json
import os

import numpy as np
import pytest

from magpack import cli, harness
from magpack.errors import ConfigError
from magpack.grids import GridFunction, SpatialGrid, save_gfd


def test_scenario_registry_and_overrides():
    cfg = harness.scenario_config("landau-harmonic", lam=2.0, n_t=16)
    assert cfg.b == 0.2 and cfg.potential == "harmonic"
    assert cfg.lam == 2.0 and cfg.n_t == 16
    with pytest.raises(ConfigError):
        harness.scenario_config("no-such-scenario")
    with pytest.raises(ConfigError):
        harness.scenario_config("free", not_a_key=1)


def test_config_sha_is_stable_and_sensitive():
    a = harness.scenario_config("free")
    b = harness.scenario_config("free")
    c = harness.scenario_config("free", lam=2.0)
    assert a.sha() == b.sha()
    assert a.sha() != c.sha()
    assert len(a.sha()) == 16


def test_config_file_roundtrip(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(
        "[scenario]\nname = harmonic\npipeline = parametrix\nt = 0.25\n"
        "[frame]\nlam = 2.0\n[volterra]\nn_t = 16\n"
        "[state]\nmomentum = 0.5, -0.25\n")
    cfg = harness.load_config(str(path))
    assert cfg.scenario == "harmonic" and cfg.T == 0.25
    assert cfg.lam == 2.0 and cfg.n_t == 16
    assert cfg.momentum == (0.5, -0.25)


def test_config_file_rejects_unknown_keys(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[frame]\nlambda = 3\n")
    with pytest.raises(ConfigError):
        harness.load_config(str(bad))
    missing = tmp_path / "missing.ini"
    with pytest.raises(ConfigError):
        harness.load_config(str(missing))


def test_validate_guards():
    cfg = harness.scenario_config("free")
    cfg.n = 100
    with pytest.raises(ConfigError):
        cfg.validate()
    cfg = harness.scenario_config("free")
    cfg.pipeline = "nope"
    with pytest.raises(ConfigError):
        cfg.validate()


def test_compare_on_gfd_dumps(tmp_path):
    grid = SpatialGrid(n=32, half_width=4.0)
    u = GridFunction.from_callable(
        grid, lambda y: np.exp(-np.sum(y ** 2, axis=-1)))
    v = GridFunction(grid, u.values * (1.0 + 1e-3))
    pa, pb = str(tmp_path / "a.gfd"), str(tmp_path / "b.gfd")
    save_gfd(pa, u, {"t": 0.0})
    save_gfd(pb, v, {"t": 0.0})
    rep = harness.compare(pa, pb)
    assert abs(rep["relative_l2"] - 1e-3) < 1e-6
    rep0 = harness.compare(pa, pa)
    assert rep0["relative_l2"] == 0.0


def test_out_dir_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("MAGPACK_OUT", str(tmp_path / "ov"))
    cfg = harness.scenario_config("free")
    out = harness._out_dir(cfg)
    assert out.startswith(str(tmp_path / "ov"))
    assert os.path.isdir(out)


def test_flat_approx_pipeline_writes_summary(tmp_path, monkeypatch):
    monkeypatch.setenv("MAGPACK_OUT", str(tmp_path))
    cfg = harness.scenario_config("constant-b", pipeline="flat-approx",
                                  n=64, lam=2.0)
    summary = harness.run_scenario(cfg)
    assert summary["pass"]
    name = f"{cfg.scenario}_{cfg.pipeline}_summary.json"
    with open(os.path.join(summary["out_dir"], name)) as fh:
        on_disk = json.load(fh)
    assert on_disk["config_sha"] == cfg.sha()
    assert on_disk["pipeline"] == "flat-approx"


def test_cli_run_and_exit_codes(tmp_path, monkeypatch):
    monkeypatch.setenv("MAGPACK_OUT", str(tmp_path))
    code = cli.main(["run", "flat-approx", "--scenario", "constant-b",
                     "--grid-n", "64", "--lambda", "2.0"])
    assert code == 0
    with pytest.raises(SystemExit) as exc:
        cli.main(["run", "no-such-pipeline"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["run", "flat-approx", "--scenario", "bogus"])
    assert exc.value.code == 2


def test_cli_compare(tmp_path):
    grid = SpatialGrid(n=32, half_width=4.0)
    u = GridFunction.from_callable(
        grid, lambda y: np.exp(-np.sum(y ** 2, axis=-1)))
    v = GridFunction(grid, u.values * 1.5)
    pa, pb = str(tmp_path / "a.gfd"), str(tmp_path / "b.gfd")
    save_gfd(pa, u, {})
    save_gfd(pb, v, {})
    assert cli.main(["compare", pa, pa]) == 0
    assert cli.main(["compare", pa, pb, "--rtol", "1e-3"]) == 1


def test_svg_and_csv_writers(tmp_path):
    csv_path = tmp_path / "x.csv"
    harness.write_csv(str(csv_path), ["a", "b"], [[1, 2], [3, 4]])
    assert csv_path.read_text().splitlines()[0] == "a,b"
    svg_path = tmp_path / "x.svg"
    harness.write_svg(str(svg_path), [0.0, 1.0, 2.0],
                      {"err": [1.0, 0.1, 0.01]}, title="decay", logy=True)
    text = svg_path.read_text()
    assert text.startswith("<svg") and "polyline" in text


def test_reference_states_use_absolute_times():
    # the numerical branch must evolve from t = 0, not from times[0]
    cfg = harness.scenario_config("constant-b", n=64, half_width=6.0,
                                  width=0.8, momentum=(0.5, 0.0))
    gauge = harness.build_gauge(cfg)
    symbol = harness.build_symbol(cfg)
    grid = harness.build_grid(cfg)
    u0 = harness.initial_state(cfg, grid)
    refs, kind = harness.reference_states(cfg, gauge, symbol, grid, u0,
                                          [0.02, 0.04], dt=1e-3)
    assert kind == "crank-nicolson"
    # the first requested state is already evolved away from u0
    d0 = grid.norm(refs[0].values - u0.values) / u0.norm()
    assert d0 > 1e-3
    # and chaining matches a single evolution to the later time
    direct = harness.reference_states(cfg, gauge, symbol, grid, u0,
                                      [0.04], dt=1e-3)[0][0]
    d1 = grid.norm(refs[1].values - direct.values) / direct.norm()
    assert d1 < 1e-10
