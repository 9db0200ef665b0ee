import json
import shutil
import subprocess

import pytest

from cnodes.cli.config import RunConfig, from_dict, load_config, parse_config, serialize, to_dict
from cnodes.cli.main import run
from cnodes.errors import ConfigError


def _rundir(out):
    (d,) = [p for p in out.iterdir() if p.is_dir()]
    return d


def _manifest(out):
    return json.loads((_rundir(out) / "manifest.json").read_text())


def _metrics(out):
    lines = (_rundir(out) / "metrics.csv").read_text().splitlines()
    assert lines[0] == "metric,value"
    return dict(line.split(",", 1) for line in lines[1:])


def _config(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# subcommands ---------------------------------------------------------------

def test_solve_prints_exp(tmp_path, capsys):
    assert run(["solve", "--dynamics", "decay", "--t", "1", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.strip() == "0.367879"
    m = _manifest(tmp_path)
    assert m["status"] == "ok" and m["solve_stats"]["forward"]["nfe"] > 0
    assert set(m["solve_stats"]["forward"]) == {"nfe", "steps_accepted", "steps_rejected"}


def test_solve_oscillator(tmp_path, capsys):
    assert run(["solve", "--dynamics", "oscillator", "--t", "3.141592653589793", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.split() == ["-1.000000", "0.000000"]


def test_gradcheck_passes(tmp_path, capsys):
    assert run(["gradcheck", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "all primitives within 1e-5" in out
    assert float(_metrics(tmp_path)["max_rel_err"]) < 1e-5
    assert (_rundir(tmp_path) / "gradcheck.csv").exists()


def test_demo_intersect_terminal_values(tmp_path):
    cfg = _config(tmp_path, "[run]\nsubcommand = demo-intersect\n[task]\ntrained = false\n")
    assert run(["demo-intersect", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    m = _metrics(tmp_path / "o")
    assert abs(float(m["u_T_from_0"]) - 1.0) < 1e-12 and abs(float(m["u_T_from_1"])) < 1e-12
    header = (_rundir(tmp_path / "o") / "trajectories.csv").read_text().splitlines()[0]
    assert header == "u0,s,x,t,u"


def test_demo_burgers(tmp_path):
    assert run(["demo-burgers", "--out", str(tmp_path)]) == 0
    m = _metrics(tmp_path)
    assert float(m["moc_max_error"]) < 1e-10
    assert float(m["first_crossing_s"]) == pytest.approx(1.0)


def test_pde_rejects_other_k(tmp_path):
    assert run(["pde-fit", "--k", "3", "--out", str(tmp_path)]) == 1


# configuration ---------------------------------------------------------------

def test_minimal_config_fills_defaults(tmp_path):
    cfg = load_config(_config(tmp_path, "[run]\nsubcommand = solve\n"))
    assert cfg == RunConfig("solve", solver=cfg.solver, train=cfg.train, model=cfg.model, task=cfg.task)
    assert cfg.seed == 0 and cfg.out == "out" and all(v is None for v in cfg.train.values())
    assert cfg.solver_config().method == "dopri5"


def test_misspelled_key_is_named(tmp_path):
    path = _config(tmp_path, "[run]\nsubcommand = pde-fit\n\n[train]\nephochs = 10\n")
    with pytest.raises(ConfigError, match="ephochs") as exc:
        load_config(path)
    assert "line 5" in str(exc.value)


def test_bad_value_reports_line():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config("[run]\nsubcommand = solve\nseed = many\n")


def test_missing_required_key():
    with pytest.raises(ConfigError, match="subcommand"):
        parse_config("[train]\nepochs = 3\n")


def test_unknown_section_and_garbage():
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[run]\nsubcommand = solve\n[optimizer]\nlr = 1\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("epochs = 3\n")


def test_config_round_trip():
    text = ("[run]\nsubcommand = timeseries\nseed = 4\nreplicates = 3\n"
            "[solver]\nmethod = rk4\nh = 0.125\n[train]\nepochs = 7\nlr = 0.003\ngrad_mode = discrete\n"
            "[model]\nk = 8\nhidden = 62, 62\n[task]\nnoise = 0.0\ntrained = no\n")
    cfg = parse_config(text)
    assert cfg.model["hidden"] == (62, 62) and cfg.task["trained"] is False
    again = parse_config(serialize(cfg))
    assert again == cfg and serialize(again) == serialize(cfg)
    assert from_dict(to_dict(cfg)) == cfg
    tc = cfg.train_config()
    assert tc.epochs == 7 and tc.adam.lr == 0.003 and tc.seed == 4 and tc.solver.method == "rk4"


def test_invalid_solver_value_is_config_error():
    with pytest.raises(ConfigError):
        parse_config("[run]\nsubcommand = solve\n[solver]\nrtol = -1\n")


def test_manifest_echoes_config(tmp_path):
    cfg = _config(tmp_path, "[run]\nsubcommand = solve\n[task]\nt = 0.5\n")
    assert run(["solve", "--config", cfg, "--seed", "9", "--out", str(tmp_path / "o")]) == 0
    m = _manifest(tmp_path / "o")
    assert m["seed"] == 9 and m["config"]["task"]["t"] == 0.5
    assert parse_config(m["config_text"]) == from_dict(m["config"])
    assert m["run_id"].startswith("solve-s9-")
    for key in ("versions", "started", "finished", "wall_time_s", "metrics", "files"):
        assert key in m


def test_config_subcommand_mismatch(tmp_path):
    cfg = _config(tmp_path, "[run]\nsubcommand = gradcheck\n")
    assert run(["solve", "--config", cfg, "--out", str(tmp_path)]) == 1


def test_missing_config_file(tmp_path):
    assert run(["solve", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == 1


# exit codes ----------------------------------------------------------------

def test_unknown_flag_exits_1(capsys):
    assert run(["solve", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_exits_1():
    assert run(["frobnicate"]) == 1


def test_numerical_failure_exits_2(tmp_path):
    cfg = _config(tmp_path, "[run]\nsubcommand = solve\n[solver]\nmax_steps = 1\nrtol = 1e-12\n")
    assert run(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    m = _manifest(tmp_path / "o")
    assert m["status"] == "numerical-failure" and "max_steps" in m["error"]


def test_console_script_is_installed(tmp_path):
    exe = shutil.which("cnodes")
    assert exe is not None
    proc = subprocess.run([exe, "solve", "--nope"], capture_output=True, text=True)
    assert proc.returncode == 1
    proc = subprocess.run([exe, "solve", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "0.367879"


# reproducibility ---------------------------------------------------------------

SHORT_INTERSECT = "[run]\nsubcommand = demo-intersect\nreplicates = 2\n[train]\nepochs = 5\n"


def test_reruns_are_bit_identical(tmp_path):
    cfg = _config(tmp_path, SHORT_INTERSECT)
    assert run(["demo-intersect", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert run(["demo-intersect", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    a = (_rundir(tmp_path / "a") / "metrics.csv").read_bytes()
    b = (_rundir(tmp_path / "b") / "metrics.csv").read_bytes()
    assert a == b
    assert _rundir(tmp_path / "a").name == _rundir(tmp_path / "b").name


def test_seed_changes_results(tmp_path):
    cfg = _config(tmp_path, SHORT_INTERSECT)
    assert run(["demo-intersect", "--config", cfg, "--seed", "1", "--out", str(tmp_path / "a")]) == 0
    assert run(["demo-intersect", "--config", cfg, "--seed", "2", "--out", str(tmp_path / "b")]) == 0
    ma, mb = _metrics(tmp_path / "a"), _metrics(tmp_path / "b")
    assert "cnode_mse_seed1" in ma and "cnode_mse_seed2" in ma and "cnode_mse_seed3" in mb
    assert ma["cnode_mse_seed2"] == mb["cnode_mse_seed2"]
    assert _manifest(tmp_path / "a")["seed"] == 1


def test_parallel_replicates_match_serial(tmp_path):
    cfg = _config(tmp_path, SHORT_INTERSECT)
    assert run(["demo-intersect", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    assert run(["demo-intersect", "--config", cfg, "--parallel", "2", "--out", str(tmp_path / "p")]) == 0
    serial, par = _metrics(tmp_path / "s"), _metrics(tmp_path / "p")
    assert serial.keys() == par.keys()
    for k in serial:
        assert float(serial[k]) == pytest.approx(float(par[k]), rel=1e-9, abs=1e-15)


def test_every_subcommand_honours_seed(tmp_path):
    for sub in ("solve", "gradcheck", "demo-burgers"):
        assert run([sub, "--seed", "5", "--out", str(tmp_path / sub)]) == 0
        assert _manifest(tmp_path / sub)["seed"] == 5


def test_digest_ignores_output_location():
    a = parse_config("[run]\nsubcommand = solve\nout = here\nparallel = 3\n")
    b = parse_config("[run]\nsubcommand = solve\nout = there\n")
    c = parse_config("[run]\nsubcommand = solve\nseed = 1\n")
    assert a.digest == b.digest and a.digest != c.digest
