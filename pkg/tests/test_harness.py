import csv
import json

import numpy as np
import pytest

from sgpp_lab import cli, plotting, runner
from sgpp_lab.config import SCHEMA, load_config, parse_config
from sgpp_lab.errors import ConfigError, SchemaMismatch

SMALL = """
[manifold]
kind = circle
atom_count = 128

[guidance]
x_ref = 1.2 0.3
sigma_p = 0.5, 0.2

[sampler]
method = sgpp_descent
t_start = 0.9
t_end = 0.01
steps = 12
spacing = geometric
ensemble_count = 4

[output]
name = small

[seed]
master_seed = 99
"""


def _write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


# --------------------------------------------------------------------------
# config

def test_config_round_trip():
    cfg = parse_config(SMALL)
    again = parse_config(cfg.to_ini())
    assert again == cfg
    assert again.to_ini() == cfg.to_ini()
    assert cfg["guidance"]["sigma_p"] == (0.5, 0.2)
    assert cfg["sampler"]["steps_per_t"] == 1


@pytest.mark.parametrize("name", cli.bundled_configs())
def test_bundled_configs_round_trip(name):
    cfg = load_config(cli.bundled_config(name))
    assert parse_config(cfg.to_ini()) == cfg


@pytest.mark.parametrize("text", [
    SMALL + "\n[extra]\nx = 1\n",
    SMALL.replace("steps = 12", "steps = 12\nstepz = 3"),
    SMALL.replace("sigma_p = 0.5, 0.2", "sigma_p = -0.1"),
    SMALL.replace("method = sgpp_descent", "method = langevin"),
    SMALL.replace("t_end = 0.01", "t_end = 0.95"),
    SMALL.replace("x_ref = 1.2 0.3", "x_ref = 1.2"),
    SMALL.replace("steps = 12", "steps = twelve"),
])
def test_invalid_configs_raise(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_every_schema_default_validates():
    cfg = parse_config("")
    assert set(cfg.sections) == set(SCHEMA)


# --------------------------------------------------------------------------
# run

def test_invalid_config_writes_nothing(tmp_path):
    out = tmp_path / "out"
    cfg = _write(tmp_path, SMALL.replace("sigma_p = 0.5, 0.2", "sigma_p = -0.2"))
    assert runner.run_experiment(cfg, out) == runner.EXIT_INVALID
    assert not out.exists()
    assert runner.run_experiment(_write(tmp_path, SMALL, "ok.ini"), out, seed=2 ** 64) == runner.EXIT_INVALID
    assert not out.exists()


def test_run_outputs_and_schema(tmp_path):
    out = tmp_path / "run"
    assert runner.run_experiment(_write(tmp_path, SMALL), out) == runner.EXIT_OK
    with open(out / "trajectories.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == plotting.csv_header(2)
    # descent updates at all 13 grid times: two widths x four paths x (1 + 13) records
    assert len(rows) - 1 == 2 * 4 * 14
    first = dict(zip(rows[0], rows[1]))
    assert first["method"] == "SGPP_DESCENT" and first["seed_master"] == "99"
    assert float(first["x0"]) == pytest.approx(float(repr(float(first["x0"]))))
    assert (out / "trajectories.csv").read_bytes().count(b"\r") == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_code"] == 0
    assert parse_config(manifest["config_text"]) == parse_config(SMALL)
    names = {a["path"] for a in manifest["artifacts"]}
    assert {"trajectories.csv", "reports.csv"} <= names
    assert sum(n.endswith(".svg") for n in names) == 2


def test_runs_are_byte_identical_across_jobs(tmp_path):
    cfg = _write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert runner.run_experiment(cfg, a, jobs=1) == 0
    assert runner.run_experiment(cfg, b, jobs=3) == 0
    files = sorted(p.name for p in a.iterdir() if p.suffix in (".csv", ".svg"))
    assert files
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_seed_override_changes_results(tmp_path):
    cfg = _write(tmp_path, SMALL)
    runner.run_experiment(cfg, tmp_path / "a")
    runner.run_experiment(cfg, tmp_path / "b", seed=100)
    assert (tmp_path / "a" / "trajectories.csv").read_bytes() != (tmp_path / "b" / "trajectories.csv").read_bytes()


def test_failed_assertion_exit_code(tmp_path):
    text = SMALL + "\n[assert]\nmax_mean_distance_to_ref = 1e-9\n"
    out = tmp_path / "run"
    assert runner.run_experiment(_write(tmp_path, text), out) == runner.EXIT_ASSERT
    manifest = json.loads((out / "manifest.json").read_text())
    assert not all(a["passed"] for a in manifest["assertions"])


def test_output_directory_resolution(tmp_path, monkeypatch):
    cfg = parse_config(SMALL)
    monkeypatch.setenv("SGPP_LAB_OUT", str(tmp_path / "env"))
    assert runner.resolve_out_dir(cfg) == tmp_path / "env" / "small"
    assert runner.resolve_out_dir(cfg, tmp_path / "x") == tmp_path / "x"
    monkeypatch.delenv("SGPP_LAB_OUT")
    assert str(runner.resolve_out_dir(cfg)).endswith("small")


# --------------------------------------------------------------------------
# plotting

def test_svg_is_deterministic_and_clamped():
    outline = [np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])]
    paths = {0: np.array([[0.0, 0.0], [1e9, -1e9]])}
    a = plotting.render_svg(outline, paths, "t")
    assert a == plotting.render_svg(outline, paths, "t")
    assert a.startswith("<?xml") and a.rstrip().endswith("</svg>")
    assert "e+" not in a and "nan" not in a.lower()


def test_empty_csv_renders_outline_only(tmp_path):
    p = tmp_path / "trajectories.csv"
    p.write_text(",".join(plotting.csv_header(2)) + "\n")
    (svg,) = plotting.render_plot(p, tmp_path, [np.array([[0.0, 0.0], [1.0, 1.0]])])
    assert svg.name == "plot_empty.svg"
    assert "<circle" not in svg.read_text()


def test_plot_rejects_foreign_csv(tmp_path):
    p = tmp_path / "trajectories.csv"
    p.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(SchemaMismatch):
        plotting.read_trajectories(p)


def test_plot_subcommand_rebuilds_svgs(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    svg = sorted(out.glob("*.svg"))
    before = [p.read_bytes() for p in svg]
    for p in svg:
        p.unlink()
    assert cli.main(["plot", "--config", str(cfg), "--out", str(out)]) == 0
    assert [p.read_bytes() for p in svg] == before
    (out / "trajectories.csv").write_text("x,y\n")
    assert cli.main(["plot", "--config", str(cfg), "--out", str(out)]) == runner.EXIT_INVALID


# --------------------------------------------------------------------------
# verify and CLI

def test_verify_oversized_step_fails(tmp_path, capsys):
    text = "[verify]\nchecks = normal_contraction\nstep_fraction = 1.5\n"
    code = runner.run_verification_suite(_write(tmp_path, text), tmp_path / "v")
    assert code == runner.EXIT_FAILED
    assert "[FAIL] normal_contraction" in capsys.readouterr().out
    with open(tmp_path / "v" / "verify.csv") as fh:
        assert list(csv.reader(fh))[1][1] == "fail"


@pytest.mark.parametrize("text", [
    "[verify]\ncontraction_sigma_p = 0\n",
    "[verify]\nchecks = normal_contraction\ncontraction_sigma_p = 0.3\n",
    "[verify]\nchecks = nonsense\n",
])
def test_verify_invalid_configs(tmp_path, text):
    out = tmp_path / "v"
    assert runner.run_verification_suite(_write(tmp_path, text), out) == runner.EXIT_INVALID
    assert not out.exists()


def test_verify_passing_subset(tmp_path, capsys):
    text = "[verify]\nchecks = rf_ve_equivalence, stability_asymptotics\n"
    assert cli.main(["verify", "--config", str(_write(tmp_path, text)), "--out", str(tmp_path / "v")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2 and all(l.startswith("[PASS]") for l in lines)


def test_cli_argument_errors(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["run", "--config", "fig1c_sgpp", "--seed", "-1"])
    assert e.value.code == 2
    with pytest.raises(SystemExit):
        cli.main(["run", "--config", "fig1c_sgpp", "--jobs", "0"])
    assert cli.main(["list"]) == 0
    assert "fig1c_sgpp" in capsys.readouterr().out


def test_cli_uses_environment_directory(tmp_path, monkeypatch):
    monkeypatch.setenv("SGPP_LAB_OUT", str(tmp_path))
    cfg = _write(tmp_path, SMALL)
    assert cli.main(["run", "--config", str(cfg)]) == 0
    assert (tmp_path / "small" / "manifest.json").exists()
