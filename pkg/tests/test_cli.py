import json
import shutil
import subprocess
from importlib import resources

import pytest

from nbge.bondmatrix import BondMatrix
from nbge.cli import main
from nbge.dualgraph import DualGraph

MOTOR = str(resources.files("nbge").joinpath("data/dc_motor.bg"))

TINY = """
duration = 130.0
n_recordings = 1
n_samples = 20
epochs = 2
runs = 2
keep = 1
d0 = 16
n_layers = 2
modes = [4, 6]
"""


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_validate_ok(capsys):
    code, out, _ = run(capsys, "validate", MOTOR)
    assert code == 0 and json.loads(out)["ok"] is True


def test_validate_reports_violations(capsys, tmp_path):
    bad = tmp_path / "bad.bg"
    bad.write_text(open(MOTOR).read().replace("coeff=5.0", ""))
    code, out, err = run(capsys, "validate", bad)
    assert code != 0
    assert json.loads(out)["violations"][0]["rule"] == "coefficient"
    assert json.loads(err)["rules"] == ["coefficient"]


def test_syntax_error_json(capsys, tmp_path):
    bad = tmp_path / "bad.bg"
    bad.write_text("component R 1 coeff=1\nbond 1 R1 => J1.1 stroke=head\n")
    code, _, err = run(capsys, "validate", bad)
    e = json.loads(err)
    assert code == 1 and e["type"] == "DSLSyntaxError" and e["line"] == 2


def test_missing_file(capsys):
    code, _, err = run(capsys, "matrix", "/nonexistent.bg")
    assert code == 1 and json.loads(err)["type"] == "FileNotFoundError"


def test_matrix_table_and_dump(capsys):
    code, out, _ = run(capsys, "matrix", MOTOR)
    assert code == 0 and out.split()[:2] == ["bond", "SE"]
    code, out, _ = run(capsys, "bondmatrix", "dump", MOTOR)
    assert code == 0 and BondMatrix.loads(out).n_bonds == 7


def test_compile(capsys, tmp_path):
    code, out, _ = run(capsys, "compile", MOTOR, "--map", "ch0=e1", "ch1=f6")
    g = DualGraph.loads(out)
    assert code == 0 and g.n_nodes == 9 and len(g.edges) == 22
    code, _, err = run(capsys, "compile", MOTOR, "--map", "ch0=e1", "ch1=e1")
    assert code == 1 and json.loads(err)["type"] == "CompileError"


def test_simulate(capsys, tmp_path):
    code, out, _ = run(capsys, "simulate-dcmotor", "--fs", 100, "--duration", 20, "--seed", 1,
                       "--recordings", 2, "--windows", 5, "--out-dir", tmp_path)
    res = json.loads(out)
    assert code == 0 and len(res["recordings"]) == 2
    assert open(res["recordings"][0]).readline().strip() == "t,U,omega"
    assert len(json.loads(open(res["manifest"]).read())["windows"]) == 5


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("runs")
    (d / "tiny.toml").write_text(TINY)
    assert main(["train", "--config", str(d / "tiny.toml"), "--informed", "--out-dir", str(d)]) == 0
    assert main(["train", "--config", str(d / "tiny.toml"), "--raw", "--no-sdtw", "--out-dir", str(d)]) == 0
    return d


def test_train_outputs(trained):
    res = json.loads((trained / "NBgE_Linear_100-500.json").read_text())
    assert res["summary"]["model"] == "NBgE+Linear"
    assert res["summary"]["runs"] == 2 and res["summary"]["kept"] == 1
    assert (trained / "Linear_100-500.npz").exists()


def test_evaluate(capsys, trained):
    code, out, _ = run(capsys, "evaluate", "--checkpoint", trained / "NBgE_Linear_100-500.npz")
    rep = json.loads(out)
    kept = json.loads((trained / "NBgE_Linear_100-500.json").read_text())["summary"]
    assert code == 0 and rep["mse"] == pytest.approx(kept["mse"])


@pytest.mark.parametrize("fmt", ["md", "csv", "json"])
def test_report(capsys, trained, fmt):
    code, out, _ = run(capsys, "report", trained / "Linear_100-500.json", trained / "NBgE_Linear_100-500.json",
                       "--format", fmt)
    assert code == 0
    if fmt == "json":
        assert [s["model"] for s in json.loads(out)] == ["Linear", "NBgE+Linear"]
    elif fmt == "csv":
        assert out.splitlines()[0].startswith("model,scenario,n_params,mae,mse,sdtw")
    else:
        assert out.startswith("| model |") and "NBgE+Linear" in out


def test_report_rejects_other_json(capsys, tmp_path):
    (tmp_path / "x.json").write_text("{}")
    code, _, err = run(capsys, "report", tmp_path / "x.json")
    assert code == 1 and "not a results file" in json.loads(err)["error"]


def test_plot(capsys, trained, tmp_path):
    code, out, _ = run(capsys, "plot", "--checkpoint", trained / "NBgE_Linear_100-500.npz",
                       "--out", tmp_path / "f.svg")
    assert code == 0 and (tmp_path / "f.svg").read_text().lstrip().startswith("<?xml")


def test_unknown_config_key(capsys, tmp_path):
    (tmp_path / "c.toml").write_text("learning_rate = 0.1\n")
    code, _, err = run(capsys, "train", "--config", tmp_path / "c.toml")
    assert code == 1 and "learning_rate" in json.loads(err)["error"]


@pytest.mark.skipif(shutil.which("nbge") is None, reason="console script not installed")
def test_console_script():
    p = subprocess.run(["nbge", "validate", MOTOR], capture_output=True, text=True)
    assert p.returncode == 0 and json.loads(p.stdout)["ok"]
