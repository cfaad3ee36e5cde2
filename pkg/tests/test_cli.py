import json
import os

import pytest

from scenerylab import cli
from scenerylab.config import ConfigError, parse_config

BASE = """# minimal naive run
estimator = naive
d = 2
law = lazy
n = 256
b = 0
scenery = gaussian
replicas = 10000
seed = 1
"""


def write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_minimal_run(tmp_path, capsys):
    cfg = write(tmp_path, BASE)
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "results.csv").read_bytes().split(b"\n")
    assert lines[0] == b",".join(c.encode() for c in cli.CSV_COLUMNS)
    row = lines[1].split(b",")
    assert abs(float(row[7]) - 0.5) < 0.02
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["seed"] == 1 and len(man["config_sha256"]) == 64


def test_run_is_byte_identical(tmp_path):
    cfg = write(tmp_path, BASE.replace("n = 256", "n = 128, 256"))
    cli.main(["run", str(cfg), "--out", str(tmp_path / "a"), "--workers", "1"])
    cli.main(["run", str(cfg), "--out", str(tmp_path / "b"), "--workers", "3"])
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()


def test_seed_override(tmp_path, monkeypatch):
    cfg = write(tmp_path, BASE)
    monkeypatch.setenv("SCENERYLAB_SEED", "7")
    cli.main(["run", str(cfg), "--out", str(tmp_path / "o")])
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["seed"] == 7


def test_config_errors(tmp_path, capsys):
    with pytest.raises(ConfigError):
        parse_config(BASE + "colour = blue\n")
    with pytest.raises(ConfigError):
        parse_config(BASE.replace("seed = 1\n", ""))
    with pytest.raises(ConfigError):
        parse_config(BASE + "seed = 2\n")
    with pytest.raises(ConfigError):
        parse_config(BASE.replace("law = lazy", "law = drunk"))
    assert cli.main(["run", str(write(tmp_path, BASE + "bogus = 1\n"))]) == 1
    assert "unknown key" in capsys.readouterr().err


def test_b_rules():
    v = parse_config(BASE + "b_rule = power\nb_beta = 0.6\n")
    assert v["b_rule"] == "power" and v["b_beta"] == 0.6
    assert parse_config(BASE.replace("n = 256", "n = 2^10, 2^11"))["n"] == (1024, 2048)


def test_rare_event_exit_code(tmp_path):
    cfg = write(tmp_path, BASE.replace("b = 0", "b = 400"))
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_conditional_flagged_exit_code(tmp_path):
    text = BASE.replace("estimator = naive", "estimator = conditional").replace("scenery = gaussian",
                                                                               "scenery = laplace")
    text = text.replace("replicas = 10000", "replicas = 20\ninner_replicas = 200").replace("b = 0", "b = 60")
    code = cli.main(["run", str(write(tmp_path, text)), "--out", str(tmp_path / "o")])
    assert code in (0, 2)
    flags = (tmp_path / "o" / "results.csv").read_text().splitlines()[1].split(",")[-1]
    assert (code == 2) == bool(flags)


def test_fit_pipeline(tmp_path, capsys):
    text = BASE.replace("estimator = naive", "estimator = conditional").replace("d = 2", "d = 3")
    text = text.replace("n = 256", "n = 2^8, 2^9, 2^10").replace("b = 0", "b_rule = power\nb_beta = 0.6")
    text = text.replace("replicas = 10000", "replicas = 2000")
    assert cli.main(["run", str(write(tmp_path, text)), "--out", str(tmp_path / "o")]) == 0
    capsys.readouterr()
    assert cli.main(["fit", str(tmp_path / "o" / "results.csv")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("experiment,model,slope") and float(out[1].split(",")[2]) < 0


def test_rates_subcommands(capsys):
    assert cli.main(["rates", "eval", "T2", "n=100", "b=20", "sigma2=1", "G0=1.5"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(-1.0)
    assert cli.main(["rates", "eval", "T3b", "n=100", "b=20"]) == 1
    assert cli.main(["rates", "table", "--d", "3", "--beta", "0.6"]) == 0
    assert "T2" in capsys.readouterr().out


def test_other_subcommands(tmp_path, capsys):
    assert cli.main(["oracle", "walk", "--n", "3"]) == 0
    assert cli.main(["oracle", "pairs", "--n", "2"]) == 0
    assert cli.main(["green", "--d", "3", "--tol", "1e-3", "--n", "100"]) == 0
    assert cli.main(["green", "--d", "2", "--law", "lazy", "--n", "256"]) == 0
    out = tmp_path / "c.csv"
    assert cli.main(["concentration", "--n", "256", "--replicas", "500", "--x", "0", "50", "--out", str(out)]) == 0
    assert out.read_text().startswith("x,p_upper")
    assert cli.main(["maxtail", "--n", "200", "--replicas", "2000", "--k", "1", "2"]) in (0, 2)
    assert "E ell2" in capsys.readouterr().out


def test_selftest(capsys):
    assert cli.main(["selftest"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_console_script_entry():
    import shutil
    import subprocess
    exe = shutil.which("scenerylab")
    if exe is None:
        pytest.skip("package not installed")
    res = subprocess.run([exe, "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
