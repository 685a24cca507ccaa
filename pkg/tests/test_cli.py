import csv
import json

import pytest

from mfhlab import cli
from mfhlab.models import NumericalError

QUICK = "n_seeds: 1\ngd.max_iters: 50\nn_test: 100\n"


@pytest.fixture
def quick(tmp_path):
    path = tmp_path / "quick.txt"
    path.write_text(QUICK)
    return str(path)


def _run(*argv):
    return cli.main([str(a) for a in argv])


def test_sweep_writes_outputs_and_is_deterministic(tmp_path, quick):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    cfg = tmp_path / "g.txt"
    cfg.write_text(QUICK + "points: [0, 10]\n")
    assert _run("sweep-gamma", "--config", cfg, "--seed", 7, "--out", out1, "--jobs", 1, "--plot") == 0
    assert _run("sweep-gamma", "--config", cfg, "--seed", 7, "--out", out2, "--jobs", 2) == 0
    assert (out1 / "sweep-gamma.csv").read_bytes() == (out2 / "sweep-gamma.csv").read_bytes()
    assert (out1 / "sweep-gamma.csv").read_text().startswith("sweep_kind,point,metric,mean,std,n_seeds\n")
    assert json.loads((out1 / "sweep-gamma_meta.json").read_text())["master_seed"] == 7
    assert (out1 / "sweep-gamma_config.txt").exists()
    assert (out1 / "sweep-gamma_student_kd_acc.svg").read_text().startswith("<svg")


def test_report_rerender_is_byte_identical(tmp_path, quick):
    out = tmp_path / "r"
    assert _run("table2", "--config", quick, "--out", out, "--jobs", 1, "--plot") == 0
    first = (out / "table2_teacher_acc.svg").read_bytes()
    assert _run("report", out / "table2.csv", "--out", tmp_path / "again") == 0
    assert (tmp_path / "again" / "table2_teacher_acc.svg").read_bytes() == first


def test_report_rejects_foreign_csv(tmp_path, capsys):
    bad = tmp_path / "x.csv"
    bad.write_text("a,b\n1,2\n")
    assert _run("report", bad) == 2
    assert "expected header" in capsys.readouterr().err


def test_gen_writes_dataset(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("gen.recipe: table2\ngen.point: 0.5\ngen.n: 12\n")
    assert _run("gen", "--config", cfg, "--out", tmp_path, "--jobs", 1) == 0
    with (tmp_path / "dataset.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 13 and rows[0][:2] == ["sample_id", "y"]
    roles = (tmp_path / "dataset_roles.csv").read_text().splitlines()
    assert sum("general-decisive" in r for r in roles) == 12  # 6 per modality


def test_verify_bound_instances(tmp_path, capsys):
    assert _run("verify-bound", "--instances", 3, "--out", tmp_path, "--jobs", 1) == 0
    with (tmp_path / "verify-bound.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3 and all(r["holds"] == "true" for r in rows)
    assert "3/3 certificates hold" in capsys.readouterr().out


def test_rho_out_of_range_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("rho: 1.5\n")
    assert _run("sweep-gamma", "--config", bad, "--out", tmp_path) == 2
    assert "bad.txt:1: rho out of [0,1]" in capsys.readouterr().err


@pytest.mark.parametrize("text, message", [("bogus: 1\n", "unknown key"), ("rho: 0.5\nrho: 0.1\n", "duplicate"),
                                           ("no separator here\n", ":1:"), ("n_seeds: 0\n", "n_seeds")])
def test_config_errors_exit_2(tmp_path, capsys, text, message):
    path = tmp_path / "c.txt"
    path.write_text(text)
    assert _run("table2", "--config", path, "--out", tmp_path) == 2
    assert message in capsys.readouterr().err


def test_usage_errors_exit_2(capsys):
    assert _run("no-such-command") == 2
    assert _run("sweep-gamma", "--bogus") == 2
    assert "usage" in capsys.readouterr().err


def test_missing_config_file_exit_2(tmp_path):
    assert _run("table2", "--config", tmp_path / "absent.txt", "--out", tmp_path) == 2


def test_numerical_failure_exit_3(tmp_path, quick, capsys, monkeypatch):
    def boom(cfg):
        raise NumericalError("loss is nan", stage="student_kd")

    monkeypatch.setattr(cli, "run_sweep", boom)
    assert _run("sweep-alpha", "--config", quick, "--out", tmp_path) == 3
    assert "numerical failure in stage 'student_kd'" in capsys.readouterr().err
    assert (tmp_path / "sweep-alpha_config.txt").exists()


def test_defaults_round_trip(tmp_path):
    path = tmp_path / "d.txt"
    assert _run("defaults", "--out", path) == 0
    assert cli.load_config(path) == cli.DEFAULTS


def test_empty_config_is_all_defaults(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("# nothing but a comment\n\n")
    assert cli.load_config(path) == cli.DEFAULTS
    assert cli.load_config(None) == cli.DEFAULTS


def test_parse_config_values():
    cfg = cli.parse_config("points: [0.25, 0.5]\nmodel_kind: softmax-linear  # trailing\nrho: None\n")
    assert cfg == {"points": (0.25, 0.5), "model_kind": "softmax-linear", "rho": None}


def test_seed_precedence(monkeypatch):
    monkeypatch.setenv(cli.SEED_ENV, "11")
    assert cli.resolve_seed(3, {"seed": 5}) == 3
    assert cli.resolve_seed(None, {"seed": 5}) == 5
    assert cli.resolve_seed(None, {"seed": None}) == 11
    monkeypatch.delenv(cli.SEED_ENV)
    assert cli.resolve_seed(None, {"seed": None}) == cli.DEFAULT_SEED
    monkeypatch.setenv(cli.SEED_ENV, "eleven")
    with pytest.raises(cli.ConfigError):
        cli.resolve_seed(None, {})
    with pytest.raises(cli.ConfigError):
        cli.resolve_seed(-1, {})


def test_env_seed_reaches_outputs(tmp_path, quick, monkeypatch):
    monkeypatch.setenv(cli.SEED_ENV, "19")
    assert _run("rank-eval", "--config", quick, "--out", tmp_path, "--jobs", 1) == 0
    assert json.loads((tmp_path / "rank-eval_meta.json").read_text())["master_seed"] == 19
    assert "seed: 19" in (tmp_path / "rank-eval_config.txt").read_text()
