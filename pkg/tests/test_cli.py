import csv

import pytest

from roam.cli import DEFAULT_GRID, main, parse_grid
from roam.config import RunConfig, from_pairs
from roam.errors import ConfigError

TINY = """\
mode = SSL_ROAM
pretrain_epochs = 2
train_epochs = 1
batch_size = 4
data.height = 16
data.width = 16
data.n_labeled = 6
data.n_unlabeled = 8
data.n_validation = 4
data.n_test = 4
"""


@pytest.fixture
def tiny_config(tmp_path):
    p = tmp_path / "tiny.txt"
    p.write_text(TINY)
    return p


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_run_writes_artifacts_and_reproduces_from_manifest(tmp_path, tiny_config, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", str(tiny_config), "--out", str(out)]) == 0
    for name in ("model.pt", "events.jsonl", "metrics.csv", "metrics.txt", "manifest.txt"):
        assert (out / name).exists()
    manifest = (out / "manifest.txt").read_text()
    for key in ("manifest.config_hash", "manifest.seed", "manifest.code_version"):
        assert key in manifest
    rows = read_csv(out / "metrics.csv")
    assert {r["model"] for r in rows} == {"LOWER_BOUND", "SSL_ROAM"}
    again = tmp_path / "again"
    assert main(["run", "--config", str(out / "manifest.txt"), "--out", str(again)]) == 0
    assert (again / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()


def test_unknown_key_exits_2_naming_it(tmp_path, capsys):
    p = tmp_path / "bad.txt"
    p.write_text("lambda_max = 3\n")
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "x")]) == 2
    assert "lambda_max" in capsys.readouterr().err


def test_default_grid_has_one_cell_per_table_row():
    cells = parse_grid(DEFAULT_GRID)
    assert len(cells) == 19
    assert all(len(o) <= 2 for _, o in cells)
    # every cell is a valid config
    for _, overrides in cells:
        from_pairs(overrides, RunConfig())


def test_grid_cell_with_too_many_keys():
    with pytest.raises(ConfigError):
        parse_grid("x: alpha=1; beta=2; T=0.3\n")


def test_ablate_records_failures_and_sorts(tmp_path, tiny_config):
    grid = tmp_path / "grid.txt"
    grid.write_text("base:\nk0: kappa_set=INPUT\nbroken: data.n_unlabeled=0\n")
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(tiny_config), "--grid", str(grid), "--out", str(out)]) == 3
    rows = read_csv(out / "ablation.csv")
    assert [r["cell"] for r in rows][-1] == "broken"
    assert rows[-1]["status"].startswith("failed: NO_UNLABELED_DATA")
    vals = [float(r["val_dice"]) for r in rows if r["status"] == "ok"]
    assert len(vals) == 2 and vals == sorted(vals, reverse=True)
    assert (out / "cells" / "00" / "manifest.txt").exists()


def test_ablate_config_error_before_running(tmp_path, tiny_config):
    grid = tmp_path / "grid.txt"
    grid.write_text("a: alpha=-1\n")
    assert main(["ablate", "--config", str(tiny_config), "--grid", str(grid), "--out", str(tmp_path / "o")]) == 2


def test_sweep_curve_rows(tmp_path, tiny_config):
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(tiny_config), "--axis", "LABELED", "--sizes", "3,6",
                 "--models", "LOWER_BOUND,SUP_ROAM_LB", "--seeds", "1", "--out", str(out)]) == 0
    curve = read_csv(out / "curve.csv")
    assert len(curve) == 2 * 2
    assert {(r["size"], r["model"]) for r in curve} == {(s, m) for s in ("3", "6") for m in ("LOWER_BOUND", "SUP_ROAM_LB")}


def test_domain_shift(tmp_path, tiny_config):
    run = tmp_path / "run"
    assert main(["run", "--config", str(tiny_config), "--out", str(run)]) == 0
    out = tmp_path / "ds"
    assert main(["domain-shift", "--config", str(tiny_config), "--shift", "gamma=1", "--out", str(out), str(run)]) == 0
    rows = read_csv(out / "domain_shift.csv")
    assert [r["domain"] for r in rows] == ["in-domain", "shifted"]
    assert rows[0]["mean_dice"] == rows[1]["mean_dice"]
    assert main(["domain-shift", "--config", str(tiny_config), "--shift", "gamma=2,contrast=0.5",
                 "--out", str(out), str(run)]) == 0
    assert main(["domain-shift", "--config", str(tiny_config), "--shift", "gamma=2",
                 "--out", str(out), str(tmp_path / "nowhere.pt")]) == 3
    assert main(["domain-shift", "--config", str(tiny_config), "--shift", "hue=2", str(run)]) == 2


def test_report_merges_runs(tmp_path, tiny_config, capsys):
    run = tmp_path / "r1"
    main(["run", "--config", str(tiny_config), "--out", str(run)])
    capsys.readouterr()
    assert main(["report", str(run), "--out", str(tmp_path / "report.txt")]) == 0
    text = (tmp_path / "report.txt").read_text()
    assert "SSL_ROAM" in text and "LOWER_BOUND" in text
