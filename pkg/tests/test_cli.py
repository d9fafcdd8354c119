from __future__ import annotations

import csv
import json

import pytest

from levysheet import __version__
from levysheet.cli import main
from levysheet.config import config_hash, default_config, parse_config
from levysheet.sheet_sim import load_sheet


def small_config(tmp_path, **field):
    data = default_config(seed=3).to_dict()
    data["field"].update({"epsilon": 0.2, "scan_epsilons": [0.2], "eval_points": [[1.0, 1.0]]}, **field)
    data["spde"].update({"nt": 16, "nx": 16, "green_terms": 8, "kernel_n": [4], "replicates": 20, "chunk": 10})
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return path


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0], list(csv.DictReader(lines[1:]))


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_bad_config_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"field": {}}')
    assert main(["approx-field", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "seed" in capsys.readouterr().err


def test_approx_field_two_replicates(tmp_path):
    cfg_path = small_config(tmp_path)
    out = tmp_path / "out"
    assert main(["approx-field", "--config", str(cfg_path), "--out", str(out), "--replicates", "2"]) == 0
    header, rows = read_csv(out / "field.csv")
    cfg = parse_config(cfg_path.read_text())
    assert header == f"# levysheet {__version__} seed=3 config={config_hash(cfg)}"
    assert len(rows) == 2
    assert [r["replicate"] for r in rows] == ["0", "1"]
    assert not [p for p in out.iterdir() if p.name.endswith(".tmp")]


def test_approx_field_is_reproducible(tmp_path):
    cfg_path = small_config(tmp_path)
    for name, threads in (("a", "1"), ("b", "2")):
        assert main(["approx-field", "--config", str(cfg_path), "--out", str(tmp_path / name),
                     "--replicates", "3", "--threads", threads]) == 0
    assert (tmp_path / "a" / "field.csv").read_text() == (tmp_path / "b" / "field.csv").read_text()


def test_simulate_sheet(tmp_path):
    cfg_path = small_config(tmp_path)
    out = tmp_path / "sheets"
    assert main(["simulate-sheet", "--config", str(cfg_path), "--out", str(out), "--replicates", "2"]) == 0
    path, header = load_sheet(out / "sheet_00001.bin")
    assert header["replicate"] == 1 and header["seed"] == 3
    assert path.grid.x_max == pytest.approx(5.0)


def test_verify_subset(tmp_path):
    out = tmp_path / "v"
    assert main(["verify-convergence", "--out", str(out), "--only", "C1,C3"]) == 0
    header, rows = read_csv(out / "report.csv")
    assert header.startswith("# levysheet")
    assert rows and {r["verdict"] for r in rows} == {"pass"}
    assert {r["test"].split(":")[0] for r in rows} == {"C1", "C3"}
    assert list(rows[0]) == ["test", "target", "estimate", "stderr", "tolerance", "verdict"]


def test_spde_run_white(tmp_path):
    cfg_path = small_config(tmp_path)
    out = tmp_path / "s"
    assert main(["spde-run", "--config", str(cfg_path), "--out", str(out), "--replicates", "5"]) == 0
    _, rows = read_csv(out / "spde_white.csv")
    assert len(rows) == 5


def test_default_config_round_trip(tmp_path):
    out = tmp_path / "d"
    assert main(["default-config", "--out", str(out), "--seed", "77"]) == 0
    text = (out / "config.json").read_text()
    body = text if text.lstrip().startswith("{") else text.split("\n", 1)[1]
    assert parse_config(body).seed == 77
