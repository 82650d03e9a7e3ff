import io
import json

import pytest
import yaml

from convoffload.cli import main
from convoffload.config import (ExperimentConfig, dump_config, load_config,
                                read_schedule_csv, schedule_csv_text)
from convoffload.errors import ParseError
from convoffload.strategies import gen_row_by_row, gen_zigzag

WORKED = dict(c_in=2, h_in=5, w_in=5, n_kernels=2, h_k=3, w_k=3, nbop_pe=120, size_mem=100,
              strategy="rowbyrow", group_size=2)


@pytest.fixture
def config(tmp_path):
    def make(**kw):
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump({**WORKED, **kw}))
        return str(path)
    return make


def test_round_trip():
    cfg = ExperimentConfig.from_dict(WORKED)
    again = ExperimentConfig.from_dict(yaml.safe_load(dump_config(cfg)))
    assert again == cfg


@pytest.mark.parametrize("bad", [
    {"colour": 1},
    {"strategy": "spiral"},
    {"group_size": None},
    {"strategy": "csv", "group_size": None},
    {"strategy_csv": "x.csv"},
    {"n_groups": 0},
    {"h_in": 2},
    {"nbop_pe": 0},
])
def test_invalid_configs(bad):
    with pytest.raises(ParseError):
        ExperimentConfig.from_dict({**WORKED, **bad})


def test_missing_csv_path(config):
    with pytest.raises(ParseError):
        load_config(config(strategy="csv", group_size=None, strategy_csv="nope.csv"))


def test_budget_env(monkeypatch):
    cfg = ExperimentConfig.from_dict(WORKED)
    assert cfg.budget() == 60
    monkeypatch.setenv("CONVOFFLOAD_SOLVER_BUDGET", "2.5")
    assert cfg.budget() == 2.5
    monkeypatch.setenv("CONVOFFLOAD_SOLVER_BUDGET", "soon")
    with pytest.raises(ParseError):
        cfg.budget()


def test_csv_round_trip(layer):
    sched = gen_zigzag(layer, 2)
    text = schedule_csv_text(sched)
    assert text == "step,patch_ids\n1,0;1\n2,2;5\n3,3;4\n4,6;7\n5,8\n"
    assert read_schedule_csv(io.StringIO(text), layer) == sched


@pytest.mark.parametrize("text, row", [
    ("step,patch_ids\n1,0;1\n2,2;99\n", "row 3"),
    ("step,patch_ids\n1,0;x\n", "row 2"),
    ("step,patch_ids\n1,0;1\n3,2\n", "row 3"),
    ("step,patch_ids\n1,\n", "row 2"),
    ("steps,ids\n", "row 1"),
    ("step,patch_ids\n1,0,1\n", "row 2"),
])
def test_csv_errors_name_the_row(layer, text, row):
    with pytest.raises(ParseError, match=row):
        read_schedule_csv(io.StringIO(text), layer)


def test_csv_must_be_a_partition(layer):
    with pytest.raises(ParseError, match="invalid schedule"):
        read_schedule_csv(io.StringIO("step,patch_ids\n1,0;1\n2,1;2\n"), layer)


def test_simulate(config, capsys, tmp_path):
    trace = tmp_path / "t.jsonl"
    assert main(["simulate", "--config", config(), "--trace", str(trace)]) == 0
    out = capsys.readouterr().out
    assert "duration 43" in out and "matches the reference" in out
    records = [json.loads(l) for l in trace.read_text().splitlines()]
    assert records[1]["loads"] == 6 and records[1]["writes"] == 2
    assert records[-1]["kind"] == "flush"


def test_simulate_capacity_exit_code(config, capsys):
    assert main(["simulate", "--config", config(size_mem=60)]) == 2
    assert "step 1" in capsys.readouterr().err


def test_generate_and_verify(config, tmp_path, capsys):
    out = tmp_path / "z.csv"
    assert main(["generate", "--strategy", "zigzag", "--group-size", "2",
                 "--config", config(), "--out", str(out)]) == 0
    assert main(["verify", "--config", config(), "--strategy", str(out)]) == 0
    result = json.loads(capsys.readouterr().out.split("\n", 1)[1])
    assert result["ok"] and result["duration"] == 45 and result["numeric_match"]


def test_generate_too_large_group(config, tmp_path):
    assert main(["generate", "--strategy", "rowbyrow", "--group-size", "4",
                 "--config", config(), "--out", str(tmp_path / "x.csv")]) == 2


def test_verify_invalid_strategy(config, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text(schedule_csv_text(gen_row_by_row(
        ExperimentConfig.from_dict(WORKED).layer(), 3)))
    # groups of three need 72 elements
    assert main(["verify", "--config", config(size_mem=70), "--strategy", str(bad)]) == 2


def test_verify_bad_csv(config, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("step,patch_ids\n1,0;1\n2,42\n")
    assert main(["verify", "--config", config(), "--strategy", str(bad)]) == 5
    assert "row 3" in capsys.readouterr().err


def test_csv_strategy_in_config(config, tmp_path, capsys):
    (tmp_path / "s.csv").write_text("step,patch_ids\n1,0;1\n2,2;5\n3,3;4\n4,6;7\n5,8\n")
    assert main(["simulate", "--config", config(strategy="csv", group_size=None,
                                                strategy_csv="s.csv")]) == 0
    assert "duration 45" in capsys.readouterr().out


def test_optimize(config, tmp_path, capsys):
    out = tmp_path / "o.csv"
    assert main(["optimize", "--config", config(), "--budget", "5", "--out", str(out)]) == 0
    summary = json.loads((tmp_path / "o.json").read_text())
    assert summary["objective"] == 28 and summary["status"] == "proved-optimal"
    assert out.read_text() == "step,patch_ids\n1,0;1;2\n2,3;4;5\n3,6;7;8\n"


def test_optimize_infeasible(config, tmp_path):
    # K_min groups of three cannot fit, so the solver has nothing to return
    assert main(["optimize", "--config", config(size_mem=70), "--budget", "5",
                 "--out", str(tmp_path / "o.csv")]) == 4


def test_bad_k(config, tmp_path):
    assert main(["optimize", "--config", config(), "--k", "many",
                 "--out", str(tmp_path / "o.csv")]) == 5


def test_compare(config, tmp_path, capsys):
    out = tmp_path / "cmp"
    assert main(["compare", "--config", config(), "--sweep", "group-size=1..3",
                 "--out", str(out)]) == 0
    assert (out / "sweep.csv").read_text().startswith(
        "axis,strategy,duration,peak_footprint,load_traffic,write_traffic\n")
    assert (out / "grid_zigzag_g2.txt").read_text() == "1 1 2\n3 3 2\n4 4 5\n"
    assert main(["compare", "--config", config(), "--sweep", "group-size=3..1",
                 "--out", str(out)]) == 5


def test_missing_config(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "none.yaml")]) == 5
