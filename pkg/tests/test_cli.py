import json
import logging
import shutil

import pytest

from dynlgp.cli import LOG_ENV, main
from dynlgp.harness import synth
from dynlgp.harness.report import read_runs
from dynlgp.prediction.sources import HumanTrajectory


def test_plan_writes_report(tmp_path, capsys):
    sc = synth.data_path("scenarios", "set_table_1obj.json")
    assert main(["plan", "--scenario", str(sc), "--mode", "dynamic", "--out", str(tmp_path)]) == 0
    assert "success=True" in capsys.readouterr().out
    assert (tmp_path / "set_table_1obj_dynamic_0.json").exists()
    assert (tmp_path / "time_over_skeleton_length.png").exists()
    rows = read_runs(tmp_path / "runs.csv")
    assert [r["mode"] for r in rows] == ["dynamic"]


def test_batch_on_small_suite(tmp_path, capsys):
    suite = tmp_path / "suite"
    suite.mkdir()
    for name in ("set_table_1obj", "set_table_3obj"):
        for ext in (".json", ".pddl"):
            shutil.copy(synth.data_path("scenarios", name + ext), suite)
    seeds = tmp_path / "seeds.txt"
    seeds.write_text("4 9")
    out = tmp_path / "out"
    assert main(["batch", "--suite", str(suite), "--repeats", "2", "--seeds", str(seeds), "--out", str(out)]) == 0
    rows = read_runs(out / "runs.csv")
    assert len(rows) == 8 and {r["seed"] for r in rows} == {"4", "9"}
    assert "dynamic: success" in capsys.readouterr().out
    assert json.loads((out / "summary.json").read_text())["runs"] == 8


def test_irl_train_and_predict(tmp_path, capsys):
    model = tmp_path / "m.json"
    mdp = synth.data_path("mdp", "one_person.mdp.json")
    demos = synth.data_path("mdp", "one_person.demos.json")
    assert main(["irl-train", "--mdp", str(mdp), "--demos", str(demos), "--out", str(model)]) == 0
    assert "converged=True" in capsys.readouterr().out
    csv = tmp_path / "pred.csv"
    sc = synth.data_path("scenarios", "set_table_3obj.json")
    assert main(["predict", "--model", str(model), "--scenario", str(sc), "--seed", "2", "--out", str(csv)]) == 0
    actions = capsys.readouterr().out.split()
    assert actions[0].startswith("go-to:")
    assert len(HumanTrajectory.from_csv(csv)) > 1


def test_missing_scenario_exit_code(tmp_path, capsys):
    assert main(["plan", "--scenario", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        main(["fly"])


def test_log_level_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(LOG_ENV, "debug")
    main(["plan", "--scenario", str(synth.data_path("scenarios", "set_table_1obj.json")), "--mode", "single",
          "--out", str(tmp_path)])
    assert logging.getLogger("dynlgp").level == logging.DEBUG
    monkeypatch.setenv(LOG_ENV, "loud")
    assert main(["plan", "--scenario", "x.json", "--out", str(tmp_path)]) == 2
    logging.getLogger("dynlgp").setLevel(logging.NOTSET)
