import json

import numpy as np
import pytest

from portsym import core
from portsym.cli import main
from portsym.domains import make_corridor, make_env
from portsym.harness import read_curve
from portsym.partition import load_partitions


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["collect", "--domain", "corridor", "--budget", "2000", "--seed", "0",
                 "--out", str(d / "data.txt")]) == 0
    assert main(["learn-portable", "--in", str(d / "data.txt"), "--out", str(d / "model.json")]) == 0
    return d


def test_collect_matches_library(workdir):
    ds = core.load(workdir / "data.txt")
    assert ds == core.collect(make_corridor(), 2000, 0)


def test_collect_accepts_descriptor_file(tmp_path):
    desc = tmp_path / "task.json"
    desc.write_text(json.dumps({"family": "corridor", "offset": [3.0, 1.0]}))
    out = tmp_path / "d.txt"
    assert main(["collect", "--domain", "corridor", "--task", str(desc), "--budget", "20", "--out", str(out)]) == 0
    assert core.load(out) == core.collect(make_env(json.loads(desc.read_text())), 20, 0)


def test_collect_treasure_level(tmp_path):
    out = tmp_path / "t.txt"
    assert main(["collect", "--domain", "treasure", "--level", "2", "--budget", "30", "--out", str(out)]) == 0
    assert core.load(out).obs.shape == (30, 11)


def test_partition_command(workdir):
    out = workdir / "parts.json"
    assert main(["partition", "--in", str(workdir / "data.txt"), "--space", "ego", "--eps", "0.1",
                 "--min-samples", "5", "--out", str(out)]) == 0
    assert len(load_partitions(out)) == 6


def test_learned_model_file(workdir):
    model = json.loads((workdir / "model.json").read_text())
    assert len(model["rules"]) == 6 and len(model["vocabulary"]) == 3


def test_append_model(workdir):
    out = workdir / "model2.json"
    assert main(["learn-portable", "--in", str(workdir / "data.txt"), "--append-model",
                 str(workdir / "model.json"), "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())["rules"]) == 6


def _goal_file(path, node):
    env = make_corridor()
    rng = np.random.default_rng(0)
    states = [env.sample_node_state(n, rng).tolist() for n in range(4) for _ in range(20)]
    flags = [env.node_of(s) == node for s in states]
    path.write_text(json.dumps({"states": states, "in_goal": flags}))


def test_ground_emit_and_plan(workdir, capsys):
    _goal_file(workdir / "goals.json", 2)
    g = workdir / "grounded.json"
    assert main(["ground", "--model", str(workdir / "model.json"), "--in", str(workdir / "data.txt"),
                 "--goals", str(workdir / "goals.json"), "--out", str(g)]) == 0
    assert main(["emit-ppddl", "--grounded", str(g), "--out", str(workdir / "d.ppddl")]) == 0
    assert "(probabilistic" in (workdir / "d.ppddl").read_text()

    env = make_corridor()
    start = workdir / "start.json"
    start.write_text(json.dumps({"states": [env.sample_node_state(3).tolist() for _ in range(8)],
                                 "task": env.task.descriptor()}))
    capsys.readouterr()
    assert main(["plan", "--grounded", str(g), "--start", str(start), "--max-depth", "4"]) == 0
    record = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert record["found"] and record["names"][0].startswith("Inward")
    assert 0.75 <= record["probability"] <= 1.0


def test_plan_reports_failure(workdir, capsys):
    env = make_corridor()
    start = workdir / "start2.json"
    start.write_text(json.dumps({"states": [env.sample_node_state(0).tolist()], "task": env.task.descriptor()}))
    capsys.readouterr()
    assert main(["plan", "--grounded", str(workdir / "grounded.json"), "--start", str(start),
                 "--max-depth", "0"]) == 1
    assert json.loads(capsys.readouterr().out.strip()) == {"found": False}


def test_bad_dataset_exits_with_error(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("not a header\n")
    assert main(["partition", "--in", str(bad), "--out", str(tmp_path / "p.json")]) == 2
    assert "line 1" in capsys.readouterr().err


def test_experiment_from_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"domain": "corridor", "num_tasks": 2, "permutations": 1, "goals_per_task": 10}))
    csv, svg = tmp_path / "c.csv", tmp_path / "c.svg"
    assert main(["experiment", "--config", str(cfg), "--condition", "task", "--seed", "0",
                 "--out-csv", str(csv), "--out-plot", str(svg)]) == 0
    points = read_curve(csv)
    assert [p.task for p in points] == [1, 2]
    assert svg.exists()


def test_experiment_needs_a_domain(tmp_path):
    with pytest.raises(SystemExit):
        main(["experiment", "--out-csv", str(tmp_path / "c.csv")])
