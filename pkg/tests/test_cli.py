import json
import shutil
import subprocess
import sys
import time
from dataclasses import fields
from pathlib import Path

import pytest
from filelock import FileLock

from egowm.cli import main
from egowm.config import RunConfig
from egowm.datapipe.dataset import read_dataset, read_keypoints
from egowm.worldmodel import load_checkpoint

FIXTURES = Path(__file__).parent / "fixtures" / "clips"
SMALL = ["--seed", "3", "--set", "model.hidden=[16]", "--set", "train.batch_size=8"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("gen-data", "--out", d / "data.bin", "--episodes", 4, "--length", 12, "--keypoints-dir", d / "kp", *SMALL) == 0
    assert run("train", "--data", d / "data.bin", "--out", d / "model.ckpt", "--iterations", 20, *SMALL) == 0
    return d


def last_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)


class TestCommands:
    def test_gen_data(self, work):
        records, meta = read_dataset(work / "data.bin")
        assert len(records) == 4 and all(r.frame_count == 13 for r in records)
        assert meta["command"] == "gen-data" and meta["config"]["run"]["seed"] == 3 and "egowm" in meta["build"]
        kp = read_keypoints(work / "kp" / f"{records[0].record_id}.jsonl")
        assert (kp == records[0].keypoints).all()

    def test_train_outputs(self, work):
        model, ema, echo = load_checkpoint(work / "model.ckpt")
        assert ema is not None and echo["config"]["train"]["iterations"] == 20
        log = (work / "model.ckpt.log.jsonl").read_text().splitlines()
        assert len(log) >= 1 and "latent_loss" in json.loads(log[-1])

    def test_eval_rollout(self, work, capsys):
        assert run("eval-rollout", "--model", work / "model.ckpt", "--data", work / "data.bin", "--out", work / "ro.json", "--csv", work / "ro.csv", *SMALL) == 0
        rep = json.loads((work / "ro.json").read_text())
        assert len(rep["report"]["per_step_l2"]) == 8 and rep["command"] == "eval-rollout"
        assert len((work / "ro.csv").read_text().splitlines()) == 9

    def test_plan_five_runs(self, work, capsys):
        capsys.readouterr()
        assert run("plan", "--model", work / "model.ckpt", "--out", work / "plan.json", "--runs", 5, "--episodes", 3, *SMALL) == 0
        out = capsys.readouterr().out.splitlines()
        rows = [line for line in out if line[:1].isdigit()]
        assert len(rows) == 5
        assert any(line.startswith("mean") for line in out) and any(line.startswith("std") for line in out)
        rep = json.loads((work / "plan.json").read_text())
        assert len(rep["runs"]) == 5 and len(rep["plans"][0]) == 3
        assert set(rep["summary"]["win_rate"]) >= {"mean", "std"}

    def test_plan_replan(self, work):
        assert run("plan", "--model", work / "model.ckpt", "--out", work / "rp.json", "--runs", 1, "--episodes", 2, "--replan-every", 4, *SMALL) == 0
        rep = json.loads((work / "rp.json").read_text())
        assert "replan_goal_distance" in rep["runs"][0] and rep["summary"]["win_rate"]["single_run"]

    def test_report(self, work):
        run("plan", "--model", work / "model.ckpt", "--out", work / "p1.json", "--runs", 1, "--episodes", 2, *SMALL)
        run("eval-rollout", "--model", work / "model.ckpt", "--data", work / "data.bin", "--out", work / "r1.json", *SMALL)
        assert run("report", "--train-log", work / "model.ckpt.log.jsonl", "--rollout", work / "r1.json", "--plan", work / "p1.json", "--out-dir", work / "rep") == 0
        files = json.loads((work / "rep" / "report.json").read_text())["files"]
        assert any(f.endswith(".png") for f in files) and any(f.endswith(".csv") for f in files)
        for f in files:
            assert (work / "rep" / f).stat().st_size > 0

    def test_filter_fixtures(self, tmp_path, capsys):
        assert run("filter", "--in", FIXTURES, "--out", tmp_path / "m.csv") == 0
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0].startswith("clip,start,end")
        verdict = {line.split(",")[0]: line.split(",")[7] for line in lines[1:]}
        assert verdict == {name: ("true" if name == "clean" else "false") for name in verdict}
        assert set(verdict) == {p.name for p in FIXTURES.iterdir()}
        assert json.loads((tmp_path / "m.csv.meta.json").read_text())["command"] == "filter"

    def test_filter_threshold_file(self, tmp_path):
        (tmp_path / "t.toml").write_text("[filter]\nblur = 1e9\n")
        assert run("filter", "--in", FIXTURES / "clean", "--out", tmp_path / "m.csv", "--thresholds", tmp_path / "t.toml") == 0
        assert "blur_median" in (tmp_path / "m.csv").read_text()

    def test_filter_min_duration(self, tmp_path):
        assert run("filter", "--in", FIXTURES / "clean", "--out", tmp_path / "m.csv", "--min-duration", 9) == 0
        assert "no_segment" in (tmp_path / "m.csv").read_text()


class TestErrors:
    def test_missing_input_is_data_error(self, tmp_path, capsys):
        assert run("train", "--data", tmp_path / "none.bin", "--out", tmp_path / "m.ckpt") == 2
        err = last_error(capsys)
        assert err == {"error": "data", "type": "DataError", "message": err["message"], "exit_code": 2}

    def test_unknown_command_is_usage(self, capsys):
        assert run("fly") == 1
        assert last_error(capsys)["exit_code"] == 1

    def test_unknown_config_key_is_usage(self, tmp_path, capsys):
        assert run("gen-data", "--out", tmp_path / "d.bin", "--set", "train.nope=1") == 1
        assert "train.nope" in last_error(capsys)["message"]

    def test_bad_config_value(self, tmp_path, capsys):
        (tmp_path / "c.toml").write_text("[planner]\ncost_mode = 'mean'\n")
        assert run("gen-data", "--out", tmp_path / "d.bin", "--config", tmp_path / "c.toml") == 1

    def test_corrupt_dataset(self, tmp_path, capsys):
        (tmp_path / "d.bin").write_bytes(b"EGWMDATA" + b"\0" * 20)
        assert run("train", "--data", tmp_path / "d.bin", "--out", tmp_path / "m.ckpt") == 2

    def test_corrupt_checkpoint(self, work, tmp_path, capsys):
        (tmp_path / "m.ckpt").write_bytes(b"junk")
        assert run("eval-rollout", "--model", tmp_path / "m.ckpt", "--data", work / "data.bin", "--out", tmp_path / "r.json") == 2

    def test_bad_replan(self, work, tmp_path, capsys):
        assert run("plan", "--model", work / "model.ckpt", "--out", tmp_path / "p.json", "--replan-every", 0) == 1

    def test_report_needs_input(self, tmp_path, capsys):
        assert run("report", "--out-dir", tmp_path) == 1

    def test_locked_output(self, tmp_path, capsys):
        out = tmp_path / "d.bin"
        with FileLock(str(out) + ".lock"):
            assert run("gen-data", "--out", out, "--episodes", 1, "--length", 4) == 2
        assert "locked" in last_error(capsys)["message"]
        assert not out.exists()


class TestHelp:
    def test_help_lists_every_key(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        cfg = RunConfig()
        for sec in fields(cfg):
            for f in fields(getattr(cfg, sec.name)):
                assert f"  {f.name} = " in text, f"{sec.name}.{f.name}"

    def test_console_script_module(self):
        res = subprocess.run([sys.executable, "-m", "egowm.cli", "--version"], capture_output=True, text=True)
        assert res.returncode == 0 and res.stdout.startswith("egowm ")


def snapshot(paths):
    return {p.name: p.read_bytes() for p in paths}


class TestReproducible:
    def test_every_command_byte_identical(self, tmp_path):
        d = tmp_path
        steps = [
            (["gen-data", "--out", d / "data.bin", "--episodes", 3, "--length", 12, "--keypoints-dir", d / "kp"], [d / "data.bin"]),
            (["train", "--data", d / "data.bin", "--out", d / "m.ckpt", "--iterations", 10], [d / "m.ckpt", d / "m.ckpt.log.jsonl"]),
            (["eval-rollout", "--model", d / "m.ckpt", "--data", d / "data.bin", "--out", d / "r.json", "--csv", d / "r.csv"], [d / "r.json", d / "r.csv"]),
            (["plan", "--model", d / "m.ckpt", "--out", d / "p.json", "--runs", 2, "--episodes", 2, "--replan-every", 4], [d / "p.json"]),
            (["filter", "--in", FIXTURES, "--out", d / "f.csv"], [d / "f.csv", d / "f.csv.meta.json"]),
            (["report", "--train-log", d / "m.ckpt.log.jsonl", "--rollout", d / "r.json", "--plan", d / "p.json", "--out-dir", d / "rep"], None),
        ]
        for argv, outputs in steps:
            assert run(*argv, *SMALL) == 0
            files = outputs or sorted((d / "rep").iterdir())
            first = snapshot(files)
            if outputs is None:
                shutil.rmtree(d / "rep")
            assert run(*argv, *SMALL) == 0
            files = outputs or sorted((d / "rep").iterdir())
            assert snapshot(files) == first, argv[0]


def test_eval_rollout_generates_heldout_data(work, tmp_path):
    argv = ["eval-rollout", "--model", work / "model.ckpt", "--out", tmp_path / "r.json", "--set", "eval.episodes=2", *SMALL]
    assert run(*argv) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["report"]["episodes"] == 2 and rep["data"].startswith("generated")


@pytest.mark.slow
def test_demo_config_end_to_end(tmp_path):
    demo = Path(__file__).parent.parent / "configs" / "demo.toml"
    t0 = time.perf_counter()
    assert run("gen-data", "--config", demo, "--out", tmp_path / "data.bin") == 0
    assert run("train", "--config", demo, "--data", tmp_path / "data.bin", "--out", tmp_path / "m.ckpt") == 0
    assert run("eval-rollout", "--config", demo, "--model", tmp_path / "m.ckpt", "--out", tmp_path / "r.json") == 0
    assert time.perf_counter() - t0 < 900
    rep = json.loads((tmp_path / "r.json").read_text())["report"]
    assert rep["episodes"] == 40 and rep["avg_error"] > 0
