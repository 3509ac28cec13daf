import json
import subprocess
import sys

import pytest

from memrl.cli import make_run_dir, read_predictions, run
from memrl.exceptions import ConfigError
from memrl.synthetic import load_corpus


def only_run_dir(out):
    (path,) = out.iterdir()
    return path


def eval_argv(fixtures_dir, out, *extra):
    return ["eval", "--stub", "--corpus", str(fixtures_dir / "synthetic_eval.json"),
            "--manager-params", str(fixtures_dir / "manager.params"),
            "--answer-params", str(fixtures_dir / "answer.params"), "--out-dir", str(out), *extra]


def test_synth_data_is_byte_identical_across_runs(tmp_path, capsys):
    argv = ["synth-data", "--seed", "7", "--sessions", "3", "--facts", "20", "--dialogues", "2"]
    assert run(argv + ["--out-dir", str(tmp_path / "a")]) == 0
    assert run(argv + ["--out-dir", str(tmp_path / "b")]) == 0
    a, b = only_run_dir(tmp_path / "a"), only_run_dir(tmp_path / "b")
    for name in ("corpus.json", "corpus.oracle.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    dialogues, scripts = load_corpus(a / "corpus.json")
    assert len(dialogues) == 2 and len(dialogues[0].sessions) == 3 and scripts
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["status"] == 0 and manifest["seed"] == 7
    assert manifest["config"]["facts"] == {"value": 20, "source": "cli"}
    assert manifest["outputs"] == ["corpus.json", "corpus.oracle.json"]


def test_eval_stub_matches_the_golden_report(fixtures_dir, tmp_path, capsys):
    assert run(eval_argv(fixtures_dir, tmp_path)) == 0
    out = only_run_dir(tmp_path)
    assert (out / "report.json").read_bytes() == (fixtures_dir / "golden_eval_report.json").read_bytes()
    assert (out / "report.txt").read_bytes() == (fixtures_dir / "golden_eval_report.txt").read_bytes()
    assert capsys.readouterr().out == (fixtures_dir / "golden_eval_report.txt").read_text()
    manifest = json.loads((out / "manifest.json").read_text())
    assert str(fixtures_dir / "manager.params") in manifest["inputs"]
    assert len(manifest["inputs"][str(fixtures_dir / "synthetic_eval.json")]) == 64
    rows = read_predictions(out / "predictions.jsonl")
    assert rows and {r.category for r in rows} <= {"single-hop", "multi-hop", "open-domain", "temporal"}


def test_repeated_eval_is_byte_identical(fixtures_dir, tmp_path):
    assert run(eval_argv(fixtures_dir, tmp_path / "a")) == 0
    assert run(eval_argv(fixtures_dir, tmp_path / "b")) == 0
    for name in ("report.json", "report.txt", "predictions.jsonl"):
        assert (only_run_dir(tmp_path / "a") / name).read_bytes() == (only_run_dir(tmp_path / "b") / name).read_bytes()


def test_group_size_one_is_a_config_error(fixtures_dir, tmp_path, capsys):
    argv = ["train-manager", "--corpus", str(fixtures_dir / "synthetic_train.json"), "--group-size", "1",
            "--out-dir", str(tmp_path)]
    assert run(argv) == 3
    assert "group_size" in capsys.readouterr().err
    assert not tmp_path.exists() or not any(tmp_path.iterdir())


@pytest.mark.parametrize("argv", [["frobnicate"], ["eval", "--no-such-flag"], []])
def test_usage_errors_exit_two(argv, capsys):
    assert run(argv) == 2
    assert "usage error" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [["eval", "--runs", "0"], ["eval"], ["synth-data", "--revision-rate", "1.5"], ["eval", "--seed", "x"],
     ["train-answer", "--corpus", "c", "--epsilon", "1"]],
)
def test_invalid_values_exit_three(argv, tmp_path):
    assert run(argv + ["--out-dir", str(tmp_path)]) == 3


def test_judge_without_a_gateway_exits_three(tmp_path):
    (tmp_path / "p.jsonl").write_text("")
    assert run(["judge", "--answers", str(tmp_path / "p.jsonl"), "--out-dir", str(tmp_path / "runs")]) == 3
    manifest = json.loads((only_run_dir(tmp_path / "runs") / "manifest.json").read_text())
    assert manifest["status"] == 3 and "judge needs" in manifest["error"]


def test_judge_scores_eval_predictions_with_a_stub(fixtures_dir, tmp_path, capsys):
    from memrl.gateway import GatewayRequest, StubGateway
    from memrl.prompts import render_judge_prompt

    assert run(eval_argv(fixtures_dir, tmp_path / "e", "--split", "validation")) == 0
    rows = read_predictions(only_run_dir(tmp_path / "e") / "predictions.jsonl")
    stub = StubGateway()
    for r in rows:
        stub.script(GatewayRequest.user(render_judge_prompt(r.question, r.gold_answer, r.prediction)),
                    'Same item. {"label": "CORRECT"}')
    stub.save(tmp_path / "stub.json")
    argv = ["judge", "--answers", str(only_run_dir(tmp_path / "e") / "predictions.jsonl"),
            "--stub-scripts", str(tmp_path / "stub.json"), "--out-dir", str(tmp_path / "j")]
    assert run(argv) == 0
    report = json.loads((only_run_dir(tmp_path / "j") / "report.json").read_text())
    assert report["rows"]["overall"]["judge"] == 1.0


def test_missing_input_is_a_runtime_failure(tmp_path, capsys):
    assert run(["eval", "--corpus", str(tmp_path / "absent.json"), "--out-dir", str(tmp_path / "r")]) == 1
    assert "error" in capsys.readouterr().err


def test_oracle_manager_needs_a_sidecar(fixtures_dir, tmp_path):
    argv = ["eval", "--corpus", str(fixtures_dir / "locomo10.json"), "--manager-params", "oracle",
            "--out-dir", str(tmp_path)]
    assert run(argv) == 3


def test_run_directories_are_never_overwritten(tmp_path):
    first = make_run_dir(tmp_path, "eval", 0)
    second = make_run_dir(tmp_path, "eval", 0)
    assert first != second and first.exists() and second.exists()
    if first.name.rsplit("-", 1)[0] == second.name.rsplit("-", 1)[0]:
        assert second.name.endswith("-1")


def test_read_predictions_rejects_bad_lines(tmp_path):
    (tmp_path / "p.jsonl").write_text('{"question": "q"}\n')
    with pytest.raises(ConfigError, match="p.jsonl:1"):
        read_predictions(tmp_path / "p.jsonl")


def test_train_commands_write_params_and_logs(fixtures_dir, tmp_path, capsys):
    corpus = str(fixtures_dir / "synthetic_eval.json")
    assert run(["train-manager", "--corpus", str(fixtures_dir / "synthetic_train.json"), "--steps", "2",
                "--out-dir", str(tmp_path / "m")]) == 0
    m = only_run_dir(tmp_path / "m")
    assert (m / "manager.params").exists() and len((m / "training_log.jsonl").read_text().splitlines()) == 2
    assert run(["train-answer", "--corpus", corpus, "--split", "train", "--manager-params", "oracle",
                "--trainer", "ppo", "--steps", "2", "--out-dir", str(tmp_path / "a")]) == 0
    assert (only_run_dir(tmp_path / "a") / "answer.params").exists()
    assert run(["build-bank", "--corpus", corpus, "--manager-params", str(m / "manager.params"),
                "--dialogue", "synthetic-0-0", "--out-dir", str(tmp_path / "b")]) == 0
    b = only_run_dir(tmp_path / "b")
    assert (b / "banks" / "synthetic-0-0.json").exists() and (b / "banks" / "synthetic-0-0.log.jsonl").exists()


def test_console_script_help():
    result = subprocess.run([sys.executable, "-m", "memrl", "--help"], capture_output=True, text=True)
    assert result.returncode == 0 and "synth-data" in result.stdout
