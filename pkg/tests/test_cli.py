from __future__ import annotations

import argparse
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from pytest_mock import MockerFixture

from tempcrl._private.errors import ConfigError, TempcrlError, VerificationExceptionGroup
from tempcrl.cli import CLIBuilder, _overrides, _worker_argv, _workers, get_parser, main
from tempcrl.evaluate import MetricsReport


@pytest.mark.parametrize(
    "args, expected",
    [
        ({"arg": (CLIBuilder.option.VALUE, None)}, ""),
        ({"arg": None}, ""),
        ({"arg": (CLIBuilder.option.PLAIN, "value")}, "--arg value"),
        ({"arg": (CLIBuilder.option.PLAIN, "two words")}, "--arg two words"),
        ({"arg": (CLIBuilder.option.VALUE, "two words")}, "--arg 'two words'"),
        ({"arg": (CLIBuilder.option.VALUE, 3)}, "--arg 3"),
        ({"arg": (CLIBuilder.option.SWITCH, False)}, ""),
        ({"arg": (CLIBuilder.option.SWITCH, True)}, "--arg"),
        ({"arg": (CLIBuilder.option.POSITIONAL, "runs/a b")}, "'runs/a b'"),
        ({"log_path": (CLIBuilder.option.VALUE, "x.log")}, "--log-path x.log"),
    ],
    ids=[
        "none",
        "none-item",
        "plain",
        "plain-no-quotes",
        "value-quoted",
        "value-int",
        "switch-false",
        "switch-true",
        "positional",
        "underscore",
    ],
)
def test_cli__CLIBuilder__command(args, expected):
    cli = CLIBuilder()
    line = cli.command("tempcrl", args)

    assert line == f"tempcrl {expected}".strip()


@pytest.mark.parametrize(
    "args, expected",
    [
        ({"arg": (CLIBuilder.option.VALUE, None)}, []),
        ({"arg": (CLIBuilder.option.VALUE, "two words")}, ["--arg", "two words"]),
        ({"arg": (CLIBuilder.option.SWITCH, True)}, ["--arg"]),
        ({"arg": (CLIBuilder.option.POSITIONAL, "value")}, ["value"]),
        ({"suite": (CLIBuilder.option.VALUE, ["mi", "flows"])}, ["--suite", "mi", "--suite", "flows"]),
        ({"out": (CLIBuilder.option.POSITIONAL, ["a", "b"])}, ["a", "b"]),
    ],
    ids=["none", "value", "switch", "positional", "list", "positional-list"],
)
def test_cli__CLIBuilder__argv(args, expected):
    cli = CLIBuilder()

    assert cli.argv("verify", args) == ["verify", *expected]
    assert cli.args(args) == expected


def test_cli__CLIBuilder__args__quoted():
    cli = CLIBuilder()

    assert cli.args({"out": (cli.option.POSITIONAL, "a b")}, quote_value=True) == ["'a b'"]


def test_cli__parser__eval_source():
    parser = get_parser()

    with pytest.raises(SystemExit) as e:
        parser.parse_args(["eval", "data", "out"])
    assert e.value.code == 2

    with pytest.raises(SystemExit) as e:
        parser.parse_args(["eval", "data", "out", "--oracle", "--run", "runs"])
    assert e.value.code == 2

    assert parser.parse_args(["eval", "data", "out", "--oracle"]).oracle


def test_cli__parser__invalid_choice():
    with pytest.raises(SystemExit) as e:
        main(["train", "data", "out", "--graph", "dag-gnn"])

    assert e.value.code == 2


def test_cli__overrides():
    args = get_parser().parse_args(["train", "data", "out", "--steps", "5", "--graph", "notears", "--seed", "3"])

    assert _overrides(args) == {"train": {"steps": 5, "graph_method": "notears"}, "seed": 3}


def test_cli__overrides__regularizer_and_schedule():
    args = get_parser().parse_args(
        [
            "train",
            "data",
            "out",
            "--target-classifier-weight",
            "5",
            "--graph-freeze-steps",
            "200",
            "--graph-warmup-steps",
            "0",
        ]
    )

    assert _overrides(args) == {
        "train": {"target_classifier_weight": 5.0, "graph_freeze_steps": 200, "graph_warmup_steps": 0}
    }


@pytest.mark.parametrize(
    "error, code",
    [
        (None, 0),
        (TempcrlError("failure"), 1),
        (ConfigError("bad key"), 1),
        (VerificationExceptionGroup("1 verification checks failed", [AssertionError("mi.ln2")]), 1),
    ],
    ids=["success", "tempcrl-error", "config-error", "verification"],
)
def test_cli__main__exit_code(mocker: MockerFixture, error, code):
    def command(args: argparse.Namespace) -> int:
        if error is not None:
            raise error

        return 0

    mocker.patch.dict("tempcrl.cli.COMMANDS", {"verify": command})

    assert main(["verify"]) == code


@pytest.mark.parametrize(
    "value, expected",
    [
        ("1", 1),
        ("4", 4),
    ],
)
def test_cli__workers(monkeypatch, value, expected):
    monkeypatch.setenv("ICITRIS_THREADS", value)

    assert _workers() == expected


@pytest.mark.parametrize("value", ["0", "-2", "many"])
def test_cli__workers__invalid(monkeypatch, value):
    monkeypatch.setenv("ICITRIS_THREADS", value)

    with pytest.raises(ConfigError, match="ICITRIS_THREADS must be a positive integer"):
        _workers()


def test_cli__workers__default(monkeypatch):
    monkeypatch.delenv("ICITRIS_THREADS", raising=False)

    assert _workers() >= 1


def test_cli__worker_argv__train():
    args = get_parser().parse_args(["train", "data", "out", "--seeds", "0..1", "--steps", "5"])

    assert _worker_argv(args, 1) == [
        sys.executable,
        "-m",
        "tempcrl",
        "train",
        "data/seed_1",
        "out/seed_1",
        "--log-path",
        "out/seed_1/tempcrl.log",
        "--seed",
        "1",
        "--force",
        "--steps",
        "5",
    ]


def test_cli__worker_argv__eval():
    args = get_parser().parse_args(["eval", "data", "out", "--seeds", "2..3", "--run", "runs", "--verbose"])

    argv = _worker_argv(args, 2)

    assert argv[3:6] == ["eval", "data/seed_2", "out/seed_2"]
    assert "--verbose" in argv
    assert "--oracle" not in argv
    assert argv[argv.index("--run") + 1] == "runs/seed_2"


def test_cli__fan_out(tmp_path, monkeypatch, mocker: MockerFixture):
    monkeypatch.setenv("ICITRIS_THREADS", "1")
    run = mocker.patch.object(subprocess, "run", return_value=subprocess.CompletedProcess([], 0))

    assert main(["generate", str(tmp_path / "data"), "--seeds", "0..2", "--k", "3"]) == 0
    assert run.call_count == 3
    assert all((tmp_path / "data" / f"seed_{seed}").is_dir() for seed in range(3))
    assert all("--k" in call.args[0] for call in run.call_args_list)


def test_cli__fan_out__failed_seed(tmp_path, monkeypatch, mocker: MockerFixture):
    def worker(argv: list[str], check: bool) -> subprocess.CompletedProcess:
        return subprocess.CompletedProcess(argv, 1 if argv[4].endswith("seed_1") else 0)

    monkeypatch.setenv("ICITRIS_THREADS", "2")
    mocker.patch.object(subprocess, "run", side_effect=worker)

    assert main(["generate", str(tmp_path / "data"), "--seeds", "0..2"]) == 1


def test_cli__fan_out__not_empty(tmp_path, mocker: MockerFixture):
    (tmp_path / "data").mkdir()
    (tmp_path / "data" / "file").write_text("")
    run = mocker.patch.object(subprocess, "run")

    assert main(["generate", str(tmp_path / "data"), "--seeds", "0..1"]) == 1
    assert run.call_count == 0


def test_cli__fan_out__eval_summary(tmp_path, monkeypatch, mocker: MockerFixture):
    def worker(argv: list[str], check: bool) -> subprocess.CompletedProcess:
        seed = int(argv[argv.index("--seed") + 1])
        meta = {"seed": seed, "graph_method": "oracle", "predictor": "linear", "split": "heldout"}
        MetricsReport(np.array([[0.0], [0.5 + 0.1 * seed]]), 0, 1, meta).write(Path(argv[5]) / "metrics.json")
        return subprocess.CompletedProcess(argv, 0)

    monkeypatch.setenv("ICITRIS_THREADS", "1")
    mocker.patch.object(subprocess, "run", side_effect=worker)

    assert main(["eval", "data", str(tmp_path / "eval"), "--oracle", "--seeds", "0..1"]) == 0

    summary = (tmp_path / "eval" / "summary.csv").read_text().splitlines()
    assert summary[0] == "metric,mean,std,count"
    assert summary[1] == "r2_diag,0.55,0.05,2"


def write_config(path: Path, **sections) -> Path:
    config = {
        "scm": {"calibration_batches": 5, "calibration_batch_size": 200, "entangler_samples": 500},
        "train": {"hidden": 8, "graph_samples": 2, "actnorm_init_samples": 120},
        "eval": {"posthoc_batch": 32, "graph_samples": 2},
    }
    for name, values in sections.items():
        config[name].update(values)

    path.write_text(json.dumps(config))
    return path


@pytest.mark.slow
def test_cli__end_to_end(tmp_path):
    config = str(write_config(tmp_path / "config.json"))
    data, run, evaluation = tmp_path / "data", tmp_path / "run", tmp_path / "eval"

    assert main(["generate", str(data), "--config", config, "--k", "2", "--t", "120", "--kind", "chain"]) == 0
    assert {"data.csv", "manifest.json", "graph.dot", "entangler.bin", "config.yaml"} <= {
        p.name for p in data.iterdir()
    }

    train_args = ["--config", config, "--steps", "3", "--batch-size", "16", "--flow-layers", "1"]
    assert main(["train", str(data), str(run), *train_args]) == 0
    assert {"checkpoint.bin", "history.csv", "learned_graph.json", "learned_graph.dot"} <= {
        p.name for p in run.iterdir()
    }

    eval_args = ["--config", config, "--posthoc-steps", "10", "--predictor", "linear"]
    assert main(["eval", str(data), str(evaluation), "--run", str(run), *eval_args]) == 0
    report = MetricsReport.read(evaluation / "metrics.json")
    assert report.r2_matrix.shape == (3, 2)
    assert report.meta["graph_method"] == "enco"
    assert (evaluation / "posthoc_graph.json").exists()
    assert (evaluation / "graph.dot").read_text().startswith("digraph learned_graph {")

    assert main(["eval", str(data), str(tmp_path / "oracle"), "--oracle", *eval_args]) == 0
    assert MetricsReport.read(tmp_path / "oracle" / "metrics.json").r2_diag > 0.99

    assert main(["export-graph", str(run / "checkpoint.bin"), str(tmp_path / "export")]) == 0
    with open(tmp_path / "export" / "learned_graph.json") as f:
        assert json.load(f)["groups"] == ["Z0", "C1", "C2"]


@pytest.mark.slow
def test_cli__train__resume(tmp_path):
    config = str(write_config(tmp_path / "config.json"))
    data, run = tmp_path / "data", tmp_path / "run"
    assert main(["generate", str(data), "--config", config, "--k", "2", "--t", "120"]) == 0

    train_args = ["--config", config, "--batch-size", "16", "--flow-layers", "1"]
    assert main(["train", str(data), str(run), *train_args, "--steps", "2"]) == 0
    assert main(["train", str(data), str(run), *train_args, "--steps", "2"]) == 1
    assert main(["train", str(data), str(run), *train_args, "--steps", "4", "--resume"]) == 0


@pytest.mark.slow
def test_cli__train__k_mismatch(tmp_path):
    config = write_config(tmp_path / "config.json")
    data = tmp_path / "data"
    assert main(["generate", str(data), "--config", str(config), "--k", "2", "--t", "120"]) == 0

    mismatch = str(write_config(tmp_path / "mismatch.json", scm={"k": 3}))
    assert main(["train", str(data), str(tmp_path / "run"), "--config", mismatch, "--steps", "1"]) == 1
    assert not (tmp_path / "run").exists()


def test_cli__verify():
    assert main(["verify", "--suite", "acyclicity", "--suite", "mi"]) == 0
