from __future__ import annotations

import argparse
import os
import shlex
import subprocess
import sys
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum, auto
from pathlib import Path
from typing import Any, TypeAlias

import colorama

from ._private.config import ExperimentConfig
from ._private.errors import ConfigError, TempcrlError, VerificationExceptionGroup
from ._private.logging import TempcrlLogger
from ._private.misc import merge_dict, parse_seed_range
from .evaluate import MetricsReport, evaluate_oracle, evaluate_run, summarize
from .flows import load_flow, save_flow
from .graphlearn import export_edge_probs
from .scm import Trajectory, dot_graph, generate
from .train import checkpoint_load, checkpoint_save, edge_probs, train, write_history
from .verify import SUITES, raise_for_failures, run_verification

__all__ = [
    "CLIBuilder",
    "CLIBuilderArgs",
    "main",
]

logger = TempcrlLogger.GetLogger()

THREADS_ENV = "ICITRIS_THREADS"
CHECKPOINT_FILE = "checkpoint.bin"
ENTANGLER_FILE = "entangler.bin"


class CLIBuilder(object):
    """
    Build command lines from a dictionary of typed arguments.
    """

    class option(Enum):
        """
        Command line parameter types.
        """

        PLAIN = auto()
        """
        Use plain parameter value without any modification.
        """

        VALUE = auto()
        """
        Use parameter value but quote it in script mode.
        """

        SWITCH = auto()
        """
        Parameter is a switch which is enabled if value is True.
        """

        POSITIONAL = auto()
        """
        Parameter is a positional argument.
        """

    def command(self, command: str, args: CLIBuilderArgs) -> str:
        """
        Build full command line and return it as a string.

        .. code-block:: python
            :caption: Example

            cli = CLIBuilder()
            args: CLIBuilderArgs = {
                "config": (cli.option.VALUE, None),       # None values are ignored
                "seed": (cli.option.VALUE, 3),            # --seed '3'
                "force": (cli.option.SWITCH, True),       # --force
                "out": (cli.option.POSITIONAL, "runs/a"), # 'runs/a'
            }

            line = cli.command("generate", args)
            # generate --seed 3 --force runs/a

        :param command: Command to call
        :type command: str
        :param args: Command's arguments
        :type args: CLIBuilderArgs
        :return: Full command line as string.
        :rtype: str
        """
        return " ".join(self.__build(command, args, quote_value=True))

    def argv(self, command: str, args: CLIBuilderArgs) -> list[str]:
        """
        Build full command line and return it as list of arguments (full
        argv), ready for :func:`subprocess.run`.

        :param command: Command to call
        :type command: str
        :param args: Command's arguments
        :type args: CLIBuilderArgs
        :return: Full command line as argv
        :rtype: list[str]
        """
        return self.__build(command, args, quote_value=False)

    def args(self, args: CLIBuilderArgs, *, quote_value=False) -> list[str]:
        """
        Build command's arguments and return them as a list (argv without
        command).

        :param args: Command's argument
        :type args: CLIBuilderArgs
        :param quote_value: True if values should be quoted, defaults to False
        :type quote_value: bool, optional
        :return: Arguments ready to use in command line (argv without command)
        :rtype: list[str]
        """
        return self.__build(None, args, quote_value)

    def __build(self, command: str | None, args: CLIBuilderArgs, quote_value: bool) -> list[str]:
        def _get_option(name: str) -> str:
            return "--" + name.replace("_", "-")

        def _get_value(value: Any) -> str:
            return str(value) if not quote_value else shlex.quote(str(value))

        def _add_argv(argv: list[str], key: str | None, value: Any, getvaluefn: Callable[[Any], str]) -> None:
            value = value if isinstance(value, list) else [value]
            for v in value:
                if key is not None:
                    argv.append(_get_option(key))

                argv.append(getvaluefn(v))

        argv = [command] if command is not None else []
        for key, item in args.items():
            if item is None:
                continue

            (type, value) = item
            if value is None:
                continue

            match type:
                case self.option.POSITIONAL:
                    _add_argv(argv, None, value, _get_value)
                case self.option.SWITCH:
                    if value:
                        argv.append(_get_option(key))
                case self.option.VALUE:
                    _add_argv(argv, key, value, _get_value)
                case self.option.PLAIN:
                    _add_argv(argv, key, value, str)
                case _:
                    raise ValueError(f"Unknown option type: {type}")

        return argv


CLIBuilderArgs: TypeAlias = dict[str, tuple[CLIBuilder.option, Any] | None]
"""CLIBuilder args format."""


@dataclass
class Override(object):
    """
    Command line flag that overrides one configuration key.
    """

    flag: str
    key: str
    type: Callable[[str], Any]
    help: str
    choices: Sequence[str] | None = None

    @property
    def dest(self) -> str:
        return self.flag.lstrip("-").replace("-", "_")


GENERATE_OVERRIDES = [
    Override("--kind", "scm.kind", str, "Graph family", ["random", "chain", "full", "empty"]),
    Override("--k", "scm.k", int, "Number of causal variables"),
    Override("--t", "scm.t", int, "Number of time steps"),
    Override("--temporal-prob", "scm.temporal_prob", float, "Temporal edge probability"),
    Override("--obs-sigma", "scm.obs_sigma", float, "Observational noise std"),
    Override("--fp-noise", "scm.fp_noise", float, "Probability that a flagged intervention is not executed"),
    Override("--obs-dim", "scm.obs_dim", int, "Observation dimension (default: 2K)"),
]

TRAIN_OVERRIDES = [
    Override("--graph", "train.graph_method", str, "Instantaneous graph learner", ["enco", "notears", "none"]),
    Override("--epochs", "train.epochs", int, "Number of epochs"),
    Override("--steps", "train.steps", int, "Number of steps, overrides --epochs"),
    Override("--batch-size", "train.batch_size", int, "Batch size"),
    Override("--lr", "train.lr", float, "Learning rate"),
    Override("--graph-lr", "train.graph_lr", float, "Graph learning rate"),
    Override("--lambda-sparse", "train.lambda_sparse", float, "Sparsity regularizer weight"),
    Override("--mi-weight", "train.mi_weight", float, "Weight of the mutual information term"),
    Override(
        "--target-classifier-weight", "train.target_classifier_weight", float, "Weight of the target classifier term"
    ),
    Override("--graph-freeze-steps", "train.graph_freeze_steps", int, "Steps before graph learning starts"),
    Override("--graph-warmup-steps", "train.graph_warmup_steps", int, "Steps of graph learning rate warmup"),
    Override("--flow-layers", "train.flow_layers", int, "Number of encoder flow blocks"),
]

EVAL_OVERRIDES = [
    Override("--predictor", "eval.predictor", str, "R² predictor", ["mlp", "linear"]),
    Override("--split", "eval.split", str, "R² scoring set", ["heldout", "independent"]),
    Override("--posthoc-steps", "eval.posthoc_steps", int, "Steps of post-hoc graph learning"),
    Override("--threshold", "eval.threshold", float, "Edge probability threshold"),
]

OVERRIDES: dict[str, list[Override]] = {
    "generate": GENERATE_OVERRIDES,
    "train": TRAIN_OVERRIDES,
    "eval": EVAL_OVERRIDES,
}


def _defaults_help(overrides: list[Override]) -> dict[str, Any]:
    defaults = ExperimentConfig.Defaults()
    result = {}
    for o in overrides:
        section, name = o.key.split(".")
        result[o.dest] = defaults[section][name]

    return result


def _add_common(parser: argparse.ArgumentParser, *, seeds: bool) -> None:
    parser.add_argument("--config", help="Path to YAML or JSON configuration file")
    parser.add_argument("--log-path", help="Path to log file (default: standard error)")
    parser.add_argument("--seed", type=int, help="Root seed, overrides the configuration")
    parser.add_argument("--verbose", action="store_true", help="Log debug messages")
    if seeds:
        parser.add_argument("--seeds", help="Run seeds a..b (inclusive) into <out>/seed_<n>/")
        parser.add_argument("--force", action="store_true", help="Write into a non-empty output directory")


def _add_overrides(parser: argparse.ArgumentParser, overrides: list[Override]) -> None:
    defaults = _defaults_help(overrides)
    for o in overrides:
        parser.add_argument(
            o.flag,
            dest=o.dest,
            type=o.type,
            choices=o.choices,
            help=f"{o.help} (default: {defaults[o.dest]})",
        )


def get_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tempcrl", description="Causal representation learning with instantaneous effects"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("generate", help="Generate a synthetic dataset")
    p.add_argument("out", help="Output directory")
    _add_common(p, seeds=True)
    _add_overrides(p, GENERATE_OVERRIDES)

    p = commands.add_parser("train", help="Train a model on a dataset")
    p.add_argument("data", help="Dataset directory")
    p.add_argument("out", help="Output directory")
    p.add_argument("--resume", action="store_true", help=f"Continue from <out>/{CHECKPOINT_FILE}")
    _add_common(p, seeds=True)
    _add_overrides(p, TRAIN_OVERRIDES)

    p = commands.add_parser("eval", help="Evaluate a trained model")
    p.add_argument("data", help="Dataset directory")
    p.add_argument("out", help="Output directory")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--run", help=f"Training output directory or {CHECKPOINT_FILE} file")
    source.add_argument("--oracle", action="store_true", help="Evaluate the true factors as latents")
    _add_common(p, seeds=True)
    _add_overrides(p, EVAL_OVERRIDES)

    p = commands.add_parser("verify", help="Run built-in verification checks")
    p.add_argument("--suite", action="append", choices=list(SUITES), help="Run only this suite, can be repeated")
    _add_common(p, seeds=False)

    p = commands.add_parser("export-graph", help="Export learned edge probabilities")
    p.add_argument("checkpoint", help="Checkpoint file")
    p.add_argument("out", help="Output directory")
    _add_common(p, seeds=False)

    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    result: dict[str, Any] = {}
    for o in OVERRIDES.get(args.command, []):
        value = getattr(args, o.dest)
        if value is None:
            continue

        section, name = o.key.split(".")
        result = merge_dict(result, {section: {name: value}})

    if args.seed is not None:
        result["seed"] = args.seed

    return result


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.Load(args.config, _overrides(args))
    config.log(logger)
    return config


def _prepare_out(path: str | Path, force: bool) -> Path:
    """
    :raises TempcrlError: If the directory exists, is not empty and
        ``force`` is not set.
    """
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise TempcrlError(f"Output directory {out} is not empty, use --force to write into it")

    out.mkdir(parents=True, exist_ok=True)
    return out


def _checkpoint_path(run: str | Path) -> Path:
    path = Path(run)
    return path / CHECKPOINT_FILE if path.is_dir() else path


def cmd_generate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out = _prepare_out(args.out, args.force)

    trajectory, entangler = generate(config.scm, config.seed)
    trajectory.save(out)
    save_flow(entangler, out / ENTANGLER_FILE)
    config.dump(out / "config.yaml")

    graph = trajectory.graph
    print(
        f"K={trajectory.K} D={trajectory.D} T={trajectory.T} "
        f"instant_edges={graph.num_instant_edges if graph else 0} "
        f"temporal_edges={graph.num_temporal_edges if graph else 0}"
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args)
    trajectory = Trajectory.load(args.data)
    if config.is_set("scm.k") and config.scm.k != trajectory.K:
        raise ConfigError(f"Configuration has K={config.scm.k}, dataset {args.data} has K={trajectory.K}")

    out = _prepare_out(args.out, args.force or args.resume)
    resume = checkpoint_load(out / CHECKPOINT_FILE, K=trajectory.K) if args.resume else None

    logger.phase("Training")
    result = train(config.train, trajectory, seed=config.seed, resume=resume)

    checkpoint_save(result, out / CHECKPOINT_FILE)
    write_history(result.history, out / "history.csv")
    export_edge_probs(edge_probs(result.graph, result.K), out)
    config.dump(out / "config.yaml")
    logger.info(f"Training finished after {result.step} steps, checkpoint written to {out / CHECKPOINT_FILE}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = _load_config(args)
    trajectory = Trajectory.load(args.data)
    out = _prepare_out(args.out, args.force)

    if args.oracle:
        report, matrices = evaluate_oracle(trajectory, seed=config.seed, config=config.eval)
    else:
        result = checkpoint_load(_checkpoint_path(args.run), K=trajectory.K)
        entangler_path = Path(args.data) / ENTANGLER_FILE
        entangler = load_flow(entangler_path) if entangler_path.exists() else None
        report, matrices = evaluate_run(result, trajectory, seed=config.seed, config=config.eval, entangler=entangler)
        export_edge_probs(matrices["edge_probs"], out)

    report.write(out / "metrics.json")
    export_edge_probs(matrices["posthoc"], out, name="posthoc_graph")
    names = [f"C{i + 1}" for i in range(trajectory.K)]
    (out / "graph.dot").write_text(
        dot_graph(matrices["instant"], matrices["temporal"], names=names, name="learned_graph")
    )
    config.dump(out / "config.yaml")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    status = run_verification(seed=seed, suites=args.suite)
    raise_for_failures(status)
    logger.info(logger.colorize(f"All {len(status.states)} checks passed", colorama.Fore.GREEN))
    return 0


def cmd_export_graph(args: argparse.Namespace) -> int:
    result = checkpoint_load(args.checkpoint)
    if result.graph is None:
        logger.notice("Checkpoint has no graph learner, exporting an empty graph")

    export_edge_probs(edge_probs(result.graph, result.K), args.out)
    return 0


COMMANDS: dict[str, Callable[[argparse.Namespace], int]] = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "verify": cmd_verify,
    "export-graph": cmd_export_graph,
}


def _worker_argv(args: argparse.Namespace, seed: int) -> list[str]:
    """
    Command line of a single-seed run, with every path argument moved into
    the ``seed_<n>`` subdirectory.
    """
    cli = CLIBuilder()
    seed_dir = f"seed_{seed}"
    paths: CLIBuilderArgs = {}
    if args.command in ("train", "eval"):
        paths["data"] = (cli.option.POSITIONAL, str(Path(args.data) / seed_dir))

    paths["out"] = (cli.option.POSITIONAL, str(Path(args.out) / seed_dir))
    options: CLIBuilderArgs = {
        "config": (cli.option.VALUE, args.config),
        "log_path": (cli.option.VALUE, str(Path(args.out) / seed_dir / "tempcrl.log")),
        "seed": (cli.option.VALUE, seed),
        "verbose": (cli.option.SWITCH, args.verbose),
        # the worker log already lives in seed_<n>, the parent checked the output directory
        "force": (cli.option.SWITCH, True),
    }
    if args.command == "train":
        options["resume"] = (cli.option.SWITCH, args.resume)

    if args.command == "eval":
        options["run"] = (cli.option.VALUE, str(Path(args.run) / seed_dir) if args.run else None)
        options["oracle"] = (cli.option.SWITCH, args.oracle)

    for o in OVERRIDES[args.command]:
        options[o.dest] = (cli.option.VALUE, getattr(args, o.dest))

    return [sys.executable, "-m", "tempcrl"] + cli.argv(args.command, {**paths, **options})


def _workers() -> int:
    value = os.environ.get(THREADS_ENV)
    if value is None:
        return os.cpu_count() or 1

    try:
        workers = int(value)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {value!r}") from None

    if workers < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {value!r}")

    return workers


def fan_out(args: argparse.Namespace) -> int:
    """
    Run one worker process per seed of ``--seeds``; at most
    ``ICITRIS_THREADS`` run at the same time.
    """
    seeds = parse_seed_range(args.seeds)
    out = _prepare_out(args.out, args.force or getattr(args, "resume", False))
    for seed in seeds:
        (out / f"seed_{seed}").mkdir(exist_ok=True)

    def run(seed: int) -> int:
        argv = _worker_argv(args, seed)
        logger.debug(f"Running: {shlex.join(argv)}")
        return subprocess.run(argv, check=False).returncode

    logger.phase(f"Running {args.command} for seeds {seeds[0]}..{seeds[-1]}")
    with ThreadPoolExecutor(max_workers=min(_workers(), len(seeds))) as executor:
        codes = dict(zip(seeds, executor.map(run, seeds)))

    failed = [seed for seed, code in codes.items() if code != 0]
    for seed, code in codes.items():
        if code == 0:
            logger.info(f"Seed {seed}: {logger.colorize('done', colorama.Fore.GREEN)}")
        else:
            logger.error(f"Seed {seed}: {logger.colorize(f'failed with exit code {code}', colorama.Fore.RED)}")

    if args.command == "eval":
        reports = [MetricsReport.read(out / f"seed_{s}" / "metrics.json") for s in seeds if s not in failed]
        if reports:
            summary = summarize(reports, out / "summary.csv")
            logger.info("Summary across seeds", extra={"data": {"summary": summary.to_string(index=False)}})

    return 1 if failed else 0


def main(argv: Sequence[str] | None = None) -> int:
    """
    Command line entry point.

    :return: Exit code: 0 on success, 1 on any tempcrl error or failed
        check. Usage errors exit with 2 from argparse.
    """
    args = get_parser().parse_args(argv)
    logger.setup(args.log_path, verbose=args.verbose)
    try:
        if getattr(args, "seeds", None):
            return fan_out(args)

        return COMMANDS[args.command](args)
    except VerificationExceptionGroup as e:
        for error in e.exceptions:
            logger.error(str(error))

        logger.error(str(e))
        return 1
    except TempcrlError as e:
        logger.error(str(e))
        return 1
    finally:
        logger.teardown()
