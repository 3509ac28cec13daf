"""Command-line entry point: ``memrl <command> [options]``.

Exit status is 0 on success, 2 for usage errors, 3 for invalid
configuration and 1 for runtime failures. Every run writes its outputs and a
``manifest.json`` into a fresh directory under ``--out-dir``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import COMMANDS, ResolvedConfig, load_config_file, options_for, resolve
from .dataset import load_locomo, split_dataset
from .exceptions import ConfigError, MemrlError, UsageError
from .extraction import RuleExtractor
from .gateway import EndpointProfile, HttpGateway, StubGateway
from .memory import save_bank, write_log
from .pipeline import (
    OracleOperationPolicy,
    Prediction,
    answer_tuples_for,
    construct_memory_bank,
    evaluate,
    manager_episodes,
    predict,
    score_predictions,
    train_answer_agent,
    train_memory_manager,
)
from .policy import (
    AnswerPolicyParameters,
    LLMAnswerPolicy,
    LLMOperationPolicy,
    OperationPolicyParameters,
    hand_set_answer_policy,
    load_params,
    save_params,
)
from .rl import TrainerConfig
from .synthetic import generate_corpus, load_corpus, save_corpus, sidecar_path

logger = logging.getLogger("memrl")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="memrl", description="Memory manager and answer agent trained with RL.")
    parser.add_argument("--version", action="version", version=f"memrl {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for command in COMMANDS:
        p = sub.add_parser(command, help=command)
        p.add_argument("--config", help="flat YAML config file")
        mode = p.add_mutually_exclusive_group()
        mode.add_argument("--stub", dest="mode", action="store_const", const="stub", help="offline gateway (default)")
        mode.add_argument("--live", dest="mode", action="store_const", const="live", help="real gateway endpoint")
        for option in options_for(command):
            if option.name == "mode":
                continue
            flag = "--" + option.name.replace("_", "-")
            if option.flag:
                p.add_argument(flag, dest=option.name, action=argparse.BooleanOptionalAction, default=None,
                               help=option.help)
            else:
                p.add_argument(flag, dest=option.name, default=None, help=option.help)
    return parser


# ---------------------------------------------------------------------------
# run directory and manifest
# ---------------------------------------------------------------------------


def make_run_dir(out_dir, command: str, seed: int) -> Path:
    """``<out_dir>/<command>-<UTC timestamp>-seed<seed>``, suffixed so a rerun never overwrites."""
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    base = Path(out_dir) / f"{command}-{stamp}-seed{seed}"
    path, n = base, 1
    while path.exists():
        path = base.with_name(f"{base.name}-{n}")
        n += 1
    path.mkdir(parents=True)
    return path


def file_hash(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


class Run:
    def __init__(self, config: ResolvedConfig, argv, run_dir: Path):
        self.config = config
        self.argv = list(argv)
        self.dir = run_dir
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.summary: dict = {}
        self.started = datetime.now(timezone.utc).isoformat()

    def input(self, path) -> Path:
        path = Path(path)
        self.inputs[str(path)] = file_hash(path)
        return path

    def output(self, name: str) -> Path:
        path = self.dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(name)
        return path

    def write_manifest(self, status: int, error: str | None = None):
        manifest = {
            "command": self.config.command,
            "argv": self.argv,
            "version": __version__,
            "config": self.config.echo(),
            "seed": self.config.seed,
            "inputs": self.inputs,
            "outputs": sorted(set(self.outputs)),
            "summary": self.summary,
            "status": status,
            "error": error,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
        }
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# policies, gateway, corpora
# ---------------------------------------------------------------------------


def _gateway(config: ResolvedConfig, run: Run):
    if config.mode == "live":
        profile = EndpointProfile.from_env(base_url=config.gateway_url, model=config.gateway_model)
        run.summary["gateway"] = {"model": profile.model, "base_url": profile.base_url}
        return HttpGateway(profile, max_concurrency=config.workers)
    if config.stub_scripts:
        return StubGateway.load(run.input(config.stub_scripts))
    return None


def _read_corpus(run: Run, path):
    path = run.input(path)
    side = sidecar_path(path)
    if side.exists():
        run.input(side)
        return load_corpus(path)
    return list(load_locomo(path).dialogues), None


def _select(dialogues, scripts, split: str):
    if split == "all":
        return dialogues, scripts
    index = ("train", "validation", "test").index(split)
    parts = split_dataset(dialogues)
    chosen_ids = {d.dialogue_id for d in parts[index]}
    keep = [i for i, d in enumerate(dialogues) if d.dialogue_id in chosen_ids]
    return [dialogues[i] for i in keep], None if scripts is None else [scripts[i] for i in keep]


def _manager(value, dialogues, scripts, gateway, run: Run):
    if value is None:
        return OperationPolicyParameters.zeros()
    if value == "oracle":
        if scripts is None:
            raise ConfigError("manager 'oracle' needs a synthetic corpus with its oracle sidecar")
        return OracleOperationPolicy({d.dialogue_id: s for d, s in zip(dialogues, scripts)})
    if value == "llm":
        if gateway is None:
            raise ConfigError("manager 'llm' needs --live or --stub-scripts")
        return LLMOperationPolicy(gateway)
    params = load_params(run.input(value))
    if not isinstance(params, OperationPolicyParameters):
        raise ConfigError(f"{value} holds answer-agent parameters, not a manager")
    return params


def _answer(value, gateway, run: Run):
    if value is None:
        return hand_set_answer_policy()
    if value == "llm":
        if gateway is None:
            raise ConfigError("answer policy 'llm' needs --live or --stub-scripts")
        return LLMAnswerPolicy(gateway)
    params = load_params(run.input(value))
    if not isinstance(params, AnswerPolicyParameters):
        raise ConfigError(f"{value} holds manager parameters, not an answer agent")
    return params


def _trainer_config(config: ResolvedConfig) -> TrainerConfig:
    try:
        return TrainerConfig(
            epsilon=config.epsilon,
            beta=config.beta,
            group_size=config.group_size,
            actor_lr=config.actor_lr,
            critic_lr=config.critic_lr,
            seed=config.seed,
            batch_size=config.values.get("batch_size") or 8,
            max_steps=config.steps,
            temperature=config.temperature,
            checkpoint_every=config.checkpoint_every,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth_data(config: ResolvedConfig, run: Run) -> int:
    dialogues, scripts = generate_corpus(
        config.seed,
        config.dialogues,
        n_sessions=config.sessions,
        n_facts=config.facts,
        revision_rate=config.revision_rate,
        contradiction_rate=config.contradiction_rate,
        restatement_rate=config.restatement_rate,
        distractor_rate=config.distractor_rate,
    )
    corpus = run.output("corpus.json")
    side = save_corpus(corpus, dialogues, scripts)
    run.outputs.append(side.name)
    run.summary.update(dialogues=len(dialogues), questions=sum(len(d.qa) for d in dialogues))
    print(corpus)
    return 0


def cmd_build_bank(config: ResolvedConfig, run: Run) -> int:
    dialogues, scripts = _read_corpus(run, config.corpus)
    gateway = _gateway(config, run)
    if config.dialogue is not None:
        keep = [i for i, d in enumerate(dialogues) if d.dialogue_id == config.dialogue]
        if not keep:
            raise ConfigError(f"no dialogue {config.dialogue!r} in {config.corpus}")
        dialogues = [dialogues[i] for i in keep]
        scripts = None if scripts is None else [scripts[i] for i in keep]
    manager = _manager(config.manager_params, dialogues, scripts, gateway, run)
    sizes = {}
    for dialogue in dialogues:
        bank, _ = construct_memory_bank(dialogue, manager, RuleExtractor(), k=config.manager_k)
        save_bank(bank, run.output(f"banks/{dialogue.dialogue_id}.json"))
        write_log(bank.log, run.output(f"banks/{dialogue.dialogue_id}.log.jsonl"))
        sizes[dialogue.dialogue_id] = len(bank)
    run.summary["bank_sizes"] = sizes
    print(run.dir)
    return 0


def _finish_training(result, run: Run, name: str) -> int:
    save_params(result.policy, run.output(f"{name}.params"))
    result.log.write(run.output("training_log.jsonl"))
    curve = result.log.curve()
    run.summary.update(steps=len(curve), final_reward=curve[-1] if curve else None, halted=result.halted)
    print(run.dir / f"{name}.params")
    if result.halted:
        print(f"error: training halted: {result.halted}", file=sys.stderr)
        return 1
    return 0


def cmd_train_manager(config: ResolvedConfig, run: Run) -> int:
    trainer = _trainer_config(config)
    dialogues, scripts = _read_corpus(run, config.corpus)
    dialogues, scripts = _select(dialogues, scripts, config.split)
    gateway = _gateway(config, run)
    answer = _answer(config.answer_params, gateway, run)
    episodes = manager_episodes(dialogues, scripts, RuleExtractor(), config.window)
    result = train_memory_manager(
        episodes, OperationPolicyParameters.zeros(), answer, config.trainer, trainer,
        checkpoint_dir=run.dir / "checkpoints",
    )
    return _finish_training(result, run, "manager")


def cmd_train_answer(config: ResolvedConfig, run: Run) -> int:
    trainer = _trainer_config(config)
    dialogues, scripts = _read_corpus(run, config.corpus)
    dialogues, scripts = _select(dialogues, scripts, config.split)
    gateway = _gateway(config, run)
    manager = _manager(config.manager_params, dialogues, scripts, gateway, run)
    tuples = answer_tuples_for(dialogues, manager, RuleExtractor())
    result = train_answer_agent(
        tuples, AnswerPolicyParameters.zeros(), config.trainer, trainer, checkpoint_dir=run.dir / "checkpoints"
    )
    return _finish_training(result, run, "answer")


def cmd_eval(config: ResolvedConfig, run: Run) -> int:
    dialogues, scripts = _read_corpus(run, config.corpus)
    dialogues, scripts = _select(dialogues, scripts, config.split)
    gateway = _gateway(config, run)
    manager = _manager(config.manager_params, dialogues, scripts, gateway, run)
    answer = _answer(config.answer_params, gateway, run)
    judge = gateway if config.mode == "live" or config.stub_scripts else None
    seeds = [config.seed + i for i in range(config.runs)]
    report = evaluate(dialogues, manager, answer, config.runs, RuleExtractor(), judge, config.distill,
                      config.workers, seeds)
    run.output("report.json").write_text(report.to_json(), encoding="utf-8")
    run.output("report.txt").write_text(report.to_table(), encoding="utf-8")
    rows = predict(dialogues, manager, answer, RuleExtractor(), distill=config.distill)
    run.output("predictions.jsonl").write_text(
        "".join(json.dumps(r.to_record(), sort_keys=True) + "\n" for r in rows), encoding="utf-8"
    )
    run.summary["overall"] = report.rows["overall"]
    print(report.to_table(), end="")
    return 0


def read_predictions(path) -> list[Prediction]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                rows.append(Prediction(r["dialogue_id"], r["question"], r["answer"], r["category"],
                                       r["prediction"], tuple(r.get("distilled_ids", ()))))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ConfigError(f"{path}:{n}: not a prediction record ({exc})") from None
    return rows


def cmd_judge(config: ResolvedConfig, run: Run) -> int:
    gateway = _gateway(config, run)
    if gateway is None:
        raise ConfigError("judge needs --live or --stub-scripts")
    rows = read_predictions(run.input(config.answers))
    report = score_predictions(rows, gateway, config.workers, config.seed)
    run.output("report.json").write_text(report.to_json(), encoding="utf-8")
    run.output("report.txt").write_text(report.to_table(), encoding="utf-8")
    run.summary["overall"] = report.rows["overall"]
    print(report.to_table(), end="")
    return 0


HANDLERS = {
    "synth-data": cmd_synth_data,
    "build-bank": cmd_build_bank,
    "train-manager": cmd_train_manager,
    "train-answer": cmd_train_answer,
    "eval": cmd_eval,
    "judge": cmd_judge,
}


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    cli = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        file_values = load_config_file(args.config) if args.config else {}
        config = resolve(args.command, cli, file_values)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    logging.basicConfig(level=config.log_level, format="%(levelname)s %(name)s: %(message)s")
    run = Run(config, argv, make_run_dir(config.out_dir, args.command, config.seed))
    if args.config:
        run.input(args.config)
    try:
        status = HANDLERS[args.command](config, run)
        error = None
    except ConfigError as exc:
        status, error = 3, f"ConfigError: {exc}"
        print(f"config error: {exc}", file=sys.stderr)
    except (MemrlError, OSError) as exc:
        status, error = 1, f"{type(exc).__name__}: {exc}"
        print(f"error: {error}", file=sys.stderr)
    run.write_manifest(status, error)
    return status


def main() -> None:
    sys.exit(run())
