"""Run configuration: option registry, precedence resolution and validation.

Values resolve as CLI flag > config file > ``MEMRL_*`` environment variable >
default, and every value is validated before any work starts.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

import yaml

from .exceptions import ConfigError

ENV_PREFIX = "MEMRL_"


def _positive(v):
    return None if v >= 1 else "must be >= 1"


def _non_negative(v):
    return None if v >= 0 else "must be >= 0"


def _rate(v):
    return None if 0.0 <= v <= 1.0 else "must be in [0, 1]"


def _open_unit(v):
    return None if 0.0 < v < 1.0 else "must be in (0, 1)"


def _finite_non_negative(v):
    return None if math.isfinite(v) and v >= 0 else "must be finite and >= 0"


def _finite_positive(v):
    return None if math.isfinite(v) and v > 0 else "must be finite and > 0"


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


@dataclass(frozen=True)
class Option:
    name: str
    type: Callable[[Any], Any]
    default: Any = None
    help: str = ""
    check: Callable[[Any], str | None] | None = None
    choices: tuple | None = None
    required: bool = False
    flag: bool = False


COMMON = (
    Option("seed", int, 0, "random seed", _non_negative),
    Option("mode", str, "stub", "gateway mode", choices=("stub", "live")),
    Option("workers", int, 4, "parallel judge requests", _positive),
    Option("out_dir", str, "runs", "parent directory for per-run outputs"),
    Option("stub_scripts", str, None, "scripted gateway replies (stub mode)"),
    Option("gateway_url", str, None, "chat-completion base URL (live mode)"),
    Option("gateway_model", str, None, "model name (live mode)"),
    Option("log_level", str, "WARNING", "logging threshold", choices=("DEBUG", "INFO", "WARNING", "ERROR")),
)

_TRAINER = (
    Option("trainer", str, "grpo", "RL algorithm", choices=("grpo", "ppo")),
    Option("group_size", int, 4, "candidates per state", _positive),
    Option("critic_lr", float, 0.05, "PPO critic step size", _finite_non_negative),
    Option("beta", float, 0.01, "KL weight (GRPO)", _finite_non_negative),
    Option("epsilon", float, 0.2, "clip range", _open_unit),
    Option("steps", int, 200, "update steps", _non_negative),
    Option("temperature", float, 1.0, "sampling temperature while training", _finite_positive),
    Option("checkpoint_every", int, 0, "checkpoint period in steps (0: off)", _non_negative),
)

_SPLITS = ("train", "validation", "test", "all")

COMMANDS: dict[str, tuple[Option, ...]] = {
    "synth-data": (
        Option("dialogues", int, 10, "number of dialogues", _positive),
        Option("sessions", int, 3, "sessions per dialogue", _positive),
        Option("facts", int, 12, "facts per dialogue", _non_negative),
        Option("revision_rate", float, 0.5, "share of facts revised", _rate),
        Option("contradiction_rate", float, 0.4, "share of the rest contradicted", _rate),
        Option("restatement_rate", float, 0.7, "share of the rest restated", _rate),
        Option("distractor_rate", float, 0.5, "share of replies that are distractors", _rate),
    ),
    "build-bank": (
        Option("corpus", str, None, "corpus file", required=True),
        Option("manager_params", str, None, "manager parameter file, or 'oracle'"),
        Option("dialogue", str, None, "only this dialogue id"),
        Option("manager_k", int, 10, "memories retrieved per decision", _positive),
    ),
    "train-manager": (
        Option("corpus", str, None, "synthetic training corpus (with oracle sidecar)", required=True),
        Option("split", str, "all", "dialogues to train on", choices=_SPLITS),
        Option("answer_params", str, None, "frozen answer policy (default: hand-set)"),
        Option("actor_lr", float, 2.0, "policy step size", _finite_non_negative),
        Option("window", int, 50, "turns in each temporal bank", _positive),
        *_TRAINER,
    ),
    "train-answer": (
        Option("corpus", str, None, "corpus file", required=True),
        Option("split", str, "all", "dialogues to train on", choices=_SPLITS),
        Option("manager_params", str, None, "manager that builds the banks, or 'oracle'"),
        Option("actor_lr", float, 1.0, "policy step size", _finite_non_negative),
        Option("batch_size", int, 8, "tuples per step", _positive),
        *_TRAINER,
    ),
    "eval": (
        Option("corpus", str, None, "corpus file", required=True),
        Option("split", str, "test", "dialogues to evaluate", choices=_SPLITS),
        Option("manager_params", str, None, "manager parameter file, or 'oracle' (default: untrained)"),
        Option("answer_params", str, None, "answer parameter file (default: hand-set)"),
        Option("runs", int, 3, "evaluation repeats", _positive),
        Option("distill", _bool, True, "filter retrieved memories before answering", flag=True),
    ),
    "judge": (Option("answers", str, None, "predictions file from eval", required=True),),
}


@dataclass(frozen=True)
class ResolvedConfig:
    command: str
    values: dict
    sources: dict

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def echo(self) -> dict:
        return {k: {"value": self.values[k], "source": self.sources[k]} for k in sorted(self.values)}


def options_for(command: str) -> tuple[Option, ...]:
    return COMMON + COMMANDS[command]


def load_config_file(path) -> dict:
    """Flat key/value YAML; keys may use dashes or underscores."""
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must be a flat mapping")
    out = {}
    for key, value in data.items():
        if isinstance(value, (dict, list)):
            raise ConfigError(f"config key {key!r} must be a scalar")
        out[str(key).replace("-", "_")] = value
    return out


def resolve(
    command: str,
    cli: Mapping[str, Any],
    file_values: Mapping[str, Any] | None = None,
    env: Mapping[str, str] | None = None,
) -> ResolvedConfig:
    options = {o.name: o for o in options_for(command)}
    file_values = dict(file_values or {})
    env = os.environ if env is None else env
    unknown = sorted(set(file_values) - set(options))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {unknown}")
    values, sources = {}, {}
    for name, option in options.items():
        env_key = ENV_PREFIX + name.upper()
        if cli.get(name) is not None:
            raw, source = cli[name], "cli"
        elif name in file_values:
            raw, source = file_values[name], "config"
        elif env_key in env:
            raw, source = env[env_key], "env"
        else:
            raw, source = option.default, "default"
        if raw is None:
            if option.required:
                raise ConfigError(f"--{name.replace('_', '-')} is required for {command}")
            values[name], sources[name] = None, source
            continue
        try:
            value = option.type(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: cannot parse {raw!r} ({source}): {exc}") from None
        if option.choices and value not in option.choices:
            raise ConfigError(f"{name} must be one of {option.choices}, got {value!r} ({source})")
        if option.check is not None:
            problem = option.check(value)
            if problem:
                raise ConfigError(f"{name} {problem}, got {value!r} ({source})")
        values[name], sources[name] = value, source
    if command in ("train-manager", "train-answer") and values["trainer"] == "grpo" and values["group_size"] < 2:
        raise ConfigError(f"group_size must be >= 2 for GRPO, got {values['group_size']}")
    return ResolvedConfig(command, values, sources)
