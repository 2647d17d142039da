"""Run configuration and its INI-style text format.

Grammar::

    file    := (comment | section | entry | blank)*
    comment := ('#' | ';') any-text
    section := '[' name ']'          one of: env, options, agent, train, run
    entry   := key '=' value
    value   := integer | float | 'true' | 'false' | text | int (',' int)*

Keys are field names of the matching dataclass. Missing keys keep their
defaults; unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .agent import AgentConfig
from .env import EnvConfig
from .options import OptionSpace
from .ppo import TrainConfig


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    out_dir: str = "runs/default"
    eval_every: int = 25
    eval_trials: int = 256
    eval_batch: int = 64
    eval_max_steps: int = 8192
    checkpoint_every: int = 100
    deterministic: bool = True


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    options: OptionSpace = field(default_factory=OptionSpace)
    agent: AgentConfig = field(default_factory=AgentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    run: RunSettings = field(default_factory=RunSettings)

    def __post_init__(self):
        a = self.agent
        if (a.n_bits, a.width, a.height) != (self.options.n_bits, self.env.width, self.env.height):
            raise ValueError(
                f"agent expects {a.n_bits} bits on {a.width}x{a.height}, but options/env give "
                f"{self.options.n_bits} bits on {self.env.width}x{self.env.height}"
            )


SECTIONS = ("env", "options", "agent", "train", "run")
# agent fields that always follow the env/options sections
_DERIVED = {"n_bits", "width", "height"}


class ConfigFileError(ValueError):
    pass


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low not in ("true", "false"):
            raise ValueError(f"expected true/false, got {text!r}")
        return low == "true"
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        return tuple(int(v) for v in text.split(",") if v.strip())
    return text


def dumps(cfg: RunConfig) -> str:
    out = io.StringIO()
    for name in SECTIONS:
        section = getattr(cfg, name)
        out.write(f"[{name}]\n")
        for f in fields(section):
            if name == "agent" and f.name in _DERIVED:
                continue
            out.write(f"{f.name} = {_format(getattr(section, f.name))}\n")
        out.write("\n")
    return out.getvalue()


def loads(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigFileError(str(exc)) from exc
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigFileError(f"unknown section(s): {sorted(unknown)}")
    defaults = RunConfig()
    built = {}
    for name in SECTIONS:
        base = getattr(defaults, name)
        values = dict(parser[name]) if parser.has_section(name) else {}
        known = {f.name: f for f in fields(base)}
        bad = set(values) - set(known) - (_DERIVED if name == "agent" else set())
        if bad:
            raise ConfigFileError(f"[{name}]: unknown key(s) {sorted(bad)}")
        kwargs = {}
        for key, raw in values.items():
            if name == "agent" and key in _DERIVED:
                continue
            try:
                kwargs[key] = _parse(raw, getattr(base, key))
            except ValueError as exc:
                raise ConfigFileError(f"[{name}] {key}: {exc}") from exc
        built[name] = kwargs
    try:
        env = EnvConfig(**built["env"])
        space = OptionSpace(**built["options"])
        agent = AgentConfig(**{**built["agent"], "n_bits": space.n_bits, "width": env.width,
                               "height": env.height})
        return RunConfig(env, space, agent, TrainConfig(**built["train"]), RunSettings(**built["run"]))
    except (TypeError, ValueError) as exc:
        raise ConfigFileError(str(exc)) from exc


def load(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    return loads(p.read_text())


def save(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(dumps(cfg))


def with_geometry(cfg: RunConfig, **env_changes) -> RunConfig:
    """Copy with env/option changes applied and the agent geometry kept in step."""
    n_bits = env_changes.pop("n_bits", cfg.options.n_bits)
    env = replace(cfg.env, **env_changes)
    agent = replace(cfg.agent, n_bits=n_bits, width=env.width, height=env.height)
    return dataclasses.replace(cfg, env=env, options=OptionSpace(n_bits), agent=agent)


def preset(name: str) -> RunConfig:
    """Named starting points: the full-size recipes and the reduced desk task."""
    base = RunConfig()
    if name == "full16":
        return with_geometry(base, n_bits=4)
    if name == "full256":
        cfg = with_geometry(base, n_bits=8)
        return replace(cfg, train=replace(cfg.train, recurrence=8))
    if name == "desk":
        cfg = with_geometry(base, width=5, height=5, n_patches=1, n_bits=4)
        # a narrower network so that a single core gets through ~1600 updates in half an hour
        agent = replace(cfg.agent, conv_channels=(8, 16, 16), hidden=64, policy_hidden=(64, 64))
        return replace(cfg, agent=agent, train=replace(cfg.train, n_envs=8, n_updates=1500),
                       run=replace(cfg.run, eval_every=100, eval_trials=64))
    raise ValueError(f"unknown preset {name!r}; choose full16, full256 or desk")
