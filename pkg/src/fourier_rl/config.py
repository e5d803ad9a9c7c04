"""Sectioned key/value experiment config with a typed schema.

Files are INI-style::

    [env]
    name = pendulum
    noise.medium = 0.25

    [sac]
    batch_size = 256

Every key is checked against ``SCHEMA``; unknown sections or keys and
unparsable values raise ``ConfigError`` naming the ``section.key`` path.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


def _floats(text):
    return tuple(float(t) for t in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(t) for t in text.replace(",", " ").split())


def _optional_float(text):
    text = text.strip()
    return None if text in ("", "none", "None") else float(text)


# section -> key -> (parser, default)
SCHEMA = {
    "run": {
        "out_dir": (str, "runs"),
        "seeds": (_ints, (0,)),
        "total_steps": (int, 200_000),
        "eval_every": (int, 10_000),
        "eval_episodes": (int, 10),
    },
    "env": {
        "name": (str, "pendulum"),
        "seed": (int, 0),
        "noise.low": (_optional_float, None),
        "noise.medium": (_optional_float, None),
        "noise.high": (_optional_float, None),
    },
    "sac": {
        "actor_lr": (float, 1e-4),
        "critic_lr": (float, 1e-4),
        "temperature_lr": (float, 1e-4),
        "discount": (float, 0.99),
        "target_update_period": (int, 2),
        "initial_temperature": (float, 0.1),
        "batch_size": (int, 256),
        "warmup_steps": (int, 10_000),
        "tau": (float, 0.005),
        "weight_decay": (float, 0.0),
        "buffer_capacity": (int, 100_000),
        "actor_hidden": (_ints, (1024, 1024)),
    },
    "fourier": {
        "variant": (str, "lff"),
        "beta": (float, 0.03),
        "betas": (_floats, (0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0)),
        "width_multiplier": (int, 40),
        "hidden_widths": (_ints, (1024, 1024)),
    },
    "diagnostics": {
        "batch_size": (int, 256),
        "bins": (int, 20),
        "delta": (float, 0.01),
        "noise_level": (str, "medium"),
    },
    "dp": {
        "grid": (int, 200),
        "block": (int, 25),
        "gamma": (float, 0.99),
        "steps": (int, 50_000),
        "lr": (float, 1e-4),
        "width": (int, 400),
        "beta": (float, 10 / math.pi),
        "downsample": (int, 1),
        "log_every": (int, 1000),
        "seed": (int, 0),
    },
}


@dataclass
class ExperimentConfig:
    values: dict[str, dict]

    def __getitem__(self, section):
        return self.values[section]

    def get(self, path):
        section, key = path.split(".", 1)
        return self.values[section][key]

    @property
    def noise_levels(self) -> dict[str, float]:
        env = self.values["env"]
        return {k: env[f"noise.{k}"] for k in ("low", "medium", "high") if env[f"noise.{k}"] is not None}

    def canonical(self) -> str:
        # the output location does not change what a run computes
        vals = {s: {k: v for k, v in keys.items() if (s, k) != ("run", "out_dir")} for s, keys in self.values.items()}
        return json.dumps(vals, sort_keys=True, default=list)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def to_ini(self) -> str:
        lines = []
        for section, keys in self.values.items():
            lines.append(f"[{section}]")
            for k, v in keys.items():
                if isinstance(v, tuple):
                    v = ", ".join(repr(x) for x in v)
                elif v is None:
                    v = "none"
                else:
                    v = repr(v) if isinstance(v, float) else str(v)
                lines.append(f"{k} = {v}")
            lines.append("")
        return "\n".join(lines)


def defaults() -> ExperimentConfig:
    return ExperimentConfig({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})


def parse_config(text: str, overrides=()) -> ExperimentConfig:
    """Parse config text; ``overrides`` is an iterable of ``section.key=value`` strings."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    raw = {s: dict(parser[s]) for s in parser.sections()}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        path, value = item.split("=", 1)
        section, key = path.strip().split(".", 1)
        raw.setdefault(section, {})[key] = value.strip()

    cfg = defaults()
    for section, keys in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, text in keys.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            conv, _ = SCHEMA[section][key]
            try:
                cfg.values[section][key] = conv(text)
            except ValueError:
                raise ConfigError(f"{section}.{key}: cannot parse {text!r}") from None
    validate(cfg)
    return cfg


def load_config(path, overrides=()) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, overrides)


def validate(cfg: ExperimentConfig):
    from .envs import ENVS
    from .fourier import VARIANTS

    def need(cond, path, msg):
        if not cond:
            raise ConfigError(f"{path}: {msg}")

    run, env, sac, four, diag, dp = (cfg[s] for s in ("run", "env", "sac", "fourier", "diagnostics", "dp"))
    need(env["name"] in ENVS, "env.name", f"must be one of {sorted(ENVS)}")
    need(len(run["seeds"]) > 0, "run.seeds", "needs at least one seed")
    need(run["total_steps"] > 0, "run.total_steps", "must be > 0")
    need(run["eval_every"] >= 0, "run.eval_every", "must be >= 0")
    need(run["eval_episodes"] >= 1, "run.eval_episodes", "must be >= 1")
    need(four["variant"] in VARIANTS, "fourier.variant", f"must be one of {VARIANTS}")
    need(four["beta"] > 0, "fourier.beta", "must be > 0")
    need(all(b > 0 for b in four["betas"]) and four["betas"], "fourier.betas", "must be a non-empty list of positive values")
    need(four["width_multiplier"] >= 1, "fourier.width_multiplier", "must be >= 1")
    need(0 < sac["discount"] < 1, "sac.discount", "must be in (0, 1)")
    need(0 < sac["tau"] <= 1, "sac.tau", "must be in (0, 1]")
    need(sac["weight_decay"] >= 0, "sac.weight_decay", "must be >= 0")
    need(sac["batch_size"] <= sac["buffer_capacity"], "sac.batch_size", "cannot exceed sac.buffer_capacity")
    need(sac["target_update_period"] >= 1, "sac.target_update_period", "must be >= 1")
    levels = cfg.noise_levels
    for k, v in levels.items():
        need(v >= 0, f"env.noise.{k}", "must be >= 0")
    if len(levels) == 3:
        need(levels["low"] < levels["medium"] < levels["high"], "env.noise", "must satisfy low < medium < high")
    need(diag["noise_level"] in ("low", "medium", "high"), "diagnostics.noise_level", "must be low, medium or high")
    need(0 < diag["delta"] < 1, "diagnostics.delta", "must be in (0, 1)")
    need(diag["bins"] >= 1, "diagnostics.bins", "must be >= 1")
    need(0 < dp["gamma"] < 1, "dp.gamma", "must be in (0, 1)")
    need(dp["grid"] >= 2, "dp.grid", "must be >= 2")
