"""Run configuration: defaults, INI-style config files, flag overrides.

Config files use key=value sections::

    [prover]
    lambda = 0.5
    depth = 3
    aggregator = product

    [train]
    epochs = 50
    seed = 0

Command-line flags override file values, which override the defaults.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from typing import Optional

from .training import TrainConfig

# (section, key) -> TrainConfig field
_SCHEMA = {
    ("prover", "lambda"): ("lam", float),
    ("prover", "depth"): ("depth", int),
    ("prover", "aggregator"): ("aggregator", str),
    ("prover", "max_proofs"): ("max_proofs", int),
    ("train", "epochs"): ("epochs", int),
    ("train", "seed"): ("seed", int),
    ("train", "no_rules"): ("no_rules", bool),
    ("train", "no_entity_mlp"): ("no_entity_mlp", bool),
    ("train", "jobs"): ("jobs", int),
    ("train", "early_stop_train_acc"): ("early_stop_train_acc", float),
    ("optimizer", "alpha"): ("alpha", float),
    ("optimizer", "beta1"): ("beta1", float),
    ("optimizer", "beta2"): ("beta2", float),
    ("optimizer", "eps"): ("eps", float),
    ("init", "hidden"): ("hidden", int),
}


@dataclass
class RunConfig(TrainConfig):
    hidden: Optional[int] = None  # encoder MLP hidden size (None: same as dim)

    def describe(self) -> dict:
        out = {}
        for f in fields(self):
            out[f.name] = getattr(self, f.name)
        return out


class ConfigError(ValueError):
    pass


def load_config_file(path: str) -> dict:
    """Parse a config file into {field_name: value} per the schema."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot open {path}")
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            spec = _SCHEMA.get((section, key))
            if spec is None:
                raise ConfigError(f"unknown config key [{section}] {key}")
            name, typ = spec
            try:
                if typ is bool:
                    values[name] = raw.strip().lower() in ("1", "true", "yes", "on")
                else:
                    values[name] = typ(raw)
            except ValueError:
                raise ConfigError(
                    f"bad value for [{section}] {key}: {raw!r}"
                ) from None
    return values


def build_run_config(file_values: dict, overrides: dict) -> RunConfig:
    """Defaults <- config file <- explicit command-line flags."""
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**merged)
