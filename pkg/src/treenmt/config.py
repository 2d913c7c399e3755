"""Flat key=value run configuration and the run manifest.

Config files are UTF-8 text, one `key = value` per line, `#` comments
and blank lines ignored. Unknown keys and unparseable values are
collected and reported together. Command-line flags override file
values, which override the built-in desk-scale defaults.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .model import ConfigError
from .optim import derive_seed

_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_int(text):
    return int(text.strip())


# name -> (converter, desk-scale default)
SETTINGS = {
    "d_emb": (_parse_int, 32),
    "d": (_parse_int, 64),
    "a": (_parse_int, 0),  # 0 means "same as d"
    "d_c": (_parse_int, 0),  # 0 means "same as d"
    "beta_mode": (str.strip, "gating"),
    "attend_eos": (_parse_bool, True),
    "backward_leaf": (_parse_bool, True),
    "top_down": (_parse_bool, True),
    "batch_size": (_parse_int, 4),
    "max_epochs": (_parse_int, 10),
    "seed": (_parse_int, 0),
    "shuffle_seed": (_parse_int, None),  # None: derived from seed
    "max_sentence_length": (_parse_int, 40),
    "checkpoint_every": (_parse_int, 0),
    "threads": (_parse_int, 1),
}


def parse_config_file(path) -> dict:
    """Read raw string values; layout errors carry line numbers."""
    values = {}
    problems = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                problems.append(f"{path}:{lineno}: expected 'key = value'")
                continue
            key, _, value = stripped.partition("=")
            values[key.strip()] = value.strip()
    if problems:
        raise ConfigError(problems)
    return values


def resolve_settings(file_values=None, overrides=None) -> dict:
    """Defaults, then config file, then explicit flags; every problem in
    one report."""
    settings = {name: default for name, (_, default) in SETTINGS.items()}
    problems = []
    for key, raw in (file_values or {}).items():
        if key not in SETTINGS:
            problems.append(f"unknown config key {key!r}")
            continue
        convert = SETTINGS[key][0]
        try:
            settings[key] = convert(raw)
        except ValueError as exc:
            problems.append(f"bad value for {key!r}: {exc}")
    for key, value in (overrides or {}).items():
        if value is not None:
            settings[key] = value
    if problems:
        raise ConfigError(problems)
    if settings["shuffle_seed"] is None:
        settings["shuffle_seed"] = derive_seed(settings["seed"], "shuffle")
    return settings


def file_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


@dataclass
class RunManifest:
    """Everything needed to re-run a command identically."""

    command: str
    argv: list
    settings: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)  # label -> {path, sha256}
    outputs: dict = field(default_factory=dict)  # label -> path

    def add_input(self, label, path):
        self.inputs[label] = {"path": str(path),
                              "sha256": file_digest(path)}

    def write(self, path):
        payload = {
            "command": self.command,
            "argv": list(self.argv),
            "settings": self.settings,
            "inputs": self.inputs,
            "outputs": {k: str(v) for k, v in self.outputs.items()},
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
