"""Flat key=value run configuration with [sections].

Example::

    [data]
    n_target = 128
    target_modes = 8

    [train]
    batch_size = 25
    d_steps = 4
    loss = hinge

Unknown keys are rejected with the list of valid keys for the section.
``#`` starts a comment.  The canonical dump (sorted keys) feeds the
config hash recorded in checkpoints and reports.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, fields
from pathlib import Path

from .data import TransferProtocol
from .nets import ExtractorSpec
from .train import TrainConfig


class ConfigError(ValueError):
    """Bad config file content."""


_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False}


def _convert(raw: str, target_type):
    if target_type is bool:
        if raw.lower() not in _BOOL:
            raise ConfigError(f"expected a boolean, got {raw!r}")
        return _BOOL[raw.lower()]
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    return raw


class RunConfig:
    """The three spec'd sections plus evaluation knobs."""

    EVAL_DEFAULTS = {
        "k_precision": 10,
        "k_recall": 40,
        "n_gen": 1000,
        "threshold_sigma": 3.0,
        "coverage_min": 0.01,
        "ivom_steps": 500,
        "ivom_lr": 0.1,
        "ct_cells": 0,           # 0 = global statistic
        "gmm_k": 8,
        "sampler": "vicinal",    # vicinal | gmm | table
    }

    def __init__(self):
        self.data = TransferProtocol()
        self.train = TrainConfig()
        self.extractor = ExtractorSpec()
        self.eval = dict(self.EVAL_DEFAULTS)
        self.paths = {"train_file": "", "val_file": "", "extractor_file": ""}

    def _section_fields(self):
        return {
            "data": {f.name: f.type for f in fields(TransferProtocol)},
            "train": {f.name: f.type for f in fields(TrainConfig)},
            "extractor": {f.name: f.type for f in fields(ExtractorSpec)},
            "eval": {k: type(v).__name__ for k, v in self.EVAL_DEFAULTS.items()},
            "paths": {k: "str" for k in self.paths},
        }

    def set(self, section: str, key: str, raw: str) -> None:
        schema = self._section_fields()
        if section not in schema:
            raise ConfigError(
                f"unknown section [{section}]; valid sections: {sorted(schema)}")
        if key not in schema[section]:
            raise ConfigError(
                f"unknown config key '{section}.{key}'; valid keys in "
                f"[{section}]: {sorted(schema[section])}")
        if section == "eval":
            current = self.eval[key]
            self.eval[key] = _convert(raw, type(current))
            return
        if section == "paths":
            self.paths[key] = raw
            return
        obj = getattr(self, section)
        current = getattr(obj, key)
        try:
            value = _convert(raw, type(current))
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"bad value for '{section}.{key}': {exc}")
        setattr(obj, key, value)

    def validate(self) -> None:
        # dataclass __post_init__ checks run on construction; re-run them
        TrainConfig(**asdict(self.train))
        if self.eval["sampler"] not in ("vicinal", "gmm", "table"):
            raise ConfigError(f"unknown sampler {self.eval['sampler']!r}")

    def dump(self) -> str:
        lines = []
        for section in ("data", "train", "extractor", "eval", "paths"):
            lines.append(f"[{section}]")
            if section == "eval":
                items = self.eval
            elif section == "paths":
                items = self.paths
            else:
                items = asdict(getattr(self, section))
            for key in sorted(items):
                lines.append(f"{key} = {items[key]}")
            lines.append("")
        return "\n".join(lines)

    def hash(self) -> str:
        return hashlib.sha256(self.dump().encode()).hexdigest()[:16]

    @staticmethod
    def parse(text: str) -> "RunConfig":
        cfg = RunConfig()
        section = None
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
            if section is None:
                raise ConfigError(f"line {lineno}: key outside any [section]")
            key, raw = (part.strip() for part in line.split("=", 1))
            cfg.set(section, key, raw)
        cfg.validate()
        return cfg

    @staticmethod
    def load(path) -> "RunConfig":
        try:
            return RunConfig.parse(Path(path).read_text())
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}")
