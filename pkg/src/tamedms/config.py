"""Flat ``key = value`` experiment files.

    # M1 rate experiment
    model = M1
    schemes = tamed_milstein, tamed_em
    n_list = 16, 32, 64, 128, 256, 512
    n_ref = 8192
    generator = [[-1, 1], [1, -1]]

Blank lines and ``#`` comments are ignored. List values are comma separated;
``generator`` and ``x0`` also accept JSON arrays.
"""
from __future__ import annotations

import json
from pathlib import Path

from .convergence import ConfigError, ExperimentConfig

REQUIRED = ("model",)


def _ints(text):
    return [int(v) for v in _split(text)]


def _split(text):
    text = text.strip()
    if text.startswith("["):
        return json.loads(text)
    return [v.strip() for v in text.split(",") if v.strip()]


def _floats(text):
    return [float(v) for v in _split(text)]


def _matrix(text):
    rows = json.loads(text)
    if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows):
        raise ValueError("expected an array of arrays")
    return [[float(v) for v in row] for row in rows]


PARSERS = {
    "model": str,
    "schemes": lambda t: [str(v) for v in _split(t)],
    "n_list": _ints,
    "n_ref": int,
    "T": float,
    "samples": int,
    "seed": int,
    "p": float,
    "refinement_ratio": int,
    "x0": _floats,
    "generator": _matrix,
    "reference": str,
    "n": int,
    "workers": int,
    "chunk_size": int,
}


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = PARSERS[key](value)
        except (ValueError, TypeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    for key in REQUIRED:
        if key not in values:
            raise ConfigError(f"{source}: missing required key {key!r}")
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
