"""Strict JSON config files for the command line.

Model and instrument configs are plain JSON objects matching the
``to_dict`` formats of `models` and `instruments`. Unknown fields are
rejected there; this module only adds file handling with errors that
name the offending path.
"""

import json
import os

from . import instruments as ins
from . import models
from .errors import ConfigError


def load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return obj


def save_json(path, obj):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def load_model(path):
    d = load_json(path)
    try:
        return models.model_from_dict(d)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_instrument(path):
    d = load_json(path)
    try:
        return ins.instrument_from_dict(d)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
