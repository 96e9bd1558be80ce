"""Layered configuration: defaults, then a TOML file, then command flags.

Sections mirror the package modules and every key is unique across
sections, so each maps to exactly one --key flag.  Unknown sections or keys
are an error naming the offender, never silently ignored.
"""

import copy
from dataclasses import fields

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .data import SpuriousTaskSpec
from .trainer import DEFAULT_ALPHA_GRID, TrainConfig


class ConfigError(Exception):
    """Invalid configuration; the message names the field."""


DEFAULTS = {
    "train": {
        "mode": "mask_tuning",
        "alpha": 0.3,
        "epochs": 3,
        "batch_size": 16,
        "eval_batch_size": 64,
        "learning_rate": 3e-4,
        "weight_decay": 0.01,
        "seeds": 5,
        "root_seed": 0,
        "dropout": 0.0,
        "alpha_grid": list(DEFAULT_ALPHA_GRID),
    },
    "masking": {
        "mask_rate": 0.05,
        "min_masks_per_example": 1,
    },
    "model": {
        "d_model": 64,
        "n_layers": 2,
        "n_heads": 4,
        "d_ff": 256,
        "max_len": 32,
        "num_classes": 2,
    },
    "data": {
        "n_signal_tokens": 200,
        "signal_tokens_per_sentence": 1,
        "shortcut_token": "shortcut",
        "rho_train": 0.95,
        "rho_ood": 0.05,
        "min_sentence_len": 12,
        "max_sentence_len": 18,
        "filler_vocab_size": 40,
        "n_train": 6000,
        "n_dev": 1000,
        "n_test_indist": 1000,
        "n_test_ood": 1000,
        "data_seed": 0,
    },
    "output": {
        "out_dir": "runs",
    },
}

_SECTION_OF = {}
for _section, _keys in DEFAULTS.items():
    for _key in _keys:
        if _key in _SECTION_OF:
            raise AssertionError(f"duplicate config key {_key}")
        _SECTION_OF[_key] = _section


def flat_items():
    """(key, default) pairs across all sections, flag-generation order."""
    return [(key, DEFAULTS[section][key])
            for section in DEFAULTS for key in DEFAULTS[section]]


def load_config(path=None):
    """Defaults overlaid with a TOML file (when given)."""
    config = copy.deepcopy(DEFAULTS)
    if path is None:
        return config
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} does not parse: {exc}") from exc
    for section, values in doc.items():
        if section not in config:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"section {section!r} must be a table of keys")
        for key, value in values.items():
            if key not in config[section]:
                raise ConfigError(f"unknown key {key!r} in section {section!r}")
            config[section][key] = _coerce(key, value)
    return config


def apply_overrides(config, overrides):
    """Overlay flat {key: value} pairs (typically parsed flags)."""
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in _SECTION_OF:
            raise ConfigError(f"unknown config key {key!r}")
        config[_SECTION_OF[key]][key] = _coerce(key, value)
    return config


def _coerce(key, value):
    """Match the default's type; reject mismatches with the field named."""
    default = DEFAULTS[_SECTION_OF[key]][key]
    if isinstance(default, list):
        if isinstance(value, str):
            value = [part for part in value.split(",") if part != ""]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} must be a list, got {value!r}")
        try:
            return [float(v) for v in value]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key} entries must be numbers: {value!r}") from exc
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if str(value).lower() in ("true", "1", "yes"):
            return True
        if str(value).lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key} must be a boolean, got {value!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        try:
            as_float = float(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key} must be an integer, got {value!r}") from exc
        if as_float != int(as_float):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return int(as_float)
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key} must be a number, got {value!r}") from exc
    return str(value)


def to_train_config(config):
    """Build the validated TrainConfig; validation errors become ConfigError."""
    kwargs = {}
    for section in ("train", "masking", "model"):
        kwargs.update(config[section])
    kwargs["alpha_grid"] = tuple(kwargs["alpha_grid"])
    valid = {f.name for f in fields(TrainConfig)}
    try:
        return TrainConfig(**{k: v for k, v in kwargs.items() if k in valid})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def to_task_spec(config):
    kwargs = dict(config["data"])
    kwargs["seed"] = kwargs.pop("data_seed")
    try:
        return SpuriousTaskSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
