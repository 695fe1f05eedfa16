"""Experiment configuration documents (JSON) and the model presets.

A document has a top-level ``seed`` and three sections::

    {
      "seed": 0,
      "model": {"input_dim": 784, "layers": [256, 100, 100, 100, 10],
                "beta": 2, "fan_in": 6, "exceptions": {"0": {"beta": 7, "fan_in": 2}},
                "subnet": {"L": 4, "N": 16, "S": 2}, "max_table_bits": 20},
      "train": {"lr_max": 0.01, "lr_min": 0.0001, "weight_decay": 0.0001,
                "batch_size": 128, "epochs": 50, "restart_period": 10, "restart_mult": 2},
      "data": {"kind": "mnist", ...}
    }

Unknown keys anywhere are errors. ``exceptions`` maps a layer index to
overrides of that layer's input bit-width and fan-in.
"""

import copy
import json

import jsonschema

from .topology import DEFAULT_MAX_TABLE_BITS
from .training import TrainConfig


class ConfigError(ValueError):
    """Raised when a configuration document is invalid; the message names the key."""


_POS_INT = {"type": "integer", "minimum": 1}
_NUM = {"type": "number"}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "name": {"type": "string"},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["layers", "beta", "fan_in"],
            "properties": {
                "input_dim": _POS_INT,
                "layers": {"type": "array", "items": _POS_INT, "minItems": 1},
                "beta": _POS_INT,
                "fan_in": _POS_INT,
                "exceptions": {
                    "type": "object",
                    "propertyNames": {"pattern": "^[0-9]+$"},
                    "additionalProperties": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {"beta": _POS_INT, "fan_in": _POS_INT},
                    },
                },
                "subnet": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"L": _POS_INT, "N": _POS_INT,
                                   "S": {"type": "integer", "minimum": 0}},
                },
                "max_table_bits": _POS_INT,
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lr_max": _NUM, "lr_min": _NUM, "weight_decay": _NUM,
                "batch_size": _POS_INT, "epochs": _POS_INT,
                "restart_period": _NUM, "restart_mult": _NUM,
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["semicircles", "mnist", "csv", "digits"]},
                "n_per_class": _POS_INT,
                "noise_std": {"type": "number", "minimum": 0},
                "test_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "train_images": {"type": "string"}, "train_labels": {"type": "string"},
                "test_images": {"type": "string"}, "test_labels": {"type": "string"},
                "train": {"type": "string"}, "test": {"type": "string"},
                "feature_count": _POS_INT, "class_count": _POS_INT,
                "header": {"type": "boolean"},
            },
        },
    },
}

MODEL_DEFAULTS = {"exceptions": {}, "subnet": {"L": 1, "N": 1, "S": 0},
                  "max_table_bits": DEFAULT_MAX_TABLE_BITS}
SUBNET_DEFAULTS = {"L": 1, "N": 1, "S": 0}
DATA_DEFAULTS = {
    "semicircles": {"n_per_class": 1000, "noise_std": 0.1, "test_fraction": 0.2},
    "digits": {"test_fraction": 0.2},
    "csv": {"header": False},
    "mnist": {},
}
_TRAIN_KEYS = ("lr_max", "lr_min", "weight_decay", "batch_size", "epochs",
               "restart_period", "restart_mult")


def _key_path(error):
    path = ".".join(str(p) for p in error.absolute_path)
    if error.validator == "additionalProperties":
        return f"{path + '.' if path else ''}<unknown key>: {error.message}"
    return path or "<root>"


def validate(doc):
    """Validate and return an effective config with every default filled in."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"{_key_path(exc)}: {exc.message}") from None
    cfg = copy.deepcopy(doc)
    cfg.setdefault("seed", 0)
    model = cfg["model"]
    for k, v in MODEL_DEFAULTS.items():
        model.setdefault(k, copy.deepcopy(v))
    for k, v in SUBNET_DEFAULTS.items():
        model["subnet"].setdefault(k, v)
    s = model["subnet"]
    if s["S"] and s["L"] % s["S"]:
        raise ConfigError(f"model.subnet.S: skip period {s['S']} must divide L={s['L']}")
    for k in model["exceptions"]:
        if int(k) >= len(model["layers"]):
            raise ConfigError(f"model.exceptions.{k}: no such layer")
    defaults = TrainConfig()
    train = cfg.setdefault("train", {})
    for k in _TRAIN_KEYS:
        train.setdefault(k, getattr(defaults, k))
    try:
        train_config(cfg)
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from None
    if "data" in cfg:
        data = cfg["data"]
        for k, v in DATA_DEFAULTS[data["kind"]].items():
            data.setdefault(k, v)
        required = {"mnist": ["train_images", "train_labels", "test_images", "test_labels"],
                    "csv": ["train", "feature_count", "class_count"]}.get(data["kind"], [])
        for k in required:
            if k not in data:
                raise ConfigError(f"data.{k}: required for kind {data['kind']!r}")
    return cfg


def train_config(cfg):
    t = cfg.get("train", {})
    return TrainConfig(**{k: t[k] for k in _TRAIN_KEYS if k in t}, seed=cfg.get("seed", 0))


def load_config(path):
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return validate(doc)


def dumps(cfg):
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


PRESETS = {
    "HDR-5L": {
        "name": "HDR-5L",
        "model": {"input_dim": 784, "layers": [256, 100, 100, 100, 10], "beta": 2, "fan_in": 6,
                  "subnet": {"L": 4, "N": 16, "S": 2}},
        "train": {"epochs": 500},
    },
    "JSC-2L": {
        "name": "JSC-2L",
        "model": {"input_dim": 16, "layers": [32, 5], "beta": 4, "fan_in": 3,
                  "subnet": {"L": 4, "N": 8, "S": 2}},
        "train": {"epochs": 1000},
    },
    "JSC-5L": {
        "name": "JSC-5L",
        "model": {"input_dim": 16, "layers": [128, 128, 128, 64, 5], "beta": 4, "fan_in": 3,
                  "exceptions": {"0": {"beta": 7, "fan_in": 2}},
                  "subnet": {"L": 4, "N": 16, "S": 2}},
        "train": {"epochs": 1000},
    },
}


def preset(name, **data):
    """Validated preset document; ``data`` fills in the data section."""
    doc = copy.deepcopy(PRESETS[name])
    if data:
        doc["data"] = data
    return validate(doc)
