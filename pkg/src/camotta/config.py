"""INI-style run configuration: sectioned key=value files with typed defaults.

Unknown sections or keys are rejected so typos fail loudly. Types are
inferred from the default values; booleans accept true/false/1/0/yes/no.
"""

from __future__ import annotations

import configparser
import copy
import io

from .tensor import ContractError

DEFAULTS = {
    "model": {
        "resolution": 128,
        "base": 32,
        "embed": 64,
        "depth": 4,
        "heads": 4,
        "patch": 16,
        "keep_fraction": 0.7,
        "seed": 0,
    },
    "masks": {
        "spatial_ratio": 0.25,
        "freq_ratio": 0.25,
    },
    "losses": {
        "lambda_low": 0.4,
        "lambda_high": 0.6,
        "ffl_beta": 1.0,
        "tau": 0.1,
        "edge_alpha": 1.0,
        "lambda_hrr": 1.0,
        "lambda_kl": 1.0,
        "lambda_pro": 1.0,
        "lambda_pro_rec": 1.0,
        "lambda_dec": 1.0,
    },
    "train": {
        "steps": 300,
        "lr": 0.001,
        "weight_decay": 0.01,
        "batch": 4,
        "seed": 0,
        "contrast_jitter": 0.0,
    },
    "adapt": {
        "iterations": 30,
        "lr": 0.001,
        "episodic": True,
        "resample_masks": True,
        "views": 1,
        "sample_latents": True,
        "param_subset": "all",
    },
}

_BOOL_WORDS = {"true": True, "yes": True, "1": True,
               "false": False, "no": False, "0": False}


def _coerce(section, key, raw, default):
    if isinstance(default, bool):
        word = str(raw).strip().lower()
        if word not in _BOOL_WORDS:
            raise ContractError(f"[{section}] {key}: expected a boolean, got {raw!r}")
        return _BOOL_WORDS[word]
    try:
        if isinstance(default, int):
            return int(str(raw), 10)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ContractError(f"[{section}] {key}: {exc}") from None
    return str(raw)


def default_config():
    return copy.deepcopy(DEFAULTS)


def load_config(path=None):
    """Read a config file over the defaults; unknown sections/keys are errors."""
    cfg = default_config()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(str(path))
    if not read:
        raise ContractError(f"config file not found: {path}")
    for section in parser.sections():
        if section not in cfg:
            raise ContractError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in cfg[section]:
                raise ContractError(f"unknown key {key!r} in section [{section}]")
            cfg[section][key] = _coerce(section, key, raw, DEFAULTS[section][key])
    return cfg


def format_config(cfg):
    """Render a config dict back to INI text (the --print-config output)."""
    out = io.StringIO()
    for section, values in cfg.items():
        out.write(f"[{section}]\n")
        for key, value in values.items():
            rendered = str(value).lower() if isinstance(value, bool) else value
            out.write(f"{key} = {rendered}\n")
        out.write("\n")
    return out.getvalue().rstrip() + "\n"
