"""Model construction and INI-style run configuration.

A config file is flat key-value text with section headers::

    [model]
    model = sirs
    beta = 1.5
    gamma = 1
    nu = 1

    [run]
    n = 400
    t = 5
    seed = 42

Section names only group keys; every key is looked up by name.  Values
given on the command line win over the file, which wins over defaults.
"""

from __future__ import annotations

import configparser
from typing import Mapping

import numpy as np

from .errors import InvalidParameterError
from .model import (
    JumpModel,
    SirsParams,
    birth_death_model,
    constant_rate_model,
    endemic_equilibrium,
    grid_snap,
    linear_growth_model,
    pure_death_model,
    sirs_model,
)

MODEL_KINDS = {
    "sirs": ("beta", "gamma", "nu"),
    "linear": ("coef",),
    "death": ("coef",),
    "constant": ("rate",),
    "birth-death": ("birth", "death"),
}

PARAM_DEFAULTS = {
    "beta": 2.0,
    "gamma": 1.0,
    "nu": 1.0,
    "coef": 1.0,
    "rate": 1.0,
    "birth": 1.5,
    "death": 1.0,
}


def read_config(path) -> dict[str, str]:
    """Flatten an INI file into ``{key: value}``; later sections override earlier ones."""
    parser = configparser.ConfigParser(interpolation=None)
    with open(path) as fh:
        parser.read_file(fh)
    flat: dict[str, str] = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            flat[key.replace("-", "_")] = value
    return flat


def model_params(kind: str, values: Mapping[str, object]) -> dict[str, float]:
    if kind not in MODEL_KINDS:
        raise InvalidParameterError(f"unknown model kind {kind!r}; choose from {sorted(MODEL_KINDS)}")
    out = {}
    for key in MODEL_KINDS[kind]:
        v = values.get(key)
        out[key] = float(PARAM_DEFAULTS[key] if v is None else v)
    return out


def build_model(kind: str, params: Mapping[str, float]) -> JumpModel:
    if kind == "sirs":
        return sirs_model(SirsParams(params["beta"], params["gamma"], params["nu"]))
    if kind == "linear":
        return linear_growth_model(params["coef"])
    if kind == "death":
        return pure_death_model(params["coef"])
    if kind == "constant":
        return constant_rate_model(params["rate"])
    if kind == "birth-death":
        return birth_death_model(params["birth"], params["death"])
    raise InvalidParameterError(f"unknown model kind {kind!r}")


def parse_vector(text) -> np.ndarray:
    if isinstance(text, (list, tuple, np.ndarray)):
        return np.asarray(text, dtype=float)
    parts = [p for p in str(text).replace(" ", "").split(",") if p]
    if not parts:
        raise InvalidParameterError(f"empty vector {text!r}")
    return np.asarray([float(p) for p in parts])


def resolve_x0(text, kind: str, params: Mapping[str, float], N: int, model: JumpModel) -> np.ndarray:
    """``endemic`` snaps the SIRS equilibrium to the grid; anything else is a vector."""
    if str(text).strip().lower() == "endemic":
        if kind != "sirs":
            raise InvalidParameterError("x0 = endemic is only defined for the SIRS model")
        xs = endemic_equilibrium(SirsParams(params["beta"], params["gamma"], params["nu"]))
        return grid_snap(xs, N, model)
    return parse_vector(text)
