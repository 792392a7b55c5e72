# This file is part of LocalForest.
# Copyright (C) 2025 Eliza

# LocalForest is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# LocalForest is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

# You should have received a copy of the GNU Affero General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.

import copy
import hashlib
import json
import logging
import os
from typing import TypedDict
from lforest.algorithm.paths import LocalForestError

logger = logging.getLogger(__name__)


class ConfigError(LocalForestError):
    pass


class ForestCltConfig(TypedDict):
    n: int  # Non-mutant vertices per forest
    x: float  # Roots k = ceil(x sqrt(n) / 2)
    reps: int
    batch: int  # Replicates per block handed to a worker


class GwiProcessConfig(TypedDict):
    n: int  # Scale of the triangular array
    x: float  # Roots k = round(x n)
    delta: float  # Immigration mean per generation, times n / gamma_n
    t: float  # Time at which the forest functional is read
    family: str  # finite_variance, near_critical or heavy_tail
    mu: dict  # Offspring law of the finite_variance family
    drift: float  # a of the near_critical family
    alpha: float  # Tail exponent of the heavy_tail family
    reps: int
    batch: int


class LampertiCheckConfig(TypedDict):
    x: float
    delta: float
    T: float
    dt: float  # Coarsest step of the sweep
    levels: int  # dt, dt / 2, ... dt / 2^(levels - 1)
    n_power: int
    mechanisms: list  # Each Levy mechanism gets its own sweep
    horizon_cap: float
    reps: int
    batch: int


class GsIdentityConfig(TypedDict):
    dt: float
    dv: float
    beta: float
    reps: int
    batch: int


class AbetaConfig(TypedDict):
    dt: float
    dv: float
    beta: float
    moments: int  # Odd moments 1..moments reported against the closed form
    reps: int
    batch: int


class BridgeConfig(TypedDict):
    a: float
    c: float
    x: float
    f: dict | float
    dt: float
    eps_stop: float
    max_steps: int
    reps: int
    batch: int


class DriftConfig(TypedDict):
    x: float
    transforms: list  # Any of bridge (X^(1)) and excursion (X^(2))
    dt: float
    dv: float
    reps: int
    batch: int


class GaussProcConfig(TypedDict):
    x: float
    c: float
    f: dict | float
    g: dict | float
    t_grid: list
    dt: float
    T_cap: float  # Work cap in v-time while C climbs to max(t_grid)
    reps: int
    batch: int


class HeightRkConfig(TypedDict):
    x: float
    delta: float
    r: float
    dt: float
    dv: float
    a_max: float  # Sojourns above this level are cut out
    rk_level: float  # Level a of the Ray-Knight comparison
    cbi_dt: float
    horizon_cap: float
    reps: int
    batch: int


class JeulinConfig(TypedDict):
    dt: float
    dv: float
    t: float  # Time of the excursion marginal
    reps: int
    batch: int


DEFAULTS: dict[str, dict] = {
    "forest-clt": {
        "n": 10000,
        "x": 1.0,
        "reps": 5000,
        "batch": 50,
    },
    "gwi-process": {
        "n": 400,
        "x": 1.0,
        "delta": 1.0,
        "t": 1.0,
        "family": "finite_variance",
        "mu": {"kind": "poisson", "rate": 1.0},
        "drift": 0.0,
        "alpha": 1.5,
        "reps": 2000,
        "batch": 50,
    },
    "lamperti-check": {
        "x": 0.5,
        "delta": 1.0,
        "T": 1.0,
        "dt": 1e-4,
        "levels": 2,
        "n_power": 1,
        "mechanisms": [
            {"gaussian": 0.5},
            {"stable": {"alpha": 1.5, "scale": 1.0}},
        ],
        "horizon_cap": 1e4,
        "reps": 100,
        "batch": 10,
    },
    "gs-identity": {
        "dt": 2.0**-16,
        "dv": 2.0**-8,
        "beta": 2.0,
        "reps": 5000,
        "batch": 50,
    },
    "abeta": {
        "dt": 2.0**-14,
        "dv": 2.0**-7,
        "beta": 2.0,
        "moments": 3,
        "reps": 10000,
        "batch": 100,
    },
    "rbb": {
        "a": 2.0,
        "c": 4.0,
        "x": 0.0,
        "f": {"kind": "const", "c": 0.0},
        "dt": 1e-5,
        "eps_stop": 1e-4,
        "max_steps": 10**8,
        "reps": 10000,
        "batch": 500,
    },
    "drift": {
        "x": 1.0,
        "transforms": ["bridge", "excursion"],
        "dt": 2.0**-14,
        "dv": 2.0**-7,
        "reps": 5000,
        "batch": 100,
    },
    "gauss-proc": {
        "x": 1.0,
        # c >= sup g^2 / 2 = 1.125 for g = 1 + sin / 2
        "c": 1.125,
        "f": {"kind": "const", "c": 1.0},
        "g": {"kind": "sin", "a": 1.0, "b": 0.5, "omega": 1.0},
        "t_grid": [0.2, 0.4, 0.6, 0.8, 1.0],
        "dt": 1e-3,
        "T_cap": 50.0,
        "reps": 10000,
        "batch": 500,
    },
    "bridge-normal": {
        "a": 2.0,
        "c": 4.0,
        "x": 1.0,
        "f": {"kind": "const", "c": 0.0},
        "dt": 1e-5,
        "eps_stop": 1e-4,
        "max_steps": 10**8,
        "reps": 10000,
        "batch": 500,
    },
    "height-rk": {
        "x": 0.5,
        "delta": 1.0,
        "r": 1.0,
        "dt": 1e-3,
        "dv": 2.0**-5,
        "a_max": 4.0,
        "rk_level": 1.0,
        "cbi_dt": 1e-3,
        "horizon_cap": 2.0**12,
        "reps": 2000,
        "batch": 100,
    },
    "jeulin": {
        "dt": 2.0**-14,
        "dv": 2.0**-7,
        "t": 0.5,
        "reps": 5000,
        "batch": 100,
    },
}

SCHEMAS: dict[str, type] = {
    "forest-clt": ForestCltConfig,
    "gwi-process": GwiProcessConfig,
    "lamperti-check": LampertiCheckConfig,
    "gs-identity": GsIdentityConfig,
    "abeta": AbetaConfig,
    "rbb": BridgeConfig,
    "drift": DriftConfig,
    "gauss-proc": GaussProcConfig,
    "bridge-normal": BridgeConfig,
    "height-rk": HeightRkConfig,
    "jeulin": JeulinConfig,
}


def _check_type(name: str, key: str, value, default):
    # Whole numbers are accepted where a float is expected, never the
    # reverse, and bool never passes for a number.
    if isinstance(value, bool) != isinstance(default, bool):
        ok = False
    elif isinstance(default, float):
        ok = isinstance(value, (int, float))
    elif isinstance(default, int):
        ok = isinstance(value, int)
    elif isinstance(default, dict):
        # A bare number stands for a constant function
        ok = isinstance(value, (dict, int, float))
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(
            f"{name}: {key} must be {type(default).__name__}, "
            f"got {type(value).__name__} {value!r}"
        )


def validate_config(name: str, changes: dict) -> dict:
    """Overlay changes on the defaults of experiment `name`."""
    if name not in DEFAULTS:
        raise ConfigError(f"unknown experiment {name!r}")
    if not isinstance(changes, dict):
        raise ConfigError(f"{name}: config must be a JSON object")
    defaults = DEFAULTS[name]
    if unknown := sorted(set(changes) - set(defaults)):
        raise ConfigError(f"{name}: unknown config keys {unknown}")
    config = copy.deepcopy(defaults)
    for key, value in changes.items():
        _check_type(name, key, value, defaults[key])
        config[key] = value
    for key in ("reps", "batch"):
        if config[key] < 1:
            raise ConfigError(f"{name}: {key} must be >= 1")
    return config


def init_config(name: str, config_file: str):
    with open(config_file, "w") as file:
        json.dump(DEFAULTS[name], file, indent=4)
    logger.info(f"Created {name} config at {config_file}")


def load_config(name: str, config_file: str | None = None) -> dict:
    """Defaults for `name`, overlaid with the JSON object in config_file
        when one is given."""
    if config_file is None:
        return validate_config(name, {})
    if not os.path.isfile(config_file):
        raise ConfigError(f"config file {config_file} does not exist")
    with open(config_file, "r") as file:
        try:
            changes = json.load(file)
        except json.JSONDecodeError as error:
            raise ConfigError(f"{config_file} is not valid JSON: {error}")
    return validate_config(name, changes)


def save_config(name: str, changes: dict, config_file: str) -> dict:
    if os.path.isfile(config_file):
        config = load_config(name, config_file)
    else:
        config = load_config(name)
    validate_config(name, changes)
    config.update(changes)
    with open(config_file, "w") as file:
        json.dump(config, file, indent=4)
    logger.info(f"Saved {name} config to {config_file}")
    return config


def config_hash(config: dict) -> str:
    return hashlib.sha1(
        json.dumps(config, sort_keys=True).encode()
    ).hexdigest()
