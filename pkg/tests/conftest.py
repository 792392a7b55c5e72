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
import json
from pathlib import Path
import pytest
from lforest.config import validate_config

# Configs small enough to run every experiment in a few seconds
TINY = {
    "forest-clt": {"n": 100, "reps": 20, "batch": 10},
    "gwi-process": {"n": 20, "reps": 20, "batch": 10},
    "lamperti-check": {"dt": 1e-2, "reps": 4, "batch": 2},
    "gs-identity": {"dt": 2.0**-8, "dv": 2.0**-4, "reps": 20, "batch": 10},
    "abeta": {"dt": 2.0**-8, "dv": 2.0**-4, "reps": 20, "batch": 10},
    "rbb": {"dt": 1e-3, "eps_stop": 1e-2, "reps": 10, "batch": 5},
    "drift": {"dt": 2.0**-8, "dv": 2.0**-4, "reps": 20, "batch": 10},
    "gauss-proc": {"dt": 1e-2, "t_grid": [0.5, 1.0], "T_cap": 20.0,
                   "reps": 20, "batch": 10},
    "bridge-normal": {"dt": 1e-3, "eps_stop": 1e-2, "reps": 10, "batch": 5},
    # Two-sample KS needs 100 replicates
    "height-rk": {"r": 0.5, "dt": 1e-2, "dv": 2.0**-3, "cbi_dt": 1e-2,
                  "reps": 100, "batch": 50},
    "jeulin": {"dt": 2.0**-8, "dv": 2.0**-4, "reps": 100, "batch": 50},
}


@pytest.fixture
def tiny_config():
    """Validated tiny config for an experiment name."""
    def make(name: str, **changes) -> dict:
        return validate_config(name, copy.deepcopy(TINY[name]) | changes)
    return make


@pytest.fixture
def tiny_config_file(tmp_path):
    """Path of a JSON file holding the tiny overrides for a name."""
    def make(name: str, **changes) -> str:
        file_path = tmp_path / f"{name}.json"
        file_path.write_text(json.dumps(TINY[name] | changes))
        return str(file_path)
    return make


PINNED = Path(__file__).parent / "data" / "pinned_summaries.json"


def pytest_addoption(parser):
    parser.addoption("--update-pinned", action="store_true", default=False,
                     help="rewrite the pinned tiny-config summaries")


@pytest.fixture
def pinned(request):
    """Pinned summary of an experiment, or None after recording the
        observed one when it is missing or --update-pinned is given."""
    update = request.config.getoption("--update-pinned")

    def lookup(name: str, observed: dict) -> dict | None:
        values = json.loads(PINNED.read_text())
        if name in values and not update:
            return values[name]
        values[name] = observed
        PINNED.write_text(json.dumps(values, indent=4, sort_keys=True)
                          + "\n")
        return None
    return lookup
