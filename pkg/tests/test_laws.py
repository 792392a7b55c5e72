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

import math
import numpy as np
import pytest
from scipy.special import zeta
from lforest.algorithm.laws import (
    Poisson, PointMass, FinitePmf, HeavyTail, law_from_json,
    triangular_array, heavy_tail_scale
)


def test_law_moments():
    assert Poisson(2.0).mean == Poisson(2.0).var == 2.0
    assert PointMass(3).var == 0.0
    pmf = FinitePmf((0, 2), (0.5, 0.5))
    assert pmf.mean == pytest.approx(1.0)
    assert pmf.var == pytest.approx(1.0)
    assert HeavyTail(1.5).var == math.inf


@pytest.mark.parametrize("data", [
    {"kind": "poisson", "rate": -1.0},
    {"kind": "point", "value": -2},
    {"kind": "pmf", "values": [0, 1], "probs": [0.5, 0.6]},
    {"kind": "heavy_tail", "alpha": 2.5},
    {"kind": "geometric"},
    {"rate": 1.0},
])
def test_invalid_laws(data):
    with pytest.raises(ValueError):
        law_from_json(data)


def test_json_round_trip():
    for law in (Poisson(0.5), PointMass(2), FinitePmf((0, 1, 3), (.2, .5, .3)),
                HeavyTail(1.25)):
        assert law_from_json(law.to_json()) == law


def test_point_mass_sum_is_exact():
    rng = np.random.default_rng(1)
    assert PointMass(2).sample_sum(rng, 7) == 14
    assert Poisson(1.0).sample_sum(rng, 0) == 0


def test_poisson_sum_mean():
    rng = np.random.default_rng(2)
    sums = [Poisson(1.0).sample_sum(rng, 50) for _ in range(2000)]
    assert np.mean(sums) == pytest.approx(50, abs=4 * math.sqrt(50 / 2000))


def test_heavy_tail_has_unit_mass_and_tail():
    law = HeavyTail(1.5)
    rng = np.random.default_rng(3)
    draws = law.sample(rng, 200_000)
    assert draws.min() >= 0
    # P(X = 1) = p_positive / zeta(1 + alpha) = 1 / zeta(alpha)
    ones = np.mean(draws == 1)
    assert ones == pytest.approx(1 / zeta(1.5), abs=0.01)
    assert np.mean(draws == 0) == pytest.approx(1 - law.p_positive, abs=0.01)
    assert law.tail_constant == pytest.approx(1 / zeta(1.5))


def test_triangular_array_families():
    fv = triangular_array("finite_variance", 100, delta=2.0)
    assert fv.gamma_n == 100
    assert fv.nu.mean == 2.0
    nc = triangular_array("near_critical", 100, drift=-3.0)
    assert nc.mu.mean == pytest.approx(0.97)
    ht = triangular_array("heavy_tail", 100, alpha=1.5)
    assert ht.gamma_n == 10
    assert ht.nu.mean == pytest.approx(10.0)


def test_triangular_array_rejects_bad_input():
    with pytest.raises(ValueError):
        triangular_array("finite_variance", 10, mu=Poisson(2.0))
    with pytest.raises(ValueError):
        triangular_array("binary", 10)
    with pytest.raises(ValueError):
        triangular_array("near_critical", 0)


def test_heavy_tail_scale_is_positive():
    # gamma(-alpha) > 0 for alpha in (1, 2)
    assert heavy_tail_scale(1.5) > 0
