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

import numpy as np
import pytest
from scipy import stats
from lforest.algorithm.excursion import (
    brownian_bridge, reflected_bridge, brownian_excursion,
    drift_transform_bridge, drift_transform_excursion, left_height_from_walk,
    left_height_brownian, left_height_excised_batch, jeulin_input
)
from lforest.algorithm.paths import SampledPath, HorizonExceeded


def test_bridge_endpoints_and_variance():
    rng = np.random.default_rng(40)
    paths = [brownian_bridge(2.0**-8, rng) for _ in range(4000)]
    for B in paths[:10]:
        assert B.values[0] == 0.0 and B.values[-1] == 0.0
        assert np.sum(np.diff(B.values)) == pytest.approx(0.0, abs=1e-12)
    middle = np.array([B.at(0.5) for B in paths])
    assert middle.var() == pytest.approx(0.25, rel=0.1)


def test_bridge_needs_dt_dividing_one():
    with pytest.raises(ValueError):
        brownian_bridge(0.3, np.random.default_rng(0))


def test_reflected_bridge_half_normal_mean():
    rng = np.random.default_rng(41)
    middle = np.array([reflected_bridge(2.0**-8, rng).at(0.5)
                       for _ in range(4000)])
    assert middle.min() >= 0
    assert middle.mean() == pytest.approx(1 / np.sqrt(2 * np.pi), abs=0.02)


def test_excursion_area():
    rng = np.random.default_rng(42)
    paths = [brownian_excursion(2.0**-10, rng) for _ in range(2000)]
    e = paths[0]
    assert e.values[0] == 0.0 and e.values[-1] == 0.0
    assert np.all(e.values[1:-1] > 0)
    areas = np.array([e.integral() for e in paths])
    assert areas.mean() == pytest.approx(np.sqrt(np.pi / 8), abs=0.02)


def test_drift_transform_bridge_without_drift_shifts_by_minimum():
    B = brownian_bridge(2.0**-8, np.random.default_rng(43))
    X = drift_transform_bridge(B, 0.0)
    np.testing.assert_allclose(X.values, B.values - B.values.min())


@pytest.mark.parametrize("x", [0.5, 1.0, 3.0])
def test_drift_transform_bridge_is_non_negative(x):
    B = brownian_bridge(2.0**-8, np.random.default_rng(44))
    X = drift_transform_bridge(B, x)
    assert X.values.min() >= 0
    # Where the window sup sits at s = t the output is 0
    assert X.values.min() == 0.0


def test_drift_transform_bridge_rejects_bad_input():
    with pytest.raises(ValueError):
        drift_transform_bridge(SampledPath(0.5, [0.0, 1.0, 1.0]), 1.0)
    B = brownian_bridge(0.5, np.random.default_rng(0))
    with pytest.raises(ValueError):
        drift_transform_bridge(B, -1.0)


def test_drift_transform_excursion():
    e = brownian_excursion(2.0**-8, np.random.default_rng(45))
    unchanged = drift_transform_excursion(e, 0.0)
    np.testing.assert_array_equal(unchanged.values, e.values)
    X = drift_transform_excursion(e, 2.0)
    assert X.values[0] == 0.0
    assert X.values.min() >= 0


def test_left_height_from_walk():
    W = SampledPath(1.0, [0.0, 1.0, 0.5, 2.0])
    hbar = left_height_from_walk(W, 0.5, 1.0)
    np.testing.assert_allclose(hbar.values, [0.0, 0.5, 1.5, 1.5])
    assert hbar.floor == pytest.approx(1.5)
    # No local time term below x
    far = left_height_from_walk(W, 1e3, 1.0)
    np.testing.assert_allclose(far.values, [0.0, 0.0, 1.0, 0.0])


def test_left_height_brownian_passes_floor():
    hbar = left_height_brownian(0.5, 1.0, 1.0, 1e-3,
                                np.random.default_rng(46))
    assert hbar.values[0] == 0.0
    assert hbar.floor > 1.0
    assert hbar.horizon >= 1.0


def test_left_height_brownian_horizon_cap():
    with pytest.raises(HorizonExceeded):
        left_height_brownian(0.0, 1.0, 100.0, 1e-2,
                             np.random.default_rng(0), horizon_cap=4.0)


def test_left_height_large_delta_is_twice_reflected_motion():
    rng = np.random.default_rng(47)
    ends = np.array([
        left_height_brownian(0.0, 1e6, 1e-7, 1e-3, rng).at(1.0)
        for _ in range(500)
    ])
    # 2 |N(0, 1)|
    _, p_value = stats.kstest(ends, stats.halfnorm(scale=2.0).cdf)
    assert p_value > 1e-3


def test_excised_paths_stay_below_level():
    rngs = [np.random.default_rng(s) for s in range(5)]
    paths = left_height_excised_batch(0.5, 1.0, 2.0, 1e-3, rngs)
    for hbar in paths:
        assert hbar.values[0] == 0.0
        assert hbar.floor == 2.0
        assert np.all(hbar.values[:-1] <= 2.0 + 1e-9)


def test_excised_path_does_not_depend_on_batch():
    alone = left_height_excised_batch(0.5, 1.0, 2.0, 1e-3,
                                      [np.random.default_rng(3)])[0]
    batch = left_height_excised_batch(
        0.5, 1.0, 2.0, 1e-3,
        [np.random.default_rng(2), np.random.default_rng(3)])
    np.testing.assert_array_equal(alone.values, batch[1].values)


def test_jeulin_input_inverts_occupation():
    e = brownian_excursion(2.0**-12, np.random.default_rng(48))
    H, H_inv = jeulin_input(e, 2.0**-6)
    assert H.values[0] == 0.0
    assert H.values[-1] == pytest.approx(1.0)
    assert np.all(np.diff(H_inv.values) >= 0)
    for t in (0.25, 0.5, 0.75):
        assert H.at(H_inv.at(t)) == pytest.approx(t, abs=1e-6)
