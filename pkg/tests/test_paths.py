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

import pickle
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from lforest.algorithm.paths import (
    SampledPath, LeftHeightPath, Interp, LocalForestError, HorizonExceeded,
    SequenceExhausted, NoiseStream, uniform_grid_step, NOISE_CHUNK
)


def test_path_rejects_bad_grid():
    with pytest.raises(ValueError):
        SampledPath(0.0, [1.0, 2.0])
    with pytest.raises(ValueError):
        SampledPath(0.1, [])


def test_path_values_are_read_only():
    path = SampledPath(0.5, [0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        path.values[0] = 3.0


def test_linear_integral_of_identity():
    path = SampledPath(0.25, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert path.horizon == pytest.approx(1.0)
    assert path.integral() == pytest.approx(0.5)
    assert path.integral(0.5) == pytest.approx(0.125)
    assert path.integral(0.3) == pytest.approx(0.045)


def test_step_function_reads_left_value():
    path = SampledPath(1.0, [1.0, 3.0, 5.0], Interp.CONSTANT)
    assert path.at(0.99) == 1.0
    assert path.at(1.0) == 3.0
    assert path.integral() == pytest.approx(4.0)
    assert path.integral(1.5) == pytest.approx(2.5)


def test_integral_outside_horizon_raises():
    path = SampledPath(0.5, [0.0, 1.0])
    with pytest.raises(ValueError):
        path.integral(0.75)


@given(st.floats(min_value=-5, max_value=5), st.integers(1, 50))
@settings(max_examples=30, deadline=None)
def test_constant_path_integrates_to_area(value, steps):
    dt = 1 / steps
    for interp in Interp:
        path = SampledPath(dt, np.full(steps + 1, value), interp)
        assert path.integral() == pytest.approx(value * steps * dt, abs=1e-9)


def test_subsample_and_map():
    path = SampledPath(0.1, np.arange(11) * 0.1)
    coarse = path.subsample(5)
    assert coarse.dt == pytest.approx(0.5)
    np.testing.assert_allclose(coarse.values, [0.0, 0.5, 1.0])
    assert path.map(np.square).values[-1] == pytest.approx(1.0)


def test_csv_keeps_grid(tmp_path):
    path = SampledPath(0.125, [0.0, 1.5, -2.25], Interp.CONSTANT)
    file_path = str(tmp_path / "path.csv")
    path.to_csv(file_path)
    loaded = SampledPath.from_csv(file_path, Interp.CONSTANT)
    assert loaded.dt == path.dt
    np.testing.assert_array_equal(loaded.values, path.values)


def test_left_height_path_carries_floor():
    hbar = LeftHeightPath(0.5, [0.0, 1.0, 0.5], floor=2.0)
    assert hbar.floor == 2.0
    assert LeftHeightPath(0.5, [0.0]).floor == np.inf


def test_errors_keep_index_through_pickle():
    error = pickle.loads(pickle.dumps(HorizonExceeded("too long", index=3)))
    assert isinstance(error, LocalForestError)
    assert error.index == 3
    assert str(error) == "too long"
    assert issubclass(SequenceExhausted, IndexError)


def test_uniform_grid_step():
    assert uniform_grid_step([0.0, 0.2, 0.4]) == pytest.approx(0.2)
    assert uniform_grid_step([0.0]) == 1.0
    with pytest.raises(ValueError):
        uniform_grid_step([0.1, 0.2])
    with pytest.raises(ValueError):
        uniform_grid_step([0.0, 0.1, 0.3])


def test_noise_stream_follows_each_generator():
    rngs = [np.random.default_rng(s) for s in (3, 4)]
    noise = NoiseStream(rngs)
    both = np.ones(2, dtype=bool)
    first = noise.next(both).copy()
    expected = [np.random.default_rng(s).standard_normal(NOISE_CHUNK)
                for s in (3, 4)]
    np.testing.assert_array_equal(first, [expected[0][0], expected[1][0]])

    for _ in range(NOISE_CHUNK - 1):
        noise.next(both)
    # Only active rows draw a new chunk
    refilled = noise.next(np.array([True, False]))
    assert refilled[0] == np.random.default_rng(3).standard_normal(
        2 * NOISE_CHUNK)[NOISE_CHUNK]
    assert refilled[1] == expected[1][0]
