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
from lforest.algorithm.paths import HorizonExceeded
from lforest.experiments import _forest_clt_replicate
from lforest.mcstats import (
    KS_MIN_N, ReplicateFailure, PerReplicate, replicate_rng, run_mc,
    summarize, ks_reference, ks_normal, ks_two_sample, chi_square,
    empirical_cov, compare_cov, convergence_sweep
)


def _normal_draw(rng):
    return rng.standard_normal()


def _fails_below(rng, level):
    draw = rng.standard_normal()
    if draw < level:
        raise RuntimeError(f"draw {draw} below {level}")
    return draw


def _horizon_below(rng, level):
    # The index refers to a batch of one inside the replicate
    draw = rng.standard_normal()
    if draw < level:
        raise HorizonExceeded(f"draw {draw} below {level}", index=0)
    return draw


def _block_with_indexed_failure(rngs):
    raise HorizonExceeded("path ran out", index=len(rngs) - 1)


def _block_with_wrong_shape(rngs):
    return np.zeros(len(rngs) + 1)


def test_replicate_streams_are_fixed_by_seed_and_index():
    a = replicate_rng(7, 3).standard_normal(4)
    b = replicate_rng(7, 3).standard_normal(4)
    c = replicate_rng(7, 4).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_run_mc_rejects_empty_runs():
    with pytest.raises(ValueError):
        run_mc(PerReplicate(_normal_draw), 0, 1)
    with pytest.raises(ValueError):
        run_mc(PerReplicate(_normal_draw), 10, 1, workers=0)


def test_run_mc_is_reproducible():
    first = run_mc(PerReplicate(_normal_draw), 120, 5, batch=50)
    again = run_mc(PerReplicate(_normal_draw), 120, 5, batch=7)
    np.testing.assert_array_equal(first, again)
    other = run_mc(PerReplicate(_normal_draw), 120, 6, batch=50)
    assert not np.array_equal(first, other)


def test_run_mc_does_not_depend_on_workers():
    experiment = PerReplicate(_forest_clt_replicate, 50, 4)
    serial = run_mc(experiment, 40, 11, workers=1, batch=40)
    parallel = run_mc(experiment, 40, 11, workers=2, batch=3)
    np.testing.assert_array_equal(serial, parallel)


def test_failure_reports_replicate_index():
    expected = next(i for i in range(1000)
                    if replicate_rng(3, i).standard_normal() < -1.5)
    with pytest.raises(ReplicateFailure) as info:
        run_mc(PerReplicate(_fails_below, -1.5), 1000, 3, batch=64)
    assert info.value.index == expected
    assert isinstance(info.value.__cause__, RuntimeError)


def _first_draw_below(seed, level):
    return next(i for i in range(1000)
                if replicate_rng(seed, i).standard_normal() < level)


def test_inner_index_is_replaced_by_replicate_position():
    # A seed whose first failing replicate does not open a block
    seed = next(s for s in range(100) if _first_draw_below(s, -1.5) % 64)
    with pytest.raises(ReplicateFailure) as info:
        run_mc(PerReplicate(_horizon_below, -1.5), 1000, seed, batch=64)
    assert info.value.index == _first_draw_below(seed, -1.5)


def test_indexed_failure_is_offset_by_block():
    with pytest.raises(ReplicateFailure) as info:
        run_mc(_block_with_indexed_failure, 100, 0, batch=50)
    assert info.value.index == 49


def test_wrong_block_shape_is_an_error():
    with pytest.raises(ValueError):
        run_mc(_block_with_wrong_shape, 10, 0, batch=5)


def test_summary_fields():
    samples = np.arange(10.0)
    summary = summarize(samples, 4.5, 9.0)
    assert summary.n == 10
    assert summary.mean == pytest.approx(4.5)
    assert summary.stderr == pytest.approx(np.sqrt(summary.var / 10))
    # Too few samples for a KS report
    assert summary.ks_p is None
    data = summary.to_json()
    assert data["ci95"][0] < 4.5 < data["ci95"][1]
    with pytest.raises(ValueError):
        summarize([])


def test_summary_with_ks():
    samples = np.random.default_rng(60).normal(0.0, 1.0, 2000)
    summary = summarize(samples, 0.0, 1.0)
    assert 0.0 <= summary.ks_p <= 1.0
    assert summary.ks_p > 0.01


def test_ks_normal_detects_a_shift():
    samples = np.random.default_rng(61).normal(0.0, 1.0, 2000)
    _, p_value = ks_normal(samples, 0.5, 1.0)
    assert p_value < 1e-6
    with pytest.raises(ValueError):
        ks_normal(samples, 0.0, 0.0)


def test_ks_p_values_are_uniform_under_the_null():
    rng = np.random.default_rng(63)
    p_values = [ks_normal(rng.normal(2.0, 3.0, 1000), 2.0, 9.0)[1]
                for _ in range(200)]
    _, p_value = ks_reference(p_values, stats.uniform.cdf)
    assert p_value > 0.01


def test_ks_needs_enough_samples():
    with pytest.raises(ValueError):
        ks_reference(np.zeros(KS_MIN_N - 1), lambda x: x)
    with pytest.raises(ValueError):
        ks_two_sample(np.zeros(KS_MIN_N), np.zeros(10))


def test_ks_two_sample():
    rng = np.random.default_rng(62)
    a, b = rng.normal(size=1000), rng.normal(size=1000)
    assert ks_two_sample(a, b)[1] > 0.01
    assert ks_two_sample(a, b + 1.0)[1] < 1e-6


def test_chi_square():
    _, p_value = chi_square([25, 25, 50], [0.25, 0.25, 0.5])
    assert p_value == pytest.approx(1.0)
    with pytest.raises(ValueError):
        chi_square([1, 2], [0.5, 0.6])
    with pytest.raises(ValueError):
        chi_square([1, 2, 3], [0.5, 0.5])


def test_empirical_cov():
    paths = np.random.default_rng(63).normal(size=(5000, 2)) * [1.0, 2.0]
    cov = empirical_cov(paths)
    assert cov.shape == (2, 2)
    np.testing.assert_allclose(np.diag(cov), [1.0, 4.0], rtol=0.1)
    with pytest.raises(ValueError):
        empirical_cov(np.zeros((1, 3)))


def test_compare_cov():
    analytic = np.array([[1.0, 0.0], [0.0, 4.0]])
    assert compare_cov(analytic, analytic).max_rel_error == 0.0
    # A zero entry is measured against sqrt(G_11 G_22) = 2
    report = compare_cov([[1.0, 0.1], [0.1, 4.0]], analytic)
    assert report.max_rel_error == pytest.approx(0.05)
    assert report.passed
    report = compare_cov([[1.5, 0.0], [0.0, 4.0]], analytic)
    assert report.worst == (0, 0)
    assert not report.to_json()["passed"]
    with pytest.raises(ValueError):
        compare_cov(np.eye(2), np.eye(3))


def test_convergence_sweep():
    rows = convergence_sweep(np.sqrt, 0.04, levels=3)
    assert [row.dt for row in rows] == pytest.approx([0.04, 0.02, 0.01])
    assert rows[0].ratio is None
    assert rows[1].ratio == pytest.approx(np.sqrt(2))
    with pytest.raises(ValueError):
        convergence_sweep(np.sqrt, 0.04, levels=1)
