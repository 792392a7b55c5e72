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
from lforest.algorithm.levy import (
    MechanismSpec, StableComponent, CompoundPoisson, psi_eval,
    validate_conservative, validate_cts_height, stable_increments,
    levy_increments, simulate_levy, extend_levy, offspring_walk
)
from lforest.algorithm.paths import Interp


def test_psi_of_brownian_mechanism():
    m = MechanismSpec(drift=0.5, gaussian=0.5)
    np.testing.assert_allclose(psi_eval(m, [0.0, 1.0, 2.0]), [0.0, 1.0, 3.0])
    with pytest.raises(ValueError):
        psi_eval(m, -1.0)


def test_mechanism_json_round_trip():
    m = MechanismSpec(drift=0.1, gaussian=0.2,
                      stable=StableComponent(1.5, 1.0),
                      cpoisson=CompoundPoisson(2.0, (0.5, 2.0), (0.5, 0.5)),
                      delta=1.0)
    assert MechanismSpec.from_json(m.to_json()) == m


@pytest.mark.parametrize("data", [
    {"gaussian": -1.0},
    {"stable": {"alpha": 2.5, "scale": 1.0}},
    {"cpoisson": {"rate": 1.0, "sizes": [-1.0], "probs": [1.0]}},
    {"jumps": 1},
])
def test_invalid_mechanisms(data):
    with pytest.raises(ValueError):
        MechanismSpec.from_json(data)


def test_validators():
    assert validate_conservative(MechanismSpec(gaussian=0.5))
    assert validate_cts_height(MechanismSpec(gaussian=0.5))
    assert validate_cts_height(
        MechanismSpec(stable=StableComponent(1.5, 1.0)))
    jumps = MechanismSpec(cpoisson=CompoundPoisson(1.0, (1.0,), (1.0,)))
    assert not validate_cts_height(jumps)


def test_stable_increments_match_scipy(monkeypatch):
    monkeypatch.setattr(stats.levy_stable, "parameterization", "S1")
    rng = np.random.default_rng(8)
    alpha, scale, dt = 1.5, 1.0, 0.01
    draws = stable_increments(alpha, scale, dt, 2000, rng)
    # Same law in the S1 parametrization with beta = 1
    sigma = (dt * scale * abs(np.cos(np.pi * alpha / 2))) ** (1 / alpha)
    reference = stats.levy_stable(alpha, 1.0, loc=0.0, scale=sigma)
    _, p_value = stats.kstest(draws, reference.cdf)
    assert p_value > 1e-3


def test_gaussian_increments_moments():
    rng = np.random.default_rng(9)
    m = MechanismSpec(drift=-1.0, gaussian=0.5)
    increments = levy_increments(m, 100_000, 0.01, rng)
    # Mean -drift dt, variance 2 gaussian dt
    assert increments.mean() == pytest.approx(0.01, abs=1.5e-3)
    assert increments.var() == pytest.approx(0.01, rel=0.02)


def test_compound_poisson_is_compensated_below_one():
    rng = np.random.default_rng(10)
    m = MechanismSpec(cpoisson=CompoundPoisson(5.0, (0.5,), (1.0,)))
    increments = levy_increments(m, 200_000, 0.01, rng)
    assert increments.mean() == pytest.approx(0.0, abs=1e-3)


def test_simulate_and_extend():
    rng = np.random.default_rng(12)
    m = MechanismSpec(gaussian=0.5)
    X = simulate_levy(m, 1.0, 0.01, rng)
    assert X.interp is Interp.CONSTANT
    assert len(X) == 101
    assert X.values[0] == 0.0
    longer = extend_levy(X, m, 2.0, rng)
    assert len(longer) == 201
    np.testing.assert_array_equal(longer.values[:101], X.values)
    assert extend_levy(X, m, 0.5, rng) is X
    with pytest.raises(ValueError):
        simulate_levy(m, 0.001, 0.01, rng)


def test_offspring_walk_centering():
    rng = np.random.default_rng(13)
    draws = np.array([offspring_walk({"kind": "poisson", "rate": 1.0},
                                     {"kind": "poisson", "rate": 2.0},
                                     50, 50, rng) for _ in range(2000)])
    # n gamma_n centred steps over n, gamma_n immigrant draws over n
    assert draws[:, 0].mean() == pytest.approx(0.0, abs=0.1)
    assert draws[:, 0].var() == pytest.approx(1.0, rel=0.1)
    assert draws[:, 1].mean() == pytest.approx(2.0, abs=0.05)


@pytest.mark.parametrize("lam", [0.5, 1.0])
def test_stable_laplace_transform(lam):
    # E exp(-l X_1) = exp(l^1.5) for the unit scale stable(1.5) mechanism
    draws = stable_increments(1.5, 1.0, 1.0, 100_000,
                              np.random.default_rng(14))
    weights = np.exp(-lam * draws)
    stderr = weights.std(ddof=1) / np.sqrt(weights.size)
    assert abs(weights.mean() - np.exp(lam**1.5)) <= 3 * stderr


def test_increments_over_disjoint_windows_are_uncorrelated():
    m = MechanismSpec(drift=0.3, gaussian=0.5,
                      cpoisson=CompoundPoisson(2.0, (0.5, 2.0), (0.5, 0.5)))
    N = 100_000
    X = simulate_levy(m, 2 * N * 0.01, 0.01, np.random.default_rng(15))
    steps = np.diff(X.values)
    r = np.corrcoef(steps[0::2], steps[1::2])[0, 1]
    assert abs(r) < 3 / np.sqrt(N)
