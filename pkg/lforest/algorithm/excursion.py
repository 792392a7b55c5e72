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

import logging
import numpy as np
from lforest.algorithm.localtime import occupation_histogram
from lforest.algorithm.paths import (
    SampledPath, LeftHeightPath, HorizonExceeded, NoiseStream, TOL
)

logger = logging.getLogger(__name__)

BRIDGE_TOL = 1e-12


def _unit_steps(dt: float) -> int:
    n = int(round(1 / dt))
    if n < 1 or abs(n * dt - 1) > 1e-9:
        raise ValueError(f"dt = {dt} does not divide [0, 1]")
    return n


def _bridges(dt: float, rng: np.random.Generator,
             count: int) -> np.ndarray:
    n = _unit_steps(dt)
    W = np.zeros((count, n + 1))
    W[:, 1:] = np.cumsum(rng.standard_normal((count, n)) * np.sqrt(dt),
                         axis=1)
    t = np.arange(n + 1) * dt
    B = W - t * W[:, -1:]
    B[:, 0] = 0.0
    B[:, -1] = 0.0
    return B


def brownian_bridge(dt: float, rng: np.random.Generator) -> SampledPath:
    """B_t = W_t - t W_1 on [0, 1]."""
    return SampledPath(dt, _bridges(dt, rng, 1)[0])


def reflected_bridge(dt: float, rng: np.random.Generator) -> SampledPath:
    return SampledPath(dt, np.abs(_bridges(dt, rng, 1)[0]))


def brownian_excursion(dt: float, rng: np.random.Generator) -> SampledPath:
    """Norm of a three dimensional Brownian bridge."""
    B = _bridges(dt, rng, 3)
    return SampledPath(dt, np.sqrt(np.sum(B**2, axis=0)))


def _check_bridge(path: SampledPath):
    _unit_steps(path.dt)
    if abs(path.values[0]) > BRIDGE_TOL or abs(path.values[-1]) > BRIDGE_TOL:
        raise ValueError("expected a path on [0, 1] with endpoints 0")


def drift_transform_bridge(B: SampledPath, x: float) -> SampledPath:
    """X_t = B_t - x t + sup_{t-1 <= s <= t} (x s - B_s) with B extended
        periodically. The part of the window below 0 is read as
        u = s + 1 in [t, 1]."""
    _check_bridge(B)
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    t = B.times
    b = B.values
    past = x * t - b
    wrapped = past - x
    window_max = np.maximum(
        np.maximum.accumulate(past),
        np.maximum.accumulate(wrapped[::-1])[::-1],
    )
    return SampledPath(B.dt, np.maximum(b - x * t + window_max, 0.0))


def drift_transform_excursion(e: SampledPath, x: float) -> SampledPath:
    """X_t = e_t - x t + sup_{0 <= s <= t} (x s - e_s)."""
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    if x == 0:
        return SampledPath(e.dt, e.values.copy(), e.interp)
    t = e.times
    running = np.maximum.accumulate(x * t - e.values)
    return SampledPath(e.dt, np.maximum(e.values - x * t + running, 0.0),
                       e.interp)


def left_height_from_walk(W: SampledPath, x: float,
                          delta: float) -> LeftHeightPath:
    """2 (S - W) + (S - x)_+ / delta for the running maximum S of W.
        By Levy's identity (S - W, S) has the law of (|W|, L^0(W))."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    S = np.maximum.accumulate(np.maximum(W.values, 0.0))
    floor = np.maximum(S - x, 0.0) / delta
    return LeftHeightPath(W.dt, 2 * (S - W.values) + floor,
                          floor=float(floor[-1]))


def left_height_brownian(
    x: float, delta: float, a_max: float, dt: float,
    rng: np.random.Generator, T: float = 1.0, horizon_cap: float = 2.0**12,
) -> LeftHeightPath:
    """Brownian left-height process on a horizon doubled from T until its
        non-revisit floor (S_T - x)_+ / delta exceeds a_max."""
    if not a_max > 0:
        raise ValueError(f"a_max must be positive, got {a_max}")
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    n = int(round(T / dt))
    W = np.concatenate(([0.0], np.cumsum(
        rng.standard_normal(n) * np.sqrt(dt))))
    while True:
        hbar = left_height_from_walk(SampledPath(dt, W), x, delta)
        if hbar.floor > a_max:
            return hbar
        if 2 * hbar.horizon > horizon_cap:
            raise HorizonExceeded(
                f"floor {hbar.floor:.6g} still below {a_max} at the "
                f"horizon cap {horizon_cap}"
            )
        extra = W.size - 1
        logger.debug(f"Doubling the left-height horizon to "
                     f"{2 * hbar.horizon:.6g}")
        W = np.concatenate((W, W[-1] + np.cumsum(
            rng.standard_normal(extra) * np.sqrt(dt))))


def left_height_excised_batch(
    x: float, delta: float, a_max: float, dt: float,
    rngs: list[np.random.Generator], horizon_cap: float = 2.0**12,
) -> list[LeftHeightPath]:
    """Left-height paths with every sojourn above a_max cut out.

    While the process sits above a_max the maximum S cannot move, so
    removing those sojourns leaves the occupation density below a_max
    unchanged in law. In the Levy coupling this is S - W reflected at
    the moving barrier (a_max - floor(S)) / 2, and the run ends as soon
    as the floor passes a_max.
    Levels below a_max are complete, so a_max is the returned floor.
    """
    if not a_max > 0 or not delta > 0:
        raise ValueError(f"need a_max > 0 and delta > 0, got {a_max}, "
                         f"{delta}")
    n_paths = len(rngs)
    noise = NoiseStream(rngs)
    R = np.zeros(n_paths)
    S = np.zeros(n_paths)
    active = np.ones(n_paths, dtype=bool)
    columns = [np.zeros(n_paths)]
    sqrt_dt = np.sqrt(dt)
    steps = np.zeros(n_paths, dtype=np.int64)
    max_steps = int(horizon_cap / dt)

    step = 0
    while active.any():
        if step >= max_steps:
            raise HorizonExceeded(
                f"floor still below {a_max} at the horizon cap "
                f"{horizon_cap}", index=int(np.flatnonzero(active)[0]),
            )
        R_new = R - noise.next(active) * sqrt_dt
        S = np.where(active & (R_new < 0), S - R_new, S)
        R_new = np.maximum(R_new, 0.0)
        floor = np.maximum(S - x, 0.0) / delta
        barrier = np.maximum((a_max - floor) / 2, 0.0)
        R_new = np.where(R_new > barrier,
                         np.clip(2 * barrier - R_new, 0.0, barrier), R_new)
        R = np.where(active, R_new, R)
        step += 1
        steps[active] = step
        columns.append(2 * R + floor)
        active &= ~(floor > a_max)

    H = np.stack(columns, axis=1)
    return [
        LeftHeightPath(dt, H[p, :steps[p] + 1], floor=float(a_max))
        for p in range(n_paths)
    ]


def jeulin_input(e: SampledPath,
                 dv: float | None = None) -> tuple[SampledPath, SampledPath]:
    """H(level) = int_0^1 1[e_t <= level] dt on a level grid of step dv,
        and its inverse H^{-1}(t) = inf{level : H(level) > t} on a time
        grid of the same step."""
    dv = np.sqrt(e.dt) if dv is None else dv
    cum = occupation_histogram(e, dv).cumulative()
    H = SampledPath(dv, cum)
    t = np.arange(int(np.floor(cum[-1] / dv + TOL)) + 1) * dv
    levels = np.interp(t, cum, np.arange(cum.size) * dv)
    return H, SampledPath(dv, levels)
