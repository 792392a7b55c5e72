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
from lforest.algorithm.forest import HeightProfile, OffspringSequence
from lforest.algorithm.levy import MechanismSpec, simulate_levy, extend_levy
from lforest.algorithm.paths import (
    SampledPath, CoupledZC, Interp, SequenceExhausted, HorizonExceeded,
    uniform_grid_step, TOL
)

logger = logging.getLogger(__name__)

# Share of clipped Euler steps above which a run is flagged
CLIP_FLAG_FRACTION = 0.001


def walks_from_sequence(
    seq: OffspringSequence
) -> tuple[np.ndarray, np.ndarray]:
    """x_m = sum_{j<m} (chi_j - 1) and y_h = sum_{1<=j<=h} eta_j."""
    x_walk = np.concatenate(([0], np.cumsum(np.array(seq.chi) - 1)))
    y_walk = np.concatenate(([0], np.cumsum(seq.eta)))
    return x_walk.astype(np.int64), y_walk.astype(np.int64)


def discrete_lamperti(k: int, x_walk, y_walk,
                      height_cap: int) -> HeightProfile:
    """Solve z_{h+1} = k + x_{c_h} + y_{h+1} with z_0 = k."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    if height_cap < 1:
        raise ValueError(f"height_cap must be >= 1, got {height_cap}")
    z = [k]
    c = k
    for h in range(height_cap - 1):
        if c >= len(x_walk):
            raise SequenceExhausted(
                f"x walk has {len(x_walk)} entries, index {c} needed"
            )
        if h + 1 >= len(y_walk):
            raise SequenceExhausted(
                f"y walk has {len(y_walk)} entries, index {h + 1} needed"
            )
        size = k + int(x_walk[c]) + int(y_walk[h + 1])
        if size < 0:
            raise ValueError(
                f"walks give a negative generation size {size} at {h + 1}"
            )
        z.append(size)
        c += size
    return HeightProfile(tuple(z))


def _lamperti_kernel(
    X_values: np.ndarray, x_dt: float, x: float, delta: float,
    n_steps: int, dt: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Explicit Euler for C' = Z, Z = x + X(C) + delta t, one row per
        path. X is read as a left-constant step function."""
    n_paths, length = X_values.shape
    rows = np.arange(n_paths)
    Z = np.empty((n_paths, n_steps + 1))
    C = np.zeros((n_paths, n_steps + 1))
    Z[:, 0] = np.maximum(x + X_values[:, 0], 0.0)
    clipped = np.zeros(n_paths, dtype=np.int64)
    absorbed = (Z[:, 0] <= 0) & (delta == 0)

    for i in range(n_steps):
        C[:, i + 1] = C[:, i] + Z[:, i] * dt
        idx = np.floor(C[:, i + 1] / x_dt + TOL).astype(np.int64)
        if (over := idx > length - 1).any():
            first = int(np.argmax(over))
            raise HorizonExceeded(
                f"C reached {C[first, i + 1]:.6g} beyond the horizon "
                f"{(length - 1) * x_dt:.6g} of X at t={(i + 1) * dt:.6g}",
                index=first,
            )
        raw = x + X_values[rows, idx] + delta * (i + 1) * dt
        if delta == 0:
            # Absorbed at 0, stopped upon hitting -x
            absorbed |= raw <= 0
            Z[:, i + 1] = np.where(absorbed, 0.0, raw)
        else:
            negative = raw < 0
            clipped += negative
            Z[:, i + 1] = np.where(negative, 0.0, raw)
    return Z, C, clipped, absorbed


def _coupled(Z_row, C_row, dt, clipped, absorbed, n_steps) -> CoupledZC:
    C = SampledPath(dt, C_row)
    c_end = C_row[-1]
    n_r = max(int(np.ceil(c_end / dt - TOL)), 1)
    V = inverse_time_change(C, np.arange(n_r) * dt)
    fraction = clipped / max(n_steps, 1)
    flagged = fraction > CLIP_FLAG_FRACTION
    if flagged:
        logger.warning(
            f"Lamperti scheme clipped {clipped} of {n_steps} steps "
            f"({fraction:.2%}), above {CLIP_FLAG_FRACTION:.1%}"
        )
    return CoupledZC(
        Z=SampledPath(dt, Z_row, Interp.CONSTANT), C=C, V=V,
        diagnostics={"clipped": int(clipped), "clipped_fraction": fraction,
                     "flagged": bool(flagged), "absorbed": bool(absorbed),
                     "c_end": float(c_end), "steps": n_steps},
    )


def continuous_lamperti(X: SampledPath, x: float, delta: float, T: float,
                        dt: float) -> CoupledZC:
    """Euler solution of Z_t = x + X(C_t) + delta t, C_t = int_0^t Z."""
    return continuous_lamperti_batch([X], x, delta, T, dt)[0]


def continuous_lamperti_batch(Xs: list[SampledPath], x: float, delta: float,
                              T: float, dt: float) -> list[CoupledZC]:
    """continuous_lamperti over several paths sharing one grid."""
    if x < 0 or delta < 0:
        raise ValueError(f"x and delta must be >= 0, got {x}, {delta}")
    if not dt > 0 or T < dt:
        raise ValueError(f"need 0 < dt <= T, got dt={dt}, T={T}")
    if len({(X.dt, len(X)) for X in Xs}) != 1:
        raise ValueError("batched Levy paths must share dt and length")
    n_steps = int(round(T / dt))
    X_values = np.stack([X.values for X in Xs])
    Z, C, clipped, absorbed = _lamperti_kernel(
        X_values, Xs[0].dt, x, delta, n_steps, dt
    )
    return [_coupled(Z[p], C[p], dt, clipped[p], absorbed[p], n_steps)
            for p in range(len(Xs))]


def lamperti_from_levy(
    m: MechanismSpec, x: float, delta: float, T: float, dt: float,
    rng: np.random.Generator, horizon: float | None = None,
    horizon_cap: float = 1e4,
) -> tuple[CoupledZC, SampledPath]:
    """Simulate X for m and solve the Lamperti equation, doubling the
        horizon of X until it covers C_T."""
    if horizon is None:
        horizon = 2 * (x + delta * T + 1) * T
    X = simulate_levy(m, horizon, dt, rng)
    while True:
        try:
            return continuous_lamperti(X, x, delta, T, dt), X
        except HorizonExceeded:
            horizon *= 2
            if horizon > horizon_cap:
                raise HorizonExceeded(
                    f"Levy path horizon above the cap {horizon_cap}"
                )
            logger.debug(f"Extending the Levy path to {horizon:.6g}")
            X = extend_levy(X, m, horizon, rng)


def inverse_time_change(C: SampledPath, r_grid) -> SampledPath:
    """V_r = inf{t : C_t > r} on a uniform r grid, right-continuous at
        flats of C. Levels at or past the end of C map to +inf."""
    dr = uniform_grid_step(r_grid)
    r = np.asarray(r_grid, dtype=float)
    c = C.values
    if np.any(np.diff(c) < 0):
        raise ValueError("C must be nondecreasing")
    i = np.searchsorted(c, r, side="right")
    inside = i < c.size
    V = np.full(r.shape, np.inf)
    j = i[inside]
    lo = np.maximum(j - 1, 0)
    rise = c[j] - c[lo]
    frac = np.where(rise > 0, (r[inside] - c[lo]) / np.where(
        rise > 0, rise, 1.0), 0.0)
    V[inside] = np.where(j == 0, 0.0, (lo + frac) * C.dt)
    return SampledPath(dr, V)


def _cumulative_trapezoid(values: np.ndarray, dt: float) -> np.ndarray:
    return np.concatenate(([0.0], np.cumsum(
        0.5 * (values[1:] + values[:-1]) * dt)))


def pathwise_identity(
    ZC: CoupledZC, X: SampledPath, x: float, delta: float, n_power: int,
    t_grid,
) -> tuple[SampledPath, SampledPath]:
    """Both sides of int_0^{V_t} (Z_u - delta u)^n Z_u du
        = int_0^t (x + X_u)^n du on t_grid."""
    if n_power < 1:
        raise ValueError(f"n_power must be >= 1, got {n_power}")
    dt = uniform_grid_step(t_grid)
    t = np.asarray(t_grid, dtype=float)
    if t[-1] > X.horizon + TOL:
        raise ValueError(f"t_grid reaches {t[-1]}, X stops at {X.horizon}")

    V = inverse_time_change(ZC.C, t).values
    if not np.all(np.isfinite(V)):
        raise ValueError(
            f"t_grid reaches {t[-1]}, beyond C_T = {ZC.c_end:.6g}"
        )
    u = ZC.Z.times
    integrand = (ZC.Z.values - delta * u) ** n_power * ZC.Z.values
    G = _cumulative_trapezoid(integrand, ZC.Z.dt)
    lhs = np.interp(V, u, G)

    shifted = X.map(lambda v: (x + v) ** n_power)
    rhs = np.atleast_1d(shifted.integral(t))
    return SampledPath(dt, lhs), SampledPath(dt, rhs)
