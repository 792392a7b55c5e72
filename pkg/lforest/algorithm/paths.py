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

from dataclasses import dataclass, field
from enum import Enum
import math
import numpy as np

TOL = 10**-9
NOISE_CHUNK = 1024


class LocalForestError(Exception):
    """Base class for every error raised by the simulation code.
        index is the position of the failing path inside a batch,
        when the failure can be pinned to one."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message, index)
        self.message = message
        self.index = index

    def __str__(self):
        return self.message


class SequenceExhausted(LocalForestError, IndexError):
    pass


class HorizonExceeded(LocalForestError):
    pass


class SchemeDiverged(LocalForestError):
    pass


class PathRejected(LocalForestError):
    pass


class Interp(str, Enum):
    CONSTANT = "piecewise-constant-left"  # cadlag step function
    LINEAR = "linear"


@dataclass(frozen=True)
class SampledPath:
    """A real valued process sampled at t = i * dt, i = 0..len-1."""

    dt: float
    values: np.ndarray
    interp: Interp = Interp.LINEAR

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size == 0:
            raise ValueError("a path needs at least one value")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "interp", Interp(self.interp))

    def __len__(self) -> int:
        return self.values.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.size) * self.dt

    @property
    def horizon(self) -> float:
        return (self.values.size - 1) * self.dt

    def _cell(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Index of the grid cell holding t and the offset inside it."""
        t = np.asarray(t, dtype=float)
        if np.any(t < -TOL) or np.any(t > self.horizon + TOL * self.dt):
            raise ValueError(
                f"query outside the path horizon [0, {self.horizon}]"
            )
        last = max(self.values.size - 2, 0)
        i = np.clip(np.floor(t / self.dt + TOL).astype(int), 0, last)
        return i, np.clip(t - i * self.dt, 0.0, None)

    def at(self, t):
        """Evaluate the path respecting its interpolation convention."""
        if self.values.size == 1:
            return np.full(np.shape(t), self.values[0])[()]
        if self.interp is Interp.LINEAR:
            return np.interp(t, self.times, self.values)
        i = np.clip(
            np.floor(np.asarray(t, dtype=float) / self.dt + TOL).astype(int),
            0, self.values.size - 1
        )
        return self.values[i]

    def cumulative_integral(self) -> np.ndarray:
        """Integral from 0 to every grid time."""
        v = self.values
        if self.interp is Interp.LINEAR:
            cells = 0.5 * (v[1:] + v[:-1]) * self.dt
        else:
            cells = v[:-1] * self.dt
        return np.concatenate(([0.0], np.cumsum(cells)))

    def integral(self, t=None):
        """Integral from 0 to t, the whole horizon when t is None."""
        cum = self.cumulative_integral()
        if t is None:
            return float(cum[-1])
        if self.values.size == 1:
            return np.zeros(np.shape(t))[()]
        i, frac = self._cell(t)
        v = self.values
        if self.interp is Interp.LINEAR:
            slope = (v[i + 1] - v[i]) / self.dt
            partial = frac * (v[i] + 0.5 * frac * slope)
        else:
            partial = frac * v[i]
        return (cum[i] + partial)[()]

    def map(self, func) -> "SampledPath":
        return SampledPath(self.dt, func(self.values), self.interp)

    def subsample(self, step: int) -> "SampledPath":
        """Keep every step-th value, giving a path on the grid step * dt."""
        return SampledPath(self.dt * step, self.values[::step], self.interp)

    def to_csv(self, file_path: str):
        data = np.column_stack((self.times, self.values))
        np.savetxt(file_path, data, delimiter=",", header="t,value",
                   comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, file_path: str, interp: Interp = Interp.LINEAR,
                 dt: float | None = None) -> "SampledPath":
        data = np.loadtxt(file_path, delimiter=",", skiprows=1, ndmin=2)
        times = data[:, 0]
        if dt is None:
            if times.size < 2:
                raise ValueError("dt cannot be read from a single sample")
            dt = float(times[1] - times[0])
        return cls(dt, data[:, 1], interp)


@dataclass(frozen=True)
class LeftHeightPath(SampledPath):
    """Left-height path that never revisits levels below floor
        after its last sample."""

    floor: float = math.inf


@dataclass
class CoupledZC:
    """A branching path Z, its integral C and the inverse V of C."""

    Z: SampledPath
    C: SampledPath
    V: SampledPath | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def c_end(self) -> float:
        return float(self.C.values[-1])


def uniform_grid_step(grid) -> float:
    """Spacing of a uniform grid starting at 0, as SampledPath expects."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a non-empty 1d sequence")
    if abs(grid[0]) > TOL:
        raise ValueError("grid must start at 0")
    if grid.size == 1:
        return 1.0
    step = grid[1] - grid[0]
    if step <= 0 or not np.allclose(np.diff(grid), step, rtol=1e-6,
                                    atol=TOL):
        raise ValueError("grid must be uniform and increasing")
    return float(step)


class NoiseStream:
    """Standard normals per path, drawn NOISE_CHUNK at a time from each
        path's own generator. A path's noise does not depend on which
        batch it runs in."""

    def __init__(self, rngs: list[np.random.Generator]):
        self.rngs = rngs
        self.buffer = np.zeros((len(rngs), NOISE_CHUNK))
        self.pos = NOISE_CHUNK

    def next(self, active: np.ndarray) -> np.ndarray:
        """Next normal of every path. Only active paths draw a fresh
            chunk, inactive rows keep stale values."""
        if self.pos == NOISE_CHUNK:
            for p in np.flatnonzero(active):
                self.buffer[p] = self.rngs[p].standard_normal(NOISE_CHUNK)
            self.pos = 0
        column = self.buffer[:, self.pos]
        self.pos += 1
        return column
