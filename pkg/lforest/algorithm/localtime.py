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

from dataclasses import dataclass
import logging
import math
import numpy as np
from lforest.algorithm.paths import (
    SampledPath, Interp, HorizonExceeded
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LocalTimeProfile:
    """Occupation density mass[b] of the level bin [b dv, (b + 1) dv)."""

    dv: float
    mass: np.ndarray

    @property
    def levels(self) -> np.ndarray:
        return np.arange(self.mass.size) * self.dv

    @property
    def total(self) -> float:
        return float(self.mass.sum() * self.dv)

    def at(self, level: float) -> float:
        """Density of the bin holding level, 0 above the top bin."""
        b = int(np.floor(level / self.dv))
        return float(self.mass[b]) if 0 <= b < self.mass.size else 0.0

    def cumulative(self) -> np.ndarray:
        """Occupation time below each bin edge."""
        return np.concatenate(([0.0], np.cumsum(self.mass) * self.dv))

    def to_csv(self, file_path: str):
        np.savetxt(file_path, np.column_stack((self.levels, self.mass)),
                   delimiter=",", header="level,mass", comments="",
                   fmt="%.17g")


def _profile(time: np.ndarray, dv: float) -> LocalTimeProfile:
    logger.debug(f"Occupation histogram: {time.size} bins of width {dv:g}, "
                 f"{np.count_nonzero(time)} occupied")
    return LocalTimeProfile(dv, time / dv)


def occupation_histogram(path: SampledPath, dv: float) -> LocalTimeProfile:
    """Time the path spends in each level bin, divided by dv. Linear
        paths are split exactly at the bin edges."""
    if not dv > 0:
        raise ValueError(f"dv must be positive, got {dv}")
    v = path.values
    if v.min() < 0:
        raise ValueError("occupation levels start at 0, path goes negative")
    dt = path.dt
    if v.size == 1:
        return LocalTimeProfile(dv, np.zeros(int(v[0] // dv) + 1))

    if path.interp is Interp.CONSTANT:
        bins = np.floor(v[:-1] / dv).astype(np.int64)
        time = np.bincount(bins, minlength=int(v.max() // dv) + 1) * dt
        return _profile(time, dv)

    lo = np.minimum(v[:-1], v[1:])
    hi = np.maximum(v[:-1], v[1:])
    b_lo = np.floor(lo / dv).astype(np.int64)
    b_hi = np.maximum(np.ceil(hi / dv).astype(np.int64) - 1, b_lo)
    flat = hi == lo
    b_hi[flat] = b_lo[flat]

    # One entry per (segment, bin) pair the segment crosses
    spans = b_hi - b_lo + 1
    segment = np.repeat(np.arange(lo.size), spans)
    offsets = np.arange(segment.size) - np.repeat(np.cumsum(spans) - spans,
                                                  spans)
    b = b_lo[segment] + offsets
    overlap = (np.minimum(hi[segment], (b + 1) * dv)
               - np.maximum(lo[segment], b * dv))
    width = hi[segment] - lo[segment]
    weight = np.where(flat[segment], dt,
                      dt * np.clip(overlap, 0.0, None)
                      / np.where(flat[segment], 1.0, width))
    time = np.bincount(b, weights=weight, minlength=int(b_hi.max()) + 1)
    return _profile(time, dv)


def path_area(path: SampledPath) -> float:
    return path.integral()


def squared_lt_integral(lt: LocalTimeProfile) -> float:
    """int (L^v)^2 dv."""
    return float(np.sum(lt.mass**2) * lt.dv)


def gs_functional(path: SampledPath, beta: float, dv: float) -> float:
    """int_0^1 path - (1 / beta) int_0^inf (L^v)^2 dv."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    lt = occupation_histogram(path, dv)
    return path_area(path) - squared_lt_integral(lt) / beta


def level_inverse(lt: LocalTimeProfile, r: float) -> float:
    """inf{v : int_0^v L^y dy > r}, linear inside a bin."""
    cum = lt.cumulative()
    if r >= cum[-1]:
        raise HorizonExceeded(
            f"total occupation {cum[-1]:.6g} does not exceed {r}"
        )
    b = int(np.searchsorted(cum, r, side="right")) - 1
    return b * lt.dv + (r - cum[b]) / lt.mass[b]


def _truncated_height_integral(path: SampledPath, level: float) -> float:
    """int h_r 1[h_r <= level] dr over the linear path, exactly."""
    v = path.values
    lo = np.minimum(v[:-1], v[1:])
    hi = np.maximum(v[:-1], v[1:])
    top = np.minimum(hi, level)
    flat = hi == lo
    slope_part = np.where(
        (top > lo) & ~flat,
        (top**2 - lo**2) / (2 * np.where(flat, 1.0, hi - lo)), 0.0
    )
    flat_part = np.where(flat & (lo <= level), lo, 0.0)
    return float(np.sum(slope_part + flat_part) * path.dt)


def crt_functional(hbar: SampledPath, delta: float, r: float,
                   dv: float) -> float:
    """delta int hbar 1[hbar <= V_r] dt - int_0^{V_r} (L^y)^2 dy, with
        L the terminal occupation density of hbar and V_r the level
        inverse of int L."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if r < 0:
        raise ValueError(f"r must be >= 0, got {r}")
    lt = occupation_histogram(hbar, dv)
    if r == 0:
        return 0.0
    V = level_inverse(lt, r)
    if V >= getattr(hbar, "floor", np.inf):
        raise HorizonExceeded(
            f"level {V:.6g} is not below the non-revisit floor "
            f"{hbar.floor:.6g}"
        )
    full = int(np.floor(V / dv))
    squared = (np.sum(lt.mass[:full] ** 2) * dv
               + lt.mass[full] ** 2 * (V - full * dv))
    return delta * _truncated_height_integral(hbar, V) - float(squared)


def abeta_moment(n: int) -> float:
    """Closed form -2^n (2n - 1)! / (4 (n - 1)!) sqrt(6 pi) of the n-th
        odd moment E[A_2^(2n - 1)]."""
    if not 1 <= n <= 7:
        raise ValueError(f"closed form holds for n = 1..7, got {n}")
    return float(-(2.0**n) * math.factorial(2 * n - 1)
                 / (4 * math.factorial(n - 1)) * math.sqrt(6 * math.pi))
