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

"""Offspring and immigration laws on the non-negative integers."""

from abc import ABC, abstractmethod
from dataclasses import dataclass
import math
import numpy as np
from scipy.special import gamma, zeta


class Law(ABC):
    @property
    @abstractmethod
    def mean(self) -> float:
        ...

    @property
    @abstractmethod
    def var(self) -> float:
        ...

    @abstractmethod
    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        ...

    def sample_sum(self, rng: np.random.Generator, count: int) -> int:
        """Sum of count independent draws."""
        if count < 0:
            raise ValueError(f"count must be non-negative, got {count}")
        if count == 0:
            return 0
        return int(self.sample(rng, count).sum())

    @abstractmethod
    def to_json(self) -> dict:
        ...


@dataclass(frozen=True)
class Poisson(Law):
    rate: float

    def __post_init__(self):
        if not (self.rate >= 0 and math.isfinite(self.rate)):
            raise ValueError(f"Poisson rate must be >= 0, got {self.rate}")

    @property
    def mean(self) -> float:
        return self.rate

    @property
    def var(self) -> float:
        return self.rate

    def sample(self, rng, size):
        return rng.poisson(self.rate, size)

    def sample_sum(self, rng, count):
        if count < 0:
            raise ValueError(f"count must be non-negative, got {count}")
        # A sum of Poissons is Poisson
        return int(rng.poisson(self.rate * count))

    def to_json(self):
        return {"kind": "poisson", "rate": self.rate}


@dataclass(frozen=True)
class PointMass(Law):
    value: int

    def __post_init__(self):
        if int(self.value) != self.value or self.value < 0:
            raise ValueError(
                f"point mass must sit on a non-negative integer, "
                f"got {self.value}"
            )

    @property
    def mean(self) -> float:
        return float(self.value)

    @property
    def var(self) -> float:
        return 0.0

    def sample(self, rng, size):
        return np.full(size, int(self.value), dtype=np.int64)

    def sample_sum(self, rng, count):
        if count < 0:
            raise ValueError(f"count must be non-negative, got {count}")
        return int(self.value) * count

    def to_json(self):
        return {"kind": "point", "value": int(self.value)}


@dataclass(frozen=True)
class FinitePmf(Law):
    values: tuple[int, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        values = tuple(int(v) for v in self.values)
        probs = tuple(float(p) for p in self.probs)
        if len(values) == 0 or len(values) != len(probs):
            raise ValueError("pmf needs matching non-empty values and probs")
        if min(values) < 0 or min(probs) < 0:
            raise ValueError("pmf values and probs must be non-negative")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"pmf probs sum to {sum(probs)}, not 1")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    @property
    def var(self) -> float:
        values = np.array(self.values, dtype=float)
        return float(np.dot(values**2, self.probs) - self.mean**2)

    def sample(self, rng, size):
        return rng.choice(np.array(self.values), size=size,
                          p=np.array(self.probs))

    def to_json(self):
        return {"kind": "pmf", "values": list(self.values),
                "probs": list(self.probs)}


@dataclass(frozen=True)
class HeavyTail(Law):
    """Unit mean law with mu(j) = j^(-1-alpha) / zeta(alpha) for j >= 1
        and the remaining mass at 0. Infinite variance for alpha < 2."""

    alpha: float

    def __post_init__(self):
        if not 1 < self.alpha < 2:
            raise ValueError(
                f"heavy tail exponent must lie in (1, 2), got {self.alpha}"
            )

    @property
    def mean(self) -> float:
        return 1.0

    @property
    def var(self) -> float:
        return math.inf

    @property
    def p_positive(self) -> float:
        return float(zeta(1 + self.alpha) / zeta(self.alpha))

    @property
    def tail_constant(self) -> float:
        """c in mu(j) ~ c j^(-1-alpha)."""
        return float(1 / zeta(self.alpha))

    def sample(self, rng, size):
        # Zipf(1 + alpha) thinned by a Bernoulli so the mean is one
        positive = rng.random(size) < self.p_positive
        draws = rng.zipf(1 + self.alpha, size)
        return np.where(positive, draws, 0)

    def to_json(self):
        return {"kind": "heavy_tail", "alpha": self.alpha}


def law_from_json(data: dict) -> Law:
    """Parse {"kind": ..., ...} into a Law."""
    if isinstance(data, Law):
        return data
    if not isinstance(data, dict) or "kind" not in data:
        raise ValueError(f"law spec must be an object with a kind: {data!r}")
    kind = data["kind"]
    match kind:
        case "poisson":
            return Poisson(float(data["rate"]))
        case "point":
            return PointMass(int(data["value"]))
        case "pmf":
            return FinitePmf(tuple(data["values"]), tuple(data["probs"]))
        case "heavy_tail":
            return HeavyTail(float(data["alpha"]))
    raise ValueError(f"unknown law kind {kind!r}")


FAMILIES = ("finite_variance", "near_critical", "heavy_tail")


@dataclass(frozen=True)
class TriangularArray:
    mu: Law
    nu: Law
    gamma_n: int


def triangular_array(
    family: str, n: int, delta: float = 1.0, mu: Law | None = None,
    drift: float = 0.0, alpha: float = 1.5,
) -> TriangularArray:
    """Offspring/immigration pair at scale n for one of the families
        whose rescaled walks converge: finite variance mean one offspring,
        near-critical Poisson(1 + drift/n), or heavy tailed offspring."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    match family:
        case "finite_variance":
            mu = Poisson(1.0) if mu is None else mu
            if abs(mu.mean - 1.0) > 1e-9:
                raise ValueError("finite variance family needs mean one")
            return TriangularArray(mu, Poisson(delta), n)
        case "near_critical":
            return TriangularArray(Poisson(1.0 + drift / n), Poisson(delta), n)
        case "heavy_tail":
            gamma_n = max(1, int(n ** (alpha - 1)))
            return TriangularArray(
                HeavyTail(alpha), Poisson(delta * n / gamma_n), gamma_n
            )
    raise ValueError(f"unknown family {family!r}, expected one of {FAMILIES}")


def heavy_tail_scale(alpha: float) -> float:
    """Scale of the stable limit of the heavy tailed walk, so that
        Psi(l) = scale * l^alpha."""
    return float(gamma(-alpha) / zeta(alpha))
