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

"""Spectrally positive Levy paths and their branching mechanisms.

Sign convention: E exp(-l X_t) = exp(t Psi(l)) with
Psi(l) = drift * l + gaussian * l^2 + ..., so a negative drift
coefficient gives a path with positive linear trend.
"""

from dataclasses import dataclass
import logging
import numpy as np
from lforest.algorithm.laws import Law, law_from_json
from lforest.algorithm.paths import SampledPath, Interp

logger = logging.getLogger(__name__)

CONVEXITY_GRID = np.linspace(0.0, 10.0, 101)


@dataclass(frozen=True)
class StableComponent:
    alpha: float
    scale: float

    def __post_init__(self):
        if not 1 < self.alpha < 2:
            raise ValueError(
                f"stable exponent must lie in (1, 2), got {self.alpha}"
            )
        if not self.scale > 0:
            raise ValueError(f"stable scale must be > 0, got {self.scale}")


@dataclass(frozen=True)
class CompoundPoisson:
    rate: float
    sizes: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        sizes = tuple(float(s) for s in self.sizes)
        probs = tuple(float(p) for p in self.probs)
        if self.rate < 0:
            raise ValueError(f"jump rate must be >= 0, got {self.rate}")
        if not sizes or len(sizes) != len(probs):
            raise ValueError("jump sizes and probs must match")
        if min(sizes) <= 0:
            raise ValueError("jumps must be positive (spectrally positive)")
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError("jump probs must form a distribution")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "probs", probs)

    @property
    def small_jump_mean(self) -> float:
        """Mean of the jumps below 1, which the mechanism compensates."""
        sizes, probs = np.array(self.sizes), np.array(self.probs)
        return float(np.sum(probs * sizes * (sizes < 1)))


@dataclass(frozen=True)
class MechanismSpec:
    drift: float = 0.0
    gaussian: float = 0.0
    stable: StableComponent | None = None
    cpoisson: CompoundPoisson | None = None
    delta: float = 0.0

    def __post_init__(self):
        if self.gaussian < 0:
            raise ValueError(f"gaussian must be >= 0, got {self.gaussian}")
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        values = psi_eval(self, CONVEXITY_GRID)
        if values[0] != 0:
            raise ValueError("Psi(0) must vanish")
        if np.any(np.diff(values, 2) < -1e-9 * (1 + np.abs(values[1:-1]))):
            raise ValueError("Psi is not convex on [0, 10]")

    @classmethod
    def from_json(cls, data: dict) -> "MechanismSpec":
        known = {"drift", "gaussian", "stable", "cpoisson", "delta"}
        if unknown := set(data) - known:
            raise ValueError(f"unknown mechanism fields {sorted(unknown)}")
        stable = data.get("stable")
        cpoisson = data.get("cpoisson")
        return cls(
            drift=float(data.get("drift", 0.0)),
            gaussian=float(data.get("gaussian", 0.0)),
            stable=(StableComponent(float(stable["alpha"]),
                                    float(stable["scale"]))
                    if stable else None),
            cpoisson=(CompoundPoisson(float(cpoisson["rate"]),
                                      tuple(cpoisson["sizes"]),
                                      tuple(cpoisson["probs"]))
                      if cpoisson else None),
            delta=float(data.get("delta", 0.0)),
        )

    def to_json(self) -> dict:
        data = {"drift": self.drift, "gaussian": self.gaussian,
                "delta": self.delta}
        if self.stable:
            data["stable"] = {"alpha": self.stable.alpha,
                              "scale": self.stable.scale}
        if self.cpoisson:
            data["cpoisson"] = {"rate": self.cpoisson.rate,
                                "sizes": list(self.cpoisson.sizes),
                                "probs": list(self.cpoisson.probs)}
        return data


def psi_eval(m: MechanismSpec, lam):
    """Branching mechanism Psi at lam >= 0 (scalar or array)."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError("Psi is only evaluated at lam >= 0")
    value = m.drift * lam + m.gaussian * lam**2
    if m.stable:
        value = value + m.stable.scale * lam**m.stable.alpha
    if m.cpoisson:
        sizes = np.array(m.cpoisson.sizes)
        probs = np.array(m.cpoisson.probs)
        r = sizes.reshape((-1,) + (1,) * lam.ndim)
        p = probs.reshape(r.shape)
        terms = np.exp(-lam * r) - 1 + lam * r * (r < 1)
        value = value + m.cpoisson.rate * np.sum(p * terms, axis=0)
    return value[()]


def validate_conservative(m: MechanismSpec) -> bool:
    """Whether int_0 1/|Psi| diverges. Every representable mechanism has
        a finite Psi'(0+), which already forces the divergence."""
    slope = m.drift
    if m.cpoisson:
        sizes = np.array(m.cpoisson.sizes)
        probs = np.array(m.cpoisson.probs)
        slope -= m.cpoisson.rate * np.sum(probs * sizes * (sizes >= 1))
    conservative = bool(np.isfinite(slope))
    logger.info(
        f"Conservativity: Psi'(0+) = {slope:.6g} is finite, "
        f"so int_0 1/|Psi| diverges -> {conservative}"
    )
    return conservative


def validate_cts_height(m: MechanismSpec) -> bool:
    """Whether int^inf 1/Psi converges, i.e. the height process is
        continuous. Needs a Gaussian or stable component."""
    continuous = m.gaussian > 0 or m.stable is not None
    rule = ("Psi grows at least like l^alpha with alpha > 1"
            if continuous else
            "Psi grows at most linearly (drift and compound Poisson only)")
    logger.info(f"Height continuity: {rule} -> {continuous}")
    return continuous


def stable_increments(alpha: float, scale: float, dt: float, size: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Zero mean, totally right-skewed stable increments with
        E exp(-l S) = exp(dt * scale * l^alpha), by Chambers-Mallows-Stuck."""
    if not 1 < alpha < 2:
        raise ValueError(f"stable exponent must lie in (1, 2), got {alpha}")
    tan = np.tan(np.pi * alpha / 2)
    # S1 scale giving Laplace exponent dt * scale * l^alpha
    sigma = (dt * scale * abs(np.cos(np.pi * alpha / 2))) ** (1 / alpha)
    B = np.arctan(tan) / alpha
    S = (1 + tan**2) ** (1 / (2 * alpha))

    V = rng.uniform(-np.pi / 2, np.pi / 2, size)
    W = rng.exponential(1.0, size)
    X = (S * np.sin(alpha * (V + B)) / np.cos(V) ** (1 / alpha)
         * (np.cos(V - alpha * (V + B)) / W) ** ((1 - alpha) / alpha))
    return sigma * X


def levy_increments(m: MechanismSpec, n_steps: int, dt: float,
                    rng: np.random.Generator) -> np.ndarray:
    """n_steps independent increments over steps of length dt."""
    increments = np.full(n_steps, -m.drift * dt)
    if m.gaussian > 0:
        increments += np.sqrt(2 * m.gaussian * dt) * rng.standard_normal(
            n_steps)
    if m.stable:
        increments += stable_increments(m.stable.alpha, m.stable.scale, dt,
                                        n_steps, rng)
    if m.cpoisson and m.cpoisson.rate > 0:
        counts = rng.poisson(m.cpoisson.rate * dt, n_steps)
        jumps = rng.choice(np.array(m.cpoisson.sizes), counts.sum(),
                           p=np.array(m.cpoisson.probs))
        owner = np.repeat(np.arange(n_steps), counts)
        increments += np.bincount(owner, weights=jumps, minlength=n_steps)
        increments -= m.cpoisson.rate * m.cpoisson.small_jump_mean * dt
    return increments


def simulate_levy(m: MechanismSpec, T: float, dt: float,
                  rng: np.random.Generator) -> SampledPath:
    """Levy path X on [0, T] started at 0, as a cadlag step function."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if T < dt:
        raise ValueError(f"horizon {T} shorter than one step {dt}")
    n_steps = int(round(T / dt))
    values = np.concatenate(([0.0], np.cumsum(
        levy_increments(m, n_steps, dt, rng))))
    return SampledPath(dt, values, Interp.CONSTANT)


def extend_levy(X: SampledPath, m: MechanismSpec, T: float,
                rng: np.random.Generator) -> SampledPath:
    """Continue X with fresh increments up to horizon T."""
    extra = int(round(T / X.dt)) - (len(X) - 1)
    if extra <= 0:
        return X
    tail = X.values[-1] + np.cumsum(levy_increments(m, extra, X.dt, rng))
    return SampledPath(X.dt, np.concatenate((X.values, tail)), X.interp)


def offspring_walk(
    mu: Law | dict, nu: Law | dict, n: int, gamma_n: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """One draw of ((1/n) sum_{j < n gamma_n} (chi_j - 1),
        (1/n) sum_{j <= gamma_n} eta_j)."""
    mu, nu = law_from_json(mu), law_from_json(nu)
    if n < 1 or gamma_n < 1:
        raise ValueError(f"n and gamma_n must be >= 1, got {n}, {gamma_n}")
    m = n * gamma_n
    first = (mu.sample_sum(rng, m) - m) / n
    second = nu.sample_sum(rng, gamma_n) / n
    return first, second
