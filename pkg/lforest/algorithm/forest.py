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

from collections import Counter
from dataclasses import dataclass
from itertools import combinations, product
import csv
import json
import logging
import numpy as np
from lforest.algorithm.laws import Law, law_from_json
from lforest.algorithm.paths import (
    SampledPath, Interp, SequenceExhausted, HorizonExceeded
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OffspringSequence:
    """Breadth-first offspring counts chi of the non-mutant vertices,
        immigrant counts eta (eta[0] arrives at height 1) and k roots."""

    k: int
    chi: tuple[int, ...]
    eta: tuple[int, ...]

    def __post_init__(self):
        chi = tuple(int(c) for c in self.chi)
        eta = tuple(int(e) for e in self.eta)
        if self.k < 0 or any(c < 0 for c in chi) or any(e < 0 for e in eta):
            raise ValueError("offspring and immigrant counts must be >= 0")
        object.__setattr__(self, "chi", chi)
        object.__setattr__(self, "eta", eta)


@dataclass(frozen=True)
class HeightProfile:
    """Generation sizes z_h of a forest."""

    z: tuple[int, ...]

    def __post_init__(self):
        z = tuple(int(v) for v in self.z)
        if any(v < 0 for v in z):
            raise ValueError("generation sizes must be >= 0")
        object.__setattr__(self, "z", z)

    @property
    def c(self) -> np.ndarray:
        return np.cumsum(np.array(self.z, dtype=np.int64))

    @property
    def total(self) -> int:
        return int(sum(self.z))

    def __len__(self) -> int:
        return len(self.z)

    def to_json(self) -> str:
        return json.dumps(list(self.z))

    @classmethod
    def from_json(cls, text: str) -> "HeightProfile":
        return cls(tuple(json.loads(text)))


@dataclass(frozen=True)
class CousinHeightProcesses:
    """K_p and J_p indexed by breadth-first vertex index p = 0..c_max."""

    K: np.ndarray
    J: np.ndarray


def _grow(seq: OffspringSequence, stop) -> list[int]:
    """Breadth-first generation sizes, generation by generation, until
        stop(z, total) says so."""
    z = [seq.k]
    total = seq.k
    used = 0
    while not stop(z, total):
        h = len(z) - 1
        if used + z[h] > len(seq.chi):
            raise SequenceExhausted(
                f"chi ran out at generation {h}: needed {used + z[h]} "
                f"entries, got {len(seq.chi)}"
            )
        if h >= len(seq.eta):
            raise SequenceExhausted(
                f"eta ran out: no immigrant count for height {h + 1}"
            )
        # Immigrants are appended after the children of generation h
        children = sum(seq.chi[used:used + z[h]])
        used += z[h]
        z.append(children + seq.eta[h])
        total += z[-1]
    return z


def build_forest(seq: OffspringSequence, n: int) -> HeightProfile:
    """Generation sizes of the breadth-first forest with n non-mutant
        vertices described by seq."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if seq.k == 0 and n == 0:
        return HeightProfile(())
    if seq.k > n:
        raise ValueError(f"{seq.k} roots do not fit in {n} vertices")

    z = _grow(seq, lambda z, total: total >= n)
    if sum(z) != n:
        raise ValueError(
            f"sequence realizes {sum(z)} vertices when its last generation "
            f"completes, not {n}"
        )
    return HeightProfile(tuple(z))


def grow_forest(seq: OffspringSequence, height_cap: int) -> HeightProfile:
    """First height_cap generations of the forest described by seq."""
    if height_cap < 1:
        raise ValueError(f"height_cap must be >= 1, got {height_cap}")
    return HeightProfile(tuple(_grow(seq, lambda z, t: len(z) >= height_cap)))


def sample_gwi(
    k: int, mu: Law | dict, nu: Law | dict, height_cap: int,
    rng: np.random.Generator,
) -> HeightProfile:
    """First height_cap generations of a Galton-Watson forest with
        k roots, offspring law mu and immigration law nu."""
    mu, nu = law_from_json(mu), law_from_json(nu)
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    if height_cap < 1:
        raise ValueError(f"height_cap must be >= 1, got {height_cap}")
    z = [k]
    for _ in range(height_cap - 1):
        z.append(mu.sample_sum(rng, z[-1]) + nu.sample_sum(rng, 1))
    return HeightProfile(tuple(z))


def sample_gwi_vertices(
    k: int, mu: Law | dict, nu: Law | dict, n_vertices: int,
    rng: np.random.Generator, generation_cap: int = 10**7,
) -> HeightProfile:
    """Grow a GWI forest generation by generation until it holds at least
        n_vertices non-mutant vertices."""
    mu, nu = law_from_json(mu), law_from_json(nu)
    z = [k]
    total = k
    while total < n_vertices:
        if len(z) >= generation_cap:
            raise HorizonExceeded(
                f"forest still below {n_vertices} vertices after "
                f"{generation_cap} generations"
            )
        z.append(mu.sample_sum(rng, z[-1]) + nu.sample_sum(rng, 1))
        total += z[-1]
    return HeightProfile(tuple(z))


def cycle_lemma_rotation(chi: np.ndarray, k: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Rotate an offspring sequence whose steps chi - 1 sum to -k so that
        its Lukasiewicz path first reaches -k at the last step. One of the
        k valid rotations is picked uniformly."""
    n = chi.size
    steps = chi.astype(np.int64) - 1
    if steps.sum() != -k:
        raise ValueError(f"steps sum to {steps.sum()}, expected {-k}")
    S = np.concatenate(([0], np.cumsum(steps)))

    # Rotation starting after step i is valid iff S_i is a strict new
    # minimum and the path never drops k below S_i before the end.
    prefix_min = np.minimum.accumulate(S)
    suffix_min = np.minimum.accumulate(S[::-1])[::-1]
    i = np.arange(1, n)
    strict_min = S[i] < prefix_min[i - 1]
    stays_above = suffix_min[np.minimum(i + 1, n)] > S[i] - k
    starts = list(i[strict_min & stays_above])
    if n == 1 or S[1:n].min() > -k:
        starts.insert(0, 0)
    if len(starts) != k:
        raise RuntimeError(
            f"cycle lemma found {len(starts)} rotations, expected {k}"
        )

    start = starts[rng.integers(k)]
    return np.roll(chi, -start)


def sample_uniform_forest(n: int, k: int,
                          rng: np.random.Generator) -> HeightProfile:
    """Height profile of a uniform rooted labeled forest on [n] with
        k roots (roots unordered)."""
    if n == 0 and k == 0:
        return HeightProfile(())
    if k < 1 or k > n:
        raise ValueError(f"need 1 <= k <= n, got n={n}, k={k}")

    # Poisson(1) offspring conditioned on their sum are multinomial
    chi = rng.multinomial(n - k, np.full(n, 1.0 / n))
    chi = cycle_lemma_rotation(chi, k, rng)
    return build_forest(OffspringSequence(k, tuple(chi), (0,) * n), n)


def conditioned_poisson_forest(
    n: int, k: int, rng: np.random.Generator, max_tries: int = 10**6
) -> HeightProfile:
    """Slow oracle: k Poisson(1) trees conditioned on n vertices in total,
        by rejection."""
    if not 1 <= k <= n <= 50:
        raise ValueError(f"rejection oracle needs 1 <= k <= n <= 50, "
                         f"got n={n}, k={k}")
    for _ in range(max_tries):
        chi = rng.poisson(1.0, n)
        S = np.cumsum(chi - 1)
        if S[-1] == -k and (n == 1 or S[:-1].min() > -k):
            return build_forest(OffspringSequence(k, tuple(chi), (0,) * n), n)
    raise RuntimeError(f"no forest accepted after {max_tries} tries")


def enumerate_forest_profiles(n: int, k: int) -> Counter:
    """Exhaustive count of height profiles over all rooted labeled forests
        on [n] with k roots."""
    if not 1 <= k <= n <= 6:
        raise ValueError(f"enumeration supports 1 <= k <= n <= 6, "
                         f"got n={n}, k={k}")
    counts = Counter()
    vertices = range(n)
    for roots in combinations(vertices, k):
        others = [v for v in vertices if v not in roots]
        for parents in product(vertices, repeat=len(others)):
            parent = dict(zip(others, parents))
            depth = {r: 0 for r in roots}
            valid = True
            for v in others:
                trail = []
                u = v
                # Follow parents until a vertex of known depth
                while u not in depth:
                    if u in trail:
                        valid = False
                        break
                    trail.append(u)
                    u = parent[u]
                if not valid:
                    break
                for offset, w in enumerate(reversed(trail), 1):
                    depth[w] = depth[u] + offset
            if not valid:
                continue
            z = np.bincount(list(depth.values()))
            counts[tuple(int(c) for c in z)] += 1
    return counts


def profiles_to_csv(counts: Counter, file_path: str):
    with open(file_path, "w", newline="") as file:
        writer = csv.writer(file)
        writer.writerow(["profile", "multiplicity"])
        for profile, multiplicity in sorted(counts.items()):
            writer.writerow([json.dumps(list(profile)), multiplicity])
    logger.info(f"Wrote {len(counts)} profiles to {file_path}")


def cousin_height_processes(z: HeightProfile) -> CousinHeightProcesses:
    zs = np.array(z.z, dtype=np.int64)
    heights = np.repeat(np.arange(zs.size), zs)
    cousins = zs[heights] - 1
    return CousinHeightProcesses(
        K=np.concatenate(([0], np.cumsum(cousins))),
        J=np.concatenate(([0], np.cumsum(heights))),
    )


def boundary_values(z: HeightProfile) -> tuple[np.ndarray, np.ndarray]:
    """K and J at the generation boundaries c_h, without expanding
        the profile into vertices."""
    zs = np.array(z.z, dtype=np.int64)
    K = np.cumsum(zs * (zs - 1))
    J = np.cumsum(np.arange(zs.size) * zs)
    return K, J


def forest_process(z: HeightProfile, p: int) -> tuple[int, int]:
    """K_p and J_p for a single vertex index p."""
    c = z.c
    if not 0 <= p <= (c[-1] if c.size else 0):
        raise ValueError(f"index {p} outside [0, {c[-1] if c.size else 0}]")
    if p == 0:
        return 0, 0
    K, J = boundary_values(z)
    # Generation holding vertex p - 1
    h = int(np.searchsorted(c, p - 1, side="right"))
    before = int(c[h - 1]) if h > 0 else 0
    K_before = int(K[h - 1]) if h > 0 else 0
    J_before = int(J[h - 1]) if h > 0 else 0
    inside = p - before
    return (K_before + inside * (z.z[h] - 1), J_before + inside * h)


def layer_of(z: HeightProfile, r):
    """Height of the vertex w_r, the right-continuous inverse of c."""
    return np.searchsorted(z.c, r, side="right")


def gs_statistic(z: HeightProfile, n: int) -> float:
    """Height minus cousin statistic of a forest with n vertices."""
    if z.total != n:
        raise ValueError(f"profile holds {z.total} vertices, not {n}")
    if n == 0:
        return 0.0
    K, J = boundary_values(z)
    return float(J[-1] / (2 * n**1.5) - K[-1] / n**1.5)


def scaled_profile(z: HeightProfile, n: int,
                   dv: float | None = None) -> SampledPath:
    """The step function v -> (2 / sqrt(n)) z_[2 sqrt(n) v]."""
    if z.total != n or n == 0:
        raise ValueError(f"profile holds {z.total} vertices, not {n}")
    width = 1 / (2 * np.sqrt(n))
    steps = np.append(np.array(z.z, dtype=float), 0.0) * 2 / np.sqrt(n)
    if dv is None:
        return SampledPath(width, steps, Interp.CONSTANT)
    v = np.arange(int(np.ceil(len(z) * width / dv)) + 1) * dv
    idx = np.minimum(np.floor(v / width + 1e-9).astype(int), len(z))
    return SampledPath(dv, steps[idx], Interp.CONSTANT)
