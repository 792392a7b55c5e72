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

from dataclasses import dataclass, asdict
import logging
import multiprocessing as mp
import time
from typing import Callable
import numpy as np
from scipy import stats
from tqdm import tqdm
from lforest.algorithm.paths import LocalForestError

logger = logging.getLogger(__name__)

# Smallest sample that gets a KS report
KS_MIN_N = 100


class ReplicateFailure(LocalForestError):
    """An experiment raised on replicate `index`."""


def replicate_rng(master_seed: int, i: int) -> np.random.Generator:
    """Generator for replicate i, fixed by (master_seed, i). Further
        independent streams of a replicate come from rng.spawn."""
    return np.random.default_rng(
        np.random.SeedSequence(master_seed, spawn_key=(i,))
    )


class PerReplicate:
    """Experiment that calls func(rng, *args, **kwargs) once per
        replicate. Picklable as long as func is a module level function."""

    def __init__(self, func: Callable, *args, **kwargs):
        self.func = func
        self.args = args
        self.kwargs = kwargs

    def __call__(self, rngs: list[np.random.Generator]) -> np.ndarray:
        results = []
        for i, rng in enumerate(rngs):
            try:
                results.append(self.func(rng, *self.args, **self.kwargs))
            except LocalForestError as error:
                # An index from inside the replicate is not a block position
                error.index = i
                raise
        return np.array(results)


class _BlockRunner:
    """Runs one block [start, stop) of replicates."""

    def __init__(self, experiment: Callable, master_seed: int):
        self.experiment = experiment
        self.master_seed = master_seed

    def _rngs(self, start, stop):
        return [replicate_rng(self.master_seed, i)
                for i in range(start, stop)]

    def _locate(self, start, stop) -> tuple[int, Exception]:
        # Replicates only depend on their own stream, so rerunning them
        # one at a time reproduces the failure.
        for i in range(start, stop):
            try:
                self.experiment(self._rngs(i, i + 1))
            except Exception as error:
                return i, error
        return start, None

    def __call__(self, block: tuple[int, int]) -> np.ndarray:
        start, stop = block
        began = time.perf_counter()
        try:
            result = np.asarray(self.experiment(self._rngs(start, stop)),
                                dtype=float)
        except ReplicateFailure:
            raise
        except Exception as error:
            index = getattr(error, "index", None)
            if index is not None:
                index = start + index
            else:
                index, located = self._locate(start, stop)
                error = located or error
            raise ReplicateFailure(
                f"replicate {index} failed: {type(error).__name__}: {error}",
                index=index,
            ) from error
        if result.ndim not in (1, 2) or result.shape[0] != stop - start:
            raise ValueError(
                f"experiment returned shape {result.shape} for a block of "
                f"{stop - start} replicates"
            )
        logger.debug(f"Block [{start}, {stop}) took "
                     f"{time.perf_counter() - began:.3f}s")
        return result


def run_mc(
    experiment: Callable[[list[np.random.Generator]], np.ndarray],
    n: int, master_seed: int, workers: int = 1, batch: int = 50,
    desc: str = "Running replicates",
) -> np.ndarray:
    """Run n replicates of experiment in blocks of `batch`, on `workers`
        processes. Row i comes from replicate_rng(master_seed, i), so the
        output does not depend on workers or batch."""
    if n < 1:
        raise ValueError(f"need at least one replicate, got n={n}")
    if workers < 1 or batch < 1:
        raise ValueError(f"workers and batch must be >= 1, got {workers}, "
                         f"{batch}")
    blocks = [(s, min(s + batch, n)) for s in range(0, n, batch)]
    runner = _BlockRunner(experiment, master_seed)
    logger.info(f"Running {n} replicates in {len(blocks)} blocks on "
                f"{workers} worker(s), seed {master_seed}")

    # disable=None hides the bar when stderr is not a terminal
    if workers == 1:
        results = [runner(block) for block in tqdm(
            blocks, desc=desc, total=len(blocks), disable=None)]
    else:
        with mp.get_context("spawn").Pool(workers) as pool:
            results = list(tqdm(
                pool.imap(runner, blocks), desc=desc, total=len(blocks),
                disable=None,
            ))
    return np.concatenate(results, axis=0)


@dataclass(frozen=True)
class McSummary:
    n: int
    mean: float
    var: float
    stderr: float
    ks_stat: float | None
    ks_p: float | None
    ci95: tuple[float, float]

    def to_json(self) -> dict:
        data = asdict(self)
        data["ci95"] = list(self.ci95)
        return data


def summarize(samples, ref_mean: float | None = None,
              ref_var: float | None = None) -> McSummary:
    """Moments of samples and, when a reference normal is given and
        there are at least KS_MIN_N samples, a KS test against it."""
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    if n < 1:
        raise ValueError("cannot summarize an empty sample")
    mean = float(samples.mean())
    var = float(samples.var(ddof=1)) if n > 1 else 0.0
    stderr = float(np.sqrt(var / n))
    ks_stat = ks_p = None
    if ref_mean is not None and ref_var is not None and n >= KS_MIN_N:
        ks_stat, ks_p = ks_normal(samples, ref_mean, ref_var)
    return McSummary(n, mean, var, stderr, ks_stat, ks_p,
                     (mean - 1.96 * stderr, mean + 1.96 * stderr))


def _asymptotic_p(stat: float, n_eff: float) -> float:
    return float(np.clip(stats.kstwobign.sf(np.sqrt(n_eff) * stat), 0, 1))


def ks_reference(samples, cdf: Callable) -> tuple[float, float]:
    """One-sample KS against a continuous cdf, asymptotic p-value from
        the Kolmogorov series."""
    samples = np.asarray(samples, dtype=float)
    if samples.size < KS_MIN_N:
        raise ValueError(
            f"KS needs at least {KS_MIN_N} samples, got {samples.size}"
        )
    stat = float(stats.kstest(samples, cdf).statistic)
    return stat, _asymptotic_p(stat, samples.size)


def ks_normal(samples, mu0: float, var0: float) -> tuple[float, float]:
    """One-sample KS against N(mu0, var0)."""
    if not var0 > 0:
        raise ValueError(f"reference variance must be positive, got {var0}")
    return ks_reference(samples, stats.norm(mu0, np.sqrt(var0)).cdf)


def ks_two_sample(a, b) -> tuple[float, float]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if min(a.size, b.size) < KS_MIN_N:
        raise ValueError(
            f"KS needs at least {KS_MIN_N} samples per side, got "
            f"{a.size} and {b.size}"
        )
    stat = float(stats.ks_2samp(a, b, method="asymp").statistic)
    return stat, _asymptotic_p(stat, a.size * b.size / (a.size + b.size))


def chi_square(observed, probs) -> tuple[float, float]:
    """Pearson chi-square of observed counts against cell probabilities."""
    observed = np.asarray(observed, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if observed.shape != probs.shape:
        raise ValueError("observed counts and probs must match")
    if abs(probs.sum() - 1) > 1e-9:
        raise ValueError("cell probabilities must sum to 1")
    result = stats.chisquare(observed, probs * observed.sum())
    return float(result.statistic), float(result.pvalue)


def empirical_cov(paths) -> np.ndarray:
    """Sample covariance of rows of paths evaluated on a common grid."""
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    if paths.shape[0] < 2:
        raise ValueError(
            f"covariance needs at least 2 paths, got {paths.shape[0]}"
        )
    return np.atleast_2d(np.cov(paths, rowvar=False, ddof=1))


@dataclass(frozen=True)
class CovReport:
    max_rel_error: float
    worst: tuple[int, int]
    rtol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.rtol

    def to_json(self) -> dict:
        return {"max_rel_error": self.max_rel_error,
                "worst": list(self.worst), "rtol": self.rtol,
                "passed": self.passed}


def compare_cov(emp, analytic, rtol: float = 0.1) -> CovReport:
    """Entrywise relative error of emp against analytic. Entries that
        are small next to sqrt(G_ii G_jj) are measured on that scale."""
    emp = np.atleast_2d(np.asarray(emp, dtype=float))
    analytic = np.atleast_2d(np.asarray(analytic, dtype=float))
    if emp.shape != analytic.shape:
        raise ValueError(f"shapes differ: {emp.shape} vs {analytic.shape}")
    diag = np.abs(np.diag(analytic))
    scale = np.sqrt(np.outer(diag, diag))
    denom = np.where(np.abs(analytic) >= 0.1 * scale, np.abs(analytic),
                     scale)
    if np.any(denom <= 0):
        raise ValueError("analytic covariance has a zero variance")
    error = np.abs(emp - analytic) / denom
    worst = np.unravel_index(int(np.argmax(error)), error.shape)
    return CovReport(float(error[worst]), (int(worst[0]), int(worst[1])),
                     rtol)


@dataclass(frozen=True)
class SweepRow:
    dt: float
    metric: float
    ratio: float | None


def convergence_sweep(run_level: Callable[[float], float], dt0: float,
                      levels: int = 3) -> list[SweepRow]:
    """metric at dt0, dt0 / 2, ... with the ratio to the previous level."""
    if levels < 2:
        raise ValueError(f"a sweep needs at least 2 levels, got {levels}")
    rows = []
    previous = None
    for level in range(levels):
        dt = dt0 / 2**level
        metric = float(run_level(dt))
        ratio = None
        if previous is not None:
            ratio = previous / metric if metric != 0 else float("inf")
        rows.append(SweepRow(dt, metric, ratio))
        logger.info(f"Sweep level {level}: dt={dt:.3g} metric={metric:.6g}"
                    + (f" ratio={ratio:.3f}" if ratio is not None else ""))
        previous = metric
    return rows
