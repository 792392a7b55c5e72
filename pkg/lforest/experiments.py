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

"""One Monte Carlo experiment per distributional identity, each with
built-in acceptance thresholds."""

from dataclasses import dataclass, field, replace
from functools import partial
import logging
import math
from typing import Callable
import numpy as np
from scipy import stats
from scipy.integrate import quad
from lforest.algorithm.excursion import (
    brownian_bridge, brownian_excursion, reflected_bridge,
    drift_transform_bridge, drift_transform_excursion,
    left_height_excised_batch, jeulin_input,
)
from lforest.algorithm.forest import (
    sample_uniform_forest, sample_gwi_vertices, forest_process, gs_statistic
)
from lforest.algorithm.lamperti import (
    continuous_lamperti, lamperti_from_levy, pathwise_identity
)
from lforest.algorithm.laws import law_from_json, triangular_array
from lforest.algorithm.levy import (
    MechanismSpec, simulate_levy, extend_levy, validate_conservative,
    validate_cts_height,
)
from lforest.algorithm.localtime import (
    gs_functional, occupation_histogram, crt_functional, abeta_moment
)
from lforest.algorithm.paths import HorizonExceeded, TOL
from lforest.algorithm.sde import (
    function_from_json, euler_zsde_uc_batch, bridge_functional_batch,
    functional_gauss, analytic_mean_cov, validate_diffusion,
)
from lforest.mcstats import (
    McSummary, PerReplicate, run_mc, summarize, ks_reference, ks_two_sample,
    empirical_cov, compare_cov, convergence_sweep,
)

logger = logging.getLogger(__name__)

# Acceptance p-value for every KS check
KS_LEVEL = 0.01


@dataclass
class ExperimentResult:
    name: str
    samples: np.ndarray
    summary: McSummary
    checks: dict[str, bool] = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def _mean_ok(summary: McSummary, target: float, k: float = 3.0) -> bool:
    return abs(summary.mean - target) <= k * summary.stderr


def _var_ok(summary: McSummary, target: float, rtol: float) -> bool:
    return abs(summary.var - target) <= rtol * target


def _finish(name: str, samples, summary: McSummary, checks: dict,
            extras: dict | None = None) -> ExperimentResult:
    result = ExperimentResult(name, np.asarray(samples, dtype=float),
                              summary, checks, extras or {})
    for check, ok in checks.items():
        logger.info(f"{name}: check {check} {'passed' if ok else 'FAILED'}")
    if not checks:
        logger.info(f"{name}: no acceptance thresholds for this setting")
    return result


# Forests

def _forest_clt_replicate(rng, n, k):
    return gs_statistic(sample_uniform_forest(n, k, rng), n)


def forest_clt(config: dict, seed: int, workers: int = 1) -> ExperimentResult:
    n = config["n"]
    k = max(1, math.ceil(config["x"] * math.sqrt(n) / 2))
    x_eff = 2 * k / math.sqrt(n)
    samples = run_mc(PerReplicate(_forest_clt_replicate, n, k),
                     config["reps"], seed, workers, config["batch"],
                     desc="Sampling uniform forests")
    summary = summarize(samples, -x_eff / 4, 1 / 12)
    checks = {"mean": _mean_ok(summary, -x_eff / 4),
              "var": _var_ok(summary, 1 / 12, 0.1)}
    return _finish("forest-clt", samples, summary, checks,
                   {"k": k, "x_effective": x_eff})


def _gwi_replicate(rng, k, mu, nu, n, gamma_n, p, delta):
    z = sample_gwi_vertices(k, mu, nu, p, rng)
    K, J = forest_process(z, p)
    return delta * J / (n * gamma_n**2) - K / (n**2 * gamma_n)


def gwi_process(config: dict, seed: int, workers: int = 1) -> ExperimentResult:
    n, t, delta = config["n"], config["t"], config["delta"]
    family = config["family"]
    mu = law_from_json(config["mu"]) if family == "finite_variance" else None
    array = triangular_array(family, n, delta, mu, config["drift"],
                             config["alpha"])
    k = round(config["x"] * n)
    p = int(n * array.gamma_n * t)
    samples = run_mc(
        PerReplicate(_gwi_replicate, k, array.mu.to_json(),
                     array.nu.to_json(), n, array.gamma_n, p, delta),
        config["reps"], seed, workers, config["batch"],
        desc="Growing GWI forests",
    )
    extras = {"k": k, "gamma_n": array.gamma_n, "vertices": p}
    if family == "heavy_tail":
        # Stable limit, no Gaussian reference
        return _finish("gwi-process", samples, summarize(samples), {}, extras)

    drift = config["drift"] if family == "near_critical" else 0.0
    sigma2 = array.mu.var if family == "finite_variance" else 1.0
    mean = -config["x"] * t - drift * t**2 / 2
    var = sigma2 * t**3 / 3
    summary = summarize(samples, mean, var)
    checks = {"mean": _mean_ok(summary, mean),
              "var": _var_ok(summary, var, 0.1)}
    return _finish("gwi-process", samples, summary, checks,
                   extras | {"target_mean": mean, "target_var": var})


# Lamperti transform

def _solve_level(X, m, x, delta, T, dt, step, rng, horizon_cap):
    while True:
        try:
            return continuous_lamperti(X.subsample(step), x, delta, T, dt), X
        except HorizonExceeded:
            horizon = 2 * X.horizon
            if horizon > horizon_cap:
                raise
            X = extend_levy(X, m, horizon, rng)


def _mechanism_sweep(rng, mechanism, x, delta, T, dt, levels, n_power,
                     horizon_cap):
    """Sup error of the pathwise identity at dt, dt / 2, ... with every
        level driven by the same Levy path."""
    m = MechanismSpec.from_json(mechanism)
    fine = levels - 1
    X = simulate_levy(m, 2 * (x + delta * T + 1) * T, dt / 2**fine, rng)
    solved = []
    for level in range(levels):
        ZC, X = _solve_level(X, m, x, delta, T, dt / 2**level,
                             2 ** (fine - level), rng, horizon_cap)
        solved.append(ZC)

    t_end = min(ZC.c_end for ZC in solved)
    n_t = int(np.floor(t_end / dt - TOL))
    if n_t < 1:
        return np.zeros(levels)
    t_grid = np.arange(n_t + 1) * dt
    errors = []
    for level, ZC in enumerate(solved):
        lhs, rhs = pathwise_identity(ZC, X.subsample(2 ** (fine - level)),
                                     x, delta, n_power, t_grid)
        errors.append(np.max(np.abs(lhs.values - rhs.values)))
    return np.array(errors)


def _lamperti_replicate(rng, mechanisms, *args):
    """Sweeps of every mechanism, each on its own child stream,
        flattened to one row."""
    return np.concatenate([
        _mechanism_sweep(child, mechanism, *args)
        for child, mechanism in zip(rng.spawn(len(mechanisms)), mechanisms)
    ])


# Per path sup error at dt, and median error ratio under dt halving
SUP_ERROR_MAX = 0.05
RATIO_WINDOW = (1.2, 1.7)


def sweep_checks(errors: np.ndarray, dt: float) -> tuple[dict, dict]:
    """Acceptance checks and report of one mechanism's sweep, with
        errors[i, level] the sup error of path i at dt / 2^level."""
    levels = errors.shape[1]
    sweep = convergence_sweep(
        lambda step: np.median(errors[:, round(math.log2(dt / step))]),
        dt, levels,
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = errors[:, 0] / errors[:, 1]
    finite = np.isfinite(ratios)
    median_ratio = float(np.median(ratios[finite]) if finite.any()
                         else np.inf)
    low, high = RATIO_WINDOW
    report = {
        "sup_error_max": float(errors[:, 0].max()),
        "median_ratio": median_ratio,
        "sweep": [{"dt": row.dt, "median_sup_error": row.metric,
                   "ratio": row.ratio} for row in sweep],
    }
    checks = {"sup_error": report["sup_error_max"] < SUP_ERROR_MAX,
              "ratio": low <= median_ratio <= high}
    return checks, report


def _mechanism_label(mechanism: dict, taken) -> str:
    label = "+".join(key for key in mechanism if key != "delta") or "zero"
    return label if label not in taken else f"{label}#{len(taken)}"


def lamperti_check(config: dict, seed: int,
                   workers: int = 1) -> ExperimentResult:
    mechanisms = config["mechanisms"]
    if not mechanisms:
        raise ValueError("lamperti-check needs at least one mechanism")
    specs = [MechanismSpec.from_json(m) for m in mechanisms]
    levels = config["levels"]
    if levels < 2:
        raise ValueError(f"the sweep needs at least 2 levels, got {levels}")
    rows = run_mc(
        PerReplicate(_lamperti_replicate, mechanisms, config["x"],
                     config["delta"], config["T"], config["dt"], levels,
                     config["n_power"], config["horizon_cap"]),
        config["reps"], seed, workers, config["batch"],
        desc="Solving Lamperti equations",
    )
    errors = rows.reshape(config["reps"], len(mechanisms), levels)

    checks, reports = {}, {}
    for j, (mechanism, m) in enumerate(zip(mechanisms, specs)):
        label = _mechanism_label(mechanism, reports)
        found, report = sweep_checks(errors[:, j], config["dt"])
        checks |= {f"{key}[{label}]": ok for key, ok in found.items()}
        reports[label] = report | {
            "mechanism": mechanism,
            "conservative": validate_conservative(m),
            "continuous_height": validate_cts_height(m),
        }
    # Coarsest level errors, mechanism by mechanism
    samples = errors[:, :, 0].T.reshape(-1)
    return _finish("lamperti-check", samples, summarize(samples), checks,
                   {"mechanisms": reports})


# Excursions and bridges

def _gs_replicate(rng, dt, dv, beta):
    return gs_functional(brownian_excursion(dt, rng), beta, dv)


def gs_identity(config: dict, seed: int, workers: int = 1) -> ExperimentResult:
    beta = config["beta"]
    samples = run_mc(
        PerReplicate(_gs_replicate, config["dt"], config["dv"], beta),
        config["reps"], seed, workers, config["batch"],
        desc="Sampling excursions",
    )
    if beta != 2:
        return _finish("gs-identity", samples, summarize(samples), {})
    summary = summarize(samples, 0.0, 1 / 12)
    checks = {"mean": _mean_ok(summary, 0.0),
              "var": 0.075 <= summary.var <= 0.092,
              "ks": summary.ks_p is not None and summary.ks_p > KS_LEVEL}
    return _finish("gs-identity", samples, summary, checks)


def _abeta_replicate(rng, dt, dv, beta):
    return math.sqrt(12) * gs_functional(reflected_bridge(dt, rng), beta, dv)


def abeta(config: dict, seed: int, workers: int = 1) -> ExperimentResult:
    beta = config["beta"]
    samples = run_mc(
        PerReplicate(_abeta_replicate, config["dt"], config["dv"], beta),
        config["reps"], seed, workers, config["batch"],
        desc="Sampling reflected bridges",
    )
    summary = summarize(samples)
    if beta != 2:
        return _finish("abeta", samples, summary, {})
    moments = [
        {"power": 2 * n - 1,
         "empirical": float(np.mean(samples ** (2 * n - 1))),
         "closed_form": abeta_moment(n)}
        for n in range(1, min(config["moments"], 7) + 1)
    ]
    target = abeta_moment(1)
    error = abs(summary.mean - target)
    checks = {"mean": error <= max(3 * summary.stderr, 0.05 * abs(target))}
    return _finish("abeta", samples, summary, checks, {"moments": moments})


def _bridge_block(rngs, x, a, c, f, dt, eps_stop, max_steps, scale):
    values, _ = bridge_functional_batch(x, a, c, f, dt, rngs, eps_stop,
                                        max_steps)
    return scale * values


def _bridge_run(config: dict, seed: int, workers: int, scale: float):
    f = function_from_json(config["f"])
    if not config["c"] > config["a"] ** 2 / 2:
        raise ValueError(f"need c > a^2 / 2, got a={config['a']}, "
                         f"c={config['c']}")
    block = partial(_bridge_block, x=config["x"], a=config["a"],
                    c=config["c"], f=f.to_json(), dt=config["dt"],
                    eps_stop=config["eps_stop"],
                    max_steps=config["max_steps"], scale=scale)
    samples = run_mc(block, config["reps"], seed, workers, config["batch"],
                     desc="Integrating bridge SDEs")
    mean = config["x"] + quad(lambda s: (1 - s) * f(s), 0, 1)[0]
    return samples, scale * mean, scale**2 * config["a"] ** 2 / 3


def bridge_normal(config: dict, seed: int,
                  workers: int = 1) -> ExperimentResult:
    samples, mean, var = _bridge_run(config, seed, workers, 1.0)
    summary = summarize(samples, mean, var)
    checks = {"mean": _mean_ok(summary, mean),
              "var": _var_ok(summary, var, 0.1)}
    return _finish("bridge-normal", samples, summary, checks,
                   {"target_mean": mean, "target_var": var})


def rbb(config: dict, seed: int, workers: int = 1) -> ExperimentResult:
    """Reflected bridge functional conditioned on its local time at 0,
        read off the bridge SDE as -1/4 of its functional."""
    samples, mean, var = _bridge_run(config, seed, workers, -0.25)
    summary = summarize(samples, mean, var)
    checks = {"mean": _mean_ok(summary, mean),
              "var": _var_ok(summary, var, 0.1)}
    return _finish("rbb", samples, summary, checks,
                   {"target_mean": mean, "target_var": var})


TRANSFORMS = {
    "bridge": (brownian_bridge, drift_transform_bridge),
    "excursion": (brownian_excursion, drift_transform_excursion),
}


def _drift_replicate(rng, x, transforms, dt, dv):
    """One drifted functional per transform, each on its own child
        stream."""
    values = []
    for child, transform in zip(rng.spawn(len(transforms)), transforms):
        sample, shift = TRANSFORMS[transform]
        values.append(gs_functional(shift(sample(dt, child), x), 2.0, dv))
    return values


def drift(config: dict, seed: int, workers: int = 1) -> ExperimentResult:
    transforms = config["transforms"]
    if not transforms or len(set(transforms)) != len(transforms):
        raise ValueError(f"transforms must be a non-empty list without "
                         f"repeats, got {transforms!r}")
    if unknown := [t for t in transforms if t not in TRANSFORMS]:
        raise ValueError(f"transforms must be among {sorted(TRANSFORMS)}, "
                         f"got {unknown}")
    x = config["x"]
    values = run_mc(
        PerReplicate(_drift_replicate, x, transforms, config["dt"],
                     config["dv"]),
        config["reps"], seed, workers, config["batch"],
        desc="Sampling drifted transforms",
    )
    mean, var = -x / 8, 1 / 12
    checks, per_transform = {}, {}
    for j, transform in enumerate(transforms):
        summary = summarize(values[:, j], mean, var)
        checks |= {f"mean[{transform}]": _mean_ok(summary, mean),
                   f"var[{transform}]": _var_ok(summary, var, 0.1)}
        per_transform[transform] = summary.to_json()
    # Every transform has the same limit law, so the pooled sample does too
    samples = values.T.reshape(-1)
    return _finish("drift", samples, summarize(samples, mean, var), checks,
                   {"transforms": per_transform})


# Gaussian functionals of the square-root SDE

def _gauss_block(rngs, x, c, f, g, t_grid, dt, T_cap):
    grid = np.concatenate(([0.0], t_grid))
    paths = euler_zsde_uc_batch(x, c, f, g, T_cap, dt, rngs,
                                c_target=float(grid[-1]))
    return np.stack([functional_gauss(ZC, c, grid).values[1:]
                     for ZC in paths])


def gauss_proc(config: dict, seed: int, workers: int = 1) -> ExperimentResult:
    t_grid = np.asarray(config["t_grid"], dtype=float)
    x, c = config["x"], config["c"]
    f = function_from_json(config["f"])
    g = function_from_json(config["g"])
    if not x > 0:
        raise ValueError(f"x must be > 0, got {x}")
    validate_diffusion(g, c, max(config["T_cap"], float(t_grid.max())))
    block = partial(_gauss_block, x=x, c=c, f=f.to_json(), g=g.to_json(),
                    t_grid=t_grid, dt=config["dt"], T_cap=config["T_cap"])
    paths = run_mc(block, config["reps"], seed, workers, config["batch"],
                   desc="Integrating square-root SDEs")
    mean, cov = analytic_mean_cov(x, c, f, g, t_grid)
    emp_mean = paths.mean(axis=0)
    stderr = paths.std(axis=0, ddof=1) / np.sqrt(paths.shape[0])
    report = compare_cov(empirical_cov(paths), cov, 0.1)

    samples = paths[:, -1]
    summary = summarize(samples, mean[-1], cov[-1, -1])
    checks = {"mean": bool(np.all(np.abs(emp_mean - mean) <= 3 * stderr)),
              "cov": report.passed}
    extras = {"t_grid": t_grid.tolist(), "mean": emp_mean.tolist(),
              "analytic_mean": mean.tolist(), "cov": report.to_json()}
    return _finish("gauss-proc", samples, summary, checks, extras)


# Left-height process

def _height_rk_block(rngs, x, delta, r, dt, dv, a_max, rk_level, cbi_dt,
                     horizon_cap):
    paths = left_height_excised_batch(x, delta, a_max, dt, rngs, horizon_cap)
    brownian = MechanismSpec(gaussian=0.5)
    rows = []
    for rng, hbar in zip(rngs, paths):
        crt = crt_functional(hbar, delta, r, dv)
        ell = occupation_histogram(hbar, dv).at(rk_level)
        ZC, _ = lamperti_from_levy(brownian, x, delta, rk_level, cbi_dt,
                                   rng.spawn(1)[0])
        rows.append((crt, ell, ZC.Z.values[-1]))
    return np.array(rows)


def height_rk(config: dict, seed: int, workers: int = 1) -> ExperimentResult:
    x, r = config["x"], config["r"]
    if config["rk_level"] >= config["a_max"]:
        raise ValueError("rk_level must lie below a_max")
    block = partial(_height_rk_block, x=x, delta=config["delta"], r=r,
                    dt=config["dt"], dv=config["dv"], a_max=config["a_max"],
                    rk_level=config["rk_level"], cbi_dt=config["cbi_dt"],
                    horizon_cap=config["horizon_cap"])
    rows = run_mc(block, config["reps"], seed, workers, config["batch"],
                  desc="Sampling left-height paths")
    samples = rows[:, 0]
    mean, var = -x * r, r**3 / 3
    summary = summarize(samples, mean, var)
    rk_stat, rk_p = ks_two_sample(rows[:, 1], rows[:, 2])
    checks = {"mean": _mean_ok(summary, mean),
              "var": _var_ok(summary, var, 0.15),
              "ray_knight": rk_p > KS_LEVEL}
    extras = {"ray_knight_ks_stat": rk_stat, "ray_knight_ks_p": rk_p,
              "occupation_mean": float(rows[:, 1].mean()),
              "cbi_mean": float(rows[:, 2].mean())}
    return _finish("height-rk", samples, summary, checks, extras)


def _jeulin_replicate(rng, dt, dv, t):
    e = brownian_excursion(dt, rng)
    _, H_inv = jeulin_input(e, dv)
    return 0.5 * occupation_histogram(e, dv).at(H_inv.at(t))


def jeulin(config: dict, seed: int, workers: int = 1) -> ExperimentResult:
    t = config["t"]
    if not 0 < t < 1:
        raise ValueError(f"t must lie in (0, 1), got {t}")
    samples = run_mc(
        PerReplicate(_jeulin_replicate, config["dt"], config["dv"], t),
        config["reps"], seed, workers, config["batch"],
        desc="Sampling excursions",
    )
    # e_t has the Maxwell law with scale sqrt(t (1 - t))
    reference = stats.maxwell(scale=math.sqrt(t * (1 - t)))
    ks_stat, ks_p = ks_reference(samples, reference.cdf)
    summary = replace(summarize(samples), ks_stat=ks_stat, ks_p=ks_p)
    return _finish("jeulin", samples, summary, {"ks": ks_p > KS_LEVEL},
                   {"reference_mean": float(reference.mean())})


EXPERIMENTS: dict[str, Callable[[dict, int, int], ExperimentResult]] = {
    "forest-clt": forest_clt,
    "gwi-process": gwi_process,
    "lamperti-check": lamperti_check,
    "gs-identity": gs_identity,
    "abeta": abeta,
    "rbb": rbb,
    "drift": drift,
    "gauss-proc": gauss_proc,
    "bridge-normal": bridge_normal,
    "height-rk": height_rk,
    "jeulin": jeulin,
}
