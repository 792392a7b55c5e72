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

"""Euler schemes for the square-root SDEs driven by C_v = int_0^v Z,
their Bessel type time changes and the Gaussian functionals read off
them.

The Z equations use full truncation: drift and diffusion see max(Z, 0)
and the emitted path is max(Z, 0). The Y equations keep positivity by
reflecting the explicit part of the step at 0 and taking the c/Y drift
implicitly, which keeps a step from landing next to the singularity.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
import logging
import numpy as np
from scipy.integrate import quad
from lforest.algorithm.lamperti import inverse_time_change
from lforest.algorithm.paths import (
    SampledPath, CoupledZC, HorizonExceeded, SchemeDiverged, PathRejected,
    NoiseStream, uniform_grid_step, NOISE_CHUNK, TOL
)

logger = logging.getLogger(__name__)

BLOW_UP = 1e9
EPS_STOP = 1e-4
MAX_STEPS = 10**8


class FunctionSpec(ABC):
    """A deterministic coefficient f(t) or g(t)."""

    @abstractmethod
    def __call__(self, t):
        ...

    @abstractmethod
    def to_json(self) -> dict:
        ...

    def _sample_grid(self, horizon: float) -> np.ndarray:
        return np.linspace(0.0, horizon, 2001)

    def bounds(self, horizon: float) -> tuple[float, float]:
        values = np.asarray(self(self._sample_grid(horizon)))
        return float(values.min()), float(values.max())

    def sup_sq(self, horizon: float) -> float:
        values = np.asarray(self(self._sample_grid(horizon)))
        return float(np.max(values**2))

    def lipschitz_sq(self, horizon: float) -> float:
        """Lipschitz constant of g^2 on [0, horizon], by finite
            differences on the sample grid."""
        t = self._sample_grid(horizon)
        sq = np.asarray(self(t)) ** 2
        return float(np.max(np.abs(np.diff(sq)) / np.diff(t)))


@dataclass(frozen=True)
class Constant(FunctionSpec):
    c: float

    def __call__(self, t):
        return np.full(np.shape(t), float(self.c))[()]

    def lipschitz_sq(self, horizon):
        return 0.0

    def to_json(self):
        return {"kind": "const", "c": self.c}


@dataclass(frozen=True)
class Polynomial(FunctionSpec):
    """sum_i coefficients[i] t^i"""

    coefficients: tuple[float, ...]

    def __post_init__(self):
        if len(self.coefficients) == 0:
            raise ValueError("a polynomial needs at least one coefficient")
        object.__setattr__(self, "coefficients",
                           tuple(float(a) for a in self.coefficients))

    def __call__(self, t):
        return np.polynomial.polynomial.polyval(t, self.coefficients)

    def to_json(self):
        return {"kind": "poly", "coefficients": list(self.coefficients)}


@dataclass(frozen=True)
class Sinusoid(FunctionSpec):
    """a + b sin(omega t)"""

    a: float
    b: float
    omega: float = 1.0

    def __call__(self, t):
        return self.a + self.b * np.sin(self.omega * np.asarray(t))

    def lipschitz_sq(self, horizon):
        return 2 * (abs(self.a) + abs(self.b)) * abs(self.b * self.omega)

    def to_json(self):
        return {"kind": "sin", "a": self.a, "b": self.b, "omega": self.omega}


@dataclass(frozen=True)
class Table(FunctionSpec):
    """Linear interpolation of values over grid, constant outside."""

    grid: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        grid = tuple(float(x) for x in self.grid)
        values = tuple(float(v) for v in self.values)
        if len(grid) < 2 or len(grid) != len(values):
            raise ValueError("a table needs >= 2 matching grid/value pairs")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("table grid must be increasing")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        return np.interp(t, self.grid, self.values)

    def _sample_grid(self, horizon):
        knots = [x for x in self.grid if 0 <= x <= horizon]
        return np.union1d(super()._sample_grid(horizon), knots)

    def lipschitz_sq(self, horizon):
        sq = np.array(self.values) ** 2
        return float(np.max(np.abs(np.diff(sq)) / np.diff(self.grid)))

    def to_json(self):
        return {"kind": "table", "grid": list(self.grid),
                "values": list(self.values)}


def function_from_json(data) -> FunctionSpec:
    """Parse {"kind": "const", "c": 1.0} and friends. Bare numbers are
        read as constants."""
    if isinstance(data, FunctionSpec):
        return data
    if isinstance(data, (int, float)):
        return Constant(float(data))
    if not isinstance(data, dict) or "kind" not in data:
        raise ValueError(f"function spec must be an object with a kind: "
                         f"{data!r}")
    match data["kind"]:
        case "const":
            return Constant(float(data["c"]))
        case "poly":
            return Polynomial(tuple(data["coefficients"]))
        case "sin":
            return Sinusoid(float(data["a"]), float(data["b"]),
                            float(data.get("omega", 1.0)))
        case "table":
            return Table(tuple(data["grid"]), tuple(data["values"]))
    raise ValueError(f"unknown function kind {data['kind']!r}")


def validate_diffusion(g: FunctionSpec, c: float, horizon: float):
    """Check 0 < eps <= g <= M, g^2 Lipschitz and c >= sup g^2 / 2
        on [0, horizon]."""
    low, high = g.bounds(horizon)
    if low <= 0:
        raise ValueError(f"g must stay positive on [0, {horizon}], "
                         f"min is {low:.6g}")
    if not np.isfinite(high) or not np.isfinite(g.lipschitz_sq(horizon)):
        raise ValueError("g must be bounded with g^2 Lipschitz")
    if c < 0.5 * g.sup_sq(horizon) - TOL:
        raise ValueError(
            f"c = {c} is below sup g^2 / 2 = {0.5 * g.sup_sq(horizon):.6g}"
        )


@dataclass
class _KernelRun:
    Z: list[np.ndarray] | None
    C: list[np.ndarray] | None
    steps: np.ndarray
    c_end: np.ndarray
    z_end: np.ndarray
    functional: np.ndarray | None


def _run_z_kernel(rngs, x, dt, drift, diffusion, stop, max_steps,
                  record=True, integrand=None) -> _KernelRun:
    """Full truncation Euler for dZ = diffusion dW + drift dv with
        C' = Z by trapezoid, one row per generator, until stop fires."""
    n_paths = len(rngs)
    noise = NoiseStream(rngs)
    Z = np.full(n_paths, float(x))
    C = np.zeros(n_paths)
    active = np.ones(n_paths, dtype=bool)
    steps = np.zeros(n_paths, dtype=np.int64)
    sqrt_dt = np.sqrt(dt)

    total = np.zeros(n_paths) if integrand else None
    previous = integrand(np.maximum(Z, 0.0), 0.0) if integrand else None
    z_chunks, c_chunks = [np.maximum(Z, 0.0)[:, None]], [C[:, None]]
    z_buf = np.empty((n_paths, NOISE_CHUNK))
    c_buf = np.empty((n_paths, NOISE_CHUNK))
    pos = 0

    step = 0
    while active.any():
        if step >= max_steps:
            raise SchemeDiverged(
                f"C stalled at {C[active].min():.6g} after {max_steps} "
                f"steps", index=int(np.flatnonzero(active)[0]),
            )
        Zp = np.maximum(Z, 0.0)
        dW = noise.next(active) * sqrt_dt
        with np.errstate(divide="ignore", invalid="ignore"):
            Z_new = Z + drift(Zp, C) * dt + diffusion(Zp, C) * dW
        Z_new = np.where(active, Z_new, Z)
        if (bad := active & ~(np.abs(Z_new) <= BLOW_UP)).any():
            raise SchemeDiverged(
                f"|Z| exceeded {BLOW_UP:g} at step {step + 1}",
                index=int(np.flatnonzero(bad)[0]),
            )
        Zp_new = np.maximum(Z_new, 0.0)
        C = np.where(active, C + 0.5 * (Zp + Zp_new) * dt, C)
        step += 1
        steps[active] = step
        if integrand:
            term = integrand(Zp_new, step * dt)
            total += np.where(active, 0.5 * (previous + term) * dt, 0.0)
            previous = term
        Z = Z_new

        if record:
            z_buf[:, pos] = Zp_new
            c_buf[:, pos] = C
            pos += 1
            if pos == NOISE_CHUNK:
                z_chunks.append(z_buf.copy())
                c_chunks.append(c_buf.copy())
                pos = 0
        active &= ~stop(Z, C, step)

    Z_paths = C_paths = None
    if record:
        z_all = np.concatenate(z_chunks + [z_buf[:, :pos]], axis=1)
        c_all = np.concatenate(c_chunks + [c_buf[:, :pos]], axis=1)
        Z_paths = [z_all[p, :steps[p] + 1] for p in range(n_paths)]
        C_paths = [c_all[p, :steps[p] + 1] for p in range(n_paths)]
    return _KernelRun(Z_paths, C_paths, steps, C, np.maximum(Z, 0.0), total)


def _to_coupled(Z: np.ndarray, C: np.ndarray, dt: float,
                diagnostics: dict) -> CoupledZC:
    C_path = SampledPath(dt, C)
    n_r = max(int(np.ceil(C[-1] / dt - TOL)), 1)
    return CoupledZC(
        Z=SampledPath(dt, Z), C=C_path,
        V=inverse_time_change(C_path, np.arange(n_r) * dt),
        diagnostics=diagnostics,
    )


def euler_zsde_uc(
    x: float, c: float, f, g, T: float, dt: float, rng: np.random.Generator,
    c_target: float | None = None, allow_unsupported: bool = False,
    max_steps: int = MAX_STEPS,
) -> CoupledZC:
    """dZ = g(C) sqrt(Z) dW + (c + f(C) Z) dv on [0, T], stopping
        early once C >= c_target when one is given."""
    return euler_zsde_uc_batch(x, c, f, g, T, dt, [rng], c_target,
                               allow_unsupported, max_steps)[0]


def euler_zsde_uc_batch(
    x: float, c: float, f, g, T: float, dt: float,
    rngs: list[np.random.Generator], c_target: float | None = None,
    allow_unsupported: bool = False, max_steps: int = MAX_STEPS,
) -> list[CoupledZC]:
    f, g = function_from_json(f), function_from_json(g)
    if x < 0 or (x == 0 and not allow_unsupported):
        raise ValueError(
            f"x must be > 0 (x = 0 is outside the supported regime and "
            f"needs allow_unsupported), got {x}"
        )
    if not dt > 0 or T < dt:
        raise ValueError(f"need 0 < dt <= T, got dt={dt}, T={T}")
    validate_diffusion(g, c, max(T, c_target or 0.0))

    n_steps = int(round(T / dt))
    if c_target is None:
        def stop(Z, C, step):
            return np.full(Z.shape, step >= n_steps)
    else:
        # T caps the work when C is slow to reach its target
        def stop(Z, C, step):
            return (C >= c_target) | (step >= n_steps)

    run = _run_z_kernel(
        rngs, x, dt,
        drift=lambda Zp, C: c + f(C) * Zp,
        diffusion=lambda Zp, C: g(C) * np.sqrt(Zp),
        stop=stop, max_steps=max_steps,
    )
    return [
        _to_coupled(run.Z[p], run.C[p], dt, {
            "steps": int(run.steps[p]), "c_end": float(run.c_end[p]),
            "unsupported_regime": x == 0,
        })
        for p in range(len(rngs))
    ]


def _bridge_parameters(x, a, c, f, eps_stop):
    f = function_from_json(f)
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    if not c > a**2 / 2:
        raise ValueError(f"need c > a^2 / 2, got a={a}, c={c}")
    if not 0 < eps_stop < 1:
        raise ValueError(f"eps_stop must lie in (0, 1), got {eps_stop}")
    return f


def bridge_stopped(Z: np.ndarray, C: np.ndarray,
                   eps_stop: float) -> np.ndarray:
    """Stop rule of the bridge equation: C >= 1 - eps_stop, or Z hit 0
        with C already past 1 - 2 eps_stop."""
    Z, C = np.asarray(Z), np.asarray(C)
    return (C >= 1 - eps_stop) | ((Z <= 0) & (C > 1 - 2 * eps_stop))


def _bridge_kernel(x, a, c, f, dt, rngs, eps_stop, max_steps, record,
                   integrand=None) -> _KernelRun:
    run = _run_z_kernel(
        rngs, x, dt,
        drift=lambda Zp, C: (c + f(C) * Zp
                             - Zp**2 / np.maximum(1 - C, eps_stop)),
        diffusion=lambda Zp, C: a * np.sqrt(Zp),
        stop=lambda Z, C, step: bridge_stopped(Z, C, eps_stop),
        max_steps=max_steps, record=record, integrand=integrand,
    )
    np.minimum(run.c_end, 1.0, out=run.c_end)
    if record:
        for C in run.C:
            np.minimum(C, 1.0, out=C)
    return run


def euler_zsde_bridge(
    x: float, a: float, c: float, f, dt: float, rng: np.random.Generator,
    eps_stop: float = EPS_STOP, max_steps: int = MAX_STEPS,
) -> CoupledZC:
    """dZ = a sqrt(Z) dW + (c + f(C) Z - Z^2 / (1 - C)) dv, run until
        bridge_stopped fires."""
    f = _bridge_parameters(x, a, c, f, eps_stop)
    run = _bridge_kernel(x, a, c, f, dt, [rng], eps_stop, max_steps, True)
    return _to_coupled(run.Z[0], run.C[0], dt, {
        "steps": int(run.steps[0]), "c_end": float(run.c_end[0]),
        "z_end": float(run.z_end[0]), "complete": True,
    })


def bridge_functional_batch(
    x: float, a: float, c: float, f, dt: float,
    rngs: list[np.random.Generator], eps_stop: float = EPS_STOP,
    max_steps: int = MAX_STEPS,
) -> tuple[np.ndarray, dict]:
    """functional_bridge of euler_zsde_bridge paths, integrated while
        stepping so no path is stored."""
    f = _bridge_parameters(x, a, c, f, eps_stop)
    run = _bridge_kernel(
        x, a, c, f, dt, rngs, eps_stop, max_steps, record=False,
        integrand=lambda Zp, v: 2 * Zp**2 - c * v * Zp,
    )
    return run.functional, {"steps": run.steps, "c_end": run.c_end,
                            "z_end": run.z_end}


def _implicit_step(b: np.ndarray, c: float, dt: float) -> np.ndarray:
    """Positive root of y - c dt / y = b."""
    return 0.5 * (b + np.sqrt(b**2 + 4 * c * dt))


def _y_kernel(rngs, x, a_of_t, c, f, dt, n_steps, bridge, dimension=None):
    n_paths = len(rngs)
    Y = np.zeros((n_paths, n_steps + 1))
    Y[:, 0] = x
    start = 0
    if bridge and x == 0 and n_steps > 1:
        # Exact first step: a^2 t (1 - t) chi^2_d at t = dt
        chi2 = np.array([rng.chisquare(dimension) for rng in rngs])
        Y[:, 1] = a_of_t(0.0) * np.sqrt(dt * (1 - dt) * chi2)
        start = 1
    noise = NoiseStream(rngs)
    active = np.ones(n_paths, dtype=bool)
    sqrt_dt = np.sqrt(dt)
    last = n_steps - 1 if bridge else n_steps
    for i in range(start, last):
        t = i * dt
        drift = f(t) - (Y[:, i] / (1 - t) if bridge else 0.0)
        b = np.abs(Y[:, i] + drift * dt
                   + a_of_t(t) * sqrt_dt * noise.next(active))
        Y[:, i + 1] = _implicit_step(b, c, dt)
    if bridge:
        Y[:, -1] = 0.0
    return Y


def bessel_bridge(a: float, c: float, f, x: float, dt: float,
                  rng: np.random.Generator) -> SampledPath:
    """dY = a dB + (c / Y + f(t) - Y / (1 - t)) dt on [0, 1], Y_0 = x,
        Y_1 = 0. With f = 0 this is a times a Bessel bridge of dimension
        2c / a^2 + 1."""
    return bessel_bridge_batch(a, c, f, x, dt, [rng])[0]


def bessel_bridge_batch(a: float, c: float, f, x: float, dt: float,
                        rngs: list[np.random.Generator]) -> list[SampledPath]:
    f = function_from_json(f)
    if not a > 0 or c < a**2 / 2 - TOL:
        raise ValueError(f"need a > 0 and c >= a^2 / 2, got a={a}, c={c}")
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    n_steps = int(round(1 / dt))
    if n_steps < 1 or abs(n_steps * dt - 1) > 1e-9:
        raise ValueError(f"dt = {dt} does not divide [0, 1]")
    Y = _y_kernel(rngs, x, lambda t: a, c, f, dt, n_steps, bridge=True,
                  dimension=2 * c / a**2 + 1)
    return [SampledPath(dt, row) for row in Y]


def euler_ysde_uc(x: float, c: float, f, g, T: float, dt: float,
                  rng: np.random.Generator) -> SampledPath:
    """dY = g(t) dB + (c / Y + f(t)) dt, the time-changed form of the
        unconditioned Z equation."""
    return euler_ysde_uc_batch(x, c, f, g, T, dt, [rng])[0]


def euler_ysde_uc_batch(x: float, c: float, f, g, T: float, dt: float,
                        rngs: list[np.random.Generator]) -> list[SampledPath]:
    f, g = function_from_json(f), function_from_json(g)
    if not x > 0:
        raise ValueError(f"x must be > 0, got {x}")
    validate_diffusion(g, c, T)
    n_steps = int(round(T / dt))
    Y = _y_kernel(rngs, x, g, c, f, dt, n_steps, bridge=False)
    return [SampledPath(dt, row) for row in Y]


def time_change_y_to_z(Y: SampledPath, dv: float | None = None) -> CoupledZC:
    """Z_v = Y(tau_v), with tau the inverse of V_t = int_0^t 1/Y_s ds.
        Then C = tau."""
    y = Y.values
    dt = Y.dt
    if y.size < 3:
        raise ValueError("need at least two grid cells")
    if np.any(y[1:-1] <= 0):
        bad = int(np.flatnonzero(y[1:-1] <= 0)[0]) + 1
        raise PathRejected(f"Y has an interior zero at t = {bad * dt:.6g}")
    if y[0] < 0 or y[-1] < 0:
        raise PathRejected("Y must be non-negative")

    with np.errstate(divide="ignore"):
        inv = 1.0 / y
    cells = 0.5 * (inv[1:] + inv[:-1]) * dt
    # Near a zero endpoint Y grows like sqrt(s), so the cell integrates
    # to 2 dt / Y at the inner point.
    if y[0] == 0:
        cells[0] = 2 * dt / y[1]
    if y[-1] == 0:
        cells[-1] = 2 * dt / y[-2]
    V = np.concatenate(([0.0], np.cumsum(cells)))

    dv = dt if dv is None else dv
    v = np.arange(int(np.floor(V[-1] / dv + TOL)) + 1) * dv
    tau = np.interp(v, V, Y.times)
    Z = np.interp(tau, Y.times, y)
    return CoupledZC(
        Z=SampledPath(dv, Z), C=SampledPath(dv, tau), V=SampledPath(dt, V),
        diagnostics={"v_end": float(V[-1]), "c_end": float(tau[-1])},
    )


def time_change_z_to_y(ZC: CoupledZC, dt: float | None = None,
                       t_end: float | None = None) -> SampledPath:
    """Y_t = Z(V_t) with V the inverse of C. Times past the end of C
        read the last value of Z."""
    dt = ZC.Z.dt if dt is None else dt
    t_end = ZC.c_end if t_end is None else t_end
    t = np.arange(int(np.floor(t_end / dt + TOL)) + 1) * dt
    C = ZC.C.values
    if np.any(np.diff(C) <= 0):
        raise PathRejected("C must be strictly increasing")
    V = np.interp(t, C, ZC.Z.times, right=ZC.Z.horizon)
    return SampledPath(dt, np.interp(V, ZC.Z.times, ZC.Z.values))


def functional_gauss(ZC: CoupledZC, c: float, t_grid) -> SampledPath:
    """X_t = int_0^{V_t} (Z_v - c v) Z_v dv on t_grid."""
    dt = uniform_grid_step(t_grid)
    V = inverse_time_change(ZC.C, t_grid).values
    if not np.all(np.isfinite(V)):
        raise HorizonExceeded(
            f"t_grid reaches {np.max(t_grid)}, beyond C_end = "
            f"{ZC.c_end:.6g}"
        )
    v = ZC.Z.times
    z = ZC.Z.values
    integrand = (z - c * v) * z
    G = np.concatenate(([0.0], np.cumsum(
        0.5 * (integrand[1:] + integrand[:-1]) * ZC.Z.dt)))
    return SampledPath(dt, np.interp(V, v, G))


def functional_bridge(ZC: CoupledZC, c: float) -> float:
    """int_0^{v_end} (2 Z_v^2 - c v Z_v) dv over a completed bridge run."""
    if not ZC.diagnostics.get("complete", False):
        raise ValueError("bridge path did not run to completion")
    v = ZC.Z.times
    z = ZC.Z.values
    return SampledPath(ZC.Z.dt, 2 * z**2 - c * v * z).integral()


def analytic_mean_cov(x: float, c: float, f, g,
                      t_grid) -> tuple[np.ndarray, np.ndarray]:
    """mu_t = x t + int_0^t (t - s) f(s) ds and
        Gamma(t1, t2) = int_0^{t1 ^ t2} (t2 - s)(t1 - s) g^2(s) ds."""
    f, g = function_from_json(f), function_from_json(g)
    t = np.asarray(t_grid, dtype=float)
    mean = np.array([
        x * ti + quad(lambda s: (ti - s) * f(s), 0, ti)[0] for ti in t
    ])
    cov = np.empty((t.size, t.size))
    for i, t1 in enumerate(t):
        for j, t2 in enumerate(t[i:], i):
            value = quad(lambda s: (t2 - s) * (t1 - s) * g(s) ** 2,
                         0, min(t1, t2))[0]
            cov[i, j] = cov[j, i] = value
    return mean, cov


def brownian_integral_law(x: float, drift: float, sigma2: float,
                          t_grid) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of x t + int_0^t X_u du for X a Brownian
        motion with the given drift and variance rate."""
    t = np.asarray(t_grid, dtype=float)
    mean = x * t + drift * t**2 / 2
    lo = np.minimum.outer(t, t)
    hi = np.maximum.outer(t, t)
    cov = sigma2 * (lo**2 * hi / 2 - lo**3 / 6)
    return mean, cov
