"""Calibration of the automaton against measured exit times.

The pipeline follows three steps:

1. A single agent walking the 0.9 m corridor gives the mean step count
   ``N(beta)``.  It is fitted by ``a + b / beta**c``, and the time step follows
   from the 8 s a fully motivated walker needs for the 9.6 m:
   ``dt = 8 / N(beta)``.
2. A plain grid search over ``(beta, p_ex)`` minimizes the root of summed
   squared deviations between simulated mean exit times and the three
   measured runs.  All grid points share one master seed (common random
   numbers), which keeps the surface smooth enough to read off a minimum.
3. With ``beta``, ``p_ex`` and ``dt`` fixed, a 1-D search over ``mu`` matches
   the exit times of the less motivated runs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares, minimize_scalar

from .ca import SimParams, monte_carlo, rate_table_for
from .ca import kernel
from .ca.engine import run_seeds
from .geometry import build_corridor

log = logging.getLogger(__name__)

CORRIDOR_LENGTH_M = 9.6
EXIT_WIDTH_M = 0.9
CELL_SIZE_M = 0.3
TRAVERSAL_S = 8.0          # a fully motivated walker covers the corridor in 8 s (1.2 m/s)
V_MAX = 1.2
NBAR_PEX = 1.1             # exit rate used while measuring the single-agent curve
REFERENCE_NBAR = (63.528, 244.082, 1.38148)
NBAR_BETAS = (0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0)

# (agents, corridor width in m) of the three calibration runs
SCENARIOS = ((63, 0.9), (67, 3.3), (57, 5.7))
TARGETS_MU1 = (53.0, 60.0, 55.0)
TARGETS_MU0 = (64.0, 68.0, 57.0)

BETA_RANGE = (0.5, 10.0)
PEX_RANGE = (0.55, 1.65)


@dataclass(frozen=True)
class FitResult:
    a: float
    b: float
    c: float
    residual: float            # RMS misfit in steps (in standard errors when weighted)
    converged: bool = True
    message: str = ""

    def __call__(self, beta):
        return self.a + self.b / np.asarray(beta, dtype=float) ** self.c

    def as_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c, "residual": self.residual,
                "converged": self.converged, "message": self.message}


REFERENCE_FIT = FitResult(*REFERENCE_NBAR, residual=float("nan"), message="reference coefficients")


@dataclass
class NbarMeasurement:
    beta: float
    mean: float
    sem: float
    dt: float          # time step used for the exit probability
    n_runs: int


def _corridor(width):
    return build_corridor(width, CORRIDOR_LENGTH_M, EXIT_WIDTH_M, CELL_SIZE_M)[1]


def _single_agent_steps(grid, params: SimParams, n_runs: int, start: int) -> np.ndarray:
    table = rate_table_for(grid, params)
    out = np.zeros(n_runs, np.int64)
    kernel.single_agent_kernel(run_seeds(params.seed, n_runs), start, table.target, table.rate,
                               table.cum, params.exit_probability, 10**6, out)
    if (out < 0).any():
        log.warning("%d single-agent runs hit the step cap", int((out < 0).sum()))
        out = out[out >= 0]
    return out


def measure_nbar(beta: float, p_ex: float = NBAR_PEX, n_runs: int = 2000, *,
                 width: float = EXIT_WIDTH_M, mu: float = 1.0, dt: float | None = None,
                 seed: int = 0, iterations: int = 4) -> NbarMeasurement:
    """Mean number of steps a lone agent needs from the far row to outside.

    The agent starts in the centered cell of the row farthest from the exit.
    Leaving takes ``p_ex * dt`` per step, so the count depends on ``dt``.  If
    ``dt`` is not given it is made self-consistent with the anchor
    ``dt = 8 / N``, by fixed-point iteration on common random numbers.  The
    map contracts by a factor of about ``1 / (8 p_ex)`` per round.
    """
    grid = _corridor(width)
    start = (grid.ny - 1) * grid.nx + grid.nx // 2
    base = SimParams(beta=beta, mu=mu, p_ex=p_ex, dt=0.1, seed=seed)
    fixed = dt is not None
    dt = dt if fixed else TRAVERSAL_S / REFERENCE_FIT(beta)
    for _ in range(1 if fixed else iterations):
        steps = _single_agent_steps(grid, base.replace(dt=dt), n_runs, start)
        mean = float(steps.mean())
        if not fixed:
            dt = TRAVERSAL_S / mean
    if not fixed:
        steps = _single_agent_steps(grid, base.replace(dt=dt), n_runs, start)
        mean = float(steps.mean())
    sem = float(steps.std(ddof=1) / np.sqrt(len(steps))) if len(steps) > 1 else 0.0
    return NbarMeasurement(beta, mean, sem, dt, len(steps))


def fit_nbar(betas, nbars, p0=None, sigma=None) -> FitResult:
    """Least-squares fit of ``a + b / beta**c``.

    ``sigma``, when given, holds the standard errors of the samples and turns
    the fit into weighted least squares; Monte Carlo samples at small ``beta``
    are far noisier and would otherwise dominate.  The initial guess is
    ``(min N, max N - min N, 1)`` unless ``p0`` is given, so the result is a
    deterministic function of the samples.
    """
    betas = np.asarray(betas, dtype=float)
    nbars = np.asarray(nbars, dtype=float)
    if len(betas) < 4 or len(np.unique(betas)) != len(betas):
        raise ValueError("need at least four samples at distinct beta")
    weight = np.ones_like(nbars) if sigma is None else np.asarray(sigma, dtype=float)
    if weight.shape != nbars.shape or not np.all(weight > 0):
        raise ValueError("sigma must be positive, one value per sample")
    if p0 is None:
        p0 = (nbars.min(), nbars.max() - nbars.min(), 1.0)

    def resid(x):
        return (x[0] + x[1] / betas ** x[2] - nbars) / weight

    sol = least_squares(resid, p0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                        max_nfev=20_000)
    a, b, c = sol.x
    rms = float(np.sqrt(np.mean(sol.fun ** 2)))
    ok = bool(sol.success)
    if not ok:
        log.warning("N-bar fit did not converge: %s", sol.message)
    return FitResult(float(a), float(b), float(c), rms, ok, str(sol.message))


def measured_fit(betas=NBAR_BETAS, n_runs: int = 2000, *, seed: int = 0,
                 p_ex: float = NBAR_PEX) -> tuple[FitResult, list[NbarMeasurement]]:
    """Measure ``N`` at each ``beta`` and fit the curve, weighting by the standard errors."""
    ms = [measure_nbar(b, p_ex, n_runs, seed=seed) for b in betas]
    fit = fit_nbar([m.beta for m in ms], [m.mean for m in ms], sigma=[m.sem for m in ms])
    return fit, ms


def derive_dt(beta: float, fit: FitResult = REFERENCE_FIT) -> float:
    """Time step in seconds: ``8 s / N_fit(beta)``."""
    n = float(fit(beta))
    if not n > 0:
        raise ValueError(f"fitted step count {n} at beta={beta} is not positive")
    return TRAVERSAL_S / n


def implied_speed(mu: float) -> float:
    """Free walking speed at motivation ``mu``: 1.2 m/s scaled by the hop probability ratio."""
    return V_MAX * 2.0 / (3.0 - mu)


@dataclass
class ZResult:
    Z: float
    means: np.ndarray
    sems: np.ndarray
    targets: tuple
    n_incomplete: int = 0

    @property
    def incomplete(self) -> bool:
        return self.n_incomplete > 0


def objective_from_means(means, targets=TARGETS_MU1) -> float:
    """``sqrt(sum (T_i - target_i)^2)``."""
    d = np.asarray(means, dtype=float) - np.asarray(targets, dtype=float)
    return float(np.sqrt(np.sum(d * d)))


def objective_Z(beta: float, p_ex: float, dt: float, *, mu: float = 1.0,
                targets=TARGETS_MU1, n_runs: int = 500, seed: int = 0,
                threads: int | None = None, scenarios=SCENARIOS) -> ZResult:
    """Exit-time misfit over the three calibration runs."""
    means, sems, bad = [], [], 0
    for n, width in scenarios:
        params = SimParams(beta=beta, mu=mu, p_ex=p_ex, dt=dt, n_agents=n, seed=seed)
        ens = monte_carlo(_corridor(width), params, n_runs=n_runs, threads=threads)
        means.append(ens.mean_exit_time)
        sems.append(ens.sem_exit_time)
        bad += ens.n_incomplete
    if bad:
        log.warning("%d runs incomplete while evaluating Z(%.3g, %.3g)", bad, beta, p_ex)
    return ZResult(objective_from_means(means, targets), np.array(means), np.array(sems),
                   tuple(targets), bad)


@dataclass
class CalibrationResult:
    beta_min: float
    pex_min: float
    Z_value: float
    dt_min: float
    betas: np.ndarray
    pexs: np.ndarray
    surface: np.ndarray                 # Z, beta along rows
    means: np.ndarray                   # (n_beta, n_pex, 3) mean exit times
    fit: FitResult
    n_runs: int
    seed: int
    mu0: float | None = None
    mu0_Z: float | None = None
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "beta_min": self.beta_min, "pex_min": self.pex_min, "Z_value": self.Z_value,
            "dt_min": self.dt_min, "betas": self.betas.tolist(), "pexs": self.pexs.tolist(),
            "n_runs": self.n_runs, "seed": self.seed, "fit": self.fit.as_dict(),
            "mu0": self.mu0, "mu0_Z": self.mu0_Z, "targets_mu1": list(TARGETS_MU1),
            "targets_mu0": list(TARGETS_MU0), **self.meta,
        }


def default_grid(resolution=(20, 12)) -> tuple[np.ndarray, np.ndarray]:
    nb, npx = resolution
    if nb < 5 or npx < 5:
        raise ValueError("use at least five points per axis")
    return np.linspace(*BETA_RANGE, nb), np.linspace(*PEX_RANGE, npx)


def grid_search(betas=None, pexs=None, *, fit: FitResult = REFERENCE_FIT, n_runs: int = 500,
                seed: int = 0, threads: int | None = None, targets=TARGETS_MU1,
                progress=None) -> CalibrationResult:
    """Evaluate ``Z`` on the full grid and return the argmin.

    Each ``beta`` gets its own ``dt`` from ``fit``; every point reuses the same
    per-run seeds.  ``progress``, if given, is called with ``(done, total)``.
    """
    if betas is None or pexs is None:
        b0, p0 = default_grid()
        betas = b0 if betas is None else betas
        pexs = p0 if pexs is None else pexs
    betas = np.asarray(betas, dtype=float)
    pexs = np.asarray(pexs, dtype=float)
    if len(betas) < 5 or len(pexs) < 5:
        raise ValueError("use at least five points per axis")
    surface = np.empty((len(betas), len(pexs)))
    means = np.empty((len(betas), len(pexs), len(SCENARIOS)))
    total = surface.size
    for i, beta in enumerate(betas):
        dt = derive_dt(beta, fit)
        for k, p_ex in enumerate(pexs):
            z = objective_Z(beta, p_ex, dt, targets=targets, n_runs=n_runs, seed=seed,
                            threads=threads)
            surface[i, k] = z.Z
            means[i, k] = z.means
            if progress:
                progress(i * len(pexs) + k + 1, total)
    i, k = np.unravel_index(np.argmin(surface), surface.shape)
    return CalibrationResult(float(betas[i]), float(pexs[k]), float(surface[i, k]),
                             derive_dt(betas[i], fit), betas, pexs, surface, means, fit,
                             n_runs, seed)


@dataclass
class Mu0Result:
    mu0: float
    Z: float
    mus: np.ndarray                 # coarse scan
    Zs: np.ndarray
    means: np.ndarray               # exit times at mu0


def estimate_mu0(beta: float, p_ex: float, dt: float, *, targets=TARGETS_MU0,
                 bounds=(-5.0, 1.0), coarse_step: float = 0.5, xatol: float = 0.02,
                 n_runs: int = 500, seed: int = 0, threads: int | None = None) -> Mu0Result:
    """1-D search for the motivation that reproduces ``targets``.

    A coarse scan over ``[-5, 1)`` brackets the minimum, and a bounded scalar
    search refines it.  Common random numbers keep the objective nearly smooth
    in ``mu``.
    """
    lo, hi = bounds
    mus = np.arange(lo, hi, coarse_step)

    def z_at(mu):
        return objective_Z(beta, p_ex, dt, mu=float(mu), targets=targets, n_runs=n_runs,
                           seed=seed, threads=threads)

    zs = np.array([z_at(m).Z for m in mus])
    best = int(np.argmin(zs))
    a = mus[max(best - 1, 0)]
    b = min(mus[min(best + 1, len(mus) - 1)], hi - 1e-9)
    if b > a:
        res = minimize_scalar(lambda m: z_at(m).Z, bounds=(a, b), method="bounded",
                              options={"xatol": xatol})
        mu0 = float(res.x) if res.fun <= zs[best] else float(mus[best])
    else:
        mu0 = float(mus[best])
    final = z_at(mu0)
    return Mu0Result(mu0, final.Z, mus, zs, final.means)
