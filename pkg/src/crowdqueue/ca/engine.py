"""Running the automaton: state, single steps, whole runs and ensembles.

The step functions here are thin wrappers around the compiled kernel; they
exist so that tests and small experiments can drive the automaton one step at
a time with a numpy ``Generator``.  ``run_to_exit`` and ``monte_carlo`` hand
whole runs to the kernel, each seeded from its own stream.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..geometry import GridIndexing, max_packing_density
from ..potential import distance_potential
from . import kernel
from .rates import DIRECTIONS, RateTable, SimParams, build_rate_table

log = logging.getLogger(__name__)

MAX_STEPS = 1_000_000
SERIES_STEPS = 4000


@dataclass
class OccupancyGrid:
    """Agent positions on a grid.

    ``occ[c]`` holds the id of the agent in flat cell ``c`` or -1; ``pos[a]``
    is the cell of agent ``a`` or -1 once it has left.
    """

    grid: GridIndexing
    occ: np.ndarray
    pos: np.ndarray
    step: int = 0

    @classmethod
    def from_cells(cls, grid: GridIndexing, cells) -> "OccupancyGrid":
        cells = np.asarray(cells, dtype=np.int64).ravel()
        if len(np.unique(cells)) != len(cells):
            raise ValueError("two agents placed in the same cell")
        if len(cells) and (cells.min() < 0 or cells.max() >= grid.n_cells):
            raise ValueError("cell index outside the grid")
        occ = np.full(grid.n_cells, -1, dtype=np.int64)
        occ[cells] = np.arange(len(cells))
        return cls(grid, occ, cells.copy())

    @classmethod
    def random(cls, grid: GridIndexing, n_agents: int, rng: np.random.Generator) -> "OccupancyGrid":
        if n_agents > grid.n_cells:
            raise ValueError(f"{n_agents} agents do not fit into {grid.n_cells} cells")
        return cls.from_cells(grid, rng.choice(grid.n_cells, size=n_agents, replace=False))

    @property
    def n_agents(self) -> int:
        return len(self.pos)

    @property
    def n_present(self) -> int:
        return int(np.count_nonzero(self.pos >= 0))

    @property
    def n_exited(self) -> int:
        return self.n_agents - self.n_present

    def occupied(self) -> np.ndarray:
        """Boolean occupancy shaped ``(ny, nx)``."""
        return (self.occ >= 0).reshape(self.grid.shape)

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.grid, self.occ.copy(), self.pos.copy(), self.step)

    def check(self) -> None:
        """Raise if the two views disagree or a cell holds two agents."""
        present = self.pos[self.pos >= 0]
        if len(np.unique(present)) != len(present):
            raise AssertionError("size exclusion violated")
        if not np.array_equal(np.flatnonzero(self.occ >= 0), np.sort(present)):
            raise AssertionError("occupancy and positions disagree")
        if not np.all(self.occ[present] == np.flatnonzero(self.pos >= 0)):
            raise AssertionError("occupancy ids do not match positions")


@dataclass
class RunStatistics:
    """Result of one run.  ``density_series[s]`` is the measurement density after step ``s``."""

    exit_time_s: float
    steps: int
    density_series: np.ndarray
    max_density: float
    n_agents: int
    complete: bool = True
    remaining: int = 0


@dataclass
class EnsembleStatistics:
    exit_times: np.ndarray              # seconds, one per run
    max_densities: np.ndarray           # per-run maximum measurement density
    mean_series: np.ndarray             # ensemble-mean measurement density per step
    series_sq: np.ndarray               # ensemble mean of the squared density per step
    dt: float
    n_incomplete: int = 0
    density_map: np.ndarray | None = None
    seeds: np.ndarray = field(default=None, repr=False)

    @property
    def n_runs(self) -> int:
        return len(self.exit_times)

    @property
    def mean_exit_time(self) -> float:
        return float(self.exit_times.mean())

    @property
    def std_exit_time(self) -> float:
        return float(self.exit_times.std(ddof=1)) if self.n_runs > 1 else 0.0

    @property
    def sem_exit_time(self) -> float:
        return self.std_exit_time / np.sqrt(self.n_runs)

    @property
    def mean_max_density(self) -> float:
        return float(self.max_densities.mean())

    def peak_density(self) -> tuple[float, float, float]:
        """Peak of the ensemble-mean density curve.

        Returns ``(peak, standard error at the peak, time of the peak in s)``.
        Unlike the per-run maximum, which sits at the packing density whenever
        the measurement block fills up once, this keeps resolving differences
        between scenarios.
        """
        k = int(np.argmax(self.mean_series))
        var = max(self.series_sq[k] - self.mean_series[k] ** 2, 0.0)
        sem = np.sqrt(var / max(self.n_runs - 1, 1))
        return float(self.mean_series[k]), float(sem), k * self.dt

    def histogram(self, bins=30) -> tuple[np.ndarray, np.ndarray]:
        return np.histogram(self.exit_times, bins=bins)


def rate_table_for(grid: GridIndexing, params: SimParams, potential=None) -> RateTable:
    """Rate table on ``grid``; the analytic exit distance is the default potential."""
    if potential is None:
        potential = distance_potential(grid)
    phi = np.asarray(getattr(potential, "values", potential), dtype=float)
    if phi.shape != grid.shape:
        raise ValueError(f"potential shaped {phi.shape}, grid is {grid.shape}")
    return build_rate_table(phi, params, grid.exit_mask, grid.dx)


def _step(state: OccupancyGrid, table: RateTable, params: SimParams, gamma: float,
          rng: np.random.Generator) -> tuple[OccupancyGrid, int]:
    new = state.copy()
    n, cells = new.n_agents, new.grid.n_cells
    u = rng.random((n, 4))
    left = kernel.step_core(new.occ, new.pos, table.target, table.rate, table.cum,
                            params.exit_probability, gamma, u,
                            np.zeros(cells), np.full(cells, -1, np.int64),
                            np.empty(cells, np.int64), np.zeros(n, np.int64),
                            np.zeros(n, np.int64), np.zeros(n, np.int64))
    new.step += 1
    return new, left


def step_parallel(state: OccupancyGrid, potential, params: SimParams,
                  rng: np.random.Generator, table: RateTable | None = None) -> OccupancyGrid:
    """One synchronous update without pushing.  The input state is not modified."""
    table = table or rate_table_for(state.grid, params, potential)
    return _step(state, table, params, 0.0, rng)[0]


def step_parallel_pushing(state: OccupancyGrid, potential, params: SimParams,
                          rng: np.random.Generator, table: RateTable | None = None) -> OccupancyGrid:
    """One synchronous update in which blocked agents push with probability ``params.gamma``."""
    table = table or rate_table_for(state.grid, params, potential)
    return _step(state, table, params, params.gamma, rng)[0]


def run_seeds(master_seed: int, n_runs: int) -> np.ndarray:
    """Per-run seeds: run ``r`` always gets the ``r``-th child of the master sequence."""
    children = np.random.SeedSequence(master_seed).spawn(n_runs)
    return np.array([c.generate_state(1)[0] for c in children], dtype=np.int64)


def run_to_exit(grid: GridIndexing, params: SimParams, potential=None, *,
                max_steps: int = MAX_STEPS, table: RateTable | None = None) -> RunStatistics:
    """Place ``params.n_agents`` uniformly and step until the corridor is empty."""
    if params.n_agents > grid.n_cells:
        raise ValueError(f"{params.n_agents} agents do not fit into {grid.n_cells} cells")
    table = table or rate_table_for(grid, params, potential)
    series = np.zeros(max_steps + 1, np.int64)
    occ_final = np.empty(grid.n_cells, np.int64)
    steps, last, max_count, remaining = kernel.run_kernel(
        int(run_seeds(params.seed, 1)[0]), params.n_agents, -1, table.target, table.rate,
        table.cum, params.exit_probability, params.gamma, grid.measurement_mask().ravel(),
        max_steps, series, np.zeros((0, grid.n_cells), np.int64),
        occ_final)
    area = grid.measurement_area_m2
    complete = remaining == 0
    if not complete:
        log.warning("run stopped at the %d-step cap with %d agents left", max_steps, remaining)
    return RunStatistics(
        exit_time_s=last * params.dt if complete else steps * params.dt,
        steps=int(steps),
        density_series=series[:steps + 1] / area,
        max_density=max_count / area,
        n_agents=params.n_agents,
        complete=complete,
        remaining=int(remaining),
    )


def _ensemble_chunk(seeds, n_agents, table, q, gamma, meas, max_steps, n_series, n_map):
    n_cells = table.target.shape[0]
    series_sum = np.zeros(n_series, np.int64)
    occ_sum = np.zeros((n_map, n_cells), np.int64)
    out = np.zeros((len(seeds), 4), np.int64)
    sq_sum = np.zeros(n_series, np.int64)
    # squared counts need the per-run series, so runs are driven one at a time
    series = np.zeros(n_series, np.int64)
    occ_final = np.empty(n_cells, np.int64)
    for r, s in enumerate(seeds):
        series[:] = 0
        out[r] = kernel.run_kernel(s, n_agents, -1, table.target, table.rate, table.cum, q,
                                   gamma, meas, max_steps, series, occ_sum, occ_final)
        series_sum += series
        sq_sum += series * series
    return series_sum, sq_sum, occ_sum, out


def monte_carlo(grid: GridIndexing, params: SimParams, potential=None, n_runs: int = 500, *,
                threads: int | None = None, density_map: bool = False,
                series_steps: int = SERIES_STEPS, max_steps: int = MAX_STEPS,
                table: RateTable | None = None) -> EnsembleStatistics:
    """Independent runs seeded from ``params.seed``.

    Run ``r`` uses the same seed whatever the thread count, and all
    reductions are integer sums, so the statistics are bit-identical for any
    ``threads``.  ``density_map`` keeps the ensemble-mean occupancy of every
    cell for the first ``series_steps`` steps and reports its time maximum in
    persons per square meter.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    if params.n_agents > grid.n_cells:
        raise ValueError(f"{params.n_agents} agents do not fit into {grid.n_cells} cells")
    table = table or rate_table_for(grid, params, potential)
    seeds = run_seeds(params.seed, n_runs)
    meas = grid.measurement_mask().ravel()
    n_map = series_steps if density_map else 0
    threads = max(1, min(threads or os.cpu_count() or 1, n_runs))
    chunks = np.array_split(seeds, threads)
    args = (params.n_agents, table, params.exit_probability, params.gamma, meas, max_steps,
            series_steps, n_map)
    if threads == 1:
        parts = [_ensemble_chunk(chunks[0], *args)]
    else:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda c: _ensemble_chunk(c, *args), chunks))

    series_sum = sum(p[0] for p in parts)
    sq_sum = sum(p[1] for p in parts)
    out = np.concatenate([p[3] for p in parts])
    area = grid.measurement_area_m2
    steps, last, max_count, remaining = out.T
    incomplete = remaining > 0
    if incomplete.any():
        log.warning("%d of %d runs hit the %d-step cap", incomplete.sum(), n_runs, max_steps)
    exit_steps = np.where(incomplete, steps, last)
    dmap = None
    if density_map:
        occ_sum = sum(p[2] for p in parts)
        dmap = (occ_sum.max(axis=0) / n_runs * max_packing_density(grid.dx)).reshape(grid.shape)
    return EnsembleStatistics(
        exit_times=exit_steps * params.dt,
        max_densities=max_count / area,
        mean_series=series_sum / n_runs / area,
        series_sq=sq_sum / n_runs / area ** 2,
        dt=params.dt,
        n_incomplete=int(incomplete.sum()),
        density_map=dmap,
        seeds=seeds,
    )


def ring_table(n_cells: int, params: SimParams, dx: float, slope: float = 1.0) -> RateTable:
    """Rates on a periodic single-row ring with a constant downhill slope to the right.

    Every cell sees the same local potential difference ``slope * dx``, which
    a periodic potential cannot express directly, so one interior row is
    computed and copied to all cells.
    """
    if n_cells < 3:
        raise ValueError("the ring needs at least three cells")
    phi = -slope * dx * np.arange(3, dtype=float)[None, :]
    row = build_rate_table(phi, params.replace(exit_rule="queue"), None, dx)
    target = np.full((n_cells, 8), -1, np.int64)
    rate = np.tile(row.rate[1], (n_cells, 1))
    idx = np.arange(n_cells)
    for k, (di, dj) in enumerate(DIRECTIONS):
        if dj == 0:
            target[:, k] = (idx + di) % n_cells
    cum = np.cumsum(rate, axis=1)
    cum[:, -1] = 1.0 + 1e-12
    return RateTable(target, rate, cum, np.zeros(n_cells, bool))


def ring_velocity(density: float, params: SimParams, *, n_cells: int = 200, dx: float = 0.3,
                  steps: int = 2000, burn_in: int = 200, slope: float = 1.0,
                  rng: np.random.Generator | None = None) -> float:
    """Mean agent speed in m/s on a driven periodic ring at the given fill fraction.

    The pushing probability is ``params.gamma``.  Speed is net displacement
    per agent and step, converted with ``dx`` and ``params.dt``.
    """
    rng = rng or np.random.default_rng(params.seed)
    n_agents = int(round(density * n_cells))
    if not 0 < n_agents < n_cells:
        raise ValueError("density must leave at least one agent and one hole")
    table = ring_table(n_cells, params, dx, slope)
    occ = np.full(n_cells, -1, np.int64)
    pos = rng.choice(n_cells, n_agents, replace=False).astype(np.int64)
    occ[pos] = np.arange(n_agents)
    scratch = (np.zeros(n_cells), np.full(n_cells, -1, np.int64), np.empty(n_cells, np.int64),
               np.zeros(n_agents, np.int64), np.zeros(n_agents, np.int64),
               np.zeros(n_agents, np.int64))
    moved = 0
    for s in range(burn_in + steps):
        before = pos.copy()
        kernel.step_core(occ, pos, table.target, table.rate, table.cum, 0.0, params.gamma,
                         rng.random((n_agents, 4)), *scratch)
        if s >= burn_in:
            d = (pos - before) % n_cells
            moved += int(np.sum(np.where(d > n_cells // 2, d - n_cells, d)))
    return moved / (n_agents * steps) * dx / params.dt


def occupancy_frequencies(grid: GridIndexing, params: SimParams, start: int, n_runs: int,
                          n_steps: int, potential=None, *,
                          table: RateTable | None = None) -> np.ndarray:
    """Fraction of runs in which each cell holds the agent after each step.

    A single agent starts in flat cell ``start``; runs are seeded as in
    :func:`monte_carlo`.  Returns an array shaped ``(n_steps + 1, ny, nx)``.
    """
    if not 0 <= start < grid.n_cells:
        raise ValueError("start cell outside the grid")
    table = table or rate_table_for(grid, params, potential)
    occ_sum = np.zeros((n_steps + 1, grid.n_cells), np.int64)
    series = np.zeros(0, np.int64)
    occ_final = np.empty(grid.n_cells, np.int64)
    meas = grid.measurement_mask().ravel()
    for s in run_seeds(params.seed, n_runs):
        kernel.run_kernel(s, 1, start, table.target, table.rate, table.cum,
                          params.exit_probability, params.gamma, meas, n_steps, series,
                          occ_sum, occ_final)
    return (occ_sum / n_runs).reshape((n_steps + 1,) + grid.shape)
