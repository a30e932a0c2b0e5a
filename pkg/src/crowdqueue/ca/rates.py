"""Transition rates of the exit cellular automaton.

Each cell gets a row of ten options: the eight Moore moves, the move out of
the domain (exit cells only) and staying put.  Rates depend
only on the potential, so the whole table is computed once per scenario.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict

import numpy as np

from ..geometry import GridIndexing

log = logging.getLogger(__name__)

# (di, dj) of the eight Moore moves; dj = -1 points toward the exit side
DIRECTIONS = np.array([(-1, -1), (0, -1), (1, -1),
                       (-1, 0), (1, 0),
                       (-1, 1), (0, 1), (1, 1)], dtype=np.int64)
LEAVE = 8
STAY = 9
N_OPTIONS = 10

RATE_FORMS = ("standard", "motivated_drift")
NORMALIZATIONS = ("local", "capped")
EXIT_RULES = ("queue", "move")


@dataclass(frozen=True)
class SimParams:
    """Parameters of a CA run.

    ``p_ex`` is the door capacity in persons per second; one step lets at most
    one person out, with probability ``p_ex * dt``.
    """

    beta: float = 3.84
    mu: float = 1.0
    p_ex: float = 1.15
    dt: float = 0.0788
    gamma: float = 0.0
    seed: int = 0
    n_agents: int = 0
    rate_form: str = "standard"
    normalization: str = "local"
    exit_rule: str = "queue"

    def __post_init__(self):
        if not self.mu <= 1.0:
            raise ValueError(f"mu must be <= 1, got {self.mu}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.p_ex > 0:
            raise ValueError(f"p_ex must be positive, got {self.p_ex}")
        if self.n_agents < 0:
            raise ValueError("n_agents must be >= 0")
        if self.rate_form not in RATE_FORMS:
            raise ValueError(f"rate_form must be one of {RATE_FORMS}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        if self.exit_rule not in EXIT_RULES:
            raise ValueError(f"exit_rule must be one of {EXIT_RULES}")

    @property
    def alpha(self) -> float:
        """Hop-rate prefactor ``1 / (8 (3 - mu))``."""
        return 1.0 / (8.0 * (3.0 - self.mu))

    @property
    def exit_probability(self) -> float:
        """Per-step exit probability, capped at one."""
        q = self.p_ex * self.dt
        if q > 1.0:
            log.warning("p_ex * dt = %.3f exceeds 1; capping the exit probability", q)
            return 1.0
        return q

    def replace(self, **changes) -> "SimParams":
        return SimParams(**{**asdict(self), **changes})

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class RateTable:
    """Per-cell option table consumed by the step kernel."""

    target: np.ndarray      # (n_cells, 8) neighbour index or -1
    rate: np.ndarray        # (n_cells, N_OPTIONS) option probabilities
    cum: np.ndarray         # (n_cells, N_OPTIONS) cumulative probabilities
    is_exit: np.ndarray     # (n_cells,) bool
    rescaled: int = 0       # cells whose raw move rates summed above one


def move_weights(phi_here: float, phi_next: np.ndarray, params: SimParams) -> np.ndarray:
    """Unnormalized Moore rates ``exp(beta (phi(x) - phi(x + e)))``."""
    drift = params.beta * (params.mu if params.rate_form == "motivated_drift" else 1.0)
    return np.exp(drift * (phi_here - phi_next))


def door_attempt_probability(params: SimParams) -> float:
    """Chance per step that an agent standing in an exit cell tries the door.

    The hop probability ``8 * prefactor`` relative to its value at ``mu = 1``:
    a fully motivated agent always tries, a less motivated one proportionally
    less often.
    """
    if params.rate_form == "motivated_drift":
        return 1.0
    return min(1.0, 2.0 / (3.0 - params.mu))


def _prefactor(params: SimParams) -> float:
    return 0.125 if params.rate_form == "motivated_drift" else params.alpha


def _local_stay(params: SimParams) -> float:
    """Stay probability ``1 - 8 * prefactor`` under local normalization."""
    if params.rate_form == "motivated_drift":
        return 0.0
    return (2.0 - params.mu) / (3.0 - params.mu)


def transition_rates(pos, potential, params: SimParams, grid: GridIndexing | None = None,
                     dx: float | None = None) -> np.ndarray:
    """Option probabilities for one cell.

    Returns an array of length ``N_OPTIONS`` indexed by ``DIRECTIONS`` order for
    the eight moves, then ``LEAVE`` and ``STAY``.  ``pos`` is ``(i, j)``.
    """
    phi = np.asarray(getattr(potential, "values", potential), dtype=float)
    ny, nx = phi.shape
    if grid is None:
        exit_mask = np.zeros(nx * ny, bool)
    else:
        exit_mask = grid.exit_mask
        dx = grid.dx
    table = build_rate_table(phi, params, exit_mask, dx if dx is not None else 1.0)
    i, j = pos
    return table.rate[j * nx + i].copy()


def build_rate_table(phi, params: SimParams, exit_mask=None, dx: float = 1.0,
                     periodic: bool = False) -> RateTable:
    """Rate table on a rectangular grid.

    ``normalization="local"`` scales the eight Moore rates (plus the leave
    option, when it is a move) so that a cell's total move probability is
    ``8 * prefactor`` -- the value the prefactor gives on a flat potential.
    Walls and off-grid neighbours get weight zero and the remaining weights
    are renormalized, so the stay probability is ``(2 - mu) / (3 - mu)``
    everywhere.  ``"capped"`` uses the rates as written, gives the missing
    neighbours' mass to staying, and rescales only when the moves sum above one.
    """
    phi = np.asarray(phi, dtype=float)
    ny, nx = phi.shape
    n = nx * ny
    exit_mask = np.zeros(n, bool) if exit_mask is None else np.asarray(exit_mask, bool).ravel()
    target = np.full((n, 8), -1, dtype=np.int64)
    rate = np.zeros((n, N_OPTIONS))
    pref = _prefactor(params)
    flat_phi = phi.ravel()
    rescaled = 0
    leave_weight = np.exp(params.beta * dx) if params.exit_rule == "move" else 0.0

    for c in range(n):
        i, j = c % nx, c // nx
        ti = i + DIRECTIONS[:, 0]
        tj = j + DIRECTIONS[:, 1]
        if periodic:
            ti %= nx
            tj %= ny
            inside = np.ones(8, bool)
        else:
            inside = (ti >= 0) & (ti < nx) & (tj >= 0) & (tj < ny)
        idx = np.where(inside, tj * nx + ti, -1)
        if periodic:
            # a degenerate axis would alias moves onto the cell or its other neighbours
            if nx == 1:
                inside &= DIRECTIONS[:, 0] == 0
            if ny == 1:
                inside &= DIRECTIONS[:, 1] == 0
            idx = np.where(inside, idx, -1)
        target[c] = idx
        w = np.zeros(8)
        w[inside] = move_weights(flat_phi[c], flat_phi[idx[inside]], params)
        w[~np.isfinite(w)] = 0.0
        row = np.zeros(N_OPTIONS)
        if exit_mask[c] and params.exit_rule == "queue":
            row[LEAVE] = door_attempt_probability(params)
            row[STAY] = 1.0 - row[LEAVE]
        else:
            lw = leave_weight if exit_mask[c] else 0.0
            if params.normalization == "local":
                total = w.sum() + lw
                if total > 0:
                    row[:8] = 8 * pref * w / total
                    row[LEAVE] = 8 * pref * lw / total
                    # the same value as 1 - sum, but correctly rounded
                    row[STAY] = _local_stay(params)
            else:
                row[:8] = pref * w
                row[LEAVE] = pref * lw
                s = row[:9].sum()
                if s > 1.0:
                    row[:9] /= s
                    rescaled += 1
            if not row[STAY]:
                row[STAY] = max(0.0, 1.0 - row[:9].sum())
        rate[c] = row
    if rescaled:
        log.info("move rates rescaled to sum one in %d cells", rescaled)
    cum = np.cumsum(rate, axis=1)
    cum[:, -1] = 1.0 + 1e-12
    return RateTable(target, rate, cum, exit_mask.copy(), rescaled)
