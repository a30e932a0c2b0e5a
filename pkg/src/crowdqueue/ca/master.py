"""Deterministic occupancy-probability iteration of the automaton.

Each cell carries the probability ``rho`` that it is occupied.  A hop from
``x`` to ``y`` happens at the rate-table probability times ``rho(x)`` times
``1 - rho(y)``, the mean-field stand-in for size exclusion.  With a single
agent there is nothing to exclude, and ``exclusion=False`` gives the exact
Kolmogorov forward step of that agent's position.
"""

from __future__ import annotations

import numpy as np

from ..geometry import GridIndexing
from .rates import DIRECTIONS, LEAVE, RateTable, SimParams, build_rate_table

BOX_TOL = 1e-12
_LEFT, _RIGHT = 3, 4     # positions of (-1, 0) and (1, 0) in DIRECTIONS

assert tuple(DIRECTIONS[_LEFT]) == (-1, 0) and tuple(DIRECTIONS[_RIGHT]) == (1, 0)


class MasterEquationError(FloatingPointError):
    """Raised when an update leaves the unit interval, which means the rates are broken."""


def _check_box(rho: np.ndarray) -> None:
    lo, hi = rho.min(initial=0.0), rho.max(initial=0.0)
    if lo < -BOX_TOL or hi > 1 + BOX_TOL:
        raise MasterEquationError(
            f"occupancy left [0, 1] (min {lo:.3e}, max {hi:.3e}); rate rows must sum to <= 1"
        )


def master_equation_step(density, potential, params: SimParams, grid: GridIndexing, *,
                         exclusion: bool = True, table: RateTable | None = None) -> np.ndarray:
    """Advance the occupancy probabilities by one step.

    Exit cells lose ``p_ex * dt`` times their leave probability times ``rho``.
    Returns a new array shaped like ``density``.
    """
    rho = np.asarray(density, dtype=float)
    if rho.shape != grid.shape:
        raise ValueError(f"density shaped {rho.shape}, grid is {grid.shape}")
    _check_box(rho)
    if table is None:
        phi = np.asarray(getattr(potential, "values", potential), dtype=float)
        table = build_rate_table(phi, params, grid.exit_mask, grid.dx)
    r = rho.ravel()
    tgt = table.target
    valid = tgt >= 0
    free = np.where(valid, 1.0 - r[np.where(valid, tgt, 0)], 0.0) if exclusion \
        else valid.astype(float)
    flow = r[:, None] * table.rate[:, :8] * free
    new = r - flow.sum(axis=1)
    np.add.at(new, tgt[valid], flow[valid])
    new -= params.exit_probability * table.rate[:, LEAVE] * np.where(table.is_exit, r, 0.0)
    _check_box(new)
    return new.reshape(rho.shape)


def exit_outflow(density, params: SimParams, table: RateTable) -> float:
    """Mass that leaves through the exit cells in one master-equation step."""
    r = np.asarray(density, dtype=float).ravel()
    return float(params.exit_probability * np.sum(table.rate[table.is_exit, LEAVE]
                                                  * r[table.is_exit]))


def _ring_shift(a: np.ndarray, k: int, periodic: bool, fill: float) -> np.ndarray:
    """``out[x] = a[x + k]``, padded with ``fill`` beyond the ends unless periodic."""
    if periodic:
        return np.roll(a, -k)
    out = np.full_like(a, fill)
    if k > 0:
        out[:-k] = a[k:]
    elif k < 0:
        out[-k:] = a[:k]
    else:
        out[:] = a
    return out


def master_equation_step_pushing(density, potential, params: SimParams, dx: float, *,
                                 exit_cells=(), periodic: bool = False,
                                 table: RateTable | None = None) -> np.ndarray:
    """One step of the one-dimensional master equation with local pushing.

    An agent at ``x`` that targets an occupied ``x + 1`` pushes it on to
    ``x + 2`` with probability ``params.gamma`` if that cell is free.  Beyond the
    ends of a non-periodic row nothing can move, so pushes toward a wall are
    impossible.  ``gamma = 0`` reproduces :func:`master_equation_step` on the
    single-row grid.

    Two pushes can feed the same cell in one step, so the update stays in
    ``[0, 1]`` only while ``(1 + gamma)`` times the inflow rates of the two
    neighbours is at most one; converging rates with strong pushing can break
    that and raise :class:`MasterEquationError`.
    """
    rho = np.asarray(density, dtype=float).ravel()
    _check_box(rho)
    n = len(rho)
    exit_mask = np.zeros(n, bool)
    exit_mask[list(exit_cells)] = True
    if table is None:
        phi = np.asarray(getattr(potential, "values", potential), dtype=float).reshape(1, n)
        table = build_rate_table(phi, params, exit_mask, dx, periodic=periodic)
    tp = table.rate[:, _RIGHT]
    tm = table.rate[:, _LEFT]
    g = params.gamma

    def sh(a, k, fill=1.0):
        return _ring_shift(a, k, periodic, fill)

    # beyond a closed end the row is "occupied" and has zero rates
    r1p, r2p, r1m, r2m = sh(rho, 1), sh(rho, 2), sh(rho, -1), sh(rho, -2)
    loss = rho * tp * ((1 - r1p) + g * r1p * (1 - r2p)) \
        + rho * tm * ((1 - r1m) + g * r1m * (1 - r2m))
    gain = (sh(rho * tm, 1, 0.0)
            + g * sh(rho, 1, 0.0) * sh(rho * tm, 2, 0.0)
            + sh(rho * tp, -1, 0.0)
            + g * sh(rho, -1, 0.0) * sh(rho * tp, -2, 0.0)) * (1 - rho)
    new = rho - loss + gain
    new -= params.exit_probability * table.rate[:, LEAVE] * np.where(exit_mask, rho, 0.0)
    _check_box(new)
    return new.reshape(np.shape(density))
