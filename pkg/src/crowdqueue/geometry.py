"""Corridor domains and their cell discretization.

Cells are squares of side ``cell_size_m``.  Cell ``(i, j)`` has its center at
``((i + 1/2) dx, (j + 1/2) dx)``; column ``i`` runs across the corridor and row
``j`` counts away from the exit side, which lies on ``y = 0``.  Arrays holding
per-cell data are shaped ``(ny, nx)`` so that ``field[j, i]`` is cell
``(i, j)``; flat indices are ``j * nx + i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# measurement square from the Wuppertal experiments: 0.8 m wide, 0.5 m in front of the door
MEASUREMENT_SIZE_M = 0.8
MEASUREMENT_OFFSET_M = 0.5

_CONFORM_TOL = 1e-9


class GeometryError(ValueError):
    """Raised for corridor dimensions that do not fit the cell grid."""


def _cells(value: float, cell_size: float, name: str) -> int:
    ratio = value / cell_size
    n = round(ratio)
    if n < 1 or abs(ratio - n) > _CONFORM_TOL * max(1.0, ratio):
        raise GeometryError(
            f"{name}={value!r} m is not a positive multiple of cell_size_m={cell_size!r} m"
        )
    return int(n)


@dataclass(frozen=True)
class Corridor:
    width_m: float
    length_m: float
    exit_width_m: float
    cell_size_m: float

    @property
    def area_m2(self) -> float:
        return self.width_m * self.length_m

    @property
    def exit_span(self) -> tuple[float, float]:
        """x-interval of the door on the exit side ``y = 0``."""
        x0 = 0.5 * (self.width_m - self.exit_width_m)
        return x0, x0 + self.exit_width_m


@dataclass(frozen=True, eq=False)
class GridIndexing:
    nx: int
    ny: int
    dx: float
    exit_cells: np.ndarray
    wall_cells: np.ndarray
    measurement_cells: np.ndarray
    measurement_note: str = ""
    _exit_mask: np.ndarray = field(repr=False, default=None)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return self.ny, self.nx

    @property
    def cell_area(self) -> float:
        return self.dx * self.dx

    @property
    def exit_mask(self) -> np.ndarray:
        return self._exit_mask

    @property
    def measurement_area_m2(self) -> float:
        return len(self.measurement_cells) * self.cell_area

    @property
    def exit_line(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """Segment through the centers of the exit cells.

        Potentials measured from this segment vanish on the exit cells, which is
        the convention shared by the analytic distance and the eikonal solver.
        """
        cols = self.exit_cells % self.nx
        y = 0.5 * self.dx
        return ((cols.min() + 0.5) * self.dx, y), ((cols.max() + 0.5) * self.dx, y)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates ``(x, y)``, each shaped ``(ny, nx)``."""
        x = (np.arange(self.nx) + 0.5) * self.dx
        y = (np.arange(self.ny) + 0.5) * self.dx
        return np.meshgrid(x, y)

    def boundary_cells(self) -> np.ndarray:
        j, i = np.indices(self.shape)
        on_edge = (i == 0) | (i == self.nx - 1) | (j == 0) | (j == self.ny - 1)
        return np.flatnonzero(on_edge.ravel())

    def measurement_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_cells, dtype=bool)
        mask[self.measurement_cells] = True
        return mask.reshape(self.shape)

    def ij(self, flat) -> tuple[np.ndarray, np.ndarray]:
        flat = np.asarray(flat)
        return flat % self.nx, flat // self.nx


def build_corridor(width_m: float, length_m: float, exit_width_m: float,
                   cell_size_m: float) -> tuple[Corridor, GridIndexing]:
    """Discretize a corridor with a centered exit on its short side ``y = 0``.

    The measurement area is covered by the smallest square block of whole cells
    at least 0.8 m wide, starting at the row nearest to 0.5 m from the exit
    (3x3 cells starting 2 rows out on the 0.3 m grid).
    """
    for name, value in (("width_m", width_m), ("length_m", length_m),
                        ("exit_width_m", exit_width_m), ("cell_size_m", cell_size_m)):
        if not (value > 0 and math.isfinite(value)):
            raise GeometryError(f"{name} must be positive, got {value!r}")
    if exit_width_m > width_m + _CONFORM_TOL:
        raise GeometryError(f"exit_width_m={exit_width_m} exceeds width_m={width_m}")

    nx = _cells(width_m, cell_size_m, "width_m")
    ny = _cells(length_m, cell_size_m, "length_m")
    n_exit = _cells(exit_width_m, cell_size_m, "exit_width_m")
    if (nx - n_exit) % 2:
        raise GeometryError(
            f"exit_width_m={exit_width_m} cannot be centered on width_m={width_m} "
            f"({n_exit} exit cells in a row of {nx})"
        )

    first = (nx - n_exit) // 2
    exit_cells = np.arange(first, first + n_exit)
    exit_mask = np.zeros(nx * ny, dtype=bool)
    exit_mask[exit_cells] = True

    corridor = Corridor(float(width_m), float(length_m), float(exit_width_m), float(cell_size_m))

    size = min(math.ceil(MEASUREMENT_SIZE_M / cell_size_m - _CONFORM_TOL), nx, ny)
    row0 = min(int(round(MEASUREMENT_OFFSET_M / cell_size_m)), ny - size)
    col0 = (nx - size) // 2
    jj, ii = np.meshgrid(np.arange(row0, row0 + size), np.arange(col0, col0 + size),
                         indexing="ij")
    measurement = np.sort((jj * nx + ii).ravel())
    note = (f"{MEASUREMENT_SIZE_M}x{MEASUREMENT_SIZE_M} m area {MEASUREMENT_OFFSET_M} m "
            f"before the exit approximated by {size}x{size} cells "
            f"({size * cell_size_m:.4g} m square) starting {row0 * cell_size_m:.4g} m "
            f"from the exit")

    partial = GridIndexing(nx, ny, float(cell_size_m), exit_cells, np.empty(0, dtype=int),
                           measurement, note, exit_mask)
    boundary = partial.boundary_cells()
    walls = boundary[~exit_mask[boundary]]
    grid = GridIndexing(nx, ny, float(cell_size_m), exit_cells, walls, measurement, note,
                        exit_mask)
    return corridor, grid


def max_packing_density(cell_size_m: float) -> float:
    """Persons per square meter when every cell holds one person."""
    if not cell_size_m > 0:
        raise GeometryError(f"cell_size_m must be positive, got {cell_size_m!r}")
    return 1.0 / (cell_size_m * cell_size_m)
