"""Exit potentials on the cell grid.

Four kinds are provided: the analytic distance to the exit, the eikonal
solution by fast sweeping, the harmonic (Laplace) potential with distance data
on the boundary, and the density-weighted eikonal of the Hughes model.
Obstacle masks are only used by the demonstration rooms at the bottom.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from .geometry import GridIndexing, build_corridor

log = logging.getLogger(__name__)

TOL = 1e-8
MAX_ITER = 10_000
HUGHES_EPS = 1e-3
_FAR = 1e12

Segment = tuple[tuple[float, float], tuple[float, float]]


@dataclass(eq=False)
class PotentialField:
    values: np.ndarray
    kind: str
    dx: float
    converged: bool = True
    iterations: int = 0
    residual: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape


def segment_distance(px, py, segment: Segment) -> np.ndarray:
    """Euclidean distance from points to a closed line segment."""
    (ax, ay), (bx, by) = segment
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    ex, ey = bx - ax, by - ay
    length2 = ex * ex + ey * ey
    if length2 == 0.0:
        t = np.zeros_like(px)
    else:
        t = np.clip(((px - ax) * ex + (py - ay) * ey) / length2, 0.0, 1.0)
    return np.hypot(px - (ax + t * ex), py - (ay + t * ey))


def distance_potential(grid: GridIndexing, exit_segment: Segment | None = None) -> PotentialField:
    """Exact distance from every cell center to the exit segment.

    By default the segment through the exit-cell centers is used, so the
    potential is zero on the exit cells.
    """
    if exit_segment is None:
        if len(grid.exit_cells) == 0:
            raise ValueError("grid has no exit cells")
        exit_segment = grid.exit_line
    if exit_segment is None or len(exit_segment) != 2:
        raise ValueError("exit segment must be a pair of end points")
    x, y = grid.centers()
    values = segment_distance(x, y, exit_segment)
    return PotentialField(values, "distance", grid.dx, meta={"exit_segment": exit_segment})


@numba.njit(cache=True)
def _godunov_update(a, b, f):
    if abs(a - b) >= f:
        return min(a, b) + f
    return 0.5 * (a + b + np.sqrt(2.0 * f * f - (a - b) ** 2))


@numba.njit(cache=True)
def _sweep(u, fixed, blocked, fh, tol, max_sweeps):
    ny, nx = u.shape
    sweeps = 0
    change = np.inf
    while sweeps < max_sweeps:
        change = 0.0
        for order in range(4):
            for jj in range(ny):
                j = jj if order < 2 else ny - 1 - jj
                for ii in range(nx):
                    i = ii if order % 2 == 0 else nx - 1 - ii
                    if fixed[j, i] or blocked[j, i]:
                        continue
                    a = _FAR
                    if i > 0 and not blocked[j, i - 1]:
                        a = u[j, i - 1]
                    if i < nx - 1 and not blocked[j, i + 1] and u[j, i + 1] < a:
                        a = u[j, i + 1]
                    b = _FAR
                    if j > 0 and not blocked[j - 1, i]:
                        b = u[j - 1, i]
                    if j < ny - 1 and not blocked[j + 1, i] and u[j + 1, i] < b:
                        b = u[j + 1, i]
                    if a >= _FAR and b >= _FAR:
                        continue
                    new = _godunov_update(a, b, fh[j, i])
                    if new < u[j, i]:
                        d = u[j, i] - new
                        if d > change and u[j, i] < _FAR:
                            change = d
                        elif u[j, i] >= _FAR:
                            change = np.inf
                        u[j, i] = new
            sweeps += 1
        if change < tol:
            break
    return sweeps, change


def eikonal_fast_sweeping(grid: GridIndexing, rhs=None, *, sources=None, obstacles=None,
                          source_radius: float = 0.0, tol: float = TOL,
                          max_sweeps: int = MAX_ITER, kind: str = "eikonal") -> PotentialField:
    """Solve ``|grad phi| = rhs`` with ``phi = 0`` on the exit cells.

    Uses the 4-neighbour Godunov upwind update in alternating sweep orders.
    Obstacle cells are never updated and stay at ``inf``; cells that no source
    can reach stay at ``inf`` and the result is flagged unconverged.

    With ``source_radius > 0`` the cells within that distance (meters) of the
    exit line are initialized with ``rhs * distance`` and held fixed.  This
    removes the ``h log h`` error the plain scheme picks up at the ends of the
    exit segment; it requires the default exit-cell sources.
    """
    shape = grid.shape
    f = np.ones(shape) if rhs is None else np.broadcast_to(np.asarray(rhs, dtype=float), shape)
    if np.any(f < 1.0 - 1e-12):
        raise ValueError("eikonal right-hand side must be >= 1")
    custom_sources = sources is not None
    if sources is None:
        sources = grid.exit_mask.reshape(shape)
    sources = np.asarray(sources, dtype=bool).reshape(shape)
    blocked = (np.zeros(shape, dtype=bool) if obstacles is None
               else np.asarray(obstacles, dtype=bool).reshape(shape))
    if not np.any(sources & ~blocked):
        raise ValueError("no exit cell available as eikonal source")

    u = np.full(shape, _FAR)
    u[sources] = 0.0
    fixed = sources.copy()
    if source_radius > 0:
        if custom_sources:
            raise ValueError("source_radius needs the grid's own exit cells as sources")
        dist = distance_potential(grid).values
        band = (dist <= source_radius + 1e-12) & ~blocked
        u[band] = f[band] * dist[band]
        fixed |= band
    sweeps, change = _sweep(u, fixed, blocked, f * grid.dx, tol, max_sweeps)
    unreachable = (u >= _FAR) & ~blocked
    converged = bool(change < tol and not unreachable.any())
    if unreachable.any():
        log.warning("%d cells are not reachable from the exit", int(unreachable.sum()))
    u[u >= _FAR] = np.inf
    return PotentialField(u, kind, grid.dx, converged, sweeps, float(change),
                          meta={"sweeps": sweeps, "unreachable": int(unreachable.sum()),
                                "source_radius": source_radius, "fixed": fixed})


def eikonal_residual(field: PotentialField, rhs=None, obstacles=None) -> np.ndarray:
    """Pointwise residual of the discrete upwind equation, zero on sources."""
    u = np.where(np.isfinite(field.values), field.values, _FAR)
    ny, nx = u.shape
    f = np.ones((ny, nx)) if rhs is None else np.broadcast_to(rhs, (ny, nx))
    blocked = np.zeros((ny, nx), bool) if obstacles is None else np.asarray(obstacles, bool)
    pad = np.pad(np.where(blocked, _FAR, u), 1, constant_values=_FAR)
    a = np.minimum(pad[1:-1, :-2], pad[1:-1, 2:])
    b = np.minimum(pad[:-2, 1:-1], pad[2:, 1:-1])
    fh = f * field.dx
    near = np.abs(a - b) >= fh
    with np.errstate(invalid="ignore"):
        two = 0.5 * (a + b + np.sqrt(np.maximum(2 * fh**2 - (a - b) ** 2, 0.0)))
    target = np.where(near, np.minimum(a, b) + fh, two)
    res = np.abs(u - target)
    fixed = field.meta.get("fixed", u == 0.0)
    res[fixed | blocked] = 0.0
    return res


def _boundary_mask(grid: GridIndexing) -> np.ndarray:
    ny, nx = grid.shape
    mask = np.zeros((ny, nx), dtype=bool)
    if nx == 1 or ny == 1:
        flat = mask.reshape(-1)
        flat[0] = flat[-1] = True
        return mask
    mask[0, :] = mask[-1, :] = True
    mask[:, 0] = mask[:, -1] = True
    return mask


def boundary_distance(grid: GridIndexing, exit_segment: Segment | None = None) -> np.ndarray:
    """Dirichlet data for the Laplace potential: distance of boundary cells to the exit."""
    values = distance_potential(grid, exit_segment).values
    return np.where(_boundary_mask(grid), values, np.nan)


def laplace_potential(grid: GridIndexing, boundary_values=None, *, fixed=None, obstacles=None,
                      tol: float = TOL, max_iter: int = MAX_ITER) -> PotentialField:
    """Harmonic potential with Dirichlet data on the fixed cells.

    ``boundary_values`` is an array over the grid whose entries on the fixed
    cells are the prescribed values (by default the distance to the exit on the
    outer ring of cells, or the two end cells of a 1D grid).  Obstacle cells are
    removed from the stencil, which is a homogeneous Neumann condition at their
    faces.  Relaxation uses red-black over-relaxed Gauss-Seidel sweeps.
    """
    shape = grid.shape
    if boundary_values is None:
        boundary_values = boundary_distance(grid)
    data = np.asarray(boundary_values, dtype=float).reshape(shape)
    fixed = _boundary_mask(grid) if fixed is None else np.asarray(fixed, bool).reshape(shape)
    blocked = (np.zeros(shape, dtype=bool) if obstacles is None
               else np.asarray(obstacles, dtype=bool).reshape(shape))
    fixed = fixed & ~blocked
    if not np.all(np.isfinite(data[fixed])):
        raise ValueError("Dirichlet data must be finite on all fixed cells")

    open_ = ~blocked
    u = np.zeros(shape)
    u[fixed] = data[fixed]
    if (~fixed & open_).any():
        u[~fixed & open_] = data[fixed].mean()

    pad_open = np.pad(open_, 1, constant_values=False)
    nbr = np.stack([pad_open[:-2, 1:-1], pad_open[2:, 1:-1],
                    pad_open[1:-1, :-2], pad_open[1:-1, 2:]]).astype(float)
    count = nbr.sum(axis=0)
    free = ~fixed & open_ & (count > 0)
    j, i = np.indices(shape)
    colors = [free & ((i + j) % 2 == c) for c in (0, 1)]
    n = max(shape)
    omega = 2.0 / (1.0 + np.sin(np.pi / max(n, 2)))

    def neighbour_mean(v):
        p = np.pad(v, 1)
        s = (nbr[0] * p[:-2, 1:-1] + nbr[1] * p[2:, 1:-1]
             + nbr[2] * p[1:-1, :-2] + nbr[3] * p[1:-1, 2:])
        with np.errstate(invalid="ignore", divide="ignore"):
            return s / count

    residual = np.inf
    it = 0
    while it < max_iter and free.any():
        it += 1
        for mask in colors:
            avg = neighbour_mean(u)
            u[mask] += omega * (avg[mask] - u[mask])
        residual = float(np.max(np.abs(neighbour_mean(u)[free] - u[free])))
        if residual < tol:
            break
    if not free.any():
        residual = 0.0
    converged = residual < tol
    if not converged:
        log.warning("Laplace relaxation stopped after %d iterations, residual %.3e", it, residual)
    u[blocked] = np.nan
    span = float(np.nanmax(u) - np.nanmin(u))
    return PotentialField(u, "laplace", grid.dx, converged, it, residual,
                          meta={"degenerate": span < tol, "omega": omega})


def hughes_potential(grid: GridIndexing, density, *, eps: float = HUGHES_EPS,
                     obstacles=None) -> PotentialField:
    """Eikonal potential with the density-dependent cost ``1 / (1 - rho)``."""
    rho = np.asarray(density, dtype=float).reshape(grid.shape)
    rhs = 1.0 / (1.0 - np.clip(rho, 0.0, 1.0 - eps))
    result = eikonal_fast_sweeping(grid, rhs, obstacles=obstacles, kind="hughes")
    result.meta["clamp_eps"] = eps
    return result


def descent_directions(values: np.ndarray, blocked=None) -> tuple[np.ndarray, np.ndarray]:
    """Unit vectors of ``-grad phi`` (central differences, one-sided at edges).

    Returns ``(vx, vy)``; entries are NaN where the gradient is undefined.
    """
    v = np.array(values, dtype=float)
    if blocked is not None:
        v[np.asarray(blocked, bool)] = np.nan
    v[~np.isfinite(v)] = np.nan
    gy, gx = _nan_gradient(v, 0), _nan_gradient(v, 1)
    norm = np.hypot(gx, gy)
    with np.errstate(invalid="ignore", divide="ignore"):
        return -gx / norm, -gy / norm


def _nan_gradient(v, axis):
    fwd = np.roll(v, -1, axis=axis)
    bwd = np.roll(v, 1, axis=axis)
    if axis == 0:
        fwd[-1, :] = np.nan
        bwd[0, :] = np.nan
    else:
        fwd[:, -1] = np.nan
        bwd[:, 0] = np.nan
    central = 0.5 * (fwd - bwd)
    return np.where(np.isnan(central), np.where(np.isnan(fwd), v - bwd, fwd - v), central)


# --- obstacle demonstrations --------------------------------------------------

@dataclass(eq=False)
class ObstacleDemo:
    name: str
    grid: GridIndexing
    obstacles: np.ndarray
    eikonal: PotentialField
    laplace: PotentialField
    region: np.ndarray
    probe: tuple[int, int] | None = None

    def agreement(self) -> float:
        """Mean cosine similarity of eikonal and Laplace descent over ``region``."""
        ex, ey = descent_directions(self.eikonal.values, self.obstacles)
        lx, ly = descent_directions(self.laplace.values, self.obstacles)
        cos = ex * lx + ey * ly
        sel = self.region & np.isfinite(cos)
        return float(cos[sel].mean())

    def probe_descent(self) -> dict:
        if self.probe is None:
            return {}
        j, i = self.probe
        ex, ey = descent_directions(self.eikonal.values, self.obstacles)
        lx, ly = descent_directions(self.laplace.values, self.obstacles)
        return {"cell": [int(i), int(j)],
                "eikonal": [float(ex[j, i]), float(ey[j, i])],
                "laplace": [float(lx[j, i]), float(ly[j, i])]}


def _room(size_m: float, dx: float, exit_m: float):
    _, grid = build_corridor(size_m, size_m, exit_m, dx)
    return grid


def _solve_pair(grid, obstacles):
    eik = eikonal_fast_sweeping(grid, obstacles=obstacles)
    data = distance_potential(grid).values
    lap = laplace_potential(grid, data, obstacles=obstacles)
    return eik, lap


def convex_obstacle_demo(size_m: float = 6.0, dx: float = 0.1, exit_m: float = 1.0) -> ObstacleDemo:
    """Square room with a square block between the crowd and the exit.

    The comparison region is the open band between the far wall and the block.
    """
    grid = _room(size_m, dx, exit_m)
    ny, nx = grid.shape
    j, i = np.indices(grid.shape)
    half = int(round(0.75 / dx))
    cy = int(round(0.45 * ny))
    obstacles = (abs(i - nx // 2 + 0.5) <= half) & (abs(j - cy) <= half)
    eik, lap = _solve_pair(grid, obstacles)
    region = (j > cy + half + 2) & (j < ny - 3) & (i > 2) & (i < nx - 3)
    return ObstacleDemo("convex", grid, obstacles, eik, lap, region)


def u_obstacle_demo(size_m: float = 6.0, dx: float = 0.1, exit_m: float = 1.0) -> ObstacleDemo:
    """Square room with a U-shaped obstacle opening away from the exit.

    The probe cell sits inside the mouth of the U on its symmetry axis.
    """
    grid = _room(size_m, dx, exit_m)
    ny, nx = grid.shape
    j, i = np.indices(grid.shape)
    thick = max(1, int(round(0.2 / dx)))
    half_w = int(round(1.2 / dx))
    bottom = int(round(0.35 * ny))
    depth = int(round(1.6 / dx))
    ci = nx // 2
    left = ci - half_w
    right = ci + half_w - 1
    base = (j >= bottom) & (j < bottom + thick) & (i >= left) & (i <= right)
    arms = (j >= bottom) & (j < bottom + depth) & (
        ((i >= left) & (i < left + thick)) | ((i > right - thick) & (i <= right)))
    obstacles = base | arms
    eik, lap = _solve_pair(grid, obstacles)
    probe = (bottom + depth - 2, ci)
    region = np.zeros(grid.shape, bool)
    region[probe] = True
    return ObstacleDemo("u_shape", grid, obstacles, eik, lap, region, probe)
