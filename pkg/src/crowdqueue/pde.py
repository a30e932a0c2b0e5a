"""Finite-volume solver for the macroscopic exit model.

The scaled density ``rho`` (persons per cell divided by the packing density)
obeys a nonlinear Fokker-Planck equation

    d rho/dt = div j,   j = a (D(rho) grad rho + c rho (1 - rho) P(rho) grad phi)

with ``D = P = 1`` in the plain model, ``D = 1 + 4 g rho`` and
``P = 1 + 2 g rho`` with pushing probability ``g``, and drift coefficient
``c = 2 beta`` (``2 mu beta`` with prefactor ``a = 1/8`` in the variant where
motivation acts on the drift).  Walls carry no flux; exit faces let
``p_ex * rho`` per unit length out.

Cells are those of the automaton grid, time stepping is explicit Euler.  Face
fluxes are two-point exclusion fluxes (see :func:`face_fluxes`): they keep
``0 <= rho <= 1`` under the step bound and never let the semi-discrete
entropy grow.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from .geometry import GridIndexing, max_packing_density
from .potential import distance_potential, hughes_potential

log = logging.getLogger(__name__)

VARIANTS = ("standard", "pushing", "motivated_drift")
BOX_TOL = 1e-10
MASS_TOL = 1e-10
STIFF_RATIO = 1e-4      # coupled mode gives up below this fraction of the first step


class PdeError(FloatingPointError):
    """Raised when a step violates the box constraint or the discrete mass balance."""


@dataclass(frozen=True)
class PdeParams:
    """Coefficients of the macroscopic model.

    ``time_scale`` is the number of seconds per unit of model time.  It only
    matters when results are reported in seconds.  The default of one keeps
    the model time.  :func:`ca_time_scale` gives the value that matches an
    automaton step of ``dt`` seconds.
    """

    alpha_mu: float = 1.0 / 16.0
    beta: float = 3.84
    p_ex: float = 1.15
    gamma: float = 0.0
    variant: str = "standard"
    mu: float = 1.0
    dt: float | None = None
    cfl_safety: float = 0.5
    time_scale: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if not self.alpha_mu > 0:
            raise ValueError("alpha_mu must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.p_ex < 0 or self.beta < 0:
            raise ValueError("p_ex and beta must be nonnegative")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")

    @classmethod
    def from_mu(cls, mu: float, **kw) -> "PdeParams":
        """Parameters with ``alpha_mu = 1 / (8 (3 - mu))``."""
        if mu > 1:
            raise ValueError("mu must be <= 1")
        return cls(alpha_mu=1.0 / (8.0 * (3.0 - mu)), mu=mu, **kw)

    @property
    def prefactor(self) -> float:
        return 0.125 if self.variant == "motivated_drift" else self.alpha_mu

    @property
    def drift(self) -> float:
        return 2.0 * self.beta * (self.mu if self.variant == "motivated_drift" else 1.0)

    @property
    def push(self) -> float:
        return self.gamma if self.variant == "pushing" else 0.0

    def replace(self, **changes) -> "PdeParams":
        return PdeParams(**{**asdict(self), **changes})


def ca_time_scale(ca_dt: float, dx: float) -> float:
    """Seconds per unit of model time for an automaton with step ``ca_dt`` on cells ``dx``.

    On a flat potential a Moore walker with hop probability ``a`` per
    neighbour spreads with diffusivity ``3 a dx^2`` per step, while the model
    diffuses at ``a`` per unit time.  The drift terms agree under the same
    conversion, so one step corresponds to ``3 dx^2`` units of model time.
    """
    return ca_dt / (3.0 * dx * dx)


def door_capacity_to_outflow(persons_per_s: float, exit_width_m: float, dx: float,
                             time_scale: float) -> float:
    """Outflow coefficient whose flux at ``rho = 1`` lets ``persons_per_s`` through the door.

    The exit boundary passes ``p_ex * rho * width`` scaled mass per unit
    model time, i.e. ``p_ex * rho * width / dx^2`` persons.  Matching a door
    capacity given in persons per second needs the clock conversion too.
    """
    if not (persons_per_s >= 0 and exit_width_m > 0 and dx > 0 and time_scale > 0):
        raise ValueError("door capacity, exit width, dx and time_scale must be positive")
    return persons_per_s * time_scale * dx * dx / exit_width_m


def mobility(rho, params: PdeParams):
    """``rho (1 - rho) (1 + 2 gamma rho)``; reduces to ``rho (1 - rho)`` without pushing."""
    rho = np.asarray(rho, dtype=float)
    return rho * (1 - rho) * (1 + 2 * params.push * rho)


def flux(rho_faces, grad_rho, grad_phi, params: PdeParams):
    """Continuum flux ``j`` at given face states; vectors along the last axis."""
    rho = np.asarray(rho_faces, dtype=float)
    grad_rho = np.asarray(grad_rho, dtype=float)
    if grad_rho.ndim > rho.ndim:
        rho = rho[..., None]
    g = params.push
    return params.prefactor * ((1 + 4 * g * rho) * grad_rho
                               + params.drift * rho * (1 - rho) * (1 + 2 * g * rho)
                               * np.asarray(grad_phi, dtype=float))


def _exponents(g):
    return (4 * g + 1) / (2 * g + 1), 2 * g / (2 * g + 1)


def _jump_weight(a, b, g):
    """``a (1 - b)^k (1 + 2 g a)^q``: vanishes for an empty source or a full target."""
    k, q = _exponents(g)
    return a * (1 - b) ** k * (1 + 2 * g * a) ** q


def _mobility_scale(mid, g):
    """``m(mid) / jump_weight(mid, mid)``, the factor restoring the continuum mobility."""
    if g == 0:
        return np.ones_like(mid)
    k, q = _exponents(g)
    gap = np.maximum(1 - mid, 1e-300)
    return gap ** (1 - k) * (1 + 2 * g * mid) ** (1 - q)


def face_fluxes(rho, phi, params: PdeParams, h: float):
    """Mass fluxes through interior faces, positive toward increasing index.

    The flux from ``L`` to ``R`` is ``a/h S [w(L, R) e^(s/2) - w(R, L) e^(-s/2)]``
    with ``s = c (phi_L - phi_R)``.  Its sign is that of the jump in the
    entropy variable, so the semi-discrete entropy cannot increase.  It vanishes
    when the source is empty or the target is full, and it is consistent with
    the continuum flux to leading order.  Without pushing it is the mean-field
    flux of an exclusion process.

    Returns ``(fx, fy)`` shaped ``(ny, nx - 1)`` and ``(ny - 1, nx)``.
    """
    rho = np.clip(np.asarray(rho, dtype=float), 0.0, 1.0)
    g, c, a = params.push, params.drift, params.prefactor
    out = []
    for axis in (1, 0):
        lo = [slice(None)] * 2
        hi = [slice(None)] * 2
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        rl, rr = rho[tuple(lo)], rho[tuple(hi)]
        half = 0.5 * c * (phi[tuple(lo)] - phi[tuple(hi)])
        bracket = _jump_weight(rl, rr, g) * np.exp(half) - _jump_weight(rr, rl, g) * np.exp(-half)
        out.append(a / h * np.where(bracket == 0, 0.0,
                                    _mobility_scale(0.5 * (rl + rr), g) * bracket))
    return out[0], out[1]


def stable_dt(phi, params: PdeParams, h: float) -> float:
    """Explicit step bound ``cfl h^2 / (4 a (1 + 4 g) exp(c max|grad phi| h / 2))``.

    A cell loses at most ``a / h^2`` times its content times the sum of the
    face factors ``exp(s / 2)``, so the exponential of the largest potential
    jump caps the step that keeps ``rho`` in the box.

    Also keeps the exit outflow below the cell content (``p_ex dt / h``) and,
    if ``params.dt`` is set, never exceeds it.
    """
    phi = np.asarray(phi, dtype=float)
    grads = [np.abs(np.diff(phi, axis=ax)).max(initial=0.0) / h for ax in (0, 1)]
    gmax = max(grads)
    bound = params.cfl_safety * h * h / (
        4 * params.prefactor * (1 + 4 * params.push) * np.exp(min(0.5 * params.drift * gmax * h, 700.0)))
    if params.p_ex > 0:
        bound = min(bound, params.cfl_safety * h / params.p_ex)
    if params.dt is not None:
        bound = min(bound, params.dt)
    return bound


def _exit_row_mask(grid: GridIndexing) -> np.ndarray:
    mask = np.zeros(grid.nx, bool)
    mask[grid.exit_cells % grid.nx] = True
    return mask


def step(density, potential, params: PdeParams, grid: GridIndexing, dt: float | None = None,
         *, check: bool = True) -> tuple[np.ndarray, float]:
    """One explicit Euler step.  Returns ``(new density, mass that left)``.

    Raises :class:`PdeError` if a cell leaves ``[0, 1]`` by more than 1e-10
    or the mass change differs from the exit outflow by more than 1e-10.
    """
    rho = np.asarray(density, dtype=float)
    phi = np.asarray(getattr(potential, "values", potential), dtype=float)
    h = grid.dx
    if dt is None:
        dt = stable_dt(phi, params, h)
    fx, fy = face_fluxes(rho, phi, params, h)
    div = np.zeros_like(rho)
    div[:, :-1] -= fx
    div[:, 1:] += fx
    div[:-1, :] -= fy
    div[1:, :] += fy
    out_face = np.zeros(grid.nx)
    out_face[_exit_row_mask(grid)] = params.p_ex * rho[0, _exit_row_mask(grid)]
    div[0, :] -= out_face
    new = rho + dt / h * div
    outflow = dt * h * out_face.sum()
    if check:
        lo, hi = new.min(initial=0.0), new.max(initial=0.0)
        if lo < -BOX_TOL or hi > 1 + BOX_TOL:
            raise PdeError(f"density left [0, 1] (min {lo:.3e}, max {hi:.3e}); "
                           f"dt={dt:.3e} exceeds the stable bound {stable_dt(phi, params, h):.3e}?")
        balance = (rho.sum() - new.sum()) * h * h - outflow
        if abs(balance) > MASS_TOL * max(1.0, rho.sum() * h * h):
            raise PdeError(f"mass balance residual {balance:.3e}")
    return new, outflow


def entropy(density, potential, params: PdeParams, h: float) -> float:
    """Midpoint-rule entropy, with ``0 log 0 = 0``.

    Plain: ``rho log rho + (1 - rho) log(1 - rho) + c rho phi``.  With pushing the
    ``(1 - rho) log(1 - rho)`` term is weighted by ``(4g + 1)/(2g + 1)`` and
    ``(2 g rho + 1)/(2g + 1) log(2 g rho + 1)`` is added.
    """
    rho = np.asarray(density, dtype=float)
    phi = np.asarray(getattr(potential, "values", potential), dtype=float)
    g = params.push

    def xlogx(x):
        return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)

    dens = xlogx(rho) + (4 * g + 1) / (2 * g + 1) * xlogx(1 - rho) + params.drift * rho * phi
    if g > 0:
        dens = dens + (2 * g * rho + 1) / (2 * g + 1) * np.log1p(2 * g * rho)
    return float(dens.sum() * h * h)


@dataclass
class ScenarioResult:
    t: np.ndarray                       # model time of each record
    mass: np.ndarray                    # scaled mass (area units)
    measurement_density: np.ndarray     # persons per square meter
    entropy: np.ndarray
    snapshots: list = field(default_factory=list)   # (t, density) pairs
    steps: int = 0
    dt: float = 0.0
    time_scale: float = 1.0
    complete: bool = True

    @property
    def t_seconds(self) -> np.ndarray:
        return self.t * self.time_scale

    def peak(self) -> tuple[float, float]:
        """Largest measurement density and its model time."""
        k = int(np.argmax(self.measurement_density))
        return float(self.measurement_density[k]), float(self.t[k])

    def time_to_reach(self, level: float) -> float:
        """First recorded time the measurement density reaches ``level`` (inf if never)."""
        hit = np.flatnonzero(self.measurement_density >= level)
        return float(self.t[hit[0]]) if len(hit) else float("inf")


def initial_density(grid: GridIndexing, n_persons: float) -> np.ndarray:
    """Constant scaled density holding ``n_persons`` at packing density ``1/dx^2``."""
    rho0 = n_persons / grid.n_cells
    if rho0 > 1:
        raise ValueError(f"{n_persons} persons exceed the packing capacity of {grid.n_cells} cells")
    if rho0 < 0:
        raise ValueError("n_persons must be nonnegative")
    return np.full(grid.shape, rho0)


def simulate_scenario(grid: GridIndexing, n_persons: float, params: PdeParams, potential=None, *,
                      t_end: float = 2000.0, record_every: int = 10, snapshot_every: int = 0,
                      hughes_every: int = 0, max_steps: int = 10_000_000,
                      stop_fraction: float = 1e-3, density=None) -> ScenarioResult:
    """Evacuate a corridor filled with a constant density.

    Runs until the mass drops below ``stop_fraction`` of its start or
    ``t_end`` is reached.  ``hughes_every > 0`` recomputes the potential from
    the current density every that many steps (the coupled mode).
    """
    rho = initial_density(grid, n_persons) if density is None else np.array(density, float)
    if potential is None:
        potential = distance_potential(grid)
    phi = np.asarray(getattr(potential, "values", potential), dtype=float)
    h = grid.dx
    meas = grid.measurement_mask()
    rho_s = max_packing_density(h)
    dt = dt0 = stable_dt(phi, params, h)
    mass0 = rho.sum() * h * h

    ts, masses, dens, ents, snaps = [], [], [], [], []

    def record(t):
        ts.append(t)
        masses.append(rho.sum() * h * h)
        dens.append(rho[meas].mean() * rho_s)
        ents.append(entropy(rho, phi, params, h))

    t, n = 0.0, 0
    record(t)
    if snapshot_every:
        snaps.append((t, rho.copy()))
    complete = True
    while mass0 > 0 and rho.sum() * h * h > stop_fraction * mass0:
        if t >= t_end or n >= max_steps:
            complete = False
            break
        if hughes_every and n % hughes_every == 0:
            phi = hughes_potential(grid, rho).values
            dt = stable_dt(phi, params, h)
            if dt < STIFF_RATIO * dt0:
                raise PdeError(f"coupled potential made the step {dt0 / dt:.3g} times smaller "
                               f"than at the start; the coupled mode is too stiff here")
        rho, _ = step(rho, phi, params, grid, dt)
        t += dt
        n += 1
        if n % record_every == 0:
            record(t)
        if snapshot_every and n % snapshot_every == 0:
            snaps.append((t, rho.copy()))
    if n % record_every:
        record(t)
    return ScenarioResult(np.array(ts), np.array(masses), np.array(dens), np.array(ents), snaps,
                          n, dt, params.time_scale, complete)
