"""Exact entropy solutions of the one-dimensional inviscid exit problem.

The density on the half line ``x >= 0`` solves

    rho_t + j(rho)_x = 0,   j(rho) = -rho (1 - rho),

starting from ``rho0`` on ``[0, L]`` and zero beyond.  Everything moves toward
the exit at ``x = 0``, where the outflow condition ``j = p_ex rho`` is imposed
in its relaxed form: the boundary trace must lie in

    E[1 - p_ex] = [0, p_ex] u {1 - p_ex}   if p_ex < 1/2,
                  [0, 1/2]                 otherwise.

The flux is convex, characteristics have speed ``2 rho - 1`` and the back of
the crowd is a shock moving left at ``-(1 - rho0)``.  Which structure forms at
the exit depends on where ``(rho0, p_ex)`` lies in the bifurcation diagram;
inputs on an interface line behave like the constant profile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

REGIMES = ("constant", "boundary_shock", "rarefaction_subhalf", "rarefaction_superhalf")
INTERFACE_TOL = 1e-12
CFL_MAX = 0.9


def j(rho):
    """Flux ``-rho (1 - rho)``."""
    return -rho * (1.0 - rho)


def j_prime(rho):
    """Characteristic speed ``2 rho - 1``."""
    return 2.0 * rho - 1.0


@dataclass(frozen=True)
class RiemannProblem:
    rho0: float
    p_ex: float
    L: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.rho0 < 1.0:
            raise ValueError(f"rho0 must lie in (0, 1), got {self.rho0}")
        if not 0.0 < self.p_ex <= 1.0:
            raise ValueError(f"p_ex must lie in (0, 1], got {self.p_ex}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")


def admissible_trace(p_ex: float, value: float, tol: float = 1e-12) -> bool:
    """Whether ``value`` belongs to the relaxed boundary set ``E[1 - p_ex]``."""
    if p_ex < 0.5:
        return -tol <= value <= p_ex + tol or abs(value - (1.0 - p_ex)) <= tol
    return -tol <= value <= 0.5 + tol


def _near(a: float, b: float) -> bool:
    return abs(a - b) <= INTERFACE_TOL


def near_interface(problem: RiemannProblem) -> bool:
    """True when the input sits within 1e-12 of a line of the bifurcation diagram."""
    r, p = problem.rho0, problem.p_ex
    return _near(r, p) or _near(r, 1 - p) or _near(r, 0.5) or _near(p, 0.5)


def classify(problem: RiemannProblem) -> str:
    r, p = problem.rho0, problem.p_ex
    if p < 0.5 and not _near(p, 0.5):
        if r <= p or _near(r, p) or _near(r, 1 - p):
            return "constant"
        if r < 1 - p:
            return "boundary_shock"
        return "rarefaction_superhalf"
    # p >= 1/2 (up to the tolerance)
    if r <= 0.5 or _near(r, 0.5):
        return "constant"
    return "rarefaction_superhalf" if 1 - p >= 0.5 - INTERFACE_TOL else "rarefaction_subhalf"


@dataclass(frozen=True)
class Event:
    t: float
    x: float
    kind: str


@dataclass(frozen=True)
class ShockState:
    """A shock at time ``t``: position, left and right states and speed."""

    x: float
    left: float
    right: float
    speed: float


@dataclass
class RiemannSolution:
    problem: RiemannProblem
    regime: str
    exit_time: float
    events: list[Event] = field(default_factory=list)
    boundary_value: float = 0.0          # trace at x = 0+ while mass remains
    near_interface: bool = False

    # ----- geometry of the waves -----------------------------------------
    def _back_shock(self, t):
        r, L = self.problem.rho0, self.problem.L
        return L - (1 - r) * t

    def _curved_shock(self, t):
        r, L = self.problem.rho0, self.problem.L
        return 2 * math.sqrt(L * r * t) - t

    def _event(self, kind) -> Event:
        return next(e for e in self.events if e.kind == kind)

    def shocks(self, t: float) -> list[ShockState]:
        """Shocks present at time ``t`` (``0 < t < exit_time``)."""
        p, r, L = self.problem.p_ex, self.problem.rho0, self.problem.L
        if not 0 < t < self.exit_time:
            return []
        out = []
        if self.regime == "constant":
            out.append(ShockState(self._back_shock(t), r, 0.0, -(1 - r)))
        elif self.regime == "boundary_shock":
            c = self._event("collision")
            if t < c.t:
                out.append(ShockState((r - p) * t, 1 - p, r, r - p))
                out.append(ShockState(self._back_shock(t), r, 0.0, -(1 - r)))
            else:
                out.append(ShockState(c.x - p * (t - c.t), 1 - p, 0.0, -p))
        else:
            t2 = self._event("fan_reaches_back").t
            t4 = self._event("shock_reaches_fan_tail").t if self.regime == "rarefaction_superhalf" \
                else self.exit_time
            if t < t2:
                out.append(ShockState(self._back_shock(t), r, 0.0, -(1 - r)))
            elif t < t4:
                x = self._curved_shock(t)
                out.append(ShockState(x, (x + t) / (2 * t), 0.0, math.sqrt(L * r / t) - 1))
            else:
                e = self._event("shock_reaches_fan_tail")
                out.append(ShockState(e.x - p * (t - e.t), 1 - p, 0.0, -p))
        return out

    # ----- pointwise values -----------------------------------------------
    def _value(self, x: float, t: float) -> float:
        p, r, L = self.problem.p_ex, self.problem.rho0, self.problem.L
        if x < 0 or t < 0:
            raise ValueError("evaluate needs x >= 0 and t >= 0")
        if t == 0:
            return r if x <= L else 0.0
        if t >= self.exit_time:
            return 0.0
        if self.regime == "constant":
            return r if x <= self._back_shock(t) else 0.0
        if self.regime == "boundary_shock":
            c = self._event("collision")
            if t < c.t:
                if x <= (r - p) * t:
                    return 1 - p
                return r if x <= self._back_shock(t) else 0.0
            return 1 - p if x <= c.x - p * (t - c.t) else 0.0
        # rarefaction regimes
        bar = self.boundary_value
        t2 = self._event("fan_reaches_back").t
        if self.regime == "rarefaction_superhalf":
            e4 = self._event("shock_reaches_fan_tail")
            if t >= e4.t:
                return 1 - p if x <= e4.x - p * (t - e4.t) else 0.0
        front = self._back_shock(t) if t < t2 else self._curved_shock(t)
        if x > front:
            return 0.0
        if x <= (2 * bar - 1) * t:
            return bar
        if t < t2 and x >= (2 * r - 1) * t:
            return r
        return (x + t) / (2 * t)

    def evaluate(self, x, t):
        """Density at ``(x, t)``; at a shock the left limit is returned."""
        if np.ndim(x) == 0 and np.ndim(t) == 0:
            return self._value(float(x), float(t))
        xs, ts = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        return np.vectorize(self._value, otypes=[float])(xs, ts)

    def mass(self, t: float, n_points: int = 10_000) -> float:
        """Midpoint-rule mass on ``[0, L]``."""
        L = self.problem.L
        xs = (np.arange(n_points) + 0.5) * L / n_points
        return float(self.evaluate(xs, t).sum() * L / n_points)

    def as_dict(self) -> dict:
        return {
            "rho0": self.problem.rho0, "p_ex": self.problem.p_ex, "L": self.problem.L,
            "regime": self.regime, "exit_time": self.exit_time,
            "boundary_value": self.boundary_value, "near_interface": self.near_interface,
            "events": [{"t": e.t, "x": e.x, "kind": e.kind} for e in self.events],
        }


def solve(problem: RiemannProblem) -> RiemannSolution:
    r, p, L = problem.rho0, problem.p_ex, problem.L
    regime = classify(problem)
    events = []
    if regime == "constant":
        exit_time = L / (1 - r)
        boundary = r
    elif regime == "boundary_shock":
        t1 = L / (1 - p)
        x1 = (1 - (1 - r) / (1 - p)) * L
        exit_time = r * L / (p * (1 - p))
        events.append(Event(t1, x1, "collision"))
        boundary = 1 - p
    else:
        boundary = max(0.5, 1 - p)
        events.append(Event(L / r, (2 * r - 1) / r * L, "fan_reaches_back"))
        if regime == "rarefaction_subhalf":
            exit_time = 4 * r * L
        else:
            t4 = L * r / (1 - p) ** 2
            events.append(Event(t4, L * (1 - 2 * p) * r / (1 - p) ** 2, "shock_reaches_fan_tail"))
            exit_time = r * L / (p * (1 - p))
    events.append(Event(exit_time, 0.0, "exit"))
    return RiemannSolution(problem, regime, exit_time, events, boundary, near_interface(problem))


def evaluate(solution: RiemannSolution, x, t):
    return solution.evaluate(x, t)


def godunov_flux(a, b):
    """Godunov flux of the convex ``j`` between left state ``a`` and right state ``b``."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    ja, jb = j(a), j(b)
    rising = np.minimum(ja, jb)
    rising = np.where((a <= 0.5) & (0.5 <= b), -0.25, rising)
    return np.where(a <= b, rising, np.maximum(ja, jb))


@dataclass
class GodunovResult:
    x: np.ndarray                 # cell centers
    rho: np.ndarray               # density at t_end
    t: np.ndarray                 # sample times of the mass record
    mass: np.ndarray
    dx: float
    dt: float
    depletion_time: float | None  # first time the mass fell below the threshold


def godunov_oracle(problem: RiemannProblem, n_cells: int, t_end: float, *, cfl: float = CFL_MAX,
                   mass_threshold: float = 1e-9) -> GodunovResult:
    """First-order Godunov scheme on ``[0, L]``.

    The exit ghost cell is held at ``1 - p_ex`` and the far ghost at 0; the
    boundary relaxation emerges from the Riemann problem at the exit face.
    ``depletion_time`` is the first time the mass drops to ``mass_threshold``
    times its initial value.
    """
    if n_cells < 10:
        raise ValueError("n_cells must be >= 10")
    if not 0 < cfl <= CFL_MAX:
        raise ValueError(f"CFL number {cfl} outside (0, {CFL_MAX}]")
    L = problem.L
    dx = L / n_cells
    dt = cfl * dx        # max |j'| = 1 on [0, 1]
    rho = np.full(n_cells, problem.rho0)
    ghost = 1.0 - problem.p_ex
    m0 = rho.sum() * dx
    ts, ms = [0.0], [m0]
    depletion = None
    t = 0.0
    while t < t_end - 1e-15:
        h = min(dt, t_end - t)
        padded = np.concatenate(([ghost], rho, [0.0]))
        f = godunov_flux(padded[:-1], padded[1:])
        rho = rho - h / dx * (f[1:] - f[:-1])
        t += h
        m = rho.sum() * dx
        ts.append(t)
        ms.append(m)
        if depletion is None and m <= mass_threshold * m0:
            depletion = t
    x = (np.arange(n_cells) + 0.5) * dx
    return GodunovResult(x, rho, np.array(ts), np.array(ms), dx, dt, depletion)


def exit_time_map(pex_grid, rho0_grid, L: float = 1.0) -> np.ndarray:
    """Exit times with ``rho0`` along rows and ``p_ex`` along columns."""
    pex_grid = np.asarray(pex_grid, float)
    rho0_grid = np.asarray(rho0_grid, float)
    out = np.empty((len(rho0_grid), len(pex_grid)))
    for a, r in enumerate(rho0_grid):
        for b, p in enumerate(pex_grid):
            out[a, b] = solve(RiemannProblem(float(r), float(p), L)).exit_time
    return out
