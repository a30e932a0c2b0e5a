"""Command-line entry point.

Every subcommand reads an optional scenario file, lets the common flags
override it and writes plot-ready CSV and JSON into ``--out``.  Each output
carries the manifest hash and the scenario text so a file found on its own
can be traced back to the run that made it.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import calibrate as cal
from . import config as cfgmod
from . import io
from . import pde, potential, riemann
from .ca import SimParams, monte_carlo
from .ca.master import MasterEquationError
from .geometry import GeometryError, build_corridor

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
QUICK_RUNS = 100

log = logging.getLogger("crowdqueue")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


# --- shared plumbing ---------------------------------------------------------

class Context:
    """Resolved configuration, output directory and manifest of one invocation."""

    def __init__(self, args, subcommand: str):
        try:
            self.cfg = cfgmod.load(args.config) if args.config else cfgmod.default()
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read config {args.config}: {exc}") from exc
        run = self.cfg.run
        if args.seed is not None:
            run.seed = args.seed
        if args.runs is not None:
            if args.runs < 1:
                raise cfgmod.ConfigError("--runs", "must be >= 1")
            run.runs = args.runs
        if args.threads is not None:
            run.threads = args.threads
        self.quick = bool(args.quick)
        if self.quick and args.runs is None:
            run.runs = min(run.runs, QUICK_RUNS)
        self.out = Path(args.out)
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot create output directory {self.out}: {exc}") from exc
        self.manifest = io.RunManifest(
            subcommand=subcommand, config_path=self.cfg.source, out_dir=str(self.out),
            seed=run.seed, runs=run.runs, config_text=self.cfg.text,
            extra={"quick": self.quick, "effective_config": self.cfg.as_dict(),
                   "injected_defaults": self.cfg.injected},
        )
        self.written: list[str] = []

    @property
    def threads(self) -> int | None:
        return self.cfg.run.threads or None

    def meta(self, extra: dict | None = None) -> dict:
        text = self.cfg.text if self.cfg.text.strip() else "(built-in defaults)"
        return self.manifest.stamp({"subcommand": self.manifest.subcommand,
                                    "seed": self.cfg.run.seed, "config": text,
                                    **(extra or {})})

    def _path(self, name: str) -> Path:
        self.written.append(name)
        return self.out / name

    def field(self, name, values, extra=None):
        io.write_field_csv(self._path(name), values, self.meta(extra))

    def table(self, name, columns, extra=None):
        io.write_table_csv(self._path(name), columns, self.meta(extra))

    def json(self, name, payload: dict):
        body = {"manifest": self.manifest.digest, "manifest_fields": self.manifest.as_dict(),
                **payload}
        io.write_json(self._path(name), body)


def _corridor(ctx: Context, width: float):
    c = ctx.cfg.corridor
    exit_w = min(c.exit_width_m, width)
    return build_corridor(width, c.length_m, exit_w, c.cell_size_m)


# --- subcommands ---------------------------------------------------------------

def cmd_simulate(ctx: Context) -> dict:
    """Monte Carlo ensembles, one per configured corridor."""
    ca = ctx.cfg.ca
    runs = ctx.cfg.run.runs
    scenarios = []
    for k, (width, n) in enumerate(ctx.cfg.scenarios()):
        corridor, grid = _corridor(ctx, width)
        params = SimParams(beta=ca.beta, mu=ca.mu, p_ex=ca.p_ex, dt=ca.dt, gamma=ca.gamma,
                           seed=ctx.cfg.run.seed, n_agents=n, rate_form=ca.rate_form,
                           normalization=ca.normalization, exit_rule=ca.exit_rule)
        ens = monte_carlo(grid, params, n_runs=runs, threads=ctx.threads, density_map=True,
                          series_steps=ca.series_steps, max_steps=ca.max_steps)
        info = {"width_m": width, "n_agents": n, "measurement_area": grid.measurement_note}
        counts, edges = ens.histogram(ca.histogram_bins)
        ctx.table(f"exit_times_hist_{k}.csv",
                  {"bin_left_s": edges[:-1], "bin_right_s": edges[1:], "count": counts}, info)
        ctx.field(f"density_map_{k}.csv", ens.density_map,
                  {**info, "units": "persons per m^2, time maximum of the ensemble mean"})
        t = np.arange(len(ens.mean_series)) * params.dt
        sem = np.sqrt(np.maximum(ens.series_sq - ens.mean_series ** 2, 0.0)
                      / max(ens.n_runs - 1, 1))
        ctx.table(f"density_series_{k}.csv",
                  {"t_s": t, "mean_density": ens.mean_series, "sem": sem}, info)
        peak, peak_sem, peak_t = ens.peak_density()
        meas = grid.measurement_mask()
        scenarios.append({
            **info, "runs": ens.n_runs,
            "exit_time": ens.mean_exit_time, "exit_time_std": ens.std_exit_time,
            "exit_time_sem": ens.sem_exit_time, "n_incomplete": ens.n_incomplete,
            "mean_max_density": ens.mean_max_density, "peak_mean_density": peak,
            "peak_mean_density_sem": peak_sem, "peak_time_s": peak_t,
            "map_measurement_max": float(ens.density_map[meas].max()),
        })
    ctx.json("summary.json", {"params": ctx.cfg.as_dict()["ca"], "scenarios": scenarios,
                              "low_fidelity": ctx.quick})
    return {"scenarios": scenarios}


def _pde_params(ctx: Context, width: float, variant: str | None = None,
                gamma: float | None = None) -> pde.PdeParams:
    p = ctx.cfg.pde
    c = ctx.cfg.corridor
    scale = pde.ca_time_scale(p.ca_dt, c.cell_size_m)
    p_ex = p.p_ex
    if p.p_ex_units == "persons_per_second":
        p_ex = pde.door_capacity_to_outflow(p.p_ex, min(c.exit_width_m, width), c.cell_size_m,
                                            scale)
    if p.closed:
        p_ex = 0.0
    return pde.PdeParams.from_mu(p.mu, beta=p.beta, p_ex=p_ex,
                                 gamma=p.gamma if gamma is None else gamma,
                                 variant=variant or p.variant, time_scale=scale)


def cmd_pde(ctx: Context) -> dict:
    """Macroscopic evacuation of every configured corridor."""
    p = ctx.cfg.pde
    quick_end = min(p.t_end, 200.0) if ctx.quick else p.t_end
    variants = [(p.variant, None)]
    if p.compare_pushing:
        variants = [("standard", 0.0), ("pushing", p.gamma or 1.0)]
    out = []
    for k, (width, n) in enumerate(ctx.cfg.scenarios()):
        _, grid = _corridor(ctx, width)
        for variant, gamma in variants:
            params = _pde_params(ctx, width, variant, gamma)
            res = pde.simulate_scenario(grid, n, params, t_end=quick_end,
                                        record_every=p.record_every,
                                        snapshot_every=p.snapshot_every,
                                        hughes_every=p.hughes_every,
                                        stop_fraction=p.stop_fraction)
            tag = f"{k}_{variant}"
            info = {"width_m": width, "n_persons": n, "variant": variant,
                    "gamma": params.gamma, "p_ex_model": params.p_ex,
                    "seconds_per_unit": params.time_scale, "dt": res.dt}
            ctx.table(f"pde_series_{tag}.csv",
                      {"t": res.t, "t_s": res.t_seconds, "mass": res.mass,
                       "measurement_density": res.measurement_density,
                       "entropy": res.entropy}, info)
            for s, (ts, rho) in enumerate(res.snapshots):
                ctx.field(f"pde_snapshot_{tag}_{s:04d}.csv", rho, {**info, "t": ts})
            peak, t_peak = res.peak()
            half = res.time_to_reach(0.5 * peak) if peak > 0 else float("inf")
            out.append({**info, "steps": res.steps, "complete": res.complete,
                        "final_mass": float(res.mass[-1]), "initial_mass": float(res.mass[0]),
                        "peak_density": peak, "peak_time_s": t_peak * params.time_scale,
                        "half_peak_time_s": half * params.time_scale,
                        "evacuation_time_s": float(res.t_seconds[-1])})
    ctx.json("summary.json", {"runs": out, "low_fidelity": ctx.quick})
    return {"runs": out}


def cmd_riemann(ctx: Context, args) -> dict:
    r = ctx.cfg.riemann
    rho0 = r.rho0 if args.rho0 is None else args.rho0
    p_ex = r.p_ex if args.p_ex is None else args.p_ex
    L = r.L if args.L is None else args.L
    size = r.map_size if args.map is None else args.map
    try:
        problem = riemann.RiemannProblem(rho0, p_ex, L)
    except ValueError as exc:
        raise cfgmod.ConfigError("riemann", str(exc)) from exc
    sol = riemann.solve(problem)
    times = sol.exit_time * np.array([0.0, 0.1, 0.25, 0.5, 0.75, 0.9])
    x = np.linspace(0.0, 1.05 * L, r.n_points)
    ctx.table("riemann_profile.csv",
              {"x": x, **{f"rho_t{k}": sol.evaluate(x, t) for k, t in enumerate(times)}},
              {"times": times.tolist(), "regime": sol.regime})
    payload = {"solution": sol.as_dict(), "profile_times": times}
    if size:
        if size < 2:
            raise cfgmod.ConfigError("--map", "needs at least 2 points per axis")
        rhos = (np.arange(size) + 0.5) / size
        pexs = (np.arange(size) + 1.0) / size
        emap = riemann.exit_time_map(pexs, rhos, L)
        ctx.field("riemann_exit_time_map.csv", emap,
                  {"rows": "rho0", "columns": "p_ex", "rho0": rhos.tolist(),
                   "p_ex": pexs.tolist(), "L": L})
        payload["map"] = {"size": size, "monotone_in_rho0": bool(np.all(np.diff(emap, axis=0) > 0))}
    ctx.json("riemann.json", payload)
    return payload


def cmd_calibrate(ctx: Context) -> dict:
    c = ctx.cfg.calibrate
    runs = ctx.cfg.run.runs
    seed = ctx.cfg.run.seed
    if ctx.quick:
        betas = np.linspace(c.beta_min, c.beta_max, 5)
        pexs = np.linspace(c.pex_min, c.pex_max, 6)
    else:
        betas = np.linspace(c.beta_min, c.beta_max, c.beta_points)
        pexs = np.linspace(c.pex_min, c.pex_max, c.pex_points)
    fit = cal.REFERENCE_FIT
    nbar = None
    if c.fit == "measured":
        nb_runs = min(c.nbar_runs, 200) if ctx.quick else c.nbar_runs
        fit, nbar = cal.measured_fit(n_runs=nb_runs, seed=seed)

    def progress(done, total):
        log.info("grid point %d / %d", done, total)

    res = cal.grid_search(betas, pexs, fit=fit, n_runs=runs, seed=seed, threads=ctx.threads,
                          targets=tuple(c.targets_mu1), progress=progress)
    report = res.as_dict()
    report.update(targets_mu1=list(c.targets_mu1), targets_mu0=list(c.targets_mu0),
                  injected_defaults=ctx.cfg.injected, low_fidelity=ctx.quick,
                  means_at_min=res.means[list(betas).index(res.beta_min),
                                         list(pexs).index(res.pex_min)])
    if nbar is not None:
        report["nbar"] = [{"beta": m.beta, "mean": m.mean, "sem": m.sem} for m in nbar]
    grid_cell = (betas[1] - betas[0], pexs[1] - pexs[0])
    report["within_one_cell_of_reference"] = bool(
        abs(res.beta_min - 3.84) <= grid_cell[0] and abs(res.pex_min - 1.15) <= grid_cell[1])
    if c.estimate_mu0:
        m = cal.estimate_mu0(res.beta_min, res.pex_min, res.dt_min,
                             targets=tuple(c.targets_mu0), n_runs=runs, seed=seed,
                             threads=ctx.threads, coarse_step=1.0 if ctx.quick else 0.5)
        report.update(mu0=m.mu0, mu0_Z=m.Z, mu0_means=m.means,
                      mu0_scan={"mu": m.mus, "Z": m.Zs})
    ctx.field("calibration_surface.csv", res.surface,
              {"rows": "beta", "columns": "p_ex", "beta": betas.tolist(),
               "p_ex": pexs.tolist(), "low_fidelity": ctx.quick})
    ctx.json("calibration.json", report)
    return report


def cmd_potential(ctx: Context) -> dict:
    report = {}
    demos = ctx.cfg.potential.demos
    if "corridor" in demos:
        rows = []
        for k, (width, _) in enumerate(ctx.cfg.scenarios()):
            _, grid = _corridor(ctx, width)
            dist = potential.distance_potential(grid)
            eik = potential.eikonal_fast_sweeping(grid)
            diff = float(np.abs(eik.values - dist.values).max())
            info = {"width_m": width, "dx": grid.dx}
            ctx.field(f"potential_distance_{k}.csv", dist.values, info)
            ctx.field(f"potential_eikonal_{k}.csv", eik.values, {**info, "max_abs_diff": diff})
            rows.append({**info, "max_abs_diff": diff, "within_2dx": diff <= 2 * grid.dx,
                         "sweeps": eik.iterations, "converged": eik.converged})
        report["corridor"] = rows
    builders = {"convex": potential.convex_obstacle_demo, "u_shape": potential.u_obstacle_demo}
    for name in ("convex", "u_shape"):
        if name not in demos:
            continue
        demo = builders[name](ctx.cfg.potential.demo_size_m, ctx.cfg.potential.demo_dx)
        for kind, fieldv in (("eikonal", demo.eikonal), ("laplace", demo.laplace)):
            vals = np.where(demo.obstacles, np.nan, fieldv.values)
            ctx.field(f"{name}_{kind}.csv", vals, {"demo": name, "kind": kind,
                                                   "obstacle_cells": "nan"})
        report[name] = {"agreement": demo.agreement(), "probe": demo.probe_descent(),
                        "laplace_residual": demo.laplace.residual,
                        "laplace_converged": demo.laplace.converged}
    ctx.json("potential.json", report)
    return report


# --- argument parsing ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="scenario TOML file")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory")
    common.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    common.add_argument("--runs", type=int, help="ensemble size (overrides run.runs)")
    common.add_argument("--threads", type=int, help="worker threads; results do not depend on it")
    common.add_argument("--quick", action="store_true",
                        help="small ensembles and coarse grids; outputs are flagged")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="crowdqueue", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="cellular automaton ensembles")
    sub.add_parser("pde", parents=[common], help="macroscopic evacuation scenarios")
    rp = sub.add_parser("riemann", parents=[common], help="exact 1-D exit solutions")
    rp.add_argument("rho0", type=float, nargs="?")
    rp.add_argument("p_ex", type=float, nargs="?")
    rp.add_argument("L", type=float, nargs="?")
    rp.add_argument("--map", type=int, metavar="N", help="N x N exit-time matrix")
    sub.add_parser("calibrate", parents=[common], help="grid search for (beta, p_ex) and mu0")
    sub.add_parser("potential", parents=[common], help="potential solvers and obstacle demos")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx = Context(args, args.command)
        if args.command == "riemann":
            result = cmd_riemann(ctx, args)
        else:
            result = {"simulate": cmd_simulate, "pde": cmd_pde, "calibrate": cmd_calibrate,
                      "potential": cmd_potential}[args.command](ctx)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (cfgmod.ConfigError, GeometryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MasterEquationError, pde.PdeError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    del result
    print("\n".join(str(ctx.out / name) for name in ctx.written))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
