"""Stochastic cellular automaton for queuing at an exit."""

from .engine import (EnsembleStatistics, OccupancyGrid, RunStatistics, monte_carlo,
                     occupancy_frequencies,
                     rate_table_for, ring_velocity, run_seeds, run_to_exit, step_parallel,
                     step_parallel_pushing)
from .master import master_equation_step, master_equation_step_pushing
from .rates import SimParams, build_rate_table, door_attempt_probability, transition_rates

__all__ = [
    "EnsembleStatistics", "OccupancyGrid", "RunStatistics", "SimParams", "build_rate_table",
    "door_attempt_probability", "master_equation_step", "master_equation_step_pushing",
    "monte_carlo", "occupancy_frequencies", "rate_table_for", "ring_velocity", "run_seeds", "run_to_exit",
    "step_parallel", "step_parallel_pushing", "transition_rates",
]
