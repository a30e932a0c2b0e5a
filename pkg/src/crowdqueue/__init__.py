"""Multiscale models of a crowd queuing at a narrow exit.

Subpackages and modules:

* :mod:`crowdqueue.geometry`: corridor grids and the measurement area
* :mod:`crowdqueue.potential`: distance, eikonal, Laplace and Hughes potentials
* :mod:`crowdqueue.ca`: the stochastic cellular automaton and its master equation
* :mod:`crowdqueue.pde`: finite-volume solver of the macroscopic model
* :mod:`crowdqueue.riemann`: exact 1-D exit solutions and a Godunov oracle
* :mod:`crowdqueue.calibrate`: fitting the automaton to measured exit times
"""

from .geometry import GridIndexing, build_corridor, max_packing_density

__version__ = "0.1.0"

__all__ = ["GridIndexing", "build_corridor", "max_packing_density", "__version__"]
