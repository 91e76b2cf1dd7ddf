"""Finite-difference Dean-Kawasaki simulation toolkit.

Subpackages:
    grid       periodic grids, grid functions, finite-difference operators
    heat       test functions and exact heat-semigroup flows
    particles  exact Brownian particle ensembles and closed-form oracles
    dynamics   the stochastic Dean-Kawasaki integrator and monitors
    moments    seeded parallel Monte Carlo moment estimation
    presets    bundled experiment configurations
    cli        command-line entry point
"""

__version__ = "0.1.0"
