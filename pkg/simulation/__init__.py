"""Numerical core of the lab: grids, SDE simulation, the Tsirelson construction,
measure changes, the HJB solver and Monte Carlo estimators."""
