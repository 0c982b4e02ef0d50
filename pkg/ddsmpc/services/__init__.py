"""Numerical services: PCE algebra, simulation, Hankel data, OCPs and the MPC loop."""
