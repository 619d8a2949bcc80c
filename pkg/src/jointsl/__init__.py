"""Stochastic localization: simulation, joint couplings, distances and fitting."""
