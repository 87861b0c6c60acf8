"""Simulation toolkit for a cavity-based quantum gas microscope.

Submodules
----------
hilbert   : truncated bases, operators, density matrices
focusing  : dark-state focusing functions and resolution budget
sme       : stochastic and unconditional master equation steppers
homodyne  : homodyne currents, filtering, SNR, ensemble statistics
manybody  : fermions in a box with a hard impurity (Friedel scan)
scanctl   : scan schedules, trajectory and ensemble drivers
cli       : config files, output tables, command line entry point
"""
__version__ = "0.1.0"
