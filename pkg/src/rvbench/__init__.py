"""Seed-deterministic radial-velocity exoplanet discovery benchmark.

Synthesizes physics-grounded RV tasks, grades candidate planetary systems
against hidden truth with four pass/fail criteria, runs a deterministic
classical solver baseline, and serves iterative evaluation episodes over a
newline-delimited JSON protocol.
"""

__version__ = "0.1.0"
