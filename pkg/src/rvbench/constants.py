"""Physical constants shared by the task generator and the evaluator.

Single source of truth: both sides must use bit-identical values, otherwise
semi-amplitudes computed during generation and grading drift apart.
"""

# CODATA-2018 Newtonian constant, m^3 kg^-1 s^-2
G_SI = 6.67430e-11

# IAU nominal mass parameters (GM) divided by G, kg
M_SUN_KG = 1.3271244e20 / G_SI
M_JUP_KG = 1.2668653e17 / G_SI

SECONDS_PER_DAY = 86400.0

TWO_PI = 6.283185307179586
