"""Numerical laboratory for diffusions with repelling invariant surfaces.

Two halves: a deterministic cluster-tree engine that computes characteristic
exponents and metastable distributions exactly (``hierarchy``, ``exponents``),
and a Monte Carlo side that verifies the asymptotic laws on desk-scale models
(``model``, ``integrate``, ``montecarlo``, ``game``, ``semimarkov``).
"""

__version__ = "0.1.0"
