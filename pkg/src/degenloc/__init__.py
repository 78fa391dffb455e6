"""Numerics for quasi-periodic Schrödinger operators with a degenerate weight.

Modules: ``model`` (torus functions, frequencies, weights), ``operator``
(finite restrictions), ``greens`` (Green's functions and lemma checks),
``msa`` (exceptional sets and the scale ladder), ``spectrum``
(eigenpairs, localization, Lyapunov oracle) and ``cli``.
"""

__version__ = "0.1.0"
