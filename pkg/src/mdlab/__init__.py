"""Pseudo-spectral laboratory for the massless Maxwell-Dirac system in Coulomb gauge.

Subpackages cover the spinor algebra (``clifford``), the periodic spectral
toolbox (``grid``, ``multipliers``), the bilinear nonlinearity decomposition
(``nonlinearity``), time integration and Picard iteration (``evolve``), the
pseudodifferential renormalization machinery (``parametrix``), and the
cone-geometry / null-form measurement harness (``nullform``).
"""

__version__ = "0.1.0"
