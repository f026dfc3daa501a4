"""Escape-rate exponents for mean-field transverse-field spin models.

Two independent routes to the metastable decay exponent alpha:

* a thermally-assisted instanton (WKB) calculation on the collective
  magnetization (`wkb`, `propagator`),
* continuous-time worldline quantum Monte Carlo escape runs (`qmc`) with
  finite-size scaling fits (`analysis`).

Exact small-N diagonalization (`spectra`) anchors both.
"""

__version__ = "0.1.0"
