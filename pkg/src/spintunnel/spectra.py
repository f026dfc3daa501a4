"""Exact small-N reference spectra via total-spin block diagonalization.

H commutes with S^2, so the 2^N dimensional problem splits into sectors of
total spin S with multiplicity Omega(N, S) = C(N, N/2-S) - C(N, N/2-S-1).
Within a sector the Hamiltonian is symmetric tridiagonal in the Sz basis:

    <M|H|M>     = -N * g(2M/N)
    <M+1|H|M>   = -Gamma * sqrt((S+M+1)(S-M))

These exact results back the quantum Monte Carlo equilibrium tests and the
free-energy cross-checks; they are feasible up to a few dozen spins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import logsumexp

from .model import ModelSpec


def multiplicity(n: int, two_s: int) -> int:
    """Number of total-spin-S multiplets for n spins, exact integer.

    two_s is 2S; it must have the parity of n and lie in [n mod 2, n].
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    if two_s < 0 or two_s > n or (n - two_s) % 2 != 0:
        raise ValueError(f"invalid sector two_s={two_s} for n={n}")
    k = (n - two_s) // 2
    first = math.comb(n, k)
    second = math.comb(n, k - 1) if k >= 1 else 0
    return first - second


def sector_bands(n: int, two_s: int, model: ModelSpec):
    """Diagonal and subdiagonal of the spin-S block in the Sz basis.

    Basis states run over M = -S .. S in integer steps (2M has the parity
    of n), so the block is (two_s + 1) x (two_s + 1).
    """
    two_m = np.arange(-two_s, two_s + 1, 2)
    diag = -n * np.asarray(model.g(two_m / n), dtype=float)
    s = 0.5 * two_s
    m_low = 0.5 * two_m[:-1]
    off = -model.gamma * np.sqrt((s + m_low + 1.0) * (s - m_low))
    return diag, off


def sector_hamiltonian(n: int, two_s: int, model: ModelSpec) -> np.ndarray:
    """Dense symmetric tridiagonal Hamiltonian block for total spin S."""
    diag, off = sector_bands(n, two_s, model)
    h = np.diag(diag)
    idx = np.arange(len(off))
    h[idx, idx + 1] = off
    h[idx + 1, idx] = off
    return h


@dataclass(frozen=True)
class SectorSpectrum:
    """Eigenvalues (ascending) and orthonormal eigenvector columns of a block."""

    n: int
    two_s: int
    energies: np.ndarray
    vectors: np.ndarray


def sector_spectrum(n: int, two_s: int, model: ModelSpec) -> SectorSpectrum:
    diag, off = sector_bands(n, two_s, model)
    if len(diag) == 1:
        return SectorSpectrum(n, two_s, diag.copy(), np.ones((1, 1)))
    energies, vectors = eigh_tridiagonal(diag, off)
    return SectorSpectrum(n, two_s, energies, vectors)


def _sectors(n: int):
    return range(n % 2, n + 1, 2)


def equilibrium_mz_distribution(n: int, model: ModelSpec, beta: float):
    """Exact thermal distribution of the z magnetization on one time slice.

    Returns (two_m, prob): 2M values -n, -n+2, .., n and the probabilities
    P(M) proportional to sum_S Omega(N,S) <M|exp(-beta H_S)|M>.  beta = 0
    reduces to the binomial counting measure.
    """
    if beta < 0.0:
        raise ValueError("beta must be non-negative")
    two_m_all = np.arange(-n, n + 1, 2)
    weights = np.zeros(n + 1)
    # common energy shift keeps the exponentials in range
    e_min = min(float(sector_spectrum(n, ts, model).energies[0])
                for ts in _sectors(n))
    for two_s in _sectors(n):
        spec = sector_spectrum(n, two_s, model)
        omega = multiplicity(n, two_s)
        boltz = np.exp(-beta * (spec.energies - e_min))
        diag = (spec.vectors ** 2) @ boltz  # <M|e^{-beta H}|M> by eigensum
        offset = (n - two_s) // 2
        weights[offset:n + 1 - offset] += omega * diag
    prob = weights / weights.sum()
    return two_m_all, prob


def free_energy_exact(n: int, model: ModelSpec, beta: float) -> float:
    """Exact free energy per spin, -ln(sum_S Omega_S Tr e^{-beta H_S})/(beta*N)."""
    if beta <= 0.0:
        raise ValueError("beta must be positive")
    log_terms = []
    for two_s in _sectors(n):
        spec = sector_spectrum(n, two_s, model)
        log_terms.append(math.log(multiplicity(n, two_s))
                         + logsumexp(-beta * spec.energies))
    return -float(logsumexp(log_terms)) / (beta * n)
