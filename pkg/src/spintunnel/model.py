"""Mean-field spin model definitions and static (single-site) thermodynamics.

The Hamiltonian is H = -2*Gamma*Sx - N*g(2*Sz/N) for N spins with total-spin
operators Sx, Sz.  Everything downstream is controlled by the interaction
density g(m), a polynomial in the scaled magnetization m plus an optional
narrow "spike" barrier used in the quantum-annealing scaling studies:

    g(m) = g_poly(m) - delta_g * f((m - m_b) / delta_m)

The semiclassical effective potential at fixed spin-length fraction ell is

    U_ell(m) = -Gamma*sqrt(ell^2 - m^2) - g(m)

and the static (time-independent saddle) free energy per spin is

    F(m) = m*g'(m) - g(m) - (1/beta)*ln(2*cosh(beta*sqrt(g'(m)^2 + Gamma^2)))

whose extrema carry a self-consistent length ell = tanh(beta*sqrt(g'^2+Gamma^2)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_SPIKE_SHAPES = ("gaussian", "rectangular", "triangular")


class DomainError(ValueError):
    """Argument outside the physical domain of an operation."""


class MonostableError(RuntimeError):
    """The static free energy has a single extremum: no metastable state."""


class NotCurieWeissError(ValueError):
    """Operation defined only for the pure Curie-Weiss density g = m^2/2 + h*m."""


@dataclass(frozen=True)
class SpikeSpec:
    """Narrow barrier added on top of the polynomial interaction density.

    The spike subtracts delta_g * f(q) from g(m), with q = (m - m_b)/delta_m,
    delta_g = c * n_ref**(-chi) and delta_m = d * n_ref**(-delta).  The shape
    f has a single maximum f(0) = 1.  The rectangular profile is 1 on
    |q| <= 1/2 so that its total width is delta_m; the triangular profile
    1 - |q| spans |q| <= 1.
    """

    c: float
    d: float
    chi: float
    delta: float
    m_b: float
    shape: str = "gaussian"
    n_ref: int = 64

    def __post_init__(self) -> None:
        if not (0.0 < self.m_b < 1.0):
            raise ValueError(f"m_b must lie in (0, 1), got {self.m_b}")
        if self.c <= 0.0 or self.d <= 0.0:
            raise ValueError("spike amplitudes c, d must be positive")
        if self.chi < 0.0:
            raise ValueError("chi must be non-negative")
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.shape not in _SPIKE_SHAPES:
            raise ValueError(f"unknown spike shape {self.shape!r}")
        if self.n_ref < 1:
            raise ValueError("n_ref must be a positive integer")

    @property
    def delta_g(self) -> float:
        return self.c * float(self.n_ref) ** (-self.chi)

    @property
    def delta_m(self) -> float:
        return self.d * float(self.n_ref) ** (-self.delta)

    def at_n(self, n: int) -> "SpikeSpec":
        """Same spike family evaluated at a different system size."""
        return SpikeSpec(self.c, self.d, self.chi, self.delta, self.m_b,
                         self.shape, n)

    def f(self, q):
        """Shape profile f(q), unit height, vectorized."""
        q = np.asarray(q, dtype=float)
        if self.shape == "gaussian":
            out = np.exp(-0.5 * q * q)
        elif self.shape == "rectangular":
            out = np.where(np.abs(q) <= 0.5, 1.0, 0.0)
        else:  # triangular
            out = np.maximum(0.0, 1.0 - np.abs(q))
        return out if out.ndim else float(out)

    def f1(self, q):
        """df/dq (a.e. value for the non-smooth shapes)."""
        q = np.asarray(q, dtype=float)
        if self.shape == "gaussian":
            out = -q * np.exp(-0.5 * q * q)
        elif self.shape == "rectangular":
            out = np.zeros_like(q)
        else:
            out = np.where(np.abs(q) < 1.0, -np.sign(q), 0.0)
        return out if out.ndim else float(out)

    def f2(self, q):
        """d2f/dq2 (a.e. value for the non-smooth shapes)."""
        q = np.asarray(q, dtype=float)
        if self.shape == "gaussian":
            out = (q * q - 1.0) * np.exp(-0.5 * q * q)
        else:
            out = np.zeros_like(q)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class ModelSpec:
    """Transverse field plus interaction density g(m).

    Parameters
    ----------
    gamma : float
        Transverse field Gamma > 0.
    g_poly : tuple of float
        Polynomial coefficients of g, lowest degree first.  The Curie-Weiss
        model with longitudinal bias h is (0, h, 1/2).
    spike : SpikeSpec or None
        Optional narrow barrier subtracted from the polynomial.
    """

    gamma: float
    g_poly: tuple = (0.0, 0.0, 0.5)
    spike: SpikeSpec | None = None

    def __post_init__(self) -> None:
        if self.gamma <= 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if len(self.g_poly) == 0:
            raise ValueError("g_poly needs at least one coefficient")
        object.__setattr__(self, "g_poly", tuple(float(c) for c in self.g_poly))

    @classmethod
    def curie_weiss(cls, gamma: float, h: float = 0.0,
                    spike: SpikeSpec | None = None) -> "ModelSpec":
        return cls(gamma=gamma, g_poly=(0.0, float(h), 0.5), spike=spike)

    @property
    def is_curie_weiss(self) -> bool:
        p = self.g_poly + (0.0, 0.0, 0.0)
        return (self.spike is None and len(self.g_poly) <= 3
                and p[0] == 0.0 and p[2] == 0.5)

    @property
    def h(self) -> float:
        """Longitudinal bias of the Curie-Weiss density."""
        if not self.is_curie_weiss:
            raise NotCurieWeissError("h is defined for the Curie-Weiss density only")
        return self.g_poly[1] if len(self.g_poly) > 1 else 0.0

    def g(self, m):
        """Interaction density g(m), vectorized."""
        out = np.polynomial.polynomial.polyval(np.asarray(m, dtype=float),
                                               self.g_poly)
        if self.spike is not None:
            q = (np.asarray(m, dtype=float) - self.spike.m_b) / self.spike.delta_m
            out = out - self.spike.delta_g * self.spike.f(q)
        return out if np.ndim(out) else float(out)

    def g1(self, m):
        """dg/dm."""
        coeffs = np.polynomial.polynomial.polyder(self.g_poly)
        out = np.polynomial.polynomial.polyval(np.asarray(m, dtype=float), coeffs)
        if self.spike is not None:
            q = (np.asarray(m, dtype=float) - self.spike.m_b) / self.spike.delta_m
            out = out - self.spike.delta_g / self.spike.delta_m * self.spike.f1(q)
        return out if np.ndim(out) else float(out)

    def g2(self, m):
        """d2g/dm2."""
        coeffs = np.polynomial.polynomial.polyder(self.g_poly, 2)
        out = np.polynomial.polynomial.polyval(np.asarray(m, dtype=float), coeffs)
        if self.spike is not None:
            q = (np.asarray(m, dtype=float) - self.spike.m_b) / self.spike.delta_m
            out = out - self.spike.delta_g / self.spike.delta_m ** 2 * self.spike.f2(q)
        return out if np.ndim(out) else float(out)

    def with_spike_at_n(self, n: int) -> "ModelSpec":
        """Model with the spike rescaled to system size n (no-op without spike)."""
        if self.spike is None:
            return self
        return ModelSpec(self.gamma, self.g_poly, self.spike.at_n(n))


def effective_potential(m, ell: float, model: ModelSpec):
    """Semiclassical potential U_ell(m) = -Gamma*sqrt(ell^2 - m^2) - g(m).

    Raises DomainError when |m| exceeds ell (beyond a 1e-12 rounding margin).
    """
    if not (0.0 < ell <= 1.0):
        raise DomainError(f"ell must lie in (0, 1], got {ell}")
    marr = np.asarray(m, dtype=float)
    if np.any(np.abs(marr) > ell * (1.0 + 1e-12) + 1e-300):
        raise DomainError("magnetization outside [-ell, ell]")
    rad = np.maximum(ell * ell - marr * marr, 0.0)
    out = -model.gamma * np.sqrt(rad) - model.g(marr)
    return out if np.ndim(out) else float(out)


def entropic_factor(ell):
    """Mixing-entropy term Q_ell = sum_a (1+a*ell)/2 * ln(2/(1+a*ell)), a = +-1.

    Q_0 = ln 2, Q_1 = 0.  Satisfies ln(2/sqrt(1-ell^2)) = Q_ell + ell*artanh(ell).
    """
    larr = np.asarray(ell, dtype=float)
    if np.any(larr < 0.0) or np.any(larr > 1.0):
        raise DomainError("ell must lie in [0, 1]")

    def xlog(x):
        # x*ln(2/x) with the x -> 0 limit filled in
        return np.where(x > 0.0, x * np.log(2.0 / np.where(x > 0.0, x, 1.0)), 0.0)

    out = 0.5 * xlog(1.0 + larr) + 0.5 * xlog(1.0 - larr)
    return out if np.ndim(out) else float(out)


def _ln_2cosh(x):
    # overflow-safe ln(2*cosh(x)) = ln(e^x + e^-x)
    return np.logaddexp(x, -x)


def static_free_energy(m, model: ModelSpec, beta: float):
    """Single-site variational free energy per spin.

    F(m) = m*g'(m) - g(m) - (1/beta) * ln(2*cosh(beta*r(m))) with
    r = sqrt(g'(m)^2 + Gamma^2).
    """
    if beta <= 0.0:
        raise DomainError("beta must be positive")
    marr = np.asarray(m, dtype=float)
    g1 = model.g1(marr)
    r = np.sqrt(np.asarray(g1) ** 2 + model.gamma ** 2)
    out = marr * g1 - model.g(marr) - _ln_2cosh(beta * r) / beta
    return out if np.ndim(out) else float(out)


def _static_dfdm(m, model: ModelSpec, beta: float):
    """dF/dm = g''(m) * (m - g'(m)*tanh(beta*r)/r)."""
    g1 = model.g1(m)
    r = np.sqrt(np.asarray(g1, dtype=float) ** 2 + model.gamma ** 2)
    return model.g2(m) * (m - g1 * np.tanh(beta * r) / r)


@dataclass(frozen=True)
class StaticExtrema:
    """Metastable minimum m0, global minimum m1 and barrier top m2 of F."""

    m0: float
    m1: float
    m2: float
    f0: float
    f1: float
    f2: float
    ell0: float
    ell1: float
    ell2: float


def _self_consistent_ell(m: float, model: ModelSpec, beta: float) -> float:
    return math.tanh(beta * math.hypot(model.g1(m), model.gamma))


def static_extrema(model: ModelSpec, beta: float,
                   n_grid: int = 4096) -> StaticExtrema:
    """Locate the extrema of the static free energy on (-1, 1).

    Sign changes of dF/dm on a uniform grid are refined by bisection to
    |dm| < 1e-12.  Raises MonostableError when fewer than two minima (or no
    interior maximum between them) exist.
    """
    from scipy.optimize import brentq

    if beta <= 0.0:
        raise DomainError("beta must be positive")
    grid = np.linspace(-1.0 + 1e-9, 1.0 - 1e-9, n_grid)
    vals = _static_dfdm(grid, model, beta)
    roots = []
    kinds = []  # +1 minimum (- to + crossing), -1 maximum
    for i in range(n_grid - 1):
        a, b = vals[i], vals[i + 1]
        if a == 0.0:
            continue
        if a * b < 0.0:
            root = brentq(lambda x: _static_dfdm(x, model, beta),
                          grid[i], grid[i + 1], xtol=1e-14, rtol=8.9e-16)
            roots.append(float(root))
            kinds.append(1 if a < 0.0 else -1)
    minima = [r for r, k in zip(roots, kinds) if k == 1]
    maxima = [r for r, k in zip(roots, kinds) if k == -1]
    if len(minima) < 2:
        raise MonostableError(
            f"single minimum of F at beta={beta}: no metastable state")
    fvals = {r: float(static_free_energy(r, model, beta)) for r in roots}
    # global minimum, then the deepest remaining minimum separated by a maximum
    m1 = min(minima, key=lambda r: fvals[r])
    rest = [r for r in minima if r != m1]
    m0 = min(rest, key=lambda r: fvals[r])
    if math.isclose(fvals[m0], fvals[m1], rel_tol=0.0, abs_tol=1e-13):
        # degenerate wells (h = 0): call the negative one metastable so that
        # escape runs always start from the all-down product state
        m0, m1 = min(m0, m1), max(m0, m1)
    tops = [r for r in maxima if min(m0, m1) < r < max(m0, m1)]
    if not tops:
        raise MonostableError("no barrier top between the two minima")
    m2 = max(tops, key=lambda r: fvals[r])
    return StaticExtrema(
        m0=m0, m1=m1, m2=m2,
        f0=fvals[m0], f1=fvals[m1], f2=fvals[m2],
        ell0=_self_consistent_ell(m0, model, beta),
        ell1=_self_consistent_ell(m1, model, beta),
        ell2=_self_consistent_ell(m2, model, beta),
    )


def critical_ell(model: ModelSpec) -> float:
    """Smallest ell for which U_ell is bistable, (h^(2/3) + Gamma^(2/3))^(3/2).

    Closed form specific to the Curie-Weiss density; values >= 1 mean no
    physical ell supports a barrier.
    """
    if not model.is_curie_weiss:
        raise NotCurieWeissError("critical_ell requires the Curie-Weiss density")
    h = abs(model.h)
    return (h ** (2.0 / 3.0) + model.gamma ** (2.0 / 3.0)) ** 1.5


# --- flat key/value serialization ------------------------------------------

def model_to_config(model: ModelSpec) -> dict:
    """Flatten a ModelSpec to the key/value mapping used by run-plan files."""
    out = {"gamma": repr(model.gamma)}
    if model.is_curie_weiss:
        out["h"] = repr(model.h)
    else:
        out["g_poly"] = ",".join(repr(c) for c in model.g_poly)
    if model.spike is not None:
        s = model.spike
        out["spike.c"] = repr(s.c)
        out["spike.d"] = repr(s.d)
        out["spike.chi"] = repr(s.chi)
        out["spike.delta"] = repr(s.delta)
        out["spike.m_b"] = repr(s.m_b)
        out["spike.shape"] = s.shape
        out["spike.n_ref"] = repr(s.n_ref)
    return out


def model_from_config(mapping: dict) -> ModelSpec:
    """Inverse of model_to_config; accepts either `h` or `g_poly`."""
    if "gamma" not in mapping:
        raise KeyError("model config needs a gamma key")
    gamma = float(mapping["gamma"])
    if "g_poly" in mapping and "h" in mapping:
        raise ValueError("give either h or g_poly, not both")
    if "g_poly" in mapping:
        g_poly = tuple(float(tok) for tok in str(mapping["g_poly"]).split(","))
    else:
        g_poly = (0.0, float(mapping.get("h", 0.0)), 0.5)
    spike = None
    spike_keys = {k for k in mapping if k.startswith("spike.")}
    if spike_keys:
        need = {"spike.c", "spike.d", "spike.chi", "spike.delta", "spike.m_b"}
        missing = need - spike_keys
        if missing:
            raise KeyError(f"incomplete spike config, missing {sorted(missing)}")
        spike = SpikeSpec(
            c=float(mapping["spike.c"]),
            d=float(mapping["spike.d"]),
            chi=float(mapping["spike.chi"]),
            delta=float(mapping["spike.delta"]),
            m_b=float(mapping["spike.m_b"]),
            shape=str(mapping.get("spike.shape", "gaussian")),
            n_ref=int(mapping.get("spike.n_ref", 64)),
        )
    return ModelSpec(gamma=gamma, g_poly=g_poly, spike=spike)
