"""Periodic-instanton (WKB) escape exponents for the collective spin.

At inverse temperature beta the metastable decay exponent is

    alpha = beta*(FrakF - FrakF0),
    beta*FrakF  = min over (e, ell) of  beta*e + S_ell(e) - Q_ell,
    beta*FrakF0 = min over ell of       beta*e0(ell) - Q_ell,

with the under-barrier action S_ell(e) = int_{a0}^{a1} p dm and momentum

    p(m) = arcsinh( sqrt((e+g)^2 - Gamma^2(ell^2-m^2)) / (Gamma*sqrt(ell^2-m^2)) ).

The interior stationary point obeys the period condition s0(e, ell) = beta,
where s0 = -dS/de equals the full imaginary-time period of the bounce
(the orbit runs a0 -> a1 -> a0 with dm_z/dtau = 2*v, so the one-way leg
takes s0/2), and the length condition ell = tanh(I) with I = |dS/dell|.
For beta below the shortest orbit period 2*pi/omega_top no periodic orbit
exists; the minimum then sits on the e = U(top) boundary and the saddle
degenerates to the constant barrier-top configuration, provided by
`static_saddle_solution`.  `wkb_alpha` picks whichever branch minimizes
beta*FrakF.

e0(ell) is the bottom of the metastable well of U_ell; its minimization
over ell reproduces the static mean-field value beta*F(m0), which is
asserted in tests rather than assumed here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq, minimize_scalar

from .model import (
    DomainError,
    ModelSpec,
    entropic_factor,
    static_extrema,
)


class NoBarrierError(RuntimeError):
    """U_ell has no barrier bracketing the requested energy."""


class NoPeriodicInstantonError(RuntimeError):
    """No periodic orbit with the requested period exists at any admissible ell."""


# --------------------------------------------------------------------------
# potential landscape
# --------------------------------------------------------------------------

def _u_pot(m, ell, model):
    rad = np.maximum(ell * ell - np.asarray(m, dtype=float) ** 2, 0.0)
    return -model.gamma * np.sqrt(rad) - model.g(m)


def _u_pot1(m, ell, model):
    r = np.sqrt(np.maximum(ell * ell - np.asarray(m, dtype=float) ** 2, 1e-300))
    return model.gamma * np.asarray(m, dtype=float) / r - model.g1(m)


def _u_pot2(m, ell, model):
    r = np.sqrt(np.maximum(ell * ell - np.asarray(m, dtype=float) ** 2, 1e-300))
    return model.gamma * ell * ell / r ** 3 - model.g2(m)


def _g_poly_deriv(model, m, order):
    """order-th derivative of the polynomial part of g (spike excluded).

    Used only for well-centered Taylor coefficients; localized spike shapes
    contribute nothing measurable at the wells.
    """
    coeffs = np.polynomial.polynomial.polyder(np.asarray(model.g_poly), order)
    return float(np.polynomial.polynomial.polyval(m, coeffs))


def _u_pot3(m, ell, model):
    r2 = max(ell * ell - m * m, 1e-300)
    return 3.0 * model.gamma * ell * ell * m / r2 ** 2.5 \
        - _g_poly_deriv(model, m, 3)


def _u_pot4(m, ell, model):
    r2 = max(ell * ell - m * m, 1e-300)
    return 3.0 * model.gamma * ell * ell * (r2 + 5.0 * m * m) / r2 ** 3.5 \
        - _g_poly_deriv(model, m, 4)


def _scan_grid(ell: float, model: ModelSpec, n_grid: int) -> np.ndarray:
    edge = ell * (1.0 - 1e-9)
    grid = np.linspace(-edge, edge, n_grid)
    if model.spike is not None:
        # make sure a narrow spike cannot slip between grid points
        s = model.spike
        lo = max(-edge, s.m_b - 8.0 * s.delta_m)
        hi = min(edge, s.m_b + 8.0 * s.delta_m)
        if hi > lo:
            grid = np.unique(np.concatenate([grid, np.linspace(lo, hi, n_grid)]))
    return grid


def _wells(ell: float, model: ModelSpec, n_grid: int = 4096):
    """Interior extrema of U_ell: (minima, maxima), each sorted by m."""
    grid = _scan_grid(ell, model, n_grid)
    der = _u_pot1(grid, ell, model)
    minima, maxima = [], []
    for i in range(len(grid) - 1):
        a, b = der[i], der[i + 1]
        if a == 0.0 or a * b >= 0.0:
            continue
        root = brentq(lambda x: float(_u_pot1(x, ell, model)),
                      grid[i], grid[i + 1], xtol=1e-14, rtol=8.9e-16)
        if a < 0.0:
            minima.append(float(root))
        else:
            maxima.append(float(root))
    return minima, maxima


@dataclass(frozen=True)
class BarrierStructure:
    m_meta: float
    m_top: float
    m_far: float
    u_meta: float
    u_top: float
    u_far: float


def barrier_structure(ell: float, model: ModelSpec,
                      n_grid: int = 4096) -> BarrierStructure:
    """Escape geometry of U_ell.

    m_meta is the metastable well (the higher of the two minima flanking the
    barrier, ties broken toward negative m), m_top the barrier maximum
    between the wells, m_far the well on the escape side.
    """
    minima, maxima = _wells(ell, model, n_grid)
    if len(minima) < 2 or not maxima:
        raise NoBarrierError(f"U_ell monostable at ell={ell}")
    best = None
    for top in maxima:
        left = [m for m in minima if m < top]
        right = [m for m in minima if m > top]
        if not left or not right:
            continue
        ml, mr = max(left), min(right)
        ul = float(_u_pot(ml, ell, model))
        ur = float(_u_pot(mr, ell, model))
        meta, far = (ml, mr) if ul >= ur else (mr, ml)
        cand = (max(ul, ur), meta, top, far)
        if best is None or cand[0] > best[0]:
            best = cand
    if best is None:
        raise NoBarrierError(f"no barrier between wells at ell={ell}")
    _, m_meta, m_top, m_far = best
    return BarrierStructure(
        m_meta=m_meta, m_top=m_top, m_far=m_far,
        u_meta=float(_u_pot(m_meta, ell, model)),
        u_top=float(_u_pot(m_top, ell, model)),
        u_far=float(_u_pot(m_far, ell, model)),
    )


# --------------------------------------------------------------------------
# momentum and under-barrier quadrature
# --------------------------------------------------------------------------

def momentum(m, e: float, ell: float, model: ModelSpec):
    """Under-barrier momentum p_ell(m; e), vectorized.

    Vanishes at the turning points U_ell(m) = e and is real in between,
    where -(e + g(m)) >= Gamma*sqrt(ell^2 - m^2).
    """
    marr = np.asarray(m, dtype=float)
    if np.any(np.abs(marr) > ell):
        raise DomainError("magnetization outside [-ell, ell]")
    gr = model.gamma * np.sqrt(np.maximum(ell * ell - marr * marr, 0.0))
    eg = e + np.asarray(model.g(marr))
    rad = eg * eg - gr * gr
    if np.any(rad < -1e-9 * max(1.0, float(np.max(eg * eg)))):
        raise DomainError("momentum evaluated outside the forbidden region")
    out = np.arcsinh(np.sqrt(np.maximum(rad, 0.0)) / np.maximum(gr, 1e-300))
    return out if np.ndim(out) else float(out)


def _turning_points_from(struct: BarrierStructure, e: float, ell: float,
                         model: ModelSpec):
    scale = max(abs(struct.u_meta), abs(struct.u_top), 1.0)
    if e >= struct.u_top - 1e-15 * scale or e < struct.u_meta - 1e-12 * scale:
        raise NoBarrierError(
            f"energy {e} outside the barrier window "
            f"[{struct.u_meta}, {struct.u_top})")

    def f(x):
        return float(_u_pot(x, ell, model)) - e

    if e <= struct.u_meta + 4e-16 * scale:
        a0 = struct.m_meta
    else:
        a0 = brentq(f, struct.m_meta, struct.m_top, xtol=1e-14, rtol=8.9e-16)
    if e <= struct.u_far + 4e-16 * scale:
        a1 = struct.m_far
    else:
        a1 = brentq(f, struct.m_top, struct.m_far, xtol=1e-14, rtol=8.9e-16)
    return float(a0), float(a1)


def turning_points(e: float, ell: float, model: ModelSpec):
    """Adjacent roots (a0, a1) of U_ell(m) = e bracketing the escape barrier.

    a0 lies on the metastable side.  Soft turning points (e at a well bottom
    to rounding accuracy) return the well position itself.
    """
    return _turning_points_from(barrier_structure(ell, model), e, ell, model)


_GL_CACHE: dict = {}


def _gl(order: int):
    if order not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(order)
        _GL_CACHE[order] = (0.5 * (x + 1.0), 0.5 * w)  # mapped to [0, 1]
    return _GL_CACHE[order]


@dataclass(frozen=True)
class _WellForm:
    """Energy measured from a well bottom, for e below float resolution.

    U(m) - e is modelled near the well by the quartic Taylor
    P(d) = k1 d + k2/2 d^2 + k3/6 d^3 + k4/24 d^4 - eps in the distance d
    from the well, with eps = e - U(well) carried exactly.  The turning
    point sits at the root d = delta0 of P, and the quadrature evaluates
    P(delta0 + u^2) - P(delta0) through the re-centered coefficients
    q_j = P^(j)(delta0), a polynomial identity with zero constant term,
    so the endpoint value is exactly zero with no cancellation.  Outside
    d_zone the direct difference (U(m) - U(well)) - eps takes over; neither
    form touches the unrepresentable float e.
    """

    m_well: float
    u_well: float   # U(m_well)
    eps: float
    delta0: float   # turning-point distance from the well, quartic root
    q1: float       # du(u^2) = q1 d + q2/2 d^2 + q3/6 d^3 + q4/24 d^4, d=u^2
    q2: float
    q3: float
    q4: float
    d_zone: float


def _well_root(k1: float, k2: float, k3: float, k4: float,
               eps: float) -> float:
    """Positive root of the quartic well Taylor equal to eps (k1 ~ 0)."""
    d = math.sqrt(2.0 * eps / k2)
    for _ in range(60):
        f = (((k4 / 24.0 * d + k3 / 6.0) * d + k2 / 2.0) * d + k1) * d - eps
        fp = ((k4 / 6.0 * d + k3 / 2.0) * d + k2) * d + k1
        step = f / fp
        d -= step
        if abs(step) <= 1e-15 * abs(d):
            break
    return d


def _make_well_form(m_well: float, toward: float, eps: float, ell: float,
                    model: ModelSpec) -> _WellForm:
    """Well-centered energy form with the barrier in direction `toward`."""
    sign_w = 1.0 if toward > m_well else -1.0
    k1 = sign_w * float(_u_pot1(m_well, ell, model))
    k2 = float(_u_pot2(m_well, ell, model))
    k3 = sign_w * _u_pot3(m_well, ell, model)
    k4 = _u_pot4(m_well, ell, model)
    d0 = _well_root(k1, k2, k3, k4, eps)
    return _WellForm(
        m_well=m_well, u_well=float(_u_pot(m_well, ell, model)),
        eps=eps, delta0=d0,
        q1=k1 + d0 * (k2 + d0 * (k3 / 2.0 + d0 * k4 / 6.0)),
        q2=k2 + d0 * (k3 + d0 * k4 / 2.0),
        q3=k3 + d0 * k4,
        q4=k4,
        d_zone=1e-3,
    )


@dataclass
class _HalfNodes:
    """Quadrature geometry for one side of the barrier, in u = sqrt(|m - a|).

    Panels are geometrically graded toward the turning point a so that the
    near-endpoint structure is resolved at every admissible energy, large
    beta included.  `well` switches the U - e evaluation to the well form,
    which the solver installs whenever e sits too close to a well bottom
    for direct float subtraction.
    """

    a: float              # turning point
    sign: float           # +1 integrating toward larger m
    u_len: float
    u: np.ndarray         # node positions, ascending
    w: np.ndarray         # du quadrature weights
    breaks: np.ndarray    # panel boundaries, breaks[0] = 0
    panel_of: np.ndarray  # panel index of each node
    delta_taylor: float   # switch U-e to its Taylor form below this |m - a|
    up: float             # U'(a)
    upp: float            # U''(a)
    well: _WellForm | None = None


def _half_nodes(a: float, sign: float, u_len: float, ell: float,
                model: ModelSpec, n_panels: int, order: int,
                well: _WellForm | None = None) -> _HalfNodes:
    breaks = u_len * np.concatenate([[0.0], np.geomspace(1e-8, 1.0, n_panels)])
    x, w = _gl(order)
    widths = np.diff(breaks)
    u = (breaks[:-1, None] + widths[:, None] * x[None, :]).ravel()
    wts = (widths[:, None] * w[None, :]).ravel()
    panel_of = np.repeat(np.arange(n_panels), order)
    return _HalfNodes(
        a=a, sign=sign, u_len=u_len, u=u, w=wts, breaks=breaks,
        panel_of=panel_of, delta_taylor=(1e-5 * u_len) ** 2,
        up=float(_u_pot1(a, ell, model)),
        upp=float(_u_pot2(a, ell, model)),
        well=well,
    )


def _stable_v(u: np.ndarray, half: _HalfNodes, e: float, ell: float,
              model: ModelSpec):
    """(m, v, gr) at m = a + sign*u^2 without endpoint cancellation.

    v^2 = (U-e)*((U-e) + 2*Gamma*R).  Without a well form, U - e near the
    turning point is taken from its Taylor form in (m - a), which keeps
    full relative accuracy where the direct subtraction is rounding noise.
    With a well form the distance from the well bottom delta0 + u^2 is
    exact by construction and eps is subtracted explicitly.
    """
    uu = u * u
    m = half.a + half.sign * uu
    r = np.sqrt(np.maximum(ell * ell - m * m, 0.0))
    if half.well is None:
        du_direct = -model.gamma * r - np.asarray(model.g(m)) - e
        delta = half.sign * uu
        du_taylor = half.up * delta + 0.5 * half.upp * delta * delta
        du = np.where(np.abs(delta) < half.delta_taylor, du_taylor, du_direct)
    else:
        wf = half.well
        du_direct = (-model.gamma * r - np.asarray(model.g(m))
                     - wf.u_well) - wf.eps
        du_taylor = (((wf.q4 / 24.0 * uu + wf.q3 / 6.0) * uu
                      + wf.q2 / 2.0) * uu + wf.q1) * uu
        du = np.where(wf.delta0 + uu < wf.d_zone, du_taylor, du_direct)
    du = np.maximum(du, 0.0)
    gr = model.gamma * np.maximum(r, 1e-300)
    v = np.sqrt(np.maximum(du * (du + 2.0 * gr), 1e-300))
    return m, v, gr


@dataclass(frozen=True)
class OrbitIntegrals:
    action: float
    period: float
    script_i: float


def _orbit_halves(a0: float, a1: float, ell: float, model: ModelSpec,
                  n_panels: int, order: int,
                  wells=(None, None)):
    lo, hi = (a0, a1) if a0 < a1 else (a1, a0)
    mid = 0.5 * (lo + hi)
    left = _half_nodes(lo, +1.0, math.sqrt(mid - lo), ell, model,
                       n_panels, order, well=wells[0])
    right = _half_nodes(hi, -1.0, math.sqrt(hi - mid), ell, model,
                        n_panels, order, well=wells[1])
    return left, right


def _orbit_integrals_from(halves, e: float, ell: float,
                          model: ModelSpec) -> OrbitIntegrals:
    s_act = s_per = s_scr = 0.0
    for half in halves:
        m, v, gr = _stable_v(half.u, half, e, ell, model)
        two_u = 2.0 * half.u
        p = np.arcsinh(v / gr)
        abs_eg = np.hypot(v, gr)
        s_act += float((p * two_u) @ half.w)
        s_per += float((two_u / v) @ half.w)
        s_scr += float((two_u * ell * abs_eg
                        / ((ell * ell - m * m) * v)) @ half.w)
    return OrbitIntegrals(action=s_act, period=s_per, script_i=s_scr)


def _orbit_integrals(e: float, ell: float, model: ModelSpec,
                     a0: float, a1: float,
                     n_panels: int = 160, order: int = 8,
                     wells=(None, None)) -> OrbitIntegrals:
    """S, s0 and I over the forbidden interval with u^2 substitutions.

        S  = int p dm,   s0 = int dm/v,
        I  = int ell*|e+g| / ((ell^2 - m^2) v) dm   (= |dS/dell| at fixed e),

    all on shared nodes so that downstream consistency checks compare like
    with like.  |e+g| is evaluated as hypot(v, Gamma*R), which is exact on
    the orbit and free of sign trouble.
    """
    halves = _orbit_halves(a0, a1, ell, model, n_panels, order, wells)
    return _orbit_integrals_from(halves, e, ell, model)


def action(e: float, ell: float, model: ModelSpec) -> float:
    """Under-barrier action S_ell(e) = int_{a0}^{a1} p dm."""
    a0, a1 = turning_points(e, ell, model)
    return _orbit_integrals(e, ell, model, a0, a1).action


def period(e: float, ell: float, model: ModelSpec) -> float:
    """Orbit period s0(e, ell) = int dm/v = -dS/de."""
    a0, a1 = turning_points(e, ell, model)
    return _orbit_integrals(e, ell, model, a0, a1).period


def barrier_top_period(ell: float, model: ModelSpec) -> float:
    """Limit of s0 as e -> U(top): 2*pi/omega_top from the top curvature.

    omega_top = 2*sqrt(Gamma*R_top*|U''(top)|).  No orbit is shorter, which
    decides whether a periodic instanton of period beta exists at this ell.
    """
    struct = barrier_structure(ell, model)
    r_top = math.sqrt(max(ell * ell - struct.m_top ** 2, 1e-300))
    upp = float(_u_pot2(struct.m_top, ell, model))
    if upp >= 0.0:
        raise NoBarrierError("barrier top has non-negative curvature")
    return math.pi / math.sqrt(model.gamma * r_top * abs(upp))


# --------------------------------------------------------------------------
# energy solve at fixed ell
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class _EnergySolution:
    e: float
    a0: float
    a1: float
    integrals: OrbitIntegrals
    shortfall: float  # beta - achieved period, nonzero only at the eps floor
    halves: tuple


def _orbit_at_eps(eps: float, struct: BarrierStructure, ell: float,
                  model: ModelSpec, eps_switch: float,
                  n_panels: int = 160, order: int = 8):
    """Turning points, well forms and orbit integrals at e = u_meta + eps.

    Each side drops to the well-centered form once its energy offset from
    the local well bottom falls below eps_switch; h = 0 puts both sides in
    that regime simultaneously (degenerate wells).
    """
    if not struct.m_meta < struct.m_top < struct.m_far:
        raise NotImplementedError("leftward escape geometry not supported")
    e = struct.u_meta + eps

    def crossing(lo, hi):
        return brentq(lambda x: float(_u_pot(x, ell, model)) - e,
                      lo, hi, xtol=1e-14, rtol=8.9e-16)

    if eps < eps_switch:
        wf0 = _make_well_form(struct.m_meta, struct.m_top, eps, ell, model)
        a0 = struct.m_meta + wf0.delta0
    else:
        wf0 = None
        a0 = crossing(struct.m_meta, struct.m_top)
    eps_far = eps + (struct.u_meta - struct.u_far)
    if eps_far < eps_switch:
        wf1 = _make_well_form(struct.m_far, struct.m_top, eps_far, ell, model)
        a1 = struct.m_far - wf1.delta0
    else:
        wf1 = None
        a1 = crossing(struct.m_top, struct.m_far)
    halves = _orbit_halves(a0, a1, ell, model, n_panels, order, (wf0, wf1))
    ints = _orbit_integrals_from(halves, e, ell, model)
    return e, a0, a1, ints, halves


def _solve_energy(ell: float, model: ModelSpec, beta: float) -> _EnergySolution:
    """Find e with s0(e, ell) = beta by root-finding on ln(e - U_min).

    s0 grows logarithmically as e approaches the well bottom, so at large
    beta the root sits exponentially close to U_min; the well-centered
    energy form keeps the quadrature accurate far below the float
    resolution of e itself.  Below eps_floor the energy is pinned and the
    period shortfall recorded; the induced error in beta*e + S is second
    order because that objective is stationary in e exactly when s0 = beta.
    """
    struct = barrier_structure(ell, model)
    e_min, e_top = struct.u_meta, struct.u_top
    if beta <= barrier_top_period(ell, model):
        raise NoPeriodicInstantonError(
            f"beta={beta} at or below the shortest orbit period at ell={ell}")
    span = e_top - e_min
    scale = max(abs(e_min), abs(e_top), 1e-3)
    eps_switch = 1e-6 * scale
    eps_floor = 1e-26 * scale

    def at_eps(eps: float):
        return _orbit_at_eps(eps, struct, ell, model, eps_switch)

    # bracket on a log grid; s0 decreases monotonically with e
    eps_grid = np.geomspace(eps_floor, span * (1.0 - 1e-9), 40)
    prev = None
    for eps in eps_grid:
        e, a0, a1, ints, halves = at_eps(eps)
        if ints.period <= beta:
            if prev is None:
                return _EnergySolution(e, a0, a1, ints,
                                       beta - ints.period, halves)
            lo_eps, hi_eps = prev, eps
            break
        prev = eps
    else:
        raise NoPeriodicInstantonError(
            f"no orbit of period {beta} found at ell={ell}")

    theta = brentq(lambda t: at_eps(math.exp(t))[3].period - beta,
                   math.log(lo_eps), math.log(hi_eps),
                   xtol=1e-12, rtol=8.9e-16)
    e, a0, a1, ints, halves = at_eps(math.exp(theta))
    return _EnergySolution(e, a0, a1, ints, 0.0, halves)


# --------------------------------------------------------------------------
# metastable reference free energy
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MetastableMinimum:
    beta_frak_f0: float
    ell: float
    e0: float
    m0: float


def metastable_frak_f0(model: ModelSpec, beta: float,
                       n_ell: int = 512) -> MetastableMinimum:
    """beta*FrakF0 = min over ell of beta*e0(ell) - Q_ell.

    e0(ell) is the bottom of the metastable well of U_ell.  This route is
    independent of the static mean-field expression beta*F(m0); the two are
    compared in tests, not conflated here.
    """
    def objective(ell: float) -> float:
        try:
            struct = barrier_structure(ell, model)
        except NoBarrierError:
            return math.inf
        return beta * struct.u_meta - float(entropic_factor(ell))

    ells = np.linspace(0.05, 1.0, n_ell)
    vals = np.array([objective(l) for l in ells])
    i = int(np.argmin(vals))
    if not np.isfinite(vals[i]):
        raise NoBarrierError("no metastable well at any ell")
    lo = float(ells[max(i - 1, 0)])
    hi = float(ells[min(i + 1, n_ell - 1)])
    res = minimize_scalar(objective, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-13})
    value, ell0 = min((float(res.fun), float(res.x)),
                      (float(vals[i]), float(ells[i])))
    struct = barrier_structure(ell0, model)
    return MetastableMinimum(beta_frak_f0=value, ell=ell0,
                             e0=struct.u_meta, m0=struct.m_meta)


# --------------------------------------------------------------------------
# trajectory construction
# --------------------------------------------------------------------------

def _half_time_table(half: _HalfNodes, e: float, ell: float, model: ModelSpec):
    """Cumulative one-way time tau(u) = int_0^u s/v ds at the panel breaks.

    The integrand s/v is smooth and even down to u = 0 (limit
    1/sqrt(2*Gamma*R*U'(a))).  Uses the same nodes as _orbit_integrals, so
    the total half time is s0/2 of the period quadrature up to summation
    order.
    """
    _, v, _ = _stable_v(half.u, half, e, ell, model)
    psi = half.u / v
    contrib = np.bincount(half.panel_of, weights=psi * half.w,
                          minlength=len(half.breaks) - 1)
    return np.concatenate([[0.0], np.cumsum(contrib)])


def _tau_of_u(u: np.ndarray, half: _HalfNodes, tau_breaks: np.ndarray,
              e: float, ell: float, model: ModelSpec, order: int = 8):
    idx = np.clip(np.searchsorted(half.breaks, u, side="right") - 1,
                  0, len(half.breaks) - 2)
    base_u = half.breaks[idx]
    base_tau = tau_breaks[idx]
    x, w = _gl(order)
    span = u - base_u
    nodes = (base_u[:, None] + span[:, None] * x[None, :])
    _, v, _ = _stable_v(nodes.ravel(), half, e, ell, model)
    psi = (nodes.ravel() / v).reshape(nodes.shape)
    return base_tau + span * (psi @ w)


def _invert_half_time(targets: np.ndarray, half: _HalfNodes,
                      tau_breaks: np.ndarray, e: float, ell: float,
                      model: ModelSpec):
    """Solve tau(u) = target for each target: PCHIP guess, Newton polish."""
    if len(targets) == 0:
        return np.zeros(0)
    interp = PchipInterpolator(tau_breaks, half.breaks, extrapolate=True)
    u = np.clip(interp(targets), 0.0, half.u_len)
    for _ in range(6):
        residual = _tau_of_u(u, half, tau_breaks, e, ell, model) - targets
        _, v, _ = _stable_v(u, half, e, ell, model)
        dtau = np.maximum(u / v, 1e-300)
        u = np.clip(u - residual / dtau, 0.0, half.u_len)
        if np.max(np.abs(residual)) < 1e-12 * max(tau_breaks[-1], 1e-9):
            break
    return u


@dataclass
class Trajectory:
    tau: np.ndarray
    m_z: np.ndarray
    m_x: np.ndarray
    nu: np.ndarray
    period: float


def instanton_trajectory(e: float, ell: float, model: ModelSpec,
                         n_grid: int = 4096,
                         n_panels: int = 160, order: int = 8) -> Trajectory:
    """Periodic bounce m_z(tau) on a uniform grid of n_grid samples.

    The half path a0 -> a1 is built by inverting the one-way time tau(m)
    (quadrature in the turning-point variable u = sqrt(|m - a|), Newton
    polished) and mirrored, m_z(period - tau) = m_z(tau).  Components

        m_x = |e + g(m_z)|/Gamma,   nu = (1/(2*Gamma)) dm_z/dtau = +-v/Gamma

    satisfy -Gamma*m_x - g(m_z) = e and m_x^2 - nu^2 + m_z^2 = ell^2
    identically; nu is positive on the outgoing leg.
    """
    a0, a1 = turning_points(e, ell, model)
    if not a0 < a1:
        raise NotImplementedError("leftward escape trajectories not supported")
    halves = _orbit_halves(a0, a1, ell, model, n_panels, order)
    return _trajectory_from_halves(halves, e, ell, model, n_grid)


def _trajectory_from_halves(halves, e: float, ell: float, model: ModelSpec,
                            n_grid: int) -> Trajectory:
    if n_grid % 2 != 0:
        raise ValueError("n_grid must be even")
    left, right = halves
    a0, a1 = left.a, right.a
    tau_l = _half_time_table(left, e, ell, model)
    tau_r = _half_time_table(right, e, ell, model)
    t_half = float(tau_l[-1] + tau_r[-1])
    s0 = 2.0 * t_half
    tau = np.arange(n_grid) * (s0 / n_grid)
    half_n = n_grid // 2

    tgt = tau[1:half_n]
    on_left = tgt <= tau_l[-1]
    u_left = _invert_half_time(tgt[on_left], left, tau_l, e, ell, model)
    w_right = _invert_half_time(t_half - tgt[~on_left], right, tau_r,
                                e, ell, model)
    m_fwd = np.empty(len(tgt))
    v_fwd = np.empty(len(tgt))
    _, v_l, _ = _stable_v(u_left, left, e, ell, model)
    m_fwd[on_left] = a0 + u_left ** 2
    v_fwd[on_left] = v_l
    _, v_r, _ = _stable_v(w_right, right, e, ell, model)
    m_fwd[~on_left] = a1 - w_right ** 2
    v_fwd[~on_left] = v_r

    m_z = np.empty(n_grid)
    v_abs = np.empty(n_grid)
    m_z[0], v_abs[0] = a0, 0.0
    m_z[1:half_n] = m_fwd
    v_abs[1:half_n] = v_fwd
    m_z[half_n], v_abs[half_n] = a1, 0.0
    m_z[half_n + 1:] = m_fwd[::-1]
    v_abs[half_n + 1:] = v_fwd[::-1]

    m_x = np.abs(e + np.asarray(model.g(m_z))) / model.gamma
    nu = v_abs / model.gamma
    nu[half_n + 1:] *= -1.0
    return Trajectory(tau=tau, m_z=m_z, m_x=m_x, nu=nu, period=s0)


# --------------------------------------------------------------------------
# solutions
# --------------------------------------------------------------------------

@dataclass
class InstantonSolution:
    """Converged saddle of the escape-rate minimization at one (model, beta).

    kind is "instanton" for a genuine oscillating bounce and "static" for
    the constant barrier-top configuration that takes over at high
    temperature.  beta_frak_f = beta*e + S - Q at the saddle and
    alpha = beta_frak_f - beta_frak_f0.
    """

    kind: str
    beta: float
    ell: float
    energy: float
    a0: float
    a1: float
    action: float
    period: float
    script_i: float
    q_ell: float
    beta_frak_f: float
    beta_frak_f0: float
    alpha: float
    tau: np.ndarray
    m_z: np.ndarray
    m_x: np.ndarray
    nu: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def integral_I(solution: InstantonSolution) -> float:
    """I = ell * int_0^period |e + g(m_z)| / (ell^2 - m_z^2) dtau from samples.

    Uses |e + g| = Gamma*m_x and the periodic trapezoid rule (spectrally
    accurate for the smooth bounce); cross-checks the m-space quadrature
    stored at solve time.
    """
    denom = solution.ell ** 2 - solution.m_z ** 2
    if np.any(denom <= 0.0):
        raise DomainError("trajectory touches |m_z| = ell")
    integrand = solution.ell * solution.m_x / denom
    gamma = solution.diagnostics.get("gamma")
    if gamma is None:
        raise KeyError("solution missing gamma diagnostic")
    return float(solution.period * gamma * integrand.mean())


def _package_solution(kind: str, model: ModelSpec, beta: float, ell: float,
                      e: float, a0: float, a1: float, s: float, s0: float,
                      script_i: float, traj: Trajectory,
                      f0: MetastableMinimum,
                      diagnostics: dict) -> InstantonSolution:
    q = float(entropic_factor(ell))
    beta_frak_f = beta * e + s - q
    diagnostics = dict(diagnostics)
    diagnostics["gamma"] = model.gamma
    return InstantonSolution(
        kind=kind, beta=beta, ell=ell, energy=e, a0=a0, a1=a1,
        action=s, period=s0, script_i=script_i, q_ell=q,
        beta_frak_f=beta_frak_f, beta_frak_f0=f0.beta_frak_f0,
        alpha=beta_frak_f - f0.beta_frak_f0,
        tau=traj.tau, m_z=traj.m_z, m_x=traj.m_x, nu=traj.nu,
        diagnostics=diagnostics,
    )


def solve_instanton(model: ModelSpec, beta: float,
                    eta: float = 0.5, tol: float = 1e-10,
                    max_iter: int = 500, n_grid: int = 4096) -> InstantonSolution:
    """Self-consistent periodic instanton: s0(e, ell) = beta, ell = tanh(I).

    Damped fixed-point iteration ell <- (1-eta)*ell + eta*tanh(I) starting
    from ell = 1, with a nested energy solve at each step.  Raises
    NoPeriodicInstantonError when no admissible ell supports an orbit of
    period beta or the iteration is pinned on the existence boundary.
    """
    ell = 1.0
    try:
        sol_e = _solve_energy(ell, model, beta)
    except (NoBarrierError, NoPeriodicInstantonError) as err:
        raise NoPeriodicInstantonError(
            f"no periodic orbit of period beta={beta}: {err}") from None
    clamped = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        target = math.tanh(sol_e.integrals.script_i)
        ell_new = min((1.0 - eta) * ell + eta * target, 1.0)
        try:
            sol_new = _solve_energy(ell_new, model, beta)
            clamped = False
        except (NoBarrierError, NoPeriodicInstantonError):
            # candidate fell off the existence region; bisect back up
            lo, hi = ell_new, ell
            sol_new = sol_e
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                try:
                    sol_new = _solve_energy(mid, model, beta)
                    hi = mid
                except (NoBarrierError, NoPeriodicInstantonError):
                    lo = mid
            ell_new = hi
            clamped = True
        delta = abs(ell_new - ell)
        ell, sol_e = ell_new, sol_new
        if delta < tol:
            break
    else:
        raise NoPeriodicInstantonError(
            f"ell fixed point not converged in {max_iter} iterations")
    if clamped:
        raise NoPeriodicInstantonError(
            "ell fixed point pinned at the orbit-existence boundary")
    f0 = metastable_frak_f0(model, beta)
    traj = _trajectory_from_halves(sol_e.halves, sol_e.e, ell, model, n_grid)
    rel_mismatch = abs(traj.period - sol_e.integrals.period) / beta
    if rel_mismatch > 1e-6:
        raise RuntimeError(
            f"trajectory period inconsistent with quadrature: {rel_mismatch}")
    diagnostics = {
        "iterations": n_iter,
        "residual_ell": abs(ell - math.tanh(sol_e.integrals.script_i)),
        "residual_period": abs(sol_e.integrals.period - beta),
        "period_shortfall": sol_e.shortfall,
        "trajectory_period_mismatch": rel_mismatch,
    }
    return _package_solution("instanton", model, beta, ell, sol_e.e,
                             sol_e.a0, sol_e.a1, sol_e.integrals.action,
                             sol_e.integrals.period, sol_e.integrals.script_i,
                             traj, f0, diagnostics)


def static_saddle_solution(model: ModelSpec, beta: float,
                           n_grid: int = 4096) -> InstantonSolution:
    """Constant barrier-top saddle, the minimizer above the crossover.

    m_z(tau) = m2 with its self-consistent ell2 = tanh(beta*r(m2)) is an
    exact constant solution of the bounce equations with I = beta*ell*Gamma/R
    and beta*FrakF = beta*F(m2) (the boundary e -> U(top) of the interior
    minimization, where S -> 0).
    """
    ex = static_extrema(model, beta)
    ell, m2 = ex.ell2, ex.m2
    e = float(_u_pot(m2, ell, model))
    r = math.sqrt(max(ell * ell - m2 * m2, 1e-300))
    script_i = beta * ell * model.gamma / r
    tau = np.arange(n_grid) * (beta / n_grid)
    traj = Trajectory(tau=tau, m_z=np.full(n_grid, m2),
                      m_x=np.full(n_grid, r), nu=np.zeros(n_grid),
                      period=beta)
    f0 = metastable_frak_f0(model, beta)
    return _package_solution("static", model, beta, ell, e, m2, m2, 0.0,
                             beta, script_i, traj, f0,
                             {"static_f2": ex.f2, "static_f0": ex.f0})


def wkb_alpha(model: ModelSpec, beta: float, n_grid: int = 4096,
              tol: float = 1e-10):
    """Escape exponent alpha with the solution realizing it.

    Evaluates both branches of the minimization (periodic instanton when one
    exists, constant barrier-top saddle otherwise or whenever it is lower)
    and returns (alpha, solution).
    """
    static_sol = static_saddle_solution(model, beta, n_grid=n_grid)
    try:
        inst = solve_instanton(model, beta, n_grid=n_grid, tol=tol)
    except NoPeriodicInstantonError as err:
        static_sol.diagnostics["fallback_reason"] = str(err)
        return static_sol.alpha, static_sol
    if inst.beta_frak_f <= static_sol.beta_frak_f:
        inst.diagnostics["static_beta_frak_f"] = static_sol.beta_frak_f
        return inst.alpha, inst
    static_sol.diagnostics["instanton_beta_frak_f"] = inst.beta_frak_f
    return static_sol.alpha, static_sol


# --------------------------------------------------------------------------
# I/O
# --------------------------------------------------------------------------

def write_instanton_csv(path, solution: InstantonSolution,
                        plan: dict | None = None):
    """Instanton CSV: `# key = value` preamble, then tau,m_z,m_x,nu rows."""
    meta = dict(plan) if plan else {}
    meta.update({
        "kind": solution.kind,
        "beta": repr(solution.beta),
        "ell": repr(solution.ell),
        "energy": repr(solution.energy),
        "a0": repr(solution.a0),
        "a1": repr(solution.a1),
        "action": repr(solution.action),
        "period": repr(solution.period),
        "script_i": repr(solution.script_i),
        "beta_frak_f": repr(solution.beta_frak_f),
        "beta_frak_f0": repr(solution.beta_frak_f0),
        "alpha": repr(solution.alpha),
    })
    with open(path, "w") as fh:
        for key, val in meta.items():
            fh.write(f"# {key} = {val}\n")
        fh.write("tau,m_z,m_x,nu\n")
        for row in zip(solution.tau, solution.m_z, solution.m_x, solution.nu):
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def read_instanton_csv(path):
    """Returns (meta dict, tau, m_z, m_x, nu) from an instanton CSV."""
    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition("=")
                meta[key.strip()] = val.strip()
            elif line[0].isdigit() or line[0] in "+-.":
                rows.append([float(tok) for tok in line.split(",")])
    arr = np.asarray(rows)
    return meta, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]
