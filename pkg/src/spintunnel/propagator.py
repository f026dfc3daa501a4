"""Imaginary-time 2x2 propagator and the replica-pair identity suite.

The path-integral saddle point reduces each spin to a single spin-1/2
evolving under the time-dependent field (Gamma, 0, lambda(tau)) with
lambda = g'(m_z(tau)).  This module evaluates the time-ordered propagator
K over one period, the free-energy functional

    F[m] = (1/beta) int [m g'(m) - g(m)] dtau - (1/beta) ln Tr K,

the self-consistent total-spin estimate from K, and the monodromy of the
linearized flow around the periodic instanton.  Everything here is a
cross-check route: the same quantities are produced independently by the
`wkb` quadratures, and the pair is compared in tests rather than blended.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .model import ModelSpec, static_extrema
from .wkb import InstantonSolution, wkb_alpha


class DegenerateInstantonError(ValueError):
    """Replica initial conditions vanish (m_x(0) = m_z(0) = 0)."""


@dataclass(frozen=True)
class Propagator2:
    """Time-ordered 2x2 propagator over one period.

    The generator Gamma*sigma_x + lambda(tau)*sigma_z is traceless, so
    det k = 1; with a real symmetric-generator product the trace is >= 2.
    """

    k: np.ndarray
    trace: float
    grid: int

    @property
    def det(self) -> float:
        return float(self.k[0, 0] * self.k[1, 1] - self.k[0, 1] * self.k[1, 0])


def evolve(lambda_samples, gamma: float, beta: float) -> Propagator2:
    """Propagator as a product of per-segment exact exponentials.

    lambda_samples are periodic uniform samples (lambda(0) = lambda(beta)
    by convention, the wrap point is not duplicated); each segment uses the
    midpoint value, and exp(dt*(Gamma*sigma_x + lam*sigma_z)) is written in
    closed form cosh(dt*r) + sinh(dt*r)/r * (Gamma*sigma_x + lam*sigma_z).
    Later times multiply from the left.
    """
    lam = np.asarray(lambda_samples, dtype=float)
    n = lam.size
    if n < 2:
        raise ValueError("need at least 2 lambda samples")
    dt = beta / n
    lam_mid = 0.5 * (lam + np.roll(lam, -1))
    r = np.hypot(gamma, lam_mid)
    ch = np.cosh(dt * r)
    sh = np.where(r > 0.0, np.sinh(dt * r) / np.where(r > 0.0, r, 1.0), dt)
    a = ch + sh * lam_mid     # upper-left
    b = sh * gamma            # symmetric off-diagonal
    d = ch - sh * lam_mid     # lower-right
    k00, k01, k10, k11 = 1.0, 0.0, 0.0, 1.0
    for j in range(n):
        aj, bj, dj = a[j], b[j], d[j]
        k00, k01, k10, k11 = (
            aj * k00 + bj * k10,
            aj * k01 + bj * k11,
            bj * k00 + dj * k10,
            bj * k01 + dj * k11,
        )
    k = np.array([[k00, k01], [k10, k11]])
    return Propagator2(k=k, trace=k00 + k11, grid=n)


def _richardson_matrix(build, lam):
    """Two-level Richardson extrapolation of a midpoint-product matrix.

    The midpoint segment product is time-symmetric, so its error expands in
    even powers of the step; combining the full grid with its stride-2 and
    stride-4 subsamples removes the first two terms.  The extrapolated
    matrix leaves the product's determinant identity only at second order
    in the grid differences, far below the tolerances checked here.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.size
    if n % 2 != 0 or n < 4:
        return build(lam)
    full = build(lam)
    half = build(lam[::2])
    k1 = (4.0 * full - half) / 3.0
    if n % 4 == 0 and n >= 8:
        quarter = build(lam[::4])
        k2 = (4.0 * half - quarter) / 3.0
        return (16.0 * k1 - k2) / 15.0
    return k1


def _evolve_extrapolated(lam, gamma: float, beta: float) -> Propagator2:
    lam = np.asarray(lam, dtype=float)
    k = _richardson_matrix(lambda s: evolve(s, gamma, beta).k, lam)
    return Propagator2(k=k, trace=float(k[0, 0] + k[1, 1]), grid=lam.size)


def _matrix_chain(mats):
    """Ordered product mats[-1] @ ... @ mats[0] by pairwise tree reduction."""
    while mats.shape[0] > 1:
        if mats.shape[0] % 2 == 1:
            head = np.matmul(mats[1:-1:2], mats[0:-1:2])
            mats = np.concatenate([head, mats[-1:]])
        else:
            mats = np.matmul(mats[1::2], mats[0::2])
    return mats[0]


def _spin1_monodromy(lam, gamma: float, beta: float, reverse: bool = False):
    """One-period product solution of the linearized flow around the path.

    The state (xi_x, eta, xi_z) obeys xi' = 2 B(lam(tau)) xi with

        B = [[0, -lam, 0], [-lam, 0, Gamma], [0, Gamma, 0]],

    and B^3 = (lam^2 + Gamma^2) B, so each midpoint segment exponentiates
    in closed form exactly like the 2x2 propagator (of which this flow is
    the symmetric-pair representation).  reverse composes the exact segment
    inverses in opposite order, whose dominant eigenvalue resolves the
    decaying monodromy eigenvalue without forward contamination.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.size
    if n < 2:
        raise ValueError("need at least 2 lambda samples")
    dt = beta / n
    lam_mid = 0.5 * (lam + np.roll(lam, -1))
    r = np.hypot(gamma, lam_mid)
    s = 2.0 * dt * r
    c1 = np.where(r > 0.0, np.sinh(s) / np.where(r > 0.0, r, 1.0), 2.0 * dt)
    c2 = np.where(r > 0.0, (np.cosh(s) - 1.0) / np.where(r > 0.0, r * r, 1.0),
                  2.0 * dt * dt)
    if reverse:
        c1 = -c1
    segs = np.empty((n, 3, 3))
    segs[:, 0, 0] = 1.0 + c2 * lam_mid ** 2
    segs[:, 0, 1] = -c1 * lam_mid
    segs[:, 0, 2] = -c2 * lam_mid * gamma
    segs[:, 1, 0] = -c1 * lam_mid
    segs[:, 1, 1] = 1.0 + c2 * (lam_mid ** 2 + gamma ** 2)
    segs[:, 1, 2] = c1 * gamma
    segs[:, 2, 0] = -c2 * lam_mid * gamma
    segs[:, 2, 1] = c1 * gamma
    segs[:, 2, 2] = 1.0 + c2 * gamma ** 2
    if reverse:
        segs = segs[::-1]
    return _matrix_chain(segs)


def ell_estimate(prop: Propagator2) -> float:
    """Self-consistent total-spin fraction from the propagator.

    ell = sqrt(sum_j Tr(K sigma_j)^2) / Tr K; the sigma_y trace of a real K
    is imaginary, so its square enters as -(K01 - K10)^2.  The identity
    (Tr K)^2 - sum_j Tr(K sigma_j)^2 = 4 det K makes the sum equal to
    (Tr K)^2 - 4 for every valid propagator.
    """
    k = prop.k
    tx = k[0, 1] + k[1, 0]
    ty_sq = -((k[0, 1] - k[1, 0]) ** 2)
    tz = k[0, 0] - k[1, 1]
    ssq = tx * tx + ty_sq + tz * tz
    return math.sqrt(max(ssq, 0.0)) / prop.trace


def functional_free_energy(m_samples, model: ModelSpec, beta: float) -> float:
    """F[m(tau)] on periodic uniform samples.

    The periodic trapezoid rule collapses to the sample mean times beta,
    which is spectrally accurate for smooth periodic paths.
    """
    m = np.asarray(m_samples, dtype=float)
    if np.any(np.abs(m) >= 1.0):
        raise ValueError("|m| must stay below 1")
    g1 = np.asarray(model.g1(m))
    local = float(np.mean(m * g1 - np.asarray(model.g(m))))
    prop = evolve(g1, model.gamma, beta)
    return local - math.log(prop.trace) / beta


@dataclass
class ReplicaCheck:
    """Monodromy and double-propagator identities on one instanton.

    kappa_plus/minus come from the linearized flow integrated over one
    period; two_cosh_i, the projector traces and ell_from_* give the
    closed-form counterparts.  extras carries secondary residuals
    (bilinear-form drift, the unit eigenvector return error, and the
    log-derivative quadrature route to kappa).
    """

    trace_k: float
    two_cosh_i: float
    kappa_plus: float
    kappa_minus: float
    antisym_trace: float
    sym_trace: float
    ell_from_k: float
    ell_from_i: float
    extras: dict = field(default_factory=dict)


def _linearized_rhs(gamma: float, lam_of_tau, with_log: bool):
    if with_log:
        def rhs(tau, state):
            xi_x, eta, xi_z = state[0], state[1], state[2]
            lam = lam_of_tau(tau)
            return (-2.0 * lam * eta,
                    2.0 * (gamma * xi_z - lam * xi_x),
                    2.0 * gamma * eta,
                    2.0 * gamma * eta / xi_z)
    else:
        def rhs(tau, state):
            xi_x, eta, xi_z = state[0], state[1], state[2]
            lam = lam_of_tau(tau)
            return (-2.0 * lam * eta,
                    2.0 * (gamma * xi_z - lam * xi_x),
                    2.0 * gamma * eta)
    return rhs


def _integrate_mode(ic, gamma, lam_of_tau, beta, with_log=True, backward=False):
    """Returns (final state, max normalized |B - B0|, log kappa accumulator).

    With with_log the fourth state component integrates
    d(ln xi_z)/dtau = 2*Gamma*eta/xi_z, the log-derivative form of the
    monodromy growth; it is only meaningful while xi_z keeps its sign,
    which holds for the replica initial conditions but not for the
    trajectory tangent (whose xi_z = m_z crosses zero).

    backward integrates the flow reversed in time from tau = beta down to
    tau = 0; a forward-decaying mode grows under the reversed flow, so this
    is the stable way to resolve the small monodromy eigenvalue.  The
    bilinear drift is reported relative to the pointwise state magnitude
    because the mode amplitudes themselves grow exponentially.
    """
    base = _linearized_rhs(gamma, lam_of_tau, with_log)
    if backward:
        if with_log:
            def rhs(s, state):
                d = base(beta - s, state)
                return (-d[0], -d[1], -d[2], -d[3])
        else:
            def rhs(s, state):
                d = base(beta - s, state)
                return (-d[0], -d[1], -d[2])
    else:
        rhs = base
    state0 = list(ic) + [0.0] if with_log else list(ic)
    bil0 = ic[0] ** 2 - ic[1] ** 2 + ic[2] ** 2
    sol = solve_ivp(rhs, (0.0, beta), state0, method="DOP853",
                    rtol=1e-13, atol=1e-15, dense_output=False,
                    t_eval=np.linspace(0.0, beta, 257))
    if not sol.success:
        raise RuntimeError(f"linearized flow integration failed: {sol.message}")
    states = sol.y
    bil = states[0] ** 2 - states[1] ** 2 + states[2] ** 2
    norm_sq = states[0] ** 2 + states[1] ** 2 + states[2] ** 2
    drift = float(np.max(np.abs(bil - bil0) / norm_sq))
    logk = float(states[3, -1]) if with_log else math.nan
    return states[:3, -1], drift, logk


def replica_check(solution: InstantonSolution, model: ModelSpec) -> ReplicaCheck:
    """Integrates the linearized flow around the instanton and closes the
    double-propagator identities.

    State (xi_x, eta, xi_z) with eta the real value of i*xi_y:

        xi_x' = -2 lam eta,   eta' = 2 (Gamma xi_z - lam xi_x),
        xi_z' = 2 Gamma eta,

    kappa_plus comes from the dominant eigenvalue of the one-period segment
    product of this flow and kappa_minus from the reversed product (forward
    integration of a decaying mode is contaminated by growing-mode leakage,
    so the small eigenvalue is resolved where it dominates).  The adaptive
    integration of the explicit mode initial conditions

        (-m_z(0), -+sqrt(m_x(0)^2 + m_z(0)^2), m_x(0)),

    whose monodromy ratios are xi_z(beta)/xi_z(0), lands in extras as an
    independent route with coarser accuracy.
    """
    mx0, mz0 = float(solution.m_x[0]), float(solution.m_z[0])
    norm0 = math.hypot(mx0, mz0)
    if norm0 == 0.0:
        raise DegenerateInstantonError("vanishing m(0)")
    beta = solution.beta
    gamma = model.gamma
    tau = solution.tau
    lam = np.asarray(model.g1(solution.m_z))
    # periodic cubic interpolant of lambda(tau) for the ODE right-hand side
    tau_ext = np.concatenate([tau, [beta]])
    lam_ext = np.concatenate([lam, [lam[0]]])
    lam_of_tau = CubicSpline(tau_ext, lam_ext, bc_type="periodic")

    kf = {}
    kb = {}
    drifts = {}
    logk_f = {}
    logk_b = {}
    for sign in (+1.0, -1.0):
        ic = (-mz0, -sign * norm0, mx0)
        final, drifts[sign], logk_f[sign] = _integrate_mode(
            ic, gamma, lam_of_tau, beta)
        kf[sign] = float(final[2] / mx0)
        final_b, _, logk_b[sign] = _integrate_mode(
            ic, gamma, lam_of_tau, beta, backward=True)
        kb[sign] = float(mx0 / final_b[2])
    sign_p = max(kf, key=lambda s: kf[s])
    sign_m = min(kb, key=lambda s: kb[s])

    mono = _richardson_matrix(
        lambda s: _spin1_monodromy(s, gamma, beta), lam)
    mono_rev = _richardson_matrix(
        lambda s: _spin1_monodromy(s, gamma, beta, reverse=True), lam)
    kp = float(np.max(np.linalg.eigvals(mono).real))
    km = 1.0 / float(np.max(np.linalg.eigvals(mono_rev).real))

    prop = _evolve_extrapolated(lam, gamma, beta)
    tk = prop.trace
    tk_sq = tk * tk
    tr_ksq = float(np.trace(prop.k @ prop.k))
    antisym = 0.5 * (tk_sq - tr_ksq)
    sym = 0.5 * (tk_sq + tr_ksq)

    # the trajectory tangent solves the same linear flow with eigenvalue 1
    mvec0 = (mx0, float(solution.nu[0]), mz0)
    mvec_final, mvec_drift, _ = _integrate_mode(
        mvec0, gamma, lam_of_tau, beta, with_log=False)
    unit_err = float(np.max(np.abs(np.asarray(mvec_final) - np.asarray(mvec0))))

    script_i = solution.script_i
    return ReplicaCheck(
        trace_k=tk,
        two_cosh_i=2.0 * math.cosh(script_i),
        kappa_plus=kp,
        kappa_minus=km,
        antisym_trace=antisym,
        sym_trace=sym,
        ell_from_k=ell_estimate(prop),
        ell_from_i=math.tanh(script_i),
        extras={
            "kappa_plus_closed": math.exp(2.0 * script_i),
            "kappa_minus_closed": math.exp(-2.0 * script_i),
            "kappa_ode_plus": kf[sign_p],
            "kappa_ode_minus": kb[sign_m],
            "kappa_quad_plus": math.exp(logk_f[sign_p]),
            "kappa_quad_minus": math.exp(-logk_b[sign_m]),
            "bilinear_drift": max(drifts.values()),
            "unit_eigenvector_error": unit_err,
            "mvec_bilinear_drift": mvec_drift,
        },
    )


def delta_F(model: ModelSpec, beta: float, n_grid: int = 4096):
    """(DeltaF, beta*DeltaF) with the two factors from different routes.

    DeltaF = F[m_z(tau)] - F(m0): the saddle path from the `wkb` solver fed
    through the functional, minus the static metastable free energy.  The
    product beta*DeltaF is the escape exponent per spin and must agree with
    the quadrature-side alpha.
    """
    _, solution = wkb_alpha(model, beta, n_grid=n_grid)
    f_saddle = functional_free_energy(solution.m_z, model, beta)
    ex = static_extrema(model, beta)
    delta = f_saddle - ex.f0
    return delta, beta * delta
