"""Experiment harness: escape campaigns, exponent fits, side-by-side
comparison tables, and the narrow-barrier scaling analyzer.

The campaign half drives many independent escape chains over a ladder of
system sizes and fits ln(mean_sweeps * N) against N, whose slope is the
per-spin escape exponent; uncertainties come from a nonparametric bootstrap
over runs because escape-time distributions are heavy tailed.  The
narrow-barrier half works at the crossing field where the flanking minima
of the effective potential exchange order, evaluates the tunneling action
through the barrier spike as a function of system size, and classifies the
large-N regime from the width/height scaling exponents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from multiprocessing import Pool

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.optimize import brentq

from .model import ModelSpec, SpikeSpec
from .qmc import EscapeRecord, escape_sweep_counts, reversal_midpoint
from .wkb import _gl, _u_pot, _u_pot1, _u_pot2, wkb_alpha


class InsufficientDataError(ValueError):
    """Too few sizes or runs inside the requested fit window."""


# --------------------------------------------------------------------------
# scaling fit
# --------------------------------------------------------------------------

@dataclass
class ScalingFit:
    """Exponent fit of escape cost against system size.

    alpha is the least-squares slope of ln(mean_sweeps * N) versus N;
    stderr its bootstrap standard error; residuals maps each N in the
    window to the data minus the fitted line.
    """

    alpha: float
    stderr: float
    n_range: tuple
    n_runs_per_n: dict
    residuals: dict


def _slope_intercept(ns, ys):
    ns = np.asarray(ns, dtype=float)
    ys = np.asarray(ys, dtype=float)
    nbar = ns.mean()
    ybar = ys.mean()
    var = float(((ns - nbar) ** 2).sum())
    slope = float(((ns - nbar) * (ys - ybar)).sum()) / var
    return slope, ybar - slope * nbar


def fit_alpha(records, n_min: int = 12, n_max: int = 16,
              n_bootstrap: int = 1000, seed: int = 0) -> ScalingFit:
    """Least-squares exponent through (N, ln(mean_sweeps * N)).

    Uses records with n_min <= N <= n_max; requires at least 3 distinct
    sizes with at least 50 runs each.  The bootstrap resamples runs within
    each size independently, so identical per-size sweep counts give a
    stderr of exactly zero.
    """
    sweeps_by_n: dict = {}
    for rec in records:
        if n_min <= rec.n_spins <= n_max:
            sweeps_by_n.setdefault(rec.n_spins, []).append(rec.sweeps)
    ns = sorted(sweeps_by_n)
    if len(ns) < 3 or any(len(sweeps_by_n[n]) < 50 for n in ns):
        raise InsufficientDataError(
            f"need >= 3 sizes with >= 50 runs each in [{n_min}, {n_max}], "
            f"have {({n: len(v) for n, v in sweeps_by_n.items()})}")
    samples = {n: np.asarray(sweeps_by_n[n], dtype=float) for n in ns}
    ys = [math.log(samples[n].mean() * n) for n in ns]
    slope, intercept = _slope_intercept(ns, ys)
    residuals = {n: y - (intercept + slope * n) for n, y in zip(ns, ys)}

    rng = np.random.default_rng(seed)
    boot = np.empty(n_bootstrap)
    for b in range(n_bootstrap):
        yb = [math.log(rng.choice(samples[n], size=samples[n].size).mean() * n)
              for n in ns]
        boot[b], _ = _slope_intercept(ns, yb)
    stderr = float(boot.std(ddof=1))
    return ScalingFit(alpha=slope, stderr=stderr, n_range=(ns[0], ns[-1]),
                      n_runs_per_n={n: samples[n].size for n in ns},
                      residuals=residuals)


# --------------------------------------------------------------------------
# escape campaigns
# --------------------------------------------------------------------------

def _campaign_task(payload):
    (model_config, beta, n, run_idx, seed_base, thresholds,
     max_sweeps, m_mid) = payload
    from .model import model_from_config
    model = model_from_config(model_config)
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([seed_base, n, run_idx])))
    crossed = escape_sweep_counts(n, model, beta, rng, max_sweeps,
                                  thresholds=thresholds, m_mid=m_mid)
    return n, run_idx, crossed


def escape_campaign(model: ModelSpec, beta: float, n_list, runs: int,
                    seed_base: int, thresholds=(0.25,),
                    max_sweeps: int = 10 ** 6, workers: int = 1,
                    m_mid: float | None = None) -> dict:
    """Independent escape chains over sizes n_list, `runs` chains each.

    Chain (n, run_idx) draws its generator from the seed sequence
    (seed_base, n, run_idx), so any subset of the campaign reproduces
    exactly.  Multiple thresholds are measured inside a single chain.
    Returns {threshold: [EscapeRecord, ...]} ordered by (n, run_idx);
    workers > 1 distributes chains over a process pool.
    """
    from .model import model_to_config

    if m_mid is None:
        m_mid = reversal_midpoint(model, beta)
    thresholds = tuple(sorted(thresholds))
    config = model_to_config(model)
    tasks = [(config, beta, n, run_idx, seed_base, thresholds,
              max_sweeps, m_mid)
             for n in n_list for run_idx in range(runs)]
    if workers > 1:
        with Pool(workers) as pool:
            raw = list(pool.imap_unordered(_campaign_task, tasks))
    else:
        raw = [_campaign_task(t) for t in tasks]
    raw.sort(key=lambda item: (list(n_list).index(item[0]), item[1]))

    h = model.h if model.is_curie_weiss else math.nan
    out = {thr: [] for thr in thresholds}
    for n, run_idx, crossed in raw:
        for thr in thresholds:
            swp = crossed[thr]
            out[thr].append(EscapeRecord(
                n_spins=n, beta=beta, gamma=model.gamma, h=h,
                seed=run_idx, sweeps=swp if swp is not None else max_sweeps,
                escaped=swp is not None))
    return out


# --------------------------------------------------------------------------
# comparison table
# --------------------------------------------------------------------------

COMPARE_CSV_HEADER = "gamma,h,beta,alpha_wkb,alpha_qmc,alpha_qmc_err"


def compare(points, n_list, runs: int, seed_base: int,
            threshold: float = 0.25, max_sweeps: int = 10 ** 6,
            workers: int = 1, fit_window=(12, 16)) -> list:
    """Quadrature exponent next to the sampled exponent per (gamma, h, beta).

    Each grid point runs the full campaign + fit; failures at a point leave
    NaNs in its row rather than aborting the table.
    """
    rows = []
    for gamma, h, beta in points:
        row = {"gamma": gamma, "h": h, "beta": beta,
               "alpha_wkb": math.nan, "alpha_qmc": math.nan,
               "alpha_qmc_err": math.nan}
        try:
            model = ModelSpec.curie_weiss(gamma, h)
            row["alpha_wkb"], _ = wkb_alpha(model, beta)
            records = escape_campaign(
                model, beta, n_list, runs, seed_base,
                thresholds=(threshold,), max_sweeps=max_sweeps,
                workers=workers)[threshold]
            fit = fit_alpha(records, n_min=fit_window[0], n_max=fit_window[1])
            row["alpha_qmc"] = fit.alpha
            row["alpha_qmc_err"] = fit.stderr
        except Exception as err:  # noqa: BLE001 - table must survive bad points
            row["error"] = f"{type(err).__name__}: {err}"
        rows.append(row)
    return rows


def write_compare_csv(path, rows, plan: dict | None = None):
    with open(path, "w") as fh:
        for key, val in (plan or {}).items():
            fh.write(f"# {key} = {val}\n")
        for row in rows:
            if "error" in row:
                fh.write(f"# error at gamma={row['gamma']!r} h={row['h']!r} "
                         f"beta={row['beta']!r}: {row['error']}\n")
        fh.write(COMPARE_CSV_HEADER + "\n")
        for row in rows:
            fh.write(",".join(repr(float(row[k]))
                              for k in COMPARE_CSV_HEADER.split(",")) + "\n")


def read_compare_csv(path):
    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line == COMPARE_CSV_HEADER:
                continue
            if line.startswith("#"):
                key, _, val = line.lstrip("# ").partition(" = ")
                meta[key.strip()] = val.strip()
                continue
            vals = [float(x) for x in line.split(",")]
            rows.append(dict(zip(COMPARE_CSV_HEADER.split(","), vals)))
    return meta, rows


# --------------------------------------------------------------------------
# narrow-barrier analyzer
# --------------------------------------------------------------------------

@dataclass
class SpikeReport:
    """Size scaling of tunneling through a narrow barrier spike.

    gamma_c is the transverse field where the flanking minima of U are
    degenerate; actions maps N to the total tunneling exponent N * int p dm
    at that field and energy; t_c_by_n maps N to the thermal crossover
    temperature estimate.  scaling_exponent = 1 - delta - chi/2 governs the
    growth of the quantum exponent, classical_exponent = 1 - chi that of
    the over-the-barrier exponent; regime summarizes their signs, with
    WKB_INVALID overriding both when the largest-N action is not large.
    """

    gamma_c: float
    kappa: float
    gamma_factor: float
    mu_est: float
    scaling_exponent: float
    classical_exponent: float
    regime: str
    t_c_estimate: float
    n_list: tuple = ()
    actions: dict = field(default_factory=dict)
    t_c_by_n: dict = field(default_factory=dict)


def crossing_field(spike: SpikeSpec, g0_poly=(0.0, 1.0)) -> float:
    """Transverse field at which the spike's flanking minima are degenerate.

    The base potential -Gamma*sqrt(1 - m^2) - g0(m) becomes stationary at
    the spike center when Gamma = g0'(m_b) * sqrt(1/m_b^2 - 1); the minima
    on either side of the spike then exchange order.
    """
    g0p = float(npoly.polyval(spike.m_b, npoly.polyder(list(g0_poly))))
    return g0p * math.sqrt(1.0 / spike.m_b ** 2 - 1.0)


def _flank_minima(model: ModelSpec, spike: SpikeSpec):
    """Locations and values of the potential minima flanking the spike.

    The rectangular spike drops to the base potential just outside its
    support, and the base rises away from m_b at the crossing field, so
    the flank minima are the support corners at their base-only values.
    Continuous shapes are searched for stationary or kink minima on each
    side; the kink case (a one-sided slope change) shows up as a sign
    change of U' across one grid cell, which brentq collapses onto the
    corner, so both cases go through the same root-bracketing scan.
    """
    dm = spike.delta_m
    m_b = spike.m_b
    if spike.shape == "rectangular":
        base = ModelSpec(gamma=model.gamma, g_poly=model.g_poly, spike=None)
        a = m_b - 0.5 * dm
        b = m_b + 0.5 * dm
        return ((a, float(_u_pot(a, 1.0, base))),
                (b, float(_u_pot(b, 1.0, base))))

    lo = max(-0.999999, m_b - 12.0 * dm)
    hi = min(0.999999, m_b + 12.0 * dm)

    def upot(m):
        return float(_u_pot(m, 1.0, model))

    def du(m):
        return float(_u_pot1(m, 1.0, model))

    def side_minimum(a, b):
        grid = np.linspace(a, b, 2048)
        slopes = np.array([du(x) for x in grid])
        cands = [a, b]
        for i in range(len(grid) - 1):
            if slopes[i] < 0.0 <= slopes[i + 1]:
                cands.append(brentq(du, grid[i], grid[i + 1], xtol=5e-16))
        best = min(cands, key=upot)
        return best, upot(best)

    excl = 0.25 * dm if spike.shape == "triangular" else dm
    left = side_minimum(lo, m_b - excl)
    right = side_minimum(m_b + excl, hi)
    return left, right


def _composite_gl(f, a, b, n_panels=48, order=8):
    x, w = _gl(order)
    edges = np.linspace(a, b, n_panels + 1)
    total = 0.0
    for i in range(n_panels):
        h = edges[i + 1] - edges[i]
        nodes = edges[i] + h * x
        total += h * float(np.asarray(f(nodes)) @ w)
    return float(total)


def _p_clipped(m, e, model):
    """Under-barrier momentum with the radicand clamped at zero.

    Identical to the exact momentum inside the forbidden region; the clamp
    only matters within roundoff of the turning points, where the exact
    guard would otherwise trip on a -1e-17 radicand.
    """
    m = np.asarray(m, dtype=float)
    gr = model.gamma * np.sqrt(np.maximum(1.0 - m * m, 1e-300))
    eg = e + np.asarray(model.g(m))
    rad = np.maximum(eg * eg - gr * gr, 0.0)
    return np.arcsinh(np.sqrt(rad) / gr)


def _inv_v_clipped(m, e, model):
    m = np.asarray(m, dtype=float)
    gr = model.gamma * np.sqrt(np.maximum(1.0 - m * m, 1e-300))
    eg = e + np.asarray(model.g(m))
    return 1.0 / np.sqrt(np.maximum(eg * eg - gr * gr, 1e-300))


def _spike_crossings(model: ModelSpec, spike: SpikeSpec, e: float,
                     m_left: float, m_right: float):
    """Where U crosses the flank level e on either side of the spike.

    On the higher flank the crossing is the flank minimum itself (U = e
    there by construction), which a root bracket cannot straddle, so that
    side short-circuits to the minimum location.
    """
    if spike.shape == "rectangular":
        return (spike.m_b - 0.5 * spike.delta_m,
                spike.m_b + 0.5 * spike.delta_m)

    def f(m):
        return float(_u_pot(m, 1.0, model)) - e

    eps = 1e-7 * spike.delta_m
    a0 = m_left if f(m_left + eps) >= 0.0 else brentq(
        f, m_left + eps, spike.m_b, xtol=5e-16)
    a1 = m_right if f(m_right - eps) >= 0.0 else brentq(
        f, spike.m_b, m_right - eps, xtol=5e-16)
    return float(a0), float(a1)


def _spike_top_period(model: ModelSpec, spike: SpikeSpec) -> float:
    """Harmonic traversal period at the spike's barrier top.

    Valid for shapes with a smooth concave top; the flat and kinked tops
    have no harmonic scale and raise through the curvature sign check.
    """
    dm = spike.delta_m
    grid = np.linspace(spike.m_b - dm, spike.m_b + dm, 4001)
    u = np.array([float(_u_pot(x, 1.0, model)) for x in grid])
    i = int(np.argmax(u))
    i = min(max(i, 1), len(grid) - 2)
    top = brentq(lambda x: float(_u_pot1(x, 1.0, model)),
                 grid[i - 1], grid[i + 1], xtol=5e-16)
    upp = float(_u_pot2(top, 1.0, model))
    if upp >= 0.0:
        raise ValueError("spike top has no concave harmonic scale")
    r = math.sqrt(max(1.0 - top * top, 1e-300))
    return math.pi / math.sqrt(model.gamma * r * abs(upp))


def spike_report(spike: SpikeSpec, g0_poly=(0.0, 1.0),
                 n_list=(64, 128, 256, 512)) -> SpikeReport:
    """Size scan of the narrow-barrier tunneling exponent at the crossing
    field, with the regime classification from the scaling exponents.

    For each N the spike is instantiated at that size, the degenerate-level
    energy is the higher of the two flanking minima, and the reported
    action is the total exponent N * int p dm.  The crossover temperature
    uses the harmonic period at the barrier top for smooth shapes; the
    flat-top and kink-top shapes have no harmonic scale but keep a finite
    traversal period at the flank level, which is used instead.  mu_est
    normalizes the largest-N action by p(m_b) * delta_m per its defining
    relation.
    """
    gamma_c = crossing_field(spike, g0_poly)
    base = ModelSpec(gamma=gamma_c, g_poly=tuple(float(c) for c in g0_poly),
                     spike=spike)
    g0p = float(npoly.polyval(spike.m_b, npoly.polyder(list(g0_poly))))
    gamma_factor = 1.0 / math.sqrt(g0p * math.sinh(math.log(1.0 / spike.m_b)))

    actions = {}
    t_c = {}
    mu_est = math.nan
    for n in n_list:
        model = base.with_spike_at_n(n)
        sp = spike.at_n(n)
        (m_l, u_l), (m_r, u_r) = _flank_minima(model, sp)
        e = max(u_l, u_r)
        a0, a1 = _spike_crossings(model, sp, e, m_l, m_r)
        s_per = _composite_gl(lambda m: _p_clipped(m, e, model), a0, a1)
        actions[n] = n * s_per
        if sp.shape in ("rectangular", "triangular"):
            s0 = _composite_gl(lambda m: _inv_v_clipped(m, e, model), a0, a1)
            t_c[n] = 1.0 / s0
        else:
            t_c[n] = 1.0 / _spike_top_period(model, sp)
        if n == max(n_list):
            p_center = float(_p_clipped(sp.m_b, e, model))
            mu_est = (s_per / (p_center * sp.delta_m)
                      if p_center > 0.0 else math.nan)

    scaling_exponent = 1.0 - spike.delta - 0.5 * spike.chi
    classical_exponent = 1.0 - spike.chi
    n_max = max(n_list)
    if actions[n_max] <= 1.0:
        regime = "WKB_INVALID"
    elif scaling_exponent <= 0.0 < classical_exponent:
        regime = "QUANTUM_POLY_CLASSICAL_EXP"
    else:
        regime = "BOTH_EXP"
    kappa = math.sqrt(spike.c) * spike.d * gamma_factor * mu_est
    return SpikeReport(
        gamma_c=gamma_c, kappa=kappa, gamma_factor=gamma_factor,
        mu_est=mu_est, scaling_exponent=scaling_exponent,
        classical_exponent=classical_exponent, regime=regime,
        t_c_estimate=t_c[n_max], n_list=tuple(n_list),
        actions=actions, t_c_by_n=t_c)


def write_spike_report(path, report: SpikeReport, plan: dict | None = None):
    """Key-value text rendering, one line per field, per-N lines expanded."""
    with open(path, "w") as fh:
        for key, val in (plan or {}).items():
            fh.write(f"# {key} = {val}\n")
        fh.write(f"gamma_c = {report.gamma_c!r}\n")
        fh.write(f"kappa = {report.kappa!r}\n")
        fh.write(f"gamma_factor = {report.gamma_factor!r}\n")
        fh.write(f"mu_est = {report.mu_est!r}\n")
        fh.write(f"scaling_exponent = {report.scaling_exponent!r}\n")
        fh.write(f"classical_exponent = {report.classical_exponent!r}\n")
        fh.write(f"regime = {report.regime}\n")
        fh.write(f"t_c_estimate = {report.t_c_estimate!r}\n")
        for n in report.n_list:
            fh.write(f"action_n{n} = {report.actions[n]!r}\n")
        for n in report.n_list:
            fh.write(f"t_c_n{n} = {report.t_c_by_n[n]!r}\n")
