"""Continuous-time worldline sampler for the mean-field spin ensemble.

Each spin carries a piecewise-constant worldline sigma_j(tau) on [0, beta)
with periodic closure, parametrized by a base sign at tau = 0 plus an even
number of flip times (kinks).  A path configuration carries Gibbs weight

    exp( (total kinks) * ln Gamma  +  N * int_0^beta g(m(tau)) dtau ),

where m(tau) is the instantaneous mean magnetization.  m is piecewise
constant on the merged grid of all kinks, so the integral is an exact
finite sum and every update can maintain it incrementally.

All moves reduce to one primitive: flip sigma_j on an arc [a, b).  In kink
language that toggles flip points at a and b (a = 0 toggles the base sign
instead, b = beta toggles nothing), which covers pair insertion, pair
removal, single-kink shifts with periodic wraparound, and whole-worldline
flips uniformly, and makes insertion/removal exact inverses of each other.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_left, bisect_right, insort
from dataclasses import dataclass, field

import numpy as np

from .model import ModelSpec, static_extrema


class WorldlineError(ValueError):
    """A worldline configuration violated a structural invariant."""


class BookkeepingError(RuntimeError):
    """Incremental weight tracking drifted beyond tolerance."""


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass
class WorldlineConfig:
    """Periodic worldlines of N spins plus the merged magnetization profile.

    base[j] is sigma_j(0); kinks[j] is the strictly increasing list of flip
    times in (0, beta).  profile_times/profile_totals cache the merged
    piecewise-constant total 2*S_z(tau) = sum_j sigma_j(tau): segment i runs
    from profile_times[i] to profile_times[i+1] (the last wraps to beta) and
    profile_times[0] is always 0.0.  Totals are integers in {-N, ..., N}
    with the parity of N.
    """

    n_spins: int
    beta: float
    base: list
    kinks: list
    profile_times: list = field(default_factory=list)
    profile_totals: list = field(default_factory=list)

    def __post_init__(self):
        if not self.profile_times:
            self.rebuild_profile()

    def rebuild_profile(self):
        """Recompute the merged profile from the worldlines."""
        events = []
        for j, times in enumerate(self.kinks):
            for t in times:
                events.append((t, j))
        events.sort()
        sigma = list(self.base)
        total = sum(sigma)
        self.profile_times = [0.0]
        self.profile_totals = [total]
        for t, j in events:
            total -= 2 * sigma[j]
            sigma[j] = -sigma[j]
            self.profile_times.append(t)
            self.profile_totals.append(total)

    def slice_total(self) -> int:
        """2*S_z at tau = 0, i.e. sum_j sigma_j(0)."""
        return self.profile_totals[0]

    def total_kinks(self) -> int:
        return sum(len(k) for k in self.kinks)

    def copy(self) -> "WorldlineConfig":
        return WorldlineConfig(
            n_spins=self.n_spins, beta=self.beta,
            base=list(self.base), kinks=[list(k) for k in self.kinks],
            profile_times=list(self.profile_times),
            profile_totals=list(self.profile_totals))

    def validate(self):
        """Full structural check; raises WorldlineError on any violation."""
        n, beta = self.n_spins, self.beta
        if n < 1 or beta <= 0.0:
            raise WorldlineError("need n_spins >= 1 and beta > 0")
        if len(self.base) != n or len(self.kinks) != n:
            raise WorldlineError("worldline count does not match n_spins")
        for j in range(n):
            if self.base[j] not in (-1, 1):
                raise WorldlineError(f"base[{j}] not a sign")
            times = self.kinks[j]
            if len(times) % 2 != 0:
                raise WorldlineError(f"odd kink count on spin {j}")
            for i, t in enumerate(times):
                if not 0.0 <= t < beta:
                    raise WorldlineError(f"kink outside [0, beta) on spin {j}")
                if i > 0 and times[i - 1] >= t:
                    raise WorldlineError(f"kinks not increasing on spin {j}")
        saved = (self.profile_times, self.profile_totals)
        self.rebuild_profile()
        rebuilt = (self.profile_times, self.profile_totals)
        self.profile_times, self.profile_totals = saved
        if saved[0] != rebuilt[0] or saved[1] != rebuilt[1]:
            raise WorldlineError("cached profile inconsistent with worldlines")
        for total in self.profile_totals:
            if not -n <= total <= n or (total - n) % 2 != 0:
                raise WorldlineError("profile total out of range")


def init_metastable(n: int, beta: float) -> WorldlineConfig:
    """All spins down with no kinks: the product-state metastable start."""
    return WorldlineConfig(n_spins=n, beta=beta,
                           base=[-1] * n, kinks=[[] for _ in range(n)])


# --------------------------------------------------------------------------
# weight
# --------------------------------------------------------------------------

def _g_table(model: ModelSpec, n: int) -> list:
    """N*g(T/N) for every total T = -N, -N+2, ..., N, indexed by (T+N)//2."""
    totals = np.arange(-n, n + 1, 2)
    return [float(v) for v in n * np.asarray(model.g(totals / n))]


def _segment_lengths(times, beta):
    out = []
    for i, t in enumerate(times):
        end = times[i + 1] if i + 1 < len(times) else beta
        out.append(end - t)
    return out


def _g_integral(config: WorldlineConfig, g_tab) -> float:
    """N * int_0^beta g(m(tau)) dtau as an exact segment sum."""
    n = config.n_spins
    total = 0.0
    for seg_total, length in zip(config.profile_totals,
                                 _segment_lengths(config.profile_times,
                                                  config.beta)):
        total += g_tab[(seg_total + n) // 2] * length
    return total


def log_weight(config: WorldlineConfig, model: ModelSpec) -> float:
    """ln of the path weight, recomputed from scratch.

    Sum of (total kinks) * ln Gamma and N * int g(m) dtau; the kink term is
    0 for kink-free paths even at Gamma = 0.
    """
    total = _g_integral(config, _g_table(model, config.n_spins))
    kinks = config.total_kinks()
    if kinks > 0:
        total += kinks * math.log(model.gamma)
    return total


# --------------------------------------------------------------------------
# the arc-flip primitive
# --------------------------------------------------------------------------

def _sigma_at(base_j: int, kinks_j, tau: float) -> int:
    """sigma_j just after tau (flips at kink times take effect at them)."""
    return base_j if bisect_right(kinks_j, tau) % 2 == 0 else -base_j


def _flip_delta_g(config: WorldlineConfig, j: int, a: float, b: float,
                  g_tab) -> float:
    """Change of N*int g(m) if sigma_j were flipped on [a, b).  Read-only."""
    n = config.n_spins
    times = config.profile_times
    totals = config.profile_totals
    base_j = config.base[j]
    kinks_j = config.kinks[j]
    m = len(times)
    i = bisect_right(times, a) - 1
    delta = 0.0
    while i < m:
        start = times[i]
        if start >= b:
            break
        end = times[i + 1] if i + 1 < m else config.beta
        overlap = min(end, b) - max(start, a)
        if overlap > 0.0:
            sigma = _sigma_at(base_j, kinks_j, max(start, a))
            told = totals[i]
            delta += (g_tab[(told - 2 * sigma + n) // 2]
                      - g_tab[(told + n) // 2]) * overlap
        i += 1
    return delta


def _commit_flip(config: WorldlineConfig, j: int, a: float, b: float):
    """Flip sigma_j on [a, b), updating kinks, base and the profile in place.

    Endpoints toggle flip points: an endpoint already present in spin j's
    kink list is removed (and its now-redundant profile breakpoint merged
    away), a new endpoint is inserted; a = 0 flips the base sign instead and
    b = beta toggles nothing.  Callers guarantee that fresh endpoints do not
    collide with any existing profile breakpoint.
    """
    times = config.profile_times
    totals = config.profile_totals
    kinks_j = config.kinks[j]
    beta = config.beta

    for t in (a, b):
        if 0.0 < t < beta:
            i = bisect_left(times, t)
            if i == len(times) or times[i] != t:
                times.insert(i, t)
                totals.insert(i, totals[i - 1])

    base_j = config.base[j]
    i = bisect_left(times, a)
    while i < len(times) and times[i] < b:
        sigma = base_j if bisect_right(kinks_j, times[i]) % 2 == 0 else -base_j
        totals[i] -= 2 * sigma
        i += 1

    removed = []
    for t in (a, b):
        if t == 0.0:
            config.base[j] = -config.base[j]
        elif t == beta:
            pass
        else:
            i = bisect_left(kinks_j, t)
            if i < len(kinks_j) and kinks_j[i] == t:
                del kinks_j[i]
                removed.append(t)
            else:
                kinks_j.insert(i, t)

    for t in removed:
        i = bisect_left(times, t)
        totals.pop(i)
        times.pop(i)


# --------------------------------------------------------------------------
# Metropolis-Hastings sweep
# --------------------------------------------------------------------------

MOVE_NAMES = ("insert", "remove", "shift", "flip")
_SHIFT_WINDOW = 0.25  # zeta drawn uniformly from +-beta/8


@dataclass
class SweepStats:
    """Per-sweep acceptance bookkeeping.

    delta_g accumulates the applied change of N*int g dtau so callers can
    maintain a running log-weight; delta_kinks likewise for the kink count.
    """

    proposed: dict = field(default_factory=lambda: dict.fromkeys(MOVE_NAMES, 0))
    accepted: dict = field(default_factory=lambda: dict.fromkeys(MOVE_NAMES, 0))
    delta_g: float = 0.0
    delta_kinks: int = 0

    def merge(self, other: "SweepStats"):
        for name in MOVE_NAMES:
            self.proposed[name] += other.proposed[name]
            self.accepted[name] += other.accepted[name]
        self.delta_g += other.delta_g
        self.delta_kinks += other.delta_kinks


def _collides(times, t: float) -> bool:
    i = bisect_left(times, t)
    return i < len(times) and times[i] == t


def _pair_count(k: int) -> int:
    return k * (k - 1) // 2


def sweep(config: WorldlineConfig, model: ModelSpec, rng,
          g_tab=None, max_kinks=None) -> SweepStats:
    """N attempted single-worldline updates with exact Hastings factors.

    Move mixture per attempt: kink-pair insertion 0.3, pair removal 0.3,
    single-kink shift 0.2, whole-worldline flip 0.2.  Insertion draws two
    iid uniform times and flips the enclosed arc; its reverse is the removal
    of an arbitrary (not necessarily adjacent) unordered kink pair, so the
    acceptance ratios carry beta^2 / (2 C(k+2, 2)) and its reciprocal,
    where k counts the spin's kinks before the move.  Shift displaces one
    kink by zeta ~ U(-beta/8, beta/8) cyclically (a symmetric proposal) and
    the worldline flip is its own inverse.  Every attempt consumes exactly
    five uniforms from a per-sweep block, so replay is deterministic given
    the generator state.  max_kinks rejects insertions that would push one
    worldline beyond the cap, restricting the chain to the truncated state
    space used by the enumerable balance test.
    """
    n = config.n_spins
    beta = config.beta
    if g_tab is None:
        g_tab = _g_table(model, n)
    log_gamma = math.log(model.gamma) if model.gamma > 0.0 else -math.inf
    stats = SweepStats()
    u = rng.random(5 * n)
    for att in range(n):
        u_move, u_spin, u_x1, u_x2, u_acc = u[5 * att: 5 * att + 5]
        j = min(int(u_spin * n), n - 1)
        kinks_j = config.kinks[j]
        k = len(kinks_j)
        times = config.profile_times

        if u_move < 0.3:
            move = "insert"
            stats.proposed[move] += 1
            if max_kinks is not None and k + 2 > max_kinks:
                continue
            t1, t2 = u_x1 * beta, u_x2 * beta
            a, b = (t1, t2) if t1 <= t2 else (t2, t1)
            if a == b or _collides(times, a) or _collides(times, b):
                continue
            dg = _flip_delta_g(config, j, a, b, g_tab)
            log_ratio = (dg + 2.0 * log_gamma
                         + math.log(beta * beta / (2.0 * _pair_count(k + 2))))
            if log_ratio >= 0.0 or u_acc < math.exp(log_ratio):
                _commit_flip(config, j, a, b)
                stats.accepted[move] += 1
                stats.delta_g += dg
                stats.delta_kinks += 2
        elif u_move < 0.6:
            move = "remove"
            stats.proposed[move] += 1
            if k < 2:
                continue
            i1 = min(int(u_x1 * k), k - 1)
            i2 = min(int(u_x2 * (k - 1)), k - 2)
            if i2 >= i1:
                i2 += 1
            a, b = ((kinks_j[i1], kinks_j[i2]) if i1 < i2
                    else (kinks_j[i2], kinks_j[i1]))
            dg = _flip_delta_g(config, j, a, b, g_tab)
            log_ratio = (dg - 2.0 * log_gamma
                         + math.log(2.0 * _pair_count(k) / (beta * beta)))
            if log_ratio >= 0.0 or u_acc < math.exp(log_ratio):
                _commit_flip(config, j, a, b)
                stats.accepted[move] += 1
                stats.delta_g += dg
                stats.delta_kinks -= 2
        elif u_move < 0.8:
            move = "shift"
            stats.proposed[move] += 1
            if k == 0:
                continue
            i1 = min(int(u_x1 * k), k - 1)
            t = kinks_j[i1]
            zeta = (u_x2 - 0.5) * (_SHIFT_WINDOW * beta)
            tp = (t + zeta) % beta
            if zeta == 0.0 or tp == 0.0 or _collides(times, tp):
                continue
            if zeta > 0.0:
                arcs = ([(t, t + zeta)] if t + zeta < beta
                        else [(t, beta), (0.0, tp)])
            else:
                arcs = ([(tp, t)] if t + zeta >= 0.0
                        else [(0.0, t), (tp, beta)])
            dg = sum(_flip_delta_g(config, j, a, b, g_tab) for a, b in arcs)
            if dg >= 0.0 or u_acc < math.exp(dg):
                for a, b in arcs:
                    _commit_flip(config, j, a, b)
                stats.accepted[move] += 1
                stats.delta_g += dg
        else:
            move = "flip"
            stats.proposed[move] += 1
            dg = _flip_delta_g(config, j, 0.0, beta, g_tab)
            if dg >= 0.0 or u_acc < math.exp(dg):
                _commit_flip(config, j, 0.0, beta)
                stats.accepted[move] += 1
                stats.delta_g += dg
    return stats


# --------------------------------------------------------------------------
# equilibrium sampling
# --------------------------------------------------------------------------

def equilibrium_sample(n: int, model: ModelSpec, beta: float, rng,
                       n_samples: int, thin: int = 2,
                       burn_in: int = 1000):
    """Empirical tau = 0 slice distribution of the total magnetization.

    Runs burn_in sweeps, then records sum_j sigma_j(0) every `thin` sweeps.
    Returns (two_m, probs) on the full grid two_m = -n, -n+2, ..., n so the
    histogram aligns with the sector-diagonalization oracle.
    """
    config = init_metastable(n, beta)
    g_tab = _g_table(model, n)
    for _ in range(burn_in):
        sweep(config, model, rng, g_tab=g_tab)
    counts = np.zeros(n + 1)
    for _ in range(n_samples):
        for _ in range(thin):
            sweep(config, model, rng, g_tab=g_tab)
        counts[(config.slice_total() + n) // 2] += 1
    two_m = np.arange(-n, n + 1, 2)
    return two_m, counts / counts.sum()


# --------------------------------------------------------------------------
# metastable escape experiment
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EscapeRecord:
    """One escape run: sweeps until the reversal criterion (or the budget)."""

    n_spins: int
    beta: float
    gamma: float
    h: float
    seed: int
    sweeps: int
    escaped: bool


def time_above(config: WorldlineConfig, m_mid: float) -> float:
    """Imaginary time spent with slice magnetization above m_mid."""
    cut = config.n_spins * m_mid
    total = 0.0
    for t, seg_total, length in zip(config.profile_times,
                                    config.profile_totals,
                                    _segment_lengths(config.profile_times,
                                                     config.beta)):
        if seg_total > cut:
            total += length
    return total


def reversal_midpoint(model: ModelSpec, beta: float) -> float:
    """Midpoint of the two free-energy minima, the escape dividing line."""
    ex = static_extrema(model, beta)
    return 0.5 * (ex.m0 + ex.m1)


def escape_sweep_counts(n: int, model: ModelSpec, beta: float, rng,
                        max_sweeps: int, thresholds=(0.25,),
                        m_mid: float | None = None,
                        check_every: int = 10_000) -> dict:
    """Sweeps until the above-midpoint time fraction first exceeds each
    threshold, all measured in a single chain.

    Returns {threshold: sweep count or None}; the chain stops once the
    largest threshold is crossed.  Incremental weight bookkeeping is
    cross-checked against a full recomputation every check_every sweeps.
    """
    if m_mid is None:
        m_mid = reversal_midpoint(model, beta)
    thresholds = sorted(thresholds)
    config = init_metastable(n, beta)
    g_tab = _g_table(model, n)
    running_g = _g_integral(config, g_tab)
    crossed = dict.fromkeys(thresholds, None)
    pending = list(thresholds)
    for swp in range(1, max_sweeps + 1):
        stats = sweep(config, model, rng, g_tab=g_tab)
        running_g += stats.delta_g
        frac = time_above(config, m_mid) / beta
        while pending and frac > pending[0]:
            crossed[pending.pop(0)] = swp
        if not pending:
            break
        if swp % check_every == 0:
            exact = _g_integral(config, g_tab)
            if abs(running_g - exact) > 1e-8 * n * beta:
                raise BookkeepingError(
                    f"running weight drifted by {abs(running_g - exact):.3e}")
            running_g = exact
    return crossed


def escape_run(n: int, model: ModelSpec, beta: float, rng,
               max_sweeps: int = 10 ** 8, threshold: float = 0.25,
               m_mid: float | None = None, seed: int = 0) -> EscapeRecord:
    """Single escape chain from the all-down start; records sweeps to the
    reversal criterion, or the budget with escaped=False."""
    counts = escape_sweep_counts(n, model, beta, rng, max_sweeps,
                                 thresholds=(threshold,), m_mid=m_mid)
    swp = counts[threshold]
    return EscapeRecord(
        n_spins=n, beta=beta, gamma=model.gamma, h=model.h, seed=seed,
        sweeps=swp if swp is not None else max_sweeps,
        escaped=swp is not None)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

ESCAPE_CSV_HEADER = "n,beta,gamma,h,seed,sweeps,escaped"


def write_escape_csv(path, records, plan: dict | None = None):
    """Escape records with `# key = value` preamble and the fixed header."""
    with open(path, "w") as fh:
        for key, val in (plan or {}).items():
            fh.write(f"# {key} = {val}\n")
        fh.write(ESCAPE_CSV_HEADER + "\n")
        for rec in records:
            fh.write(f"{rec.n_spins},{rec.beta!r},{rec.gamma!r},{rec.h!r},"
                     f"{rec.seed},{rec.sweeps},{int(rec.escaped)}\n")


def read_escape_csv(path):
    """Returns (meta dict, list of EscapeRecord)."""
    meta = {}
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line.lstrip("# ").partition(" = ")
                meta[key.strip()] = val.strip()
                continue
            if line == ESCAPE_CSV_HEADER:
                continue
            parts = line.split(",")
            records.append(EscapeRecord(
                n_spins=int(parts[0]), beta=float(parts[1]),
                gamma=float(parts[2]), h=float(parts[3]),
                seed=int(parts[4]), sweeps=int(parts[5]),
                escaped=bool(int(parts[6]))))
    return meta, records


def save_checkpoint(path, config: WorldlineConfig, rng, extra=None):
    """Full chain state (worldlines + generator) as JSON for replay."""
    payload = {
        "n_spins": config.n_spins,
        "beta": config.beta,
        "base": list(config.base),
        "kinks": [list(k) for k in config.kinks],
        "rng_state": rng.bit_generator.state,
        "extra": extra or {},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    """Returns (WorldlineConfig, generator, extra dict)."""
    with open(path) as fh:
        payload = json.load(fh)
    config = WorldlineConfig(
        n_spins=payload["n_spins"], beta=payload["beta"],
        base=[int(s) for s in payload["base"]],
        kinks=[[float(t) for t in ks] for ks in payload["kinks"]])
    bitgen = np.random.PCG64()
    rng = np.random.Generator(bitgen)
    rng.bit_generator.state = payload["rng_state"]
    return config, rng, payload["extra"]
