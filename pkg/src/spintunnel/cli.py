"""Command-line front end tying the solvers, the sampler and the
analysis harness together behind reproducible flat-text configs.

Usage:

    spintunnel COMMAND [CONFIG_FILE] [KEY=VALUE ...]

COMMAND is one of instanton, escape, fit, compare, equilibrium, spike,
verify.  CONFIG_FILE holds one `key = value` per line with `#` comments;
trailing KEY=VALUE arguments override the file.  Unknown keys, missing
required keys and unparseable values exit with status 2 and a diagnostic
naming the key; numerical failures exit 1 with a machine-readable
`error = ...` line; success exits 0.

Every output file starts with a comment header recording the fully
resolved plan, so a result file is a rerunnable config.  Floats are
written in shortest round-trip form and all sampling flows from
seed_base, making outputs byte-identical across reruns of the same plan.
The SPINTUNNEL_OUTDIR environment variable overrides the output
directory key.
"""

from __future__ import annotations

import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import analysis, qmc, spectra, wkb
from .model import ModelSpec, SpikeSpec, static_extrema
from .propagator import functional_free_energy, replica_check

OUTDIR_ENV = "SPINTUNNEL_OUTDIR"

_REQUIRED = object()


class ConfigError(Exception):
    """Bad plan input; carries the offending key when one is known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


# --------------------------------------------------------------------------
# plan parsing
# --------------------------------------------------------------------------

def _parse_int_list(text: str):
    return tuple(int(tok.strip()) for tok in text.split(",") if tok.strip())


def _parse_float_list(text: str):
    return tuple(float(tok.strip()) for tok in text.split(",") if tok.strip())


def _parse_points(text: str):
    pts = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        vals = _parse_float_list(chunk)
        if len(vals) != 3:
            raise ValueError(f"point {chunk!r} is not gamma,h,beta")
        pts.append(vals)
    return tuple(pts)


_COMMON = {
    "outdir": (str, "."),
    "workers": (int, 0),
}

_MODEL_KEYS = {
    "gamma": (float, _REQUIRED),
    "h": (float, 0.0),
    "g_poly": (_parse_float_list, ()),
}

_SCHEMAS = {
    "instanton": {
        **_MODEL_KEYS,
        "beta": (float, _REQUIRED),
        "n_grid": (int, 4096),
        "tol": (float, 1e-10),
        "out": (str, "instanton.csv"),
        **_COMMON,
    },
    "escape": {
        **_MODEL_KEYS,
        "beta": (float, _REQUIRED),
        "n_list": (_parse_int_list, (8, 10, 12, 14, 16)),
        "runs": (int, 200),
        "thresholds": (_parse_float_list, (0.25,)),
        "max_sweeps": (int, 10 ** 6),
        "seed_base": (int, 1),
        "out": (str, "escape.csv"),
        **_COMMON,
    },
    "fit": {
        "in": (str, _REQUIRED),
        "n_min": (int, 12),
        "n_max": (int, 16),
        "bootstrap": (int, 1000),
        "seed_base": (int, 1),
        **_COMMON,
    },
    "compare": {
        "points": (_parse_points, _REQUIRED),
        "n_list": (_parse_int_list, (8, 10, 12, 14, 16)),
        "runs": (int, 200),
        "threshold": (float, 0.25),
        "max_sweeps": (int, 10 ** 6),
        "fit_n_min": (int, 12),
        "fit_n_max": (int, 16),
        "seed_base": (int, 1),
        "out": (str, "compare.csv"),
        **_COMMON,
    },
    "equilibrium": {
        **_MODEL_KEYS,
        "beta": (float, _REQUIRED),
        "n": (int, _REQUIRED),
        "n_samples": (int, 100_000),
        "burn_in": (int, 1000),
        "thin": (int, 2),
        "seed_base": (int, 1),
        "out": (str, "equilibrium.csv"),
        **_COMMON,
    },
    "spike": {
        "spike_c": (float, 1.0),
        "spike_d": (float, 1.0),
        "spike_chi": (float, _REQUIRED),
        "spike_delta": (float, _REQUIRED),
        "spike_m_b": (float, 0.6),
        "spike_shape": (str, "gaussian"),
        "spike_n_ref": (int, 64),
        "g0_poly": (_parse_float_list, (0.0, 1.0)),
        "spike_n_list": (_parse_int_list, (64, 128, 256, 512)),
        "out": (str, "spike_report.txt"),
        **_COMMON,
    },
    "verify": {
        **_MODEL_KEYS,
        "beta": (float, _REQUIRED),
        "n_grid": (int, 4096),
        "tol": (float, 1e-12),
        **_COMMON,
    },
}


@dataclass
class RunPlan:
    """One resolved invocation: the command plus its typed key values."""

    command: str
    keys: dict

    def __getitem__(self, key):
        return self.keys[key]

    def header(self) -> dict:
        """Flat plan rendering for output-file preambles."""
        out = {"command": self.command}
        for key, val in self.keys.items():
            if isinstance(val, tuple) and val and isinstance(val[0], tuple):
                out[key] = "; ".join(",".join(repr(x) for x in p) for p in val)
            elif isinstance(val, tuple):
                out[key] = ",".join(repr(x) for x in val)
            elif isinstance(val, float):
                out[key] = repr(val)
            else:
                out[key] = val
        return out


def parse_config_text(text: str) -> dict:
    """Flat `key = value` lines with `#` comments; later keys win."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, sep, val = stripped.partition("=")
        if not sep or not key.strip():
            raise ConfigError(
                f"line {lineno}: expected `key = value`, got {line.strip()!r}")
        raw[key.strip()] = val.strip()
    return raw


def resolve_plan(command: str, raw: dict) -> RunPlan:
    if command not in _SCHEMAS:
        raise ConfigError(
            f"unknown command {command!r}; choose from "
            f"{', '.join(sorted(_SCHEMAS))}", key="command")
    schema = _SCHEMAS[command]
    if "command" in raw:
        if raw.pop("command") != command:
            raise ConfigError("config key `command` disagrees with the "
                              "command argument", key="command")
    keys = {}
    for key, (cast, default) in schema.items():
        if key in raw:
            text = raw.pop(key)
            try:
                keys[key] = cast(text)
            except (TypeError, ValueError) as err:
                raise ConfigError(
                    f"invalid value for key `{key}`: {text!r} ({err})",
                    key=key) from None
        elif default is _REQUIRED:
            raise ConfigError(f"missing required key `{key}`", key=key)
        else:
            keys[key] = default
    if raw:
        bad = sorted(raw)[0]
        raise ConfigError(f"unknown key `{bad}` for command {command!r}",
                          key=bad)
    if "gamma" in keys and keys["g_poly"]:
        keys["h"] = 0.0
    plan = RunPlan(command=command, keys=keys)
    plan.keys["outdir"] = os.environ.get(OUTDIR_ENV, plan.keys["outdir"])
    if plan.keys["workers"] <= 0:
        plan.keys["workers"] = os.cpu_count() or 1
    return plan


def _model_from_plan(plan: RunPlan) -> ModelSpec:
    if plan["g_poly"]:
        return ModelSpec(gamma=plan["gamma"], g_poly=plan["g_poly"])
    return ModelSpec.curie_weiss(plan["gamma"], plan["h"])


def _out_path(plan: RunPlan, name: str | None = None) -> str:
    name = name if name is not None else plan["out"]
    path = name if os.path.isabs(name) else os.path.join(plan["outdir"], name)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return path


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def _run_instanton(plan: RunPlan) -> int:
    model = _model_from_plan(plan)
    alpha, sol = wkb.wkb_alpha(model, plan["beta"], n_grid=plan["n_grid"],
                               tol=plan["tol"])
    path = _out_path(plan)
    wkb.write_instanton_csv(path, sol, plan=plan.header())
    print(f"alpha = {alpha!r}")
    print(f"kind = {sol.kind}")
    print(f"ell = {sol.ell!r}")
    print(f"wrote = {path}")
    return 0


def _threshold_out_name(base: str, thresholds, thr) -> str:
    if len(thresholds) == 1:
        return base
    stem, dot, ext = base.rpartition(".")
    if not dot:
        stem, ext = base, "csv"
    return f"{stem}_t{thr!r}.{ext}"


def _run_escape(plan: RunPlan) -> int:
    model = _model_from_plan(plan)
    by_thr = analysis.escape_campaign(
        model, plan["beta"], plan["n_list"], plan["runs"], plan["seed_base"],
        thresholds=plan["thresholds"], max_sweeps=plan["max_sweeps"],
        workers=plan["workers"])
    header = plan.header()
    for thr in plan["thresholds"]:
        path = _out_path(plan, _threshold_out_name(plan["out"],
                                                   plan["thresholds"], thr))
        qmc.write_escape_csv(path, by_thr[thr],
                             plan={**header, "threshold": repr(thr)})
        n_escaped = sum(r.escaped for r in by_thr[thr])
        print(f"threshold = {thr!r}")
        print(f"escaped = {n_escaped} / {len(by_thr[thr])}")
        print(f"wrote = {path}")
    return 0


def _run_fit(plan: RunPlan) -> int:
    _, records = qmc.read_escape_csv(plan["in"])
    fit = analysis.fit_alpha(records, n_min=plan["n_min"],
                             n_max=plan["n_max"],
                             n_bootstrap=plan["bootstrap"],
                             seed=plan["seed_base"])
    print(f"alpha = {fit.alpha!r}")
    print(f"stderr = {fit.stderr!r}")
    print(f"n_range = {fit.n_range[0]},{fit.n_range[1]}")
    for n in sorted(fit.n_runs_per_n):
        print(f"runs_n{n} = {fit.n_runs_per_n[n]}")
    for n in sorted(fit.residuals):
        print(f"residual_n{n} = {fit.residuals[n]!r}")
    return 0


def _run_compare(plan: RunPlan) -> int:
    rows = analysis.compare(
        plan["points"], plan["n_list"], plan["runs"], plan["seed_base"],
        threshold=plan["threshold"], max_sweeps=plan["max_sweeps"],
        workers=plan["workers"],
        fit_window=(plan["fit_n_min"], plan["fit_n_max"]))
    path = _out_path(plan)
    analysis.write_compare_csv(path, rows, plan=plan.header())
    print(analysis.COMPARE_CSV_HEADER)
    for row in rows:
        print(",".join(repr(float(row[k]))
                       for k in analysis.COMPARE_CSV_HEADER.split(",")))
    print(f"wrote = {path}")
    return 0


def _run_equilibrium(plan: RunPlan) -> int:
    model = _model_from_plan(plan)
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([plan["seed_base"], plan["n"]])))
    two_m, prob_qmc = qmc.equilibrium_sample(
        plan["n"], model, plan["beta"], rng, plan["n_samples"],
        thin=plan["thin"], burn_in=plan["burn_in"])
    _, prob_exact = spectra.equilibrium_mz_distribution(
        plan["n"], model, plan["beta"])
    tv = 0.5 * float(np.abs(prob_qmc - prob_exact).sum())
    path = _out_path(plan)
    with open(path, "w") as fh:
        for key, val in plan.header().items():
            fh.write(f"# {key} = {val}\n")
        fh.write(f"# tv = {tv!r}\n")
        fh.write("two_m,prob_qmc,prob_exact\n")
        for row in zip(two_m, prob_qmc, prob_exact):
            fh.write(f"{int(row[0])},{float(row[1])!r},{float(row[2])!r}\n")
    print(f"tv = {tv!r}")
    print(f"wrote = {path}")
    return 0


def _run_spike(plan: RunPlan) -> int:
    spike = SpikeSpec(c=plan["spike_c"], d=plan["spike_d"],
                      chi=plan["spike_chi"], delta=plan["spike_delta"],
                      m_b=plan["spike_m_b"], shape=plan["spike_shape"],
                      n_ref=plan["spike_n_ref"])
    report = analysis.spike_report(spike, g0_poly=plan["g0_poly"],
                                   n_list=plan["spike_n_list"])
    path = _out_path(plan)
    analysis.write_spike_report(path, report, plan=plan.header())
    print(f"gamma_c = {report.gamma_c!r}")
    print(f"kappa = {report.kappa!r}")
    print(f"mu_est = {report.mu_est!r}")
    print(f"scaling_exponent = {report.scaling_exponent!r}")
    print(f"classical_exponent = {report.classical_exponent!r}")
    print(f"regime = {report.regime}")
    print(f"t_c_estimate = {report.t_c_estimate!r}")
    print(f"wrote = {path}")
    return 0


def _run_verify(plan: RunPlan) -> int:
    model = _model_from_plan(plan)
    beta = plan["beta"]
    alpha, sol = wkb.wkb_alpha(model, beta, n_grid=plan["n_grid"],
                               tol=plan["tol"])
    rep = replica_check(sol, model)
    ex = static_extrema(model, beta)
    meta = wkb.metastable_frak_f0(model, beta)
    struct_top = wkb.barrier_structure(ex.ell2, model)
    f_saddle = functional_free_energy(sol.m_z, model, beta)

    checks = [
        ("residual_period", abs(sol.period - beta), 1e-8),
        ("residual_ell", abs(sol.ell - math.tanh(sol.script_i)), 1e-10),
        ("antisym_trace_minus_1", abs(rep.antisym_trace - 1.0), 1e-8),
        ("kappa_product_minus_1",
         abs(rep.kappa_plus * rep.kappa_minus - 1.0), 1e-8),
        ("kappa_plus_rel",
         abs(rep.kappa_plus / math.exp(2.0 * sol.script_i) - 1.0), 1e-6),
        ("kappa_minus_rel",
         abs(rep.kappa_minus / math.exp(-2.0 * sol.script_i) - 1.0), 1e-6),
        ("trace_k_closed_form",
         abs(rep.trace_k - 2.0 / math.sqrt(1.0 - sol.ell ** 2)), 1e-6),
        ("sym_trace_closed_form",
         abs(rep.sym_trace - (1.0 + rep.kappa_plus + rep.kappa_minus)), 1e-7),
        ("ell_from_k", abs(rep.ell_from_k - sol.ell), 1e-7),
        ("functional_vs_quadrature",
         abs(beta * f_saddle - sol.beta_frak_f), 1e-6),
        ("functional_alpha",
         abs(beta * (f_saddle - ex.f0) - alpha), 1e-6),
        ("metastable_m_coincide", abs(meta.m0 - ex.m0), 1e-8),
        ("barrier_top_m_coincide", abs(struct_top.m_top - ex.m2), 1e-8),
        ("frak_f0_vs_static_f",
         abs(meta.beta_frak_f0 - beta * ex.f0), 1e-8),
    ]
    worst = 0
    for name, resid, tol in checks:
        ok = resid < tol
        worst = max(worst, 0 if ok else 1)
        print(f"{name} = {resid!r} (tol {tol!r}) {'PASS' if ok else 'FAIL'}")
    print(f"alpha = {alpha!r}")
    print(f"kind = {sol.kind}")
    return worst


_RUNNERS = {
    "instanton": _run_instanton,
    "escape": _run_escape,
    "fit": _run_fit,
    "compare": _run_compare,
    "equilibrium": _run_equilibrium,
    "spike": _run_spike,
    "verify": _run_verify,
}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_plan(argv) -> RunPlan:
    if not argv:
        raise ConfigError("usage: spintunnel COMMAND [CONFIG] [KEY=VALUE ...]",
                          key="command")
    command, rest = argv[0], argv[1:]
    raw = {}
    if rest and "=" not in rest[0]:
        path = rest[0]
        rest = rest[1:]
        try:
            with open(path) as fh:
                raw.update(parse_config_text(fh.read()))
        except OSError as err:
            raise ConfigError(f"cannot read config {path!r}: {err}") from None
    for arg in rest:
        key, sep, val = arg.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override {arg!r} is not KEY=VALUE")
        raw[key.strip()] = val.strip()
    return resolve_plan(command, raw)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        plan = build_plan(argv)
    except ConfigError as err:
        key = f" (key: {err.key})" if err.key else ""
        print(f"error = config: {err}{key}", file=sys.stderr)
        return 2
    try:
        return _RUNNERS[plan.command](plan)
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"error = {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
