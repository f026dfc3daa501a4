import math

import numpy as np
import pytest

from spintunnel.analysis import (InsufficientDataError, compare,
                                 crossing_field, escape_campaign, fit_alpha,
                                 read_compare_csv, spike_report,
                                 write_compare_csv, write_spike_report)
from spintunnel.model import ModelSpec, SpikeSpec
from spintunnel.qmc import EscapeRecord


def synthetic_records(alpha, n_values, runs, jitter=0.0, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for n in n_values:
        base = math.exp(alpha * n) / n
        for r in range(runs):
            sweeps = base * (1.0 + jitter * rng.standard_normal())
            out.append(EscapeRecord(
                n_spins=n, beta=4.0, gamma=0.5, h=0.0, seed=r,
                sweeps=max(1, int(round(sweeps * 1000))), escaped=True))
    return out


class TestFitAlpha:
    def test_exact_exponential_recovered(self):
        recs = synthetic_records(0.3, (12, 13, 14, 15, 16), 60)
        fit = fit_alpha(recs, seed=5)
        assert fit.alpha == pytest.approx(0.3, abs=1e-3)
        assert fit.stderr < 1e-10
        assert fit.n_range == (12, 16)
        assert fit.n_runs_per_n == {n: 60 for n in (12, 13, 14, 15, 16)}
        assert all(abs(r) < 1e-3 for r in fit.residuals.values())

    def test_noise_produces_bootstrap_spread(self):
        recs = synthetic_records(0.3, (12, 13, 14, 15, 16), 80, jitter=0.3,
                                 seed=2)
        fit = fit_alpha(recs, seed=5)
        assert fit.alpha == pytest.approx(0.3, abs=0.05)
        assert 0.0 < fit.stderr < 0.05

    def test_window_filters_sizes(self):
        recs = synthetic_records(0.3, (8, 10, 12, 13, 14, 15, 16), 60)
        fit = fit_alpha(recs, n_min=12, n_max=16)
        assert sorted(fit.n_runs_per_n) == [12, 13, 14, 15, 16]

    def test_too_few_sizes(self):
        recs = synthetic_records(0.3, (15, 16), 60)
        with pytest.raises(InsufficientDataError):
            fit_alpha(recs)

    def test_too_few_runs(self):
        recs = synthetic_records(0.3, (12, 13, 14, 15, 16), 40)
        with pytest.raises(InsufficientDataError):
            fit_alpha(recs)

    def test_deterministic_given_seed(self):
        recs = synthetic_records(0.3, (12, 13, 14, 15, 16), 80, jitter=0.3)
        a = fit_alpha(recs, seed=9)
        b = fit_alpha(recs, seed=9)
        assert a == b


class TestEscapeCampaign:
    def setup_method(self):
        self.model = ModelSpec.curie_weiss(0.5, 0.0)

    def test_deterministic_and_worker_invariant(self):
        kw = dict(beta=4.0, n_list=(6, 8), runs=8, seed_base=77,
                  max_sweeps=100_000)
        a = escape_campaign(self.model, **kw)
        b = escape_campaign(self.model, **kw)
        c = escape_campaign(self.model, **kw, workers=2)
        assert a == b == c

    def test_runs_are_individually_seeded(self):
        kw = dict(beta=4.0, n_list=(6,), seed_base=77, max_sweeps=100_000)
        small = escape_campaign(self.model, runs=3, **kw)[0.25]
        large = escape_campaign(self.model, runs=6, **kw)[0.25]
        assert large[:3] == small

    def test_multiple_thresholds_share_chains(self):
        out = escape_campaign(self.model, 4.0, (6,), 5, seed_base=3,
                              thresholds=(0.25, 0.5), max_sweeps=200_000)
        for lo, hi in zip(out[0.25], out[0.5]):
            assert lo.sweeps <= hi.sweeps
            assert (lo.n_spins, lo.seed) == (hi.n_spins, hi.seed)


class TestCompare:
    def test_failure_row_is_nan(self):
        rows = compare([(0.3, 0.8, 4.0)], n_list=(6,), runs=2, seed_base=1)
        assert math.isnan(rows[0]["alpha_wkb"])
        assert math.isnan(rows[0]["alpha_qmc"])
        assert "error" in rows[0]

    def test_csv_roundtrip(self, tmp_path):
        rows = [{"gamma": 0.5, "h": 0.0, "beta": 4.0,
                 "alpha_wkb": 0.482, "alpha_qmc": 0.51,
                 "alpha_qmc_err": 0.02}]
        path = tmp_path / "cmp.csv"
        write_compare_csv(path, rows, plan={"runs": 3})
        meta, back = read_compare_csv(path)
        assert meta["runs"] == "3"
        assert back[0]["alpha_wkb"] == 0.482
        assert back[0]["alpha_qmc_err"] == 0.02


class TestCrossingField:
    def test_reference_point(self):
        sp = SpikeSpec(c=1.0, d=1.0, chi=0.5, delta=0.75, m_b=0.6)
        assert crossing_field(sp) == 4.0 / 3.0

    def test_general_slope_and_center(self):
        sp = SpikeSpec(c=1.0, d=1.0, chi=0.5, delta=0.75, m_b=0.5)
        gc = crossing_field(sp, g0_poly=(0.0, 2.0))
        assert gc == pytest.approx(2.0 * math.sqrt(3.0), rel=1e-14)


class TestSpikeReport:
    def test_rectangular_reference(self):
        sp = SpikeSpec(c=1.0, d=1.0, chi=0.5, delta=0.75, m_b=0.6,
                       shape="rectangular")
        rep = spike_report(sp)
        assert rep.gamma_c == 4.0 / 3.0
        assert rep.gamma_factor == pytest.approx(
            1.0 / math.sqrt(math.sinh(math.log(1.0 / 0.6))), rel=1e-12)
        assert rep.mu_est == pytest.approx(1.0, rel=0.05)
        assert rep.scaling_exponent == 0.0
        assert rep.classical_exponent == 0.5
        assert rep.regime == "QUANTUM_POLY_CLASSICAL_EXP"
        t_c = [rep.t_c_by_n[n] for n in rep.n_list]
        assert all(a < b for a, b in zip(t_c, t_c[1:]))

    def test_action_matches_kappa_scaling(self):
        # at scaling exponent 0 the total action converges to kappa
        sp = SpikeSpec(c=1.0, d=1.0, chi=0.5, delta=0.75, m_b=0.6,
                       shape="rectangular")
        rep = spike_report(sp)
        assert rep.actions[512] == pytest.approx(rep.kappa, rel=0.02)

    def test_smooth_shapes(self):
        for shape in ("gaussian", "triangular"):
            sp = SpikeSpec(c=1.0, d=1.0, chi=0.5, delta=0.75, m_b=0.6,
                           shape=shape)
            rep = spike_report(sp, n_list=(64, 128, 256))
            assert rep.regime == "QUANTUM_POLY_CLASSICAL_EXP"
            assert rep.mu_est > 1.0
            t_c = [rep.t_c_by_n[n] for n in rep.n_list]
            assert all(a < b for a, b in zip(t_c, t_c[1:]))

    def test_both_exponential_regime(self):
        sp = SpikeSpec(c=1.0, d=1.0, chi=0.2, delta=0.5, m_b=0.6,
                       shape="rectangular")
        rep = spike_report(sp, n_list=(64, 128))
        assert rep.scaling_exponent == pytest.approx(0.4)
        assert rep.classical_exponent == pytest.approx(0.8)
        assert rep.regime == "BOTH_EXP"

    def test_wkb_invalid_when_action_small(self):
        sp = SpikeSpec(c=1e-3, d=1.0, chi=0.5, delta=0.75, m_b=0.6,
                       shape="rectangular")
        rep = spike_report(sp, n_list=(64, 128))
        assert rep.actions[128] <= 1.0
        assert rep.regime == "WKB_INVALID"

    def test_report_file(self, tmp_path):
        sp = SpikeSpec(c=1.0, d=1.0, chi=0.5, delta=0.75, m_b=0.6,
                       shape="rectangular")
        rep = spike_report(sp, n_list=(64, 128))
        path = tmp_path / "spike.txt"
        write_spike_report(path, rep, plan={"spike_shape": "rectangular"})
        lines = path.read_text().splitlines()
        assert lines[0] == "# spike_shape = rectangular"
        keys = dict(line.split(" = ") for line in lines
                    if not line.startswith("#"))
        assert float(keys["gamma_c"]) == rep.gamma_c
        assert keys["regime"] == rep.regime
        assert float(keys["action_n128"]) == rep.actions[128]
