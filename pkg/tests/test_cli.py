import math

import pytest

from spintunnel.cli import (ConfigError, build_plan, main, parse_config_text,
                            resolve_plan)
from spintunnel.qmc import EscapeRecord, write_escape_csv
from spintunnel.wkb import read_instanton_csv


class TestConfigText:
    def test_basic_lines(self):
        raw = parse_config_text("gamma = 0.4\nbeta=4.0\n")
        assert raw == {"gamma": "0.4", "beta": "4.0"}

    def test_comments_and_blanks(self):
        raw = parse_config_text(
            "# full line comment\n\ngamma = 0.4  # trailing\n")
        assert raw == {"gamma": "0.4"}

    def test_later_key_wins(self):
        raw = parse_config_text("beta = 2\nbeta = 8\n")
        assert raw == {"beta": "8"}

    def test_malformed_line_raises(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config_text("gamma = 0.4\njust words\n")

    def test_bare_equals_raises(self):
        with pytest.raises(ConfigError):
            parse_config_text("= 0.4\n")


class TestResolvePlan:
    def test_defaults_filled(self):
        plan = resolve_plan("instanton", {"gamma": "0.4", "beta": "4"})
        assert plan["n_grid"] == 4096
        assert plan["tol"] == 1e-10
        assert plan["out"] == "instanton.csv"
        assert plan["h"] == 0.0

    def test_unknown_command(self):
        with pytest.raises(ConfigError) as err:
            resolve_plan("frobnicate", {})
        assert err.value.key == "command"

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError) as err:
            resolve_plan("instanton",
                         {"gamma": "0.4", "beta": "4", "bogus": "1"})
        assert err.value.key == "bogus"

    def test_missing_required_named(self):
        with pytest.raises(ConfigError) as err:
            resolve_plan("instanton", {"gamma": "0.4"})
        assert err.value.key == "beta"

    def test_invalid_value_named(self):
        with pytest.raises(ConfigError) as err:
            resolve_plan("instanton", {"gamma": "abc", "beta": "4"})
        assert err.value.key == "gamma"

    def test_command_key_must_agree(self):
        with pytest.raises(ConfigError):
            resolve_plan("instanton",
                         {"command": "escape", "gamma": "0.4", "beta": "4"})

    def test_matching_command_key_accepted(self):
        plan = resolve_plan("instanton",
                            {"command": "instanton", "gamma": "0.4",
                             "beta": "4"})
        assert plan.command == "instanton"

    def test_custom_density_zeroes_field(self):
        plan = resolve_plan("instanton",
                            {"gamma": "0.4", "beta": "4", "h": "0.3",
                             "g_poly": "0,1"})
        assert plan["h"] == 0.0
        assert plan["g_poly"] == (0.0, 1.0)

    def test_workers_default_resolves_positive(self):
        plan = resolve_plan("instanton", {"gamma": "0.4", "beta": "4"})
        assert plan["workers"] >= 1

    def test_points_parsing(self):
        plan = resolve_plan("compare",
                            {"points": "0.4,0,4; 0.5,0.1,6", "runs": "10"})
        assert plan["points"] == ((0.4, 0.0, 4.0), (0.5, 0.1, 6.0))

    def test_points_reject_wrong_arity(self):
        with pytest.raises(ConfigError) as err:
            resolve_plan("compare", {"points": "0.4,0"})
        assert err.value.key == "points"

    def test_header_renders_round_trip_floats(self):
        plan = resolve_plan("instanton", {"gamma": "0.4", "beta": "4"})
        head = plan.header()
        assert head["command"] == "instanton"
        assert head["gamma"] == "0.4"
        assert head["beta"] == "4.0"

    def test_header_renders_lists_and_points(self):
        plan = resolve_plan("compare", {"points": "0.4,0,4; 0.5,0,8"})
        head = plan.header()
        assert head["points"] == "0.4,0.0,4.0; 0.5,0.0,8.0"
        assert head["n_list"] == "8,10,12,14,16"


class TestBuildPlan:
    def test_config_file_then_overrides(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("gamma = 0.4\nbeta = 4\nn_grid = 512\n")
        plan = build_plan(["instanton", str(cfg), "n_grid=1024"])
        assert plan["n_grid"] == 1024
        assert plan["gamma"] == 0.4

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read config"):
            build_plan(["instanton", str(tmp_path / "nope.cfg")])

    def test_no_arguments(self):
        with pytest.raises(ConfigError):
            build_plan([])

    def test_bad_override(self):
        with pytest.raises(ConfigError, match="not KEY=VALUE"):
            build_plan(["instanton", "gamma=0.4", "beta4"])


class TestExitCodes:
    def test_unknown_command_exits_2(self, capsys):
        assert main(["frobnicate"]) == 2
        err = capsys.readouterr().err
        assert "error = config" in err
        assert "command" in err

    def test_missing_key_exits_2_naming_key(self, capsys):
        assert main(["instanton", "gamma=0.4"]) == 2
        assert "(key: beta)" in capsys.readouterr().err

    def test_invalid_value_exits_2_naming_key(self, capsys):
        assert main(["instanton", "gamma=0.4", "beta=four"]) == 2
        assert "(key: beta)" in capsys.readouterr().err

    def test_numerical_failure_exits_1(self, capsys, tmp_path):
        code = main(["instanton", "gamma=2.0", "beta=4.0",
                     f"outdir={tmp_path}"])
        assert code == 1
        err = capsys.readouterr().err
        assert err.startswith("error = MonostableError")


class TestInstantonCommand:
    def test_run_writes_file_and_prints_alpha(self, capsys, tmp_path):
        assert main(["instanton", "gamma=0.4", "beta=4.0",
                     f"outdir={tmp_path}"]) == 0
        out = capsys.readouterr().out
        assert "alpha = 0.6803829777486401" in out
        assert "kind = static" in out
        path = tmp_path / "instanton.csv"
        assert path.exists()
        text = path.read_text()
        assert text.startswith("# command = instanton\n")
        assert "# gamma = 0.4\n" in text
        meta, tau, m_z, m_x, nu = read_instanton_csv(str(path))
        assert meta["kind"] == "static"
        assert meta["alpha"] == "0.6803829777486401"
        assert len(tau) == len(m_z) == len(m_x) == len(nu)

    def test_reruns_byte_identical(self, capsys, tmp_path):
        args = ["instanton", "gamma=0.5", "beta=8.0", "n_grid=1024",
                f"outdir={tmp_path}"]
        assert main(args) == 0
        first = (tmp_path / "instanton.csv").read_bytes()
        assert main(args) == 0
        capsys.readouterr()
        assert (tmp_path / "instanton.csv").read_bytes() == first

    def test_outdir_env_var_overrides(self, capsys, tmp_path, monkeypatch):
        target = tmp_path / "made" / "by" / "env"
        monkeypatch.setenv("SPINTUNNEL_OUTDIR", str(target))
        assert main(["instanton", "gamma=0.4", "beta=4.0",
                     "outdir=ignored"]) == 0
        capsys.readouterr()
        assert (target / "instanton.csv").exists()


class TestEscapeAndFitCommands:
    def test_escape_multi_threshold_files(self, capsys, tmp_path):
        assert main(["escape", "gamma=0.5", "beta=2.0", "n_list=4,6",
                     "runs=2", "thresholds=0.25,0.5", "max_sweeps=400",
                     "seed_base=3", f"outdir={tmp_path}"]) == 0
        out = capsys.readouterr().out
        assert "threshold = 0.25" in out
        assert "threshold = 0.5" in out
        lo = tmp_path / "escape_t0.25.csv"
        hi = tmp_path / "escape_t0.5.csv"
        assert lo.exists() and hi.exists()
        assert "# threshold = 0.25" in lo.read_text()
        assert "# threshold = 0.5" in hi.read_text()

    def test_escape_single_threshold_plain_name(self, capsys, tmp_path):
        assert main(["escape", "gamma=0.5", "beta=2.0", "n_list=4,6",
                     "runs=1", "max_sweeps=200", f"outdir={tmp_path}"]) == 0
        capsys.readouterr()
        assert (tmp_path / "escape.csv").exists()

    def test_fit_recovers_synthetic_slope(self, capsys, tmp_path):
        records = []
        for n in (8, 10, 12, 14):
            sweeps = max(1, int(round(math.exp(0.3 * n) * 1000 / n)))
            for r in range(60):
                records.append(EscapeRecord(
                    n_spins=n, beta=4.0, gamma=0.5, h=0.0, seed=r,
                    sweeps=sweeps, escaped=True))
        path = tmp_path / "runs.csv"
        write_escape_csv(str(path), records)
        assert main(["fit", f"in={path}", "n_min=8", "n_max=14"]) == 0
        out = capsys.readouterr().out
        alpha = float(out.split("alpha = ")[1].splitlines()[0])
        assert alpha == pytest.approx(0.3, abs=1e-3)
        assert "runs_n8 = 60" in out
        assert "residual_n14 = " in out


class TestEquilibriumCommand:
    def test_small_chain_matches_exact_law(self, capsys, tmp_path):
        assert main(["equilibrium", "gamma=0.5", "beta=1.0", "n=2",
                     "n_samples=4000", "burn_in=100", "thin=1",
                     f"outdir={tmp_path}"]) == 0
        out = capsys.readouterr().out
        tv = float(out.split("tv = ")[1].splitlines()[0])
        assert tv < 0.05
        lines = (tmp_path / "equilibrium.csv").read_text().splitlines()
        body = [ln for ln in lines if not ln.startswith("#")]
        assert body[0] == "two_m,prob_qmc,prob_exact"
        assert [ln.split(",")[0] for ln in body[1:]] == ["-2", "0", "2"]
        probs = [float(ln.split(",")[2]) for ln in body[1:]]
        assert sum(probs) == pytest.approx(1.0, abs=1e-12)


class TestSpikeCommand:
    def test_rectangular_report(self, capsys, tmp_path):
        assert main(["spike", "spike_chi=0.5", "spike_delta=0.75",
                     "spike_shape=rectangular", "spike_n_list=64,128",
                     f"outdir={tmp_path}"]) == 0
        out = capsys.readouterr().out
        assert "gamma_c = 1.3333333333333333" in out
        assert "regime = QUANTUM_POLY_CLASSICAL_EXP" in out
        text = (tmp_path / "spike_report.txt").read_text()
        assert text.startswith("# command = spike\n")
        assert "kappa = " in text
        assert "action_n128 = " in text


class TestVerifyCommand:
    def test_reference_point_all_checks_pass(self, capsys):
        assert main(["verify", "gamma=0.4", "beta=4.0"]) == 0
        out = capsys.readouterr().out
        passes = [ln for ln in out.splitlines() if ln.endswith("PASS")]
        assert len(passes) == 14
        assert "FAIL" not in out
        assert "alpha = 0.6803829777486401" in out
