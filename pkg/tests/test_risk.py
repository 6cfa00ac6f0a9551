import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hitsurv.estimation import plug_in
from hitsurv.model import ConfigurationError
from hitsurv.oracle import CoefficientTable, geometric_decay_check, true_coefficients
from hitsurv.risk import (
    ExperimentConfig,
    RiskReport,
    boxplot_stats,
    coefficient_sup_error,
    integrated_risk,
    lambda_ratio,
    load_experiment_config,
    replicate_rng,
    run_experiment,
    run_replicate,
)
from hitsurv.oracle import truncation_tail_bound

from .conftest import two_state


def exact_fit(spec, z, k=130):
    return plug_in(spec.transition_fn(z), spec.terminal_set, spec.rate_fn(z), z, k)


class TestIntegratedRisk:
    def test_exact_fit_is_zero(self, spec_a):
        assert integrated_risk(exact_fit(spec_a, 0.5), spec_a, 0.5) < 1e-12

    def test_single_erlang_closed_form(self):
        spec = two_state("2")
        half = exact_fit(spec, 0.5, k=1)
        values = half.coeffs.values.copy()
        values[1, 0] = 0.5
        half = dataclasses.replace(half, coeffs=CoefficientTable(values, half.coeffs.terminal))
        # (2 e^{-2t} - 0.5 * 2 e^{-2t})^2 integrates to 1/4 over [0, inf).
        assert integrated_risk(half, spec, 0.5, k=1) == pytest.approx(0.25, rel=1e-9)

    def test_panel_doubling(self, spec_a):
        from hitsurv.bandwidth import select_bandwidth
        from hitsurv.estimation import KernelConfig, fit
        from hitsurv.model import simulate_dataset

        data = simulate_dataset(spec_a, 200, 3)
        est = fit(data, 0.4, KernelConfig(select_bandwidth(data).h))
        coarse = integrated_risk(est, spec_a, 0.4, panels=2**14)
        fine = integrated_risk(est, spec_a, 0.4, panels=2**15)
        assert abs(fine - coarse) <= 1e-8 * fine

    @pytest.mark.parametrize("z", [0.2, 0.5, 0.8])
    @pytest.mark.parametrize("k", [20, 30, 50])
    def test_truncation_term_below_tail_bound(self, spec_a, z, k):
        decay = geometric_decay_check(true_coefficients(spec_a, z, 130))
        assert decay.passed and not decay.degenerate
        fitted = exact_fit(spec_a, z, k)
        assert coefficient_sup_error(fitted, spec_a, z, k) == 0.0
        truncation = integrated_risk(fitted, spec_a, z, 130)
        assert truncation <= truncation_tail_bound(spec_a.rate_fn(z), decay, k)


class TestCoefficientError:
    def test_exact_fit(self, spec_a):
        assert coefficient_sup_error(exact_fit(spec_a, 0.5), spec_a, 0.5) == 0.0

    def test_empty_terminal_set(self, spec_a):
        blind = plug_in(spec_a.transition_fn(0.5), frozenset(), 1.5, 0.5)
        assert coefficient_sup_error(blind, spec_a, 0.5) >= 0.04


class TestLambdaRatio:
    def test_exact(self, spec_a):
        assert lambda_ratio(exact_fit(spec_a, 0.3), spec_a, 0.3) == 1.0

    def test_cap(self):
        spec = two_state("1")
        capped = plug_in(spec.transition_fn(0.5), {1}, 5.0)
        assert lambda_ratio(capped, spec, 0.5) == 5.0


class TestBoxplots:
    def test_tukey_whiskers(self):
        stats = boxplot_stats([1, 2, 3, 4, 5, 6, 7, 8, 100])
        assert (stats["q1"], stats["median"], stats["q3"]) == (3.0, 5.0, 7.0)
        assert stats["lo_whisker"] == 1.0
        assert stats["hi_whisker"] == 8.0

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60))
    def test_ordering(self, values):
        s = boxplot_stats(values)
        assert s["lo_whisker"] <= s["q1"] + 1e-9 * (1 + abs(s["q1"]))
        assert s["q1"] <= s["median"] <= s["q3"]
        assert s["q3"] <= s["hi_whisker"] + 1e-9 * (1 + abs(s["q3"]))
        assert min(values) <= s["lo_whisker"] and s["hi_whisker"] <= max(values)


class TestConfig:
    def test_defaults(self):
        c = ExperimentConfig()
        assert c.sample_sizes == (100, 200, 400, 800)
        assert (c.replicates, c.k, c.z_grid) == (50, 130, (0.2, 0.4, 0.6, 0.8))

    @pytest.mark.parametrize("kwargs", [{"replicates": 0}, {"k": 131}, {"panels": 3}, {"folds": "odd"}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ExperimentConfig(**kwargs)

    def test_load(self, tmp_path):
        path = tmp_path / "e.toml"
        path.write_text('schema = "hitsurv-experiment/1"\nmodel = "model-b"\nsample_sizes = [50]\nreplicates = 3\n')
        c = load_experiment_config(path)
        assert (c.model, c.sample_sizes, c.replicates) == ("model-b", (50,), 3)

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "e.toml"
        path.write_text("replicate = 3\n")
        with pytest.raises(ConfigurationError, match="unknown keys"):
            load_experiment_config(path)

    def test_shipped_configs(self):
        for name in ("protocol-a", "protocol-b", "smoke"):
            load_experiment_config(f"configs/{name}.toml")


class TestExperiment:
    def test_single_row(self):
        report = run_experiment(ExperimentConfig(sample_sizes=(100,), replicates=1, z_grid=(0.5,)))
        assert len(report) == 1
        row = report.rows[0]
        assert row.status == "ok" and row.I_risk >= 0 and row.coeff_sup_err >= 0 and row.lambda_ratio > 0

    def test_deterministic_and_order_free(self):
        config = ExperimentConfig(sample_sizes=(60, 100), replicates=3, z_grid=(0.3, 0.7), master_seed=4)
        serial = run_experiment(config, workers=1).to_csv()
        assert run_experiment(config, workers=1).to_csv() == serial
        assert run_experiment(config, workers=2).to_csv() == serial

    def test_rows_sorted(self):
        config = ExperimentConfig(sample_sizes=(60,), replicates=3, z_grid=(0.7, 0.3))
        report = run_experiment(config)
        keys = [r.key() for r in report.rows]
        assert keys == sorted(keys) and len(keys) == 6

    def test_insufficient_data_is_flagged(self):
        rows = run_replicate(ExperimentConfig(sample_sizes=(10,), replicates=1, z_grid=(0.2, 0.8)), 10, 0)
        assert len(rows) == 2
        assert all(r.status.startswith("insufficient-data") and np.isnan(r.I_risk) for r in rows)

    def test_replicate_streams_differ(self):
        a = replicate_rng(0, 100, 0).random(3)
        assert not np.array_equal(a, replicate_rng(0, 100, 1).random(3))
        assert not np.array_equal(a, replicate_rng(0, 200, 0).random(3))
        assert np.array_equal(a, replicate_rng(0, 100, 0).random(3))

    def test_csv_round_trip(self):
        report = run_experiment(ExperimentConfig(sample_sizes=(60,), replicates=2, z_grid=(0.5,)))
        text = report.to_csv()
        assert RiskReport.from_csv(text).to_csv() == text
        header = report.boxplots_csv().splitlines()[0]
        assert header == "metric,n,z,q1,median,q3,lo_whisker,hi_whisker"

    def test_per_z_variant(self):
        config = ExperimentConfig(sample_sizes=(100,), replicates=1, z_grid=(0.2, 0.8), per_z_bandwidth=True)
        rows = run_experiment(config).rows
        assert all(r.status == "ok" for r in rows)


@pytest.fixture(scope="module")
def report():
    return run_experiment(ExperimentConfig(sample_sizes=(100, 800), z_grid=(0.5,), master_seed=11))


@pytest.mark.slow
class TestReplicationOrdering:
    def test_integrated_risk_median(self, report):
        assert np.median(report.values("I_risk", 800, 0.5)) < np.median(report.values("I_risk", 100, 0.5))

    def test_coefficient_error_median(self, report):
        assert np.median(report.values("coeff_sup_err", 800, 0.5)) < np.median(
            report.values("coeff_sup_err", 100, 0.5)
        )

    def test_ratio_spread(self, report):
        def iqr(n):
            q1, q3 = np.percentile(report.values("lambda_ratio", n, 0.5), [25, 75])
            return q3 - q1

        assert iqr(800) < iqr(100)
