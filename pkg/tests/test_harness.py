import os

import numpy as np
import pytest

from cqtomo.harness import (
    CSV_HEADER,
    AggregateResult,
    ExperimentSpec,
    TraceParseError,
    TrialRow,
    multinomial_sample,
    read_csv,
    read_trace,
    run_experiment,
    write_csv,
    write_trace,
)
from cqtomo.qcore import Rng
from cqtomo.schemes import SchemeConfig, run_scheme


class TestMultinomialSample:
    def test_infinite_copies_returns_probabilities(self):
        p = np.array([0.2, 0.3, 0.5])
        assert np.array_equal(multinomial_sample(p, np.inf), p)
        assert np.array_equal(multinomial_sample(p, None), p)

    def test_finite_copies_are_frequencies(self):
        nu = multinomial_sample([0.5, 0.5], 100, Rng(0))
        assert abs(nu.sum() - 1.0) < 1e-12
        assert np.all(nu * 100 == np.rint(nu * 100))

    def test_rejects_non_distribution(self):
        with pytest.raises(ValueError):
            multinomial_sample([0.5, 0.6], 10, Rng(0))
        with pytest.raises(ValueError):
            multinomial_sample([1.2, -0.2], 10, Rng(0))
        with pytest.raises(ValueError):
            multinomial_sample([0.5, 0.5], 0, Rng(0))

    def test_law_of_large_numbers(self):
        p = np.array([0.1, 0.9])
        nu = multinomial_sample(p, 200000, Rng(1))
        assert np.max(np.abs(nu - p)) < 0.01


class TestExperimentSpec:
    def test_trial_seeds_stable_and_distinct(self):
        spec = ExperimentSpec(config=SchemeConfig(scheme="rh", d=2, seed=9),
                              trials=4)
        seeds = [spec.trial_seed(t) for t in range(4)]
        assert len(set(seeds)) == 4
        assert seeds == [spec.trial_seed(t) for t in range(4)]

    def test_adding_trials_preserves_earlier_seeds(self):
        a = ExperimentSpec(config=SchemeConfig(scheme="rh", d=2, seed=9), trials=2)
        b = ExperimentSpec(config=SchemeConfig(scheme="rh", d=2, seed=9), trials=5)
        assert [a.trial_seed(t) for t in range(2)] == [b.trial_seed(t) for t in range(2)]

    def test_rejects_zero_trials(self):
        with pytest.raises(ValueError):
            ExperimentSpec(config=SchemeConfig(scheme="rh", d=2), trials=0)


class TestRunExperiment:
    def test_rows_and_csv(self, tmp_path):
        spec = ExperimentSpec(config=SchemeConfig(scheme="rh", d=2, r=1, seed=3),
                              trials=3, out_dir=str(tmp_path), write_traces=True)
        agg = run_experiment(spec)
        assert len(agg.rows) == 3
        assert agg.mean_fidelity > 0.999
        csv_path = tmp_path / "rh_trials.csv"
        assert csv_path.exists()
        rows = read_csv(str(csv_path))
        assert len(rows) == 3
        for got, want in zip(rows, agg.rows):
            assert got.terminal_count == want.terminal_count
            assert got.fidelity == want.fidelity
        for t in range(3):
            assert (tmp_path / ("rh_trial%d.trace" % t)).exists()

    def test_error_rows_recorded_not_raised(self):
        cfg = SchemeConfig(scheme="rh", d=2, r=1, seed=0)
        cfg.truth = np.eye(3) / 3  # wrong dimension triggers a runtime error
        agg = run_experiment(ExperimentSpec(config=cfg, trials=1))
        assert agg.rows[0].reason.startswith("error:")
        assert np.isnan(agg.rows[0].fidelity)

    def test_parallel_matches_serial(self):
        cfg = SchemeConfig(scheme="rh", d=2, r=1, seed=4)
        serial = run_experiment(ExperimentSpec(config=cfg, trials=2, jobs=1))
        parallel = run_experiment(ExperimentSpec(config=cfg, trials=2, jobs=2))
        for a, b in zip(serial.rows, parallel.rows):
            assert a.terminal_count == b.terminal_count
            assert a.fidelity == b.fidelity


class TestCsv:
    def test_header_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(TraceParseError):
            read_csv(str(path))

    def test_roundtrip_preserves_values(self, tmp_path):
        rows = [TrialRow("rh", 4, 1, np.inf, 0, 123, 5, 20, 0.9999875421, "certified"),
                TrialRow("act", 2, 1, 1000.0, 1, 456, 3, 6, float("nan"), "error:X")]
        path = tmp_path / "t.csv"
        write_csv(str(path), rows)
        got = read_csv(str(path))
        assert got[0].fidelity == rows[0].fidelity  # repr() roundtrips floats
        assert got[0].copies == np.inf
        assert got[1].copies == 1000.0
        assert np.isnan(got[1].fidelity)


class TestTraceSerialization:
    def test_roundtrip(self, tmp_path):
        trace = run_scheme(SchemeConfig(scheme="act", d=3, r=1, seed=8))
        path = tmp_path / "run.trace"
        write_trace(trace, str(path))
        back = read_trace(str(path))
        assert back.config.scheme == trace.config.scheme
        assert back.config.d == trace.config.d
        assert back.terminal_count == trace.terminal_count
        assert back.reason == trace.reason
        assert len(back.iterations) == len(trace.iterations)
        for a, b in zip(back.iterations, trace.iterations):
            assert a.s_cvx_raw == b.s_cvx_raw
            assert a.fidelity == b.fidelity
        assert np.allclose(back.estimator, trace.estimator, atol=1e-15)

    def test_povm_trace_block_list(self, tmp_path):
        trace = run_scheme(SchemeConfig(scheme="cqdt", d=2, r=1, seed=1))
        path = tmp_path / "povm.trace"
        write_trace(trace, str(path))
        back = read_trace(str(path))
        assert len(back.estimator) == len(trace.estimator)
        for a, b in zip(back.estimator, trace.estimator):
            assert np.allclose(a, b, atol=1e-15)

    def test_parse_errors_name_the_problem(self, tmp_path):
        path = tmp_path / "bad.trace"
        path.write_text("scheme=rh\n")
        with pytest.raises(TraceParseError, match="before any section"):
            read_trace(str(path))
        path.write_text("[config]\nscheme=rh\n")
        with pytest.raises(TraceParseError, match="missing section"):
            read_trace(str(path))
