import numpy as np
import pytest

from cqtomo.channels import kraus_to_choi
from cqtomo.qcore import InvalidDimension, Rng, fidelity, haar_unitary
from cqtomo.schemes import (
    SCHEMES,
    SchemeConfig,
    nearest_product_basis,
    run_scheme,
)


class TestConfig:
    def test_rejects_unknown_scheme(self):
        with pytest.raises(ValueError):
            SchemeConfig(scheme="frobz", d=2)

    def test_rejects_small_dimension(self):
        with pytest.raises(InvalidDimension):
            SchemeConfig(scheme="rh", d=1)

    def test_product_schemes_need_factoring_dims(self):
        with pytest.raises(InvalidDimension):
            SchemeConfig(scheme="rlh", d=4)
        with pytest.raises(InvalidDimension):
            SchemeConfig(scheme="pact", d=4, local_dims=(2, 3))
        cfg = SchemeConfig(scheme="pact", d=4, local_dims=(2, 2))
        assert cfg.kind == "state"

    def test_mode_guard(self):
        with pytest.raises(ValueError):
            SchemeConfig(scheme="acqpt", d=2, mode="imaginary")

    def test_budget_defaults(self):
        assert SchemeConfig(scheme="rh", d=4).iteration_budget == 15
        assert SchemeConfig(scheme="acqpt", d=2).iteration_budget == 24
        assert SchemeConfig(scheme="cqdt", d=2).iteration_budget == 8
        assert SchemeConfig(scheme="rh", d=4, budget=7).iteration_budget == 7

    def test_kind_partition_covers_all_schemes(self):
        kinds = {s: SchemeConfig(scheme=s, d=4,
                                 local_dims=(2, 2) if s in ("rlh", "pact", "pactqpt")
                                 else None).kind
                 for s in SCHEMES}
        assert set(kinds.values()) == {"state", "process", "povm"}


class TestNearestProductBasis:
    def test_product_input_is_fixed_point(self):
        a = haar_unitary(2, Rng(0)).matrix
        b = haar_unitary(2, Rng(1)).matrix
        u = np.kron(a, b)
        v, factors = nearest_product_basis(u, (2, 2))
        assert np.max(np.abs(v.conj().T @ v - np.eye(4))) < 1e-10
        prod = np.kron(factors[0], factors[1])
        assert np.max(np.abs(prod - v)) < 1e-8
        # recovers the input up to per-column phases
        overlap = np.abs(np.diag(v.conj().T @ u))
        assert np.allclose(overlap, 1.0, atol=1e-8)

    def test_entangled_input_yields_unitary_product(self):
        u = haar_unitary(4, Rng(2)).matrix
        v, factors = nearest_product_basis(u, (2, 2))
        assert np.max(np.abs(v.conj().T @ v - np.eye(4))) < 1e-10
        prod = np.kron(factors[0], factors[1])
        assert np.max(np.abs(prod - v)) < 1e-8

    def test_three_factors(self):
        u = haar_unitary(8, Rng(3)).matrix
        v, factors = nearest_product_basis(u, (2, 2, 2))
        prod = factors[0]
        for f in factors[1:]:
            prod = np.kron(prod, f)
        assert np.max(np.abs(prod - v)) < 1e-8


class TestStateSchemes:
    @pytest.mark.parametrize("scheme,kwargs", [
        ("rh", {}),
        ("rlh", {"local_dims": (2, 2)}),
        ("act", {}),
        ("pact", {"local_dims": (2, 2)}),
    ])
    def test_noiseless_certification(self, scheme, kwargs):
        cfg = SchemeConfig(scheme=scheme, d=4, r=1, seed=1, **kwargs)
        trace = run_scheme(cfg)
        assert trace.certified
        assert trace.terminal_count <= cfg.iteration_budget
        assert trace.final_fidelity > 0.999
        assert trace.total_outcomes == trace.terminal_count * 4

    def test_first_iteration_normalized_to_one(self):
        trace = run_scheme(SchemeConfig(scheme="rh", d=3, r=1, seed=2))
        assert trace.iterations[0].s_cvx_norm == 1.0
        assert trace.terminal_count >= 2

    def test_deterministic_given_seed(self):
        cfg = SchemeConfig(scheme="act", d=3, r=1, seed=5)
        a = run_scheme(cfg)
        b = run_scheme(cfg)
        assert a.terminal_count == b.terminal_count
        assert np.array_equal(a.estimator, b.estimator)
        for x, y in zip(a.iterations, b.iterations):
            assert x.s_cvx_raw == y.s_cvx_raw

    def test_truth_override(self):
        rho = np.diag([0.5, 0.5, 0.0, 0.0]).astype(complex)
        trace = run_scheme(SchemeConfig(scheme="rh", d=4, r=2, seed=3, truth=rho))
        assert trace.certified
        assert fidelity(trace.estimator, rho) > 0.999

    def test_finite_copies_run_completes(self):
        trace = run_scheme(SchemeConfig(scheme="rh", d=2, r=1, seed=4,
                                        copies=10000, budget=6))
        assert trace.reason in ("certified", "budget-exhausted")
        assert len(trace.iterations) >= 1


class TestProcessSchemes:
    def test_actqpt_certifies_unitary(self):
        trace = run_scheme(SchemeConfig(scheme="actqpt", d=2, r=1, seed=1))
        assert trace.certified
        assert trace.final_fidelity > 0.999
        d2 = 4
        est = trace.estimator
        assert est.shape == (d2, d2)
        assert abs(np.trace(est).real - 2.0) < 1e-6

    def test_pactqpt_runs(self):
        trace = run_scheme(SchemeConfig(scheme="pactqpt", d=4, r=1, seed=1,
                                        local_dims=(2, 2)))
        assert trace.certified
        assert trace.final_fidelity > 0.999

    def test_acqpt_ideal(self):
        trace = run_scheme(SchemeConfig(scheme="acqpt", d=2, r=1, seed=1))
        assert trace.certified
        assert trace.final_fidelity > 0.999
        assert trace.total_outcomes == 2 * trace.terminal_count

    def test_acqpt_realizable(self):
        trace = run_scheme(SchemeConfig(scheme="acqpt", d=2, r=1, seed=2,
                                        mode="realizable"))
        assert trace.reason in ("certified", "budget-exhausted")
        assert trace.final_fidelity > 0.99

    def test_acqpt_unitary_assumption_is_compressive(self):
        trace = run_scheme(SchemeConfig(scheme="acqpt-unitary", d=2, r=1, seed=3))
        assert trace.certified
        assert trace.terminal_count <= 8


class TestDetectorScheme:
    def test_cqdt_certifies(self):
        trace = run_scheme(SchemeConfig(scheme="cqdt", d=2, r=1, seed=1))
        assert trace.certified
        assert trace.final_fidelity > 0.999
        est = trace.estimator
        assert np.allclose(sum(est), np.eye(2), atol=1e-6)

    def test_cqdt_outcome_count_override(self):
        trace = run_scheme(SchemeConfig(scheme="cqdt", d=2, r=1, seed=2,
                                        n_outcomes=3))
        assert len(trace.estimator) == 3


class TestMonotonicity:
    @pytest.mark.parametrize("scheme,kwargs", [
        ("rh", {"d": 4, "r": 2}),
        ("act", {"d": 4, "r": 1}),
        ("cqdt", {"d": 2, "r": 1}),
    ])
    def test_noiseless_raw_gap_nonincreasing(self, scheme, kwargs):
        trace = run_scheme(SchemeConfig(scheme=scheme, seed=6, **kwargs))
        raws = [it.s_cvx_raw for it in trace.iterations]
        for a, b in zip(raws, raws[1:]):
            assert b <= a + 1e-9
