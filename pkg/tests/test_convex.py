import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cqtomo import convex
from cqtomo.channels import kraus_to_chi, random_rank_r_process
from cqtomo.convex import (
    ClarabelBackend,
    FeasibleSetSpec,
    WitnessFunctional,
    _vectorizer,
    compile_consistent,
    compile_constraints,
    icc,
    min_entropy_estimator,
    random_witness,
)
from cqtomo.qcore import (
    Rng,
    born_probabilities,
    fidelity,
    haar_unitary,
    random_rank_r_povm,
    random_rank_r_state,
    trace_distance,
    von_neumann_entropy,
)


def _random_herm(d, seed):
    m = Rng(seed).complex_normal((d, d))
    return (m + m.conj().T) / 2


def _basis_ops(u):
    return [np.outer(u[:, j], u[:, j].conj()) for j in range(u.shape[1])]


def _state_spec(rho, bases):
    spec = FeasibleSetSpec(kind="state", dim=rho.shape[0])
    for u in bases:
        for op in _basis_ops(u):
            spec.add(op, np.trace(rho @ op).real)
    return spec


class TestVectorizer:
    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 6))
    def test_roundtrip(self, seed, d):
        h = _random_herm(d, seed)
        vec = _vectorizer(d)
        assert np.allclose(vec.from_coords(vec.to_coords(h)), h, atol=1e-12)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 5))
    def test_functional_row_is_trace_pairing(self, seed, d):
        x = _random_herm(d, seed)
        c = _random_herm(d, seed + 1)
        vec = _vectorizer(d)
        val = vec.functional_row(c) @ vec.to_coords(x)
        assert abs(val - np.trace(x @ c).real) < 1e-10


class TestCompile:
    def test_state_structure(self):
        spec = _state_spec(random_rank_r_state(3, 1, Rng(0)).matrix,
                           [np.eye(3, dtype=complex)])
        program = compile_constraints(spec)
        assert program.block_dims[0] <= 3
        a_eq, b_eq, _, _ = program.structure()
        assert a_eq.shape[0] == len(b_eq)

    def test_povm_requires_outcome_count(self):
        spec = FeasibleSetSpec(kind="povm", dim=2, n_outcomes=1)
        with pytest.raises(ValueError):
            compile_constraints(spec)

    def test_unknown_kind_rejected(self):
        spec = FeasibleSetSpec(kind="wibble", dim=2)
        with pytest.raises(ValueError):
            compile_constraints(spec)

    def test_facial_reduction_triggers_on_zero_targets(self):
        # pure |0><0| measured in its eigenbasis: d-1 zero probabilities
        # restrict the cone to a 1-dimensional face
        d = 4
        rho = np.zeros((d, d), dtype=complex)
        rho[0, 0] = 1.0
        spec = _state_spec(rho, [np.eye(d, dtype=complex)])
        program = compile_constraints(spec)
        assert program.face_bases is not None
        assert program.block_dims[0] == 1


class TestBackend:
    def test_singleton_state_reconstruction(self):
        d = 3
        rho = random_rank_r_state(d, 2, Rng(1)).matrix
        bases = [haar_unitary(d, Rng(k)).matrix for k in range(d + 1)]
        spec = _state_spec(rho, bases)
        backend = ClarabelBackend()
        program = compile_consistent(spec, backend)
        res = backend.solve_linear(program, [(0, _random_herm(d, 2))])
        assert res.ok
        rec = res.blocks[0]
        assert np.max(np.abs(rec - rho)) < 1e-7

    def test_least_squares_feasible_data_zero_residual(self):
        d = 2
        rho = random_rank_r_state(d, 2, Rng(3)).matrix
        spec = FeasibleSetSpec(kind="state", dim=d)
        program = compile_constraints(spec)
        backend = ClarabelBackend()
        ops = _basis_ops(haar_unitary(d, Rng(4)).matrix)
        rows = [[(0, op)] for op in ops]
        targets = [np.trace(rho @ op).real for op in ops]
        fit = backend.solve_least_squares(program, rows, targets)
        assert fit.ok
        for row, t in zip(rows, targets):
            got = np.trace(fit.blocks[0] @ row[0][1]).real
            assert abs(got - t) < 1e-6

    def test_least_squares_infeasible_data_projects(self):
        # targets violating tr(rho)=1 scaling cannot be met; the fit
        # minimizes the residual over physical states
        d = 2
        spec = FeasibleSetSpec(kind="state", dim=d)
        program = compile_constraints(spec)
        backend = ClarabelBackend()
        rows = [[(0, np.diag([1.0, 0.0]).astype(complex))],
                [(0, np.diag([0.0, 1.0]).astype(complex))]]
        fit = backend.solve_least_squares(program, rows, [0.9, 0.9])
        assert fit.ok
        p = [np.trace(fit.blocks[0] @ r[0][1]).real for r in rows]
        assert abs(sum(p) - 1.0) < 1e-6
        assert abs(p[0] - 0.5) < 1e-5  # symmetric projection


class TestWitness:
    def test_random_witness_full_rank_and_distinct(self):
        w = random_witness("state", 4, rng=Rng(5))
        z = w.operators[0]
        assert np.linalg.eigvalsh(z)[0] >= 1e-3
        assert np.max(np.abs(z - np.eye(4) / 4)) > 1e-3

    def test_povm_witness_block_count(self):
        w = random_witness("povm", 3, n_outcomes=5, rng=Rng(6))
        assert len(w.operators) == 5

    def test_value_is_linear_pairing(self):
        w = random_witness("state", 3, rng=Rng(7))
        rho = random_rank_r_state(3, 3, Rng(8)).matrix
        assert abs(w.value([rho]) - np.trace(rho @ w.operators[0]).real) < 1e-12


class TestIcc:
    def test_informationally_complete_data_certifies(self):
        d = 2
        rho = random_rank_r_state(d, 2, Rng(9)).matrix
        bases = [np.eye(d, dtype=complex)] + \
            [haar_unitary(d, Rng(k)).matrix for k in (10, 11)]
        spec = _state_spec(rho, bases)
        res = icc(spec, random_witness("state", d, rng=Rng(12)))
        assert res.ok
        assert res.s_cvx_raw < 1e-7
        assert trace_distance(res.witness_max[0], rho) < 1e-4

    def test_underdetermined_data_has_positive_gap(self):
        d = 3
        rho = random_rank_r_state(d, 3, Rng(13)).matrix
        spec = _state_spec(rho, [np.eye(d, dtype=complex)])
        res = icc(spec, random_witness("state", d, rng=Rng(14)))
        assert res.ok
        assert res.s_cvx_raw > 1e-4

    def test_normalizer_divides_raw_gap(self):
        d = 3
        rho = random_rank_r_state(d, 3, Rng(15)).matrix
        spec = _state_spec(rho, [np.eye(d, dtype=complex)])
        w = random_witness("state", d, rng=Rng(16))
        raw = icc(spec, w).s_cvx_raw
        res = icc(spec, w, normalizer=2 * raw)
        assert abs(res.s_cvx_norm - 0.5) < 1e-6

    def test_gap_monotone_under_added_constraints(self):
        d = 3
        rho = random_rank_r_state(d, 2, Rng(17)).matrix
        w = random_witness("state", d, rng=Rng(18))
        bases = [haar_unitary(d, Rng(k)).matrix for k in (19, 20, 21)]
        gaps = []
        for k in range(1, 4):
            spec = _state_spec(rho, bases[:k])
            gaps.append(icc(spec, w).s_cvx_raw)
        assert gaps[1] <= gaps[0] + 1e-9
        assert gaps[2] <= gaps[1] + 1e-9

    def test_chi_cptp_unitary_data_certifies(self):
        # chi of a unitary probed by d^2 + a few rotated-diagonal projectors
        d = 2
        u_true = haar_unitary(d, Rng(22)).matrix
        from cqtomo.channels import KrausSet
        chi = kraus_to_chi(KrausSet(d, [u_true])).matrix
        spec = FeasibleSetSpec(kind="chi-cptp", dim=d)
        rng = Rng(23)
        for k in range(8):
            v = haar_unitary(d * d, rng.child(k)).matrix[:, 0]
            proj = np.outer(v, v.conj())
            spec.add(proj, np.trace(chi @ proj).real)
        res = icc(spec, random_witness("chi-cptp", d, rng=Rng(24)))
        assert res.ok
        assert res.s_cvx_raw < 1e-6
        assert np.max(np.abs(res.witness_max[0] - chi)) < 1e-4

    def test_povm_certification(self):
        d = 2
        n = 4
        povm = random_rank_r_povm(d, d, n, Rng(25))
        spec = FeasibleSetSpec(kind="povm", dim=d, n_outcomes=n)
        rng = Rng(26)
        for l in range(8):
            v = rng.child(l).complex_normal(d)
            v = v / np.linalg.norm(v)
            rho = np.outer(v, v.conj())
            for j, e in enumerate(povm.outcomes):
                spec.add([(j, rho)], np.trace(rho @ e).real)
        res = icc(spec, random_witness("povm", d, n_outcomes=n, rng=Rng(27)))
        assert res.ok
        assert res.s_cvx_raw < 1e-6
        for rec, e in zip(res.witness_max, povm.outcomes):
            assert np.max(np.abs(rec - e)) < 1e-4


class TestMinEntropy:
    def test_prefers_low_rank_point(self):
        # one basis on a pure state leaves a large feasible set; the
        # minimum-entropy point should be (near) pure while the analytic
        # center is not
        d = 3
        rho = np.zeros((d, d), dtype=complex)
        rho[0, 0] = 1.0
        u = haar_unitary(d, Rng(28)).matrix
        spec = _state_spec(rho, [u])
        x = min_entropy_estimator(spec, rng=Rng(29))
        from cqtomo.inference import project_density
        est = project_density(x)
        assert von_neumann_entropy(est) < 0.3

    def test_singleton_returns_the_point(self):
        d = 2
        rho = random_rank_r_state(d, 2, Rng(30)).matrix
        bases = [haar_unitary(d, Rng(k)).matrix for k in (31, 32, 33)]
        spec = _state_spec(rho, bases)
        x = min_entropy_estimator(spec, rng=Rng(34))
        assert np.max(np.abs(x - rho)) < 1e-5


class TestConsistency:
    def test_compile_consistent_refits_near_zero_targets(self):
        # rank-1 truth measured in its own eigenbasis: zero targets carve a
        # face; slightly perturbed remaining targets must be refit onto it
        d = 3
        v = Rng(35).complex_normal(d)
        v = v / np.linalg.norm(v)
        rho = np.outer(v, v.conj())
        from cqtomo.qcore import eigh_descending
        _, u = eigh_descending(rho)
        spec = _state_spec(rho, [u, haar_unitary(d, Rng(36)).matrix])
        program = compile_consistent(spec)
        assert program.face_bases is not None
        res = icc(spec, random_witness("state", d, rng=Rng(37)),
                  program=program)
        assert res.ok
        assert res.s_cvx_raw < 1e-6
