"""Compressive tomography protocols: iterative measure / infer / certify
drivers for states (random or adaptive bases), processes (adaptive input
states or adaptive probes), and detectors (random input probes).

Every scheme follows the same loop: collect data for the current setting,
map the accumulated frequencies to physical probabilities (ML or LS),
certify informational completeness over the physical set, and either stop
(certified) or pick the next setting.  Adaptive variants choose the next
setting from the minimum-entropy estimator of the current feasible set.

Certification is on the normalized gap s_norm = s_raw / s_raw(first
iteration); the first iteration reports s_norm = 1 by convention, so no
scheme certifies before its second setting.  When the first raw gap is
itself below 1e-9 the normalizer falls back to 1 (absolute certification).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import convex
from .channels import (
    ChoiOperator,
    chi_choi_transform_unitary,
    elementary_operator_basis,
    kraus_to_chi,
    kraus_to_choi,
    random_rank_r_process,
    rotated_diagonal_probability,
    sv_probe_pair,
)
from .harness import multinomial_sample
from .inference import (
    MeasurementRecord,
    MeasurementSetting,
    ls_estimate,
    ml_estimate,
    project_cptp_chi,
    project_density,
    project_povm,
    _project_cptp_choi,
)
from .qcore import (
    InvalidDimension,
    Rng,
    born_probabilities,
    eigh_descending,
    fidelity,
    haar_unitary,
    numerical_rank,
    random_pure_state,
    random_rank_r_povm,
    random_rank_r_state,
    trace_distance,
)

NORMALIZER_FLOOR = 1e-9

SCHEMES = ("rh", "rlh", "act", "pact", "actqpt", "pactqpt", "acqpt",
           "acqpt-unitary", "cqdt")


@dataclass
class SchemeConfig:
    """Full description of one scheme run; identical configs (seed included)
    produce identical traces."""

    scheme: str  # rh | rlh | act | pact | actqpt | pactqpt | acqpt | acqpt-unitary | cqdt
    d: int
    r: int = 1
    copies: float = np.inf  # per-setting copies, inf = noiseless
    epsilon: float = 1e-6
    budget: int = None  # iteration cap; None picks the per-scheme default
    seed: int = 0
    local_dims: tuple = None  # factorization for product modes
    mode: str = "ideal"  # acqpt: ideal | realizable
    n_outcomes: int = None  # cqdt POVM size, default d^2
    truth: object = None  # override the seeded truth generator

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError("unknown scheme %r" % self.scheme)
        if self.d < 2:
            raise InvalidDimension("need d >= 2")
        if self.scheme in ("rlh", "pact", "pactqpt"):
            if not self.local_dims:
                raise InvalidDimension("product schemes require local_dims")
            if int(np.prod(self.local_dims)) != self.d:
                raise InvalidDimension("local_dims must factor d")
        if self.mode not in ("ideal", "realizable"):
            raise ValueError("mode must be ideal or realizable")

    @property
    def kind(self) -> str:
        if self.scheme in ("rh", "rlh", "act", "pact"):
            return "state"
        if self.scheme == "cqdt":
            return "povm"
        return "process"

    def default_budget(self) -> int:
        d = self.d
        if self.kind == "state":
            return 3 * (d + 1)
        if self.scheme in ("acqpt", "acqpt-unitary"):
            return 6 * d * d
        return 2 * d * d

    @property
    def iteration_budget(self) -> int:
        return self.budget if self.budget else self.default_budget()


@dataclass
class IterationRecord:
    index: int
    setting: str
    s_cvx_raw: float
    s_cvx_norm: float
    fidelity: float
    wall_time: float


@dataclass
class SchemeTrace:
    config: SchemeConfig
    iterations: list = field(default_factory=list)
    terminal_count: int = 0
    total_outcomes: int = 0
    estimator: object = None
    reason: str = ""

    @property
    def certified(self) -> bool:
        return self.reason == "certified"

    @property
    def final_fidelity(self) -> float:
        return self.iterations[-1].fidelity if self.iterations else float("nan")

    def log(self, index, setting, icc_res, fid, t0):
        self.iterations.append(IterationRecord(
            index, setting, icc_res.s_cvx_raw, icc_res.s_cvx_norm, fid,
            time.perf_counter() - t0))


def run_scheme(config: SchemeConfig) -> SchemeTrace:
    """Dispatch on the configured scheme name."""
    runner = {
        "rh": run_random_bases_cqst, "rlh": run_random_bases_cqst,
        "act": run_act, "pact": run_pact,
        "actqpt": run_actqpt, "pactqpt": run_pactqpt,
        "acqpt": run_acqpt, "acqpt-unitary": run_acqpt,
        "cqdt": run_cqdt,
    }.get(config.scheme)
    if runner is None:
        raise ValueError("unknown scheme %r" % config.scheme)
    return runner(config)


# ---------------------------------------------------------------------------
# quantum state tomography (random and adaptive bases)


def _sample_setting(ops, p, copies, rng) -> MeasurementSetting:
    nu = multinomial_sample(p, copies, rng)
    counts = None if not np.isfinite(copies) else np.rint(nu * copies).astype(int)
    return MeasurementSetting(ops, nu, copies=copies, counts=counts)


def _product_haar(local_dims, rng) -> np.ndarray:
    u = np.eye(1, dtype=complex)
    for i, di in enumerate(local_dims):
        u = np.kron(u, haar_unitary(di, rng.child(i)).matrix)
    return u


def _basis_ops(u: np.ndarray) -> list:
    return [np.outer(u[:, k], u[:, k].conj()) for k in range(u.shape[1])]


def _normalizer(raw_first: float) -> float:
    return raw_first if raw_first > NORMALIZER_FLOOR else 1.0


def _qst_core(config: SchemeConfig, truth: np.ndarray, rng: Rng,
              backend=None) -> tuple:
    """Shared state-tomography loop.  Returns (trace, ml_groups) where
    ml_groups pairs each measured basis with its physical probabilities,
    for consumption by the process-tomography outer loop."""
    d = truth.shape[0]
    scheme = config.scheme
    backend = backend or convex.default_backend()
    witness = convex.random_witness("state", d, rng=rng.child("witness"))
    trace = SchemeTrace(config)
    settings = []
    u = np.eye(d, dtype=complex)  # first basis is computational
    normalizer = None
    for k in range(1, config.iteration_budget + 1):
        t0 = time.perf_counter()
        ops = _basis_ops(u)
        p = born_probabilities(truth, ops)
        settings.append(_sample_setting(ops, p, config.copies, rng.child("data", k)))
        record = MeasurementRecord("state", d, settings)
        ml = ml_estimate(record)
        spec = convex.FeasibleSetSpec(kind="state", dim=d)
        for s, p_hat in zip(settings, ml.probabilities):
            for op, pj in zip(s.operators, p_hat):
                spec.add(op, pj)
        program = convex.compile_consistent(spec, backend)
        res = convex.icc(spec, witness, backend=backend,
                         normalizer=normalizer, program=program)
        if normalizer is None:
            normalizer = _normalizer(res.s_cvx_raw)
            res.s_cvx_norm = 1.0
        fid = fidelity(ml.estimator, truth)
        trace.log(k, "basis %d (%s)" % (k, scheme), res, fid, t0)
        if res.certified(config.epsilon):
            trace.terminal_count = k
            trace.total_outcomes = k * d
            trace.estimator = project_density(res.witness_max[0])
            trace.reason = "certified"
            # report the certified point, not the interim ML iterate
            trace.iterations[-1].fidelity = fidelity(trace.estimator, truth)
            return trace, [(s.operators, ph) for s, ph in zip(settings, ml.probabilities)]
        if scheme in ("rh", "rlh"):
            if scheme == "rh":
                u = haar_unitary(d, rng.child("basis", k + 1)).matrix
            else:
                u = _product_haar(config.local_dims, rng.child("basis", k + 1))
        else:
            try:
                x = convex.min_entropy_estimator(
                    spec, restarts=2, rng=rng.child("minent", k),
                    backend=backend, program=program)
                _, v = eigh_descending(x)
                u = v
            except RuntimeError:
                # degenerate solve; fall back to a random basis this round
                u = haar_unitary(d, rng.child("basis", k + 1)).matrix
            if scheme == "pact":
                u, _ = nearest_product_basis(u, config.local_dims)
    trace.terminal_count = config.iteration_budget
    trace.total_outcomes = config.iteration_budget * d
    trace.estimator = project_density(ml.estimator)
    trace.reason = "budget-exhausted"
    return trace, [(s.operators, ph) for s, ph in zip(settings, ml.probabilities)]


def _qst_truth(config: SchemeConfig, rng: Rng) -> np.ndarray:
    if config.truth is not None:
        m = np.asarray(getattr(config.truth, "matrix", config.truth), dtype=complex)
        if m.shape != (config.d, config.d):
            raise InvalidDimension("truth override must be %d x %d" % (config.d, config.d))
        return m
    return random_rank_r_state(config.d, config.r, rng.child("truth")).matrix


def run_random_bases_cqst(config: SchemeConfig) -> SchemeTrace:
    """Random-bases compressive state tomography: Haar bases (rh) or
    products of local Haar bases (rlh), first basis computational."""
    if config.scheme not in ("rh", "rlh"):
        raise ValueError("expected scheme rh or rlh")
    rng = Rng(config.seed)
    return _qst_core(config, _qst_truth(config, rng), rng)[0]


def run_act(config: SchemeConfig) -> SchemeTrace:
    """Adaptive compressive state tomography: the next basis is the
    descending eigenbasis of the minimum-entropy estimator."""
    rng = Rng(config.seed)
    return _qst_core(config, _qst_truth(config, rng), rng)[0]


def run_pact(config: SchemeConfig) -> SchemeTrace:
    """Product-basis variant of the adaptive scheme: the next basis is the
    nearest product basis to the minimum-entropy eigenbasis."""
    rng = Rng(config.seed)
    return _qst_core(config, _qst_truth(config, rng), rng)[0]


def nearest_product_basis(u: np.ndarray, local_dims, sweeps: int = 50,
                          tol: float = 1e-8):
    """Nearest product unitary to u in Frobenius distance, by alternating
    closed-form polar updates of each factor.  Returns (product, factors);
    the distance is non-increasing across sweeps."""
    dims = tuple(int(x) for x in local_dims)
    d = int(np.prod(dims))
    if u.shape != (d, d):
        raise InvalidDimension("local_dims must factor the unitary dimension")
    n = len(dims)
    t = np.asarray(u, dtype=complex).reshape(dims + dims)
    factors = [np.eye(di, dtype=complex) for di in dims]
    letters = "abcdefgh"
    big = "".join(letters[i] for i in range(n)) + \
          "".join(letters[i].upper() for i in range(n))
    prev = None
    for _ in range(sweeps):
        for i in range(n):
            # contract every other factor's conjugate against u
            terms = [big]
            args = [t]
            for j in range(n):
                if j != i:
                    terms.append(letters[j] + letters[j].upper())
                    args.append(factors[j].conj())
            m = np.einsum(",".join(terms) + "->" + letters[i] + letters[i].upper(), *args)
            w, _, vh = np.linalg.svd(m)
            factors[i] = w @ vh  # polar factor maximizes Re tr(U_i^dag M)
        prod = factors[0]
        for f in factors[1:]:
            prod = np.kron(prod, f)
        dist = np.linalg.norm(u - prod)
        if prev is not None and abs(prev - dist) <= tol * max(prev, 1.0):
            break
        prev = dist
    return prod, factors


# ---------------------------------------------------------------------------
# process tomography via random input states and adaptive output bases


def _process_truth(config: SchemeConfig, rng: Rng):
    if config.truth is not None:
        return config.truth
    return random_rank_r_process(config.d, config.r, rng.child("truth"))


def _choi_fidelity(x: np.ndarray, choi_truth: np.ndarray) -> float:
    if not np.all(np.isfinite(x)):
        return float("nan")
    a = project_density(x / np.trace(x).real, 1.0)
    b = choi_truth / np.trace(choi_truth).real
    return fidelity(a, b)


def _ctqpt(config: SchemeConfig, product: bool) -> SchemeTrace:
    d = config.d
    rng = Rng(config.seed)
    kraus = _process_truth(config, rng)
    choi_truth = kraus_to_choi(kraus).matrix
    backend = convex.default_backend()
    witness = convex.random_witness("choi-cptp", d, rng=rng.child("witness"))
    trace = SchemeTrace(config)
    constraints = []  # accumulated (choi operator, ml probability)
    inner_scheme = "pact" if product else "act"
    total_outcomes = 0
    normalizer = None
    for ell in range(1, config.iteration_budget + 1):
        t0 = time.perf_counter()
        if product:
            psi = np.ones(1, dtype=complex)
            for i, di in enumerate(config.local_dims):
                psi = np.kron(psi, random_pure_state(di, rng.child("input", ell, i)))
        else:
            psi = random_pure_state(d, rng.child("input", ell))
        rho_in = np.outer(psi, psi.conj())
        rho_out = kraus.apply(rho_in)
        inner_cfg = SchemeConfig(
            scheme=inner_scheme, d=d, r=d, copies=config.copies,
            epsilon=config.epsilon, seed=0, local_dims=config.local_dims)
        inner_trace, groups = _qst_core(
            inner_cfg, rho_out, rng.child("inner", ell), backend=backend)
        for ops, p_hat in groups:
            total_outcomes += len(ops)
            for op, pj in zip(ops, p_hat):
                constraints.append((np.kron(rho_in.T, op), float(pj)))
        # second-level LS over the CPTP set; noiseless data is already an
        # exact Born image of the truth, so the residual is zero and the
        # targets pass through unchanged
        spec = convex.FeasibleSetSpec(kind="choi-cptp", dim=d)
        program = convex.compile_consistent(spec, backend)
        if np.isfinite(config.copies):
            rows = [[(0, op)] for op, _ in constraints]
            ls = backend.solve_least_squares(program, rows, [t for _, t in constraints])
            targets = [float(np.trace(ls.blocks[0] @ op).real) for op, _ in constraints]
        else:
            targets = [t for _, t in constraints]
        for (op, _), t in zip(constraints, targets):
            spec.add(op, t)
        program = convex.compile_consistent(spec, backend)
        res = convex.icc(spec, witness, backend=backend,
                         normalizer=normalizer, program=program)
        if normalizer is None:
            normalizer = _normalizer(res.s_cvx_raw)
            res.s_cvx_norm = 1.0
        fid = _choi_fidelity(res.witness_max[0], choi_truth)
        trace.log(ell, "input %d (%d inner bases)" % (ell, inner_trace.terminal_count),
                  res, fid, t0)
        if res.certified(config.epsilon):
            trace.terminal_count = ell
            trace.total_outcomes = total_outcomes
            trace.estimator = _project_cptp_choi(res.witness_max[0], d)
            trace.reason = "certified"
            return trace
    trace.terminal_count = config.iteration_budget
    trace.total_outcomes = total_outcomes
    trace.estimator = _project_cptp_choi(res.witness_max[0], d)
    trace.reason = "budget-exhausted"
    return trace


def run_actqpt(config: SchemeConfig) -> SchemeTrace:
    """Adaptive compressive process tomography: Haar-random pure inputs,
    each output state characterized by the adaptive state scheme, CPTP
    least-squares regularization, Choi-set certification."""
    return _ctqpt(config, product=False)


def run_pactqpt(config: SchemeConfig) -> SchemeTrace:
    """Product-input, product-basis variant of the adaptive process scheme."""
    return _ctqpt(config, product=True)


# ---------------------------------------------------------------------------
# process tomography via adaptively rotated two-outcome probes


def _principal_ket(projector: np.ndarray) -> np.ndarray:
    w, v = eigh_descending(projector)
    return v[:, 0]


def _probe_operators(u: np.ndarray, kappa: int, d: int, mode: str):
    """Two-outcome chi-space operators for probe (U, kappa).  Ideal mode
    measures the rotated diagonal directly; realizable mode probes with the
    dominant singular pair of Gamma'_kappa = sum_m U_{m kappa} Gamma_m."""
    d2 = d * d
    if mode == "ideal":
        col = u[:, kappa]
        e = np.outer(col, col.conj()) / d
        return [e, np.eye(d2) / d - e]
    g = u[:, kappa].reshape(d, d)
    proj_a, proj_b = sv_probe_pair(g)
    a = _principal_ket(proj_a)
    b = _principal_ket(proj_b)
    # p = <b| Phi(|a><a|) |b> = tr(chi C), C = |c><c| with c = b (x) conj(a)
    c = np.kron(b, a.conj())
    first = np.outer(c, c.conj())
    closure = np.kron(np.eye(d), np.outer(a.conj(), a))  # tr(chi .) = 1
    return [first, closure - first]


def run_acqpt(config: SchemeConfig) -> SchemeTrace:
    """Adaptive-probe compressive process tomography on the chi operator.

    Starts from the identity rotation and the first diagonal index; each
    round measures a two-outcome probe, certifies over the CPTP chi set and
    rotates to the descending eigenbasis of the minimum-entropy estimator.
    The probe index cycles through the estimator's numerical rank, or stays
    at 1 under the unitarity assumption (scheme acqpt-unitary).
    """
    d = config.d
    d2 = d * d
    unitarity = config.scheme == "acqpt-unitary"
    rng = Rng(config.seed)
    kraus = _process_truth(config, rng)
    chi_truth = kraus_to_chi(kraus)
    perm = chi_choi_transform_unitary(d)
    choi_truth = perm @ chi_truth.matrix @ perm.conj().T
    backend = convex.default_backend()
    witness = convex.random_witness("chi-cptp", d, rng=rng.child("witness"))
    trace = SchemeTrace(config)
    settings = []
    u = np.eye(d2, dtype=complex)
    kappa = 0
    normalizer = None
    for m in range(1, config.iteration_budget + 1):
        t0 = time.perf_counter()
        ops = _probe_operators(u, kappa, d, config.mode)
        p1 = float(np.trace(chi_truth.matrix @ ops[0]).real)
        p = np.clip(np.array([p1, 1.0 - p1]), 0.0, None)
        settings.append(_sample_setting(ops, p / p.sum(), config.copies,
                                        rng.child("data", m)))
        record = MeasurementRecord("chi", d, settings)
        ml = ml_estimate(record)
        spec = convex.FeasibleSetSpec(kind="chi-cptp", dim=d)
        for s, p_hat in zip(settings, ml.probabilities):
            for op, pj in zip(s.operators, p_hat):
                spec.add(op, pj)
        program = convex.compile_consistent(spec, backend)
        res = convex.icc(spec, witness, backend=backend,
                         normalizer=normalizer, program=program)
        if normalizer is None:
            normalizer = _normalizer(res.s_cvx_raw)
            res.s_cvx_norm = 1.0
        est_choi = perm @ res.witness_max[0] @ perm.conj().T
        fid = _choi_fidelity(est_choi, choi_truth)
        trace.log(m, "probe %d (kappa=%d)" % (m, kappa + 1), res, fid, t0)
        if res.certified(config.epsilon):
            trace.terminal_count = m
            trace.total_outcomes = 2 * m
            trace.estimator = project_cptp_chi(res.witness_max[0], d)
            trace.reason = "certified"
            return trace
        try:
            x = convex.min_entropy_estimator(
                spec, restarts=2, rng=rng.child("minent", m),
                backend=backend, program=program)
            _, v = eigh_descending(x)
            u = v
            r_next = 1 if unitarity else max(numerical_rank(x, 1e-6), 1)
        except RuntimeError:
            u = haar_unitary(d2, rng.child("probe", m + 1)).matrix
            r_next = 1 if unitarity else d2
        kappa = m % r_next
    trace.terminal_count = config.iteration_budget
    trace.total_outcomes = 2 * config.iteration_budget
    trace.estimator = project_cptp_chi(ml.estimator, d)
    trace.reason = "budget-exhausted"
    return trace


# ---------------------------------------------------------------------------
# detector tomography (random pure input probes)


def run_cqdt(config: SchemeConfig) -> SchemeTrace:
    """Compressive detector tomography: probe the unknown POVM with random
    pure input states, least-squares-map the accumulated frequencies and
    certify over the POVM set."""
    d = config.d
    n_out = config.n_outcomes or d * d
    rng = Rng(config.seed)
    if config.truth is not None:
        povm = config.truth
    else:
        povm = random_rank_r_povm(d, config.r, n_out, rng.child("truth"))
    backend = convex.default_backend()
    witness = convex.random_witness("povm", d, n_outcomes=n_out,
                                    rng=rng.child("witness"))
    trace = SchemeTrace(config)
    settings = []
    normalizer = None
    for ell in range(1, config.iteration_budget + 1):
        t0 = time.perf_counter()
        if config.local_dims:
            psi = np.ones(1, dtype=complex)
            for i, di in enumerate(config.local_dims):
                psi = np.kron(psi, random_pure_state(di, rng.child("input", ell, i)))
        else:
            psi = random_pure_state(d, rng.child("input", ell))
        rho = np.outer(psi, psi.conj())
        p = born_probabilities(rho, povm)
        nu = multinomial_sample(p, config.copies, rng.child("data", ell))
        counts = None if not np.isfinite(config.copies) \
            else np.rint(nu * config.copies).astype(int)
        settings.append(MeasurementSetting(
            operators=None, frequencies=nu, copies=config.copies,
            counts=counts, input_state=rho))
        record = MeasurementRecord("povm-probe", d, settings)
        ls = ls_estimate(record, backend=backend)
        spec = convex.FeasibleSetSpec(kind="povm", dim=d, n_outcomes=n_out)
        for s, p_hat in zip(settings, ls.probabilities):
            for j, pj in enumerate(p_hat):
                spec.constraints.append(
                    convex.povm_constraint(s.input_state, j, pj))
        program = convex.compile_consistent(spec, backend)
        res = convex.icc(spec, witness, backend=backend,
                         normalizer=normalizer, program=program)
        if normalizer is None:
            normalizer = _normalizer(res.s_cvx_raw)
            res.s_cvx_norm = 1.0
        dist = max(trace_distance(a, b)
                   for a, b in zip(res.witness_max, povm.outcomes))
        trace.log(ell, "input %d" % ell, res, 1.0 - dist, t0)
        if res.certified(config.epsilon):
            trace.terminal_count = ell
            trace.total_outcomes = ell * n_out
            trace.estimator = project_povm(res.witness_max)
            trace.reason = "certified"
            return trace
    trace.terminal_count = config.iteration_budget
    trace.total_outcomes = config.iteration_budget * n_out
    trace.estimator = project_povm(res.witness_max)
    trace.reason = "budget-exhausted"
    return trace
