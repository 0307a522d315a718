"""Statistically consistent convex inference: maximum-likelihood and
least-squares mapping of noisy frequencies to physical probabilities.

A ``MeasurementRecord`` carries the raw data grouped by measurement setting;
``ml_estimate`` maximizes the multinomial log-likelihood by projected-gradient
ascent over the physical set of the record's kind, and ``ls_estimate``
delegates the least-squares projection to the conic backend.

In the noiseless limit (infinite copies per setting) the observed frequencies
equal the true Born probabilities, which are already physical; both inference
maps then return them unchanged, which is the exact fixed point of either
objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .qcore import InvalidDimension, InvariantViolation, _mat

LOG_FLOOR = 1e-14


@dataclass
class MeasurementSetting:
    """One measurement group: outcome operators with their observed data.

    For object kinds 'state', 'choi' and 'chi' the ``operators`` act directly
    on the unknown object, i.e. p_j = tr(X op_j).  For kind 'povm-probe' the
    group is one input state probing every POVM outcome.
    """

    operators: list
    frequencies: np.ndarray
    copies: float = np.inf
    counts: np.ndarray = None
    input_state: np.ndarray = None
    label: str = ""

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        if abs(self.frequencies.sum() - 1.0) > 1e-12:
            raise InvariantViolation("setting frequencies must sum to 1")
        if np.isfinite(self.copies):
            if self.counts is None:
                raise InvariantViolation("finite-copies setting requires counts")
            self.counts = np.asarray(self.counts)
            if np.any(self.counts < 0) or not np.issubdtype(self.counts.dtype, np.integer):
                raise InvariantViolation("counts must be nonnegative integers")


@dataclass
class MeasurementRecord:
    kind: str  # state | choi | chi | povm-probe
    dim: int
    settings: list

    @property
    def noiseless(self) -> bool:
        return all(not np.isfinite(s.copies) for s in self.settings)

    @property
    def n_outcomes(self) -> int:
        return sum(len(s.frequencies) for s in self.settings)


@dataclass
class LinearSystem:
    design: np.ndarray
    data: np.ndarray
    basis: list


@dataclass
class InferenceResult:
    estimator: object
    probabilities: list
    objective: float
    iterations: int
    converged: bool


# ---------------------------------------------------------------------------
# traceless Hermitian operator basis


def gell_mann_basis(d: int) -> list:
    """The d^2 - 1 generalized Gell-Mann matrices: traceless, Hermitian,
    trace-orthonormal."""
    basis = []
    for j in range(d):
        for k in range(j + 1, d):
            x = np.zeros((d, d), dtype=complex)
            x[j, k] = x[k, j] = 1 / np.sqrt(2)
            basis.append(x)
            y = np.zeros((d, d), dtype=complex)
            y[j, k] = -1j / np.sqrt(2)
            y[k, j] = 1j / np.sqrt(2)
            basis.append(y)
    for l in range(1, d):
        z = np.zeros((d, d), dtype=complex)
        for m in range(l):
            z[m, m] = 1.0
        z[l, l] = -l
        basis.append(z / np.sqrt(l * (l + 1)))
    return basis


def build_linear_system(record: MeasurementRecord) -> LinearSystem:
    """Design matrix A_jl = tr(Pi_j Omega_l) and data column
    b_j = nu_j - tr(Pi_j)/d over the Gell-Mann basis (state records)."""
    if record.kind != "state":
        raise InvalidDimension("linear system is defined for state records")
    d = record.dim
    basis = gell_mann_basis(d)
    rows, data = [], []
    for s in record.settings:
        for op, nu in zip(s.operators, s.frequencies):
            op = _mat(op)
            if op.shape != (d, d):
                raise InvalidDimension("outcome operator dimension mismatch")
            rows.append([np.trace(op @ om).real for om in basis])
            data.append(nu - np.trace(op).real / d)
    return LinearSystem(np.array(rows), np.array(data), basis)


# ---------------------------------------------------------------------------
# physical-set projections (used by the likelihood ascent)


def _project_simplex(w: np.ndarray, total: float = 1.0) -> np.ndarray:
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, len(w) + 1)
    rho = np.max(np.nonzero(u - css / idx > 0)[0]) + 1
    theta = css[rho - 1] / rho
    return np.clip(w - theta, 0.0, None)


def project_density(m: np.ndarray, total: float = 1.0) -> np.ndarray:
    """Euclidean projection onto {X >= 0, tr X = total}."""
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    w = _project_simplex(w, total)
    return (v * w) @ v.conj().T


def project_cptp_chi(m: np.ndarray, d: int, sweeps: int = 8) -> np.ndarray:
    """Alternate eigenvalue clipping with the trace-preservation correction
    ptr_1(chi) = I; ends on the TP step so the equality is exact."""
    x = (m + m.conj().T) / 2
    eye = np.eye(d)
    for _ in range(sweeps):
        w, v = np.linalg.eigh(x)
        x = (v * np.clip(w, 0.0, None)) @ v.conj().T
        marg = np.einsum("ijik->jk", x.reshape(d, d, d, d))
        x = x + np.kron(eye, (eye - marg) / d)
    return x


def project_povm(ops: list, sweeps: int = 4) -> list:
    """Clip each outcome to the positive cone, then renormalize with
    S^{-1/2} . S^{-1/2} so the outcomes sum to the identity."""
    outs = [np.asarray(o, dtype=complex) for o in ops]
    d = outs[0].shape[0]
    for _ in range(sweeps):
        clipped = []
        for o in outs:
            w, v = np.linalg.eigh((o + o.conj().T) / 2)
            clipped.append((v * np.clip(w, 1e-12, None)) @ v.conj().T)
        s = sum(clipped)
        w, v = np.linalg.eigh(s)
        s_isqrt = (v / np.sqrt(np.clip(w, 1e-12, None))) @ v.conj().T
        outs = [s_isqrt @ o @ s_isqrt for o in clipped]
    return [(o + o.conj().T) / 2 for o in outs]


# ---------------------------------------------------------------------------
# maximum likelihood


def _flatten_record(record: MeasurementRecord):
    """Per-outcome operator list, frequencies, and group slices."""
    ops, nus, slices = [], [], []
    start = 0
    for s in record.settings:
        if record.kind == "povm-probe":
            n = len(s.frequencies)
        else:
            n = len(s.operators)
        ops.append(s.operators)
        nus.append(np.asarray(s.frequencies, dtype=float))
        slices.append(slice(start, start + n))
        start += n
    return ops, nus, slices


def _state_like_loglik(x, record):
    total = 0.0
    probs = []
    for s in record.settings:
        p = np.array([max(np.trace(x @ _mat(op)).real, LOG_FLOOR) for op in s.operators])
        probs.append(p)
        nz = s.frequencies > 0
        total += float(np.sum(s.frequencies[nz] * np.log(p[nz])))
    return total, probs


def _state_like_gradient(probs, record):
    d = record.settings[0].operators[0].shape[0]
    g = np.zeros((d, d), dtype=complex)
    for s, p in zip(record.settings, probs):
        for op, nu, pj in zip(s.operators, s.frequencies, p):
            if nu > 0:
                g += (nu / pj) * _mat(op)
    return g


def _povm_loglik(pis, record):
    total = 0.0
    probs = []
    for s in record.settings:
        rho = _mat(s.input_state)
        p = np.array([max(np.trace(rho @ pi).real, LOG_FLOOR) for pi in pis])
        probs.append(p)
        nz = s.frequencies > 0
        total += float(np.sum(s.frequencies[nz] * np.log(p[nz])))
    return total, probs


def ml_estimate(record: MeasurementRecord, max_iters: int = 100000, tol: float = 1e-9) -> InferenceResult:
    """Maximize the multinomial log-likelihood over the physical set of the
    record's kind by projected-gradient ascent with backtracking.

    The likelihood is monotone non-decreasing across accepted iterations; the
    loop stops when the relative gain drops below ``tol``.  Noiseless records
    short-circuit: the frequencies are exact Born probabilities and are
    returned as the physical probabilities directly, while the estimator is
    still refined by ascent (any likelihood maximizer reproduces them).
    """
    d = record.dim
    if record.kind == "state":
        x = np.eye(d, dtype=complex) / d
        project = lambda m: project_density(m, 1.0)
    elif record.kind in ("chi", "choi"):
        x = np.eye(d * d, dtype=complex) / d
        if record.kind == "chi":
            project = lambda m: project_cptp_chi(m, d)
        else:
            project = lambda m: _project_cptp_choi(m, d)
    elif record.kind == "povm-probe":
        return _ml_estimate_povm(record, max_iters, tol)
    else:
        raise ValueError("unknown record kind %r" % record.kind)

    loglik, probs = _state_like_loglik(x, record)
    step = 1.0
    iters = 0
    converged = False
    for iters in range(1, max_iters + 1):
        grad = _state_like_gradient(probs, record)
        accepted = False
        for _ in range(40):
            cand = project(x + step * grad)
            cand_ll, cand_probs = _state_like_loglik(cand, record)
            if cand_ll >= loglik:
                accepted = True
                break
            step /= 2
        if not accepted:
            converged = True
            break
        gain = cand_ll - loglik
        x, loglik, probs = cand, cand_ll, cand_probs
        step *= 1.6
        if gain < tol * (1.0 + abs(loglik)):
            converged = True
            break

    if record.noiseless:
        p_hat = [np.asarray(s.frequencies, dtype=float) for s in record.settings]
    else:
        p_hat = [p / p.sum() for p in probs]
    return InferenceResult(x, p_hat, -loglik, iters, converged)


def _project_cptp_choi(m: np.ndarray, d: int, sweeps: int = 8) -> np.ndarray:
    """Same alternation as the chi projection, with ptr_2 = I."""
    x = (m + m.conj().T) / 2
    eye = np.eye(d)
    for _ in range(sweeps):
        w, v = np.linalg.eigh(x)
        x = (v * np.clip(w, 0.0, None)) @ v.conj().T
        marg = np.einsum("ijkj->ik", x.reshape(d, d, d, d))
        x = x + np.kron((eye - marg) / d, eye)
    return x


def _ml_estimate_povm(record: MeasurementRecord, max_iters: int, tol: float) -> InferenceResult:
    """Likelihood ascent over the POVM set, grouped by input state."""
    d = record.dim
    n_out = len(record.settings[0].frequencies)
    pis = [np.eye(d, dtype=complex) / n_out for _ in range(n_out)]
    loglik, probs = _povm_loglik(pis, record)
    step = 1.0
    iters = 0
    converged = False
    for iters in range(1, max_iters + 1):
        grads = [np.zeros((d, d), dtype=complex) for _ in range(n_out)]
        for s, p in zip(record.settings, probs):
            rho = _mat(s.input_state)
            for j, (nu, pj) in enumerate(zip(s.frequencies, p)):
                if nu > 0:
                    grads[j] += (nu / pj) * rho
        accepted = False
        for _ in range(40):
            cand = project_povm([pi + step * g for pi, g in zip(pis, grads)])
            cand_ll, cand_probs = _povm_loglik(cand, record)
            if cand_ll >= loglik:
                accepted = True
                break
            step /= 2
        if not accepted:
            converged = True
            break
        gain = cand_ll - loglik
        pis, loglik, probs = cand, cand_ll, cand_probs
        step *= 1.6
        if gain < tol * (1.0 + abs(loglik)):
            converged = True
            break
    if record.noiseless:
        p_hat = [np.asarray(s.frequencies, dtype=float) for s in record.settings]
    else:
        p_hat = [p / p.sum() for p in probs]
    return InferenceResult(pis, p_hat, -loglik, iters, converged)


# ---------------------------------------------------------------------------
# least squares


def ls_estimate(record: MeasurementRecord, backend=None) -> InferenceResult:
    """Minimize the squared distance between model probabilities and the
    observed (or ML-mapped) targets over the physical set, via one conic
    solve.  Noiseless records pass straight through (the optimum fits them
    exactly with zero residual)."""
    from . import convex  # local import; convex depends on this module's basis

    if record.noiseless:
        p_hat = [np.asarray(s.frequencies, dtype=float) for s in record.settings]
        est = ml_estimate(record, max_iters=2000).estimator
        return InferenceResult(est, p_hat, 0.0, 0, True)

    backend = backend or convex.default_backend()
    spec = convex.FeasibleSetSpec(kind=_spec_kind(record), dim=record.dim,
                                  n_outcomes=_povm_size(record), constraints=[])
    program = convex.compile_constraints(spec)
    rows, targets = [], []
    for s in record.settings:
        for j, (nu) in enumerate(s.frequencies):
            rows.append(convex.constraint_row(spec, s, j))
            targets.append(float(nu))
    result = backend.solve_least_squares(program, rows, targets)
    if result.status not in ("Solved", "AlmostSolved"):
        return InferenceResult(None, [], float("nan"), 1, False)
    est = result.blocks[0] if spec.kind != "povm" else result.blocks
    fitted = np.array([row_dot(r, result.blocks) for r in rows])
    p_hat, start = [], 0
    for s in record.settings:
        n = len(s.frequencies)
        p_hat.append(fitted[start:start + n])
        start += n
    return InferenceResult(est, p_hat, float(result.value) ** 2, 1, True)


def _spec_kind(record: MeasurementRecord) -> str:
    return {"state": "state", "choi": "choi-cptp", "chi": "chi-cptp",
            "povm-probe": "povm"}[record.kind]


def _povm_size(record: MeasurementRecord):
    if record.kind == "povm-probe":
        return len(record.settings[0].frequencies)
    return None


def row_dot(row, blocks) -> float:
    """Evaluate a constraint row (list of (block, op) pairs) on solved blocks."""
    return float(sum(np.trace(_mat(blocks[i]) @ _mat(op)).real for i, op in row))
