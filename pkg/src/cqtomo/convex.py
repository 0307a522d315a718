"""Convex feasible-set machinery: constraint compilation into conic form,
the informational-completeness certification routine, and the
minimum-entropy estimator.

The feasible sets are intersections of positivity cones with affine data
constraints:

* state(d):      X >= 0, tr X = 1
* choi-cptp(d):  X >= 0 on d^2, tr(X (Omega_l (x) I)) = 0, tr X = d
* chi-cptp(d):   X >= 0 on d^2, tr(X (I (x) Omega_l)) = 0, tr X = d
* povm(d, M):    Pi_j >= 0, sum_j Pi_j = I

Complex Hermitian cones are realized through the standard real-symmetric
doubling embedding and handed to the Clarabel interior-point solver; the
backend is pluggable (anything with ``solve_linear``/``solve_least_squares``
over a compiled program works).

Data constraints are imposed as exact equalities.  The targets always come
from an inference map, i.e. from the Born probabilities of a physical
estimator, so an exactly feasible point exists by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

import clarabel

from .qcore import Rng, _mat, eigh_descending, random_rank_r_povm, random_rank_r_state
from .inference import gell_mann_basis


# ---------------------------------------------------------------------------
# Hermitian vectorization and the symmetric doubling embedding


class _HermitianVectorizer:
    """Real coordinates for d x d Hermitian matrices: the d diagonal entries
    followed by the real then imaginary parts of the upper triangle."""

    def __init__(self, d: int):
        self.d = d
        self.n = d * d
        self.iu = np.triu_indices(d, 1)
        self.n_off = len(self.iu[0])
        m = 2 * d
        self.embed_side = m
        self.n_svec = m * (m + 1) // 2
        self._embed = self._build_embed()

    def to_coords(self, h: np.ndarray) -> np.ndarray:
        return np.concatenate([
            np.real(np.diag(h)), np.real(h[self.iu]), np.imag(h[self.iu])])

    def from_coords(self, x: np.ndarray) -> np.ndarray:
        d = self.d
        h = np.zeros((d, d), dtype=complex)
        h[np.diag_indices(d)] = x[:d]
        h[self.iu] = x[d:d + self.n_off] + 1j * x[d + self.n_off:]
        return h + np.triu(h, 1).conj().T

    def functional_row(self, c: np.ndarray) -> np.ndarray:
        """Row r with r . coords(X) = Re tr(X C) for Hermitian C."""
        r = self.to_coords(c)
        r[self.d:] *= 2
        return r

    def _build_embed(self) -> sp.csc_matrix:
        """Sparse map from Hermitian coordinates to the scaled upper-triangle
        (svec) of the real embedding [[A, -B], [B, A]]."""
        d, m = self.d, self.embed_side
        sq2 = np.sqrt(2.0)

        def svec_index(i, j):  # i <= j, column-major upper triangle
            return j * (j + 1) // 2 + i

        rows, cols, vals = [], [], []

        def put(i, j, col, val):  # upper-triangle entry, i <= j
            rows.append(svec_index(i, j))
            cols.append(col)
            vals.append(val * (1.0 if i == j else sq2))

        # embedding S[[a,b]] blocks: S[i,j]=A[i,j], S[i,j+d]=-B[i,j],
        # S[i+d,j]=B[i,j], S[i+d,j+d]=A[i,j]; A symmetric, B antisymmetric.
        for k in range(d):  # diagonal coordinate k -> A[k,k]
            put(k, k, k, 1.0)
            put(k + d, k + d, k, 1.0)
        for idx, (i, j) in enumerate(zip(*self.iu)):
            col = d + idx  # real part -> A[i,j] = A[j,i]
            put(i, j, col, 1.0)
            put(i + d, j + d, col, 1.0)
            col_im = d + self.n_off + idx  # imag part -> B[i,j] = -B[j,i]
            put(i, j + d, col_im, -1.0)
            put(j, i + d, col_im, 1.0)
        return sp.csc_matrix((vals, (rows, cols)), shape=(self.n_svec, self.n))


_VEC_CACHE: dict = {}


def _vectorizer(d: int) -> _HermitianVectorizer:
    if d not in _VEC_CACHE:
        _VEC_CACHE[d] = _HermitianVectorizer(d)
    return _VEC_CACHE[d]


# ---------------------------------------------------------------------------
# specs and programs


FACE_TARGET_TOL = 1e-11
FACE_EIG_TOL = 1e-6


@dataclass
class DataConstraint:
    """Affine constraint sum_i Re tr(X_i op_i) = target over the blocks."""

    ops: list  # list of (block index, Hermitian operator)
    target: float


@dataclass
class FeasibleSetSpec:
    kind: str  # state | choi-cptp | chi-cptp | povm
    dim: int
    n_outcomes: int = None  # povm only
    constraints: list = field(default_factory=list)
    delta_eq: float = 0.0  # reserved slack; equalities are exact by default

    def add(self, ops, target: float):
        if isinstance(ops, np.ndarray):
            ops = [(0, ops)]
        self.constraints.append(DataConstraint(ops, float(target)))


def state_constraint(op: np.ndarray, target: float) -> DataConstraint:
    return DataConstraint([(0, np.asarray(op, dtype=complex))], float(target))


def povm_constraint(input_state: np.ndarray, outcome: int, target: float) -> DataConstraint:
    return DataConstraint([(outcome, np.asarray(input_state, dtype=complex))], float(target))


def constraint_row(spec: FeasibleSetSpec, setting, j: int):
    """Row of (block, op) pairs for outcome j of a measurement setting."""
    if spec.kind == "povm":
        return [(j, _mat(setting.input_state))]
    return [(0, _mat(setting.operators[j]))]


@dataclass
class ConicProgram:
    """Assembled conic description: block cone dims plus equality rows.

    ``face_bases`` holds an optional isometry W per block restricting that
    block to a face of its PSD cone (X = W Y W^dag); operators entering rows
    are conjugated by W at assembly.  block_dims are the reduced dims.
    """

    spec: FeasibleSetSpec
    block_dims: list
    eq_rows: list  # list of lists of (block, op)
    eq_targets: np.ndarray
    face_bases: list = None  # per block: full x reduced isometry, or None
    n_structural: int = 0  # leading eq_rows encoding the physical set itself
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_vars(self) -> int:
        return sum(d * d for d in self.block_dims)

    def col_offset(self, block: int) -> int:
        return sum(d * d for d in self.block_dims[:block])

    def _reduce_op(self, block: int, op: np.ndarray) -> np.ndarray:
        w = self.face_bases[block] if self.face_bases else None
        op = np.asarray(op, dtype=complex)
        return op if w is None else w.conj().T @ op @ w

    def assemble_row(self, pairs) -> np.ndarray:
        row = np.zeros(self.n_vars)
        for block, op in pairs:
            v = _vectorizer(self.block_dims[block])
            off = self.col_offset(block)
            row[off:off + v.n] += v.functional_row(self._reduce_op(block, op))
        return row

    def structure(self):
        """(A_eq dense, b_eq, A_psd csc, psd cones) with caching."""
        if "A_eq" not in self._cache:
            a_eq = np.array([self.assemble_row(r) for r in self.eq_rows]) \
                if self.eq_rows else np.zeros((0, self.n_vars))
            blocks = []
            for b, dim in enumerate(self.block_dims):
                v = _vectorizer(dim)
                left = sp.csc_matrix((v.n_svec, self.col_offset(b)))
                right = sp.csc_matrix(
                    (v.n_svec, self.n_vars - self.col_offset(b) - v.n))
                blocks.append(sp.hstack([left, -v._embed, right]))
            a_psd = sp.vstack(blocks).tocsc()
            cones = [clarabel.PSDTriangleConeT(_vectorizer(dm).embed_side)
                     for dm in self.block_dims]
            self._cache.update(A_eq=a_eq, A_psd=a_psd, psd_cones=cones)
        c = self._cache
        return c["A_eq"], self.eq_targets, c["A_psd"], c["psd_cones"]

    def extract_blocks(self, x: np.ndarray):
        out = []
        for b, dim in enumerate(self.block_dims):
            v = _vectorizer(dim)
            off = self.col_offset(b)
            y = v.from_coords(x[off:off + v.n])
            w = self.face_bases[b] if self.face_bases else None
            out.append(y if w is None else w @ y @ w.conj().T)
        return out


def compile_constraints(spec: FeasibleSetSpec) -> ConicProgram:
    """Translate a feasible-set spec into block cones and equality rows."""
    d = spec.dim
    rows, targets = [], []
    if spec.kind == "state":
        dims = [d]
        rows.append([(0, np.eye(d, dtype=complex))])
        targets.append(1.0)
    elif spec.kind in ("choi-cptp", "chi-cptp"):
        dims = [d * d]
        rows.append([(0, np.eye(d * d, dtype=complex))])
        targets.append(float(d))
        eye = np.eye(d, dtype=complex)
        for om in gell_mann_basis(d):
            op = np.kron(om, eye) if spec.kind == "choi-cptp" else np.kron(eye, om)
            rows.append([(0, op)])
            targets.append(0.0)
    elif spec.kind == "povm":
        if not spec.n_outcomes or spec.n_outcomes < 2:
            raise ValueError("povm spec needs n_outcomes >= 2")
        dims = [d] * spec.n_outcomes
        # completeness: sum_j tr(Pi_j E) = tr E over a Hermitian basis E
        basis = [np.eye(d, dtype=complex) / np.sqrt(d)] + gell_mann_basis(d)
        for e in basis:
            rows.append([(j, e) for j in range(spec.n_outcomes)])
            targets.append(np.trace(e).real)
    else:
        raise ValueError("unknown feasible-set kind %r" % spec.kind)

    # facial reduction: a constraint tr(X P) = 0 with P >= 0 forces X onto
    # the face supported on null(P).  Accumulate such constraints per block
    # and restrict the block variable to the joint null space; the reduced
    # problem is equivalent and strictly feasible where the full one is
    # degenerate.  Targets below FACE_TARGET_TOL count as zero.
    null_ops = [None] * len(dims)
    kept = []
    for con in spec.constraints:
        if len(con.ops) == 1 and abs(con.target) <= FACE_TARGET_TOL:
            b, op = con.ops[0]
            op = np.asarray(op, dtype=complex)
            herm = (op + op.conj().T) / 2
            if np.linalg.eigvalsh(herm)[0] >= -1e-10:
                null_ops[b] = herm if null_ops[b] is None else null_ops[b] + herm
                continue
        kept.append(con)
    faces = None
    if any(s is not None for s in null_ops):
        faces, red_dims = [], []
        for b, dim in enumerate(dims):
            s = null_ops[b]
            if s is None:
                faces.append(None)
                red_dims.append(dim)
                continue
            w, v = np.linalg.eigh(s)
            basis = v[:, w <= FACE_EIG_TOL * max(w[-1], 1.0)]
            if basis.shape[1] == 0:
                raise ValueError("zero-probability constraints leave no face")
            faces.append(None if basis.shape[1] == dim else basis)
            red_dims.append(basis.shape[1])
        dims = red_dims
    n_structural = len(rows)
    for con in kept:
        rows.append(con.ops)
        targets.append(con.target)
    return ConicProgram(spec, dims, rows, np.array(targets, dtype=float),
                        faces, n_structural)


def compile_consistent(spec: FeasibleSetSpec, backend=None) -> ConicProgram:
    """compile_constraints plus consistency restoration.

    Facial reduction treats near-zero targets as exact zeros, which can leave
    the remaining equality targets inconsistent with the face at the 1e-8
    level (a probability of 1e-16 hides an amplitude of 1e-8).  When the
    reduction fires, refit the data targets by least squares over the reduced
    physical set so the equality system is exactly solvable again; the
    adjustment is bounded by the amplitudes the reduction discarded.
    """
    program = compile_constraints(spec)
    if not program.face_bases:
        return program
    backend = backend or default_backend()
    # all equality rows become soft targets over the bare reduced cone;
    # structural rows (trace, trace preservation) are included because the
    # face itself is only accurate to the discarded amplitudes and can be
    # incompatible with them at the same level
    base = ConicProgram(spec, program.block_dims, [], np.zeros(0),
                        program.face_bases, 0)
    fit = backend.solve_least_squares(base, program.eq_rows, program.eq_targets)
    if fit.ok:
        fitted = [sum(np.trace(_mat(fit.blocks[b]) @ _mat(op)).real
                      for b, op in row) for row in program.eq_rows]
        program.eq_targets = np.asarray(fitted)
    return program


# ---------------------------------------------------------------------------
# solver backend


@dataclass
class SolveResult:
    status: str
    value: float
    blocks: list

    @property
    def ok(self) -> bool:
        return self.status in ("Solved", "AlmostSolved")


class ClarabelBackend:
    """Interior-point conic backend.  Instances are cheap and stateless
    between solves; do not share one instance across concurrent tasks."""

    def __init__(self, tol: float = 1e-9, max_iter: int = 200):
        self.tol = tol
        self.max_iter = max_iter

    def _settings(self, tol: float = None, reduced: float = 1e-6,
                  reg: float = None):
        tol = tol or self.tol
        s = clarabel.DefaultSettings()
        s.verbose = False
        s.max_iter = self.max_iter
        s.tol_gap_abs = tol
        s.tol_gap_rel = tol
        s.tol_feas = tol
        # fallback accuracy when progress stalls; tighter values make the
        # solver report NumericalError on points that are in fact fine
        s.reduced_tol_gap_abs = reduced
        s.reduced_tol_gap_rel = reduced
        s.reduced_tol_feas = reduced
        if reg is not None:
            s.static_regularization_constant = reg
        return s

    def _attempts(self):
        """Escalating settings ladder: accurate, then statically regularized,
        then loose stall acceptance.  Degenerate feasible sets (equalities
        pinning the variable to the cone boundary) occasionally need the
        later rungs; the returned point is still feasible to working
        precision, only the optimality certificate weakens."""
        return [self._settings(), self._settings(reg=1e-7),
                self._settings(reduced=5e-5)]

    def solve_linear(self, program: ConicProgram, objective) -> SolveResult:
        """Minimize sum_i Re tr(X_i G_i) over the program's feasible set.

        The objective is normalized before the solve (the solver's stopping
        criteria are scale sensitive); a failed solve is retried once at the
        reduced tolerance.
        """
        a_eq, b_eq, a_psd, psd_cones = program.structure()
        n = program.n_vars
        c = program.assemble_row(_as_pairs(objective))
        scale = np.linalg.norm(c)
        if scale > 0:
            c = c / scale
        else:
            scale = 1.0
        a = sp.vstack([sp.csc_matrix(a_eq), a_psd]).tocsc()
        b = np.concatenate([b_eq, np.zeros(a_psd.shape[0])])
        cones = ([clarabel.ZeroConeT(len(b_eq))] if len(b_eq) else []) + psd_cones
        for settings in self._attempts():
            solver = clarabel.DefaultSolver(
                sp.csc_matrix((n, n)), c, a, b, cones, settings)
            sol = solver.solve()
            status = str(sol.status)
            if status in ("Solved", "AlmostSolved"):
                break
        x = np.asarray(sol.x)
        return SolveResult(status, float(sol.obj_val) * scale,
                           program.extract_blocks(x))

    def solve_least_squares(self, program: ConicProgram, rows, targets) -> SolveResult:
        """Minimize || r(X) - targets ||_2 with r_i(X) = Re tr(X ops_i),
        through one second-order-cone extension of the program."""
        a_eq, b_eq, a_psd, psd_cones = program.structure()
        n = program.n_vars
        data = np.array([program.assemble_row(r) for r in rows])
        k = len(targets)
        # columns: [block coordinates, t]
        a_eq_ext = np.hstack([a_eq, np.zeros((a_eq.shape[0], 1))])
        soc = np.zeros((k + 1, n + 1))
        soc[0, n] = -1.0
        soc[1:, :n] = -data
        b_soc = np.concatenate([[0.0], -np.asarray(targets, dtype=float)])
        a_psd_ext = sp.hstack([a_psd, sp.csc_matrix((a_psd.shape[0], 1))])
        a = sp.vstack([sp.csc_matrix(a_eq_ext), sp.csc_matrix(soc), a_psd_ext]).tocsc()
        b = np.concatenate([b_eq, b_soc, np.zeros(a_psd.shape[0])])
        cones = ([clarabel.ZeroConeT(len(b_eq))] if len(b_eq) else []) \
            + [clarabel.SecondOrderConeT(k + 1)] + psd_cones
        c = np.zeros(n + 1)
        c[n] = 1.0
        for settings in self._attempts():
            solver = clarabel.DefaultSolver(
                sp.csc_matrix((n + 1, n + 1)), c, a, b, cones, settings)
            sol = solver.solve()
            status = str(sol.status)
            if status in ("Solved", "AlmostSolved"):
                break
        x = np.asarray(sol.x)
        return SolveResult(status, float(sol.obj_val),
                           program.extract_blocks(x[:n]))


def _as_pairs(objective):
    if isinstance(objective, np.ndarray):
        return [(0, objective)]
    return list(objective)


_DEFAULT_BACKEND = None


def default_backend() -> ClarabelBackend:
    global _DEFAULT_BACKEND
    if _DEFAULT_BACKEND is None:
        _DEFAULT_BACKEND = ClarabelBackend()
    return _DEFAULT_BACKEND


# ---------------------------------------------------------------------------
# witnesses


@dataclass
class WitnessFunctional:
    """Frozen strictly variation-sensitive linear functional.  For state-like
    kinds a single full-rank operator Z; for the povm kind one full-rank
    operator per outcome (itself a POVM)."""

    kind: str
    operators: list

    def objective_pairs(self):
        return [(i, z) for i, z in enumerate(self.operators)]

    def value(self, blocks) -> float:
        return float(sum(np.trace(_mat(b) @ z).real
                         for b, z in zip(blocks, self.operators)))


def random_witness(kind: str, d: int, n_outcomes: int = None, rng: Rng = None) -> WitnessFunctional:
    """Full-rank witness bounded away from the trivial and rank-deficient
    pathologies: every eigenvalue in [1e-3, 1) of its natural scale and the
    operator distinct from the maximally mixed one."""
    rng = rng or Rng(0)
    if kind in ("state", "choi-cptp", "chi-cptp"):
        n = d if kind == "state" else d * d
        for _ in range(100):
            base = random_rank_r_state(n, n, rng).matrix
            z = 0.5 * base + 0.5 * np.eye(n) / n
            w = np.linalg.eigvalsh(z)
            if w[0] >= 1e-3 and np.max(np.abs(z - np.eye(n) / n)) > 1e-3:
                return WitnessFunctional(kind, [z])
        raise RuntimeError("witness sampling failed")
    if kind == "povm":
        for _ in range(100):
            povm = random_rank_r_povm(d, d, n_outcomes, rng)
            zs = [0.7 * p + 0.3 * np.eye(d) / n_outcomes for p in povm.outcomes]
            if all(np.linalg.eigvalsh(z)[0] >= 1e-3 for z in zs):
                return WitnessFunctional(kind, zs)
        raise RuntimeError("witness sampling failed")
    raise ValueError("unknown witness kind %r" % kind)


# ---------------------------------------------------------------------------
# certification


@dataclass
class IccResult:
    f_max: float
    f_min: float
    s_cvx_raw: float
    s_cvx_norm: float
    witness_max: list
    witness_min: list
    status_max: str
    status_min: str

    @property
    def ok(self) -> bool:
        return (self.status_max in ("Solved", "AlmostSolved")
                and self.status_min in ("Solved", "AlmostSolved"))

    def certified(self, epsilon: float) -> bool:
        return self.ok and self.s_cvx_norm < epsilon


def icc(spec: FeasibleSetSpec, witness: WitnessFunctional, backend=None,
        normalizer: float = None, program: ConicProgram = None) -> IccResult:
    """Maximize and minimize the witness functional over the feasible set.

    ``normalizer`` divides the raw gap (schemes pass their first-iteration
    raw gap); standalone calls report norm = raw.
    """
    backend = backend or default_backend()
    program = program or compile_constraints(spec)
    pairs = witness.objective_pairs()
    neg = [(i, -z) for i, z in pairs]
    res_max = backend.solve_linear(program, neg)
    res_min = backend.solve_linear(program, pairs)
    f_max = -res_max.value
    f_min = res_min.value
    raw = max(f_max - f_min, 0.0)
    norm = raw / normalizer if normalizer else raw
    return IccResult(f_max, f_min, raw, norm, res_max.blocks, res_min.blocks,
                     res_max.status, res_min.status)


# ---------------------------------------------------------------------------
# minimum-entropy estimator


def min_entropy_estimator(spec: FeasibleSetSpec, restarts: int = 3,
                          max_iters: int = 60, rng: Rng = None, backend=None,
                          program: ConicProgram = None) -> np.ndarray:
    """Local minimizer of the von Neumann entropy over the feasible set.

    The concave objective is minimized by iterative linearization: repeat
    conic solves minimizing tr(X G_k) with G_k = -(log X_k + I) at the
    previous iterate until the entropy decrease falls below 1e-9, best over
    seeded restarts.  For chi/choi kinds the entropy of X/d is used.
    """
    if spec.kind == "povm":
        raise ValueError("entropy minimization is defined for single-block kinds")
    backend = backend or default_backend()
    program = program or compile_constraints(spec)
    rng = rng or Rng(0)
    n = spec.dim if spec.kind == "state" else spec.dim * spec.dim
    scale = 1.0 if spec.kind == "state" else float(spec.dim)

    def entropy(x):
        w = np.linalg.eigvalsh(x) / scale
        w = w[w > 1e-14]
        return float(-np.sum(w * np.log(w)))

    best, best_s = None, np.inf
    for _ in range(max(restarts, 1)):
        g0 = rng.complex_normal((n, n))
        g0 = g0 + g0.conj().T
        res = backend.solve_linear(program, [(0, g0)])
        if not res.ok:
            continue
        x = res.blocks[0]
        s_prev = entropy(x)
        for _ in range(max_iters):
            w, v = np.linalg.eigh((x + x.conj().T) / 2)
            # concavity of S makes each linearized solve a guaranteed descent
            g = -(v * (np.log(np.clip(w / scale, 1e-12, None)) + 1.0)) @ v.conj().T
            res = backend.solve_linear(program, [(0, g)])
            if not res.ok:
                break
            x_new = res.blocks[0]
            s_new = entropy(x_new)
            if s_new <= s_prev:
                x = x_new
            if s_prev - s_new < 1e-9:
                s_prev = min(s_prev, s_new)
                break
            s_prev = s_new
        if s_prev < best_s:
            best, best_s = x, s_prev
    if best is None:
        # all restarts stalled; any feasible point is better than failing
        res = backend.solve_linear(program, [(0, np.zeros((n, n)))])
        if not res.ok:
            raise RuntimeError("entropy minimization found no feasible point")
        best = res.blocks[0]
    return best
