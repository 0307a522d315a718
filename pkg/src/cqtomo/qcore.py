"""Complex linear algebra over quantum objects, seeded random generators, and
closed-form benchmark counts.

All matrices are numpy complex arrays.  The thin dataclasses below carry the
physicality invariants (Hermiticity, positivity, completeness) and raise
``InvariantViolation`` when they are broken beyond the module tolerances.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from math import ceil, log

import numpy as np

HERM_TOL = 1e-12
PSD_TOL = 1e-10
TRACE_TOL = 1e-10
UNITARY_TOL = 1e-10
RANK_REL_THRESHOLD = 1e-10


class InvariantViolation(ValueError):
    """A quantum object failed one of its physicality invariants."""


class InvalidDimension(ValueError):
    pass


class InvalidRank(ValueError):
    pass


class ConstructionFailure(RuntimeError):
    """A randomized or closed-form construction could not be completed."""


# ---------------------------------------------------------------------------
# randomness


@dataclass
class Rng:
    """Deterministic random stream.  Same seed, same stream.

    Backed by numpy's PCG64; ``child`` derives independent streams through
    SeedSequence spawn keys so that forked streams never perturb the parent.
    """

    seed: int
    algorithm: str = "pcg64"

    def __post_init__(self):
        self._gen = np.random.default_rng(np.random.SeedSequence(self.seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, *key) -> "Rng":
        # crc32 rather than hash(): stable across processes and sessions
        spawn = tuple(zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in key)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=spawn)
        words = ss.generate_state(2)
        return Rng(int(words[0]) << 32 | int(words[1]))

    def normal(self, shape):
        return self._gen.normal(size=shape)

    def complex_normal(self, shape):
        """Entries with i.i.d. standard-normal real and imaginary parts."""
        return self._gen.normal(size=shape) + 1j * self._gen.normal(size=shape)

    def multinomial(self, n, pvals):
        return self._gen.multinomial(n, pvals)


# ---------------------------------------------------------------------------
# domain types


def _check_hermitian(m: np.ndarray, tol: float = HERM_TOL):
    if np.max(np.abs(m - m.conj().T)) > tol:
        raise InvariantViolation("matrix is not Hermitian within %g" % tol)


def _check_psd(m: np.ndarray, tol: float = PSD_TOL):
    w = np.linalg.eigvalsh(m)
    if w[0] < -tol:
        raise InvariantViolation("matrix has eigenvalue %g below -%g" % (w[0], tol))


@dataclass
class DensityMatrix:
    dim: int
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        if self.dim < 1 or self.matrix.shape != (self.dim, self.dim):
            raise InvalidDimension("density matrix must be %d x %d" % (self.dim, self.dim))
        _check_hermitian(self.matrix)
        _check_psd(self.matrix)
        if abs(np.trace(self.matrix).real - 1.0) > TRACE_TOL:
            raise InvariantViolation("trace differs from 1 by more than %g" % TRACE_TOL)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "DensityMatrix":
        m = np.asarray(m, dtype=complex)
        return cls(m.shape[0], m)

    def numerical_rank(self, rel_threshold: float = RANK_REL_THRESHOLD) -> int:
        return numerical_rank(self.matrix, rel_threshold)


@dataclass
class Povm:
    dim: int
    outcomes: list

    def __post_init__(self):
        self.outcomes = [np.asarray(p, dtype=complex) for p in self.outcomes]
        total = np.zeros((self.dim, self.dim), dtype=complex)
        for p in self.outcomes:
            if p.shape != (self.dim, self.dim):
                raise InvalidDimension("POVM outcome has wrong shape")
            _check_hermitian(p)
            _check_psd(p)
            total += p
        if np.max(np.abs(total - np.eye(self.dim))) > TRACE_TOL:
            raise InvariantViolation("POVM outcomes do not sum to the identity")

    def __len__(self):
        return len(self.outcomes)


@dataclass
class UnitaryMatrix:
    dim: int
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        if self.dim < 1 or self.matrix.shape != (self.dim, self.dim):
            raise InvalidDimension("unitary must be %d x %d" % (self.dim, self.dim))
        dev = np.max(np.abs(self.matrix.conj().T @ self.matrix - np.eye(self.dim)))
        if dev > UNITARY_TOL:
            raise InvariantViolation("U^dag U deviates from identity by %g" % dev)


@dataclass
class BasisSet:
    """Ordered collection of orthonormal measurement bases (one unitary each).

    ``locality`` is either the string 'entangled' or a tuple of local
    dimensions whose product equals ``dim``; product-tagged sets carry the
    per-basis local factors in ``local_factors``.
    """

    dim: int
    bases: list
    locality: object = "entangled"
    local_factors: list = field(default_factory=list)

    def __post_init__(self):
        self.bases = [np.asarray(u, dtype=complex) for u in self.bases]
        for u in self.bases:
            UnitaryMatrix(self.dim, u)
        if self.locality != "entangled":
            dims = tuple(self.locality)
            if int(np.prod(dims)) != self.dim:
                raise InvalidDimension("local dims %r do not factor %d" % (dims, self.dim))
            for u, factors in zip(self.bases, self.local_factors):
                prod = factors[0]
                for f in factors[1:]:
                    prod = np.kron(prod, f)
                if np.max(np.abs(prod - u)) > UNITARY_TOL:
                    raise InvariantViolation("product-tagged basis does not factor")

    def append(self, u: np.ndarray, factors=None):
        UnitaryMatrix(self.dim, np.asarray(u, dtype=complex))
        self.bases.append(np.asarray(u, dtype=complex))
        if self.locality != "entangled":
            self.local_factors.append(factors)

    def __len__(self):
        return len(self.bases)


# ---------------------------------------------------------------------------
# helpers


def _mat(x) -> np.ndarray:
    return np.asarray(getattr(x, "matrix", x), dtype=complex)


def numerical_rank(m: np.ndarray, rel_threshold: float = RANK_REL_THRESHOLD) -> int:
    """Eigenvalues above rel_threshold * (largest eigenvalue) count toward rank."""
    w = np.linalg.eigvalsh(_mat(m))
    top = np.max(np.abs(w))
    if top == 0.0:
        return 0
    return int(np.sum(w > rel_threshold * top))


def fix_eigenvector_phases(v: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Rotate each column so its first nonzero amplitude is real positive."""
    v = np.array(v, dtype=complex)
    for k in range(v.shape[1]):
        col = v[:, k]
        nz = np.flatnonzero(np.abs(col) > tol)
        if len(nz):
            v[:, k] = col * (np.abs(col[nz[0]]) / col[nz[0]])
    return v


def eigh_descending(m: np.ndarray):
    """Hermitian eigendecomposition, eigenvalues descending, deterministic phases."""
    w, v = np.linalg.eigh(_mat(m))
    order = np.argsort(w)[::-1]
    return w[order], fix_eigenvector_phases(v[:, order])


# ---------------------------------------------------------------------------
# random generators


def haar_unitary(d: int, rng: Rng) -> UnitaryMatrix:
    """Haar-distributed unitary via QR of a complex Gaussian matrix.

    The R-diagonal phase correction L = diag(R) / |diag(R)| makes the
    distribution exactly Haar rather than QR-convention dependent.
    """
    if d < 1:
        raise InvalidDimension("d must be >= 1")
    a = rng.complex_normal((d, d))
    q, r = np.linalg.qr(a)
    diag = np.diagonal(r)
    l = diag / np.abs(diag)
    return UnitaryMatrix(d, q * l[np.newaxis, :])


def random_pure_state(d: int, rng: Rng) -> np.ndarray:
    """Haar-random unit ket of dimension d."""
    v = rng.complex_normal(d)
    return v / np.linalg.norm(v)


def random_rank_r_state(d: int, r: int, rng: Rng) -> DensityMatrix:
    """rho = M^dag M / tr(M^dag M) for an r x d complex Gaussian M."""
    if not 1 <= r <= d:
        raise InvalidRank("need 1 <= r <= d")
    m = rng.complex_normal((r, d))
    g = m.conj().T @ m
    return DensityMatrix(d, g / np.trace(g).real)


def random_rank_r_povm(d: int, r: int, n_outcomes: int, rng: Rng, max_retries: int = 5) -> Povm:
    """POVM with outcomes S^{-1/2} M_m^dag M_m S^{-1/2}, S = sum_m M_m^dag M_m."""
    if n_outcomes < 2:
        raise InvalidDimension("need at least 2 outcomes")
    if not 1 <= r <= d:
        raise InvalidRank("need 1 <= r <= d")
    for _ in range(max_retries + 1):
        ms = [rng.complex_normal((r, d)) for _ in range(n_outcomes)]
        s = sum(m.conj().T @ m for m in ms)
        w, v = np.linalg.eigh(s)
        if w[0] < 1e-12 * w[-1]:
            continue
        s_isqrt = (v / np.sqrt(w)) @ v.conj().T
        outs = [s_isqrt @ m.conj().T @ m @ s_isqrt for m in ms]
        outs = [(p + p.conj().T) / 2 for p in outs]
        return Povm(d, outs)
    raise ConstructionFailure("normalization matrix singular after retries")


# ---------------------------------------------------------------------------
# functionals


def fidelity(rho, sigma) -> float:
    """Uhlmann fidelity F = (tr sqrt(sqrt(rho) sigma sqrt(rho)))^2."""
    a, b = _mat(rho), _mat(sigma)
    if a.shape != b.shape:
        raise InvalidDimension("fidelity requires equal dimensions")
    w, v = np.linalg.eigh(a)
    w = np.clip(w, 0.0, None)
    sq = (v * np.sqrt(w)) @ v.conj().T
    inner = sq @ b @ sq
    ew = np.linalg.eigvalsh((inner + inner.conj().T) / 2)
    f = np.sum(np.sqrt(np.clip(ew, 0.0, None))) ** 2
    return float(min(max(f, 0.0), 1.0))


def trace_distance(rho, sigma) -> float:
    w = np.linalg.eigvalsh(_mat(rho) - _mat(sigma))
    return float(0.5 * np.sum(np.abs(w)))


def von_neumann_entropy(rho, eig_floor: float = 1e-14) -> float:
    """S(rho) = -tr(rho log rho), natural log; eigenvalues below the floor
    contribute zero (0 log 0 := 0)."""
    w = np.linalg.eigvalsh(_mat(rho))
    w = w[w > eig_floor]
    return float(-np.sum(w * np.log(w)))


def partial_trace(op, d1: int, d2: int, which: int) -> np.ndarray:
    """Partial trace of a (d1*d2) x (d1*d2) operator over factor 1 or 2."""
    m = _mat(op)
    if m.shape != (d1 * d2, d1 * d2):
        raise InvalidDimension("operator dimension does not factor as %d*%d" % (d1, d2))
    t = m.reshape(d1, d2, d1, d2)
    if which == 1:
        return np.einsum("ijik->jk", t)
    if which == 2:
        return np.einsum("ijkj->ik", t)
    raise ValueError("which must be 1 or 2")


def born_probabilities(rho, measurement) -> np.ndarray:
    """Born-rule probabilities tr(rho Pi_j) for a Povm, a basis unitary, or a
    list of outcome operators.  Tiny negative round-off is clipped to zero."""
    m = _mat(rho)
    if isinstance(measurement, Povm):
        ops = measurement.outcomes
    elif isinstance(measurement, (UnitaryMatrix, np.ndarray)):
        u = _mat(measurement)
        if u.shape != m.shape:
            raise InvalidDimension("basis dimension mismatch")
        p = np.real(np.einsum("ij,jk,ki->i", u.conj().T, m, u))
        return _clip_probs(p)
    else:
        ops = [np.asarray(o, dtype=complex) for o in measurement]
    if ops[0].shape != m.shape:
        raise InvalidDimension("measurement dimension mismatch")
    p = np.array([np.trace(m @ o).real for o in ops])
    return _clip_probs(p)


def _clip_probs(p: np.ndarray) -> np.ndarray:
    if np.min(p) < -1e-10:
        raise InvariantViolation("probability below -1e-10: %g" % np.min(p))
    return np.clip(p, 0.0, None)


# ---------------------------------------------------------------------------
# closed-form benchmark counts


def rank_r_parameter_count(d: int, r: int) -> int:
    """Independent real parameters of a rank-r state: (2d - r) r - 1."""
    if not 1 <= r <= d:
        raise InvalidRank("need 1 <= r <= d")
    return (2 * d - r) * r - 1


def kw_bound(d: int, r: int) -> float:
    """Sufficient basis count [4 r (d - r) - 2] / (d - 1) for rank-r recovery
    with generic bases; only meaningful for r <= d/2."""
    if r > d / 2:
        raise InvalidRank("bound applies only for r <= d/2")
    return (4 * r * (d - r) - 2) / (d - 1)


def k0_bound(d: int, r: int) -> int:
    """Basis count 1 + ceil((r^2 - r)/(d - 1)) at which the state-space
    boundary forces uniqueness once the eigenbasis is among the measured ones.

    The denominator is the Hilbert-space dimension minus one: each extra basis
    contributes d - 1 independent constraints on the r^2 - r free off-diagonal
    support parameters.
    """
    if d < 2:
        raise InvalidDimension("need d >= 2")
    if not 1 <= r <= d:
        raise InvalidRank("need 1 <= r <= d")
    return 1 + ceil((r * r - r) / (d - 1))


def phase_retrieval_lic(d: int, r: int) -> int:
    """Minimal IC input-state count for rank-r phase retrieval.

    (4dr - 4r^2) on the branch r <= ceil(d/2), d^2 strictly above it; the
    step at r = ceil(d/2) is resolved so exactly one branch fires.
    """
    if not 1 <= r <= d:
        raise InvalidRank("need 1 <= r <= d")
    half = ceil(d / 2)
    if half - r >= 0:
        return 4 * d * r - 4 * r * r
    return d * d


def bkd_input_kets(d: int) -> list:
    """The d structured probe kets |0> and (|0> + |l>)/sqrt(2), l >= 1."""
    if d < 2:
        raise InvalidDimension("need d >= 2")
    kets = [np.eye(d, dtype=complex)[:, 0]]
    for l in range(1, d):
        v = np.zeros(d, dtype=complex)
        v[0] = v[l] = 1 / np.sqrt(2)
        kets.append(v)
    return kets


def bkd_projective_mic(d: int) -> int:
    """Outcome count 2 d^2 - d of the projective unitary-process benchmark
    (companion input-state count is d)."""
    if d < 2:
        raise InvalidDimension("need d >= 2")
    return 2 * d * d - d


def bf_povm(d: int, r: int) -> Povm:
    """Element-probing POVM with (2d - r) r + 1 outcomes for rank bound r.

    The non-closing outcomes are the r diagonal projectors and, for each pair
    (l, m) with l < r <= m < d or l < m < r, the two unit-trace-3 probes
    I + |l><m| + |m><l| and I - i|l><m| + i|m><l|.  All of them share one
    scale factor c, the largest value <= 1/(2d) keeping the closing outcome
    I - c * (sum) positive, located by bisection.
    """
    if not 1 <= r <= d:
        raise InvalidRank("need 1 <= r <= d")
    eye = np.eye(d, dtype=complex)
    raw = []
    for l in range(r):
        raw.append(np.outer(eye[:, l], eye[:, l].conj()))
    for l in range(r):
        for m in range(l + 1, d):
            x = np.zeros((d, d), dtype=complex)
            x[l, m] = x[m, l] = 1.0
            raw.append(eye + x)
            y = np.zeros((d, d), dtype=complex)
            y[l, m] = -1j
            y[m, l] = 1j
            raw.append(eye + y)
    total = sum(raw)
    lo, hi = 0.0, 1.0 / (2 * d)
    for _ in range(200):
        mid = (lo + hi) / 2
        if np.linalg.eigvalsh(eye - mid * total)[0] >= 0.0:
            lo = mid
        else:
            hi = mid
    c = lo
    closing = eye - c * total
    if np.linalg.eigvalsh(closing)[0] < -PSD_TOL or c <= 0.0:
        raise ConstructionFailure("no positive scaling found for the closing outcome")
    outcomes = [c * p for p in raw] + [closing]
    return Povm(d, outcomes)
