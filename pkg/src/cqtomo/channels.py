"""Choi, chi, and Kraus representations of quantum processes and their
interconversions.

Conventions, fixed throughout:

* Choi operator rho_Phi = (I (x) Phi)[|ME> d <ME|], trace d, with the input
  factor first; trace preservation reads ptr_2(rho_Phi) = I.
* chi operator in the elementary basis Gamma_l = |j><k| with l = j d + k;
  trace preservation reads ptr_1(chi) = I (chi viewed as a d (x) d object).
* Both carry trace d and are unitarily equivalent through the permutation
  U = sum_l |e_l><l|, |e_l> = (I (x) Gamma_l)|ME> sqrt(d).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qcore import (
    InvalidDimension,
    InvariantViolation,
    Rng,
    _check_hermitian,
    _check_psd,
    _mat,
    fix_eigenvector_phases,
    partial_trace,
)

TP_TOL = 1e-9


@dataclass
class KrausSet:
    dim: int
    operators: list
    trace_preserving: bool = True

    def __post_init__(self):
        self.operators = [np.asarray(k, dtype=complex) for k in self.operators]
        for k in self.operators:
            if k.shape != (self.dim, self.dim):
                raise InvalidDimension("Kraus operator has wrong shape")
        if self.trace_preserving:
            s = sum(k.conj().T @ k for k in self.operators)
            if np.max(np.abs(s - np.eye(self.dim))) > TP_TOL:
                raise InvariantViolation("Kraus operators are not trace preserving")

    def apply(self, rho) -> np.ndarray:
        m = _mat(rho)
        return sum(k @ m @ k.conj().T for k in self.operators)


@dataclass
class ChoiOperator:
    dim: int
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        d = self.dim
        if self.matrix.shape != (d * d, d * d):
            raise InvalidDimension("Choi operator must be d^2 x d^2")
        _check_hermitian(self.matrix, 1e-9)
        _check_psd(self.matrix, 1e-8)
        marg = partial_trace(self.matrix, d, d, which=2)
        if np.max(np.abs(marg - np.eye(d))) > TP_TOL:
            raise InvariantViolation("Choi operator violates trace preservation")


@dataclass
class ChiOperator:
    dim: int
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        d = self.dim
        if self.matrix.shape != (d * d, d * d):
            raise InvalidDimension("chi operator must be d^2 x d^2")
        _check_hermitian(self.matrix, 1e-9)
        _check_psd(self.matrix, 1e-8)
        marg = partial_trace(self.matrix, d, d, which=1)
        if np.max(np.abs(marg - np.eye(d))) > TP_TOL:
            raise InvariantViolation("chi operator violates trace preservation")


def elementary_operator_basis(d: int) -> list:
    """Gamma_l = |j><k| with l = j d + k."""
    eye = np.eye(d, dtype=complex)
    return [np.outer(eye[:, j], eye[:, k].conj()) for j in range(d) for k in range(d)]


def maximally_entangled_ket(d: int) -> np.ndarray:
    if d < 2:
        raise InvalidDimension("need d >= 2")
    v = np.zeros(d * d, dtype=complex)
    for j in range(d):
        v[j * d + j] = 1.0
    return v / np.sqrt(d)


def kraus_to_choi(kraus: KrausSet) -> ChoiOperator:
    d = kraus.dim
    choi = np.zeros((d * d, d * d), dtype=complex)
    for k in kraus.operators:
        # (I (x) K)|ME> d <ME|(I (x) K^dag) summed over K: columns of K land
        # in the output slot of each |j>|.> block.
        v = k.T.reshape(d * d)  # component (j*d + a) = K[a, j]
        choi += np.outer(v, v.conj())
    return ChoiOperator(d, choi)


def kraus_to_chi(kraus: KrausSet) -> ChiOperator:
    d = kraus.dim
    chi = np.zeros((d * d, d * d), dtype=complex)
    for k in kraus.operators:
        gamma = k.reshape(d * d)  # gamma_l = tr(Gamma_l^dag K) = K[j, k], l = j d + k
        chi += np.outer(gamma, gamma.conj())
    return ChiOperator(d, chi)


def chi_choi_transform_unitary(d: int) -> np.ndarray:
    """Permutation U with rho_Phi = U chi U^dag for the elementary basis."""
    u = np.zeros((d * d, d * d))
    for j in range(d):
        for k in range(d):
            l = j * d + k
            u[k * d + j, l] = 1.0  # |e_l> = |k>|j> for Gamma_l = |j><k|
    return u.astype(complex)


def chi_to_choi(chi: ChiOperator) -> ChoiOperator:
    u = chi_choi_transform_unitary(chi.dim)
    return ChoiOperator(chi.dim, u @ chi.matrix @ u.conj().T)


def choi_to_chi(choi: ChoiOperator) -> ChiOperator:
    u = chi_choi_transform_unitary(choi.dim)
    return ChiOperator(choi.dim, u.conj().T @ choi.matrix @ u)


def apply_channel_choi(choi: ChoiOperator, rho_in) -> np.ndarray:
    """rho_out = ptr_1(rho_Phi (rho_in^T (x) I))."""
    d = choi.dim
    m = _mat(rho_in)
    if m.shape != (d, d):
        raise InvalidDimension("input state dimension mismatch")
    return partial_trace(choi.matrix @ np.kron(m.T, np.eye(d)), d, d, which=1)


def depolarizing_channel(p1: float, p2: float, p3: float) -> KrausSet:
    """Single-qubit channel with Kraus operators sqrt(p_i) sigma_i and
    sqrt(1 - p1 - p2 - p3) I."""
    if min(p1, p2, p3) < 0 or p1 + p2 + p3 > 1:
        raise ValueError("probabilities must be nonnegative and sum to at most 1")
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
    sz = np.array([[1, 0], [0, -1]], dtype=complex)
    eye = np.eye(2, dtype=complex)
    ops = [
        np.sqrt(p1) * sx,
        np.sqrt(p2) * sy,
        np.sqrt(p3) * sz,
        np.sqrt(1 - p1 - p2 - p3) * eye,
    ]
    return KrausSet(2, ops)


def random_rank_r_process(d: int, r: int, rng: Rng) -> KrausSet:
    """Rank-r channel from r Gaussian matrices M_m whitened by
    S^{-1/2} with S = sum_m M_m^dag M_m (r = 1 gives a Haar-like unitary)."""
    if not 1 <= r <= d * d:
        raise InvalidDimension("need 1 <= r <= d^2")
    ms = [rng.complex_normal((d, d)) for _ in range(r)]
    s = sum(m.conj().T @ m for m in ms)
    w, v = np.linalg.eigh(s)
    s_isqrt = (v / np.sqrt(w)) @ v.conj().T
    return KrausSet(d, [m @ s_isqrt for m in ms])


def rotated_diagonal_probability(chi: ChiOperator, u: np.ndarray, kappa: int) -> float:
    """p = <kappa| U^dag chi U |kappa> / d for a computational-basis index."""
    d2 = chi.dim * chi.dim
    if not 0 <= kappa < d2:
        raise IndexError("kappa out of range")
    col = np.asarray(u, dtype=complex)[:, kappa]
    val = (col.conj() @ chi.matrix @ col).real / chi.dim
    return float(val)


def sv_probe_pair(gamma_prime: np.ndarray):
    """Largest-singular-component probe: for Gamma' = sum |b_m> s_m <a_m|
    (s descending) return the input projector |a_1><a_1| and output projector
    |b_1><b_1|.  Phases are fixed deterministically (projectors are
    phase-free; the fix keeps the underlying vectors reproducible)."""
    g = np.asarray(gamma_prime, dtype=complex)
    if np.max(np.abs(g)) == 0.0:
        raise ValueError("zero matrix has no singular probe")
    u, s, vh = np.linalg.svd(g)
    b = fix_eigenvector_phases(u[:, :1])[:, 0]
    a = fix_eigenvector_phases(vh.conj().T[:, :1])[:, 0]
    return np.outer(a, a.conj()), np.outer(b, b.conj())
