"""Rank-r reward matrices, their spectral summaries and the synthetic generators."""
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import RankMismatch
from .rng import as_generator

RANK_TOL = 1e-8


def fix_signs(U, V):
    """Flip singular-vector pairs so the largest-magnitude entry of each column of U is positive."""
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, V * signs


def two_to_inf(A):
    """Largest row l2-norm of ``A``."""
    A = np.asarray(A)
    if A.size == 0:
        return 0.0
    return float(np.sqrt(np.max(np.sum(A * A, axis=1))))


@dataclass(frozen=True)
class SpectralSummary:
    mu: float
    mu_U: float
    mu_V: float
    kappa: float
    max_norm: float
    sigma1: float
    sigma_r: float
    L: float


@dataclass(frozen=True, eq=False)
class LowRankMatrix:
    """An exactly rank-``r`` matrix ``entries = U diag(singular_values) V^T``.

    ``U_perp`` and ``V_perp`` complete the singular vectors to orthonormal
    bases; they come from the trailing vectors of the full SVD.
    """

    entries: np.ndarray
    rank: int
    U: np.ndarray
    V: np.ndarray
    singular_values: np.ndarray
    U_perp: np.ndarray
    V_perp: np.ndarray

    @property
    def shape(self):
        return self.entries.shape

    @property
    def m(self):
        return self.entries.shape[0]

    @property
    def n(self):
        return self.entries.shape[1]

    @property
    def max_norm(self):
        return float(np.max(np.abs(self.entries)))

    @property
    def sigma1(self):
        return float(self.singular_values[0])

    @property
    def sigma_r(self):
        return float(self.singular_values[-1])

    @property
    def kappa(self):
        return self.sigma1 / self.sigma_r

    @cached_property
    def mu(self):
        return spectral_summary(self).mu

    def summary(self, sigma_noise=0.0):
        return spectral_summary(self, sigma_noise)

    def reconstruct(self):
        return (self.U * self.singular_values) @ self.V.T


def from_entries(entries, rank):
    """Factor ``entries`` by a full SVD truncated to ``rank``.

    Raises
    ------
    RankMismatch
        If ``sigma_{rank+1} > 1e-8 sigma_1`` or ``sigma_rank <= 1e-8 sigma_1``.
    """
    entries = np.array(entries, dtype=np.float64)
    if entries.ndim != 2:
        raise ValueError("entries must be a matrix")
    m, n = entries.shape
    rank = int(rank)
    if not 1 <= rank <= min(m, n):
        raise RankMismatch(f"rank must lie in [1, {min(m, n)}], got {rank}")
    U_full, s, Vt_full = np.linalg.svd(entries, full_matrices=True)
    if s[0] == 0:
        raise RankMismatch("matrix is identically zero")
    if rank < len(s) and s[rank] > RANK_TOL * s[0]:
        raise RankMismatch(
            f"singular value {rank + 1} is {s[rank]:.3e} > {RANK_TOL:g} * sigma_1; "
            f"matrix has rank above {rank}"
        )
    if s[rank - 1] <= RANK_TOL * s[0]:
        raise RankMismatch(f"matrix has rank below {rank}")
    V_full = Vt_full.T
    U, V = fix_signs(U_full[:, :rank], V_full[:, :rank])
    entries.setflags(write=False)
    return LowRankMatrix(
        entries=entries,
        rank=rank,
        U=U,
        V=V,
        singular_values=s[:rank].copy(),
        U_perp=U_full[:, rank:],
        V_perp=V_full[:, rank:],
    )


def spectral_summary(M, sigma_noise=0.0):
    m, n, r = M.m, M.n, M.rank
    mu_U = np.sqrt(m / r) * two_to_inf(M.U)
    mu_V = np.sqrt(n / r) * two_to_inf(M.V)
    max_norm = M.max_norm
    return SpectralSummary(
        mu=float(max(mu_U, mu_V)),
        mu_U=float(mu_U),
        mu_V=float(mu_V),
        kappa=M.kappa,
        max_norm=max_norm,
        sigma1=M.sigma1,
        sigma_r=M.sigma_r,
        L=float(max(max_norm, sigma_noise)),
    )


def _diag_dominant(rng, k):
    A = rng.uniform(0.0, 1.0, size=(k, k))
    # row sum includes the sampled diagonal entry
    A[np.diag_indices(k)] = A.sum(axis=1)
    return A


def gen_pdq(m, n, r, seed=None):
    """Random rank-``r`` matrix ``P D Q`` with diagonally dominant uniform ``P``, ``Q``.

    ``P`` is drawn before ``Q`` from the same stream.
    """
    if not 1 <= r <= min(m, n):
        raise ValueError(f"need 1 <= r <= min(m, n), got r={r}")
    rng = as_generator(seed)
    P = _diag_dominant(rng, m)
    Q = _diag_dominant(rng, n)
    # P D Q keeps the first r columns of P and the first r rows of Q
    return from_entries(P[:, :r] @ Q[:r, :], r)


def gen_all_ones(m, n):
    return from_entries(np.ones((m, n)), 1)
