"""Reformulation of the low-rank bandit as a misspecified linear bandit.

Feature vectors stack three column-major vectorisations::

    phi[i, j] = [vec(U^T e_i e_j^T V); vec(U^T e_i e_j^T V_perp); vec(U_perp^T e_i e_j^T V)]

of dimension ``d = r(m + n) - r^2``.  The same convention is used for the
parameter blocks, so ``phi[i, j] @ theta`` reproduces the projected entry.
Cells are ordered row-major, cell ``(i, j)`` being row ``i * n + j``.
"""
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_pairs
from .exceptions import DimensionMismatch
from .lowrank import LowRankMatrix
from .spectral import SpectralEstimator, SubspaceEstimate, d_two_to_inf

DENSE_BUDGET = 200_000_000


def vec(A):
    return np.asarray(A).ravel(order="F")


class SubspaceFeatures:
    """Feature map built from a pair of orthonormal bases and their completions.

    Only the bases enter here; parameters and misspecification need the true
    matrix and are produced separately by :func:`build_features`.
    """

    def __init__(self, U, V, U_perp, V_perp, budget=DENSE_BUDGET):
        self.U = np.asarray(U, dtype=np.float64)
        self.V = np.asarray(V, dtype=np.float64)
        self.U_perp = np.asarray(U_perp, dtype=np.float64)
        self.V_perp = np.asarray(V_perp, dtype=np.float64)
        self.m, self.r = self.U.shape
        self.n = self.V.shape[0]
        if self.V.shape[1] != self.r:
            raise DimensionMismatch("U and V must have the same number of columns")
        if self.U_perp.shape != (self.m, self.m - self.r) or self.V_perp.shape != (self.n, self.n - self.r):
            raise DimensionMismatch("orthogonal completions have the wrong shape")
        self.d = self.r * (self.m + self.n) - self.r**2
        self.budget = budget
        self._dense = None

    @classmethod
    def from_estimate(cls, est, **kw):
        return cls(est.U_hat, est.V_hat, est.U_perp, est.V_perp, **kw)

    @classmethod
    def from_truth(cls, M, **kw):
        return cls(M.U, M.V, M.U_perp, M.V_perp, **kw)

    @property
    def shape(self):
        return (self.m, self.n)

    def rows(self, cells):
        """Feature vectors for flat cell indices, shape ``(len(cells), d)``."""
        cells = np.asarray(cells, dtype=np.int64)
        if self._dense is not None:
            return self._dense[cells]
        i, j = np.divmod(cells, self.n)
        U, V, Up, Vp = self.U[i], self.V[j], self.U_perp[i], self.V_perp[j]
        k = len(cells)
        b1 = np.einsum("kb,ka->kba", V, U).reshape(k, -1)
        b2 = np.einsum("kb,ka->kba", Vp, U).reshape(k, -1)
        b3 = np.einsum("kb,ka->kba", V, Up).reshape(k, -1)
        return np.hstack([b1, b2, b3])

    def phi(self, i, j):
        return self.rows([i * self.n + j])[0]

    def arms(self, i):
        """Features of every arm in context ``i``, shape ``(n, d)``."""
        return self.rows(np.arange(i * self.n, (i + 1) * self.n))

    def matrix(self):
        """Dense ``(m n, d)`` feature matrix; cached when within the memory budget."""
        if self._dense is None:
            if self.m * self.n * self.d > self.budget:
                raise MemoryError(
                    f"dense feature matrix needs {self.m * self.n * self.d} scalars, "
                    f"budget is {self.budget}"
                )
            self._dense = self.rows(np.arange(self.m * self.n))
        return self._dense

    def _chunks(self, cells):
        step = max(1, self.budget // (4 * self.d))
        for start in range(0, len(cells), step):
            sl = cells[start:start + step]
            yield sl, self.rows(sl)

    def gram(self, weights):
        """``sum_{i,j} weights[i, j] phi phi^T`` over cells with nonzero weight."""
        w = np.asarray(weights, dtype=np.float64).ravel()
        cells = np.flatnonzero(w)
        G = np.zeros((self.d, self.d))
        for sl, F in self._chunks(cells):
            G += (F * w[sl, None]).T @ F
        return G

    def combine(self, weights):
        """``sum_{i,j} weights[i, j] phi[i, j]`` computed blockwise."""
        W = np.asarray(weights, dtype=np.float64).reshape(self.m, self.n)
        return np.concatenate([
            vec(self.U.T @ W @ self.V),
            vec(self.U.T @ W @ self.V_perp),
            vec(self.U_perp.T @ W @ self.V),
        ])

    def predict(self, theta):
        """The ``m x n`` matrix of ``phi[i, j] @ theta``."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.d,):
            raise DimensionMismatch(f"theta must have shape ({self.d},)")
        r, m, n = self.r, self.m, self.n
        A = theta[: r * r].reshape(r, r, order="F")
        B = theta[r * r: r * n].reshape(r, n - r, order="F")
        C = theta[r * n:].reshape(m - r, r, order="F")
        return self.U @ (A @ self.V.T + B @ self.V_perp.T) + self.U_perp @ C @ self.V.T

    def project(self, M):
        """Parameter vector ``[vec(U^T M V); vec(U^T M V_perp); vec(U_perp^T M V)]``."""
        M = _entries_of(M, self.shape)
        return np.concatenate([
            vec(self.U.T @ M @ self.V),
            vec(self.U.T @ M @ self.V_perp),
            vec(self.U_perp.T @ M @ self.V),
        ])

    def residual(self, M):
        """Misspecification ``U_perp U_perp^T M V_perp V_perp^T``."""
        M = _entries_of(M, self.shape)
        return self.U_perp @ (self.U_perp.T @ M @ self.V_perp) @ self.V_perp.T


def _entries_of(M, shape):
    A = M.entries if isinstance(M, LowRankMatrix) else np.asarray(M, dtype=np.float64)
    if A.shape != tuple(shape):
        raise DimensionMismatch(f"matrix has shape {A.shape}, features expect {tuple(shape)}")
    return A


@dataclass(frozen=True, eq=False)
class FeatureSystem:
    """Features together with the diagnostic parameter and misspecification.

    ``theta`` and ``eps`` depend on the true matrix and are meant for
    diagnostics only; learners receive :class:`SubspaceFeatures`.
    """

    features: SubspaceFeatures
    theta: np.ndarray
    eps: np.ndarray

    @property
    def d(self):
        return self.features.d

    @property
    def eps_max(self):
        return float(np.max(np.abs(self.eps)))

    def phi(self, i, j):
        return self.features.phi(i, j)


def build_features(est, M):
    """Features from estimated subspaces plus diagnostics against ``M``."""
    feats = SubspaceFeatures.from_estimate(est)
    return FeatureSystem(feats, feats.project(M), feats.residual(M))


def misspec_bound(eps_sub_rec, kappa, sigma_r):
    if min(eps_sub_rec, kappa, sigma_r) < 0:
        raise ValueError("inputs must be nonnegative")
    return eps_sub_rec**2 * kappa * sigma_r


def misspec_chain(est, truth):
    """The three quantities of the misspecification inequality chain.

    Returns ``(eps_max, d_U * d_V * ||M||_op, eps_sub_rec^2 * kappa * sigma_r)``.
    """
    eps = SubspaceFeatures.from_estimate(est).residual(truth)
    d_u = d_two_to_inf(truth.U, est.U_hat)
    d_v = d_two_to_inf(truth.V, est.V_hat)
    middle = d_u * d_v * truth.sigma1
    return float(np.max(np.abs(eps))), middle, misspec_bound(max(d_u, d_v), truth.kappa, truth.sigma_r)


@dataclass(frozen=True, eq=False)
class TrueFeatureSystem:
    features: SubspaceFeatures

    @property
    def d(self):
        return self.features.d

    def psi(self, i, j):
        return self.features.phi(i, j)

    def psi_pi(self, omega_pi):
        """``sum omega_pi[i, j] psi[i, j]`` for a target joint distribution."""
        return self.features.combine(omega_pi)

    def max_norm_sq(self):
        """``max ||psi[i, j]||^2`` in closed form from the row norms of U and V."""
        F = self.features
        u2 = np.sum(F.U**2, axis=1)
        v2 = np.sum(F.V**2, axis=1)
        return float(np.max(v2[None, :] + u2[:, None] * (1 - v2[None, :])))


def build_true_features(M):
    return TrueFeatureSystem(SubspaceFeatures.from_truth(M))


def psi_norm_bound(mu, r, m, n):
    """Upper bound ``mu^2 r (m + n - mu^2 r) / (m n)`` on ``||psi[i, j]||^2``."""
    return mu**2 * r * (m + n - mu**2 * r) / (m * n)


class ExtendedFeatureSystem:
    """Full ``m n``-dimensional features including the ``U_perp``/``V_perp`` block.

    ``theta_ext = [theta; theta_ell]`` with ``theta_ell = vec(U_perp^T M V_perp)``
    is diagnostic.
    """

    def __init__(self, est, M=None):
        self.base = SubspaceFeatures.from_estimate(est) if isinstance(est, SubspaceEstimate) else est
        b = self.base
        self.m, self.n, self.r = b.m, b.n, b.r
        self.d = b.d
        self.dim = self.m * self.n
        if M is not None:
            A = _entries_of(M, b.shape)
            self.theta_ell = vec(b.U_perp.T @ A @ b.V_perp)
            self.theta_ext = np.concatenate([b.project(A), self.theta_ell])
        else:
            self.theta_ell = self.theta_ext = None

    def rows(self, cells):
        cells = np.asarray(cells, dtype=np.int64)
        b = self.base
        i, j = np.divmod(cells, self.n)
        k = len(cells)
        b4 = np.einsum("kb,ka->kba", b.V_perp[j], b.U_perp[i]).reshape(k, -1)
        return np.hstack([b.rows(cells), b4])

    def phi(self, i, j):
        return self.rows([i * self.n + j])[0]

    def arms(self, i):
        return self.rows(np.arange(i * self.n, (i + 1) * self.n))

    def matrix(self):
        return self.rows(np.arange(self.dim))


def build_extended_features(est, M):
    _entries_of(M, est.shape)
    return ExtendedFeatureSystem(est, M)


class LowRankFeaturizer(TransformerMixin, BaseEstimator):
    """Map ``(context, arm)`` pairs to features of the estimated subspaces.

    ``fit`` runs the spectral estimator on logged rewards; ``transform``
    returns one ``d``-dimensional row per pair.
    """

    def __init__(self, rank=1, shape=None):
        self.rank = rank
        self.shape = shape

    def fit(self, X, y, omega=None):
        spec = SpectralEstimator(rank=self.rank, shape=self.shape).fit(X, y, omega=omega)
        self.subspace_ = spec.subspace_
        self.features_ = SubspaceFeatures.from_estimate(self.subspace_)
        self.n_features_out_ = self.features_.d
        return self

    def transform(self, X):
        check_is_fitted(self, "features_")
        i, j = check_pairs(X, shape=self.features_.shape)
        return self.features_.rows(i * self.features_.n + j)
