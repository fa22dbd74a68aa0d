"""Spectral estimation of singular subspaces from importance-weighted observations."""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_omega, check_pairs
from .environment import Trajectory, estimate_context_dist
from .exceptions import DimensionMismatch
from .lowrank import fix_signs, two_to_inf


@dataclass(frozen=True, eq=False)
class SubspaceEstimate:
    """Rank-``r`` truncation ``M_hat = U_hat diag(Sigma_hat) V_hat^T`` of ``M_tilde``.

    ``[U_hat | U_perp]`` and ``[V_hat | V_perp]`` are orthogonal matrices built
    from the full SVD of ``M_tilde``.
    """

    M_tilde: np.ndarray
    M_hat: np.ndarray
    U_hat: np.ndarray
    V_hat: np.ndarray
    U_perp: np.ndarray
    V_perp: np.ndarray
    Sigma_hat: np.ndarray

    @property
    def rank(self):
        return self.U_hat.shape[1]

    @property
    def shape(self):
        return self.M_tilde.shape


def build_m_tilde(traj, omega, m, n):
    """Inverse-propensity weighted matrix; unobserved entries are zero."""
    omega = check_omega(omega, shape=(m, n))
    T = traj.T
    if T < 1:
        raise ValueError("M_tilde needs at least one sample")
    sums = np.bincount(
        traj.contexts * n + traj.arms, weights=traj.rewards, minlength=m * n
    ).reshape(m, n)
    return sums / (T * omega)


def truncated_svd(M_tilde, r):
    M_tilde = np.asarray(M_tilde, dtype=np.float64)
    m, n = M_tilde.shape
    if not 1 <= r <= min(m, n):
        raise ValueError(f"need 1 <= r <= min(m, n) = {min(m, n)}, got {r}")
    U_full, s, Vt = np.linalg.svd(M_tilde, full_matrices=True)
    V_full = Vt.T
    U_hat, V_hat = fix_signs(U_full[:, :r], V_full[:, :r])
    Sigma_hat = s[:r].copy()
    return SubspaceEstimate(
        M_tilde=M_tilde,
        M_hat=(U_hat * Sigma_hat) @ V_hat.T,
        U_hat=U_hat,
        V_hat=V_hat,
        U_perp=U_full[:, r:],
        V_perp=V_full[:, r:],
        Sigma_hat=Sigma_hat,
    )


def estimate_subspaces(traj, omega, r):
    m, n = np.shape(omega)
    return truncated_svd(build_m_tilde(traj, omega, m, n), r)


def estimated_omega(traj, m, n):
    """Joint distribution from the empirical context frequencies and uniform arms."""
    return estimate_context_dist(traj, m)[:, None] / n


def d_two_to_inf(A, B):
    """``|| A A^T - B B^T ||_{2->inf}`` for column-orthonormal ``A`` and ``B``."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[0] != B.shape[0]:
        raise DimensionMismatch("A and B must have the same number of rows")
    return two_to_inf(A @ A.T - B @ B.T)


def projector_frobenius(A, B):
    return float(np.linalg.norm(A @ A.T - B @ B.T, "fro"))


def recovery_metrics(est, truth):
    """Subspace and matrix recovery errors of ``est`` against the true matrix."""
    if est.shape != truth.shape:
        raise DimensionMismatch("estimate and truth differ in shape")
    d_u = d_two_to_inf(truth.U, est.U_hat)
    d_v = d_two_to_inf(truth.V, est.V_hat)
    return {
        "d_left": d_u,
        "d_right": d_v,
        "eps_sub_rec": max(d_u, d_v),
        "frob_left": projector_frobenius(truth.U, est.U_hat),
        "frob_right": projector_frobenius(truth.V, est.V_hat),
        "op_err": float(np.linalg.norm(est.M_tilde - truth.entries, 2)),
        "max_err_hat": float(np.max(np.abs(truth.entries - est.M_hat))),
        "max_err_tilde": float(np.max(np.abs(truth.entries - est.M_tilde))),
    }


class BoundValue(NamedTuple):
    value: float
    condition_met: bool


def _log3(m, n, T, delta):
    return np.log((m + n) * T / delta) ** 3


def recovery_sample_condition(summary, m, n, T, omega_min, delta, constant=1.0):
    """Whether ``T`` meets the sample-size requirement of the two-to-infinity bound."""
    need = constant * summary.L**2 * (m + n) / (summary.sigma_r**2 * omega_min) * _log3(m, n, T, delta)
    return bool(T >= need)


def recovery_bound(summary, m, n, r, T, omega_min, delta, constant=1.0, log_T=None):
    """Two-to-infinity subspace recovery bound with leading constant ``constant``.

    Universal constants are unknown, so the value is only meaningful up to
    order of magnitude.  ``log_T`` freezes the ``T`` inside the log factor.
    """
    log_T = T if log_T is None else log_T
    value = constant * np.sqrt(
        summary.L**2 * summary.mu**2 * summary.kappa**2 * r * (m + n)
        / (summary.sigma_r**2 * T * omega_min * min(m, n))
        * _log3(m, n, log_T, delta)
    )
    return BoundValue(float(value), recovery_sample_condition(summary, m, n, T, omega_min, delta))


def frobenius_bound(summary, m, n, r, T, omega_min, delta, constant=1.0):
    """Frobenius-norm subspace recovery bound (unit constant by default)."""
    value = constant * summary.L * np.sqrt(r) / summary.sigma_r * np.sqrt(
        (m + n) / (T * omega_min) * _log3(m, n, T, delta)
    )
    cond = T >= _log3(m, n, T, delta) / (omega_min * min(m, n))
    return BoundValue(float(value), bool(cond))


class SpectralEstimator(RegressorMixin, BaseEstimator):
    """Rank-``rank`` spectral estimate of the reward matrix.

    ``fit`` takes ``(context, arm)`` pairs and rewards, builds the
    inverse-propensity matrix and truncates its SVD.  ``predict`` returns the
    low-rank estimate at the requested pairs.

    Parameters
    ----------
    rank : int
        Target rank ``r``.
    shape : tuple of int, optional
        ``(m, n)``; inferred from ``omega`` or the data when omitted.
    """

    def __init__(self, rank=1, shape=None):
        self.rank = rank
        self.shape = shape

    def _resolve(self, X, y, omega):
        i, j, y = check_pairs(X, y)
        if omega is not None:
            omega = np.asarray(omega, dtype=np.float64)
            shape = omega.shape
        elif self.shape is not None:
            shape = tuple(self.shape)
        else:
            shape = (int(i.max()) + 1, int(j.max()) + 1)
        if omega is None:
            omega = np.full(shape, 1.0 / (shape[0] * shape[1]))
        if i.max() >= shape[0] or j.max() >= shape[1]:
            raise DimensionMismatch(f"indices exceed shape {shape}")
        return Trajectory(i, j, y), omega, shape

    def fit(self, X, y, omega=None):
        traj, omega, shape = self._resolve(X, y, omega)
        self.omega_ = check_omega(omega, shape=shape)
        self.subspace_ = truncated_svd(build_m_tilde(traj, omega, *shape), self.rank)
        self.M_tilde_ = self.subspace_.M_tilde
        self.M_hat_ = self.subspace_.M_hat
        return self

    def predict(self, X):
        check_is_fitted(self, "M_hat_")
        i, j = check_pairs(X, shape=self.M_hat_.shape)
        return self.M_hat_[i, j]

    def policy_value(self, target):
        """Plug-in value ``sum omega^pi * M_hat`` for a target policy matrix."""
        check_is_fitted(self, "M_hat_")
        rho = self.omega_.sum(axis=1)
        return float(np.sum(rho[:, None] * np.asarray(target) * self.M_hat_))
