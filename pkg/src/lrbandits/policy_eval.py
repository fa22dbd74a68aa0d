"""Off-policy evaluation: IPS, spectral IPS and the two-phase least-squares estimator."""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_omega, check_pairs, check_policy
from .environment import Trajectory
from .exceptions import InvalidSplit, SingularBlock
from .lowrank import LowRankMatrix
from .reduction import SubspaceFeatures, build_true_features
from .spectral import build_m_tilde, truncated_svd

DEFAULT_TAU = 1e-4


@dataclass(frozen=True)
class PEEstimate:
    value: float
    estimator_id: str
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class RegularizedLS:
    """Solution of ``gram @ theta_hat = rhs`` with ``gram = sum phi phi^T + tau I``."""

    theta_hat: np.ndarray
    gram: np.ndarray
    rhs: np.ndarray
    tau: float

    @property
    def residual(self):
        return float(np.max(np.abs(self.gram @ self.theta_hat - self.rhs)))


def target_weights(omega, target):
    """``omega^pi[i, j] = rho_i pi(j | i)`` with ``rho`` the context marginal of ``omega``."""
    target = check_policy(target, shape=np.shape(omega), name="target")
    return np.asarray(omega).sum(axis=1)[:, None] * target


def _shape(omega):
    m, n = np.shape(omega)
    return m, n


def ips_estimate(traj, omega, target):
    m, n = _shape(omega)
    M_tilde = build_m_tilde(traj, omega, m, n)
    value = float(np.sum(target_weights(omega, target) * M_tilde))
    return PEEstimate(value, "IPS", {"T": traj.T})


def sips_estimate(traj, omega, target, r, M_tilde=None):
    """Plug-in value of the rank-``r`` truncation of ``M_tilde``.

    ``M_tilde`` overrides the importance-weighted matrix (oracle mode).
    """
    m, n = _shape(omega)
    if M_tilde is None:
        M_tilde = build_m_tilde(traj, omega, m, n)
    est = truncated_svd(M_tilde, r)
    value = float(np.sum(target_weights(omega, target) * est.M_hat))
    return PEEstimate(value, "SIPS", {"T": traj.T, "r": r})


def solve_regularized_ls(features, traj, tau):
    """Ridge estimate of ``theta`` from the samples of ``traj`` in feature space."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    m, n = features.shape
    cells = traj.contexts * n + traj.arms
    counts = np.bincount(cells, minlength=m * n).astype(np.float64)
    sums = np.bincount(cells, weights=traj.rewards, minlength=m * n)
    gram = features.gram(counts) + tau * np.eye(features.d)
    rhs = features.combine(sums)
    theta = cho_solve(cho_factor(gram, lower=True), rhs)
    return RegularizedLS(theta, gram, rhs, float(tau))


def resolve_split(T, T1):
    """Phase-1 length; ``None`` means ``floor(T / 2)`` and ``0`` means no split."""
    if T1 is None:
        T1 = T // 2
    T1 = int(T1)
    if T1 < 0 or (T1 > 0 and T1 >= T):
        raise InvalidSplit(f"need 1 <= T1 < T = {T} (or T1 = 0), got {T1}")
    return T1


def fit_two_phase(traj, omega, r, T1=None, tau=DEFAULT_TAU, subspace=None, M_tilde=None):
    """Subspace recovery on the first ``T1`` samples then ridge regression on the rest.

    With ``T1 = 0`` every sample is used in both phases.  ``subspace`` (a
    :class:`SubspaceEstimate`) or ``M_tilde`` bypass phase 1.

    Returns ``(subspace, features, ls, M_bar)``.
    """
    omega = check_omega(omega)
    m, n = omega.shape
    T1 = resolve_split(traj.T, T1)
    first = traj if T1 == 0 else traj.head(T1)
    second = traj if T1 == 0 else traj.tail(T1)
    if subspace is None:
        if M_tilde is None:
            M_tilde = build_m_tilde(first, omega, m, n)
        subspace = truncated_svd(M_tilde, r)
    features = SubspaceFeatures.from_estimate(subspace)
    ls = solve_regularized_ls(features, second, tau)
    return subspace, features, ls, features.predict(ls.theta_hat)


def rspe_estimate(traj, omega, target, r, T1=None, tau=DEFAULT_TAU, subspace=None, M_tilde=None):
    T1 = resolve_split(traj.T, T1)
    _, features, ls, M_bar = fit_two_phase(traj, omega, r, T1, tau, subspace, M_tilde)
    value = float(np.sum(target_weights(omega, target) * M_bar))
    meta = {"T": traj.T, "T1": T1, "tau": tau, "d": features.d, "split": T1 > 0}
    return PEEstimate(value, "RSPE", meta)


def m_bar(traj, omega, r, T1=None, tau=DEFAULT_TAU, subspace=None, M_tilde=None):
    return fit_two_phase(traj, omega, r, T1, tau, subspace, M_tilde)[3]


@dataclass(frozen=True, eq=False)
class InstanceQuantities:
    psi_pi: np.ndarray
    Lambda: np.ndarray
    Lambda_phi_norm: float

    @property
    def psi_pi_norm(self):
        return float(np.linalg.norm(self.psi_pi))


def instance_quantities(M, omega, target):
    """``psi_pi``, ``Lambda = sum omega psi psi^T`` and ``||psi_pi||_{Lambda^-1}``."""
    omega = check_omega(omega, shape=M.shape)
    true = build_true_features(M)
    psi_pi = true.psi_pi(target_weights(omega, target))
    Lam = true.features.gram(omega)
    norm = math.sqrt(float(psi_pi @ cho_solve(cho_factor(Lam), psi_pi)))
    return InstanceQuantities(psi_pi, Lam, norm)


def phi_pi_norm(features, omega, target):
    """``||phi_pi||_{Lambda_phi^-1}`` for estimated features (logged, never asserted)."""
    phi_pi = features.combine(target_weights(omega, target))
    Lam = features.gram(omega)
    return math.sqrt(float(phi_pi @ cho_solve(cho_factor(Lam), phi_pi)))


def kl_bernoulli(p, q):
    """Bernoulli KL divergence ``kl(p, q)`` with the ``0 log 0 = 0`` convention."""
    def term(a, b):
        if a == 0:
            return 0.0
        if b == 0:
            return math.inf
        return a * math.log(a / b)

    return term(p, q) + term(1 - p, 1 - q)


@dataclass(frozen=True)
class LowerBoundReport:
    L_M_pi: float
    T_lb: float
    minimax_T: float
    kl_term: float


def lower_bound_quantity(omega, omega_pi, P, Q):
    """``L_{M,pi}`` for the rank factorisation ``M = P Q^T``."""
    def side(w, wpi, F):
        blocks = np.einsum("ij,ja,jb->iab", w, F, F)
        means = wpi @ F
        active = np.abs(means).sum(axis=1) > 0
        if not np.any(active):
            return 0.0
        try:
            sol = np.linalg.solve(blocks[active], means[active][..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise SingularBlock("a per-context covariance block is singular") from exc
        return float(np.sum(means[active] * sol))

    return max(side(omega, omega_pi, Q), side(omega.T, omega_pi.T, P))


def pe_lower_bound(M, omega, target, sigma, eps, delta, P=None, Q=None):
    """Instance-dependent and minimax PE sample-complexity lower bounds."""
    if not 0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 1/2)")
    omega = check_omega(omega, shape=M.shape)
    if P is None or Q is None:
        root = np.sqrt(M.singular_values)
        P, Q = M.U * root, M.V * root
    omega_pi = target_weights(omega, target)
    L = lower_bound_quantity(omega, omega_pi, np.asarray(P), np.asarray(Q))
    kl = kl_bernoulli(delta, 1 - delta)
    m, n = M.shape
    minimax = sigma**2 * (m + n) / (omega.max() * m * n * eps**2) * kl
    return LowerBoundReport(float(L), sigma**2 * L * kl / (2 * eps**2), float(minimax), kl)


def _fixed_point(f, start=1.0, rtol=1e-12, max_iter=500):
    """Smallest ``T >= start`` reached by iterating ``T <- f(T)``."""
    T = max(start, f(start))
    for _ in range(max_iter):
        nxt = f(T)
        if abs(nxt - T) <= rtol * T:
            return nxt
        T = nxt
    return T


def pe_upper_bound_formulas(summary, m, n, r, omega_min, eps, delta, sigma, psi_pi_norm_sq=None):
    """Sample sizes suggested by the PE upper bounds, with unit constants.

    Each formula has ``T`` inside a log factor on its right-hand side; the
    reported value solves ``T = f(T)`` by fixed-point iteration.
    """
    L, mu, kappa, mx = summary.L, summary.mu, summary.kappa, summary.max_norm
    k = min(m, n)
    log3 = lambda T: math.log((m + n) * T / delta) ** 3  # noqa: E731

    sips = lambda T: L**2 * mu**6 * kappa**4 * r**3 * (m + n) / (omega_min * k**2 * eps**2) * log3(T)  # noqa: E731
    K0 = L**2 / mx * mu**6 * kappa**4 * r**3 * (m + n) ** 2 * math.sqrt(m * n) / ((omega_min * m * n) ** 2 * k)
    lead_minimax = sigma**2 * mu**2 * r * (m + n) / (omega_min * m * n * eps**2) * math.log(math.e / delta)
    minimax = lambda T: lead_minimax + K0 / eps * log3(T)  # noqa: E731
    out = {
        "sips_T": _fixed_point(sips),
        "rspe_minimax_T": _fixed_point(minimax),
        "rspe_minimax_leading": lead_minimax,
        "K0": K0,
    }
    if psi_pi_norm_sq is not None:
        lead = sigma**2 * psi_pi_norm_sq / (omega_min * eps**2) * math.log(math.e / delta)
        K1 = K0 ** (4.0 / 3.0)
        out["rspe_leading"] = lead
        out["rspe_T"] = _fixed_point(lambda T: lead + K1 / eps ** (4.0 / 3.0) * log3(T))
    return out


def rspe_asymptotic_error(psi_pi_norm, omega_min, delta, T, alpha=0.0):
    """Dominant term of the RS-PE error bound, used as a plot overlay."""
    return psi_pi_norm / math.sqrt(omega_min) * math.sqrt(2 * math.log(16 / delta) / ((1 - alpha) * T))


class TwoPhaseEstimator(RegressorMixin, BaseEstimator):
    """Reward-matrix estimator refined by least squares in the estimated subspaces.

    Parameters
    ----------
    rank : int
        Rank ``r`` of the reward matrix.
    tau : float, default=1e-4
        Ridge regularisation of the second phase.
    split : float, default=0.0
        Fraction of samples used only for subspace recovery; ``0`` reuses all
        samples in both phases.
    shape : tuple of int, optional
        ``(m, n)`` when ``omega`` is not passed to ``fit``.
    """

    def __init__(self, rank=1, tau=DEFAULT_TAU, split=0.0, shape=None):
        self.rank = rank
        self.tau = tau
        self.split = split
        self.shape = shape

    def fit(self, X, y, omega=None, subspace=None):
        i, j, y = check_pairs(X, y)
        if omega is None:
            shape = tuple(self.shape) if self.shape is not None else (int(i.max()) + 1, int(j.max()) + 1)
            omega = np.full(shape, 1.0 / (shape[0] * shape[1]))
        omega = check_omega(omega)
        if not 0 <= self.split < 1:
            raise InvalidSplit("split must lie in [0, 1)")
        traj = Trajectory(i, j, y)
        T1 = int(math.floor(self.split * traj.T))
        if self.split > 0 and T1 == 0:
            raise InvalidSplit("split leaves no phase-1 samples")
        self.omega_ = omega
        self.T1_ = T1
        self.subspace_, self.features_, self.ls_, self.M_bar_ = fit_two_phase(
            traj, omega, self.rank, T1, self.tau, subspace
        )
        self.theta_hat_ = self.ls_.theta_hat
        return self

    def predict(self, X):
        check_is_fitted(self, "M_bar_")
        i, j = check_pairs(X, shape=self.M_bar_.shape)
        return self.M_bar_[i, j]

    def policy_value(self, target):
        check_is_fitted(self, "M_bar_")
        return float(np.sum(target_weights(self.omega_, target) * self.M_bar_))


def true_value(M, omega, target):
    entries = M.entries if isinstance(M, LowRankMatrix) else np.asarray(M)
    return float(np.sum(target_weights(omega, target) * entries))
