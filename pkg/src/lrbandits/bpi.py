"""Best-policy identification from uniformly logged data."""
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_distribution, check_omega
from .environment import Trajectory, deterministic_policy, greedy_arms
from .lowrank import LowRankMatrix
from .policy_eval import DEFAULT_TAU, fit_two_phase
from .spectral import build_m_tilde, truncated_svd

BPI_ALGORITHMS = ("SBPI", "RSBPI", "GRSBPI", "TILDE")


@dataclass(frozen=True, eq=False)
class BPIResult:
    """Deterministic policy ``arms`` (0-based) and, when the truth is known, its gap."""

    arms: np.ndarray
    algorithm_id: str
    estimate: np.ndarray = None
    gap: float = math.nan
    v_star: float = math.nan
    v_hat: float = math.nan
    meta: dict = field(default_factory=dict)

    @property
    def policy(self):
        n = self.estimate.shape[1] if self.estimate is not None else int(self.arms.max()) + 1
        return deterministic_policy(self.arms, n)


def _entries(M):
    return M.entries if isinstance(M, LowRankMatrix) else np.asarray(M, dtype=np.float64)


def evaluate(result, M, rho):
    """Attach ``v*``, ``v^pi_hat`` and the gap computed from the true matrix."""
    entries = _entries(M)
    rho = check_distribution(rho, size=entries.shape[0])
    rows = np.arange(entries.shape[0])
    # identical summation for both values, so a correct policy has gap exactly 0
    v_star = float(rho @ entries[rows, greedy_arms(entries)])
    v_hat = float(rho @ entries[rows, result.arms])
    return BPIResult(result.arms, result.algorithm_id, result.estimate, v_star - v_hat, v_star, v_hat, result.meta)


def _finish(arms, alg, estimate, M, omega, meta=None):
    res = BPIResult(np.asarray(arms, dtype=np.int64), alg, estimate, meta=meta or {})
    if M is not None:
        res = evaluate(res, M, np.asarray(omega).sum(axis=1))
    return res


def tilde_argmax(traj, omega, M=None):
    """Benchmark policy: greedy with respect to the inverse-propensity matrix."""
    omega = check_omega(omega)
    M_tilde = build_m_tilde(traj, omega, *omega.shape)
    return _finish(greedy_arms(M_tilde), "TILDE", M_tilde, M, omega)


def sbpi(traj, omega, r, M=None, M_tilde=None):
    """Greedy policy of the rank-``r`` spectral estimate ``M_hat``."""
    omega = check_omega(omega)
    if M_tilde is None:
        M_tilde = build_m_tilde(traj, omega, *omega.shape)
    M_hat = truncated_svd(M_tilde, r).M_hat
    return _finish(greedy_arms(M_hat), "SBPI", M_hat, M, omega)


def rsbpi(traj, omega, r, T1=0, tau=DEFAULT_TAU, M=None, subspace=None, M_tilde=None):
    """Greedy policy of the least-squares refined estimate ``M_bar``.

    ``T1 = 0`` (default) reuses all samples in both phases.
    """
    _, feats, _, M_bar = fit_two_phase(traj, omega, r, T1, tau, subspace, M_tilde)
    return _finish(greedy_arms(M_bar), "RSBPI", M_bar, M, omega, {"d": feats.d, "T1": T1})


def bucket_depth(m, eps):
    if eps <= 0:
        raise ValueError("eps must be positive")
    return max(0, math.ceil(math.log2(m / eps)))


def context_buckets(rho, eps):
    """Bucket index of every context.

    Context ``i`` goes to ``l`` with ``2^-(l+1) < rho_i <= 2^-l`` when
    ``l < depth``; everything else, including ``rho_i = 0``, goes to ``depth``.
    Returns ``(labels, depth)``.
    """
    rho = check_distribution(rho)
    depth = bucket_depth(len(rho), eps)
    frac, expo = np.frexp(rho)
    # rho = frac * 2^expo with frac in [1/2, 1); exact powers of two sit on a closed upper edge
    level = np.where(frac == 0.5, 1 - expo, -expo)
    labels = np.where((rho > 0) & (level < depth), level, depth)
    return labels.astype(np.int64), depth


def grsbpi(traj, rho, r, tau=DEFAULT_TAU, eps=0.1, n=None, M=None):
    """RS-BPI run separately on groups of contexts with comparable probability.

    Arms are assumed to be logged uniformly.  Contexts of the residual bucket
    get arm 0, as do contexts of buckets with no samples.  Buckets whose
    sample count is below the feature dimension are still solved and listed
    in ``meta["small_buckets"]``.
    """
    rho = check_distribution(rho)
    m = len(rho)
    if n is None:
        if M is None:
            raise ValueError("pass n or M")
        n = _entries(M).shape[1]
    labels, depth = context_buckets(rho, eps)
    arms = np.zeros(m, dtype=np.int64)
    estimate = np.zeros((m, n))
    small, empty, solved = [], [], []
    for level in np.unique(labels):
        if level == depth:
            continue
        ctx = np.flatnonzero(labels == level)
        mask = np.isin(traj.contexts, ctx)
        if not np.any(mask):
            empty.append(int(level))
            continue
        local = np.full(m, -1, dtype=np.int64)
        local[ctx] = np.arange(len(ctx))
        sub = traj.subset(mask)
        sub = Trajectory(local[sub.contexts], sub.arms, sub.rewards)
        rho_l = rho[ctx] / rho[ctx].sum()
        omega_l = np.repeat(rho_l[:, None] / n, n, axis=1)
        r_l = min(r, len(ctx), n)
        _, feats, _, M_bar = fit_two_phase(sub, omega_l, r_l, 0, tau)
        if sub.T < feats.d:
            small.append(int(level))
        arms[ctx] = greedy_arms(M_bar)
        estimate[ctx] = M_bar
        solved.append(int(level))
    meta = {"depth": depth, "labels": labels, "solved": solved, "small_buckets": small, "empty_buckets": empty}
    res = BPIResult(arms, "GRSBPI", estimate, meta=meta)
    return evaluate(res, M, rho) if M is not None else res
