"""Regret minimisation: SupLinUCB on estimated-subspace features and the two-phase RS-RMIN."""
import bisect
import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.linalg import solve_triangular

from .environment import draw_noise, uniform_policy, joint_distribution, Trajectory
from .exceptions import InvalidSplit
from .reduction import ExtendedFeatureSystem, SubspaceFeatures
from .rng import as_generator
from .spectral import build_m_tilde, truncated_svd

EXPLOIT, DESCEND, EXPLORE = "exploit", "descend", "explore"
SIGMA_FLOOR = 1e-6


def suplin_levels(T2, d):
    """Number of levels ``J = ceil(log2(T2 / d) / 2) + 1``."""
    return math.ceil(math.log2(T2 / d) / 2) + 1


def beta_threshold(sigma, T2, m, n, d, delta):
    """Confidence width multiplier of the level loop."""
    if T2 <= d:
        raise ValueError(f"need T2 > d, got T2={T2}, d={d}")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    k = math.ceil(0.5 * math.log(T2 / d))
    return sigma * (1 + math.sqrt(2 * math.log(T2 * m * n / delta * k)))


def effective_sigma(sigma, max_norm, floor=SIGMA_FLOOR):
    """Noise level used by the learner; a zero ``sigma`` is lifted to ``floor * max_norm``."""
    return max(float(sigma), floor * float(max_norm))


def regularizer_scale(sigma, max_norm, m, n):
    return sigma**2 / (max_norm**2 * m * n)


class _Level:
    """Ridge statistics of one level, kept as an upper-triangular ``R`` with ``R^T R = V``."""

    def __init__(self, Lambda0, keep=True):
        self.keep = keep
        self.R = np.linalg.cholesky(Lambda0).T
        self.b = np.zeros(Lambda0.shape[0])
        self.theta = np.zeros(Lambda0.shape[0])
        self.members: List[int] = []
        self.xs: List[np.ndarray] = []
        self.rs: List[float] = []

    def scores(self, X):
        """``(r_hat, ||x||_{V^-1})`` for the rows of ``X``."""
        Z = solve_triangular(self.R, X.T, trans="T", lower=False)
        return X @ self.theta, np.sqrt(np.sum(Z * Z, axis=0))

    def add(self, t, x, r):
        # re-triangularising [R; x^T] avoids forming V, which is badly conditioned when Lambda is tiny
        self.R = np.linalg.qr(np.vstack([self.R, x[None, :]]), mode="r")
        self.b += r * x
        y = solve_triangular(self.R, self.b, trans="T", lower=False)
        self.theta = solve_triangular(self.R, y, lower=False)
        self.members.append(t)
        if self.keep:
            self.xs.append(np.array(x))
            self.rs.append(float(r))


@dataclass
class RoundLog:
    t: int
    arm: int
    branch: str
    level: int
    sets: list
    ucb: list
    width: list


class SupLinUCB:
    """Level-wise elimination with a ridge estimate per level.

    Levels are 0-based here: level ``j`` uses thresholds ``beta * 2^-(j+1)``.
    Among several arms eligible for exploration the widest is taken, ties
    broken towards the smallest index.

    Parameters
    ----------
    d : int
        Feature dimension.
    T2 : int
        Horizon of the run.
    beta : float
        Width multiplier.
    Lambda0 : ndarray of shape (d, d) or (d,)
        Regulariser; a vector is read as a diagonal.
    record : bool
        Keep a per-round log for :func:`replay_check`.
    """

    def __init__(self, d, T2, beta, Lambda0, record=True):
        Lambda0 = np.asarray(Lambda0, dtype=np.float64)
        if Lambda0.ndim == 1:
            Lambda0 = np.diag(Lambda0)
        if Lambda0.shape != (d, d):
            raise ValueError("Lambda0 must be d x d")
        self.d, self.T2, self.beta = int(d), int(T2), float(beta)
        self.J = suplin_levels(T2, d)
        self.Lambda0 = Lambda0
        self.levels = [_Level(Lambda0, keep=record) for _ in range(self.J)]
        self.exploit_width = self.beta * math.sqrt(self.d / self.T2)
        self.record = record
        self.log: List[RoundLog] = []
        self._t = 0

    @property
    def index_sets(self):
        return [list(lev.members) for lev in self.levels]

    def select(self, X):
        """Choose an arm among the rows of ``X``; returns ``(arm, level)``.

        ``level`` is the level the round must be recorded in, or ``None``.
        """
        X = np.asarray(X, dtype=np.float64)
        A = np.arange(X.shape[0])
        sets, ucbs, widths = [], [], []
        j = 0
        while True:
            lev = self.levels[j]
            r_hat, norm = lev.scores(X[A])
            w = self.beta * norm
            ucb = r_hat + w
            if self.record:
                sets.append(A)
                ucbs.append(ucb)
                widths.append(w)
            if np.all(w <= self.exploit_width):
                arm, branch, level = int(A[np.argmax(ucb)]), EXPLOIT, None
                break
            if np.all(w <= self.beta * 2.0 ** -(j + 1)):
                A = A[ucb >= ucb.max() - 2.0 ** (-j) * self.beta]
                j += 1
                # 2^-J < sqrt(d / T2), so the exploit test always fires first at the last level
                assert j < self.J, "level overflow"
                continue
            arm, branch, level = int(A[np.argmax(w)]), EXPLORE, j
            break
        if self.record:
            self.log.append(RoundLog(self._t, arm, branch, -1 if level is None else level, sets, ucbs, widths))
        return arm, level

    def update(self, x, reward, level):
        if level is not None:
            self.levels[level].add(self._t, np.asarray(x, dtype=np.float64), reward)
        self._t += 1

    def step(self, X, reward_fn):
        arm, level = self.select(X)
        r = reward_fn(arm)
        self.update(X[arm], r, level)
        return arm, r


def replay_check(alg, arms_of_round=None, every=0, rtol=1e-6, atol=1e-9):
    """Audit a logged run; returns a list of violation messages (empty when clean).

    Checks that every round sits in at most one index set and in the level it
    explored, that elimination sets are nested and equal to the filter rule
    applied to the logged scores, and that explored arms are the widest.
    With ``arms_of_round`` (round -> candidate feature matrix) and
    ``every > 0``, every ``every``-th round is recomputed from scratch with
    explicit inverses built from the index sets.
    """
    problems = []
    seen = {}
    for j, lev in enumerate(alg.levels):
        for t in lev.members:
            if t in seen:
                problems.append(f"round {t} in levels {seen[t]} and {j}")
            seen[t] = j
    for rec in alg.log:
        if rec.branch == EXPLORE:
            if seen.get(rec.t) != rec.level:
                problems.append(f"round {rec.t} explored level {rec.level} but is stored in {seen.get(rec.t)}")
            w = rec.width[-1]
            if rec.arm != rec.sets[-1][int(np.argmax(w))]:
                problems.append(f"round {rec.t}: explored arm is not the widest")
        elif rec.t in seen:
            problems.append(f"round {rec.t} exploited but is stored in level {seen[rec.t]}")
        last = len(rec.sets) - 1
        for k, w in enumerate(rec.width):
            exploit_ok = bool(np.all(w <= alg.exploit_width))
            descend_ok = bool(np.all(w <= alg.beta * 2.0 ** -(k + 1)))
            if k < last and (exploit_ok or not descend_ok):
                problems.append(f"round {rec.t}: descended from level {k} against the width tests")
            if k == last and (rec.branch == EXPLOIT) != exploit_ok:
                problems.append(f"round {rec.t}: exploit branch inconsistent with widths")
            if k == last and rec.branch == EXPLORE and descend_ok:
                problems.append(f"round {rec.t}: explored although all widths were small")
        for k in range(last):
            A, B, ucb = rec.sets[k], rec.sets[k + 1], rec.ucb[k]
            if not set(B.tolist()) <= set(A.tolist()):
                problems.append(f"round {rec.t}: set {k + 1} not nested in set {k}")
            keep = A[ucb >= ucb.max() - 2.0 ** (-k) * alg.beta]
            if not np.array_equal(keep, B):
                problems.append(f"round {rec.t}: set {k + 1} differs from the filter rule")
        if arms_of_round is not None and every and rec.t % every == 0:
            problems.extend(_brute_force_round(alg, rec, arms_of_round(rec.t), rtol, atol))
    return problems


def _brute_force_round(alg, rec, X, rtol, atol):
    out = []
    for k, A in enumerate(rec.sets):
        lev = alg.levels[k]
        upto = bisect.bisect_left(lev.members, rec.t)
        V = alg.Lambda0.copy()
        s = np.zeros(alg.d)
        for x, r in zip(lev.xs[:upto], lev.rs[:upto]):
            V += np.outer(x, x)
            s += r * x
        Vinv = np.linalg.inv(V)
        XA = X[A]
        w = alg.beta * np.sqrt(np.einsum("kd,de,ke->k", XA, Vinv, XA))
        ucb = XA @ (Vinv @ s) + w
        if not np.allclose(w, rec.width[k], rtol=rtol, atol=atol * max(1.0, np.max(w))):
            out.append(f"round {rec.t} level {k}: widths differ from brute force")
        if not np.allclose(ucb, rec.ucb[k], rtol=rtol, atol=atol * max(1.0, np.max(np.abs(ucb)))):
            out.append(f"round {rec.t} level {k}: scores differ from brute force")
    return out


@dataclass(frozen=True, eq=False)
class RegretTrace:
    """True instantaneous regret per round together with the choices made."""

    inst_regret: np.ndarray
    phase: np.ndarray
    contexts: np.ndarray
    arms: np.ndarray
    T1: int
    learner: Optional[SupLinUCB] = None
    meta: dict = field(default_factory=dict)

    @property
    def T(self):
        return len(self.inst_regret)

    @property
    def cum_regret(self):
        return np.cumsum(self.inst_regret)

    @property
    def total(self):
        return float(np.sum(self.inst_regret))

    def to_csv(self, path):
        """Columns ``t,phase,i,j,inst_regret,cum_regret`` with 1-based indices."""
        cum = self.cum_regret
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "phase", "i", "j", "inst_regret", "cum_regret"])
            for t in range(self.T):
                w.writerow([
                    t + 1, int(self.phase[t]), int(self.contexts[t]) + 1, int(self.arms[t]) + 1,
                    f"{self.inst_regret[t]:.17g}", f"{cum[t]:.17g}",
                ])


def t1_star(L, mu, kappa, r, m, n, rho_min, T, max_norm, sigma, constant=1.0):
    """Phase-1 length from the regret-balancing formula, clamped to ``[d, T / 2]``.

    ``sigma = 0`` is replaced by the learner's noise floor so the last log
    factor stays finite.  When ``d > T / 2`` the lower end ``d`` wins.
    """
    d = r * (m + n) - r * r
    sigma = effective_sigma(sigma, max_norm)
    value = (
        constant * mu**2 * kappa**2 * L / max_norm
        * r**1.25 * (m + n) ** 0.75 * (m * n) ** 0.25 / math.sqrt(m * rho_min * min(m, n))
        * math.sqrt(T) * math.log(1 + m * n * T) ** 1.5 * math.log(T * (m + n) * L**2 / sigma**2)
    )
    return int(max(d, min(round(value), T // 2)))


def _greedy_regret(entries):
    return entries.max(axis=1)[:, None] - entries


def _phase_one(env, T1, r, rng, oracle):
    m, n = env.shape
    contexts = env.context_stream(T1, rng)
    arms = rng.integers(n, size=T1)
    rewards = env.reward(contexts, arms, rng)
    omega = joint_distribution(env.rho, uniform_policy(m, n))
    if oracle:
        est = truncated_svd(env.M.entries, r)
    else:
        est = truncated_svd(build_m_tilde(Trajectory(contexts, arms, rewards), omega, m, n), r)
    return contexts, arms, est


def _resolve_t1(env, r, T, T1):
    if T1 is None:
        s = env.M.summary()
        m, n = env.shape
        T1 = t1_star(
            max(s.max_norm, env.sigma_noise), s.mu, s.kappa, r, m, n, float(np.min(env.rho)), T,
            s.max_norm, env.sigma_noise,
        )
    T1 = int(T1)
    if not 1 <= T1 < T:
        raise InvalidSplit(f"need 1 <= T1 < T = {T}, got {T1}")
    return T1


def _run_phase_two(env, learner, arm_features, T2, rng):
    m, n = env.shape
    entries = env.M.entries
    gaps = _greedy_regret(entries)
    contexts = env.context_stream(T2, rng)
    noise = draw_noise(rng, T2, env.sigma_noise, env.noise)
    arms = np.empty(T2, dtype=np.int64)
    for t in range(T2):
        i = contexts[t]
        X = arm_features(i)
        a, level = learner.select(X)
        learner.update(X[a], entries[i, a] + noise[t], level)
        arms[t] = a
    return contexts, arms, gaps[contexts, arms]


def _feature_lookup(feats):
    n = feats.n
    try:
        F = feats.matrix()
    except MemoryError:
        return feats.arms
    return lambda i: F[i * n:(i + 1) * n]


def rs_rmin(env, r, T, T1=None, tau_reg_scale=1.0, seed=None, oracle=False,
            sigma_floor=SIGMA_FLOOR, record=False):
    """Uniform exploration, subspace recovery, then SupLinUCB on the reduced features.

    ``T1=None`` uses :func:`t1_star`.  ``oracle`` replaces the phase-1
    estimate by the true singular subspaces (test mode).  A noiseless
    environment runs with noise level ``sigma_floor * ||M||_max`` inside the
    learner so that the width multiplier and regulariser do not vanish.
    """
    T = int(T)
    T1 = _resolve_t1(env, r, T, T1)
    T2 = T - T1
    rng = as_generator(seed)
    m, n = env.shape
    entries = env.M.entries
    mx = float(np.max(np.abs(entries)))
    ctx1, arms1, est = _phase_one(env, T1, r, rng, oracle)
    feats = SubspaceFeatures.from_estimate(est)
    d = feats.d
    sigma = effective_sigma(env.sigma_noise, mx, sigma_floor)
    beta = beta_threshold(sigma, T2, m, n, d, 1.0 / T)
    lam = tau_reg_scale * regularizer_scale(sigma, mx, m, n)
    learner = SupLinUCB(d, T2, beta, np.full(d, lam), record=record)
    ctx2, arms2, reg2 = _run_phase_two(env, learner, _feature_lookup(feats), T2, rng)
    reg1 = _greedy_regret(entries)[ctx1, arms1]
    return RegretTrace(
        np.concatenate([reg1, reg2]),
        np.concatenate([np.ones(T1, dtype=np.int8), np.full(T2, 2, dtype=np.int8)]),
        np.concatenate([ctx1, ctx2]),
        np.concatenate([arms1, arms2]),
        T1,
        learner,
        {"beta": beta, "lambda": lam, "d": d, "sigma_eff": sigma, "J": learner.J, "features": feats},
    )


def lambda_perp(T, d, lam):
    """Regulariser of the tail block, ``T / (d log(1 + T / lam))``."""
    return T / (d * math.log(1 + T / lam))


def almost_lowd_beta(sigma, T, m, n, delta, B2, B_ell, lam, lam_perp):
    return (
        sigma * math.sqrt(2 * math.log(10 * T * m * n / delta * math.log(1 + T)))
        + B2 * math.sqrt(lam) + B_ell * math.sqrt(lam_perp)
    )


def almost_lowd_baseline(env, r, T, T1=None, B2=None, B_ell=None, seed=None, oracle=False,
                         sigma_floor=SIGMA_FLOOR, record=False):
    """SupLinUCB on the full ``m n``-dimensional features with a block regulariser.

    ``B2`` defaults to ``sqrt(m n) ||M||_max``; ``B_ell`` defaults to the
    realised tail norm ``||theta_ell||`` (available in simulation).  The
    horizon entering the regulariser and the width multiplier is the
    phase-2 length.
    """
    T = int(T)
    T1 = _resolve_t1(env, r, T, T1)
    T2 = T - T1
    rng = as_generator(seed)
    m, n = env.shape
    entries = env.M.entries
    mx = float(np.max(np.abs(entries)))
    ctx1, arms1, est = _phase_one(env, T1, r, rng, oracle)
    ext = ExtendedFeatureSystem(est, entries)
    d, D = ext.d, ext.dim
    if B2 is None:
        B2 = math.sqrt(m * n) * mx
    if B_ell is None:
        B_ell = float(np.linalg.norm(ext.theta_ell))
    lam = B2**-2
    lam_p = lambda_perp(T2, d, lam)
    sigma = effective_sigma(env.sigma_noise, mx, sigma_floor)
    beta = almost_lowd_beta(sigma, T2, m, n, 1.0 / T, B2, B_ell, lam, lam_p)
    diag = np.concatenate([np.full(d, lam), np.full(D - d, lam_p)])
    learner = SupLinUCB(D, T2, beta, diag, record=record)
    F = ext.matrix()
    ctx2, arms2, reg2 = _run_phase_two(env, learner, lambda i: F[i * n:(i + 1) * n], T2, rng)
    reg1 = _greedy_regret(entries)[ctx1, arms1]
    return RegretTrace(
        np.concatenate([reg1, reg2]),
        np.concatenate([np.ones(T1, dtype=np.int8), np.full(T2, 2, dtype=np.int8)]),
        np.concatenate([ctx1, ctx2]),
        np.concatenate([arms1, arms2]),
        T1,
        learner,
        {"beta": beta, "lambda": lam, "lambda_perp": lam_p, "B2": B2, "B_ell": B_ell, "d": d},
    )
