"""The stochastic contextual bandit: contexts, policies, reward sampling, policy values.

Indices are 0-based throughout the Python API; CSV exports are 1-based.
"""
import csv
from dataclasses import dataclass

import numpy as np

from ._validation import check_distribution, check_policy
from .lowrank import LowRankMatrix
from .rng import as_generator


def _entries(M):
    return M.entries if isinstance(M, LowRankMatrix) else np.asarray(M, dtype=np.float64)


def uniform_policy(m, n):
    return np.full((m, n), 1.0 / n)


def uniform_context(m):
    return np.full(m, 1.0 / m)


def deterministic_policy(arms, n):
    """One-hot policy matrix choosing ``arms[i]`` in context ``i``."""
    arms = np.asarray(arms, dtype=np.int64)
    pi = np.zeros((arms.shape[0], n))
    pi[np.arange(arms.shape[0]), arms] = 1.0
    return pi


def joint_distribution(rho, pi):
    """``omega[i, j] = rho[i] * pi(j | i)``."""
    rho = check_distribution(rho)
    pi = check_policy(pi)
    return rho[:, None] * pi


def policy_value(M, rho, pi):
    entries = _entries(M)
    pi = check_policy(pi, shape=entries.shape)
    rho = check_distribution(rho, size=entries.shape[0])
    return float(np.sum(rho[:, None] * pi * entries))


def greedy_arms(A):
    """Row-wise argmax, ties broken towards the smallest index."""
    return np.argmax(np.asarray(A), axis=1)


def optimal_policy(M, rho):
    """Deterministic optimal policy and its value."""
    entries = _entries(M)
    pi = deterministic_policy(greedy_arms(entries), entries.shape[1])
    return pi, policy_value(entries, rho, pi)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Logged samples ``(contexts[t], arms[t], rewards[t])``."""

    contexts: np.ndarray
    arms: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        if not (len(self.contexts) == len(self.arms) == len(self.rewards)):
            raise ValueError("trajectory columns have different lengths")

    def __len__(self):
        return len(self.rewards)

    @property
    def T(self):
        return len(self.rewards)

    @property
    def X(self):
        """``(T, 2)`` array of ``(context, arm)`` pairs, the estimator input."""
        return np.column_stack([self.contexts, self.arms])

    def head(self, k):
        return Trajectory(self.contexts[:k], self.arms[:k], self.rewards[:k])

    def tail(self, k):
        """Samples ``k, k+1, ...`` (0-based), i.e. all but the first ``k``."""
        return Trajectory(self.contexts[k:], self.arms[k:], self.rewards[k:])

    def subset(self, mask):
        return Trajectory(self.contexts[mask], self.arms[mask], self.rewards[mask])

    def to_csv(self, path):
        """Write columns ``t,i,j,r`` with 1-based indices."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "i", "j", "r"])
            for t, (i, j, r) in enumerate(zip(self.contexts, self.arms, self.rewards), start=1):
                w.writerow([t, int(i) + 1, int(j) + 1, f"{r:.17g}"])

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(
            data[:, 1].astype(np.int64) - 1,
            data[:, 2].astype(np.int64) - 1,
            data[:, 3].astype(np.float64),
        )


def draw_noise(rng, size, sigma_noise, noise="gaussian"):
    if sigma_noise == 0:
        return np.zeros(size)
    if noise == "gaussian":
        return rng.normal(0.0, sigma_noise, size=size)
    if noise == "uniform":
        # bounded noise with standard deviation sigma_noise
        half = sigma_noise * np.sqrt(3.0)
        return rng.uniform(-half, half, size=size)
    raise ValueError(f"unknown noise family {noise!r}")


def sample_trajectory(M, rho, behavior, sigma_noise, T, seed=None, noise="gaussian"):
    """Draw ``T`` i.i.d. samples with ``i ~ rho``, ``j ~ behavior(. | i)``."""
    entries = _entries(M)
    m, n = entries.shape
    T = int(T)
    if T < 1:
        raise ValueError("T must be at least 1")
    if sigma_noise < 0:
        raise ValueError("sigma_noise must be nonnegative")
    rng = as_generator(seed)
    rho = check_distribution(rho, size=m)
    behavior = check_policy(behavior, shape=(m, n), name="behavior")
    omega = (rho[:, None] * behavior).ravel()
    cells = rng.choice(m * n, size=T, p=omega / omega.sum())
    i, j = np.divmod(cells, n)
    r = entries[i, j] + draw_noise(rng, T, sigma_noise, noise)
    return Trajectory(i, j, r)


def estimate_context_dist(traj, m):
    """Empirical context frequencies; unseen contexts get probability 0."""
    if traj.T < 1:
        raise ValueError("empty trajectory")
    return np.bincount(traj.contexts, minlength=m)[:m] / traj.T


@dataclass(frozen=True, eq=False)
class Environment:
    """Reward matrix, context distribution and noise level of a simulated bandit."""

    M: LowRankMatrix
    rho: np.ndarray
    sigma_noise: float = 1.0
    noise: str = "gaussian"

    @property
    def shape(self):
        return self.M.shape

    def sample(self, behavior, T, seed=None):
        return sample_trajectory(self.M, self.rho, behavior, self.sigma_noise, T, seed, self.noise)

    def context_stream(self, T, rng):
        return rng.choice(self.M.m, size=T, p=self.rho)

    def reward(self, i, j, rng):
        return self.M.entries[i, j] + draw_noise(rng, np.shape(i), self.sigma_noise, self.noise)
