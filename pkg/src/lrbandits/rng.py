"""Seed handling. Every stochastic routine accepts an int seed or a Generator."""
import numpy as np


def as_generator(seed=None):
    """Return a PCG64 ``Generator``; existing generators pass through unchanged."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is not None and int(seed) < 0:
        raise ValueError("seeds must be nonnegative")
    return np.random.Generator(np.random.PCG64(seed))


def replicate_seed(base_seed, k):
    """Seed of the k-th replicate (0-based) of an experiment."""
    return int(base_seed) + int(k)


def spawn(seed, n):
    """Split ``seed`` into ``n`` independent child generators."""
    ss = np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.PCG64(c)) for c in ss.spawn(n)]


def stream(seed, *keys):
    """Generator keyed by ``seed`` and extra integers, e.g. a sweep-point index."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))
