import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lrbandits.exceptions import RankMismatch
from lrbandits.lowrank import fix_signs, from_entries, gen_all_ones, gen_pdq, two_to_inf

dims = st.integers(min_value=2, max_value=25)


def test_from_entries_reconstructs():
    M = gen_pdq(7, 5, 2, seed=0)
    rel = np.max(np.abs(M.reconstruct() - M.entries)) / M.max_norm
    assert rel < 1e-9
    assert M.shape == (7, 5) and M.rank == 2
    assert M.U.shape == (7, 2) and M.U_perp.shape == (7, 5)
    assert M.V.shape == (5, 2) and M.V_perp.shape == (5, 3)


def test_from_entries_rejects_wrong_rank():
    A = gen_pdq(6, 6, 3, seed=1).entries
    with pytest.raises(RankMismatch):
        from_entries(A, 2)
    with pytest.raises(RankMismatch):
        from_entries(A, 4)
    with pytest.raises(RankMismatch):
        from_entries(np.zeros((3, 3)), 1)


def test_entries_are_read_only():
    M = gen_all_ones(3, 4)
    with pytest.raises(ValueError):
        M.entries[0, 0] = 2.0


def test_all_ones_quantities():
    M = gen_all_ones(4, 9)
    assert M.mu == pytest.approx(1.0, abs=1e-12)
    assert M.sigma1 == pytest.approx(6.0, abs=1e-12)
    assert M.kappa == 1.0
    assert M.max_norm / M.sigma1 == pytest.approx(1 / 6, abs=1e-12)
    assert np.allclose(np.abs(M.U), 0.5)


def test_pdq_deterministic_and_seed_sensitive():
    a, b, c = gen_pdq(8, 6, 2, seed=3), gen_pdq(8, 6, 2, seed=3), gen_pdq(8, 6, 2, seed=4)
    assert np.array_equal(a.entries, b.entries)
    assert not np.array_equal(a.entries, c.entries)


def test_pdq_matches_direct_construction():
    # independent construction of P D Q with a full diagonal D
    rng = np.random.Generator(np.random.PCG64(11))
    P = rng.uniform(size=(5, 5))
    Q = rng.uniform(size=(4, 4))
    np.fill_diagonal(P, P.sum(axis=1))
    np.fill_diagonal(Q, Q.sum(axis=1))
    D = np.zeros((5, 4))
    D[0, 0] = D[1, 1] = 1.0
    assert np.allclose(gen_pdq(5, 4, 2, seed=11).entries, P @ D @ Q, atol=1e-12)


def test_two_to_inf_brute_force(rng):
    A = rng.normal(size=(6, 3))
    assert two_to_inf(A) == pytest.approx(max(np.linalg.norm(row) for row in A))
    assert two_to_inf(np.zeros((0, 3))) == 0.0


def test_fix_signs_makes_dominant_entry_positive(rng):
    U, _ = np.linalg.qr(rng.normal(size=(6, 3)))
    V, _ = np.linalg.qr(rng.normal(size=(5, 3)))
    U2, V2 = fix_signs(-U, -V)
    idx = np.argmax(np.abs(U2), axis=0)
    assert np.all(U2[idx, np.arange(3)] > 0)
    assert np.allclose(U2 @ V2.T, U @ V.T)


@given(m=dims, n=dims, r=st.integers(1, 4), seed=st.integers(0, 10_000))
def test_spikiness_sandwich(m, n, r, seed):
    r = min(r, m, n)
    M = gen_pdq(m, n, r, seed=seed)
    ratio = M.max_norm / M.sigma1
    lo = 1 / np.sqrt(m * n)
    hi = M.mu**2 * r / np.sqrt(m * n)
    assert lo * (1 - 1e-12) <= ratio <= hi * (1 + 1e-12)


@given(m=dims, n=dims, r=st.integers(1, 4), seed=st.integers(0, 10_000))
def test_spectral_invariants(m, n, r, seed):
    r = min(r, m, n)
    M = gen_pdq(m, n, r, seed=seed)
    s = M.summary(sigma_noise=0.5)
    assert 1 - 1e-12 <= s.mu <= np.sqrt(max(m, n) / r) + 1e-12
    assert s.kappa >= 1
    assert s.L == max(M.max_norm, 0.5)
    assert np.allclose(M.U.T @ M.U, np.eye(r), atol=1e-10)
    full = np.hstack([M.V, M.V_perp])
    assert np.allclose(full.T @ full, np.eye(n), atol=1e-10)
