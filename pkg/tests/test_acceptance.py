"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line (also repeated in the pytest
terminal summary) and then asserts the criterion at its stated tolerance.
"""
import math
import time

import mpmath
import numpy as np
import pytest

from lrbandits.bpi import rsbpi, sbpi
from lrbandits.environment import (
    Environment,
    joint_distribution,
    optimal_policy,
    sample_trajectory,
    uniform_context,
    uniform_policy,
)
from lrbandits.harness.config import default_config
from lrbandits.harness.experiments import run_experiment
from lrbandits.lowrank import gen_all_ones, gen_pdq
from lrbandits.policy_eval import kl_bernoulli, lower_bound_quantity, rspe_estimate, target_weights, true_value
from lrbandits.reduction import SubspaceFeatures, build_true_features, misspec_chain
from lrbandits.regret import replay_check, rs_rmin
from lrbandits.spectral import truncated_svd

mpmath.mp.dps = 50

KL_05_95 = 2.649995081249796414  # mpmath, 50 digits
BETA_REF = 8.142934632170233874596535  # sigma=1, T2=1e4, m=n=20, d=76, delta=1e-4


def _random_instances(count, seed, m_range=(3, 30), r_max=4):
    g = np.random.default_rng(seed)
    for _ in range(count):
        m, n = (int(x) for x in g.integers(m_range[0], m_range[1] + 1, size=2))
        r = int(g.integers(1, min(r_max, m, n) + 1))
        yield gen_pdq(m, n, r, seed=g)


def _summary(res, key_cols):
    h = res.summary_header
    idx = [h.index(k) for k in key_cols]
    med = h.index("median")
    return {tuple(row[i] for i in idx): row[med] for row in res.summary_rows}


def test_criterion_1_algebraic_identities(report):
    t0 = time.perf_counter()
    worst = dict(gram=0.0, psi=0.0, decomp=0.0, proj=0.0)
    g = np.random.default_rng(101)
    for M in _random_instances(100, 1):
        m, n = M.shape
        est = truncated_svd(M.entries + 0.3 * g.normal(size=(m, n)), M.rank)
        feats = SubspaceFeatures.from_estimate(est)
        I_d = np.eye(feats.d)
        worst["gram"] = max(worst["gram"], np.abs(feats.gram(np.ones((m, n))) - I_d).max())
        psi = build_true_features(M).features
        worst["psi"] = max(worst["psi"], np.abs(psi.gram(np.ones((m, n))) - I_d).max())
        recon = feats.predict(feats.project(M)) + feats.residual(M)
        worst["decomp"] = max(worst["decomp"], np.abs(recon - M.entries).max())
        P = est.U_hat @ est.U_hat.T + est.U_perp @ est.U_perp.T
        worst["proj"] = max(worst["proj"], np.abs(P - np.eye(m)).max())
    elapsed = time.perf_counter() - t0
    ok = (worst["gram"] <= 1e-9 and worst["psi"] <= 1e-9 and worst["decomp"] <= 1e-9
          and worst["proj"] <= 1e-10 and elapsed < 30)
    detail = ", ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f", {elapsed:.1f}s"
    assert report(1, ok, detail)


def test_criterion_2_spikiness_sandwich(report):
    bad = 0
    count = 0
    for M in _random_instances(100, 2):
        m, n = M.shape
        ratio = M.max_norm / M.sigma1
        lo, hi = 1 / math.sqrt(m * n), M.mu**2 * M.rank / math.sqrt(m * n)
        count += 1
        bad += not (lo * (1 - 1e-12) <= ratio <= hi * (1 + 1e-12))
    ones_err = 0.0
    for m, n in [(1, 1), (3, 7), (20, 20), (31, 5), (120, 120)]:
        M = gen_all_ones(m, n)
        ones_err = max(ones_err, abs(M.max_norm / M.sigma1 - 1 / math.sqrt(m * n)))
        count += 1
        bad += not (M.max_norm / M.sigma1 <= M.mu**2 / math.sqrt(m * n) * (1 + 1e-12))
    ok = bad == 0 and ones_err <= 1e-12
    assert report(2, ok, f"{count - bad}/{count} instances inside, all-ones gap {ones_err:.1e}")


def test_criterion_3_misspecification_chain(report):
    g = np.random.default_rng(303)
    violations, oracle_worst = 0, 0.0
    for k, M in enumerate(_random_instances(100, 3)):
        m, n = M.shape
        scale = 10.0 ** g.uniform(-3, 0) * M.sigma_r
        est = truncated_svd(M.entries + scale * g.normal(size=(m, n)) / math.sqrt(m + n), M.rank)
        eps_max, middle, outer = misspec_chain(est, M)
        tol = 1e-12 * M.sigma1
        violations += not (eps_max <= middle + tol and middle <= outer + tol)
        oracle_worst = max(oracle_worst, misspec_chain(truncated_svd(M.entries, M.rank), M)[0])
    ok = violations == 0 and oracle_worst <= 1e-10
    assert report(3, ok, f"{violations} chain violations in 100, oracle eps_max {oracle_worst:.1e}")


def test_criterion_4_oracle_end_to_end(report):
    t0 = time.perf_counter()
    M = gen_pdq(10, 10, 2, seed=4)
    rho, behavior = uniform_context(10), uniform_policy(10, 10)
    omega = joint_distribution(rho, behavior)
    target, _ = optimal_policy(M, rho)
    v = true_value(M, omega, target)
    traj = sample_trajectory(M, rho, behavior, 0.0, 2000, seed=4)
    est = rspe_estimate(traj, omega, target, 2, T1=0, tau=1e-12, M_tilde=M.entries)
    pe_err = abs(est.value - v)
    gap_s = sbpi(traj, omega, 2, M=M, M_tilde=M.entries).gap
    gap_r = rsbpi(traj, omega, 2, T1=0, tau=1e-12, M=M, M_tilde=M.entries).gap
    env = Environment(M, rho, 0.0)
    tr = rs_rmin(env, 2, 6000, T1=1000, seed=4, oracle=True)
    phase2 = tr.inst_regret[tr.T1:]
    nz = np.flatnonzero(phase2)
    last_nz = int(nz[-1]) + 1 if len(nz) else 0
    zero_tail = last_nz < len(phase2) and np.all(phase2[-1000:] == 0)
    elapsed = time.perf_counter() - t0
    ok = pe_err <= 1e-6 and gap_s == 0 and gap_r == 0 and zero_tail and elapsed < 10
    detail = (f"RS-PE err {pe_err:.1e}, gaps {gap_s:g}/{gap_r:g}, last phase-2 regret at round"
              f" {last_nz} of {len(phase2)}, {elapsed:.1f}s")
    assert report(4, ok, detail)


def test_criterion_5_lower_bound_invariance(report):
    g = np.random.default_rng(505)
    M = gen_pdq(12, 9, 3, seed=5)
    rho, behavior = uniform_context(12), uniform_policy(12, 9)
    omega = joint_distribution(rho, behavior)
    omega_pi = target_weights(omega, optimal_policy(M, rho)[0])
    root = np.sqrt(M.singular_values)
    P, Q = M.U * root, M.V * root
    base = lower_bound_quantity(omega, omega_pi, P, Q)
    drift = 0.0
    for _ in range(50):
        R = g.normal(size=(3, 3)) + 3 * np.eye(3)
        L = lower_bound_quantity(omega, omega_pi, P @ R, Q @ np.linalg.inv(R).T)
        drift = max(drift, abs(L - base) / abs(base))
    kl_ok = all(kl_bernoulli(d, 1 - d) >= math.log(1 / (2.4 * d)) for d in (0.2, 0.1, 0.05, 0.01))
    ref = float(mpmath.mpf("0.9") * mpmath.log(19))
    kl_err = abs(kl_bernoulli(0.05, 0.95) - KL_05_95)
    ok = drift <= 1e-8 and kl_ok and kl_err <= 1e-10 and abs(ref - KL_05_95) <= 1e-15
    assert report(5, ok, f"relative drift {drift:.1e}, kl inequality {kl_ok}, kl(0.05,0.95) err {kl_err:.1e}")


def _slope(Ts, ys):
    return float(np.polyfit(np.log(Ts), np.log(ys), 1)[0])


def test_criterion_6_pe_vs_T(report):
    t0 = time.perf_counter()
    Ts = (2000, 10000, 50000)
    cfg = default_config("pe_vs_T", m=30, r=2, seeds=20, T_grid=Ts, tau=1e-4, split_alpha=0.0, sigma_noise=1.0)
    med = _summary(run_experiment(cfg, write=False), ["estimator", "T"])
    Tmax = Ts[-1]
    order_ok = med["RSPE", Tmax] < med["SIPS", Tmax] and med["RSPE", Tmax] < med["IPS", Tmax]
    slope = _slope(Ts, [med["RSPE", T] for T in Ts])
    elapsed = time.perf_counter() - t0
    ok = order_ok and -0.70 <= slope <= -0.30 and elapsed < 300
    detail = (f"medians at T={Tmax}: RSPE {med['RSPE', Tmax]:.3g}, SIPS {med['SIPS', Tmax]:.3g},"
              f" IPS {med['IPS', Tmax]:.3g}; RSPE slope {slope:.3f}; {elapsed:.0f}s")
    assert report(6, ok, detail)


def test_criterion_7_maxnorm_vs_m(report):
    t0 = time.perf_counter()
    ms = (20, 40, 80, 120)
    cfg = default_config("maxnorm_vs_m", instance="all_ones", r=1, m_grid=ms, T_grid=(10000,), seeds=20)
    med = _summary(run_experiment(cfg, write=False), ["estimator", "m"])
    chain_ok = all(med["M_bar", m] <= med["M_hat", m] <= med["M_tilde", m] for m in ms)
    elapsed = time.perf_counter() - t0
    ok = chain_ok and elapsed < 300
    detail = "; ".join(f"m={m}: {med['M_bar', m]:.3g} <= {med['M_hat', m]:.3g} <= {med['M_tilde', m]:.3g}"
                       for m in ms) + f"; {elapsed:.0f}s"
    assert report(7, ok, detail)


def test_criterion_8_bpi_vs_T(report):
    Ts = (2000, 10000, 50000)
    cfg = default_config("bpi_vs_T", m=30, r=2, seeds=20, T_grid=Ts)
    med = _summary(run_experiment(cfg, write=False), ["algorithm", "T"])
    algs = ("TILDE", "SBPI", "RSBPI")
    mono = all(med[a, s] >= med[a, t] for a in algs for s, t in zip(Ts, Ts[1:]))
    T = Ts[-1]
    order = med["RSBPI", T] <= med["SBPI", T] <= med["TILDE", T]
    detail = "; ".join(f"{a}: " + "/".join(f"{med[a, t]:.3g}" for t in Ts) for a in algs)
    assert report(8, mono and order, detail)


@pytest.fixture(scope="module")
def regret_runs():
    t0 = time.perf_counter()
    M = gen_pdq(20, 20, 2, seed=0)
    env = Environment(M, uniform_context(20), 1.0)
    runs = [rs_rmin(env, 2, 20000, seed=s, record=True) for s in range(10)]
    return env, runs, time.perf_counter() - t0


def test_criterion_9_regret_sublinear(report, regret_runs):
    env, runs, elapsed = regret_runs
    T = runs[0].T
    T1 = runs[0].T1
    q2 = (T - T1) // 4
    final = np.median([tr.inst_regret[-(T // 4):].mean() for tr in runs])
    early = np.median([tr.inst_regret[T1:T1 + q2].mean() for tr in runs])
    phase1 = np.median([tr.inst_regret[:T1].mean() for tr in runs])
    ok = final < early and final < phase1 and elapsed < 300
    detail = (f"T1={T1}; per-round regret medians: phase 1 {phase1:.3g}, first quarter of phase 2"
              f" {early:.3g}, final quarter {final:.3g}; {elapsed:.0f}s")
    assert report(9, ok, detail)


def _mp_beta(sigma, T2, m, n, d, delta):
    k = mpmath.ceil(mpmath.log(mpmath.mpf(T2) / d) / 2)
    return sigma * (1 + mpmath.sqrt(2 * mpmath.log(mpmath.mpf(T2) * m * n / mpmath.mpf(delta) * k)))


def test_criterion_10_suplinucb_replay(report, regret_runs):
    env, runs, _ = regret_runs
    m, n = env.shape
    problems = []
    beta_err = lam_err = 0.0
    for tr in runs:
        problems += replay_check(tr.learner)
        T2 = tr.T - tr.T1
        sigma = mpmath.mpf(tr.meta["sigma_eff"])
        beta_ref = _mp_beta(sigma, T2, m, n, tr.meta["d"], 1 / mpmath.mpf(tr.T))
        beta_err = max(beta_err, abs(float(beta_ref - tr.meta["beta"])))
        lam_ref = sigma**2 / (mpmath.mpf(env.M.max_norm) ** 2 * m * n)
        diag = np.diag(tr.learner.Lambda0)
        lam_err = max(lam_err, float(abs(lam_ref - tr.meta["lambda"])), float(np.max(np.abs(diag - float(lam_ref)))))
    ref_err = abs(float(_mp_beta(mpmath.mpf(1), 10**4, 20, 20, 76, mpmath.mpf("1e-4"))) - BETA_REF)
    ok = not problems and beta_err <= 1e-12 and lam_err <= 1e-12 and ref_err <= 1e-12
    detail = (f"{len(runs)} runs, {len(problems)} bookkeeping problems, beta err {beta_err:.1e},"
              f" Lambda err {lam_err:.1e}")
    assert report(10, ok, detail)
