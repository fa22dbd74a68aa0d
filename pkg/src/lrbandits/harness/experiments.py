"""Experiment sweeps producing raw per-replicate rows and quantile summaries.

Replicate ``k`` uses seed ``base_seed + k``.  Within a replicate, sweep point
``p`` draws from the stream keyed by ``(seed, p)``, so rows do not depend on
the number of workers or on which other points are run.  The reward matrix
is drawn once per size from ``instance_seed`` (default ``base_seed``).
"""
import csv
import dataclasses
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..bpi import rsbpi, sbpi, tilde_argmax
from ..environment import (
    Environment,
    joint_distribution,
    optimal_policy,
    sample_trajectory,
    uniform_context,
    uniform_policy,
)
from ..lowrank import gen_all_ones, gen_pdq
from ..policy_eval import (
    fit_two_phase,
    instance_quantities,
    rspe_asymptotic_error,
    target_weights,
    true_value,
)
from ..regret import rs_rmin
from ..rng import replicate_seed, stream
from ..spectral import build_m_tilde, truncated_svd

OVERLAY_ALPHA = 0.8


@lru_cache(maxsize=32)
def _instance(kind, m, n, r, seed):
    if kind == "all_ones":
        return gen_all_ones(m, n)
    return gen_pdq(m, n, r, seed=seed)


@dataclass(frozen=True, eq=False)
class Setting:
    """Instance, distributions and target for one matrix size."""

    M: object
    rho: np.ndarray
    behavior: np.ndarray
    omega: np.ndarray
    target: np.ndarray
    v_true: float


def setting(cfg, m, n):
    M = _instance(cfg.instance, m, n, cfg.r, cfg.resolved_instance_seed)
    rho, behavior = uniform_context(m), uniform_policy(m, n)
    target, _ = optimal_policy(M, rho)
    omega = joint_distribution(rho, behavior)
    return Setting(M, rho, behavior, omega, target, true_value(M, omega, target))


def _split(alpha, T):
    return int(math.floor(alpha * T))


def _pe_values(cfg, s, traj, T1, tau, which=("IPS", "SIPS", "RSPE")):
    """Plug-in values of the requested estimators on one trajectory."""
    m, n = s.omega.shape
    w = target_weights(s.omega, s.target)
    M_tilde = s.M.entries if cfg.oracle else build_m_tilde(traj, s.omega, m, n)
    out = {}
    if "IPS" in which:
        out["IPS"] = float(np.sum(w * M_tilde))
    if "SIPS" in which:
        out["SIPS"] = float(np.sum(w * truncated_svd(M_tilde, cfg.r).M_hat))
    if "RSPE" in which:
        M_bar = fit_two_phase(traj, s.omega, cfg.r, T1, tau, M_tilde=M_tilde if cfg.oracle else None)[3]
        out["RSPE"] = float(np.sum(w * M_bar))
    return out


def _pe_row(est, T, T1, tau, seed, v_true, v_hat):
    return [est, T, T1, tau, seed, v_true, v_hat, abs(v_hat - v_true)]


PE_HEADER = ["estimator", "T", "T1", "tau", "seed", "v_true", "v_hat", "abs_err"]


def _rep_pe_vs_T(cfg, seed):
    s = setting(cfg, cfg.m, cfg.n_arms)
    rows = []
    for p, T in enumerate(cfg.T_grid):
        traj = sample_trajectory(s.M, s.rho, s.behavior, cfg.sigma_noise, T, stream(seed, p))
        T1 = _split(cfg.split_alpha, T)
        for est, v in _pe_values(cfg, s, traj, T1, cfg.tau).items():
            rows.append(_pe_row(est, T, T1, cfg.tau, seed, s.v_true, v))
    return rows


def _rep_pe_split(cfg, seed):
    s = setting(cfg, cfg.m, cfg.n_arms)
    rows = []
    for p, T in enumerate(cfg.T_grid):
        traj = sample_trajectory(s.M, s.rho, s.behavior, cfg.sigma_noise, T, stream(seed, p))
        for alpha in cfg.alpha_grid:
            T1 = _split(alpha, T)
            v = _pe_values(cfg, s, traj, T1, cfg.tau, ("RSPE",))["RSPE"]
            rows.append(_pe_row("RSPE", T, T1, cfg.tau, seed, s.v_true, v))
    return rows


def _rep_pe_regularization(cfg, seed):
    s = setting(cfg, cfg.m, cfg.n_arms)
    rows = []
    for p, T in enumerate(cfg.T_grid):
        traj = sample_trajectory(s.M, s.rho, s.behavior, cfg.sigma_noise, T, stream(seed, p))
        T1 = _split(cfg.split_alpha, T)
        for tau in cfg.tau_grid:
            v = _pe_values(cfg, s, traj, T1, tau, ("RSPE",))["RSPE"]
            rows.append(_pe_row("RSPE", T, T1, tau, seed, s.v_true, v))
    return rows


def _rep_pe_vs_m(cfg, seed):
    rows = []
    p = 0
    for m, n in cfg.sizes:
        s = setting(cfg, m, n)
        for T in cfg.T_grid:
            traj = sample_trajectory(s.M, s.rho, s.behavior, cfg.sigma_noise, T, stream(seed, p))
            p += 1
            T1 = _split(cfg.split_alpha, T)
            for est, v in _pe_values(cfg, s, traj, T1, cfg.tau).items():
                rows.append(_pe_row(est, T, T1, cfg.tau, seed, s.v_true, v) + [m, n])
    return rows


MAXNORM_HEADER = ["estimator", "m", "n", "T", "seed", "max_err"]


def maxnorm_errors(cfg, s, traj, T1, tau):
    m, n = s.omega.shape
    entries = s.M.entries
    M_tilde = entries if cfg.oracle else build_m_tilde(traj, s.omega, m, n)
    sub, _, _, M_bar = fit_two_phase(traj, s.omega, cfg.r, T1, tau, M_tilde=M_tilde if cfg.oracle else None)
    M_hat = truncated_svd(M_tilde, cfg.r).M_hat
    return {
        "M_tilde": float(np.max(np.abs(entries - M_tilde))),
        "M_hat": float(np.max(np.abs(entries - M_hat))),
        "M_bar": float(np.max(np.abs(entries - M_bar))),
    }


def _rep_maxnorm_vs_m(cfg, seed):
    rows = []
    p = 0
    for m, n in cfg.sizes:
        s = setting(cfg, m, n)
        for T in cfg.T_grid:
            traj = sample_trajectory(s.M, s.rho, s.behavior, cfg.sigma_noise, T, stream(seed, p))
            p += 1
            for est, err in maxnorm_errors(cfg, s, traj, _split(cfg.split_alpha, T), cfg.tau).items():
                rows.append([est, m, n, T, seed, err])
    return rows


BPI_HEADER = ["algorithm", "T", "seed", "gap", "v_star", "v_hat"]


def _rep_bpi_vs_T(cfg, seed):
    s = setting(cfg, cfg.m, cfg.n_arms)
    rows = []
    for p, T in enumerate(cfg.T_grid):
        traj = sample_trajectory(s.M, s.rho, s.behavior, cfg.sigma_noise, T, stream(seed, p))
        M_tilde = s.M.entries if cfg.oracle else None
        results = [
            tilde_argmax(traj, s.omega, M=s.M) if not cfg.oracle else None,
            sbpi(traj, s.omega, cfg.r, M=s.M, M_tilde=M_tilde),
            rsbpi(traj, s.omega, cfg.r, _split(cfg.split_alpha, T), cfg.tau, M=s.M, M_tilde=M_tilde),
        ]
        for res in results:
            if res is not None:
                rows.append([res.algorithm_id, T, seed, res.gap, res.v_star, res.v_hat])
    return rows


REGRET_HEADER = ["T", "seed", "cum_regret", "T1"]


def _rep_regret_vs_T(cfg, seed):
    s = setting(cfg, cfg.m, cfg.n_arms)
    env = Environment(s.M, s.rho, cfg.sigma_noise)
    rows, traces = [], []
    for p, T in enumerate(cfg.T_grid):
        tr = rs_rmin(env, cfg.r, T, T1=cfg.T1, seed=stream(seed, p), oracle=cfg.oracle)
        rows.append([T, seed, tr.total, tr.T1])
        # the learner state is not needed downstream and is costly to ship between processes
        traces.append((T, seed, dataclasses.replace(tr, learner=None, meta={}) if cfg.traces else None))
    return rows, traces


RUNNERS = {
    "pe_split": (_rep_pe_split, PE_HEADER),
    "pe_regularization": (_rep_pe_regularization, PE_HEADER),
    "pe_vs_T": (_rep_pe_vs_T, PE_HEADER),
    "pe_vs_m": (_rep_pe_vs_m, PE_HEADER + ["m", "n"]),
    "maxnorm_vs_m": (_rep_maxnorm_vs_m, MAXNORM_HEADER),
    "bpi_vs_T": (_rep_bpi_vs_T, BPI_HEADER),
    "regret_vs_T": (_rep_regret_vs_T, REGRET_HEADER),
}

# (grouping columns, metric column) of each raw table
SUMMARY_SPEC = {
    "pe_split": (["estimator", "T", "T1", "tau"], "abs_err"),
    "pe_regularization": (["estimator", "T", "T1", "tau"], "abs_err"),
    "pe_vs_T": (["estimator", "T", "T1", "tau"], "abs_err"),
    "pe_vs_m": (["estimator", "m", "n", "T", "T1", "tau"], "abs_err"),
    "maxnorm_vs_m": (["estimator", "m", "n", "T"], "max_err"),
    "bpi_vs_T": (["algorithm", "T"], "gap"),
    "regret_vs_T": (["T", "T1"], "cum_regret"),
}


def _replicate(args):
    cfg, k = args
    out = RUNNERS[cfg.experiment_id][0](cfg, replicate_seed(cfg.base_seed, k))
    if cfg.experiment_id != "regret_vs_T":
        out = (out, [])
    return out


def nearest_rank(values, q):
    """Nearest-rank quantile: the ``ceil(q N)``-th smallest value (1-based)."""
    xs = sorted(values)
    if not xs:
        raise ValueError("empty sample")
    k = max(1, math.ceil(q * len(xs)))
    return xs[k - 1]


def summarize(header, rows, keys, metric):
    idx = [header.index(k) for k in keys]
    mi = header.index(metric)
    groups = {}
    for row in rows:
        groups.setdefault(tuple(row[i] for i in idx), []).append(row[mi])
    out = []
    for key, vals in groups.items():
        out.append(list(key) + [len(vals), nearest_rank(vals, 0.5), nearest_rank(vals, 0.05), nearest_rank(vals, 0.95)])
    return keys + ["n_seeds", "median", "q05", "q95"], out


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


@dataclass
class ExperimentResult:
    raw_header: list
    raw_rows: list
    summary_header: list
    summary_rows: list
    paths: dict = field(default_factory=dict)
    traces: list = field(default_factory=list)


def _add_overlay(cfg, header, rows):
    """Append the asymptotic RS-PE error curve to PE-vs-T summaries."""
    if cfg.experiment_id not in ("pe_vs_T", "pe_split"):
        return header, rows
    s = setting(cfg, cfg.m, cfg.n_arms)
    psi_norm = instance_quantities(s.M, s.omega, s.target).psi_pi_norm
    omega_min = float(s.omega.min())
    alpha = OVERLAY_ALPHA if cfg.experiment_id == "pe_split" else 0.0
    ti = header.index("T")
    for row in rows:
        row.append(rspe_asymptotic_error(psi_norm, omega_min, cfg.delta, row[ti], alpha))
    return header + ["bound"], rows


def run_experiment(cfg, jobs=1, out_dir=None, write=True):
    """Run every replicate of ``cfg`` and write ``<id>_raw.csv`` and ``<id>_summary.csv``.

    Output bytes do not depend on ``jobs``.
    """
    tasks = [(cfg, k) for k in range(cfg.seeds)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_replicate, tasks))
    else:
        results = [_replicate(t) for t in tasks]
    header = RUNNERS[cfg.experiment_id][1]
    raw = [row for rows, _ in results for row in rows]
    traces = [tr for _, trs in results for tr in trs]
    keys, metric = SUMMARY_SPEC[cfg.experiment_id]
    s_header, s_rows = summarize(header, raw, keys, metric)
    s_header, s_rows = _add_overlay(cfg, s_header, s_rows)
    res = ExperimentResult(header, raw, s_header, s_rows, traces=traces)
    if write:
        out = out_dir or cfg.output_path
        os.makedirs(out, exist_ok=True)
        eid = cfg.experiment_id
        res.paths["raw"] = os.path.join(out, f"{eid}_raw.csv")
        res.paths["summary"] = os.path.join(out, f"{eid}_summary.csv")
        write_csv(res.paths["raw"], header, raw)
        write_csv(res.paths["summary"], s_header, s_rows)
        kept = [t for t in traces if t[2] is not None]
        if kept:
            tdir = os.path.join(out, "traces")
            os.makedirs(tdir, exist_ok=True)
            for T, seed, tr in kept:
                tr.to_csv(os.path.join(tdir, f"{eid}_T{T}_seed{seed}.csv"))
            res.paths["traces"] = tdir
    return res
