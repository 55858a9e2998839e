"""End-to-end acceptance checks, one test per criterion.

Each test appends a ``PASS``/``FAIL`` line that is echoed in the pytest
terminal summary.  Run directly with ``python3 tests/test_acceptance.py``.
Set ``MAXSEM_WORKERS`` to spread simulation repetitions over processes.
"""
import math
import sys
import time
from dataclasses import replace
from functools import lru_cache

import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE_LINES
from maxsem.experiments import (Scenario, em_trace_study, loglog_slope, run_scenario,
                                settle_iteration, timing_curve)
from maxsem.gibbs import GibbsConfig, conditional_log_weights, gibbs_run
from maxsem.likelihood import (exact_partition_posterior, full_loglik_bruteforce,
                               logistic_full_loglik_recursive)
from maxsem.models import BrownResnickModel, LogisticModel
from maxsem.mvn import mvn_cdf
from maxsem.partition import enumerate_partitions
from maxsem.sem import SemConfig
from maxsem.simulate import sample_logistic, sample_model

pytestmark = pytest.mark.acceptance

SITES3 = np.array([[0.1, 0.2], [0.6, 0.3], [0.4, 0.9]])
SITES4 = np.array([[0.1, 0.2], [0.6, 0.3], [0.4, 0.9], [0.8, 0.7]])


def report(number, title, checks):
    """Record one criterion line; ``checks`` maps a description to ``(ok, detail)``."""
    ok = all(c[0] for c in checks.values())
    detail = "; ".join(f"{k}: {d}" for k, (_, d) in checks.items())
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def bell_triangle(n):
    row, out = [1], [1]
    for _ in range(n):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
        out.append(row[0])
    return out


# 1 -------------------------------------------------------------------------

def test_criterion_01_partition_enumeration():
    bell = bell_triangle(12)
    counts = {}
    for D in range(1, 12):
        counts[D] = sum(1 for _ in enumerate_partitions(D))
    t0 = time.perf_counter()
    counts[12] = sum(1 for _ in enumerate_partitions(12))
    secs = time.perf_counter() - t0
    report(1, "partition enumeration", {
        "counts==Bell(1..12)": (all(counts[D] == bell[D] for D in counts), f"Bell(12)={counts[12]}"),
        "terminal value": (counts[12] == 4_213_597, str(counts[12])),
        "D=12 time<30s": (secs < 30, f"{secs:.1f}s"),
    })


# 2 -------------------------------------------------------------------------

def test_criterion_02_recursive_equals_bruteforce():
    rng = np.random.default_rng(2)
    worst = 0.0
    t0 = time.perf_counter()
    for D in range(2, 9):
        for _ in range(100):
            theta = rng.uniform(0.05, 0.99)
            z = np.exp(rng.normal(scale=1.5, size=D))
            a = logistic_full_loglik_recursive(theta, z)
            b = full_loglik_bruteforce(LogisticModel(D, theta), z)
            worst = max(worst, abs(a - b) / abs(b))
    secs = time.perf_counter() - t0
    report(2, "recursive vs brute-force likelihood", {
        "max rel err<=1e-10": (worst <= 1e-10, f"{worst:.2e}"),
        "runtime<60s": (secs < 60, f"{secs:.1f}s"),
    })


# 3 -------------------------------------------------------------------------

def fd_partial(V, z, tau, h):
    z = np.asarray(z, float)
    if len(tau) == 1:
        e = np.zeros_like(z)
        e[tau[0]] = h * z[tau[0]]
        return -(V(z + e) - V(z - e)) / (2 * e[tau[0]])
    i, j = tau
    ei, ej = np.zeros_like(z), np.zeros_like(z)
    ei[i], ej[j] = h * z[i], h * z[j]
    return -(V(z + ei + ej) - V(z + ei - ej) - V(z - ei + ej) + V(z - ei - ej)) / (4 * ei[i] * ej[j])


def mc_partial_from_intensity(model, z, n, rng):
    """``-V_{01}(z) = int_0^{z_2} lambda(z_0, z_1, y) dy`` by uniform Monte Carlo."""
    y = rng.uniform(0.0, z[2], size=n)
    pts = np.column_stack([np.full(n, z[0]), np.full(n, z[1]), y])
    lam = np.exp(model.log_neg_V_blocks(pts, np.ones((n, 3), bool))) * z[2]
    return lam.mean(), lam.std(ddof=1) / math.sqrt(n)


def test_criterion_03_derivative_consistency():
    rng = np.random.default_rng(3)
    taus = [[0], [1], [3], [0, 1], [1, 2], [2, 3]]
    worst_l, worst_b = 0.0, 0.0
    for theta in (0.2, 0.5, 0.8):
        m = LogisticModel(4, theta)
        for _ in range(3):
            z = np.exp(rng.normal(scale=0.5, size=4))
            for tau in taus:
                # h=1e-3 balances O(h^2) truncation against roundoff on tiny mixed partials
                fd = fd_partial(m.exponent_V, z, tau, 1e-3)
                worst_l = max(worst_l, abs(m.neg_V_partial(z, tau) / fd - 1))
    br = BrownResnickModel(SITES4, 0.8, 1.2)
    for _ in range(3):
        z = np.exp(rng.normal(scale=0.5, size=4))
        for tau in taus:
            fd = fd_partial(br.exponent_V, z, tau, 1e-3)
            worst_b = max(worst_b, abs(br.neg_V_partial(z, tau) / fd - 1))
    mc = {}
    for name, m in (("logistic", LogisticModel(3, 0.5)), ("brown_resnick", BrownResnickModel(SITES3, 0.8, 1.2))):
        z = np.array([0.8, 1.3, 1.7])
        est, se = mc_partial_from_intensity(m, z, 200_000, rng)
        exact = m.neg_V_partial(z, [0, 1])
        mc[name] = (abs(est - exact) <= 3 * se, f"|diff|/SE={abs(est - exact) / se:.2f}")
    report(3, "derivative consistency", {
        "logistic FD rel<=1e-4": (worst_l <= 1e-4, f"{worst_l:.1e}"),
        "brown-resnick FD rel<=1e-2": (worst_b <= 1e-2, f"{worst_b:.1e}"),
        **{f"{k} MC intensity": v for k, v in mc.items()},
    })


# 4 -------------------------------------------------------------------------

def test_criterion_04_gibbs_stationarity():
    m = LogisticModel(4, 0.4)
    z = np.array([0.6, 1.1, 2.4, 0.9])
    parts, probs = exact_partition_posterior(m, z)
    chain = gibbs_run(m, z, config=GibbsConfig(n_keep=100_000), rng=np.random.default_rng(4))
    f = chain.frequencies()
    tv = 0.5 * sum(abs(f.get(p, 0.0) - q) for p, q in zip(parts, probs))

    m3 = LogisticModel(3, 0.4)
    z3 = np.array([0.7, 1.9, 1.2])
    parts3, pi = exact_partition_posterior(m3, z3)
    index = {p: i for i, p in enumerate(parts3)}
    P = np.zeros((len(parts3), len(parts3)))
    for p in parts3:
        for site in range(3):
            cands, lw = conditional_log_weights(m3, z3, p, site)
            w = np.exp(lw - np.logaddexp.reduce(lw))
            for c, wi in zip(cands, w):
                P[index[p], index[c]] += wi / 3
    resid = np.max(np.abs(pi @ P - pi))
    report(4, "Gibbs stationarity", {
        "D=4 TV<0.02": (tv < 0.02, f"{tv:.4f}"),
        "D=3 residual<1e-12": (resid < 1e-12, f"{resid:.1e}"),
    })


# 5 -------------------------------------------------------------------------

def test_criterion_05_mvn_cdf():
    worst = 0.0
    for rho in (-0.5, 0.0, 0.5):
        est = mvn_cdf([0.0, 0.0], [[1.0, rho], [rho, 1.0]]).value
        worst = max(worst, abs(est - (0.25 + math.asin(rho) / (2 * math.pi))))
    rng = np.random.default_rng(5)
    A = rng.normal(size=(5, 5))
    cov = A @ A.T + 0.5 * np.eye(5)
    u = rng.normal(size=5) + 1.0
    est = mvn_cdf(u, cov)
    x = rng.multivariate_normal(np.zeros(5), cov, size=400_000)
    hit = np.all(x <= u, axis=1)
    p = hit.mean()
    se = math.hypot(math.sqrt(p * (1 - p) / hit.size), est.std_error)
    report(5, "MVN CDF", {
        "orthant err<=3e-4": (worst <= 3e-4, f"{worst:.1e}"),
        "q=5 vs plain MC": (abs(est.value - p) <= 3 * se, f"|diff|/SE={abs(est.value - p) / se:.2f}"),
    })


# 6 -------------------------------------------------------------------------

def cdf_checks(model, z, points):
    n = z.shape[0]
    worst = 0.0
    for q in points:
        p = math.exp(-model.exponent_V(q))
        emp = np.mean(np.all(z <= q, axis=1))
        worst = max(worst, abs(emp - p) / math.sqrt(p * (1 - p) / n))
    return worst


def test_criterion_06_simulator_laws():
    rng = np.random.default_rng(6)
    n = 100_000
    pts = [np.array(q) for q in ([1.0, 1.0, 1.0], [0.5, 2.0, 1.5], [3.0, 0.7, 4.0], [0.6, 0.6, 0.9])]
    lm = LogisticModel(3, 0.45)
    bm = BrownResnickModel(SITES3, 0.8, 1.3, accuracy=1e-5)
    zl = sample_logistic(3, 0.45, n, rng).values
    zb = sample_model(bm, n, rng).values
    cdf_l, cdf_b = cdf_checks(lm, zl, pts), cdf_checks(bm, zb, pts)
    frechet = stats.invweibull(1).cdf
    p_marg = min(stats.kstest(z[:, j], frechet).pvalue for z in (zl, zb) for j in range(3))
    # block maxima of k draws rescaled by k keep the same joint law
    k = 5
    ml = sample_logistic(3, 0.45, n * k, rng).values.reshape(n, k, 3).max(axis=1) / k
    mb = sample_model(bm, 20_000 * k, rng).values.reshape(20_000, k, 3).max(axis=1) / k
    ms = max(cdf_checks(lm, ml, pts), cdf_checks(bm, mb, pts))
    report(6, "simulator laws", {
        "logistic CDF max|z|<3": (cdf_l < 3, f"{cdf_l:.2f}"),
        "brown-resnick CDF max|z|<3": (cdf_b < 3, f"{cdf_b:.2f}"),
        "unit Frechet margins (KS p>1e-3)": (p_marg > 1e-3, f"min p={p_marg:.3f}"),
        "max-stability max|z|<3": (ms < 3, f"{ms:.2f}"),
    })


# 7, 8 ----------------------------------------------------------------------

DESK = SemConfig(n_iter=30, n_keep=100, avg_window=5)


@lru_cache(maxsize=None)
def logistic_desk(theta, n_keep=100, estimators=("sem", "mle_full")):
    sc = Scenario(f"logistic_theta{theta}_N{n_keep}", "logistic", (theta,), 10, n_replicates=20,
                  repetitions=128, estimators=estimators, sem=replace(DESK, n_keep=n_keep), seed=7)
    return run_scenario(sc)


@pytest.mark.parametrize("theta", [0.3, 0.6, 0.9])
def test_criterion_07_logistic_desk_study(theta):
    m = logistic_desk(theta).metrics["sem"]
    bias, sd, re = m.bias[0], m.sd[0], m.re[0]
    report(7, f"logistic desk study theta={theta}", {
        "|bias|<0.02": (abs(bias) < 0.02, f"{bias:+.4f}"),
        "|bias|<SD": (abs(bias) < sd, f"SD={sd:.4f}"),
        "RE<1%": (re < 0.01, f"{100 * re:.3f}%"),
    })


def test_criterion_08_gibbs_sample_size():
    small = logistic_desk(0.6, n_keep=2, estimators=("sem",)).metrics["sem"].estimates.mean()
    large = logistic_desk(0.6).metrics["sem"].estimates.mean()
    report(8, "insensitivity to N", {
        "|mean(N=2)-mean(N=100)|<0.01": (abs(small - large) < 0.01,
                                         f"{small:.4f} vs {large:.4f}"),
    })


# 9 -------------------------------------------------------------------------

def test_criterion_09_em_convergence_shape():
    settle = {}
    for theta in (0.3, 0.9):
        sc = Scenario(f"trace_{theta}", "logistic", (theta,), 10, n_replicates=20, sem=DESK, seed=9)
        settle[theta] = settle_iteration(em_trace_study(sc, runs=100, n_iter=50, window=(30, 50)))
    fast = np.mean(settle[0.3] <= 5)
    slow = np.mean(settle[0.9] <= 25)
    band = np.mean((settle[0.9] >= 15) & (settle[0.9] <= 25))
    med3, med9 = np.median(settle[0.3]), np.median(settle[0.9])
    report(9, "EM convergence shape", {
        "theta=0.3 settled by 5 in >=90%": (fast >= 0.9, f"{100 * fast:.0f}%"),
        "theta=0.9 settled by 25 in >=90%": (slow >= 0.9, f"{100 * slow:.0f}%"),
        "theta=0.9 slower than 0.3 (medians)": (med9 > med3, f"{med3:.0f} vs {med9:.0f}"),
        "info: theta=0.9 settling in [15, 25]": (True, f"{100 * band:.0f}%"),
    })


# 10 ------------------------------------------------------------------------

def test_criterion_10_scaling_shape():
    dims = [10, 25, 50]
    curves = {th: timing_curve("logistic", th, dims, config=DESK, n_replicates=20, runs=5)
              for th in (0.3, 0.6, 0.9)}
    total = [(d, sum(c[i][1] for c in curves.values())) for i, d in enumerate(dims)]
    slope = loglog_slope(total)
    per = ", ".join(f"{th}:{loglog_slope(c):.2f}" for th, c in curves.items())
    report(10, "SEM time scaling", {
        "slope in [0.8, 1.3]": (0.8 <= slope <= 1.3, f"{slope:.2f}"),
        "info: per-theta slopes": (True, per),
    })


# 11 ------------------------------------------------------------------------

def test_criterion_11_brown_resnick_efficiency():
    sem = SemConfig(n_iter=20, n_keep=50, avg_window=5, gibbs=GibbsConfig(burn_in=50, thin=5))
    sc = Scenario("brown_resnick_desk", "brown_resnick", (1.5, 1.5), 5, n_replicates=10,
                  repetitions=32, estimators=("sem", "pairwise"), sem=sem, seed=11)
    res = run_scenario(sc)
    ms, mp = res.metrics["sem"], res.metrics["pairwise"]
    truth = sc.report_truth()
    med = np.median(ms.estimates, axis=0)
    natural = np.array([math.exp(med[0]), med[1]])
    rel = np.maximum(np.abs(med - truth) / truth, np.abs(natural - 1.5) / 1.5)
    better = ms.rmse < mp.rmse
    report(11, "Brown-Resnick efficiency", {
        "RMSE(sem)<RMSE(pair) for >=1 param": (bool(better.any()),
                                               f"sem={np.round(ms.rmse, 3).tolist()} "
                                               f"pair={np.round(mp.rmse, 3).tolist()}"),
        "sem median within 30% (log and natural scale)": (bool(np.all(rel <= 0.3)),
                                                          f"(log range, smoothness)={np.round(med, 3).tolist()}"),
        "info: efficiency %": (True, str(np.round(res.efficiency.percent, 1).tolist())),
        "info: pairwise median": (True, str(np.round(np.median(mp.estimates, axis=0), 3).tolist())),
        "failed reps": (True, str(res.n_failed)),
    })


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
