"""Acceptance criteria. Each test prints one [PASS]/[FAIL] line and asserts
on it; the lines are repeated in the pytest terminal summary.

Tolerances and windows are fixed here, not in the library.
"""

import math
import os
import time

import numpy as np
import pytest

from oracles import f3_epoch_second_moment, hs_formula, phi_by_enumeration
from shuffle_fl import rates
from shuffle_fl.algorithms import RunConfig, minibatch_rr_epoch, simulate
from shuffle_fl.concentration import (exact_partial_sum_distribution, mc_violation_rate, partial_sum_bounds,
                                      sign_population, sphere_population)
from shuffle_fl.harness import ProblemSpec, SweepSpec, oracle_cross_check, run_sweep
from shuffle_fl.problem import Constants, SeparableQuadratic, make_problem
from shuffle_fl.shuffle import PermutationSet, sample_uniform_permutation

THREADS = min(4, os.cpu_count() or 1)
TRIALS = 2000


@pytest.fixture
def report(request):
    def _report(n, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
        print(line)
        request.config.acceptance_lines.append((n, line))
        assert ok, line
    return _report


def in_window(x, lo, hi):
    return lo <= x <= hi


# 1 -------------------------------------------------------------------------

def test_criterion_01_phi_identity(report):
    t = time.perf_counter()
    worst = 0.0
    for N, B in [(2, 1), (4, 1), (4, 2), (6, 1), (6, 2), (6, 3), (8, 2), (8, 4)]:
        for alpha in (0, 0.25, 0.5, 0.9):
            worst = max(worst, abs(rates.phi_closed_form(N, B, alpha) - phi_by_enumeration(N, B, alpha)))
    dt = time.perf_counter() - t
    report(1, worst <= 1e-10 and dt < 1.0,
           f"Phi closed form vs enumeration, max |diff| = {worst:.2e} (tol 1e-10), {dt:.2f}s (< 1s)")


# 2 -------------------------------------------------------------------------

def test_criterion_02_epoch_moment(report):
    t = time.perf_counter()
    worst_exact = 0.0
    worst_z = 0.0
    for M in (1, 2):
        for eta in (0.1, 0.5):  # L = 1, so eta L = eta
            rep = oracle_cross_check("brute_force_epoch", N=4, B=2, M=M, eta=eta, L=1, nu=1, x0=0.5,
                                     trials=10_000, seed=M)
            frac = float(f3_epoch_second_moment(4, 2, M, eta, 1, 1, 0.5))
            worst_exact = max(worst_exact, abs(rep.exact - rep.closed_form), abs(rep.exact - frac))
            worst_z = max(worst_z, abs(rep.monte_carlo - rep.exact) / rep.mc_stderr)
    dt = time.perf_counter() - t
    ok = worst_exact <= 1e-10 and worst_z <= 4 and dt < 5
    report(2, ok, f"brute force vs closed form max |diff| = {worst_exact:.2e} (tol 1e-10); "
                  f"MC within {worst_z:.2f} stderr (<= 4); {dt:.2f}s (< 5s)")


# 3 -------------------------------------------------------------------------

def test_criterion_03_hetero_trajectory(report):
    t = time.perf_counter()
    worst = 0.0
    for eta in (0.005, 0.02, 0.05):
        for B in (2, 4, 8):
            for N in (8, 16, 32):
                rep = oracle_cross_check("hetero_vs_sim", mu=1, tau=1, L=2, eta=eta, B=B, N=N, K=8, M=2)
                worst = max(worst, rep.max_abs_discrepancy)
    dt = time.perf_counter() - t
    report(3, worst <= 1e-10 and dt < 1.0,
           f"27-point grid, max |sim - recursion| = {worst:.2e} (tol 1e-10), {dt:.2f}s (< 1s)")


# 4, 5 ----------------------------------------------------------------------

COMPOSITE = ProblemSpec("composite3d", L=10, mu=1, nu=1)


def composite_threshold(M):
    c = make_problem("composite3d", M=M, N=16, L=10, mu=1, nu=1).constants
    return rates.epoch_threshold("T1", rates.RateParams(L=c.L, mu=c.mu, nu=c.nu, M=M, N=16, B=2))


def test_criterion_04_minibatch_m_scaling(report):
    K = max(256, max(composite_threshold(M) for M in (1, 2, 4, 8)))
    spec = SweepSpec(RunConfig("minibatch-rr", N=16, K=K, B=2), COMPOSITE, "M", (1, 2, 4, 8), TRIALS, seed=0)
    res = run_sweep(spec, threads=THREADS)
    report(4, in_window(res.slope, -1.2, -0.8),
           f"minibatch RR slope vs M = {res.slope:.3f} +/- {res.slope_stderr:.3f} (window [-1.2, -0.8]), K={K}")


def test_criterion_05_minibatch_k_scaling(report):
    spec = SweepSpec(RunConfig("minibatch-rr", M=4, N=16, K=128, B=2), COMPOSITE, "K", (128, 256, 512),
                     TRIALS, seed=0)
    res = run_sweep(spec, threads=THREADS)
    report(5, in_window(res.slope, -2.4, -1.6),
           f"minibatch RR slope vs K = {res.slope:.3f} +/- {res.slope_stderr:.3f} (window [-2.4, -1.6])")


# 6 -------------------------------------------------------------------------

def test_criterion_06_local_rr_large_b(report):
    N, L = 32, 4.0
    K = max(rates.epoch_threshold("T2", rates.RateParams(L=L, mu=1, nu=1, M=M, N=N, B=2)) for M in (1, 8))
    eta = rates.step_size("T2", rates.RateParams(L=L, mu=1, nu=1, M=1, N=N, K=K, B=2))
    seeds = np.arange(TRIALS)

    def mean_sub(M, B):
        p = make_problem("f2", M=M, N=N, L=L, mu=1, nu=1)
        cfg = RunConfig("local-rr", M=M, N=N, K=K, B=B, step_size=eta, record="final_only")
        return simulate(p, cfg, seeds).suboptimality[:, -1].mean()

    full = mean_sub(8, N) / mean_sub(1, N)
    small = mean_sub(8, 2) / mean_sub(1, 2)
    ok = 0.5 <= full <= 2.0 and small < 0.25
    report(6, ok, f"M=8/M=1 ratio at B=N: {full:.3f} (within 2x); at B=2: {small:.3f} (< 0.25); K={K}")


# 7 -------------------------------------------------------------------------

def test_criterion_07_hetero_b_scaling(report):
    N, K, mu = 16, 8, 1.0
    eta = 1.0 / (N * K)  # inside [1/(8 mu N K), 1/(8 mu B)] for every B below
    assert all(1 / (8 * mu * N * K) <= eta <= 1 / (8 * mu * B) for B in (2, 4, 8))
    spec = SweepSpec(RunConfig("local-rr", M=2, N=N, K=K, B=2, step_size=eta),
                     ProblemSpec("hetero", L=2, mu=mu, tau=1), "B", (2, 4, 8), trials=1, seed=0)
    res = run_sweep(spec)
    report(7, in_window(res.slope, 1.6, 2.4),
           f"local RR heterogeneous slope vs B = {res.slope:.3f} (window [1.6, 2.4])")


# 8 -------------------------------------------------------------------------

def test_criterion_08_sync_shuf_m_scaling(report):
    slopes = {}
    for sync in (True, False):
        spec = SweepSpec(RunConfig("minibatch-rr", N=16, K=64, B=1, step_size=0.01, sync_shuf=sync),
                         ProblemSpec("f3", L=1, mu=1, nu=1), "M", (1, 2, 4, 8), TRIALS, seed=0)
        slopes[sync] = run_sweep(spec, threads=THREADS).slope
    ok = in_window(slopes[True], -2.4, -1.6) and in_window(slopes[False], -1.2, -0.8)
    report(8, ok, f"SyncShuf slope vs M = {slopes[True]:.3f} (window [-2.4, -1.6]); "
                  f"without = {slopes[False]:.3f} (window [-1.2, -0.8])")


# 9 -------------------------------------------------------------------------

def test_criterion_09_hoeffding_serfling(report):
    failures = []
    worst = -math.inf
    cases = 0
    for M in (1, 2, 4):
        for N in (8, 16):
            for n in (N // 4, N // 2):
                for delta in (0.05, 0.01):
                    for d in (1, 3):
                        if d == 1:
                            spec = sign_population(1.0, M, N, n, delta)
                        else:
                            spec = sphere_population(1.0, M, N, n, delta, d=3, rng=cases)
                        assert spec.bound == pytest.approx(hs_formula(1.0, M, N, n, delta), rel=1e-12)
                        rep = mc_violation_rate(spec, 100_000, rng=1000 + cases)
                        cases += 1
                        worst = max(worst, rep.rate - delta)
                        if not rep.passed:
                            failures.append((M, N, n, delta, d, rep.rate))
    report(9, not failures, f"{cases} configurations, 1e5 trials each; worst rate - delta = {worst:.4f}; "
                            f"violations of rate <= delta + 3 stderr: {failures or 'none'}")


# 10 ------------------------------------------------------------------------

def lemma4_failures(grid):
    bad = []
    for N, M, i, k in grid:
        d = exact_partial_sum_distribution(N, M, i, k)
        lo, hi = partial_sum_bounds(M, i, k)
        e = d.mean_abs()
        sandwich = lo <= float(e) <= hi
        signs = d.prob_positive() == d.prob_negative() and 6 * d.prob_positive() >= 1
        if not (sandwich and signs):
            bad.append((N, M, i, k))
    return bad


def enumerable_grid(block_limit):
    for N in (2, 4, 6, 8):
        for M in (1, 2, 3):
            k_max = max(B for B in range(1, block_limit(N) + 1) if N % B == 0) // 2
            for i in range(N // 2 + 1):
                for k in range(k_max + 1):
                    if i + k >= 1:
                        yield N, M, i, k


def test_criterion_10_lemma4(report):
    literal = list(enumerable_grid(lambda N: N))
    proper = list(enumerable_grid(lambda N: max(1, N // 2)))
    bad_literal = lemma4_failures(literal)
    bad_proper = lemma4_failures(proper)
    report(10, not bad_literal,
           f"{len(literal) - len(bad_literal)}/{len(literal)} points hold with B = N, failing at {bad_literal} "
           f"(S == 0 there); {len(proper) - len(bad_proper)}/{len(proper)} hold with B <= N/2")


# 11 ------------------------------------------------------------------------

def random_problem(rng, M, N, dim=2):
    neg = rng.uniform(0.5, 3.0, (M, N, dim))
    pos = rng.uniform(0.5, 3.0, (M, N, dim))
    lin = rng.normal(size=(M, N, dim))
    consts = Constants(L=3.0, mu=0.5, nu=float(np.abs(lin).max()) * 2, tau=1.0, rho=1.0, lam=1.0)
    return SeparableQuadratic(neg, pos, lin, consts, f_star=0.0)


def test_criterion_11_structural_identities(report):
    rng = np.random.default_rng(2024)
    worst = {"B=N vs GD": 0.0, "local B=1 vs minibatch B=1": 0.0, "SyncShuf M=1": 0.0, "rescaled update": 0.0}
    for trial in range(10):
        M, N = int(rng.choice([1, 2, 4])), int(rng.choice([4, 8]))
        p = random_problem(rng, M, N)
        x0 = tuple(rng.normal(size=2))
        seed = int(rng.integers(1 << 31))
        eta = float(rng.uniform(0.01, 0.1))

        def traj(alg, **kw):
            cfg = RunConfig(alg, M=M, N=N, K=5, step_size=eta, x0=x0, **kw)
            return simulate(p, cfg, [seed], keep_iterates=True).iterates[0]

        worst["B=N vs GD"] = max(worst["B=N vs GD"],
                                 np.abs(traj("minibatch-rr", B=N, relax_batch_limits=True) - traj("gd")).max())
        worst["local B=1 vs minibatch B=1"] = max(worst["local B=1 vs minibatch B=1"],
                                                  np.abs(traj("local-rr", B=1, relax_batch_limits=True) - traj("minibatch-rr", B=1)).max())

        single = random_problem(rng, 1, N)
        for alg, B in (("minibatch-rr", 2), ("local-rr", 2)):
            a = simulate(single, RunConfig(alg, M=1, N=N, K=5, B=B, step_size=eta, x0=x0, sync_shuf=True),
                         [seed], keep_iterates=True).iterates
            b = simulate(single, RunConfig(alg, M=1, N=N, K=5, B=B, step_size=eta, x0=x0, sync_shuf=False),
                         [seed], keep_iterates=True).iterates
            worst["SyncShuf M=1"] = max(worst["SyncShuf M=1"], np.abs(a - b).max())

        for B in (b for b in (1, 2, 4) if N % b == 0):
            perms = PermutationSet(tuple(sample_uniform_permutation(N, rng) for _ in range(M)))
            a = minibatch_rr_epoch(x0, p, eta, B, perms)
            b = minibatch_rr_epoch(x0, p, eta / B, B, perms, inner_sum=True)
            worst["rescaled update"] = max(worst["rescaled update"], np.abs(a - b).max())
    ok = max(worst.values()) <= 1e-12
    report(11, ok, "; ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (tol 1e-12)")
