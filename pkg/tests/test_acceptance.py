"""Acceptance suite: one test per criterion, at full scale and tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
PASS lines; `-v` alone shows one pass/fail line per criterion through the
test names.
"""

import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import ks_2samp

from helpers import bookkeeper_tables, chain_indices
from sagald import (ChainState, builtin_problem, derive_constants, eta_max,
                    map_step, mean_drift, run_chain, update_term,
                    verify_minorization, with_overrides)
from sagald import engine as drv
from sagald import model
from sagald import noise as noise_mod
from sagald.coupling import empirical_meet_prob, recursion_check
from sagald.stats import lln_check, mixing_vs_coupling, track_moments, tv_estimate

KS_1PCT = 1.6276


def _report(k, text):
    print(f"\nCRITERION {k:2d}: PASS — {text}")


# ---------------------------------------------------------------------------

def test_criterion_01_gradient_table_oracle():
    # 100 random 1000-step runs per builtin; every table row must match the
    # brute-force last-update bookkeeper bitwise at every step
    rng = np.random.default_rng(1001)
    for name in ("lin-1d", "micro-1d", "well-2d"):
        problem = builtin_problem(name)
        for run in range(100):
            seed = 50_000 + run
            x0 = rng.normal(size=problem.dim)
            traj = run_chain(problem, x0, eta_max(problem), 1000, seed=seed)
            draws = chain_indices(seed, 0, 1000, problem.count, problem.dim)
            expected = bookkeeper_tables(problem, traj.xs, draws)
            assert np.array_equal(expected, traj.tables), (name, run)
    _report(1, "300 runs, every table row bitwise-equal to the bookkeeper")


def test_criterion_02_update_mean_unbiasedness():
    # enumerated mean of the drift estimate over the drawn index equals
    # eta * mean_drift to within 2 ulp at the operand scale
    for name, eta, seed in (("lin-1d", 1 / 32, 21), ("well-2d", 1 / 256, 22)):
        problem = builtin_problem(name)
        rng = np.random.default_rng(seed)
        n, d = problem.count, problem.dim
        for _ in range(1000):
            x = rng.normal(size=d)
            table = np.array([problem.components[i].eval(rng.normal(size=d))
                              for i in range(n)])
            st = ChainState(x, table, 0)
            target = eta * mean_drift(problem, x)
            terms = [update_term(problem, st, s, eta) for s in range(1, n + 1)]
            fvals = [problem.components[s].eval(x) for s in range(n)]
            for c in range(d):
                acc = Fraction(0)
                for u in terms:
                    acc += Fraction(float(u[c]))
                scale = eta * (sum(abs(table[i, c]) for i in range(n)) / n
                               + max(abs(fvals[s][c]) + abs(table[s, c])
                                     for s in range(n)))
                tol = 2 * Fraction(float(np.spacing(scale)))
                assert abs(acc / n - Fraction(float(target[c]))) <= tol
    _report(2, "2000 states within 2 ulp (operand scale)")


def _criterion_03_series(threads):
    lin = builtin_problem("lin-1d")
    return track_moments(lin, ("point", [0.0]), 1 / 32, 1000, 200, seed=33,
                         threads=threads)


def test_criterion_03_moment_bounds():
    series = _criterion_03_series(threads=2)
    assert series.bound_x == pytest.approx(256.64, rel=1e-12)
    assert series.applicable
    assert np.all(series.ex_sq <= series.bound_x)          # zero violations
    assert np.all(series.eg_sq_max <= series.bound_g)
    _report(3, f"sup E|X|^2 = {series.ex_sq.max():.4f} <= 256.64, "
               "table rows within their envelope at every step")


def test_criterion_04_minorization():
    micro = builtin_problem("micro-1d")
    bundle = derive_constants(micro, 0.5, 0.1, unsafe_eta=True)
    bundle = with_overrides(micro, bundle, k_override=0.1)
    assert bundle.regen_radius == 1.0
    assert math.exp(bundle.log_beta) == pytest.approx(0.188, abs=5e-4)
    rep = verify_minorization(micro, 0.5, bundle, trials=100_000, seed=44)
    assert abs(rep["worst_case_ratio"] - 1.0) <= 4 * np.spacing(1.0)
    assert rep["min_log_ratio"] >= 0.0      # every sampled ratio >= 1
    assert rep["pass"]
    _report(4, f"worst-case ratio {rep['worst_case_ratio']!r}, "
               f"min sampled ratio {rep['min_density_ratio']:.6f} >= 1 "
               "over 1e5 draws")


def test_criterion_05_law_equivalence():
    micro = builtin_problem("micro-1d")
    bundle = derive_constants(micro, 0.5, 0.1, unsafe_eta=True)
    bundle = with_overrides(micro, bundle, k_override=0.2, regen_radius=0.2)
    n = 2000
    crit = KS_1PCT * math.sqrt(2.0 * n / (n * n))
    x0 = np.full((n, 1), 0.1)
    t0 = np.tile(model.eval_all_components(micro, x0[:1])[0], (n, 1, 1))
    for seed in range(5):
        m_res = drv.run_map(micro, bundle, x0, t0, 100, 7000 + seed,
                            checkpoints=[1, 10, 100], threads=2)
        d_res = drv.run_direct(micro, x0, t0, 0.5, 100, 8000 + seed,
                               checkpoints=[1, 10, 100], threads=2)
        passed = sum(
            ks_2samp(m_res.snapshots[ck][:, 0], d_res.snapshots[ck][:, 0])[0]
            < crit
            for ck in (1, 10, 100))
        assert passed >= 2, seed
    _report(5, "map-chain marginals match the direct chain (KS 1%) in >= 2 "
               "of 3 horizons for each of 5 seeds")


def test_criterion_06_block_event_forces_meeting():
    micro = builtin_problem("micro-1d")
    bundle = derive_constants(micro, 0.5, 0.1, unsafe_eta=True)
    bundle = with_overrides(micro, bundle, k_override=0.2, regen_radius=0.2)

    # organic scan: every simulated sweep event must be followed by equality
    rep = empirical_meet_prob(micro, ("gauss", [0.0], 1.0),
                              ("gauss", [1.0], 1.0), 60, 2000, 0.5, bundle,
                              seed=66, threads=2)
    organic_blocks = 2000 * rep["n_blocks"]
    assert organic_blocks >= 10_000
    assert rep["violations"] == 0

    # forced sweeps: noise records realizing the event from random unmet
    # good-set block starts; the pair must coincide at every block end
    rng = noise_mod.verify_rng(67)
    stream = noise_mod.NoiseStream(670, micro.count, micro.dim)
    k = bundle.good_x_radius
    forced = 10_000
    for trial in range(forced):
        xa = noise_mod.unit_ball(rng, (), 1) * k
        xb = noise_mod.unit_ball(rng, (), 1) * k
        ta = noise_mod.unit_ball(rng, (2,), 1) * k
        tb = noise_mod.unit_ball(rng, (2,), 1) * k
        for off in range(micro.count + 1):
            rec = stream.record(trial % 256, 3 * (trial // 256) + off)
            forced_rec = noise_mod.NoiseRecord(
                gauss=rec.gauss,
                index=(off if 1 <= off <= micro.count else 1),
                selector=0.0,
                regen_point=noise_mod.unit_ball(rng, (), micro.dim),
                resid_z=rec.resid_z, resid_logw=rec.resid_logw,
                slow_key=rec.slow_key)
            xa, ta = map_step(micro, xa, ta, forced_rec, 0.5, bundle)
            xb, tb = map_step(micro, xb, tb, forced_rec, 0.5, bundle)
        assert np.array_equal(xa, xb) and np.array_equal(ta, tb), trial
    _report(6, f"{organic_blocks} organic blocks with "
               f"{int(rep['cnt_i'].sum())} sweep events and 0 violations; "
               f"{forced} forced sweeps all met at the block end")


def _criterion_07_rep(threads):
    micro = builtin_problem("micro-1d")
    bundle = derive_constants(micro, 0.5, 0.1, unsafe_eta=True)
    bundle = with_overrides(micro, bundle, k_override=0.2, regen_radius=0.2)
    rep = empirical_meet_prob(micro, ("gauss", [0.0], 1.0),
                              ("gauss", [1.0], 1.0), 100, 10_000, 0.5,
                              bundle, seed=77, threads=threads)
    return rep, bundle, micro


def test_criterion_07_coupling_recursion():
    rep, bundle, micro = _criterion_07_rep(threads=4)
    chk = recursion_check(rep, bundle, micro.count, min_survivors=100)
    assert chk["pass"]
    assert chk["checked_blocks"] >= 10
    assert rep["violations"] == 0
    _report(7, f"increment bound holds at every one of "
               f"{chk['checked_blocks']} blocks with >= 100 unmet pairs "
               f"(met fraction {float((rep['meet_after'] >= 0).mean()):.4f})")


def test_criterion_08_mixing_inequality():
    micro = builtin_problem("micro-1d")
    bundle = derive_constants(micro, 0.5, 0.1, unsafe_eta=True)
    bundle = with_overrides(micro, bundle, k_override=0.2, regen_radius=0.2)
    rep = mixing_vs_coupling(micro, 0.5, bundle, [100, 1000, 10_000, 100_000],
                             2000, seed=88, anchor_step=512, threads=4)
    assert rep.pass_inequality
    assert rep.pass_monotone
    _report(8, "alpha_hat <= coupling bound + 3 se at lags "
               f"{rep.lags}; alpha_hat = "
               f"{[f'{a:.4f}' for a in rep.alpha_hat]}")


def test_criterion_09_tv_cauchy():
    lin = builtin_problem("lin-1d")
    x0 = np.full((10_000, 1), 3.0)
    t0 = np.tile(model.eval_all_components(lin, x0[:1])[0], (10_000, 1, 1))
    res = drv.run_direct(lin, x0, t0, 1 / 32, 2000, 99,
                         checkpoints=[10, 100, 1000, 2000], threads=4)
    tv_early = tv_estimate(res.snapshots[10], res.snapshots[100])
    tv_late = tv_estimate(res.snapshots[1000], res.snapshots[2000])
    assert tv_late < tv_early
    # same-law control: an independent ensemble at the last checkpoint
    res2 = drv.run_direct(lin, x0, t0, 1 / 32, 2000, 100,
                          checkpoints=[2000], threads=4)
    control = tv_estimate(res.snapshots[2000], res2.snapshots[2000])
    assert control <= 0.05
    _report(9, f"TV(1000,2000) = {tv_late:.4f} < TV(10,100) = {tv_early:.4f}; "
               f"same-law control {control:.4f} <= 0.05")


def _criterion_10_main(threads):
    lin = builtin_problem("lin-1d")
    return lln_check(lin, 1 / 32, "sqcap:100", 1_000_000, 8, seed=1010,
                     threads=threads)


def test_criterion_10_lln():
    lin = builtin_problem("lin-1d")
    main = _criterion_10_main(threads=4)
    # oracle: ten independent long runs under a different seed
    oracle_rep = lln_check(lin, 1 / 32, "sqcap:100", 1_000_000, 10, seed=2020,
                           threads=4)
    oracle = oracle_rep["mean_full"]
    assert abs(oracle - 2.0 / 3.0) <= 0.1          # the reference level
    assert abs(main["mean_full"] - oracle) <= 0.1  # within 0.1 of the oracle
    # cross-seed agreement within the summed internal spreads
    third = lln_check(lin, 1 / 32, "sqcap:100", 1_000_000, 8, seed=3030,
                      threads=4)
    gap = abs(main["mean_full"] - third["mean_full"])
    assert gap <= max(main["spread_full"] + third["spread_full"], 1e-3)
    # deviation at horizon 2n below the deviation at n, n in {1e4, 1e5}
    for n, reps in ((10_000, 96), (100_000, 64)):
        rep = lln_check(lin, 1 / 32, "sqcap:100", 2 * n, reps, seed=4040 + n,
                        threads=4)
        assert rep["spread_full"] < rep["spread_half"], n
    _report(10, f"average {main['mean_full']:.4f} vs oracle {oracle:.4f} "
                "(|diff| <= 0.1); cross-seed gap "
                f"{gap:.4f} within spreads; deviations contract at 2n")


def test_criterion_11_thread_reproducibility():
    s1 = _criterion_03_series(threads=1)
    s8 = _criterion_03_series(threads=8)
    assert s1.ex_sq.tobytes() == s8.ex_sq.tobytes()
    assert s1.eg_sq_max.tobytes() == s8.eg_sq_max.tobytes()
    assert s1.bound_g.tobytes() == s8.bound_g.tobytes()

    r1, _, _ = _criterion_07_rep(threads=1)
    r8, _, _ = _criterion_07_rep(threads=8)
    assert r1["p_hat"].tobytes() == r8["p_hat"].tobytes()
    assert r1["meet_after"].tobytes() == r8["meet_after"].tobytes()
    for key in ("cnt_h", "cnt_d", "cnt_hbar_d", "cnt_i"):
        assert r1[key].tobytes() == r8[key].tobytes()

    l1 = _criterion_10_main(threads=1)
    l8 = _criterion_10_main(threads=8)
    assert l1["avg_full"].tobytes() == l8["avg_full"].tobytes()
    assert l1["avg_half"].tobytes() == l8["avg_half"].tobytes()
    assert l1["avg_burned"].tobytes() == l8["avg_burned"].tobytes()
    _report(11, "moment, coupling and ergodic-average outputs byte-identical "
                "at thread counts 1 and 8")
