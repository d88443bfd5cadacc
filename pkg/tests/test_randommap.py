import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ks_2samp

from helpers import fresh_table
from sagald import (ChainState, ConfigurationError, TransitionInput,
                    beta_for, derive_constants, iterate_Z, map_step,
                    residual_sample, saga_step, transition_mean,
                    verify_minorization)
from sagald import noise as noise_mod
from sagald.randommap import MapConsts, beta_log_radius, unit_ball_volume

KS_1PCT = 1.6276  # asymptotic two-sample critical coefficient at the 1% level


def ks_crit(n, m):
    return KS_1PCT * math.sqrt((n + m) / (n * m))


# ---------------------------------------------------------------------------
# Derived constants.

def test_derive_constants_oracle_values(lin):
    # frozen by independent evaluation of the defining formulas:
    #   front = 2 (N+1) (m_hat^2 + M^2) = 30
    #   inner(v) = 2 (2d + c1 + 2 m_hat^2 + v) / (c2 eta) = 64 (4.01 + v)
    #   C_check = 30 * inner(0) = 7699.2
    #   C_hat = 30 * inner(7699.2) = 14790163.2
    #   K = sqrt(6 * C_hat / 0.1) = sqrt(887409792)
    b = derive_constants(lin, 1 / 32, 0.1)
    assert b.c_check == pytest.approx(7699.2, rel=1e-13)
    assert b.c_hat == pytest.approx(14_790_163.2, rel=1e-13)
    assert b.k_eps == pytest.approx(math.sqrt(887_409_792.0), rel=1e-13)
    assert b.good_g_radius == pytest.approx(1.0 + 2.0 * b.k_eps, rel=1e-13)
    assert b.regen_radius == 1.0
    # log beta is dominated by -(3 m_hat + 4 M K + 1)^2 / (4 eta)
    reach = 3.0 + 8.0 * b.k_eps + 1.0
    assert b.log_beta == pytest.approx(-reach * reach * 8.0, rel=1e-6)
    assert b.log_beta < -4e11
    assert b.beta == 0.0  # underflows in linear space


def test_k_eps_quarter_eps_doubles(lin, micro):
    for problem in (lin, micro):
        eta = 1 / 32
        b1 = derive_constants(problem, eta, 0.2)
        b2 = derive_constants(problem, eta, 0.05)
        assert b2.k_eps == pytest.approx(2.0 * b1.k_eps, rel=1e-14)


def test_derive_constants_preconditions(lin):
    with pytest.raises(ConfigurationError):
        derive_constants(lin, 1 / 32, 0.5)       # eps >= 1/3
    with pytest.raises(ConfigurationError):
        derive_constants(lin, 0.05, 0.1)         # above the cap
    with pytest.raises(ConfigurationError):
        derive_constants(lin, 1.5, 0.1, unsafe_eta=True)  # beyond 1
    derive_constants(lin, 0.05, 0.1, unsafe_eta=True)


def test_beta_for_hand_values():
    # d=1, eta=0.5, K=0.1, m_hat=0.1, M=1: beta = 2 (2 pi)^{-1/2} e^{-1.445}
    lb = beta_for(1, 0.5, 0.1, 0.1, 1.0)
    expect = math.log(2.0) - 0.5 * math.log(2.0 * math.pi) - 1.445
    assert lb == pytest.approx(expect, rel=1e-12)
    assert math.exp(lb) == pytest.approx(0.188, abs=5e-4)
    # K=0, m_hat=0: radius collapses to the unit ball alone
    lb0 = beta_for(1, 0.5, 0.0, 0.0, 1.0)
    assert math.exp(lb0) == pytest.approx(2.0 / math.sqrt(2.0 * math.pi)
                                          * math.exp(-0.5), rel=1e-12)
    assert math.exp(lb0) == pytest.approx(0.484, abs=5e-4)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 5.0), st.floats(0.0, 20.0), st.floats(0.0, 3.0))
def test_beta_monotone_in_k_and_mhat(eta, k, m_hat):
    lb = beta_for(1, eta, k, m_hat, 1.0)
    assert beta_for(1, eta, k + 0.5, m_hat, 1.0) < lb
    assert beta_for(1, eta, k, m_hat + 0.5, 1.0) < lb


def test_beta_diverges_with_k():
    vals = [beta_for(2, 0.5, k, 0.0, 1.0) for k in (1.0, 10.0, 100.0, 1000.0)]
    assert all(b > a for a, b in zip(vals[1:], vals[:-1]))
    assert vals[-1] < -1e6


def test_unit_ball_volume():
    assert unit_ball_volume(1) == pytest.approx(2.0)
    assert unit_ball_volume(2) == pytest.approx(math.pi)
    assert unit_ball_volume(3) == pytest.approx(4.0 * math.pi / 3.0)


# ---------------------------------------------------------------------------
# Transition mean and the good set.

def test_transition_mean_equals_noiseless_step(lin, micro, well):
    rng = np.random.default_rng(5)
    for problem in (lin, micro, well):
        eta = 0.01
        for _ in range(30):
            x = rng.normal(size=problem.dim)
            table = np.array([c.eval(rng.normal(size=problem.dim))
                              for c in problem.components])
            for s in range(1, problem.count + 1):
                m = transition_mean(problem, x, table, s, eta)
                out = saga_step(problem, ChainState(x, table, 0),
                                TransitionInput(np.zeros(problem.dim), s), eta)
                assert np.array_equal(m, out.x)


def test_good_set_mean_reach(micro, minorization_bundle):
    # |mean| <= 3 m_hat + 4 M K over the good set (eta <= 1, M >= 1)
    b = minorization_bundle
    k, g_rad = b.good_x_radius, b.good_g_radius
    reach = 3 * micro.m_hat + 4 * micro.lipschitz * k
    rng = noise_mod.verify_rng(123, lane=9)
    for _ in range(10_000):
        x = noise_mod.unit_ball(rng, (), 1) * k
        table = noise_mod.unit_ball(rng, (2,), 1) * g_rad
        s = int(rng.integers(1, 3))
        m = transition_mean(micro, x, table, s, b.eta)
        assert np.linalg.norm(m) <= reach + 1e-12


# ---------------------------------------------------------------------------
# Residual sampling and the map.

def _record(problem, bundle, seed=0, rep=0, step=0):
    stream = noise_mod.NoiseStream(seed, problem.count, problem.dim)
    return stream.record(rep, step)


def test_residual_beta_zero_returns_first_proposal(micro):
    bundle = derive_constants(micro, 0.125, 0.1)
    # beta underflows at faithful constants: residual == plain Gaussian draw
    rec = _record(micro, bundle)
    x = np.array([0.2])
    table = fresh_table(micro, x)
    y = residual_sample(micro, x, table, 1, 0.125, bundle, rec)
    consts = MapConsts(micro, bundle)
    m = transition_mean(micro, x, table, 1, 0.125)
    assert np.array_equal(y, m + consts.sqrt2eta * rec.resid_z[0])


def test_residual_outside_ball_accepted_unconditionally(micro,
                                                        minorization_bundle):
    rec = _record(micro, minorization_bundle, seed=3)
    # forced: first proposal far outside B(1), log-uniform at -inf
    rec.resid_z[0] = 50.0
    rec.resid_logw[0] = -np.inf
    x = np.array([0.05])
    table = np.array([[0.05], [-0.05]])
    y = residual_sample(micro, x, table, 1, 0.5, minorization_bundle, rec)
    consts = MapConsts(micro, minorization_bundle)
    m = transition_mean(micro, x, table, 1, 0.5)
    assert np.array_equal(y, m + consts.sqrt2eta * rec.resid_z[0])
    assert abs(y[0]) > 1.0


def test_residual_rejects_invalid_beta(micro, minorization_bundle):
    # a state whose mean is too far for beta to minorize: the residual
    # would be signed, so the draw must be refused
    bad_x = np.array([0.09])
    bad_table = np.full((2, 1), 0.19)
    far_table = np.array([[5.0], [-5.0]])
    rec = _record(micro, minorization_bundle, seed=4)
    residual_sample(micro, bad_x, bad_table, 1, 0.5, minorization_bundle, rec)
    with pytest.raises(ValueError):
        residual_sample(micro, bad_x, far_table, 1, 0.5, minorization_bundle,
                        rec)


def test_residual_mixture_reproduces_kernel(micro, minorization_bundle):
    # beta nu + (1 - beta) residual must reassemble the Gaussian kernel: one
    # map transition from a fixed good-set state against direct Gaussian
    # draws around the per-index conditional mean
    from sagald import engine
    x = np.array([0.05])
    table = np.array([[0.1], [-0.1]])
    n = 100_000
    xs = np.tile(x, (n, 1))
    ts = np.tile(table, (n, 1, 1))
    res = engine.run_map(micro, minorization_bundle, xs, ts, 1, 77,
                         checkpoints=[1], threads=4)
    map_draws = res.snapshots[1][:, 0]
    means = [transition_mean(micro, x, table, s, 0.5)[0] for s in (1, 2)]
    rng = np.random.default_rng(1234)
    direct = np.array(means)[rng.integers(0, 2, n)] \
        + math.sqrt(1.0) * rng.standard_normal(n)
    stat, _ = ks_2samp(map_draws, direct)
    assert stat < ks_crit(n, n)


def test_map_step_regeneration_constancy(micro, override_bundle):
    # selector below beta pins x' to the shared regeneration point for every
    # good-set state
    rec = _record(micro, override_bundle, seed=9)
    rec_forced = noise_mod.NoiseRecord(
        gauss=rec.gauss, index=rec.index, selector=0.0,
        regen_point=rec.regen_point, resid_z=rec.resid_z,
        resid_logw=rec.resid_logw, slow_key=rec.slow_key)
    rng = noise_mod.verify_rng(5, lane=2)
    k = override_bundle.good_x_radius
    g_rad = override_bundle.good_g_radius
    outs = []
    for _ in range(100):
        x = noise_mod.unit_ball(rng, (), 1) * k
        table = noise_mod.unit_ball(rng, (2,), 1) * g_rad
        x_new, _ = map_step(micro, x, table, rec_forced, 0.5, override_bundle)
        outs.append(x_new.copy())
    first = outs[0]
    assert all(np.array_equal(first, o) for o in outs)
    assert np.array_equal(first,
                          override_bundle.regen_radius * rec.regen_point)


def test_map_step_fallback_branch(micro, override_bundle):
    # outside the good set, zero noise lands exactly on the transition mean
    rec = _record(micro, override_bundle, seed=10)
    rec_zero = noise_mod.NoiseRecord(
        gauss=np.zeros(1), index=rec.index, selector=rec.selector,
        regen_point=rec.regen_point, resid_z=rec.resid_z,
        resid_logw=rec.resid_logw, slow_key=rec.slow_key)
    x = np.array([5.0])  # far outside B(0.2)
    table = fresh_table(micro, x)
    x_new, table_new = map_step(micro, x, table, rec_zero, 0.5,
                                override_bundle)
    m = transition_mean(micro, x, table, rec.index, 0.5)
    assert np.array_equal(x_new, m)
    assert np.array_equal(table_new[rec.index - 1],
                          micro.components[rec.index - 1].eval(x))


def test_map_step_good_set_table_preservation(micro, override_bundle):
    # from a good-set state, every new table row stays within the row radius
    rng = noise_mod.verify_rng(6, lane=3)
    k, g_rad = override_bundle.good_x_radius, override_bundle.good_g_radius
    stream = noise_mod.NoiseStream(12, 2, 1)
    for trial in range(200):
        x = noise_mod.unit_ball(rng, (), 1) * k
        table = noise_mod.unit_ball(rng, (2,), 1) * g_rad
        _, table_new = map_step(micro, x, table, stream.record(0, trial), 0.5,
                                override_bundle)
        assert np.all(np.abs(table_new) <= g_rad + 1e-15)


def test_iterate_Z_composition(micro, override_bundle):
    stream = noise_mod.NoiseStream(21, 2, 1)
    lane = stream.lane(0)
    x0 = np.array([0.3])
    t0 = fresh_table(micro, x0)
    x_same, t_same = iterate_Z(micro, 5, 5, x0, t0, lane, 0.5, override_bundle)
    assert np.array_equal(x_same, x0) and np.array_equal(t_same, t0)
    # single step == map_step on the same record
    x1, t1 = iterate_Z(micro, 7, 8, x0, t0, lane, 0.5, override_bundle)
    x1b, t1b = map_step(micro, x0, t0, lane.record(7), 0.5, override_bundle)
    assert np.array_equal(x1, x1b) and np.array_equal(t1, t1b)
    # stage composition: 0..4 then 4..9 equals 0..9
    xa, ta = iterate_Z(micro, 0, 4, x0, t0, lane, 0.5, override_bundle)
    xb, tb = iterate_Z(micro, 4, 9, xa, ta, lane, 0.5, override_bundle)
    xc, tc = iterate_Z(micro, 0, 9, x0, t0, lane, 0.5, override_bundle)
    assert np.array_equal(xb, xc) and np.array_equal(tb, tc)


def test_iterate_Z_matches_engine(micro, override_bundle):
    from sagald import engine
    x0 = np.array([0.4])
    t0 = fresh_table(micro, x0)
    res = engine.run_map(micro, override_bundle, x0[None, :], t0[None, :, :],
                         40, 33, checkpoints=[40])
    stream = noise_mod.NoiseStream(33, 2, 1)
    xz, tz = iterate_Z(micro, 0, 40, x0, t0, stream.lane(0), 0.5,
                       override_bundle)
    assert np.array_equal(xz, res.final_xa[0])
    assert np.array_equal(tz, res.final_ta[0])


def test_map_marginal_matches_direct_chain(micro, override_bundle):
    # the map-chain and the direct chain share their marginal laws
    from sagald import engine
    n = 2000
    x0 = np.full((n, 1), 0.1)
    t0 = np.tile(fresh_table(micro, x0[0]), (n, 1, 1))
    m_res = engine.run_map(micro, override_bundle, x0, t0, 100, 51,
                           checkpoints=[1, 10, 100], threads=2)
    d_res = engine.run_direct(micro, x0, t0, 0.5, 100, 52,
                              checkpoints=[1, 10, 100], threads=2)
    passed = 0
    for ck in (1, 10, 100):
        stat, _ = ks_2samp(m_res.snapshots[ck][:, 0],
                           d_res.snapshots[ck][:, 0])
        passed += stat < ks_crit(n, n)
    assert passed >= 2


# ---------------------------------------------------------------------------
# Minorization verification.

def test_minorization_worst_case_exact(micro, minorization_bundle):
    rep = verify_minorization(micro, 0.5, minorization_bundle, trials=100,
                              seed=5)
    assert abs(rep["worst_case_ratio"] - 1.0) <= 4 * np.spacing(1.0)
    assert rep["worst_case_ok"]


def test_minorization_center_ratio(micro, minorization_bundle):
    rep = verify_minorization(micro, 0.5, minorization_bundle, trials=100,
                              seed=6)
    reach = 3 * 0.1 + 4 * 1.0 * 0.1 + 1.0
    assert rep["center_log_ratio"] == pytest.approx(reach * reach / 2.0,
                                                    rel=1e-12)


def test_minorization_scan_passes(micro, minorization_bundle, override_bundle):
    for bundle in (minorization_bundle, override_bundle):
        rep = verify_minorization(micro, 0.5, bundle, trials=20_000, seed=7)
        assert rep["pass"], rep
        assert rep["min_log_ratio"] >= 0.0


def test_minorization_rejects_inflated_beta(micro, minorization_bundle):
    from dataclasses import replace
    bad = replace(minorization_bundle,
                  log_beta=minorization_bundle.log_beta + 1.0)
    rep = verify_minorization(micro, 0.5, bad, trials=20_000, seed=8)
    assert not rep["pass"]


def test_generalized_radius_reduces_to_unit_ball():
    assert beta_log_radius(1, 0.5, 0.1, 0.1, 1.0, regen_radius=1.0) \
        == beta_for(1, 0.5, 0.1, 0.1, 1.0)


def test_map_consts_rejects_beta_at_least_one(micro, minorization_bundle):
    from dataclasses import replace
    bad = replace(minorization_bundle, log_beta=0.5)
    with pytest.raises(ConfigurationError):
        MapConsts(micro, bad)
