import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from codedconv.latency import PhaseProfile, ShiftExp, expected_kth_order_stat, workload_sizes
from codedconv.models import BENIGN_GEOMETRY, PI_PROFILE, sample_benign
from codedconv.optimizer import SystemParams, minimize_L, objective_L
from codedconv.simulator import (PipelineLayer, ScenarioConfig, Strategy, approx_k,
                                 empirical_optimal_k, simulate_layer, simulate_pipeline)
from codedconv.split import plan_split


def test_strategy_validation():
    with pytest.raises(ValueError):
        Strategy.coded(0)
    with pytest.raises(ValueError):
        Strategy("bogus")
    with pytest.raises(ValueError):
        simulate_layer(Strategy.coded(10), SystemParams(10, BENIGN_GEOMETRY, PI_PROFILE))
    with pytest.raises(ValueError):
        ScenarioConfig(kind="failure", n_f=-1)
    with pytest.raises(ValueError):
        ScenarioConfig(detect="never")
    with pytest.raises(KeyError):
        ScenarioConfig.from_dict({"kind": "baseline", "extra": 1})


def test_deterministic_limit():
    prof = PhaseProfile(1e9, 1e-5, 1e9, 1e-5, 1e9, 1e-5, 1e9, 1e-5)
    n, k = 10, 7  # 56 output columns split evenly into 8-wide pieces
    P = SystemParams(n, BENIGN_GEOMETRY, prof)
    res = simulate_layer(Strategy.coded(k), P, trials=2000, seed=0)
    z = workload_sizes(BENIGN_GEOMETRY, plan_split(BENIGN_GEOMETRY.spec, BENIGN_GEOMETRY.width, k), n)
    want = (z.N_enc * 1e-5 + (z.N_rec + z.N_cmp + z.N_sen) * 1e-5 + z.N_dec * 1e-5)
    assert abs(res.total.mean() / want - 1) < 1e-3


def test_n2_k1_compute_only():
    prof = PhaseProfile(1e30, 0.0, 2e9, 1e-9, 1e30, 0.0, 1e30, 0.0)
    P = SystemParams(2, BENIGN_GEOMETRY, prof)
    res = simulate_layer(Strategy.coded(1), P, trials=100_000, seed=0)
    N = res.meta["sizes"]["N_cmp"]
    want = expected_kth_order_stat(2, 1, ShiftExp(2e9, 1e-9, N))
    assert abs(res.exec.mean() / want - 1) < 0.02


def test_total_is_sum_of_parts():
    P = SystemParams(8, BENIGN_GEOMETRY, PI_PROFILE)
    res = simulate_layer(Strategy.coded(5), P, trials=500, seed=3)
    assert np.allclose(res.total, res.enc + res.exec + res.dec)


def test_reproducible():
    P = SystemParams(10, BENIGN_GEOMETRY, PI_PROFILE)
    sc = ScenarioConfig(kind="straggle_and_fail", n_f=1)
    for strat in (Strategy.coded(6), Strategy.uncoded(), Strategy.replication()):
        a = simulate_layer(strat, P, sc, trials=3000, seed=11)
        b = simulate_layer(strat, P, sc, trials=3000, seed=11)
        assert np.array_equal(a.total, b.total) and np.array_equal(a.retries, b.retries)


def test_coded_mean_matches_L_benign():
    """Coded mean within 5% of L(k) for every k in 2..n-1 on benign parameters."""
    P = sample_benign(np.random.default_rng(0), n=10)
    gaps = {}
    for k in range(2, 10):
        sim = simulate_layer(Strategy.coded(k), P, trials=30_000, seed=0, relaxed=True)
        gaps[k] = sim.total.mean() / objective_L(k, P) - 1
    assert max(abs(g) for g in gaps.values()) <= 0.05, gaps


def test_n2_optimum_is_1():
    P = SystemParams(2, BENIGN_GEOMETRY, PI_PROFILE)
    assert empirical_optimal_k(P, trials=2000, seed=0).k_star == 1


def test_k_order_statistic_monotone_for_fixed_workload():
    P = SystemParams(10, BENIGN_GEOMETRY, PI_PROFILE)
    res = simulate_layer(Strategy.coded(5), P, trials=5000, seed=0, keep_worker_times=True)
    kth = np.sort(res.worker_times, axis=1).mean(axis=0)
    assert (np.diff(kth) >= 0).all()


def test_coded_curve_is_unimodal():
    rng = np.random.default_rng(8)
    for _ in range(5):
        P = sample_benign(rng, n=10)
        m = empirical_optimal_k(P, trials=20_000, seed=0, bootstrap=0, relaxed=True).means
        vals = [m[k] for k in sorted(m)]
        d = np.sign(np.diff(vals))
        # once the curve turns upward it never comes back down
        assert not any(d[i] > 0 and d[j] < 0 for i in range(len(d)) for j in range(i + 1, len(d)))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 3))
def test_failure_dominance(seed, n_f):
    P = sample_benign(np.random.default_rng(seed), n=10)
    k = minimize_L(P).k_circ
    if 10 - k < n_f:
        k = 10 - n_f
    sc = ScenarioConfig(kind="failure", n_f=n_f)
    coded = simulate_layer(Strategy.coded(k), P, sc, trials=4000, seed=seed).summary()
    unc = simulate_layer(Strategy.uncoded(), P, sc, trials=4000, seed=seed).summary()
    assert unc.mean_s >= coded.mean_s


def test_failure_detection_modes():
    P = SystemParams(10, BENIGN_GEOMETRY, PI_PROFILE)
    base = simulate_layer(Strategy.uncoded(), P, trials=5000, seed=1).total.mean()
    sig = simulate_layer(Strategy.uncoded(), P, ScenarioConfig("failure", n_f=1, detect="signal"),
                         trials=5000, seed=1)
    tmo = simulate_layer(Strategy.uncoded(), P, ScenarioConfig("failure", n_f=1), trials=5000, seed=1)
    assert (sig.retries == 1).all() and (tmo.retries == 1).all()
    assert base < sig.total.mean() < tmo.total.mean()


def test_coded_without_retry_reports_failure_rate():
    P = SystemParams(5, BENIGN_GEOMETRY, PI_PROFILE)
    res = simulate_layer(Strategy.coded(4, retry=False), P, ScenarioConfig("failure", n_f=2),
                         trials=200, seed=0)
    assert res.fail_rate == 1.0 and np.isnan(res.summary().mean_s)


def test_straggling_delay_slows_everything():
    P = SystemParams(10, BENIGN_GEOMETRY, PI_PROFILE)
    a = simulate_layer(Strategy.coded(7), P, trials=5000, seed=0).total.mean()
    b = simulate_layer(Strategy.coded(7), P, ScenarioConfig("straggling", lambda_tr=0.6),
                       trials=5000, seed=0).total.mean()
    assert b > a
    assert approx_k(P, ScenarioConfig("failure", n_f=4)) <= 6


def test_lt_strategies_run():
    P = SystemParams(6, BENIGN_GEOMETRY, PI_PROFILE)
    fine = simulate_layer(Strategy.lt_fine(), P, trials=200, seed=0)
    coarse = simulate_layer(Strategy.lt_coarse(6), P, trials=200, seed=0)
    assert fine.k == BENIGN_GEOMETRY.out_width and coarse.k == 6
    assert "timing_model" in fine.meta
    assert np.isfinite(fine.total).all() and np.isfinite(coarse.total).all()


def test_pipeline_single_type2_layer():
    prof = PI_PROFILE
    layer = PipelineLayer("pool", 2, flops=1e7)
    res = simulate_pipeline([layer], 4, prof, lambda p: Strategy.uncoded(), trials=50_000, seed=0)
    want = 1e7 * (prof.theta_m + 1 / prof.mu_m)
    assert res.total.min() >= 1e7 * prof.theta_m
    assert abs(res.total.mean() / want - 1) < 0.02
    with pytest.raises(ValueError):
        simulate_pipeline([], 4, prof, lambda p: Strategy.uncoded())
