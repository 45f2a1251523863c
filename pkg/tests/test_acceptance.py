"""Acceptance criteria 1-12.  Each test prints one ``criterion N: PASS|FAIL`` line.

Run directly with ``python3 tests/test_acceptance.py`` or through pytest.
"""

import asyncio
import subprocess
import sys
import threading
import time

import numpy as np
import pytest

from codedconv.coded import coded_conv_layer, relative_error
from codedconv.latency import (LayerGeometry, ShiftExp, cdf,
                               expected_kth_order_stat, fit, sample)
from codedconv.lt import LTDecoder, LTEncoder, lt_overhead_trial
from codedconv.models import BENIGN_GEOMETRY, PI_PROFILE, sample_benign, vgg16_like
from codedconv.optimizer import (SystemParams, coefficients, coded_expected_omitted,
                                 coeffs_for_ratio, compare_omitted, failure_comparison,
                                 k_sub_star, minimize_L, objective_L, order_stat_increase,
                                 straggler_gain, uncoded_expected_omitted)
from codedconv.runtime.config import local_inference, synthetic_model
from codedconv.runtime.master import Master, run_model
from codedconv.simulator import (ScenarioConfig, Strategy, empirical_optimal_k, simulate_layer,
                                 simulate_pipeline)
from codedconv.split import dependency_oracle, plan_split
from codedconv.tensor import ConvSpec, conv_layer

from helpers import random_params, report


# 1 ---------------------------------------------------------------------------

def test_criterion_1_coding_correctness():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        K = int(rng.choice([1, 3, 5]))
        spec = ConvSpec.random(int(rng.integers(1, 5)), int(rng.integers(1, 5)), K,
                               int(rng.integers(1, 3)), int(rng.integers(0, 2)), rng=rng, bias=True)
        x = rng.standard_normal((1, spec.in_channels, int(rng.integers(K, 8)),
                                 int(rng.integers(K + 12, 40)))).astype(np.float32)
        w_out = conv_layer(x, spec).shape[3]
        n = int(rng.integers(2, 11))
        k = int(rng.integers(1, min(n - 1, w_out) + 1))
        subset = sorted(rng.choice(n, k, replace=False))
        worst = max(worst, relative_error(coded_conv_layer(x, spec, n, k, subset),
                                          conv_layer(x, spec)))
    dt = time.perf_counter() - t0
    report(1, worst < 1e-5 and dt < 60,
           f"1000 cases, worst relative error {worst:.2e} (< 1e-5), {dt:.1f} s")


# 2 ---------------------------------------------------------------------------

def test_criterion_2_split_grid():
    t0 = time.perf_counter()
    checked = mismatches = 0
    for K in (1, 3, 5, 7):
        for S in (1, 2):
            spec = ConvSpec(1, 1, K, S)
            for w_out in range(1, 65):
                w_in = K + (w_out - 1) * S
                for k in range(1, min(16, w_out) + 1):
                    plan = plan_split(spec, w_in, k)
                    pieces = list(plan.pieces) + ([plan.remainder] if plan.remainder else [])
                    for p in pieces:
                        checked += 1
                        mismatches += (p.a_in, p.b_in) != dependency_oracle(spec, p.a_out, p.b_out)
    dt = time.perf_counter() - t0
    report(2, mismatches == 0 and dt < 60,
           f"{checked} pieces over the full grid, {mismatches} mismatches, {dt:.1f} s")


# 3 ---------------------------------------------------------------------------

def test_criterion_3_convexity():
    rng = np.random.default_rng(3)
    violations = total = 0
    for n in range(3, 31):
        ks = np.linspace(1, n - 0.1, 200)
        for _ in range(100):
            P = random_params(rng, n)
            L = np.array([objective_L(k, P) for k in ks])
            total += 1
            violations += not (L[2:] - 2 * L[1:-1] + L[:-2] > 0).all()
    report(3, violations == 0, f"{total} systems, n in 3..30, {violations} with a nonpositive "
                               "second difference")


# 4 ---------------------------------------------------------------------------

def test_criterion_4_approximation_gap():
    rng = np.random.default_rng(2024)
    close = 0
    gaps = []
    for i in range(50):
        P = sample_benign(rng, n=20)
        k_circ = minimize_L(P).k_circ
        emp = empirical_optimal_k(P, trials=300_000, seed=i, bootstrap=0, relaxed=True)
        close += abs(k_circ - emp.k_star) <= 1
        gaps.append(emp.means[k_circ] / emp.means[emp.k_star] - 1)
    worst = max(gaps)
    report(4, close >= 45 and worst <= 0.05,
           f"|k*-k°| <= 1 in {close}/50 systems (need 45), worst latency gap at k° {worst:.2%}")


# 5 ---------------------------------------------------------------------------

def test_criterion_5_sensitivity():
    rng = np.random.default_rng(5)
    systems = [sample_benign(rng, n=int(rng.choice([10, 20]))) for _ in range(30)]
    systems.append(SystemParams(10, BENIGN_GEOMETRY, PI_PROFILE))
    rising = ["mu_cmp", "mu_m", "mu_rec", "mu_sen", "theta_cmp", "theta_rec", "theta_sen"]
    sweeps = violations = moved = 0
    for P in systems:
        for key in rising + ["theta_m"]:
            base = getattr(P.profile, key)
            ks = np.array([minimize_L(P.with_profile(**{key: base * f})).k_circ
                           for f in np.logspace(-1, 1, 10)])
            d = np.diff(ks)
            sweeps += 1
            moved += bool(d.any())
            violations += bool((d > 0).any() if key == "theta_m" else (d < 0).any())
    report(5, violations == 0,
           f"{sweeps} sweeps ({moved} change k°), {violations} monotonicity violations")


# 6 ---------------------------------------------------------------------------

def _one_by_one_system(n: int, R: float) -> SystemParams:
    """1x1 kernel (no overlap terms) and an instant master: only h2 and h3 remain."""
    geo = LayerGeometry.from_unpadded(ConvSpec(64, 64, 1), 56, 56)
    base = PI_PROFILE.replace(mu_m=1e30, theta_m=0.0)
    r0 = coefficients(SystemParams(n, geo, base)).R
    s = R / r0
    prof = base.replace(theta_cmp=base.theta_cmp * s, theta_rec=base.theta_rec * s,
                        theta_sen=base.theta_sen * s)
    return SystemParams(n, geo, prof)


def test_criterion_6_straggler_gain():
    h10 = straggler_gain(10, k_sub_star(10))
    const_ok = abs(h10 - 1.379) <= 0.001
    grid_ok = all(compare_omitted(n, coeffs_for_ratio(R)).delta > 0
                  for n in range(10, 31) for R in (0.25, 0.5, 0.75, 1.0))
    agree = []
    for n in (10, 20):
        for R in (0.25, 0.5, 0.75, 1.0):
            P = _one_by_one_system(n, R)
            c = coefficients(P)
            k = int(round(k_sub_star(n)))
            closed = uncoded_expected_omitted(n, c) - coded_expected_omitted(n, k, c)
            mc_u = simulate_layer(Strategy.uncoded(), P, trials=100_000, seed=6, relaxed=True)
            mc_c = simulate_layer(Strategy.coded(k), P, trials=100_000, seed=6, relaxed=True)
            agree.append(np.sign(mc_u.total.mean() - mc_c.total.mean()) == np.sign(closed))
    report(6, const_ok and grid_ok and all(agree),
           f"h(10, 10-e) = {h10:.6f} (need 1.379 ± 0.001); delta > 0 on the n x R grid: {grid_ok}; "
           f"Monte Carlo sign agrees in {sum(agree)}/{len(agree)} systems")


# 7 ---------------------------------------------------------------------------

def test_criterion_7_failure_increase():
    harm = max(order_stat_increase(n, int(round(k_sub_star(n)))) / int(round(k_sub_star(n)))
               for n in range(10, 101))
    bound_ok = harm < 0.09
    rng = np.random.default_rng(7)
    systems = [sample_benign(rng, n=10) for _ in range(4)]
    systems.append(SystemParams(10, BENIGN_GEOMETRY, PI_PROFILE))
    base, fail = ScenarioConfig(), ScenarioConfig("failure", n_f=1, detect="signal")
    ratios, coded_smaller = [], []
    for P in systems:
        fc = failure_comparison(P)
        if fc.R_cmp <= 0.1:
            continue

        def mean(strategy, scenario):
            return simulate_layer(strategy, P, scenario, trials=20_000, seed=7).total.mean()

        unc = mean(Strategy.uncoded(), fail) - mean(Strategy.uncoded(), base)
        cod = mean(Strategy.coded(fc.k), fail) - mean(Strategy.coded(fc.k), base)
        ratios.append(unc / fc.uncoded_increase_lower_bound_s)
        coded_smaller.append(cod < unc)
    mc_ok = len(ratios) > 0 and min(ratios) >= 1 and all(coded_smaller)
    report(7, bound_ok and mc_ok,
           f"max coded increase {harm:.4f}·N/mu for n in 10..100 (< 0.09); uncoded increase / "
           f"R_cmp·E[T^u] = {', '.join(f'{r:.2f}' for r in ratios)} (need >= 1); "
           f"coded smaller in {sum(coded_smaller)}/{len(coded_smaller)}")


# 8 ---------------------------------------------------------------------------

def test_criterion_8_latency_model():
    p = ShiftExp(2.0, 0.5, 1.0)
    x = np.sort(sample(p, np.random.default_rng(8), 100_000))
    F = cdf(x, p)
    i = np.arange(1, len(x) + 1)
    ks = float(max((i / len(x) - F).max(), (F - (i - 1) / len(x)).max()))
    est = fit(sample(p, np.random.default_rng(0), 500))
    mu_err, th_err = abs(est.mu / p.mu - 1), abs(est.theta / p.theta - 1)
    rng = np.random.default_rng(9)
    worst = 0.0
    q = ShiftExp(1.5, 0.2, 2.0)
    for n, k in ((2, 1), (5, 3), (10, 7), (20, 20)):
        mc = np.sort(sample(q, rng, (100_000, n)), axis=1)[:, k - 1].mean()
        worst = max(worst, abs(mc / expected_kth_order_stat(n, k, q) - 1))
    report(8, ks < 0.01 and mu_err < 0.05 and th_err < 0.02 and worst < 0.02,
           f"KS {ks:.4f} (< 0.01); fit mu off {mu_err:.1%} (< 5%), theta off {th_err:.1%} "
           f"(< 2%); order statistic off {worst:.2%} (< 2%)")


# 9 ---------------------------------------------------------------------------

def test_criterion_9_lt_overhead():
    t0 = time.perf_counter()
    s = lt_overhead_trial(100, 200, seed=0, c=0.03, delta=0.5)
    rng = np.random.default_rng(9)
    worst = 0.0
    for t in range(5):
        sources = [rng.standard_normal(32) for _ in range(100)]
        enc, dec = LTEncoder(sources, rng=t), LTDecoder(100)
        out = None
        while out is None:
            out = dec.add(enc.next())
        worst = max(worst, relative_error(out, np.stack(sources)))
    report(9, s.mean <= 130 and worst < 1e-9,
           f"mean symbols to decode {s.mean:.2f} for k=100 (<= 130), p95 {s.p95:.0f}, "
           f"decode error {worst:.1e} (< 1e-9), {time.perf_counter() - t0:.1f} s")


# 10 --------------------------------------------------------------------------

MODEL = synthetic_model((1, 8, 24, 40), [(16, 3, 1, 1), (16, 3, 1, 1)], seed=10)
X = np.random.default_rng(10).standard_normal(MODEL.input_shape).astype(np.float32)


def _run(addresses, k=None, coded=True, during=None):
    async def go():
        m = Master()
        await m.connect(addresses)
        try:
            if during is not None:
                during()
            return await run_model(m, MODEL, X, k, coded)
        finally:
            await m.close()

    return asyncio.run(go())


def test_criterion_10_integration(cluster_factory):
    t0 = time.perf_counter()
    ref = local_inference(MODEL, X)
    healthy = cluster_factory([0, 0, 0, 0])
    err_a = relative_error(_run(healthy.addresses).output, ref)

    # every worker sleeps 300 ms per subtask; worker 0 dies 100 ms into the first layer
    doomed = cluster_factory([300, 300, 300, 300])
    rep_b = _run(doomed.addresses, k=3,
                 during=lambda: threading.Timer(0.1, doomed.kill, (0,)).start())
    err_b = relative_error(rep_b.output, ref)
    killed = doomed.procs[0].poll() is not None

    slow = cluster_factory([0, 0, 0, 200])
    coded_t, uncoded_t = [], []
    for _ in range(10):
        coded_t.append(_run(slow.addresses, coded=True).total_s)
        uncoded_t.append(_run(slow.addresses, coded=False).total_s)
    med_c, med_u = float(np.median(coded_t)), float(np.median(uncoded_t))
    dt = time.perf_counter() - t0
    ok = err_a < 1e-5 and err_b < 1e-5 and killed and med_c < med_u and dt < 120
    report(10, ok, f"(a) healthy error {err_a:.1e}; (b) worker killed mid-layer, error "
                   f"{err_b:.1e}; (c) median coded {med_c * 1e3:.0f} ms vs uncoded "
                   f"{med_u * 1e3:.0f} ms; {dt:.1f} s")


# 11 --------------------------------------------------------------------------

def _vgg_mean(strategy_name: str, scenario: ScenarioConfig) -> float:
    def strategy_for(P):
        if strategy_name == "uncoded":
            return Strategy.uncoded()
        k = empirical_optimal_k(P, scenario, trials=3000, seed=7, bootstrap=0).k_star
        return Strategy.coded(k)

    res = simulate_pipeline(vgg16_like(), 10, PI_PROFILE, strategy_for, scenario,
                            trials=10_000, seed=1)
    return float(res.total.mean())


def test_criterion_11_scenarios():
    rel = {}
    for lam in (0.0, 0.2, 0.4, 0.6, 1.0):
        sc = ScenarioConfig("straggling", lambda_tr=lam)
        rel[lam] = _vgg_mean("coded", sc) / _vgg_mean("uncoded", sc) - 1
    order_ok = all(rel[lam] < 0 for lam in (0.4, 0.6, 1.0)) and \
        all(0 <= rel[lam] <= 0.10 for lam in (0.0, 0.2))
    base = ScenarioConfig()
    fail = ScenarioConfig("failure", n_f=2)
    unc_rise = _vgg_mean("uncoded", fail) / _vgg_mean("uncoded", base) - 1
    cod_rise = _vgg_mean("coded", fail) / _vgg_mean("coded", base) - 1
    ok = order_ok and unc_rise >= 0.5 and cod_rise <= 0.15
    shown = ", ".join(f"{lam}: {r:+.1%}" for lam, r in rel.items())
    report(11, ok, f"coded vs uncoded by lambda_tr ({shown}); n_f 0->2 raises uncoded "
                   f"{unc_rise:+.0%} (>= 50%), coded {cod_rise:+.1%} (<= 15%)")


# 12 --------------------------------------------------------------------------

def test_criterion_12_determinism(tmp_path):
    import json

    layer = {"in_channels": 32, "out_channels": 32, "kernel_size": 3, "stride": 1,
             "padding": 1, "height": 28, "width": 28}
    system = tmp_path / "system.json"
    system.write_text(json.dumps({
        "n": 8, "layer": layer, "scenario": {"kind": "straggle_and_fail", "n_f": 1},
        "strategies": ["coded:auto", "coded:best", "uncoded", "replication", "lt_coarse:8"],
        "sweep": {"param": "lambda_tr", "values": [0.0, 0.5]}}))
    ratio = tmp_path / "ratio.json"
    ratio.write_text(json.dumps({"n": 20, "R": 0.5}))
    samples = tmp_path / "samples.txt"
    samples.write_text("\n".join(f"{v:.6f}" for v in sample(ShiftExp(2, 0.5, 1),
                                                            np.random.default_rng(0), 200)))
    commands = {
        "optimize": ["optimize", "--config", str(system)],
        "simulate": ["simulate", "--config", str(system), "--trials", "3000"],
        "compare": ["compare", "--config", str(system), "--trials", "1000"],
        "analytic": ["compare", "--config", str(ratio), "--analytic"],
        "fit": ["fit", "--samples", str(samples)],
    }
    differing = []
    for name, argv in commands.items():
        outputs = []
        for run in ("a", "b"):
            out = tmp_path / f"{name}-{run}.csv"
            r = subprocess.run([sys.executable, "-m", "codedconv"] + argv +
                               ["--seed", "12", "--out", str(out)],
                               capture_output=True, check=True)
            png = out.with_suffix(".png")
            outputs.append((r.stdout, out.read_bytes(), png.read_bytes() if png.exists() else b""))
        if outputs[0] != outputs[1]:
            differing.append(name)
    report(12, not differing, f"{len(commands)} commands run twice with seed 12; stdout, CSV and "
                              f"PNG byte-identical except: {differing or 'none'}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
