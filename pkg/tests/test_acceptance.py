"""Acceptance battery: one test per criterion, each printing a PASS line.

The scaling study (criterion 8) is deterministic for its pinned config and
seed, so a previously produced out/acceptance artifact with a matching
manifest is reused verbatim; otherwise the experiment runs in-process
(minutes to tens of minutes on one core; --workers scales it down).
"""

import csv
import json
import math
import os
import time

import pytest

import gwbridge
from gwbridge import (SRW, bridge_dp, bridge_prob_exact_enum, dual_distribution,
                      enumerate_rooted_trees, extinct_size_gf, extinct_size_radius,
                      make_offspring, moment_bound_certified, moment_bound_n1_certified,
                      couple_to_line_batch, regular_tree_escape_bracket, sample_gw,
                      sample_min_degree_tree, sandwich_constants, verify_sandwich,
                      z_confinement, z_first_return_pmf)
from gwbridge.experiments import DEFAULT_CONFIGS, ExperimentConfig, run_experiment
from gwbridge.oracles import (MOGULSKII_CONSTANT, first_return_gf_coefficients,
                              z_first_return_pmf_exact)
from gwbridge.rng import stream
from gwbridge.walks import escape_prob, simulate_walks

ACCEPT_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                          "out", "acceptance")


def _report(name: str, ok: bool, detail: str = "") -> None:
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
    assert ok, f"{name}: {detail}"


def test_mogulskii_constant():
    t0 = time.monotonic()
    n, x = 10**6, 251
    val = (x**2 / n) * math.log(z_confinement(n, x))
    rel = abs(val - MOGULSKII_CONSTANT) / abs(MOGULSKII_CONSTANT)
    wall = time.monotonic() - t0
    _report("mogulskii", rel <= 0.08 and wall < 60.0,
            f"(x^2/n) log P = {val:.5f} vs -pi^2/8 = {MOGULSKII_CONSTANT:.5f}, "
            f"rel {rel:.3%}, {wall:.1f}s")


def test_hitting_moment_exhaustive():
    t0 = time.monotonic()
    checked = 0
    for nv in range(1, 8):
        for tree in enumerate_rooted_trees(nv):
            for n_leaves in (1, 2, 3):
                holds, up, lo = moment_bound_certified(tree, n_leaves)
                assert holds, (nv, n_leaves, float(up), float(lo))
                checked += 1
            assert moment_bound_n1_certified(tree)
            checked += 1
    wall = time.monotonic() - t0
    _report("hitting_moment_exhaustive", wall < 60.0,
            f"{checked} certified checks over all trees <= 7 vertices, {wall:.1f}s")


def test_change_of_measure_identity():
    t0 = time.monotonic()
    rng = stream(20260810, 99)
    n_trees = 0
    worst_resid = 0.0
    worst_slack = math.inf
    for i in range(20):
        m = 2 if i % 2 == 0 else 3
        n = 3 if (m == 2 and i % 4 == 0) else 2
        tree = sample_min_degree_tree(m, m + 2, n + 1, rng)
        consts = sandwich_constants(m, int(tree.deg.max()))
        assert consts.M == pytest.approx(4 * m / (m + 1) ** 2, rel=1e-15)
        assert consts.c1 == pytest.approx((m + 1) / (2 * m), rel=1e-15)
        rep = verify_sandwich(tree, n, consts, L_list=[1, n])
        assert rep.per_path_ok and rep.pbounds_ok, (i, m, n)
        worst_resid = max(worst_resid, max(rep.identity_residual.values()))
        worst_slack = min(worst_slack, rep.min_slack_lower, rep.min_slack_upper)
        n_trees += 1
    wall = time.monotonic() - t0
    _report("change_of_measure", n_trees == 20 and worst_resid <= 1e-12 and wall < 120,
            f"20 min-degree-m trees, worst identity residual {worst_resid:.2e}, "
            f"min sandwich slack {worst_slack:.2e}, {wall:.1f}s")


def test_bridge_dp_vs_enumeration():
    mismatches = 0
    total = 0
    for nv in range(2, 11):  # the 1-vertex tree admits no walk at all
        for tree in enumerate_rooted_trees(nv):
            for n in (1, 2, 3):
                dp = bridge_dp(tree, n, exact=True)[0]
                if dp != bridge_prob_exact_enum(tree, n):
                    mismatches += 1
                total += 1
    _report("bridge_vs_enumeration_exact", mismatches == 0,
            f"{total} (tree, n) pairs over all rooted trees <= 10 vertices")

    # Monte Carlo cross-check on a ~50-vertex tree at n = 6
    d = make_offspring({0: 0.2, 1: 0.3, 2: 0.3, 3: 0.2})
    rng = stream(20260810, 50)
    t = None
    while t is None or not 40 <= t.n_nodes <= 60 or t.height < 7:
        t = sample_gw(d, 12, rng)
    p_dp, _ = bridge_dp(t, 6)
    W = simulate_walks(t, SRW, 12, 1_000_000, rng)
    mc = float((W[-1] == 0).mean())
    se = math.sqrt(p_dp * (1 - p_dp) / W.shape[1])
    z = abs(mc - p_dp) / se
    _report("bridge_vs_monte_carlo", z <= 3.0,
            f"{t.n_nodes}-vertex tree, DP {p_dp:.6f} vs MC {mc:.6f} (z = {z:.2f})")


def test_coupling_domination():
    rng = stream(20260810, 7)
    laws = [make_offspring({1: 0.5, 2: 0.5}), make_offspring({2: 0.5, 3: 0.5}),
            make_offspring({1: 0.9, 2: 0.1})]
    caps = [34, 14, 80]
    total_paths = 0
    violations = 0
    for i in range(10):
        d = laws[i % 3]
        t = sample_gw(d, caps[i % 3], rng)
        _, _, viol = couple_to_line_batch(t, 128, 10_000, rng)
        violations += viol
        total_paths += 10_000
    _report("coupling_domination", total_paths == 100_000 and violations == 0,
            f"{total_paths} coupled paths x 128 steps, {violations} violations")


def test_escape_probability_bracket():
    lo, hi = regular_tree_escape_bracket(2, 30)
    width = hi - lo
    ok = abs(lo - 1 / 6) < 1e-6 and abs(hi - 1 / 6) < 1e-6 and width < 1e-6
    # arena recursion agrees with the level recursion on an explicit tree
    full = sample_gw(make_offspring({2: 1.0}), 14, stream(1))
    v = int(full.children(0)[0])
    vp = int(full.children(v)[0])
    alo, ahi = escape_prob(full, v, vp, min_degree_beyond_cap=2)
    slo, shi = regular_tree_escape_bracket(2, 14)
    ok = ok and abs(alo - slo) < 1e-15 and abs(ahi - shi) < 1e-15
    _report("escape_bracket", ok,
            f"bracket [{lo:.9f}, {hi:.9f}], width {width:.2e} at cap 30")


def test_extinction_dual_machinery():
    d = make_offspring({0: 0.25, 2: 0.75})
    q_err = abs(d.extinction_q - 1 / 3)
    dual = dual_distribution(d)
    x_o, x_bound = extinct_size_radius(d)
    x = 0.5 * (1.0 + x_bound)  # strictly inside the certified radius
    vals = [extinct_size_gf(d, x, n) for n in (5, 20, 80, 320)]
    bounded = all(v <= x_o for v in vals)
    monotone = all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))
    _report("extinction_dual", q_err <= 1e-10 and dual.mean_mu < 1.0
            and bounded and monotone,
            f"q err {q_err:.2e}, dual mean {dual.mean_mu:.3f}, "
            f"F_n <= x_o = {x_o:.4f} at x = {x:.4f}")


def _case1_records():
    cfg = ExperimentConfig(**DEFAULT_CONFIGS["Case1Scaling"])
    cfg.out_dir = ACCEPT_DIR
    csv_path = os.path.join(ACCEPT_DIR, "Case1Scaling.csv")
    manifest_path = os.path.join(ACCEPT_DIR, "manifest.json")
    if os.path.exists(csv_path) and os.path.exists(manifest_path):
        manifest = json.load(open(manifest_path))
        if manifest.get("config") == cfg.to_json_dict():
            rows = list(csv.DictReader(open(csv_path)))
            if rows:
                return rows
    run_experiment(cfg)  # deterministic; identical to any cached artifact
    return list(csv.DictReader(open(csv_path)))


def test_case1_scaling_slope():
    # Known red (see README and the decisions ledger): the faithful
    # implementation of this criterion measures slope ~0.476 with CI
    # [0.455, 0.497] -- the pinned near-critical law is still in the
    # diffusive-to-trap crossover on this n grid, so the [0.20, 0.45]
    # band is not attained. The assertion is kept as stated.
    t0 = time.monotonic()
    rows = _case1_records()
    wall = time.monotonic() - t0
    slope = ci_lo = ci_hi = None
    medians = 0
    for r in rows:
        if r["stat"] == "slope":
            slope = float(r["value"])
        elif r["stat"] == "slope_ci_lo":
            ci_lo = float(r["value"])
        elif r["stat"] == "slope_ci_hi":
            ci_hi = float(r["value"])
        elif r["stat"] == "max_disp_q50":
            medians += 1
    ok = (slope is not None and 0.20 <= slope <= 0.45
          and ci_lo is not None and ci_hi is not None
          and not (ci_lo <= 0.0 <= ci_hi) and not (ci_lo <= 1.0 <= ci_hi)
          and medians >= 20 * 5)
    _report("case1_scaling", ok,
            f"slope {slope} in [0.20, 0.45], CI [{ci_lo}, {ci_hi}] "
            f"excludes 0 and 1; {medians} medians; {wall:.0f}s this run")


def test_sandwich_and_case2_diagnostics():
    cfg = ExperimentConfig(experiment="Case2Diagnostics", pmf={2: 0.5, 3: 0.5},
                           n_grid=[4, 6, 8], replicas=2, master_seed=20260810,
                           out_dir=os.path.join(ACCEPT_DIR, "case2"),
                           params={"brw_paths": 2000})
    _, recs = run_experiment(cfg)
    diag = [r for r in recs if r.stat == "diag_gamma0.8"]
    finite_neg = all(math.isfinite(r.value) and r.value < 0 for r in diag)
    cons = [r for r in recs if r.stat == "linf_consistency"]
    cons_ok = all(r.value <= 1e-12 for r in cons)
    sand_ok = all(r.flag == "pass" for r in recs if r.stat.startswith("sandwich"))
    _report("case2_diagnostics", finite_neg and cons_ok and sand_ok and len(diag) == 6,
            f"{len(diag)} diagnostic values, max consistency residual "
            f"{max(r.value for r in cons):.2e}")


def test_first_return_generating_function():
    exact = z_first_return_pmf_exact(20)
    taylor = first_return_gf_coefficients(20)
    worst = max(abs(float(a - b)) for a, b in zip(exact, taylor))
    closed = z_first_return_pmf(20)
    worst_f = max(abs(closed[k - 1] - float(taylor[k - 1])) for k in range(1, 21))
    _report("first_return_gf", worst <= 1e-12 and worst_f <= 1e-12,
            f"max |closed form - GF coefficient| = {max(worst, worst_f):.2e} for k <= 20")
