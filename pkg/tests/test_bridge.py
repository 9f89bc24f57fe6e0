import math

import numpy as np
import pytest
from scipy.stats import chisquare

from gwbridge import (bridge_dp, bridge_prob_exact_enum, enumerate_rooted_trees,
                      make_offspring, max_disp_profile, sample_bridge, sample_gw,
                      tree_from_parents, truncation_bound)
from gwbridge.bridge import BridgeError
from gwbridge.rng import stream
from gwbridge.walks import SRW, simulate_walks


def test_bridge_examples():
    # half-line: forced step out, 1/2 back
    hl = sample_gw(make_offspring({1: 1.0}), 5, stream(0))
    assert bridge_dp(hl, 1, depth_limit=4)[0] == pytest.approx(0.5)
    # star of leaves: leaves force return
    star = tree_from_parents([-1, 0, 0, 0])
    assert bridge_dp(star, 1)[0] == pytest.approx(1.0)
    # complete binary: 1 * (1/3)
    full = tree_from_parents([-1, 0, 0, 1, 1, 2, 2])
    assert bridge_dp(full, 1)[0] == pytest.approx(1 / 3)


def test_parity_zero_at_odd_times():
    t = tree_from_parents([-1, 0, 0, 1, 1])
    _, tab = bridge_dp(t, 3, store_slices=True)
    for odd_t in (1, 3, 5):
        assert tab.slices[odd_t][0] == 0.0


def test_dp_equals_enumeration_small():
    rng = stream(77)
    trees = enumerate_rooted_trees(6)
    for t in trees[::3]:
        for n in (1, 2, 3):
            exact = bridge_dp(t, n, exact=True)[0]
            assert exact == bridge_prob_exact_enum(t, n)
            assert bridge_dp(t, n)[0] == pytest.approx(float(exact), abs=1e-14)
            L = 2
            exact_l = bridge_dp(t, n, depth_limit=L, exact=True)[0]
            assert exact_l == bridge_prob_exact_enum(t, n, depth_limit=L)


def test_horizon_precondition():
    t = sample_gw(make_offspring({1: 0.5, 2: 0.5}), 6, stream(3))
    with pytest.raises(BridgeError):
        bridge_dp(t, 4)  # horizon 8 exceeds cap 6 without a depth limit
    with pytest.raises(BridgeError):
        bridge_dp(t, 4, depth_limit=6)  # frontier sits at the limit
    bridge_dp(t, 4, depth_limit=5)  # fine


def test_conservation():
    # no-kill: closed half-line, 10^4 steps
    t = tree_from_parents([-1] + list(range(11)))
    _, tab = bridge_dp(t, 5000, track_conservation=True)
    assert tab.conservation_error <= 1e-12
    # kill mode: mass + leaked = 1
    t2 = sample_gw(make_offspring({1: 0.5, 2: 0.5}), 12, stream(5))
    _, tab2 = bridge_dp(t2, 20, depth_limit=11, store_slices=True,
                        track_conservation=True)
    assert tab2.conservation_error <= 1e-11
    final = tab2.slices[40]
    assert abs(final.sum() + tab2.leaked_mass - 1.0) <= 1e-11


def test_max_disp_profile():
    t = sample_gw(make_offspring({1: 0.5, 2: 0.5}), 20, stream(7))
    prof = max_disp_profile(t, 4, [0, 2, 4, 8, 19])
    # L = 0: the first step forces depth 1
    assert prof.joint[0] == 0.0
    # monotone in L
    assert all(b >= a - 1e-15 for a, b in zip(prof.joint, prof.joint[1:]))
    # L >= 2n: equals the unconstrained return probability
    p_free, _ = bridge_dp(t, 4)
    assert prof.joint[-1] == pytest.approx(p_free, rel=1e-12)
    assert not prof.p_ref_is_truncated
    cdf = prof.conditional_cdf()
    assert cdf[-1] == pytest.approx(1.0, rel=1e-12)


def test_truncation_bound():
    d = make_offspring({1: 0.97, 2: 0.03})
    t = sample_gw(d, 129, stream(11))
    n = 64
    assert truncation_bound(t, n, 128) == pytest.approx(0.0, abs=1e-300)
    p_free, _ = bridge_dp(t, n)
    p_128, _ = bridge_dp(t, n, depth_limit=128)
    assert p_128 == pytest.approx(p_free, rel=1e-12)
    leaks = [truncation_bound(t, n, L) for L in (8, 16, 32, 64, 128)]
    assert all(b <= a + 1e-15 for a, b in zip(leaks, leaks[1:]))
    # certificate is valid: p_free - p_L <= leak(L)
    for L, leak in zip((8, 16, 32, 64), leaks):
        p_l, _ = bridge_dp(t, n, depth_limit=L)
        assert p_free - p_l <= leak + 1e-12


def test_underflow_guard_log_space():
    # extremely unlikely confinement: p fair below the double floor, but the
    # rescaled DP still reports a finite log
    line = tree_from_parents([-1, 0])  # two-node segment, heavy oscillation
    t = tree_from_parents([-1] + [0] + list(range(1, 2)))  # root with chain of 2
    p, tab = bridge_dp(t, 3000, depth_limit=None)
    assert tab.log_p_return > -math.inf
    # narrow pipe of length 2 under a 6000-step horizon: p ~ (cos pi/3)^6000-ish
    d = make_offspring({1: 0.97, 2: 0.03})
    tt = sample_gw(d, 40, stream(13))
    p2, tab2 = bridge_dp(tt, 3000, depth_limit=2)
    assert p2 == 0.0 or p2 < 1e-280  # underflowed as a float
    assert -1e5 < tab2.log_p_return < -600


def test_sample_bridge_unique_and_symmetric():
    hl = sample_gw(make_offspring({1: 1.0}), 5, stream(17))
    _, tab = bridge_dp(hl, 1, depth_limit=4, store_slices=True)
    path = sample_bridge(hl, 1, tab, stream(18))
    assert list(path.vertices) == [0, 1, 0]

    full = tree_from_parents([-1, 0, 0, 1, 1, 2, 2])
    _, tab = bridge_dp(full, 1, store_slices=True)
    rng = stream(19)
    counts = {1: 0, 2: 0}
    for _ in range(2000):
        p = sample_bridge(full, 1, tab, rng)
        counts[int(p.vertices[1])] += 1
    assert abs(counts[1] / 2000 - 0.5) <= 5 * math.sqrt(0.25 / 2000)


def test_sample_bridge_histogram_matches_profile():
    d = make_offspring({1: 0.6, 2: 0.4})
    t = sample_gw(d, 14, stream(21))
    n = 6
    p_ret, tab = bridge_dp(t, n, depth_limit=13, store_slices=True)
    rng = stream(22)
    n_samp = 50_000
    maxes = np.empty(n_samp, dtype=np.int64)
    for i in range(n_samp):
        path = sample_bridge(t, n, tab, rng)
        maxes[i] = path.depths.max()
        assert path.vertices[0] == 0 and path.vertices[-1] == 0
    levels = list(range(1, 7))
    prof = max_disp_profile(t, n, levels)
    cdf = np.array(prof.conditional_cdf())
    pmf = np.diff(np.concatenate([[0.0], cdf]))
    obs = np.array([(maxes == L).sum() for L in levels])
    keep = pmf * n_samp >= 5
    stat, pval = chisquare(obs[keep], pmf[keep] / pmf[keep].sum() * obs[keep].sum())
    assert pval > 1e-3


def test_sample_bridge_stride_consistent():
    t = tree_from_parents([-1, 0, 0, 1, 1, 2, 2])
    n = 3
    _, tab1 = bridge_dp(t, n, store_slices=True, stride=1)
    _, tab4 = bridge_dp(t, n, store_slices=True, stride=4)
    p1 = sample_bridge(t, n, tab1, stream(23))
    p4 = sample_bridge(t, n, tab4, stream(23))
    assert np.array_equal(p1.vertices, p4.vertices)


def test_dp_vs_monte_carlo_50_vertices():
    d = make_offspring({0: 0.2, 1: 0.3, 2: 0.3, 3: 0.2})
    rng = stream(29)
    t = None
    while t is None or not 40 <= t.n_nodes <= 60 or t.height < 7:
        t = sample_gw(d, 12, rng)
    n = 6
    p_dp, _ = bridge_dp(t, n)
    W = simulate_walks(t, SRW, 2 * n, 1_000_000, stream(30))
    mc = float((W[-1] == 0).mean())
    se = math.sqrt(p_dp * (1 - p_dp) / W.shape[1])
    assert abs(mc - p_dp) <= 3 * se


def test_return_rate_bounded_by_trap_constant():
    # -log P(max <= L_ref, return) / n^(1/3) stays under the comparison line
    # log(k+1)(2+3 r_k) + 10/r_k^2 evaluated at k = 2
    d = make_offspring({1: 0.9, 2: 0.1})
    mu_t = 0.9 + 2 * 0.1
    r_k = math.log(1 / mu_t) / (2 * math.log(0.9))
    c_k = math.log(3) * (2 + 3 * r_k) + 10 / r_k**2
    rng = stream(31)
    for n in (512, 1024):
        cap = math.ceil(6 * n ** (1 / 3)) + 1
        t, _ = __import__("gwbridge").sample_gw_survival(d, cap, rng)
        _, tab = bridge_dp(t, n, depth_limit=cap - 1)
        rate = -tab.log_p_return / n ** (1 / 3)
        assert rate <= c_k
