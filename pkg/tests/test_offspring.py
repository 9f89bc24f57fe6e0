import math

import numpy as np
import pytest

from gwbridge import (CaseTag, OffspringDist, dual_distribution, extinct_size_gf,
                      extinct_size_radius, extinction_prob, make_offspring, pgf_eval,
                      trap_constants, truncated_mean)
from gwbridge.offspring import OffspringError


def test_make_offspring_examples():
    d = make_offspring({1: 0.5, 2: 0.5})
    assert d.mean_mu == pytest.approx(1.5)
    assert d.min_support_m == 1
    assert d.case_tag is CaseTag.CASE_1A

    d = make_offspring({0: 0.25, 2: 0.75})
    assert d.mean_mu == pytest.approx(1.5)
    assert d.min_support_m == 2
    assert d.case_tag is CaseTag.CASE_1B

    d = make_offspring({2: 0.5, 3: 0.5})
    assert d.mean_mu == pytest.approx(2.5)
    assert d.min_support_m == 2
    assert d.case_tag is CaseTag.CASE_2


def test_make_offspring_rejections():
    with pytest.raises(OffspringError):
        make_offspring({})
    with pytest.raises(OffspringError):
        make_offspring({0: -0.1, 1: 1.1})
    with pytest.raises(OffspringError):
        make_offspring({0: 0.5, 1: 0.5 + 1e-7})  # off by more than 1e-9
    # within tolerance: accepted and renormalized
    d = make_offspring({0: 0.5, 1: 0.5 + 1e-10})
    assert math.fsum(d.pmf.values()) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(OffspringError):
        make_offspring({-1: 1.0})


def test_pgf_basics():
    d = make_offspring({0: 0.25, 2: 0.75})
    assert pgf_eval(d, 1.0) == pytest.approx(1.0, abs=1e-14)
    assert pgf_eval(d, 0.5) == pytest.approx(0.4375, abs=1e-15)  # 0.25 + 0.75/4
    q = d.extinction_q
    assert pgf_eval(d, q) == pytest.approx(q, abs=1e-10)


def test_pgf_monotone_convex():
    d = make_offspring({0: 0.2, 1: 0.3, 3: 0.5})
    xs = np.linspace(0.0, 1.0, 41)
    vals = np.array([pgf_eval(d, float(x)) for x in xs])
    assert (np.diff(vals) >= -1e-14).all()
    assert (np.diff(vals, 2) >= -1e-12).all()


def test_extinction_examples():
    # 0.75 q^2 - q + 0.25 = 0 has roots 1/3 and 1; smallest is 1/3
    d = make_offspring({0: 0.25, 2: 0.75})
    assert abs(d.extinction_q - 1 / 3) < 1e-10
    assert abs(extinction_prob(d) - 1 / 3) < 1e-10
    assert make_offspring({2: 0.5, 3: 0.5}).extinction_q == 0.0
    assert make_offspring({0: 0.6, 2: 0.4}).extinction_q == 1.0
    # degenerate Z == 1: the half-line never dies
    assert make_offspring({1: 1.0}).extinction_q == 0.0


def test_extinction_smallest_root_random_family():
    rng = np.random.default_rng(7)
    for _ in range(50):
        p0 = rng.uniform(0.05, 0.45)
        p2 = rng.uniform(p0 + 0.05, 0.95 - 1e-6)
        p1 = 1.0 - p0 - p2
        if p1 < 0:
            continue
        d = make_offspring({0: p0, 1: p1, 2: p2})
        # roots of p2 q^2 + (p1-1) q + p0 = 0
        roots = np.roots([p2, p1 - 1.0, p0])
        roots = sorted(r.real for r in roots if abs(r.imag) < 1e-12 and -1e-9 <= r.real)
        target = min(r for r in roots if r > -1e-12)
        assert d.extinction_q == pytest.approx(min(target, 1.0), abs=1e-9)


def test_dual_distribution():
    d = make_offspring({0: 0.25, 2: 0.75})
    dual = dual_distribution(d)
    assert dual.prob(0) == pytest.approx(0.75, abs=1e-9)
    assert dual.prob(2) == pytest.approx(0.25, abs=1e-9)
    assert dual.mean_mu == pytest.approx(0.5, abs=1e-9)
    sub = make_offspring({0: 0.6, 2: 0.4})
    assert dual_distribution(sub).pmf == sub.pmf
    with pytest.raises(OffspringError):
        dual_distribution(make_offspring({2: 1.0}))  # q = 0


def test_dual_mean_below_one_random_family():
    rng = np.random.default_rng(11)
    for _ in range(40):
        w = rng.dirichlet(np.ones(4))
        pmf = {0: w[0], 1: w[1], 2: w[2], 3: w[3]}
        d = make_offspring(pmf)
        if d.mean_mu <= 1.0 + 1e-9 or d.extinction_q == 0.0:
            continue
        assert dual_distribution(d).mean_mu < 1.0


def _enumerate_truncated_sizes(pmf: dict[int, float], depth: int) -> dict[int, float]:
    """Distribution of the vertex count of generations 0..depth, by explicit
    enumeration of capped tree shapes (independent of the GF recursion)."""
    if depth == 0:
        return {1: 1.0}
    sub = _enumerate_truncated_sizes(pmf, depth - 1)
    out: dict[int, float] = {}
    for z, pz in pmf.items():
        combos = {0: 1.0}
        for _ in range(z):
            nxt: dict[int, float] = {}
            for size_acc, pa in combos.items():
                for s, ps in sub.items():
                    key = size_acc + s
                    nxt[key] = nxt.get(key, 0.0) + pa * ps
            combos = nxt
        for s, p in combos.items():
            out[1 + s] = out.get(1 + s, 0.0) + pz * p
    return out


@pytest.mark.parametrize("n_gens", [0, 1, 2, 3, 4])
def test_extinct_size_gf_vs_enumeration(n_gens):
    d = make_offspring({0: 0.25, 2: 0.75})
    dual = dual_distribution(d)
    for x in (0.5, 1.0, 1.05):
        expect = sum(p * x**s
                     for s, p in _enumerate_truncated_sizes(dual.pmf, n_gens).items())
        assert extinct_size_gf(d, x, n_gens) == pytest.approx(expect, rel=1e-12)


def test_extinct_size_gf_examples():
    d = make_offspring({0: 0.25, 2: 0.75})
    assert extinct_size_gf(d, 1.0, 17) == pytest.approx(1.0, abs=1e-12)
    assert extinct_size_gf(d, 1.05, 0) == pytest.approx(1.05)
    # radius witness: dual pmf {0: .75, 2: .25}, h(x) = .75 + .25 x^2,
    # x/h(x) maximized at x_o = sqrt(3), bound = sqrt(3)/1.5
    x_o, bound = extinct_size_radius(d)
    assert x_o == pytest.approx(math.sqrt(3.0), rel=1e-6)
    assert bound == pytest.approx(math.sqrt(3.0) / 1.5, rel=1e-6)
    vals = [extinct_size_gf(d, 1.01, n) for n in range(0, 300, 10)]
    assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))
    assert vals[-1] < x_o
    # far beyond the radius the iteration must detect divergence
    with pytest.raises(OffspringError):
        extinct_size_gf(d, 1.3, 500)


def test_truncated_mean_monotone():
    d = make_offspring({0: 0.1, 1: 0.3, 2: 0.4, 5: 0.2})
    vals = [truncated_mean(d, k) for k in range(0, 7)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(d.mean_mu, abs=1e-14)


def test_trap_constants():
    d = make_offspring({1: 0.5, 2: 0.5})
    tc = trap_constants(d, 2)
    assert tc.rho == pytest.approx(0.5)
    assert tc.sigma == pytest.approx(math.log(1 / 1.5) / math.log(0.5), abs=1e-12)
    assert trap_constants(d, 1).mu_tilde_k == pytest.approx(0.5)

    d = make_offspring({0: 0.25, 2: 0.75})
    assert trap_constants(d, 2).rho == pytest.approx(0.375)

    with pytest.raises(OffspringError):
        trap_constants(make_offspring({2: 0.5, 3: 0.5}), 3)  # no traps in case 2
    with pytest.raises(OffspringError):
        trap_constants(make_offspring({0: 0.6, 2: 0.4}), 2)  # subcritical


def test_json_round_trip():
    d = make_offspring({0: 0.25, 2: 0.75})
    again = OffspringDist.from_json(d.to_json())
    assert again.pmf == d.pmf
    with pytest.raises(OffspringError):
        OffspringDist.from_json('{"nope": 1}')
