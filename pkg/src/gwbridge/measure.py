"""Change of measure between the simple and the m-biased walk.

On the event {X_{2n} = root} the Radon-Nikodym derivative dSRW/dBRW of a
path collapses to

    m^{-n} * prod_{j<2n} ( (deg(x_j)+m)/(deg(x_j)+1)
                           - (m-1)/(deg(x_j)+1) * 1{x_j = root} ),

because exactly n of the 2n steps are root-ward. On trees whose vertices all
have degree >= m the bracket equals 2m/(m+1) except at the root (value 1)
and at vertices of degree > m, which yields the per-path sandwich

    M^n c1^{B_n} <= dSRW/dBRW <= M^n c2^{B_n},   M = 4m/(m+1)^2,

with B_n counting the root visits and the degree-> m visits. This module
computes the derivative (in log space), the constants (by exhaustive search
over the degree range), and verifies the sandwich and the change-of-measure
identity by full path enumeration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bridge import bridge_dp
from .oracles import enumerate_return_paths, path_prob_exact
from .trees import Tree
from .walks import BRW, SRW, WalkPath, step_probability


class MeasureError(ValueError):
    pass


@dataclass(frozen=True)
class SandwichConstants:
    m: int
    M: float
    c1: float
    c2: float
    max_deg_considered: int


def sandwich_constants(m: int, max_deg: int) -> SandwichConstants:
    """M = 4m/(m+1)^2 and the bracket ratios c1, c2, by exhaustive search.

    The bracket values to cover are 1 (the root) and (deg+m)/(deg+1) for
    deg in (m, max_deg]; relative to the off-B_n value 2m/(m+1) this gives
    c1 = (m+1)/(2m) (attained at the root) and c2 at deg = m+1. For m = 1
    the walk is unbiased and c1 = c2 = M = 1 (degenerate).
    """
    if not 1 <= m <= max_deg:
        raise MeasureError("need 1 <= m <= max_deg")
    peak = 2.0 * m / (m + 1)
    values = [1.0] + [(d + m) / (d + 1) for d in range(m + 1, max_deg + 1)]
    c1 = min(values) / peak
    c2 = max(values) / peak
    assert abs(c1 - (m + 1) / (2.0 * m)) < 1e-12
    if max_deg > m:
        assert abs(c2 - (2 * m + 1) * (m + 1) / ((m + 2) * 2.0 * m)) < 1e-12
    return SandwichConstants(m=m, M=4.0 * m / (m + 1) ** 2, c1=c1, c2=c2,
                             max_deg_considered=max_deg)


def _bracket_log(deg: int, m: int, at_root: bool) -> float:
    if at_root:
        return 0.0
    return math.log(deg + m) - math.log(deg + 1)


def rn_derivative(tree: Tree, path: WalkPath | np.ndarray, m: int) -> float:
    """dSRW/dBRW of a root-return path, via the collapsed product (log space)."""
    verts = path.vertices if isinstance(path, WalkPath) else np.asarray(path)
    if verts[0] != 0 or verts[-1] != 0:
        raise MeasureError("the collapsed formula is asserted only on root-return paths")
    steps = len(verts) - 1
    if steps % 2:
        raise MeasureError("a return path has an even number of steps")
    n = steps // 2
    acc = -n * math.log(m)
    for j in range(steps):
        v = int(verts[j])
        acc += _bracket_log(int(tree.deg[v]), m, v == 0)
    return math.exp(acc)


def rn_derivative_stepwise(tree: Tree, path: WalkPath | np.ndarray, m: int) -> float:
    """Definitional dSRW/dBRW: the ratio of the step-probability products.

    Valid for any path (not only root-return ones); agrees with
    rn_derivative on return paths.
    """
    verts = path.vertices if isinstance(path, WalkPath) else np.asarray(path)
    kern = BRW(m)
    acc = 0.0
    for u, w in zip(verts[:-1], verts[1:]):
        ps = step_probability(tree, int(u), int(w), SRW)
        pb = step_probability(tree, int(u), int(w), kern)
        if ps <= 0.0 or pb <= 0.0:
            raise MeasureError(f"non-adjacent step {u}->{w}")
        acc += math.log(ps) - math.log(pb)
    return math.exp(acc)


def b_n_of_path(tree: Tree, verts: np.ndarray, m: int) -> int:
    """B_n = #{j < 2n : x_j = root or deg(x_j) > m}."""
    verts = np.asarray(verts)
    stop = len(verts) - 1
    deg = tree.deg[verts[:stop]]
    return int(((verts[:stop] == 0) | (deg > m)).sum())


@dataclass
class SandwichReport:
    paths_checked: int
    min_slack_lower: float   # min over paths of RN - M^n c1^B  (>= 0 required)
    min_slack_upper: float   # min over paths of M^n c2^B - RN  (>= 0 required)
    identity_residual: dict[str, float]
    pbounds_ok: bool
    per_path_ok: bool

    def to_json_dict(self) -> dict:
        return {
            "paths_checked": self.paths_checked,
            "min_slack_lower": self.min_slack_lower,
            "min_slack_upper": self.min_slack_upper,
            "identity_residual": self.identity_residual,
            "pbounds_ok": self.pbounds_ok,
            "per_path_ok": self.per_path_ok,
        }


def verify_sandwich(tree: Tree, n: int, constants: SandwichConstants,
                    L_list: list[int] | None = None,
                    path_budget: int = 2_000_000) -> SandwichReport:
    """Enumerate every 2n-step return path and check the sandwich exhaustively.

    Per path: M^n c1^{B_n} <= dSRW/dBRW <= M^n c2^{B_n}. Per event
    A in {return} and {return, max <= L}: the change-of-measure identity
    sum BRW(path) RN(path) 1_A = SRW(A) (to 1e-12 relative) and the
    integrated bounds M^n E_BRW[c_i^{B_n} 1_A]. Degrees up to depth n must
    be >= m for the sandwich context to apply.
    """
    m = constants.m
    reach = tree.nodes_to_depth(n)
    degs = tree.deg[:reach]
    if int(degs.min(initial=m)) < m and n > 0:
        raise MeasureError("a vertex within reach has degree < m; the sandwich "
                           "hypothesis (all degrees >= m) fails")
    paths = enumerate_return_paths(tree, n)
    if len(paths) > path_budget:
        raise MeasureError(f"enumeration budget exceeded: {len(paths)} paths")
    brw = BRW(m)
    log_m_pow = n * math.log(constants.M)
    min_lo = math.inf
    min_hi = math.inf
    per_path_ok = True
    events: dict[str, float] = {"return": 0.0}
    bounds_lo: dict[str, float] = {"return": 0.0}
    bounds_hi: dict[str, float] = {"return": 0.0}
    srw_exact: dict[str, float] = {}
    L_list = sorted(set(L_list or []))
    for L in L_list:
        events[f"return_max{L}"] = 0.0
        bounds_lo[f"return_max{L}"] = 0.0
        bounds_hi[f"return_max{L}"] = 0.0
    for p in paths:
        verts = np.asarray(p, dtype=np.int64)
        rn = rn_derivative(tree, verts, m)
        b = b_n_of_path(tree, verts, m)
        lo = math.exp(log_m_pow + b * math.log(constants.c1))
        hi = math.exp(log_m_pow + b * math.log(constants.c2))
        min_lo = min(min_lo, rn - lo)
        min_hi = min(min_hi, hi - rn)
        if rn < lo * (1 - 1e-12) or rn > hi * (1 + 1e-12):
            per_path_ok = False
        pb = float(path_prob_exact(tree, p, brw))
        maxdep = int(tree.depth[verts].max())
        events["return"] += pb * rn
        bounds_lo["return"] += pb * lo
        bounds_hi["return"] += pb * hi
        for L in L_list:
            if maxdep <= L:
                events[f"return_max{L}"] += pb * rn
                bounds_lo[f"return_max{L}"] += pb * lo
                bounds_hi[f"return_max{L}"] += pb * hi
    # a 2n-step return path never exceeds depth n, so killing at depth n
    # leaves the root mass untouched and keeps the DP within any frontier
    srw_exact["return"] = float(bridge_dp(tree, n, depth_limit=n, exact=True)[0])
    for L in L_list:
        srw_exact[f"return_max{L}"] = float(bridge_dp(tree, n, depth_limit=min(L, n),
                                                      exact=True)[0])
    residuals = {}
    pbounds_ok = True
    for key, val in events.items():
        ref = srw_exact.get(key)
        if ref is None:
            continue
        residuals[key] = abs(val - ref) / max(ref, 1e-300)
        if not (bounds_lo[key] <= ref * (1 + 1e-12) and
                ref <= bounds_hi[key] * (1 + 1e-12)):
            pbounds_ok = False
    return SandwichReport(paths_checked=len(paths), min_slack_lower=min_lo,
                          min_slack_upper=min_hi, identity_residual=residuals,
                          pbounds_ok=pbounds_ok, per_path_ok=per_path_ok)
