"""Exact quenched bridge probabilities by forward DP, with truncation
certificates, and conditional path sampling via the time-reversed h-transform.

The DP pushes the SRW occupancy measure through the tree arena one step at a
time. In kill mode (a depth limit L) mass stepping below L is removed and
accumulated into ``leaked_mass``, which is simultaneously the truncation
certificate: P(X_{2n}=0) - P(max<=L, X_{2n}=0) <= leaked_mass, since every
path in the difference is killed at least once. Because the arena is
BFS-ordered, the L-truncated state space is an array prefix.

Probabilities far below the double-precision floor are kept representable by
exact power-of-two rescaling of the mass vector (the tracked exponent makes
log_p_return always available).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .trees import Tree
from .walks import SRW, WalkPath

_RESCALE_FLOOR = 1e-280

try:  # optional fused kernel; the numpy path is the reference implementation
    import numba as _numba

    @_numba.njit(cache=True)
    def _parity_step(mass, new, parent, child_start, deg, p_each, p_up,
                     level_offsets, parity, max_level, n_states):  # pragma: no cover
        # new[v] = mass[parent]*p_each[parent] + sum_children mass[c]*p_up[c],
        # evaluated only on the parity levels that can carry mass, reading
        # children contiguously (BFS order). Bit-identical to the dense
        # gather+bincount update on those slots.
        top = min(max_level, level_offsets.shape[0] - 2)
        for d in range(parity, top + 1, 2):
            lo = level_offsets[d]
            hi = min(level_offsets[d + 1], n_states)
            for v in range(lo, hi):
                acc = 0.0
                if v > 0:
                    p = parent[v]
                    acc = mass[p] * p_each[p]
                c0 = child_start[v]
                c1 = min(c0 + deg[v], n_states)
                for c in range(c0, c1):
                    acc += mass[c] * p_up[c]
                new[v] = acc

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


class BridgeError(ValueError):
    pass


class _DpKernel:
    """Precomputed transition arrays over the L-truncated BFS prefix."""

    def __init__(self, tree: Tree, n_states: int, depth_limit: int | None):
        deg = tree.deg[:n_states].astype(np.float64)
        denom = deg + 1.0
        denom[0] = max(deg[0], 1.0)
        self.p_each = 1.0 / denom        # per-neighbor share (parent or child)
        self.p_up = 1.0 / (deg + 1.0)
        self.p_up[0] = 0.0
        self.full_parent = tree.parent[:n_states].astype(np.int64)
        self.parent = self.full_parent[1:]
        self.child_start = tree.child_start[:n_states].astype(np.int64)
        self.deg_i = tree.deg[:n_states].astype(np.int64)
        self.level_offsets = tree.level_offsets.astype(np.int64)
        self.n_states = n_states
        self.max_level = (depth_limit if depth_limit is not None
                          else min(tree.height, 10**9))
        if depth_limit is not None:
            sl = tree.level_slice(depth_limit)
            sl = slice(sl.start, min(sl.stop, n_states))
            self.leak_slice = sl
            self.leak_level = depth_limit
            d = tree.deg[sl].astype(np.float64)
            self.leak_factor = d * self.p_each[sl]
        else:
            self.leak_slice = None
            self.leak_level = None
            self.leak_factor = None

    def step(self, mass: np.ndarray, t: int,
             out: np.ndarray | None = None) -> tuple[np.ndarray, float]:
        """One DP step from time t to t+1.

        With the fused kernel only the populated parity's slots of ``out``
        are written; stale other-parity slots are never read by any consumer
        (the final root mass, the leak reduction, and the h-transform
        sampler are all parity-aware).
        """
        leak = 0.0
        if (self.leak_slice is not None
                and (self.leak_level & 1) == (t & 1)):  # sources live at parity t
            leak = float((mass[self.leak_slice] * self.leak_factor).sum())
        if _HAVE_NUMBA and self.n_states >= 2048:
            new = np.zeros_like(mass) if out is None else out
            _parity_step(mass, new, self.full_parent, self.child_start, self.deg_i,
                         self.p_each, self.p_up, self.level_offsets,
                         (t + 1) & 1, min(self.max_level, t + 1), self.n_states)
        else:
            new = np.empty_like(mass) if out is None else out
            par = self.parent
            new[1:] = mass[par] * self.p_each[par]
            new[0] = 0.0
            up_flow = mass[1:] * self.p_up[1:]
            new += np.bincount(par, weights=up_flow, minlength=self.n_states)
        return new, leak


@dataclass
class OccupancyTable:
    """Time-indexed occupancy of the (possibly depth-killed) SRW.

    Stored slices are scaled by 2^shift (per-slice); within-slice ratios,
    which are all the h-transform sampler needs, are unaffected. In no-kill
    mode the mass sums to 1 at every step; in kill mode mass + leaked = 1.
    ``conservation_error`` is the largest observed deviation while the
    scaling exponent was still 0.
    """

    horizon: int
    depth_limit: int | None
    n_states: int
    p_return: float
    log_p_return: float
    leaked_mass: float
    conservation_error: float
    stride: int = 1
    slices: dict[int, np.ndarray] = field(default_factory=dict)
    shifts: dict[int, int] = field(default_factory=dict)
    _kernel: _DpKernel | None = None

    def slice_at(self, t: int) -> np.ndarray:
        """Occupancy (scaled) at time t, recomputing inside a stride window."""
        if t in self.slices:
            return self.slices[t]
        base = (t // self.stride) * self.stride
        if base not in self.slices or self._kernel is None:
            raise BridgeError("slice not stored and no stride anchor available")
        mass = self.slices[base]
        for s in range(base, t):
            mass, _leak = self._kernel.step(mass, s)
            self.slices[s + 1] = mass
        return self.slices[t]

    def drop_transient(self, t: int) -> None:
        if t % self.stride != 0 and t in self.slices:
            del self.slices[t]


def bridge_dp(tree: Tree, n: int, depth_limit: int | None = None,
              store_slices: bool = False, stride: int = 1,
              exact: bool = False, track_conservation: bool = False):
    """Forward DP of the SRW kernel over a 2n-step horizon.

    Returns (p_return, OccupancyTable); p_return is the root mass at time 2n
    (in kill mode, exactly P(max <= depth_limit, X_{2n} = 0)). Rejected when
    unexpanded frontier nodes could distort the kernel: no-kill mode needs
    every node of depth < 2n expanded, kill mode every node of depth <=
    depth_limit. With exact=True the DP runs in Fractions (small trees) and
    returns (Fraction, None). track_conservation records the worst mass
    deviation per step (costs one reduction per step; meaningful while the
    scaling exponent is 0).
    """
    if n < 0:
        raise BridgeError("n must be nonnegative")
    horizon = 2 * n
    min_unexp = tree.min_unexpanded_depth()
    if depth_limit is not None and depth_limit < 0:
        raise BridgeError("depth_limit must be nonnegative")
    if depth_limit is None or depth_limit >= horizon:
        # the walk cannot outrun the horizon: degrees are needed only at
        # depths <= horizon - 1, and a limit >= horizon never kills
        if min_unexp < horizon:
            raise BridgeError(
                f"horizon {horizon} exceeds the reliably sampled tree "
                f"(frontier at depth {min_unexp}); pass a depth_limit")
        n_states = tree.nodes_to_depth(horizon)
    else:
        if min_unexp <= depth_limit:
            raise BridgeError(
                f"depth_limit {depth_limit} reaches the sampling frontier "
                f"(at depth {min_unexp}); kernel degrees would be wrong")
        n_states = tree.nodes_to_depth(depth_limit)

    if exact:
        return _bridge_dp_exact(tree, n, depth_limit), None

    if tree.deg[0] == 0 and n > 0:
        raise BridgeError("isolated root: no bridge exists")

    kernel = _DpKernel(tree, n_states, depth_limit)
    mass = np.zeros(n_states)
    spare = np.zeros(n_states)
    mass[0] = 1.0
    shift = 0
    leaked = 0.0
    cons_err = 0.0
    table = OccupancyTable(horizon=horizon, depth_limit=depth_limit,
                           n_states=n_states, p_return=0.0, log_p_return=-math.inf,
                           leaked_mass=0.0, conservation_error=0.0,
                           stride=stride, _kernel=kernel)
    if store_slices:
        table.slices[0] = mass.copy()
        table.shifts[0] = 0
    for t in range(horizon):
        new, leak = kernel.step(mass, t, out=spare)
        spare = mass
        mass = new
        leaked += math.ldexp(leak, -shift) if shift else leak
        if track_conservation and shift == 0:
            total = float(mass.sum()) + leaked
            cons_err = max(cons_err, abs(total - 1.0))
        if t % 16 == 15 or t + 1 == horizon:
            peak = float(mass.max()) if mass.size else 0.0
            if 0.0 < peak < _RESCALE_FLOOR:
                k = -int(math.frexp(peak)[1])  # 2^k * peak lands in [0.5, 1)
                np.ldexp(mass, k, out=mass)
                np.ldexp(spare, k, out=spare)  # stale parity slots stay consistent
                shift += k
        if store_slices and ((t + 1) % stride == 0 or t + 1 == horizon):
            table.slices[t + 1] = mass.copy()
            table.shifts[t + 1] = shift
    root_scaled = float(mass[0])
    table.leaked_mass = leaked
    table.conservation_error = cons_err
    if root_scaled > 0.0:
        table.log_p_return = math.log(root_scaled) - shift * math.log(2.0)
        table.p_return = math.ldexp(root_scaled, -shift)
    return table.p_return, table


def _bridge_dp_exact(tree: Tree, n: int, depth_limit: int | None) -> Fraction:
    mass: dict[int, Fraction] = {0: Fraction(1)}
    for _ in range(2 * n):
        new: dict[int, Fraction] = {}
        for v, p in mass.items():
            deg = int(tree.deg[v])
            denom = deg + (0 if v == 0 else 1)
            if denom == 0:
                raise BridgeError("isolated root: no bridge exists")
            share = p / denom
            if v != 0:
                w = int(tree.parent[v])
                new[w] = new.get(w, Fraction(0)) + share
            for c in tree.children(v):
                c = int(c)
                if depth_limit is not None and int(tree.depth[c]) > depth_limit:
                    continue  # killed
                new[c] = new.get(c, Fraction(0)) + share
        mass = new
    return mass.get(0, Fraction(0))


@dataclass
class DispProfile:
    """Joint probabilities P(max <= L, X_{2n} = 0) over a grid of L."""

    levels: list[int]
    joint: list[float]
    log_joint: list[float]
    leaked: list[float]
    p_ref: float
    log_p_ref: float
    p_ref_is_truncated: bool

    def conditional_cdf(self) -> list[float]:
        if self.p_ref <= 0.0:
            return [math.exp(lj - self.log_p_ref) if lj > -math.inf else 0.0
                    for lj in self.log_joint]
        return [j / self.p_ref for j in self.joint]


def max_disp_profile(tree: Tree, n: int, L_list: list[int]) -> DispProfile:
    """One kill-mode DP per L; the conditional cdf divides by the no-kill
    return probability when the tree admits it, else by the largest-L value
    (flagged truncated, with its leak as the certificate)."""
    if sorted(L_list) != list(L_list):
        raise BridgeError("L_list must be ascending")
    joint, log_joint, leaks = [], [], []
    for L in L_list:
        p, tab = bridge_dp(tree, n, depth_limit=L)
        joint.append(p)
        log_joint.append(tab.log_p_return)
        leaks.append(tab.leaked_mass)
    for a, b in zip(log_joint[:-1], log_joint[1:]):
        if a > b + 1e-9:
            raise BridgeError("joint probabilities must be nondecreasing in L")
    if tree.min_unexpanded_depth() >= 2 * n:
        p_ref, tab = bridge_dp(tree, n, depth_limit=None)
        return DispProfile(levels=list(L_list), joint=joint, log_joint=log_joint,
                           leaked=leaks, p_ref=p_ref, log_p_ref=tab.log_p_return,
                           p_ref_is_truncated=False)
    return DispProfile(levels=list(L_list), joint=joint, log_joint=log_joint,
                       leaked=leaks, p_ref=joint[-1], log_p_ref=log_joint[-1],
                       p_ref_is_truncated=True)


def truncation_bound(tree: Tree, n: int, L: int) -> float:
    """Upper bound on P(X_{2n}=0) - P(max <= L, X_{2n}=0): the killed mass."""
    _, tab = bridge_dp(tree, n, depth_limit=L)
    return tab.leaked_mass


def sample_bridge(tree: Tree, n: int, table: OccupancyTable,
                  rng: np.random.Generator) -> WalkPath:
    """Exact draw from the walk conditioned on X_{2n} = root (and max <= L in
    kill mode): backward pass choosing X_t = u with probability proportional
    to mass_t(u) * k(u -> X_{t+1})."""
    if table.p_return <= 0.0 and table.log_p_return == -math.inf:
        raise BridgeError("p_return = 0: nothing to condition on (odd horizon?)")
    if 0 not in table.slices:
        raise BridgeError("table was built without store_slices=True")
    horizon = table.horizon
    verts = np.empty(horizon + 1, dtype=np.int64)
    verts[horizon] = 0
    deg = tree.deg
    parent = tree.parent
    n_states = table.n_states
    for t in range(horizon - 1, -1, -1):
        w = int(verts[t + 1])
        mass_t = table.slice_at(t)
        cands: list[int] = []
        weights: list[float] = []
        if w != 0:
            u = int(parent[w])
            denom = int(deg[u]) + (0 if u == 0 else 1)
            cands.append(u)
            weights.append(float(mass_t[u]) / denom)
        for c in tree.children(w):
            c = int(c)
            if c >= n_states:
                continue
            cands.append(c)
            weights.append(float(mass_t[c]) / (int(deg[c]) + 1))
        tot = math.fsum(weights)
        if tot <= 0.0:
            raise BridgeError("backward sampling hit a zero-mass slice")
        r = rng.random() * tot
        acc = 0.0
        pick = cands[-1]
        for cand, wt in zip(cands, weights):
            acc += wt
            if r < acc:
                pick = cand
                break
        verts[t] = pick
        table.drop_transient(t + 1)
    assert verts[0] == 0
    return WalkPath(vertices=verts, depths=tree.depth[verts].astype(np.int64),
                    kernel=SRW, cap_touched=False)
