"""Forward simulation on trees: SRW and biased-walk kernels, couplings to Z,
escape probabilities, and backbone-observed path bookkeeping.

The biased kernel steps to the parent with probability m/(deg(v)+m) and to
each child with probability 1/(deg(v)+m) (uniform over children at the
root); at a vertex of degree exactly m its depth is a fair +-1 walk, which
is what reduces confinement events to interval problems on Z.

Depth caps are reflecting: a walk standing on an unexpanded frontier node is
forced back to the parent and the path is flagged contaminated, so
estimators can discard it and report the discard rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trees import BackboneMarks, Tree, TreeError


@dataclass(frozen=True)
class Kernel:
    """Transition kernel tag: plain SRW, or the m-biased walk."""

    kind: str  # "srw" | "brw"
    m: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("srw", "brw"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "brw" and self.m < 1:
            raise ValueError("brw kernel needs m >= 1")


SRW = Kernel("srw")


def BRW(m: int) -> Kernel:
    return Kernel("brw", m)


@dataclass
class WalkPath:
    """A time-indexed vertex sequence with its depth profile."""

    vertices: np.ndarray
    depths: np.ndarray
    kernel: Kernel
    cap_touched: bool = False

    def __len__(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def steps(self) -> int:
        return len(self) - 1


def step_probability(tree: Tree, u: int, w: int, kernel: Kernel) -> float:
    """Exact one-step transition probability u -> w (0 if not adjacent)."""
    deg = int(tree.deg[u])
    is_root = u == 0
    if int(tree.parent[w]) == u:
        if kernel.kind == "srw":
            return 1.0 / (deg + (0 if is_root else 1))
        return 1.0 / deg if is_root else 1.0 / (deg + kernel.m)
    if not is_root and int(tree.parent[u]) == w:
        if kernel.kind == "srw":
            return 1.0 / (deg + 1)
        return kernel.m / (deg + kernel.m)
    return 0.0


def step_kernel(tree: Tree, v: int, kernel: Kernel, rng: np.random.Generator) -> int:
    """Sample one transition from the exact kernel at v."""
    deg = int(tree.deg[v])
    if v == 0:
        if deg == 0:
            raise TreeError("isolated root: no move exists")
        return int(tree.child_start[0]) + int(rng.integers(deg))
    u = rng.random()
    if kernel.kind == "srw":
        i = int(u * (deg + 1))
        if i == 0:
            return int(tree.parent[v])
        return int(tree.child_start[v]) + i - 1
    thresh = kernel.m / (deg + kernel.m)
    if u < thresh:
        return int(tree.parent[v])
    c = int((u - thresh) * (deg + kernel.m))
    return int(tree.child_start[v]) + min(c, deg - 1)


def sample_path(tree: Tree, kernel: Kernel, steps: int, rng: np.random.Generator,
                start: int = 0) -> WalkPath:
    """Walk of the given length; flags the path if it stands on a frontier node."""
    if steps < 0:
        raise TreeError("steps must be nonnegative")
    verts = np.empty(steps + 1, dtype=np.int64)
    verts[0] = start
    touched = bool(tree.unexpanded[start])
    v = start
    for t in range(steps):
        v = step_kernel(tree, v, kernel, rng)
        verts[t + 1] = v
        touched = touched or bool(tree.unexpanded[v])
    return WalkPath(vertices=verts, depths=tree.depth[verts].astype(np.int64),
                    kernel=kernel, cap_touched=touched)


def simulate_walks(tree: Tree, kernel: Kernel, steps: int, n_paths: int,
                   rng: np.random.Generator, start: int = 0) -> np.ndarray:
    """Vectorized batch of walks; returns the (steps+1, n_paths) position matrix."""
    deg = tree.deg
    parent = tree.parent
    cs = tree.child_start
    pos = np.full(n_paths, start, dtype=np.int64)
    out = np.empty((steps + 1, n_paths), dtype=np.int64)
    out[0] = pos
    m = kernel.m
    for t in range(steps):
        u = rng.random(n_paths)
        d = deg[pos]
        at_root = pos == 0
        if kernel.kind == "srw":
            tot = d + (~at_root)
            idx = (u * tot).astype(np.int64)
            go_parent = (~at_root) & (idx == 0)
            child_idx = idx - (~at_root)
        else:
            thresh = np.where(at_root, 0.0, m / (d + m))
            go_parent = (~at_root) & (u < thresh)
            scale = np.where(at_root, d, d + m)
            child_idx = np.minimum(((u * scale) - np.where(at_root, 0, m)).astype(np.int64),
                                   np.maximum(d - 1, 0))
            child_idx = np.maximum(child_idx, 0)
        pos = np.where(go_parent, parent[pos], cs[pos] + child_idx)
        out[t + 1] = pos
    return out


@dataclass
class PathStats:
    """Displacement, local-time, and visit-count observables of one path."""

    max_disp: int
    b_n: int
    max_local_time_below: int
    returned_at_end: bool


def path_statistics(tree: Tree, path: WalkPath, m: int, v_o: int = 0) -> PathStats:
    """B_n, max displacement, and max local time among strict descendants of v_o.

    b_n counts j < len(path)-1 with X_j = root or deg(X_j) > m.
    """
    verts = path.vertices
    depths = path.depths
    stop = len(verts) - 1
    deg = tree.deg[verts[:stop]]
    b_n = int(((verts[:stop] == 0) | (deg > m)).sum())
    # strict-descendant mask of v_o via parent propagation (BFS order)
    n = tree.n_nodes
    desc = np.zeros(n, dtype=bool)
    anc_reached = np.zeros(n, dtype=bool)
    anc_reached[v_o] = True
    parent = tree.parent
    for w in range(v_o + 1, n):
        p = int(parent[w])
        if anc_reached[p]:
            anc_reached[w] = True
            desc[w] = True
    visits = np.bincount(verts, minlength=n)
    visits[~desc] = 0
    return PathStats(
        max_disp=int(depths.max()),
        b_n=b_n,
        max_local_time_below=int(visits.max()) if n else 0,
        returned_at_end=bool(verts[-1] == 0),
    )


def first_branching_vertex(tree: Tree) -> int:
    """The vertex closest to the root with at least two children."""
    for v in range(tree.n_nodes):
        if int(tree.deg[v]) >= 2:
            return v
    raise TreeError("tree has no branching vertex (half-line)")


# ---------------------------------------------------------------------------
# Couplings to walks on Z
# ---------------------------------------------------------------------------


@dataclass
class CouplingResult:
    tree_path: WalkPath
    line: np.ndarray                 # coupled walk on Z (or Z>=0)
    observed_times: np.ndarray | None = None  # Upsilon times (FromVertex only)
    dominated: bool = True


def couple_to_line(tree: Tree, steps: int, rng: np.random.Generator,
                   start: int = 0) -> CouplingResult:
    """Joint (tree SRW, reflected line walk) with pathwise domination.

    When the heights agree, a root-ward tree step pulls the line down and an
    outward tree step sends the line up with probability (deg+1)/(2 deg);
    otherwise the line steps independently (fair, reflected to 1 from 0).
    Both marginals are exact and line_j <= |X_j| at every step. Requires a
    leafless tree below the cap.
    """
    verts = np.empty(steps + 1, dtype=np.int64)
    line = np.empty(steps + 1, dtype=np.int64)
    verts[0] = start
    line[0] = 0
    v = start
    ell = 0
    touched = False
    dominated = True
    for t in range(steps):
        d = int(tree.deg[v])
        depth_v = int(tree.depth[v])
        if v != 0 and d == 0 and not tree.unexpanded[v]:
            raise TreeError("leaf encountered: the root-coupling needs a leafless tree")
        touched = touched or bool(tree.unexpanded[v])
        if v == 0:
            w = int(tree.child_start[0]) + int(rng.integers(max(d, 1)))
            went_up = True
        else:
            u = rng.random()
            tot = d + 1
            i = int(u * tot)
            if i == 0 or d == 0:
                w = int(tree.parent[v])
                went_up = False
            else:
                w = int(tree.child_start[v]) + i - 1
                went_up = True
        if ell == depth_v:
            if not went_up:
                ell -= 1
            else:
                if v == 0:
                    ell = 1
                else:
                    ell += 1 if rng.random() < (d + 1) / (2.0 * d) else -1
        else:
            if ell == 0:
                ell = 1
            else:
                ell += 1 if rng.random() < 0.5 else -1
        v = w
        verts[t + 1] = v
        line[t + 1] = ell
        if ell > int(tree.depth[v]):
            dominated = False
    path = WalkPath(vertices=verts, depths=tree.depth[verts].astype(np.int64),
                    kernel=SRW, cap_touched=touched)
    return CouplingResult(tree_path=path, line=line, dominated=dominated)


def couple_to_line_batch(tree: Tree, steps: int, n_paths: int,
                         rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, int]:
    """Vectorized root-coupling: (tree depth matrix, line matrix, #violations)."""
    deg = tree.deg
    parent = tree.parent
    cs = tree.child_start
    depth = tree.depth
    pos = np.zeros(n_paths, dtype=np.int64)
    ell = np.zeros(n_paths, dtype=np.int64)
    depths = np.empty((steps + 1, n_paths), dtype=np.int64)
    lines = np.empty((steps + 1, n_paths), dtype=np.int64)
    depths[0] = 0
    lines[0] = 0
    violations = 0
    for t in range(steps):
        d = deg[pos]
        at_root = pos == 0
        u = rng.random(n_paths)
        w = rng.random(n_paths)
        tot = d + (~at_root)
        idx = (u * tot).astype(np.int64)
        go_parent = (~at_root) & ((idx == 0) | (d == 0))
        child_idx = np.clip(idx - (~at_root), 0, np.maximum(d - 1, 0))
        new_pos = np.where(go_parent, parent[pos], cs[pos] + child_idx)
        equal = ell == depth[pos]
        up_prob = np.where(d > 0, (d + 1) / (2.0 * np.maximum(d, 1)), 0.0)
        line_up_coupled = np.where(at_root, True, w < up_prob)
        new_ell_eq = np.where(go_parent, ell - 1, np.where(line_up_coupled, ell + 1, ell - 1))
        new_ell_ind = np.where(ell == 0, 1, np.where(w < 0.5, ell + 1, ell - 1))
        ell = np.where(equal, new_ell_eq, new_ell_ind)
        pos = new_pos
        depths[t + 1] = depth[pos]
        lines[t + 1] = ell
        violations += int((ell > depth[pos]).sum())
    return depths, lines, violations


def couple_from_vertex(tree: Tree, v: int, v_o: int, steps: int,
                       rng: np.random.Generator) -> CouplingResult:
    """Local-time coupling: walk from v observed inside T(v_o), line SRW on Z.

    Upsilon is the tree walk watched only on steps along edges of T(v_o);
    the line walk starts at 0, hits 0 whenever Upsilon = v, and satisfies
    |line_j| <= dist(Upsilon_j, v). At the reflecting vertex v_o the
    conditional up-probability is deg/(2(deg-1)) (v_o has no parent edge in
    the observed subtree), which keeps the line marginal exactly SRW.
    """
    if v == v_o or v_o not in tree.ancestors(v):
        raise TreeError("v must be a strict descendant of v_o")
    verts = np.empty(steps + 1, dtype=np.int64)
    verts[0] = v
    # distance to v inside T(v_o): depth(u) + depth(v) - 2 depth(lca)
    anc_v = {a: i for i, a in enumerate(tree.path_from_root(v))}
    depth_v = int(tree.depth[v])

    def dist_to_v(u: int) -> int:
        x = u
        while x not in anc_v:
            x = int(tree.parent[x])
        return (int(tree.depth[u]) - int(tree.depth[x])) + (depth_v - int(tree.depth[x]))

    in_sub = _subtree_mask(tree, v_o)
    cur = v
    obs_times = [0]
    line = [0]
    ell = 0
    dominated = True
    for t in range(steps):
        nxt = step_kernel(tree, cur, SRW, rng)
        inside = in_sub[cur] and in_sub[nxt]
        if inside:
            d_prev = dist_to_v(cur)
            d_new = dist_to_v(nxt)
            deg_u = int(tree.deg[cur])
            if abs(ell) == d_prev:
                if d_new < d_prev:
                    ell = ell - 1 if ell > 0 else ell + 1
                else:
                    if cur == v_o:
                        p_up = deg_u / (2.0 * (deg_u - 1)) if deg_u > 1 else 1.0
                    else:
                        p_up = (deg_u + 1) / (2.0 * deg_u)
                    away = rng.random() < p_up
                    if ell == 0:
                        ell = 1 if rng.random() < 0.5 else -1
                    elif away:
                        ell += 1 if ell > 0 else -1
                    else:
                        ell -= 1 if ell > 0 else -1
            else:
                ell += 1 if rng.random() < 0.5 else -1
            obs_times.append(t + 1)
            line.append(ell)
            if abs(ell) > d_new:
                dominated = False
        cur = nxt
        verts[t + 1] = cur
    path = WalkPath(vertices=verts, depths=tree.depth[verts].astype(np.int64), kernel=SRW)
    return CouplingResult(tree_path=path, line=np.asarray(line, dtype=np.int64),
                          observed_times=np.asarray(obs_times, dtype=np.int64),
                          dominated=dominated)


def _subtree_mask(tree: Tree, v_o: int) -> np.ndarray:
    n = tree.n_nodes
    mask = np.zeros(n, dtype=bool)
    mask[v_o] = True
    parent = tree.parent
    for w in range(v_o + 1, n):
        if mask[int(parent[w])]:
            mask[w] = True
    return mask


# ---------------------------------------------------------------------------
# Escape probabilities (never-return events)
# ---------------------------------------------------------------------------


def _never_return_probs(tree: Tree, boundary: float, cap: int | None) -> np.ndarray:
    """e[w] = P(walk from w never hits parent(w)), with boundary value at the cap.

    Recursion e(w) = S/(1+S), S = sum of children's e (true leaves give 0:
    finite subtrees are recurrent). ``cap`` overrides the tree's frontier:
    nodes at depth == cap take the boundary value.
    """
    n = tree.n_nodes
    e = np.zeros(n)
    s = np.zeros(n)
    parent = tree.parent
    deg = tree.deg
    depth = tree.depth
    unexp = tree.unexpanded
    for w in range(n - 1, -1, -1):
        if cap is not None and depth[w] >= cap:
            e[w] = boundary
        elif cap is None and unexp[w]:
            e[w] = boundary
        elif deg[w] == 0:
            e[w] = 0.0
        else:
            e[w] = s[w] / (1.0 + s[w])
        if w:
            s[int(parent[w])] += e[w]
    return e


def escape_prob(tree: Tree, v: int, v_prime: int, cap: int | None = None,
                min_degree_beyond_cap: int = 0) -> tuple[float, float]:
    """Bracket [lower, upper] for P(first step to a child != v', never return to v).

    Upper: frontier nodes are treated as certain escapes (boundary 1).
    Lower: boundary 0, unless the law guarantees minimum degree
    m = min_degree_beyond_cap >= 2 beyond the cap, in which case (m-1)/m is
    a valid boundary (the depth process beyond the cap dominates a walk with
    up-probability m/(m+1), which never returns with probability 1 - 1/m).
    """
    if v == 0:
        raise TreeError("v must be a non-root vertex")
    kids = tree.children(v)
    if v_prime not in kids:
        raise TreeError("v_prime must be a child of v")
    m = min_degree_beyond_cap
    lo_boundary = (m - 1.0) / m if m >= 2 else 0.0
    e_lo = _never_return_probs(tree, lo_boundary, cap)
    e_hi = _never_return_probs(tree, 1.0, cap)
    deg = int(tree.deg[v])
    others = [c for c in kids if c != v_prime]
    lo = sum(e_lo[c] for c in others) / (deg + 1)
    hi = sum(e_hi[c] for c in others) / (deg + 1)
    return float(lo), float(hi)


def regular_tree_escape_bracket(branching: int, cap: int, v_depth: int = 1,
                                min_degree_beyond_cap: int | None = None
                                ) -> tuple[float, float]:
    """escape_prob bracket on the complete b-ary tree without materializing it.

    Same arithmetic as the arena recursion, collapsed over levels (all
    subtrees at a depth are identical): e_0 = boundary at the cap, then
    e <- b e/(1 + b e) per level. The bracket is for P-hat(v, v') with v at
    v_depth; by default the boundary knows the tree is b-regular beyond the
    cap (min degree = b).
    """
    if branching < 1 or cap < v_depth + 1:
        raise TreeError("need branching >= 1 and cap > v_depth")
    b = branching
    mdeg = b if min_degree_beyond_cap is None else min_degree_beyond_cap
    levels = cap - (v_depth + 1)  # e-iterations below the child of v

    def chain(boundary: float) -> float:
        e = boundary
        for _ in range(levels):
            s = b * e
            e = s / (1.0 + s)
        return (b - 1) * e / (b + 1)

    lo_boundary = (mdeg - 1.0) / mdeg if mdeg >= 2 else 0.0
    return chain(lo_boundary), chain(1.0)


def n_p_count(tree: Tree, v: int, p: float, cap: int | None = None,
              min_degree_beyond_cap: int = 0) -> int:
    """Count of strict non-root ancestors u of v with certified P-hat(u, next) >= p.

    Uses the lower bracket (conservative). The "next" vertex is the child of
    u on the root-to-v path.
    """
    if not 0.0 < p < 1.0:
        raise TreeError("p must be in (0,1)")
    m = min_degree_beyond_cap
    lo_boundary = (m - 1.0) / m if m >= 2 else 0.0
    e_lo = _never_return_probs(tree, lo_boundary, cap)
    path = tree.path_from_root(v)
    count = 0
    for j in range(1, len(path) - 1):
        u = path[j]
        nxt = path[j + 1]
        deg = int(tree.deg[u])
        lo = sum(e_lo[c] for c in tree.children(u) if c != nxt) / (deg + 1)
        if lo >= p:
            count += 1
    return count


# ---------------------------------------------------------------------------
# Backbone-observed process
# ---------------------------------------------------------------------------


@dataclass
class BackboneObservables:
    """The walk watched on backbone edges only.

    N[j] is the time of the j-th step along a backbone-backbone edge
    (N[0] = 0), Y[j] = X_{N[j]} is SRW on the backbone tree. S[i] is the
    prefix sum of r(Y_t) for t < i, W[i] counts visits of Y before i to
    V-tilde (root or >= 2 backbone children), and Phi/PhiPrime split the
    depth |Y_i| into the net motion from outside/inside V-tilde, so
    Phi[i] + PhiPrime[i] = |Y_i|.
    """

    N: np.ndarray
    Y: np.ndarray
    S: np.ndarray
    W: np.ndarray
    Phi: np.ndarray
    PhiPrime: np.ndarray
    t_n: int | None
    flagged: bool


def backbone_observe(tree: Tree, marks: BackboneMarks, path: WalkPath,
                     n: int) -> BackboneObservables:
    """Extract the backbone-observed process and its excursion bookkeeping.

    A step counts as "inside" when it traverses an edge with both endpoints
    on the backbone (excursions into bushes, including the re-entry step,
    are invisible, so Y has the law of SRW on the backbone tree).
    t_n = min{j : N_j > 2n} (None if the path is too short). Paths that
    touch the sampling frontier are flagged.
    """
    verts = path.vertices
    if not marks.is_backbone[verts[0]]:
        raise TreeError("path must start on the backbone")
    bb = marks.is_backbone
    inside = bb[verts[:-1]] & bb[verts[1:]]
    times = np.concatenate([[0], np.flatnonzero(inside) + 1]).astype(np.int64)
    Y = verts[times]
    depths = tree.depth[Y].astype(np.int64)
    in_vtilde = (Y == 0) | (marks.z_i[Y] >= 2)
    r_vals = marks.r_v[Y]
    k = Y.shape[0]
    S = np.zeros(k + 1)
    S[1:] = np.cumsum(r_vals)
    W = np.zeros(k + 1, dtype=np.int64)
    W[1:] = np.cumsum(in_vtilde)
    up = np.zeros(k, dtype=np.int64)
    if k > 1:
        up[:-1] = np.sign(depths[1:] - depths[:-1])
    from_out = np.zeros(k, dtype=np.int64)
    from_in = np.zeros(k, dtype=np.int64)
    if k > 1:
        contrib = up[:-1]
        out_mask = ~in_vtilde[:-1]
        from_out[1:] = np.cumsum(np.where(out_mask, contrib, 0))
        from_in[1:] = np.cumsum(np.where(~out_mask, contrib, 0))
    over = np.flatnonzero(times > 2 * n)
    t_n = int(over[0]) if over.size else None
    flagged = bool(tree.unexpanded[verts].any()) or path.cap_touched
    return BackboneObservables(N=times, Y=Y, S=S, W=W, Phi=from_out,
                               PhiPrime=from_in, t_n=t_n, flagged=flagged)


def walk_until_backbone_steps(tree: Tree, marks: BackboneMarks, k_inside: int,
                              rng: np.random.Generator, step_budget: int,
                              start: int = 0) -> WalkPath:
    """Run SRW until k_inside backbone-edge steps have occurred (or budget)."""
    verts = [start]
    v = start
    bb = marks.is_backbone
    count = 0
    touched = bool(tree.unexpanded[start])
    while count < k_inside and len(verts) <= step_budget:
        w = step_kernel(tree, v, SRW, rng)
        if bb[v] and bb[w]:
            count += 1
        touched = touched or bool(tree.unexpanded[w])
        verts.append(w)
        v = w
    arr = np.asarray(verts, dtype=np.int64)
    return WalkPath(vertices=arr, depths=tree.depth[arr].astype(np.int64),
                    kernel=SRW, cap_touched=touched or count < k_inside)
