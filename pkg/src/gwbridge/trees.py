"""Rooted-tree arena, Galton-Watson samplers, and per-tree statistics.

Trees are stored as flat arrays in breadth-first order: node 0 is the root,
children of a node are contiguous, and depth is nondecreasing in the node
index, so "all nodes of depth <= L" is the prefix slice [0, level_offsets[L+1]).
A node is *unexpanded* when its children were never sampled (the sampling
frontier); degrees of unexpanded nodes are unknown and recorded as 0, and
every statistic that would look past them carries a censoring flag.

Samplers:
  - sample_gw: plain level-by-level sampling to a depth cap.
  - sample_gw_survival: exact sample conditioned on non-extinction, built as
    a backbone (survivor counts rejected to >= 1) carrying independent
    extinction-conditioned bushes, which are sampled to exhaustion.
  - sample_spine: a tree with a distinguished uniformly-grown length-n
    non-backtracking path; off-path subtrees are i.i.d.

Statistics: backbone/bush decomposition, per-level trap maxima (pipes,
leaf-pipes, m-ary subtrees), ancestral degree products, and an exact
distributional sampler for the per-level trap maxima at depths where an
explicit tree would exceed any node budget.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .offspring import OffspringDist, dual_distribution

DEFAULT_NODE_BUDGET = 2**27
DEFAULT_BUSH_CAP = 10**6


class TreeError(ValueError):
    pass


class TreeBudgetError(TreeError):
    """Node budget exceeded while sampling; the cap is too deep for this law."""


@dataclass(frozen=True)
class Tree:
    """Depth-capped rooted tree in a BFS arena.

    ``parent[0] == -1``; children of v are indices
    ``child_start[v] : child_start[v] + deg[v]``. ``depth_cap`` is the
    generation at which backbone sampling stopped (None for hand-built,
    "closed" trees whose leaves are real). ``unexpanded[v]`` marks frontier
    nodes whose true degree is unknown.
    """

    parent: np.ndarray
    child_start: np.ndarray
    deg: np.ndarray
    depth: np.ndarray
    level_offsets: np.ndarray
    depth_cap: int | None
    unexpanded: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.parent.shape[0])

    @property
    def height(self) -> int:
        """Deepest level present in the arena."""
        return int(self.level_offsets.shape[0]) - 2

    def children(self, v: int) -> np.ndarray:
        s = int(self.child_start[v])
        return np.arange(s, s + int(self.deg[v]), dtype=np.int64)

    def level_slice(self, d: int) -> slice:
        """Index slice of the nodes at depth d (empty beyond the height)."""
        lo = self.level_offsets
        if d + 1 >= lo.shape[0]:
            return slice(0, 0)
        return slice(int(lo[d]), int(lo[d + 1]))

    def nodes_to_depth(self, d: int) -> int:
        """Count of nodes with depth <= d (a BFS prefix)."""
        lo = self.level_offsets
        return int(lo[min(d + 1, lo.shape[0] - 1)])

    def min_unexpanded_depth(self) -> float:
        """Smallest depth of a frontier node; +inf for closed trees."""
        if not self.unexpanded.any():
            return math.inf
        return float(self.depth[self.unexpanded].min())

    def ancestors(self, v: int) -> list[int]:
        """Strict ancestors of v, root first."""
        out = []
        while v != 0:
            v = int(self.parent[v])
            out.append(v)
        out.reverse()
        return out

    def path_from_root(self, v: int) -> list[int]:
        return self.ancestors(v) + [int(v)]

    def validate(self) -> None:
        """Structural invariants: BFS order, mutual parent/child links, depths."""
        n = self.n_nodes
        assert self.parent[0] == -1 and self.depth[0] == 0
        if n > 1:
            assert (self.parent[1:] < np.arange(1, n)).all(), "parent index must precede child"
            assert (self.depth[1:] == self.depth[self.parent[1:]] + 1).all()
        for v in range(n):
            kids = self.children(v)
            assert (self.parent[kids] == v).all()
        assert int(self.deg.sum()) == n - 1

    def to_text(self) -> str:
        """Newline-delimited parent-index format with a one-line header.

        The unexpanded mask is not serialized; from_text reconstructs it as
        "depth == depth_cap", which is exact for plainly sampled trees and
        conservative for survival-sampled ones (a bush leaf that happens to
        sit at the cap depth is then also treated as a frontier node).
        """
        cap = "none" if self.depth_cap is None else str(self.depth_cap)
        lines = [f"gwtree {self.n_nodes} {cap}"]
        lines.extend(str(int(p)) for p in self.parent)
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "Tree":
        lines = text.strip().split("\n")
        head = lines[0].split()
        if len(head) != 3 or head[0] != "gwtree":
            raise TreeError("bad tree header")
        n = int(head[1])
        cap = None if head[2] == "none" else int(head[2])
        if len(lines) != n + 1:
            raise TreeError(f"expected {n} parent lines, got {len(lines) - 1}")
        parents = [int(s) for s in lines[1:]]
        return tree_from_parents(parents, depth_cap=cap)


def _freeze(parent: np.ndarray, deg: np.ndarray, depth: np.ndarray,
            depth_cap: int | None, unexpanded: np.ndarray) -> Tree:
    n = parent.shape[0]
    child_start = np.empty(n, dtype=np.int64)
    child_start[0] = 1
    if n > 1:
        np.cumsum(deg[:-1], out=child_start[1:])
        child_start[1:] += 1
    levels = int(depth[-1])
    level_offsets = np.searchsorted(depth, np.arange(levels + 2), side="left")
    return Tree(parent=parent, child_start=child_start, deg=deg, depth=depth,
                level_offsets=level_offsets.astype(np.int64), depth_cap=depth_cap,
                unexpanded=unexpanded)


def tree_from_parents(parents: list[int], depth_cap: int | None = None) -> Tree:
    """Build a tree from an arbitrary-order parent list (root has parent -1).

    Nodes are relabeled into BFS order (children grouped per parent, original
    order preserved within a parent). With a depth_cap, nodes sitting at the
    cap are marked unexpanded; hand-built trees without a cap are closed.
    """
    n = len(parents)
    if n == 0:
        raise TreeError("empty tree")
    roots = [i for i, p in enumerate(parents) if p == -1]
    if len(roots) != 1:
        raise TreeError("exactly one root (parent -1) required")
    kids: list[list[int]] = [[] for _ in range(n)]
    for i, p in enumerate(parents):
        if p == -1:
            continue
        if not 0 <= p < n:
            raise TreeError(f"parent index {p} out of range")
        kids[p].append(i)
    order = [roots[0]]
    new_parent = np.full(n, -1, dtype=np.int32)
    depth = np.zeros(n, dtype=np.int32)
    deg = np.zeros(n, dtype=np.int32)
    new_id = {roots[0]: 0}
    head = 0
    while head < len(order):
        v = order[head]
        vid = new_id[v]
        deg[vid] = len(kids[v])
        for c in kids[v]:
            new_id[c] = len(order)
            new_parent[len(order)] = vid
            depth[len(order)] = depth[vid] + 1
            order.append(c)
        head += 1
    if len(order) != n:
        raise TreeError("parent list contains a cycle or unreachable nodes")
    if depth_cap is not None and depth.max() > depth_cap:
        raise TreeError("node deeper than depth_cap")
    unexpanded = (depth == depth_cap) if depth_cap is not None else np.zeros(n, dtype=bool)
    return _freeze(new_parent, deg, depth, depth_cap, unexpanded)


def _pmf_tables(dist: OffspringDist) -> tuple[np.ndarray, np.ndarray]:
    support = np.array(sorted(dist.pmf), dtype=np.int64)
    cum = np.cumsum(np.array([dist.pmf[int(k)] for k in support]))
    cum[-1] = 1.0
    return support, cum


def _draw_counts(support: np.ndarray, cum: np.ndarray, size: int,
                 rng: np.random.Generator) -> np.ndarray:
    u = rng.random(size)
    return support[np.searchsorted(cum, u, side="right")]


def sample_gw(dist: OffspringDist, depth_cap: int, rng: np.random.Generator,
              node_budget: int = DEFAULT_NODE_BUDGET) -> Tree:
    """Sample a Galton-Watson tree, expanding nodes at depth < depth_cap.

    Each node independently draws its child count from ``dist``; nodes at
    the cap stay unexpanded. Raises TreeBudgetError past ``node_budget``.
    """
    if depth_cap < 0:
        raise TreeError("depth_cap must be nonnegative")
    support, cum = _pmf_tables(dist)
    parent_chunks = [np.full(1, -1, dtype=np.int32)]
    deg_chunks: list[np.ndarray] = []
    level_sizes = [1]
    level_start = 0
    total = 1
    for d in range(depth_cap):
        width = level_sizes[d]
        if width == 0:
            break
        z = _draw_counts(support, cum, width, rng).astype(np.int32)
        deg_chunks.append(z)
        born = int(z.sum())
        total += born
        if total > node_budget:
            raise TreeBudgetError(f"node budget {node_budget} exceeded at depth {d + 1}")
        idx = np.arange(level_start, level_start + width, dtype=np.int32)
        parent_chunks.append(np.repeat(idx, z))
        level_sizes.append(born)
        level_start += width
    while level_sizes and level_sizes[-1] == 0:
        level_sizes.pop()
    n_done = sum(int(c.shape[0]) for c in deg_chunks)
    total_nodes = sum(level_sizes)
    deg_chunks.append(np.zeros(total_nodes - n_done, dtype=np.int32))
    parent = np.concatenate(parent_chunks)[:total_nodes]
    deg = np.concatenate(deg_chunks)[:total_nodes]
    depth = np.repeat(np.arange(len(level_sizes), dtype=np.int32),
                      np.asarray(level_sizes))
    unexpanded = depth == depth_cap
    return _freeze(parent, deg, depth, depth_cap, unexpanded)


@dataclass
class BackboneMarks:
    """Backbone/bush decomposition of a (capped) tree.

    Backbone = vertices on root-to-cap paths (the depth-cap survival proxy,
    exact for survival-sampled trees). For backbone v: z_i/z_f split the
    degree, tf_size = |T^f(v)| (v plus its hanging bushes), r_v =
    tf_size / z_i (NaN where z_i = 0, i.e. at the cap), s_v = largest bush
    hanging directly below v. For bush v, dist_to_backbone is the hop count
    to the lowest backbone ancestor. bush_height_profile[d] is the maximum
    T^f height over backbone vertices at depth d.
    """

    is_backbone: np.ndarray
    z_i: np.ndarray
    z_f: np.ndarray
    tf_size: np.ndarray
    r_v: np.ndarray
    s_v: np.ndarray
    dist_to_backbone: np.ndarray
    bush_height_profile: np.ndarray
    extinct: bool = False


def _all_backbone_marks(tree: Tree) -> BackboneMarks:
    # Leafless laws (q = 0): every vertex is on an infinite ray; no bushes.
    n = tree.n_nodes
    z_i = tree.deg.astype(np.int64)
    r_v = np.full(n, np.nan)
    nz = z_i > 0
    r_v[nz] = 1.0 / z_i[nz]
    return BackboneMarks(
        is_backbone=np.ones(n, dtype=bool),
        z_i=z_i,
        z_f=np.zeros(n, dtype=np.int64),
        tf_size=np.ones(n, dtype=np.int64),
        r_v=r_v,
        s_v=np.zeros(n, dtype=np.int64),
        dist_to_backbone=np.zeros(n, dtype=np.int64),
        bush_height_profile=np.zeros(tree.height + 1, dtype=np.int64),
    )


def _marks_from_backbone_mask(tree: Tree, on_backbone: np.ndarray) -> BackboneMarks:
    n = tree.n_nodes
    parent = tree.parent
    z_i = np.zeros(n, dtype=np.int64)
    z_f = np.zeros(n, dtype=np.int64)
    sub_size = np.ones(n, dtype=np.int64)      # bush subtree sizes (valid off-backbone)
    sub_height = np.zeros(n, dtype=np.int64)
    tf_size = np.ones(n, dtype=np.int64)
    s_v = np.zeros(n, dtype=np.int64)
    bush_height = np.zeros(n, dtype=np.int64)  # height of T^f(v) for backbone v
    for v in range(n - 1, 0, -1):
        p = int(parent[v])
        if on_backbone[v]:
            z_i[p] += 1
        elif on_backbone[p]:
            z_f[p] += 1
            tf_size[p] += sub_size[v]
            if sub_size[v] > s_v[p]:
                s_v[p] = sub_size[v]
            if 1 + sub_height[v] > bush_height[p]:
                bush_height[p] = 1 + sub_height[v]
        else:
            sub_size[p] += sub_size[v]
            if 1 + sub_height[v] > sub_height[p]:
                sub_height[p] = 1 + sub_height[v]
    r_v = np.full(n, np.nan)
    ok = on_backbone & (z_i > 0)
    r_v[ok] = tf_size[ok] / z_i[ok]
    dist = np.zeros(n, dtype=np.int64)
    for v in range(1, n):
        if not on_backbone[v]:
            p = int(parent[v])
            dist[v] = 1 if on_backbone[p] else dist[p] + 1
    levels = tree.height + 1
    profile = np.zeros(levels, dtype=np.int64)
    for d in range(levels):
        sl = tree.level_slice(d)
        mask = on_backbone[sl]
        if mask.any():
            profile[d] = bush_height[sl][mask].max()
    z_i[~on_backbone] = 0
    z_f[~on_backbone] = 0
    tf_size[~on_backbone] = 0
    s_v[~on_backbone] = 0
    return BackboneMarks(is_backbone=on_backbone, z_i=z_i, z_f=z_f, tf_size=tf_size,
                         r_v=r_v, s_v=s_v, dist_to_backbone=dist,
                         bush_height_profile=profile)


def backbone_decompose(tree: Tree) -> BackboneMarks:
    """Mark v backbone iff it has a descendant at the depth cap.

    This is the finite proxy for "lies on an infinite ray"; it is exact at
    depths well below the cap. A tree that died before the cap has no
    backbone and yields a distinguished extinct result.
    """
    if tree.depth_cap is None:
        raise TreeError("backbone decomposition needs a depth-capped tree")
    n = tree.n_nodes
    on_backbone = np.zeros(n, dtype=bool)
    if tree.height >= tree.depth_cap:
        on_backbone[tree.level_slice(tree.depth_cap)] = True
        parent = tree.parent
        for v in range(n - 1, 0, -1):
            if on_backbone[v]:
                on_backbone[parent[v]] = True
    marks = _marks_from_backbone_mask(tree, on_backbone)
    marks.extinct = not bool(on_backbone[0])
    return marks


def sample_gw_survival(dist: OffspringDist, depth_cap: int, rng: np.random.Generator,
                       node_budget: int = DEFAULT_NODE_BUDGET,
                       bush_cap: int = DEFAULT_BUSH_CAP) -> tuple[Tree, BackboneMarks]:
    """Exact sample of GW conditioned on non-extinction, with marks.

    Backbone vertices draw (Z, survivors ~ Bin(Z, 1-q)) rejected until at
    least one survivor; surviving children recurse, the others root
    independent extinction-conditioned (dual-law) bushes sampled to
    exhaustion (bushes may extend below the cap; only the backbone frontier
    is unexpanded). For q = 0 this is sample_gw with everything backbone.
    """
    if dist.mean_mu <= 1.0:
        raise TreeError("survival conditioning needs a supercritical law")
    q = dist.extinction_q
    if q == 0.0:
        tree = sample_gw(dist, depth_cap, rng, node_budget)
        return tree, _all_backbone_marks(tree)

    dual = dual_distribution(dist)
    support, cum = _pmf_tables(dist)
    d_support, d_cum = _pmf_tables(dual)

    parent_chunks = [np.full(1, -1, dtype=np.int32)]
    deg_chunks: list[np.ndarray] = []
    kind_chunks = [np.ones(1, dtype=bool)]   # True = backbone
    level_sizes = [1]
    level_start = 0
    total = 1
    bush_sizes: list[int] = []
    frontier_kind = kind_chunks[0]
    frontier_bush = np.full(1, -1, dtype=np.int64)
    level = 0
    while level_sizes[level] > 0:
        width = level_sizes[level]
        back = frontier_kind
        nb = int(back.sum())
        z = np.zeros(width, dtype=np.int64)
        surv = np.zeros(width, dtype=np.int64)
        if level < depth_cap and nb:
            zb = _draw_counts(support, cum, nb, rng)
            sb = rng.binomial(zb, 1.0 - q)
            bad = sb == 0
            while bad.any():
                nbad = int(bad.sum())
                zb[bad] = _draw_counts(support, cum, nbad, rng)
                sb[bad] = rng.binomial(zb[bad], 1.0 - q)
                bad = sb == 0
            z[back] = zb
            surv[back] = sb
        n_bush_nodes = width - nb
        if n_bush_nodes:
            z[~back] = _draw_counts(d_support, d_cum, n_bush_nodes, rng)
        deg_chunks.append(z.astype(np.int32))
        born = int(z.sum())
        total += born
        if total > node_budget:
            raise TreeBudgetError(f"node budget {node_budget} exceeded at depth {level + 1}")
        idx = np.arange(level_start, level_start + width, dtype=np.int32)
        parent_chunks.append(np.repeat(idx, z))
        child_kind = np.zeros(born, dtype=bool)
        child_bush = np.full(born, -1, dtype=np.int64)
        pos = 0
        for i in range(width):
            zi = int(z[i])
            if zi == 0:
                continue
            if back[i]:
                si = int(surv[i])
                child_kind[pos:pos + si] = True
                for j in range(si, zi):
                    child_bush[pos + j] = len(bush_sizes)
                    bush_sizes.append(0)
            else:
                child_bush[pos:pos + zi] = frontier_bush[i]
            pos += zi
        bush_children = child_bush[~child_kind]
        if bush_children.size:
            ids, counts = np.unique(bush_children, return_counts=True)
            for b, c in zip(ids, counts):
                bush_sizes[int(b)] += int(c)
                if bush_sizes[int(b)] > bush_cap:
                    raise TreeBudgetError(f"bush size cap {bush_cap} exceeded")
        kind_chunks.append(child_kind)
        level_sizes.append(born)
        level_start += width
        frontier_kind = child_kind
        frontier_bush = child_bush
        level += 1
    level_sizes.pop()  # trailing empty level
    parent = np.concatenate(parent_chunks[: len(level_sizes) + 1])[: sum(level_sizes)]
    deg = np.concatenate(deg_chunks)
    on_backbone = np.concatenate(kind_chunks[: len(level_sizes)])
    depth = np.repeat(np.arange(len(level_sizes), dtype=np.int32), np.asarray(level_sizes))
    unexpanded = on_backbone & (depth == depth_cap)
    tree = _freeze(parent, deg, depth, depth_cap, unexpanded)
    marks = _marks_from_backbone_mask(tree, on_backbone)
    return tree, marks


def sample_spine(dist: OffspringDist, n: int, rng: np.random.Generator,
                 depth_cap: int | None = None,
                 node_budget: int = DEFAULT_NODE_BUDGET) -> tuple[Tree, np.ndarray]:
    """Tree with a distinguished non-backtracking path v_0..v_n.

    Grown by the uniform-child algorithm: each spine vertex draws Z children,
    one chosen uniformly at random continues the spine, the rest (and v_n)
    root independent GW trees. Off-spine subtrees are i.i.d.; requires
    P(Z=0) = 0 so a child always exists.
    """
    if dist.p_zero > 0.0:
        raise TreeError("spine sampling requires a leafless law (P(Z=0)=0)")
    if n < 1:
        raise TreeError("n must be >= 1")
    if depth_cap is None:
        depth_cap = n
    if depth_cap < n:
        raise TreeError("depth_cap must be at least the spine length")
    support, cum = _pmf_tables(dist)
    parent_chunks = [np.full(1, -1, dtype=np.int32)]
    deg_chunks: list[np.ndarray] = []
    level_sizes = [1]
    level_start = 0
    total = 1
    spine = [0]
    spine_pos = 0  # position of the spine vertex within its level
    for d in range(depth_cap):
        width = level_sizes[d]
        z = _draw_counts(support, cum, width, rng).astype(np.int32)
        deg_chunks.append(z)
        born = int(z.sum())
        total += born
        if total > node_budget:
            raise TreeBudgetError(f"node budget {node_budget} exceeded at depth {d + 1}")
        idx = np.arange(level_start, level_start + width, dtype=np.int32)
        parent_chunks.append(np.repeat(idx, z))
        if d < n:
            offset = int(z[:spine_pos].sum())
            pick = int(rng.integers(int(z[spine_pos])))
            spine.append(level_start + width + offset + pick)
            spine_pos = offset + pick
        level_sizes.append(born)
        level_start += width
    deg_chunks.append(np.zeros(level_sizes[-1], dtype=np.int32))
    parent = np.concatenate(parent_chunks)
    deg = np.concatenate(deg_chunks)
    depth = np.repeat(np.arange(len(level_sizes), dtype=np.int32), np.asarray(level_sizes))
    unexpanded = depth == depth_cap
    tree = _freeze(parent, deg, depth, depth_cap, unexpanded)
    return tree, np.asarray(spine, dtype=np.int64)


def sample_min_degree_tree(m: int, k_max: int, depth: int,
                           rng: np.random.Generator) -> Tree:
    """Random tree whose vertices at depth < ``depth`` have m..k_max children.

    The arena extends to ``depth`` (those nodes are leaves by construction,
    i.e. the tree is closed); every vertex a return path of horizon
    2*(depth-1) can stand on has degree >= m, which is the hypothesis of the
    measure sandwich.
    """
    if m < 1 or k_max < m:
        raise TreeError("need 1 <= m <= k_max")
    parents = [-1]
    frontier = [0]
    for d in range(depth):
        nxt = []
        for v in frontier:
            for _ in range(int(rng.integers(m, k_max + 1))):
                parents.append(v)
                nxt.append(len(parents) - 1)
        frontier = nxt
    return tree_from_parents(parents)


class TrapMode(enum.Enum):
    PIPE = "pipe"            # d_T(v): run of single-child vertices below v
    LEAF_PIPE = "leaf_pipe"  # h_T(v): chain of deg-m vertices shedding leaves
    MARY = "mary"            # w_T(v): depth of the complete m-ary subtree at v


@dataclass
class TrapStats:
    """Per-level trap maxima and ancestral-degree statistics.

    level_max[d] is the statistic maximized over depth-d vertices whose
    strict ancestors all have degree <= k (NaN when no vertex qualifies);
    level_censored[d] marks levels where a depth-cap-truncated value
    participated (values are then lower bounds). path_products fills
    log_max_prod (log of M_n) and m_v instead.
    """

    mode: TrapMode | None = None
    k: float = math.inf
    level_max: np.ndarray | None = None
    level_censored: np.ndarray | None = None
    node_stat: np.ndarray | None = None
    log_max_prod: np.ndarray | None = None
    m_v: np.ndarray | None = None


def _pipe_stats(tree: Tree) -> tuple[np.ndarray, np.ndarray]:
    n = tree.n_nodes
    stat = np.zeros(n, dtype=np.int64)
    cens = np.asarray(tree.unexpanded).copy()
    deg = tree.deg
    cs = tree.child_start
    unexp = tree.unexpanded
    for v in range(n - 1, -1, -1):
        if deg[v] == 1 and not unexp[v]:
            c = int(cs[v])
            stat[v] = 1 + stat[c]
            cens[v] = cens[c]
    return stat, cens


def _leaf_pipe_stats(tree: Tree, m: int) -> tuple[np.ndarray, np.ndarray]:
    n = tree.n_nodes
    stat = np.zeros(n, dtype=np.int64)
    cens = np.asarray(tree.unexpanded).copy()
    deg = tree.deg
    cs = tree.child_start
    unexp = tree.unexpanded
    for v in range(n - 1, -1, -1):
        if unexp[v] or deg[v] != m:
            continue
        kids = range(int(cs[v]), int(cs[v]) + int(deg[v]))
        # frontier nodes are not trusted as leaves: the chain conservatively
        # breaks there, so values stay lower bounds.
        non_leaf = [c for c in kids if deg[c] > 0 or unexp[c]]
        touched = any(unexp[c] for c in kids)
        if len(non_leaf) == 0:
            stat[v] = 1
        elif len(non_leaf) == 1:
            c = non_leaf[0]
            stat[v] = 1 + stat[c]
            touched = touched or cens[c]
        cens[v] = cens[v] or touched
    return stat, cens


def _mary_stats(tree: Tree, m: int) -> tuple[np.ndarray, np.ndarray]:
    n = tree.n_nodes
    stat = np.zeros(n, dtype=np.int64)
    cens = np.asarray(tree.unexpanded).copy()
    deg = tree.deg
    cs = tree.child_start
    unexp = tree.unexpanded
    for v in range(n - 1, -1, -1):
        if unexp[v] or deg[v] != m:
            continue
        kids = range(int(cs[v]), int(cs[v]) + int(deg[v]))
        stat[v] = 1 + min(stat[c] for c in kids)
        cens[v] = any(cens[c] for c in kids)
    return stat, cens


def _ancestor_max_deg(tree: Tree) -> np.ndarray:
    """Max degree over the strict ancestors of each node (0 for the root)."""
    n = tree.n_nodes
    out = np.zeros(n, dtype=np.int64)
    parent = tree.parent
    deg = tree.deg
    for v in range(1, n):
        p = int(parent[v])
        dp = int(deg[p])
        out[v] = out[p] if out[p] >= dp else dp
    return out


def trap_stats(tree: Tree, k: float, mode: TrapMode, m: int | None = None) -> TrapStats:
    """Per-level maxima of d_T / h_T / w_T over ancestrally k-bounded vertices.

    Vertices censored by the depth cap are included with their (lower-bound)
    value and flag the level. ``m`` (the minimal positive support of the
    offspring law) is required for the leaf-pipe and m-ary modes.
    """
    if k < 1:
        raise TreeError("k must be >= 1")
    if mode is TrapMode.PIPE:
        stat, cens = _pipe_stats(tree)
    elif mode is TrapMode.LEAF_PIPE:
        if m is None:
            raise TreeError("leaf-pipe mode needs the minimal support m")
        stat, cens = _leaf_pipe_stats(tree, m)
    elif mode is TrapMode.MARY:
        if m is None:
            raise TreeError("m-ary mode needs the minimal support m")
        stat, cens = _mary_stats(tree, m)
    else:
        raise TreeError(f"unknown mode {mode!r}")
    anc = _ancestor_max_deg(tree)
    levels = tree.height + 1
    level_max = np.full(levels, np.nan)
    level_cens = np.zeros(levels, dtype=bool)
    for d in range(levels):
        sl = tree.level_slice(d)
        ok = anc[sl] <= k
        if ok.any():
            level_max[d] = float(stat[sl][ok].max())
            level_cens[d] = bool(cens[sl][ok].any())
    return TrapStats(mode=mode, k=k, level_max=level_max,
                     level_censored=level_cens, node_stat=stat)


def path_products(tree: Tree) -> TrapStats:
    """Ancestral degree products M_n (in log space) and branching counts m_v.

    log_max_prod[d] = log max over depth-d vertices of prod_{u<v} deg(u);
    m_v[v] counts strict ancestors with degree >= 2.
    """
    n = tree.n_nodes
    logprod = np.zeros(n)
    m_v = np.zeros(n, dtype=np.int64)
    parent = tree.parent
    deg = tree.deg
    logdeg = np.where(deg > 0, np.log(np.maximum(deg, 1)), 0.0)
    for v in range(1, n):
        p = int(parent[v])
        logprod[v] = logprod[p] + logdeg[p]
        m_v[v] = m_v[p] + (1 if deg[p] >= 2 else 0)
    levels = tree.height + 1
    out = np.full(levels, np.nan)
    for d in range(levels):
        sl = tree.level_slice(d)
        if sl.stop > sl.start:
            out[d] = float(logprod[sl].max())
    return TrapStats(log_max_prod=out, m_v=m_v)


# ---------------------------------------------------------------------------
# Exact distributional sampler for per-level trap maxima.
#
# At the depths the scaling laws speak about (n in the hundreds), a GW tree
# has ~mu^n vertices and cannot be materialized. But conditional on the
# count N of depth-n vertices whose strict ancestors all have degree <= k,
# the trap statistics of those vertices are i.i.d. (disjoint subtrees,
# unconstrained below level n) with explicit tails, so
#     P(max < ell) = E[(1 - tail(ell))^N] = G_n(1 - tail(ell)),
# where G_n is the n-fold iterate of the truncated-offspring PGF
# g(x) = sum_{j<=k} p_j x^j + P(Z>k). Everything is evaluated in
# eps = 1 - x space via log1p/expm1 so that tails ~ rho^(sigma*n), far below
# double-precision ulps of 1, stay resolved.
# ---------------------------------------------------------------------------


def trap_tail_prob(dist: OffspringDist, mode: TrapMode, ell: int) -> float:
    """P(statistic(v) >= ell) for a GW-rooted vertex v.

    PIPE: rho^ell with rho = P(Z=1).
    LEAF_PIPE: rho^(ell-1) * p_m p0^(m-1) (p0 + m(1-p0)) with
      rho = p_m m p0^(m-1); the final chain vertex may end at a leaf, which
      gives the non-geometric prefactor.
    MARY: b_ell with b_0 = 1, b_ell = p_m * b_{ell-1}^m (complete m-ary).
    """
    if ell <= 0:
        return 1.0
    if mode is TrapMode.PIPE:
        return dist.prob(1) ** ell
    m = dist.min_support_m
    if mode is TrapMode.LEAF_PIPE:
        p0 = dist.p_zero
        rho = dist.prob(m) * m * p0 ** (m - 1)
        a1 = dist.prob(m) * p0 ** (m - 1) * (p0 + m * (1.0 - p0))
        return a1 * rho ** (ell - 1)
    if mode is TrapMode.MARY:
        b = 1.0
        for _ in range(ell):
            b = dist.prob(m) * b**m
            if b == 0.0:
                return 0.0
        return b
    raise TreeError(f"unknown mode {mode!r}")


def _log_trap_tail(dist: OffspringDist, mode: TrapMode, ell: int) -> float:
    """log of trap_tail_prob, stable for large ell."""
    if ell <= 0:
        return 0.0
    if mode is TrapMode.PIPE:
        p1 = dist.prob(1)
        return ell * math.log(p1) if p1 > 0 else -math.inf
    m = dist.min_support_m
    if mode is TrapMode.LEAF_PIPE:
        p0 = dist.p_zero
        rho = dist.prob(m) * m * p0 ** (m - 1)
        a1 = dist.prob(m) * p0 ** (m - 1) * (p0 + m * (1.0 - p0))
        if rho <= 0 or a1 <= 0:
            return -math.inf
        return math.log(a1) + (ell - 1) * math.log(rho)
    pm = dist.prob(m)
    if pm <= 0:
        return -math.inf
    # log b_ell = (1 + m + ... + m^(ell-1)) log p_m
    if m == 1:
        return ell * math.log(pm)
    if ell * math.log(m) > 700.0:  # the m-ary vertex count alone overflows
        return -math.inf
    count = (float(m) ** ell - 1.0) / (m - 1)
    return count * math.log(pm)


def _one_minus_g(dist: OffspringDist, k: float, eps: float) -> float:
    """1 - g(1 - eps) for the degree-(<=k) truncated PGF g, stable in eps.

    g(x) = sum_{j<=k} p_j x^j + P(Z>k); 1 - g(1-eps) =
    sum_{j<=k} p_j (1 - (1-eps)^j), each term via expm1(j log1p(-eps)).
    """
    if eps <= 0.0:
        return 0.0
    if eps >= 1.0:
        return 1.0 - sum(p for j, p in dist.pmf.items() if j <= k and j == 0) \
            - sum(p for j, p in dist.pmf.items() if j > k)
    l1p = math.log1p(-eps)
    acc = 0.0
    for j, p in dist.pmf.items():
        if j <= k and j > 0:
            acc += p * (-math.expm1(j * l1p))
    return acc


def trap_level_max_cdf(dist: OffspringDist, k: float, n: int, mode: TrapMode,
                       j: int) -> float:
    """P(level-n trap max <= j | level n of the k-truncated tree nonempty).

    Exact (up to float evaluation of the PGF iteration):
    = 1 - epsA/epsB with epsA = 1 - G_n(1 - tail(j+1)), epsB = 1 - G_n(0).
    """
    log_tail = _log_trap_tail(dist, mode, j + 1)
    eps = math.exp(log_tail) if log_tail > -700 else 0.0
    eps_a = eps
    eps_b = 1.0
    for _ in range(n):
        eps_a = _one_minus_g(dist, k, eps_a)
        eps_b = _one_minus_g(dist, k, eps_b)
    if eps_b <= 0.0:
        raise TreeError("level-n survival probability underflowed")
    return 1.0 - eps_a / eps_b


def sample_trap_level_max(dist: OffspringDist, k: float, n: int, mode: TrapMode,
                          rng: np.random.Generator,
                          max_value: int | None = None) -> int:
    """Exact draw of the level-n trap maximum, conditioned on a nonempty level.

    Equal in law to sampling the full tree, conditioning on depth-n vertices
    with ancestral degrees <= k existing, and taking trap_stats' level max.
    Inversion by bisection on the monotone cdf.
    """
    if max_value is None:
        max_value = max(64, 64 * n)
    u = rng.random()
    lo, hi = -1, max_value  # cdf(-1) may be > 0 only if... max >= 0 always; lo = -1 sentinel
    if trap_level_max_cdf(dist, k, n, mode, max_value) < u:
        raise TreeError("trap max exceeded the inversion range; raise max_value")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if trap_level_max_cdf(dist, k, n, mode, mid) >= u:
            hi = mid
        else:
            lo = mid
    return hi
