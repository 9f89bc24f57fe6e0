"""Exact closed-form and small-instance oracles.

Interval DPs for simple random walk on Z (confinement and exit times), the
first-return generating function 1 - sqrt(1-x^2), the bottom-up recursion
for exponential moments of leaf-hitting times on finite trees (with a
certified rational enclosure: the moment is monotone in t = e^lambda, so a
rational upper bound on e^lambda gives a rational upper bound on the
moment), canonical enumeration of rooted trees, and exhaustive path
enumeration with exact rational path probabilities. These are the ground
truth the simulation modules are tested against.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .trees import Tree, tree_from_parents
from .walks import Kernel, SRW


class OracleError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Walks on Z
# ---------------------------------------------------------------------------


def z_confinement(n: int, x: int) -> float:
    """Exact P(max_{j<=n} |X_j| <= x) for SRW from 0, by a killing DP on [-x, x]."""
    if n < 0 or x < 1:
        raise OracleError("need n >= 0 and x >= 1")
    size = 2 * x + 1
    v = np.zeros(size)
    v[x] = 1.0
    buf = np.empty(size)
    for _ in range(n):
        buf[1:-1] = v[:-2] + v[2:]
        buf[0] = v[1]
        buf[-1] = v[-2]
        buf *= 0.5
        v, buf = buf, v
    return float(v.sum())


MOGULSKII_CONSTANT = -(math.pi**2) / 8.0


def z_first_return_pmf(k_max: int) -> np.ndarray:
    """P(first return to 0 happens at time 2k), k = 1..k_max.

    Coefficients of 1 - sqrt(1 - x^2): P(2k) = C(2k, k) / ((2k-1) 4^k).
    """
    if k_max < 1:
        raise OracleError("k_max must be >= 1")
    out = np.empty(k_max)
    for k in range(1, k_max + 1):
        out[k - 1] = math.comb(2 * k, k) / ((2 * k - 1) * 4**k)
    return out


def z_first_return_pmf_exact(k_max: int) -> list[Fraction]:
    return [Fraction(math.comb(2 * k, k), (2 * k - 1) * 4**k) for k in range(1, k_max + 1)]


def first_return_gf_coefficients(k_max: int) -> list[Fraction]:
    """Taylor coefficients of x^{2k} in 1 - sqrt(1-x^2), exactly.

    sqrt(1-u) = sum_k binom(1/2, k) (-u)^k, so the coefficient of u^k in
    1 - sqrt(1-u) is -binom(1/2, k) (-1)^k; substituting u = x^2 gives the
    series in x^{2k}. Independent of the Catalan closed form above.
    """
    coeffs = []
    for k in range(1, k_max + 1):
        b = Fraction(1)
        half = Fraction(1, 2)
        for i in range(k):
            b *= (half - i) / (i + 1)
        coeffs.append(-b * (-1) ** k)
    return coeffs


def z_exit_time_dist(b: int, horizon: int) -> np.ndarray:
    """CDF (up to ``horizon``) of the exit time of SRW started at 1 from [1, b].

    Exit means stepping to 0 or to b+1; computed by a killing DP on the
    interior states 1..b. Entry t of the returned array is P(exit <= t).
    """
    if b < 2:
        raise OracleError("b must be >= 2")
    if horizon < 0:
        raise OracleError("horizon must be >= 0")
    v = np.zeros(b)
    v[0] = 1.0  # state 1 at index 0
    cdf = np.zeros(horizon + 1)
    exited = 0.0
    buf = np.empty(b)
    for t in range(1, horizon + 1):
        exited += 0.5 * (v[0] + v[-1])
        buf[1:] = v[:-1]
        buf[0] = 0.0
        buf[:-1] += v[1:]
        buf *= 0.5
        v, buf = buf, v
        cdf[t] = exited
    return cdf


# ---------------------------------------------------------------------------
# Hitting-time exponential moments on finite trees
# ---------------------------------------------------------------------------


def _subtree_sizes(tree: Tree) -> np.ndarray:
    n = tree.n_nodes
    size = np.ones(n, dtype=np.int64)
    for v in range(n - 1, 0, -1):
        size[int(tree.parent[v])] += size[v]
    return size


def admissible_lambda(tree: Tree, n_leaves: int, exact: bool = False):
    """Largest lambda allowed by the moment bound's hypotheses.

    min(n/(18|T|), n^2/(18|T|^2), 1/(18|T(u_i)|^2)) over the root's
    children u_i; the min over an empty child set is +infinity (single
    vertex). Returns a float, or a Fraction when exact=True.
    """
    if n_leaves < 1:
        raise OracleError("need n_leaves >= 1")
    size = _subtree_sizes(tree)
    total = int(size[0])
    if exact:
        cands = [Fraction(n_leaves, 18 * total), Fraction(n_leaves**2, 18 * total**2)]
        cands += [Fraction(1, 18 * int(size[c]) ** 2) for c in tree.children(0)]
        return min(cands)
    cands_f = [n_leaves / (18 * total), n_leaves**2 / (18 * total**2)]
    cands_f += [1.0 / (18 * int(size[c]) ** 2) for c in tree.children(0)]
    return min(cands_f)


class MomentDomainError(OracleError):
    """A denominator went nonpositive: lambda is too large for this tree."""


def _moment_from_t(tree: Tree, n_leaves: int, t):
    """f_{T,n} evaluated at t = e^lambda; works for float or Fraction t.

    Bottom-up: for a subtree rooted at v with one external leaf,
    f1(v) = t/(deg+1) / (1 - t/(deg+1) * sum_children f1); at the top the
    n external leaves give
    f = (n/(n+deg0)) t / (1 - t/(n+deg0) * sum_children f1).
    """
    n = tree.n_nodes
    f1 = [None] * n
    for v in range(n - 1, 0, -1):
        deg = int(tree.deg[v])
        if deg == 0:
            f1[v] = t
        else:
            s = sum(f1[c] for c in tree.children(v))
            denom = 1 - (t / (deg + 1)) * s
            if denom <= 0:
                raise MomentDomainError("denominator <= 0 in the subtree recursion")
            f1[v] = (t / (deg + 1)) / denom
    m0 = int(tree.deg[0])
    if m0 == 0:
        return t
    s = sum(f1[c] for c in tree.children(0))
    denom = 1 - (t / (n_leaves + m0)) * s
    if denom <= 0:
        raise MomentDomainError("denominator <= 0 at the root")
    return (Fraction(n_leaves, n_leaves + m0) if isinstance(t, Fraction)
            else n_leaves / (n_leaves + m0)) * t / denom


def hitting_moment(tree: Tree, n_leaves: int, lam: float) -> float:
    """Exact E[e^{lambda L}], L the hitting time of n leaves attached to the root.

    Evaluated by the bottom-up recursion; raises MomentDomainError if a
    denominator is nonpositive (lambda too large for this tree), which is
    distinct from the moment bound being violated.
    """
    if n_leaves < 1:
        raise OracleError("need n_leaves >= 1")
    return float(_moment_from_t(tree, n_leaves, math.exp(lam)))


def hitting_moment_upper_exact(tree: Tree, n_leaves: int, lam: Fraction,
                               terms: int = 30) -> Fraction:
    """Certified rational upper bound on E[e^{lambda L}] at rational lambda.

    f is increasing in t = e^lambda (numerator increasing, denominator
    decreasing), so f evaluated at a rational t_hat >= e^lambda bounds the
    true moment from above. Exact Fraction arithmetic throughout.
    """
    t_hat = exp_upper_frac(lam, terms)
    return _moment_from_t(tree, n_leaves, t_hat)


def exp_lower_frac(x: Fraction, terms: int = 30) -> Fraction:
    """Partial Taylor sum: a rational lower bound on e^x for x >= 0."""
    if x < 0:
        raise OracleError("x must be nonnegative")
    acc = Fraction(1)
    term = Fraction(1)
    for i in range(1, terms + 1):
        term *= x / i
        acc += term
    return acc


def exp_upper_frac(x: Fraction, terms: int = 30) -> Fraction:
    """Rational upper bound on e^x: partial sum plus a geometric tail bound.

    Remainder after K terms is < x^(K+1)/(K+1)! * 1/(1 - x/(K+2)),
    valid for x < K+2.
    """
    if x < 0:
        raise OracleError("x must be nonnegative")
    if x >= terms + 2:
        raise OracleError("increase terms: tail bound needs x < terms+2")
    acc = Fraction(1)
    term = Fraction(1)
    for i in range(1, terms + 1):
        term *= x / i
        acc += term
    tail = term * x / (terms + 1) / (1 - x / (terms + 2))
    return acc + tail


def moment_bound_certified(tree: Tree, n_leaves: int,
                           terms: int = 30) -> tuple[bool, Fraction, Fraction]:
    """Certify E[e^{lambda L}] <= e^{lambda (5|T|/n + 1)} at the admissible maximum.

    Returns (holds, rational upper bound on the moment, rational lower bound
    on the right side). holds=True is a proof; False only means the rational
    enclosure was too loose (never observed at these sizes).
    """
    lam = admissible_lambda(tree, n_leaves, exact=True)
    up = hitting_moment_upper_exact(tree, n_leaves, lam, terms)
    total = tree.n_nodes
    rhs_exponent = lam * (Fraction(5 * total, n_leaves) + 1)
    lo = exp_lower_frac(rhs_exponent, terms)
    return up <= lo, up, lo


def moment_bound_n1_certified(tree: Tree, terms: int = 30) -> bool:
    """Certify the n = 1 strengthening E[e^{lambda L}] <= e^{lambda (4|T| - 3)}."""
    if tree.n_nodes == 1:
        return True  # both sides are e^lambda: equality by definition
    lam = admissible_lambda(tree, 1, exact=True)
    up = hitting_moment_upper_exact(tree, 1, lam, terms)
    e_lo = exp_lower_frac(lam, terms)
    return up <= e_lo ** (4 * tree.n_nodes - 3)


# ---------------------------------------------------------------------------
# Canonical rooted-tree enumeration
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _structures(n: int) -> tuple:
    """All non-isomorphic rooted trees on n vertices as canonical nested tuples.

    A tree is the sorted tuple of its children's structures; multisets of
    subtrees are enumerated by partitioning n-1 into sizes and choosing
    combinations with replacement per size, so no isomorphic duplicates.
    """
    if n == 1:
        return ((),)
    out = []
    for part in _partitions(n - 1):
        sizes: dict[int, int] = {}
        for s in part:
            sizes[s] = sizes.get(s, 0) + 1
        pools = [
            list(itertools.combinations_with_replacement(_structures(s), c))
            for s, c in sorted(sizes.items())
        ]
        for combo in itertools.product(*pools):
            kids = tuple(sorted(itertools.chain.from_iterable(combo)))
            out.append(kids)
    return tuple(out)


def _partitions(n: int, max_part: int | None = None):
    if max_part is None:
        max_part = n
    if n == 0:
        yield ()
        return
    for first in range(min(n, max_part), 0, -1):
        for rest in _partitions(n - first, first):
            yield (first,) + rest


def structure_to_tree(struct: tuple) -> Tree:
    parents = [-1]

    def build(node: tuple, parent_id: int) -> None:
        for child in node:
            parents.append(parent_id)
            build(child, len(parents) - 1)

    build(struct, 0)
    return tree_from_parents(parents)


def enumerate_rooted_trees(n: int) -> list[Tree]:
    """All rooted trees with exactly n vertices, up to isomorphism."""
    if n < 1:
        raise OracleError("n must be >= 1")
    return [structure_to_tree(s) for s in _structures(n)]


ROOTED_TREE_COUNTS = [1, 1, 2, 4, 9, 20, 48, 115, 286, 719]  # n = 1..10


# ---------------------------------------------------------------------------
# Exhaustive path enumeration (exact rational bridge oracle)
# ---------------------------------------------------------------------------


def step_probability_exact(tree: Tree, u: int, w: int, kernel: Kernel) -> Fraction:
    """Rational one-step transition probability u -> w."""
    deg = int(tree.deg[u])
    is_root = u == 0
    if int(tree.parent[w]) == u:
        if kernel.kind == "srw":
            return Fraction(1, deg + (0 if is_root else 1))
        return Fraction(1, deg) if is_root else Fraction(1, deg + kernel.m)
    if not is_root and int(tree.parent[u]) == w:
        if kernel.kind == "srw":
            return Fraction(1, deg + 1)
        return Fraction(kernel.m, deg + kernel.m)
    raise OracleError(f"{u} and {w} are not adjacent")


def enumerate_return_paths(tree: Tree, n: int,
                           depth_limit: int | None = None) -> list[tuple[int, ...]]:
    """All 2n-step vertex paths from the root back to the root.

    Pruned on parity (cannot return if depth > remaining steps) and on the
    optional max-depth constraint.
    """
    paths: list[tuple[int, ...]] = []
    horizon = 2 * n

    def neighbors(v: int) -> list[int]:
        out = list(map(int, tree.children(v)))
        if v != 0:
            out.append(int(tree.parent[v]))
        return out

    def walk(prefix: list[int], t: int) -> None:
        v = prefix[-1]
        d = int(tree.depth[v])
        rem = horizon - t
        if d > rem:
            return
        if t == horizon:
            if v == 0:
                paths.append(tuple(prefix))
            return
        for w in neighbors(v):
            if depth_limit is not None and int(tree.depth[w]) > depth_limit:
                continue
            prefix.append(w)
            walk(prefix, t + 1)
            prefix.pop()

    walk([0], 0)
    return paths


def path_prob_exact(tree: Tree, path: tuple[int, ...], kernel: Kernel = SRW) -> Fraction:
    acc = Fraction(1)
    for u, w in zip(path[:-1], path[1:]):
        acc *= step_probability_exact(tree, u, w, kernel)
    return acc


def bridge_prob_exact_enum(tree: Tree, n: int,
                           depth_limit: int | None = None) -> Fraction:
    """Exact P(X_{2n} = root [, max depth <= limit]) by full path enumeration."""
    return sum((path_prob_exact(tree, p) for p in enumerate_return_paths(tree, n, depth_limit)),
               Fraction(0))
