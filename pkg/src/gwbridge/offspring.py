"""Offspring-distribution arithmetic for Galton-Watson trees.

Finitely supported offspring laws Z with their derived constants: the mean
mu = E[Z], the minimal positive support m, the extinction probability q
(smallest fixed point of the PGF f), the extinction-conditioned dual law
with PGF h(x) = f(qx)/q, the truncated means mu_tilde_k, and the trap
constants rho / sigma = log(1/mu)/log(rho) that govern trap-depth scaling.

All values are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass


class CaseTag(enum.Enum):
    """Regime of the offspring law, by its support."""

    CASE_1A = "case1a"  # P(Z=1) > 0 and P(Z=0) = 0
    CASE_1B = "case1b"  # P(Z=0) > 0
    CASE_2 = "case2"    # P(Z>=2) = 1


class OffspringError(ValueError):
    """Invalid offspring pmf or an operation outside its domain."""


@dataclass(frozen=True)
class OffspringDist:
    """A finitely supported offspring law with derived constants.

    ``pmf`` maps k -> P(Z=k) over the (positive-probability) support.
    ``extinction_q`` is the smallest fixed point of the PGF in [0, 1].
    """

    pmf: dict[int, float]
    mean_mu: float
    min_support_m: int
    p_zero: float
    extinction_q: float
    case_tag: CaseTag

    @property
    def max_support(self) -> int:
        return max(self.pmf)

    def prob(self, k: int) -> float:
        return self.pmf.get(k, 0.0)

    def support(self) -> list[int]:
        return sorted(self.pmf)

    def to_json(self) -> str:
        return json.dumps({"pmf": {str(k): self.pmf[k] for k in sorted(self.pmf)}})

    @staticmethod
    def from_json(text: str) -> "OffspringDist":
        obj = json.loads(text)
        if not isinstance(obj, dict) or "pmf" not in obj:
            raise OffspringError("expected a JSON object with a 'pmf' key")
        return make_offspring({int(k): float(v) for k, v in obj["pmf"].items()})


@dataclass(frozen=True)
class TrapConstants:
    """Constants of the trap-depth laws.

    rho is the per-level trap-continuation probability (P(Z=1) in case 1a,
    P(Z=m)*m*P(Z=0)^(m-1) in case 1b); sigma = log(1/mu)/log(rho) is the
    linear trap-depth rate; mu_tilde_k is the k-truncated mean sum_{j<=k} j*P(Z=j).
    """

    rho: float
    sigma: float
    mu_tilde_k: float
    k: int


_SUM_TOL = 1e-9
_FIXED_POINT_TOL = 1e-12
_FIXED_POINT_CAP = 10**6


def make_offspring(pmf: dict[int, float]) -> OffspringDist:
    """Validate and normalize a pmf and compute all derived fields.

    Rejects (rather than renormalizes) total mass off by more than 1e-9;
    within that tolerance the mass is divided through exactly.
    """
    if not pmf:
        raise OffspringError("empty pmf")
    clean: dict[int, float] = {}
    for k, p in pmf.items():
        kk = int(k)
        if kk < 0:
            raise OffspringError(f"negative support point {kk}")
        p = float(p)
        if not math.isfinite(p) or p < 0.0:
            raise OffspringError(f"invalid mass {p!r} at k={kk}")
        if p > 0.0:
            clean[kk] = clean.get(kk, 0.0) + p
    if not clean:
        raise OffspringError("pmf has no positive mass")
    total = math.fsum(clean.values())
    if abs(total - 1.0) > _SUM_TOL:
        raise OffspringError(f"pmf mass {total} deviates from 1 by more than {_SUM_TOL}")
    clean = {k: p / total for k, p in clean.items()}

    mu = math.fsum(k * p for k, p in clean.items())
    p0 = clean.get(0, 0.0)
    positive = [k for k in clean if k > 0]
    m = min(positive) if positive else 0

    if p0 > 0.0:
        tag = CaseTag.CASE_1B
    elif m >= 2:
        tag = CaseTag.CASE_2
    else:
        tag = CaseTag.CASE_1A

    q = _extinction_prob(clean, mu, _FIXED_POINT_TOL)
    return OffspringDist(
        pmf=dict(sorted(clean.items())),
        mean_mu=mu,
        min_support_m=m,
        p_zero=p0,
        extinction_q=q,
        case_tag=tag,
    )


def pgf_eval(dist: OffspringDist | dict[int, float], x: float) -> float:
    """PGF f(x) = sum_k p_k x^k, evaluated by Horner over the support."""
    pmf = dist.pmf if isinstance(dist, OffspringDist) else dist
    if x < 0.0:
        raise OffspringError("PGF evaluated at negative x")
    acc = 0.0
    prev = 0
    # Horner with gap-aware powers: support may be sparse.
    for k in sorted(pmf, reverse=True):
        if prev:
            acc *= x ** (prev - k)
        acc += pmf[k]
        prev = k
    return acc * x**prev


def _extinction_prob(pmf: dict[int, float], mu: float, tol: float) -> float:
    # q = 1 for subcritical/critical laws, except the degenerate Z == 1
    # (the half-line survives; the smallest fixed point of f(x)=x is 0).
    if pmf.get(1, 0.0) == 1.0:
        return 0.0
    if mu <= 1.0:
        return 1.0
    x = 0.0
    for _ in range(_FIXED_POINT_CAP):
        nxt = pgf_eval(pmf, x)
        if abs(nxt - x) < tol:
            return nxt
        x = nxt
    raise OffspringError("extinction fixed-point iteration did not converge")


def extinction_prob(dist: OffspringDist, tol: float = _FIXED_POINT_TOL) -> float:
    """Smallest fixed point of the PGF in [0, 1].

    Iterates x <- f(x) from 0; monotone convergence to the smallest root is
    guaranteed from below. Errors out if the iteration cap is hit, which
    signals a pathological tolerance (e.g. tol = 0 at a critical law).
    """
    if tol <= 0.0:
        raise OffspringError("tol must be positive")
    x = 0.0
    for _ in range(_FIXED_POINT_CAP):
        nxt = pgf_eval(dist, x)
        if abs(nxt - x) < tol:
            return nxt
        x = nxt
    raise OffspringError("extinction fixed-point iteration did not converge")


def dual_distribution(dist: OffspringDist) -> OffspringDist:
    """The offspring law conditioned on extinction: p'_k = p_k q^(k-1).

    Its PGF is h(x) = f(qx)/q. For a supercritical input with q > 0 the
    dual is strictly subcritical (h'(1) = f'(q) < 1). Subcritical and
    critical inputs (q = 1) are returned unchanged.
    """
    q = dist.extinction_q
    if q == 0.0:
        raise OffspringError("extinction probability is 0: dual law conditions on a null event")
    if q == 1.0:
        return dist
    dual = {k: p * q ** (k - 1) for k, p in dist.pmf.items()}
    return make_offspring(dual)


def extinct_size_radius(dist: OffspringDist) -> tuple[float, float]:
    """Certified growth bound for the extinct-tree size GF.

    Returns (x_o, x_bound): x_o maximizes x/h(x) on (1, inf) for the dual
    PGF h, and F_n(x) <= x_o for every n whenever 1 <= x < x_bound =
    x_o/h(x_o). Located by golden-section search (x/h(x) is unimodal:
    log h(e^t) is convex in t). When the dual has support in {0, 1} the
    maximizer escapes to infinity and x_bound = 1/p'_1 is the exact radius.
    """
    dual = dual_distribution(dist)
    h = dual.pmf
    if max(h) <= 1:
        p1 = h.get(1, 0.0)
        return math.inf, (math.inf if p1 == 0.0 else 1.0 / p1)

    def ratio(x: float) -> float:
        return x / pgf_eval(h, x)

    # Bracket the maximum: double until the ratio turns over.
    hi = 2.0
    while ratio(hi * 2.0) > ratio(hi):
        hi *= 2.0
        if hi > 1e12:  # pragma: no cover - h has degree >= 2 so this terminates
            raise OffspringError("failed to bracket the x/h(x) maximum")
    lo = 1.0
    hi *= 2.0
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = ratio(c), ratio(d)
    for _ in range(200):
        if b - a < 1e-12 * max(1.0, b):
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = ratio(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = ratio(d)
    x_o = 0.5 * (a + b)
    return x_o, ratio(x_o)


def extinct_size_gf(dist: OffspringDist, x: float, n_gens: int) -> float:
    """F_n(x), the PGF of the generation-(<= n) vertex count of the extinct tree.

    F_0(x) = x and F_n(x) = x * h(F_{n-1}(x)) with h the dual PGF. For
    x < x_bound (see extinct_size_radius) the iteration is certified to stay
    below the witness x_o; beyond the bound, detected divergence (an iterate
    exceeding x_o) raises.
    """
    if x < 0.0:
        raise OffspringError("x must be nonnegative")
    if n_gens < 0:
        raise OffspringError("n_gens must be nonnegative")
    dual = dual_distribution(dist)
    x_o, x_bound = extinct_size_radius(dist)
    certified = x <= 1.0 or x < x_bound
    f = x
    for _ in range(n_gens):
        f = x * pgf_eval(dual, f)
        if not certified and f > x_o:
            raise OffspringError(
                f"extinct-size GF diverges at x={x}: iterate {f} exceeded the witness {x_o}"
            )
    return f


def truncated_mean(dist: OffspringDist, k: int) -> float:
    """mu_tilde_k = sum_{j=1}^{k} j * P(Z=j); nondecreasing in k, -> mu."""
    if k < 0:
        raise OffspringError("k must be nonnegative")
    return math.fsum(j * p for j, p in dist.pmf.items() if 1 <= j <= k)


def trap_constants(dist: OffspringDist, k: int) -> TrapConstants:
    """rho, sigma = log(1/mu)/log(rho), and the truncated mean mu_tilde_k.

    rho is selected by regime: P(Z=1) in case 1a; P(Z=m)*m*P(Z=0)^(m-1) in
    case 1b. Case-2 laws admit no traps (rho = 0, sigma undefined) and are
    rejected.
    """
    if dist.mean_mu <= 1.0:
        raise OffspringError("trap constants require a supercritical law (mu > 1)")
    m = dist.min_support_m
    if k < m:
        raise OffspringError(f"k={k} below the minimal support m={m}")
    if dist.case_tag is CaseTag.CASE_1A:
        rho = dist.prob(1)
    else:
        rho = dist.prob(m) * m * dist.p_zero ** (m - 1)
    if rho <= 0.0:
        raise OffspringError("rho = 0: no traps under this law (case-2 input)")
    if rho >= 1.0:
        raise OffspringError("rho must be < 1 (law is degenerate)")
    sigma = math.log(1.0 / dist.mean_mu) / math.log(rho)
    return TrapConstants(rho=rho, sigma=sigma, mu_tilde_k=truncated_mean(dist, k), k=k)
