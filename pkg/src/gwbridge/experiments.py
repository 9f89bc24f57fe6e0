"""Reproducible experiment harness.

Each experiment maps (config, master_seed) deterministically to CSV rows
with the fixed schema

    experiment,replica,n,k_or_L,stat,value,flag,seed,wall_ms

plus a manifest.json (config echo, versions, git describe, timings). Rows
are generated per independent (replica, n) cell with its own RNG stream, so
worker count and execution order never change the output; rows are sorted
before writing and wall_ms is kept at 0 in the CSV (timings live in the
manifest) to keep byte-identical reruns.
"""

from __future__ import annotations

import csv
import json
import math
import os
import platform
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import __version__
from .bridge import bridge_dp
from .measure import sandwich_constants, verify_sandwich
from .offspring import CaseTag, OffspringDist, dual_distribution, make_offspring, trap_constants
from .rng import derived_seed, stream
from .trees import (TrapMode, sample_gw, sample_gw_survival,
                    sample_min_degree_tree, sample_trap_level_max)
from .walks import BRW, backbone_observe, simulate_walks, walk_until_backbone_steps

EXPERIMENTS = ("Case1Scaling", "Case2Diagnostics", "TrapScaling",
               "ExcursionRates", "OracleSuite")
_EXP_ID = {name: i for i, name in enumerate(EXPERIMENTS)}

CSV_COLUMNS = ("experiment", "replica", "n", "k_or_L", "stat", "value",
               "flag", "seed", "wall_ms")

AGGREGATE = -1  # replica id of aggregate rows


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    pmf: dict[int, float]
    n_grid: list[int]
    replicas: int
    master_seed: int
    out_dir: str = "out"
    depth_cap_policy: dict = field(default_factory=lambda: {"factor": 6.0, "margin": 50})
    l_grid_policy: dict = field(default_factory=lambda: {
        "ladder": [2.0, 3.0, 4.0, 6.0], "saturation_tol": 1e-3})
    workers: int = 1
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; "
                              f"expected one of {EXPERIMENTS}")
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")
        if sorted(self.n_grid) != list(self.n_grid):
            raise ConfigError("n_grid must be ascending")
        self.pmf = {int(k): float(v) for k, v in self.pmf.items()}

    @property
    def dist(self) -> OffspringDist:
        return make_offspring(self.pmf)

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["pmf"] = {str(k): v for k, v in sorted(self.pmf.items())}
        return d

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        obj = json.loads(text)
        known = {"experiment", "pmf", "n_grid", "replicas", "master_seed",
                 "out_dir", "depth_cap_policy", "l_grid_policy", "workers", "params"}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return ExperimentConfig(**obj)


@dataclass
class ExperimentRecord:
    experiment: str
    replica: int
    n: int
    k_or_L: float
    stat: str
    value: float
    flag: str = ""
    seed: int = 0
    wall_ms: int = 0

    def row(self) -> list[str]:
        return [self.experiment, str(self.replica), str(self.n),
                _fmt(self.k_or_L), self.stat, _fmt(self.value),
                self.flag, str(self.seed), str(self.wall_ms)]


def _fmt(x: float) -> str:
    if isinstance(x, int) or (isinstance(x, float) and x.is_integer()
                              and abs(x) < 2**53 and math.isfinite(x)):
        return str(int(x))
    return format(x, ".17g")


def sort_records(records: list[ExperimentRecord]) -> list[ExperimentRecord]:
    return sorted(records, key=lambda r: (r.replica, r.n, r.stat, str(r.k_or_L)))


def write_records(out_dir: str, experiment: str, records: list[ExperimentRecord]) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{experiment}.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in sort_records(records):
            w.writerow(rec.row())
    return path


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10,
                             cwd=os.path.dirname(os.path.abspath(__file__)))
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def write_manifest(out_dir: str, config: ExperimentConfig, wall_s: float) -> str:
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "config": config.to_json_dict(),
        "gwbridge_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "git_describe": _git_describe(),
        "wall_s": wall_s,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# slope fitting (shared contract with the report component: plain least
# squares, b = sum (x-xbar)(y-ybar) / sum (x-xbar)^2 in float64)
# ---------------------------------------------------------------------------


def fit_slope(xs: np.ndarray, ys: np.ndarray) -> tuple[float, float]:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    xbar = xs.mean()
    ybar = ys.mean()
    denom = ((xs - xbar) ** 2).sum()
    if denom == 0.0:
        raise ConfigError("degenerate fit: all x equal")
    slope = float(((xs - xbar) * (ys - ybar)).sum() / denom)
    return slope, float(ybar - slope * xbar)


def bootstrap_slope_ci(cells: dict[int, list[tuple[float, float]]],
                       rng: np.random.Generator, n_boot: int = 200,
                       level: float = 0.95) -> tuple[float, float]:
    """Replica-cluster bootstrap of the pooled slope."""
    ids = sorted(cells)
    slopes = []
    for _ in range(n_boot):
        pick = rng.integers(0, len(ids), size=len(ids))
        xs, ys = [], []
        for i in pick:
            for x, y in cells[ids[i]]:
                xs.append(x)
                ys.append(y)
        if len(set(xs)) < 2:
            continue
        slopes.append(fit_slope(np.array(xs), np.array(ys))[0])
    lo, hi = np.quantile(slopes, [(1 - level) / 2, 1 - (1 - level) / 2])
    return float(lo), float(hi)


def wilson_interval(hits: int, total: int, z: float = 1.959963984540054
                    ) -> tuple[float, float]:
    if total == 0:
        return 0.0, 1.0
    p = hits / total
    z2 = z * z
    denom = 1 + z2 / total
    center = (p + z2 / (2 * total)) / denom
    half = z * math.sqrt(p * (1 - p) / total + z2 / (4 * total**2)) / denom
    return max(0.0, center - half), min(1.0, center + half)


# ---------------------------------------------------------------------------
# Case-1 scaling
# ---------------------------------------------------------------------------


def _case1_cell(cfg_dict: dict, replica: int, n: int) -> list[ExperimentRecord]:
    cfg = ExperimentConfig(**cfg_dict)
    dist = cfg.dist
    exp_id = _EXP_ID[cfg.experiment]
    rng = stream(cfg.master_seed, exp_id, replica, n)
    seed = derived_seed(cfg.master_seed, exp_id, replica, n)
    cbrt = n ** (1.0 / 3.0)
    factor = float(cfg.depth_cap_policy.get("factor", 6.0))
    cap = int(math.ceil(factor * cbrt)) + 1
    tree, _marks = sample_gw_survival(dist, cap, rng)
    # The reference event is {max <= ref_L, X_{2n} = 0} at the deepest level
    # the cap policy affords; the L ladder below it diagnoses saturation.
    ref_L = cap - 1
    ladder = sorted({min(int(math.ceil(x * cbrt)), ref_L)
                     for x in cfg.l_grid_policy.get("ladder", [3.0, 4.5])}
                    | {ref_L})

    memo: dict[int, tuple[float, float]] = {}

    def log_joint(L: int) -> float:
        if L not in memo:
            p, tab = bridge_dp(tree, n, depth_limit=L)
            memo[L] = (tab.log_p_return, tab.leaked_mass)
        return memo[L][0]

    for L in ladder:
        log_joint(L)
    log_ref = log_joint(ref_L)
    leak_ref = memo[ref_L][1]
    below = max(L for L in ladder if L < ref_L) if len(ladder) > 1 else ref_L
    sat_gap = -math.expm1(log_joint(below) - log_ref) if below < ref_L else 0.0
    tol = float(cfg.l_grid_policy.get("saturation_tol", 1e-3))
    sat_flag = "unsaturated" if sat_gap > tol else ""

    res_cfg = cfg.l_grid_policy.get("quartile_resolution", "auto")
    base_res = (max(1, int(math.ceil(cbrt / 16)))
                if res_cfg == "auto" else int(res_cfg))

    def quartile(qq: float, res: int) -> int:
        # smallest L with P(max <= L | max <= ref, return) >= qq, located to
        # within res levels (DP cost grows geometrically with L, so the
        # upper quartile tolerates a slightly coarser stop).
        target = math.log(qq) + log_ref
        lo, hi = 0, ref_L
        while hi - lo > res:
            mid = (lo + hi) // 2
            if log_joint(mid) >= target:
                hi = mid
            else:
                lo = mid
        return hi

    recs = [
        ExperimentRecord(cfg.experiment, replica, n, ref_L, "log_p_return",
                         log_ref, "", seed),
        ExperimentRecord(cfg.experiment, replica, n, ref_L, "leak_at_ref",
                         leak_ref, "", seed),
        ExperimentRecord(cfg.experiment, replica, n, ref_L, "sat_gap",
                         sat_gap, sat_flag, seed),
    ]
    for L in ladder:
        recs.append(ExperimentRecord(cfg.experiment, replica, n, L, "log_p_joint",
                                     memo[L][0], "", seed))
    for qq, name, res in ((0.25, "max_disp_q25", base_res),
                          (0.5, "max_disp_q50", base_res),
                          (0.75, "max_disp_q75", max(base_res, 2 * base_res))):
        recs.append(ExperimentRecord(cfg.experiment, replica, n, -1, name,
                                     float(quartile(qq, res)), "", seed))
    return recs


def run_case1_scaling(config: ExperimentConfig) -> list[ExperimentRecord]:
    """Conditional max-displacement quartiles vs n, with a fitted slope.

    Per (replica, n): one survival-conditioned tree, kill-mode DPs up a
    level ladder until the conditional law saturates, quartiles by bisection
    on the exact joint probabilities. Aggregate rows carry the pooled
    least-squares slope of log median vs log n and its replica-bootstrap CI.
    """
    dist = config.dist
    if dist.case_tag is CaseTag.CASE_2:
        raise ConfigError("Case1Scaling needs a case-1 offspring law")
    cells = [(r, n) for r in range(config.replicas) for n in config.n_grid]
    cfg_dict = asdict(config)
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_case1_cell, *zip(*[(cfg_dict, r, n) for r, n in cells])))
    else:
        results = [_case1_cell(cfg_dict, r, n) for r, n in cells]
    records = [rec for recs in results for rec in recs]

    by_replica: dict[int, list[tuple[float, float]]] = {}
    xs, ys = [], []
    for rec in records:
        if rec.stat == "max_disp_q50":
            x, y = math.log(rec.n), math.log(max(rec.value, 1.0))
            by_replica.setdefault(rec.replica, []).append((x, y))
            xs.append(x)
            ys.append(y)
    exp_id = _EXP_ID[config.experiment]
    if len(set(xs)) >= 2:
        slope, intercept = fit_slope(np.array(xs), np.array(ys))
        boot_rng = stream(config.master_seed, exp_id, 10**6)
        lo, hi = bootstrap_slope_ci(by_replica, boot_rng,
                                    n_boot=int(config.params.get("n_boot", 200)))
        for name, val in (("slope", slope), ("intercept", intercept),
                          ("slope_ci_lo", lo), ("slope_ci_hi", hi)):
            records.append(ExperimentRecord(config.experiment, AGGREGATE, 0, -1,
                                            name, val, "aggregate",
                                            derived_seed(config.master_seed, exp_id)))
    return records


# ---------------------------------------------------------------------------
# Case-2 diagnostics
# ---------------------------------------------------------------------------


def run_case2_diagnostics(config: ExperimentConfig) -> list[ExperimentRecord]:
    """Exact confined-bridge diagnostics on full trees to depth 2n.

    Per (replica, n, gamma): (log n)^2/n * [log P(max <= n^gamma, X_{2n}=0)
    - n log M]; the gamma = inf column must reproduce the unconstrained
    return probability. Also records the B_n distribution under the biased
    walk and the sandwich slack on a small exhaustively-enumerated instance.
    """
    dist = config.dist
    if dist.case_tag is not CaseTag.CASE_2:
        raise ConfigError("Case2Diagnostics needs a case-2 offspring law")
    m = dist.min_support_m
    M = 4.0 * m / (m + 1) ** 2
    gammas = [float(g) for g in config.params.get("gammas", [0.8])]
    brw_paths = int(config.params.get("brw_paths", 2000))
    exp_id = _EXP_ID[config.experiment]
    records: list[ExperimentRecord] = []
    for replica in range(config.replicas):
        for n in config.n_grid:
            rng = stream(config.master_seed, exp_id, replica, n)
            seed = derived_seed(config.master_seed, exp_id, replica, n)
            tree = sample_gw(dist, 2 * n, rng)
            p_ret, tab = bridge_dp(tree, n)
            records.append(ExperimentRecord(config.experiment, replica, n, -1,
                                            "log_p_return", tab.log_p_return, "", seed))
            p_full, _ = bridge_dp(tree, n, depth_limit=2 * n)
            resid = abs(p_full - p_ret) / max(p_ret, 1e-300)
            records.append(ExperimentRecord(config.experiment, replica, n, 2 * n,
                                            "linf_consistency", resid, "", seed))
            for g in gammas:
                L = int(n ** g)
                p_g, tab_g = bridge_dp(tree, n, depth_limit=L)
                diag = (math.log(n) ** 2 / n) * (tab_g.log_p_return - n * math.log(M))
                records.append(ExperimentRecord(config.experiment, replica, n, L,
                                                "log_p_joint", tab_g.log_p_return, "", seed))
                records.append(ExperimentRecord(config.experiment, replica, n, L,
                                                f"diag_gamma{g:g}", diag, "", seed))
            walks = simulate_walks(tree, BRW(m), 2 * n, brw_paths, rng)
            pos = walks[:-1]  # positions at times 0..2n-1
            bn = ((pos == 0) | (tree.deg[pos] > m)).sum(axis=0)
            records.append(ExperimentRecord(config.experiment, replica, n, -1,
                                            "bn_mean", float(bn.mean()), "", seed))
            records.append(ExperimentRecord(config.experiment, replica, n, -1,
                                            "bn_q90", float(np.quantile(bn, 0.9)), "", seed))
    sandwich_n = int(config.params.get("sandwich_n", 2))
    rng = stream(config.master_seed, exp_id, 10**6)
    small = sample_min_degree_tree(m, m + 2, sandwich_n + 1, rng)
    consts = sandwich_constants(m, int(small.deg.max()))
    rep = verify_sandwich(small, sandwich_n, consts, L_list=[1, sandwich_n])
    agg_seed = derived_seed(config.master_seed, exp_id)
    records.append(ExperimentRecord(config.experiment, AGGREGATE, sandwich_n, -1,
                                    "sandwich_min_slack_lower", rep.min_slack_lower,
                                    "pass" if rep.per_path_ok else "fail", agg_seed))
    records.append(ExperimentRecord(config.experiment, AGGREGATE, sandwich_n, -1,
                                    "sandwich_min_slack_upper", rep.min_slack_upper,
                                    "pass" if rep.pbounds_ok else "fail", agg_seed))
    records.append(ExperimentRecord(config.experiment, AGGREGATE, sandwich_n, -1,
                                    "sandwich_identity_residual",
                                    max(rep.identity_residual.values()),
                                    "pass" if max(rep.identity_residual.values()) < 1e-12
                                    else "fail", agg_seed))
    return records


# ---------------------------------------------------------------------------
# Trap scaling
# ---------------------------------------------------------------------------


_MODE_BY_CASE = {
    CaseTag.CASE_1A: TrapMode.PIPE,
    CaseTag.CASE_1B: TrapMode.LEAF_PIPE,
    CaseTag.CASE_2: TrapMode.MARY,
}


def run_trap_scaling(config: ExperimentConfig) -> list[ExperimentRecord]:
    """Per-level trap maxima D_{n,k} / H_{n,k} / W_{n,k} vs their scaling laws.

    Uses the exact distributional sampler (conditional-PGF inversion), so the
    depths are unconstrained by node budgets and nothing is censored. Ratios:
    value/(sigma n) for the pipe statistics, value * log m / log n for the
    m-ary one.
    """
    dist = config.dist
    mode = _MODE_BY_CASE[dist.case_tag]
    if dist.mean_mu <= 1.0:
        raise ConfigError("trap scaling needs a supercritical law")
    ks = config.params.get("k_list", [dist.min_support_m + 1, math.inf])
    ks = [math.inf if k in ("inf", None) else float(k) for k in ks]
    sigma = None
    if mode is not TrapMode.MARY:
        k_for_sigma = max(dist.min_support_m, 1)
        sigma = trap_constants(dist, k_for_sigma).sigma
    m = dist.min_support_m
    exp_id = _EXP_ID[config.experiment]
    records: list[ExperimentRecord] = []
    for replica in range(config.replicas):
        for n in config.n_grid:
            for k in ks:
                rng = stream(config.master_seed, exp_id, replica, n,
                             0 if math.isinf(k) else int(k))
                seed = derived_seed(config.master_seed, exp_id, replica, n,
                                    0 if math.isinf(k) else int(k))
                if not math.isinf(k) and k < m:
                    continue
                val = sample_trap_level_max(dist, k, n, mode, rng)
                if mode is TrapMode.MARY:
                    ratio = val * math.log(m) / math.log(n) if n > 1 else math.nan
                else:
                    ratio = val / (sigma * n)
                kcol = math.inf if math.isinf(k) else k
                records.append(ExperimentRecord(config.experiment, replica, n, kcol,
                                                f"trap_max_{mode.value}", float(val),
                                                "", seed))
                records.append(ExperimentRecord(config.experiment, replica, n, kcol,
                                                f"trap_ratio_{mode.value}", float(ratio),
                                                "", seed))
    return records


# ---------------------------------------------------------------------------
# Excursion rates
# ---------------------------------------------------------------------------


def run_excursion_rates(config: ExperimentConfig) -> list[ExperimentRecord]:
    """Monte Carlo frequencies of the three excursion-bookkeeping events.

    Per path, i sweeps 1..floor(delta n): event 1 is
    {max_{j<i} |Y_j| <= delta n^{1/3}, N_i > 2n, S(i) < delta^{1/6} n},
    event 2 replaces the last two by {W(i) > n^{2/3}}, event 3 is
    {W(i) <= n^{2/3}, S(i) >= delta^{1/6} n}. Frequencies of the per-path
    union are reported with Wilson intervals; discarded (frontier-touching)
    paths are excluded and counted.
    """
    dist = config.dist
    if dist.case_tag is not CaseTag.CASE_1B:
        raise ConfigError("ExcursionRates needs a case-1b offspring law")
    if dist.mean_mu <= 1.0:
        raise ConfigError("ExcursionRates needs a supercritical law")
    deltas = [float(d) for d in config.params.get("deltas", [0.1, 0.01])]
    walks_per_tree = int(config.params.get("walks_per_tree", 4))
    budget_factor = int(config.params.get("step_budget_factor", 50))
    exp_id = _EXP_ID[config.experiment]
    max_k = max(int(d * n) for d in deltas for n in config.n_grid)
    cap = max_k + 2
    records: list[ExperimentRecord] = []
    hits: dict[tuple[int, float, int], int] = {}
    totals: dict[tuple[int, float], int] = {}
    discards: dict[tuple[int, float], int] = {}
    for replica in range(config.replicas):
        rng = stream(config.master_seed, exp_id, replica)
        seed = derived_seed(config.master_seed, exp_id, replica)
        tree, marks = sample_gw_survival(dist, cap, rng)
        for n in config.n_grid:
            for delta in deltas:
                K = int(delta * n)
                key = (n, delta)
                if K < 1:
                    continue
                for w in range(walks_per_tree):
                    path = walk_until_backbone_steps(tree, marks, K, rng,
                                                     step_budget=budget_factor * n)
                    if path.cap_touched:
                        discards[key] = discards.get(key, 0) + 1
                        continue
                    obs = backbone_observe(tree, marks, path, n)
                    totals[key] = totals.get(key, 0) + 1
                    depth_y = tree.depth[obs.Y].astype(np.int64)
                    thresh_y = delta * n ** (1.0 / 3.0)
                    s_thresh = delta ** (1.0 / 6.0) * n
                    w_thresh = n ** (2.0 / 3.0)
                    prefix_ok = True
                    got = [False, False, False]
                    for i in range(1, K + 1):
                        if i - 1 < len(depth_y):
                            prefix_ok = prefix_ok and depth_y[i - 1] <= thresh_y
                        if not prefix_ok:
                            break
                        n_i = obs.N[i] if i < len(obs.N) else math.inf
                        s_i = obs.S[i]
                        w_i = obs.W[i]
                        if n_i > 2 * n and s_i < s_thresh:
                            got[0] = True
                        if w_i > w_thresh:
                            got[1] = True
                        if w_i <= w_thresh and s_i >= s_thresh:
                            got[2] = True
                    for e in range(3):
                        if got[e]:
                            hits[(n, delta, e)] = hits.get((n, delta, e), 0) + 1
                    assert (obs.W[: K + 1] <= np.arange(K + 1)).all()
    agg_seed = derived_seed(config.master_seed, exp_id)
    for n in config.n_grid:
        for delta in deltas:
            key = (n, delta)
            tot = totals.get(key, 0)
            disc = discards.get(key, 0)
            records.append(ExperimentRecord(config.experiment, AGGREGATE, n, delta,
                                            "paths", float(tot), "", agg_seed))
            records.append(ExperimentRecord(config.experiment, AGGREGATE, n, delta,
                                            "discard_rate",
                                            disc / max(tot + disc, 1), "", agg_seed))
            for e in range(3):
                h = hits.get((n, delta, e), 0)
                lo, hi = wilson_interval(h, tot)
                records.append(ExperimentRecord(config.experiment, AGGREGATE, n, delta,
                                                f"event{e + 1}_freq",
                                                h / tot if tot else math.nan, "", agg_seed))
                records.append(ExperimentRecord(config.experiment, AGGREGATE, n, delta,
                                                f"event{e + 1}_wilson_lo", lo, "", agg_seed))
                records.append(ExperimentRecord(config.experiment, AGGREGATE, n, delta,
                                                f"event{e + 1}_wilson_hi", hi, "", agg_seed))
    return records


# ---------------------------------------------------------------------------
# Oracle suite
# ---------------------------------------------------------------------------


def run_oracle_suite(config: ExperimentConfig) -> list[ExperimentRecord]:
    """Named invariants with residuals; any failure flips the flag to 'fail'.

    This is the machine-checkable core of the acceptance battery (the full
    exhaustive versions live in the test suite): Mogulskii constant,
    moment-bound certification on all trees to 6 vertices, first-return GF,
    escape bracket on the binary tree, extinction/dual arithmetic, bridge DP
    vs exhaustive enumeration on random small trees, and the
    change-of-measure identity.
    """
    from .oracles import (MOGULSKII_CONSTANT, enumerate_rooted_trees,
                          first_return_gf_coefficients, moment_bound_certified,
                          moment_bound_n1_certified, z_confinement,
                          z_first_return_pmf_exact)
    from .walks import couple_to_line_batch, regular_tree_escape_bracket

    exp_id = _EXP_ID["OracleSuite"]
    seed = derived_seed(config.master_seed, exp_id)
    records: list[ExperimentRecord] = []

    def add(stat: str, value: float, ok: bool) -> None:
        records.append(ExperimentRecord("OracleSuite", AGGREGATE, 0, -1, stat,
                                        float(value), "pass" if ok else "fail", seed))

    n_mog = int(config.params.get("mogulskii_n", 10**6))
    x_mog = int(config.params.get("mogulskii_x", 251))
    val = (x_mog**2 / n_mog) * math.log(z_confinement(n_mog, x_mog))
    rel = abs(val - MOGULSKII_CONSTANT) / abs(MOGULSKII_CONSTANT)
    add("mogulskii_rel_err", rel, rel <= 0.08)

    checked = 0
    ok_all = True
    max_v = int(config.params.get("moment_tree_max", 6))
    for nv in range(1, max_v + 1):
        for t in enumerate_rooted_trees(nv):
            for n_leaves in (1, 2, 3):
                holds, _, _ = moment_bound_certified(t, n_leaves)
                ok_all = ok_all and holds
                checked += 1
            ok_all = ok_all and moment_bound_n1_certified(t)
    add("moment_bound_checks", checked, ok_all)

    pmf_err = max(abs(float(a - b)) for a, b in
                  zip(z_first_return_pmf_exact(20), first_return_gf_coefficients(20)))
    add("first_return_gf_err", pmf_err, pmf_err <= 1e-12)

    lo, hi = regular_tree_escape_bracket(2, 30)
    add("escape_bracket_width", hi - lo, hi - lo < 1e-6 and abs(lo - 1 / 6) < 1e-6)

    d = make_offspring({0: 0.25, 2: 0.75})
    q_err = abs(d.extinction_q - 1 / 3)
    dual_mean = dual_distribution(d).mean_mu
    add("extinction_q_err", q_err, q_err <= 1e-10)
    add("dual_mean", dual_mean, dual_mean < 1.0)

    rng = stream(config.master_seed, exp_id, 1)
    worst = 0.0
    for _ in range(int(config.params.get("bridge_checks", 5))):
        tree = sample_min_degree_tree(1, 3, 3, rng)
        from .oracles import bridge_prob_exact_enum
        for n in (1, 2, 3):
            dp = bridge_dp(tree, n, exact=True)[0]
            enum = bridge_prob_exact_enum(tree, n)
            worst = max(worst, abs(float(dp - enum)))
    add("bridge_vs_enum_err", worst, worst == 0.0)

    worst_id = 0.0
    for m in (2, 3):
        tree = sample_min_degree_tree(m, m + 2, 3, rng)
        consts = sandwich_constants(m, int(tree.deg.max()))
        rep = verify_sandwich(tree, 2, consts, L_list=[1, 2])
        worst_id = max(worst_id, max(rep.identity_residual.values()))
        if not (rep.per_path_ok and rep.pbounds_ok):
            worst_id = math.inf
    add("measure_identity_err", worst_id, worst_id <= 1e-12)

    leafless = make_offspring({1: 0.5, 2: 0.5})
    tree = sample_gw(leafless, 24, rng)
    _, _, violations = couple_to_line_batch(tree, 24, 2000, rng)
    add("coupling_violations", violations, violations == 0)

    return records


RUNNERS = {
    "Case1Scaling": run_case1_scaling,
    "Case2Diagnostics": run_case2_diagnostics,
    "TrapScaling": run_trap_scaling,
    "ExcursionRates": run_excursion_rates,
    "OracleSuite": run_oracle_suite,
}


DEFAULT_CONFIGS: dict[str, dict] = {
    "Case1Scaling": dict(experiment="Case1Scaling", pmf={1: 0.9, 2: 0.1},
                         n_grid=[512, 1024, 2048, 4096, 8192], replicas=20,
                         master_seed=20260810),
    "Case2Diagnostics": dict(experiment="Case2Diagnostics", pmf={2: 0.5, 3: 0.5},
                             n_grid=[4, 6, 8], replicas=3, master_seed=20260810),
    "TrapScaling": dict(experiment="TrapScaling", pmf={1: 0.5, 2: 0.5},
                        n_grid=[50, 100, 200], replicas=100, master_seed=20260810,
                        params={"k_list": [2, "inf"]}),
    "ExcursionRates": dict(experiment="ExcursionRates", pmf={0: 0.25, 2: 0.75},
                           n_grid=[128, 256, 512], replicas=50, master_seed=20260810),
    "OracleSuite": dict(experiment="OracleSuite", pmf={1: 0.5, 2: 0.5},
                        n_grid=[1], replicas=1, master_seed=20260810),
}


def run_experiment(config: ExperimentConfig) -> tuple[str, list[ExperimentRecord]]:
    """Run one experiment and write its CSV + manifest; returns (csv path, records)."""
    t0 = time.monotonic()
    records = RUNNERS[config.experiment](config)
    path = write_records(config.out_dir, config.experiment, records)
    write_manifest(config.out_dir, config, wall_s=time.monotonic() - t0)
    return path, records
