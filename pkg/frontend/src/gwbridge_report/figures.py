"""One figure per experiment CSV, with fitted slopes and reference lines."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

EXPECTED_COLUMNS = ["experiment", "replica", "n", "k_or_L", "stat", "value",
                    "flag", "seed", "wall_ms"]
KNOWN_EXPERIMENTS = ("Case1Scaling", "Case2Diagnostics", "TrapScaling",
                     "ExcursionRates", "OracleSuite")

REFERENCE_SLOPE = 1.0 / 3.0
MOGULSKII = -(math.pi**2) / 8.0


class ReportError(ValueError):
    pass


@dataclass
class Record:
    experiment: str
    replica: int
    n: int
    k_or_L: float
    stat: str
    value: float
    flag: str


def load_records(path: str) -> list[Record]:
    if not os.path.exists(path):
        raise ReportError(f"missing CSV: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ReportError(f"empty CSV: {path}") from None
        if header != EXPECTED_COLUMNS:
            raise ReportError(f"{path}: unexpected columns {header}; "
                              f"expected {EXPECTED_COLUMNS}")
        out = []
        for i, row in enumerate(reader, start=2):
            if len(row) != len(EXPECTED_COLUMNS):
                raise ReportError(f"{path}:{i}: ragged row")
            try:
                out.append(Record(experiment=row[0], replica=int(row[1]),
                                  n=int(row[2]), k_or_L=float(row[3]), stat=row[4],
                                  value=float(row[5]), flag=row[6]))
            except ValueError as exc:
                raise ReportError(f"{path}:{i}: {exc}") from exc
    if not out:
        raise ReportError(f"no data rows in {path}")
    return out


def fit_slope(xs, ys) -> tuple[float, float]:
    """Same least-squares closed form as the harness (slope, intercept)."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    xbar = xs.mean()
    ybar = ys.mean()
    denom = ((xs - xbar) ** 2).sum()
    if denom == 0.0:
        raise ReportError("degenerate fit: all x equal")
    slope = float(((xs - xbar) * (ys - ybar)).sum() / denom)
    return slope, float(ybar - slope * xbar)


def _pick(records: list[Record], stat: str, skip_flags=("discarded",)) -> list[Record]:
    return [r for r in records if r.stat == stat and r.flag not in skip_flags]


def _render_case1(records: list[Record], out_path: str) -> dict:
    meds = _pick(records, "max_disp_q50")
    if not meds:
        raise ReportError("Case1Scaling CSV has no max_disp_q50 rows")
    xs = np.array([math.log(r.n) for r in meds])
    ys = np.array([math.log(max(r.value, 1.0)) for r in meds])
    slope, intercept = fit_slope(xs, ys)
    harness = {r.stat: r.value for r in records if r.flag == "aggregate"}
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.scatter(np.exp(xs), np.exp(ys), s=14, alpha=0.6, label="replica medians")
    grid = np.linspace(xs.min(), xs.max(), 50)
    ax.plot(np.exp(grid), np.exp(intercept + slope * grid),
            label=f"fit: slope {slope:.3f}")
    anchor = ys.mean() - REFERENCE_SLOPE * xs.mean()
    ax.plot(np.exp(grid), np.exp(anchor + REFERENCE_SLOPE * grid), "--",
            label="reference slope 1/3")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("median conditional max displacement")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return {"slope": slope, "intercept": intercept,
            "harness_slope": harness.get("slope"), "points": len(meds)}


def _render_case2(records: list[Record], out_path: str) -> dict:
    diags = [r for r in records if r.stat.startswith("diag_gamma")]
    if not diags:
        raise ReportError("Case2Diagnostics CSV has no diag_gamma rows")
    gammas = sorted({r.stat for r in diags})
    fig, ax = plt.subplots(figsize=(6, 4.5))
    info = {}
    for g in gammas:
        pts = [r for r in diags if r.stat == g]
        ns = sorted({r.n for r in pts})
        means = [float(np.mean([r.value for r in pts if r.n == n])) for n in ns]
        ax.plot(ns, means, "o-", label=g)
        gamma = float(g.replace("diag_gamma", ""))
        ref = -(math.pi * math.log(2)) ** 2 / gamma**2
        ax.axhline(ref, ls="--", alpha=0.5)
        info[g] = {"reference": ref, "values": dict(zip(ns, means))}
    ax.set_xlabel("n")
    ax.set_ylabel("(log n)^2/n [log P - n log M]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return info


def _render_trap(records: list[Record], out_path: str) -> dict:
    ratios = [r for r in records if r.stat.startswith("trap_ratio")]
    if not ratios:
        raise ReportError("TrapScaling CSV has no trap_ratio rows")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    info = {}
    for k in sorted({r.k_or_L for r in ratios}):
        pts = [r for r in ratios if r.k_or_L == k]
        ns = sorted({r.n for r in pts})
        means = [float(np.mean([r.value for r in pts if r.n == n])) for n in ns]
        label = "k=inf" if math.isinf(k) else f"k={k:g}"
        ax.plot(ns, means, "o-", label=label)
        info[label] = dict(zip(map(str, ns), means))
    ax.set_xlabel("n")
    ax.set_ylabel("trap ratio")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return info


def _render_excursions(records: list[Record], out_path: str) -> dict:
    freqs = [r for r in records if r.stat.endswith("_freq")
             and r.stat.startswith("event")]
    if not freqs:
        raise ReportError("ExcursionRates CSV has no event frequency rows")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    info = {}
    for stat in sorted({r.stat for r in freqs}):
        for delta in sorted({r.k_or_L for r in freqs}):
            pts = sorted([r for r in freqs if r.stat == stat and r.k_or_L == delta],
                         key=lambda r: r.n)
            if not pts:
                continue
            ns = [r.n for r in pts]
            vals = [max(r.value, 1e-6) for r in pts]
            ax.plot(ns, vals, "o-", label=f"{stat} d={delta:g}")
            info[f"{stat}_d{delta:g}"] = dict(zip(map(str, ns), [r.value for r in pts]))
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("event frequency")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return info


def _render_oracle(records: list[Record], out_path: str) -> dict:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    stats = [r.stat for r in records]
    vals = [abs(r.value) if r.value != 0 else 1e-18 for r in records]
    colors = ["tab:green" if r.flag == "pass" else "tab:red" for r in records]
    ax.barh(stats, vals, color=colors)
    ax.set_xscale("log")
    ax.set_xlabel("residual / value")
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return {r.stat: {"value": r.value, "flag": r.flag} for r in records}


_RENDERERS = {
    "Case1Scaling": _render_case1,
    "Case2Diagnostics": _render_case2,
    "TrapScaling": _render_trap,
    "ExcursionRates": _render_excursions,
    "OracleSuite": _render_oracle,
}


def render_report(out_dir: str, image_format: str = "png") -> dict:
    """Render one figure per experiment CSV found in out_dir.

    Returns the summary dict (also written as summary.txt, deterministic for
    fixed inputs). Raises ReportError when no known CSV is present or a CSV
    is malformed.
    """
    found = [name for name in KNOWN_EXPERIMENTS
             if os.path.exists(os.path.join(out_dir, f"{name}.csv"))]
    if not found:
        expected = ", ".join(f"{n}.csv" for n in KNOWN_EXPERIMENTS)
        raise ReportError(f"no experiment CSVs in {out_dir!r}; expected any of: {expected}")
    summary: dict = {}
    for name in found:
        records = load_records(os.path.join(out_dir, f"{name}.csv"))
        img = os.path.join(out_dir, f"{name}.{image_format}")
        summary[name] = {"figure": os.path.basename(img),
                         "details": _RENDERERS[name](records, img)}
    lines = [f"gwbridge report over {len(found)} experiment(s)"]
    for name in found:
        lines.append(f"[{name}] -> {summary[name]['figure']}")
        det = summary[name]["details"]
        if name == "Case1Scaling":
            lines.append(f"  fitted slope: {det['slope']:.12g} "
                         f"(harness: {det['harness_slope']!r}, "
                         f"reference 1/3 = {REFERENCE_SLOPE:.12g})")
        else:
            lines.append(f"  {json.dumps(det, sort_keys=True, default=str)[:400]}")
    text = "\n".join(lines) + "\n"
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(text)
    return summary
