"""Figures from run/sweep CSVs, plus the Bloom false-positive table.

Schemas (all CSVs have a header row):

* fig2, fig5: sweep CSV ``point,time,node,metric,value`` over an MCP axis;
  one bar per point with the mean producer ``data_service_delay`` (fig2)
  or router ``forwarding_delay`` (fig5).
* fig3, fig6: sweep CSV over ``growth.kind``; one line per point with the
  per-bucket mean of the same metrics.
* bloom_fp: ``m_over_n,n,k,fp_exact,fp_approx,fp_optimal,monte_carlo``.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .bloom import build_filter, fp_approx, fp_exact, fp_optimal, optimal_k
from .packets import Name

SWEEP_COLUMNS = ("point", "time", "node", "metric", "value")
BLOOM_COLUMNS = ("m_over_n", "n", "k", "fp_exact", "fp_approx", "fp_optimal", "monte_carlo")

FIGURES = {
    # kind: (required columns, metric, style, y label)
    "fig2": (SWEEP_COLUMNS, "data_service_delay", "bar", "producer service delay (ms)"),
    "fig5": (SWEEP_COLUMNS, "forwarding_delay", "bar", "router forwarding delay (us)"),
    "fig3": (SWEEP_COLUMNS, "data_service_delay", "line", "producer service delay (ms)"),
    "fig6": (SWEEP_COLUMNS, "forwarding_delay", "line", "router forwarding delay (us)"),
    "bloom_fp": (BLOOM_COLUMNS, None, "curve", "false positive probability"),
}

_SCALE = {"data_service_delay": 1e3, "forwarding_delay": 1e6}


class SchemaError(ValueError):
    pass


def read_rows(path, required: Iterable[str]) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty CSV")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{path}: missing columns: {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: CSV has a header but no rows")
    return rows


def point_means(rows: list[dict], metric: str) -> dict[str, float]:
    """Mean of ``metric`` per sweep point, pooled over nodes and time."""
    sums: dict[str, list[float]] = defaultdict(lambda: [0.0, 0.0])
    for r in rows:
        if r["metric"] == metric + "_sum":
            sums[r["point"]][0] += float(r["value"])
        elif r["metric"] == metric + "_count":
            sums[r["point"]][1] += float(r["value"])
    return {p: (s / c if c else math.nan) for p, (s, c) in sums.items()}


def point_series(rows: list[dict], metric: str) -> dict[str, list[tuple[float, float]]]:
    acc: dict[tuple[str, float], list[float]] = defaultdict(lambda: [0.0, 0.0])
    for r in rows:
        m = r["metric"]
        if m == metric + "_sum":
            acc[(r["point"], float(r["time"]))][0] += float(r["value"])
        elif m == metric + "_count":
            acc[(r["point"], float(r["time"]))][1] += float(r["value"])
    out: dict[str, list[tuple[float, float]]] = defaultdict(list)
    for (p, t), (s, c) in sorted(acc.items()):
        if c:
            out[p].append((t, s / c))
    return dict(out)


def _order(points: Iterable[str]) -> list[str]:
    def key(p):
        try:
            return (0, float(p), p)
        except ValueError:
            return (1, 0.0, p)
    return sorted(points, key=key)


def bloom_fp_table(n: int = 1000, ratios: Iterable[float] = range(2, 31, 2),
                   samples: int = 20000, seed: int = 0) -> list[dict]:
    """Closed forms and a Monte-Carlo estimate at optimal k for each m/n."""
    rng = np.random.default_rng(seed)
    rows = []
    base = Name((b"p", b"a"))
    for ratio in ratios:
        m = int(round(ratio * n))
        k = optimal_k(m, n)
        tag = rng.integers(2**62)
        members = [base.append(f"{tag}-{i}") for i in range(n)]
        flt = build_filter(members, m, k, seed=int(rng.integers(2**32)))
        probes = (base.append(f"absent-{tag}-{j}") for j in range(samples))
        hits = sum(1 for name in probes if flt.query(name))
        rows.append({
            "m_over_n": ratio, "n": n, "k": k,
            "fp_exact": fp_exact(m, n, k), "fp_approx": fp_approx(m, n, k),
            "fp_optimal": fp_optimal(m, n), "monte_carlo": hits / samples,
        })
    return rows


def write_bloom_table(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, BLOOM_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def plot(csv_path, kind: str, out: Optional[str] = None) -> Path:
    if kind not in FIGURES:
        raise SchemaError(f"unknown figure kind {kind!r}; choose from {', '.join(FIGURES)}")
    required, metric, style, ylabel = FIGURES[kind]
    rows = read_rows(csv_path, required)

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    if style == "bar":
        means = point_means(rows, metric)
        if not means:
            raise SchemaError(f"{csv_path}: no {metric} samples")
        pts = _order(means)
        scale = _SCALE[metric]
        ax.bar([f"{float(p):.0%}" if _isnum(p) else p for p in pts],
               [means[p] * scale for p in pts], color="tab:blue")
        ax.set_xlabel("malicious consumer population")
    elif style == "line":
        series = point_series(rows, metric)
        if not series:
            raise SchemaError(f"{csv_path}: no {metric} samples")
        scale = _SCALE[metric]
        for p in _order(series):
            ts, vs = zip(*series[p])
            ax.plot(ts, [v * scale for v in vs], label=f"{p} growth", marker=".")
        ax.set_xlabel("time (s)")
        ax.legend()
    else:
        ratio = [float(r["m_over_n"]) for r in rows]
        ax.semilogy(ratio, [float(r["fp_exact"]) for r in rows], label="exact")
        ax.semilogy(ratio, [float(r["fp_optimal"]) for r in rows], "--", label="0.6185^(m/n)")
        mc = [(x, float(r["monte_carlo"])) for x, r in zip(ratio, rows) if float(r["monte_carlo"]) > 0]
        if mc:
            ax.semilogy(*zip(*mc), "o", label="Monte-Carlo")
        ax.set_xlabel("m / n (bits per element)")
        ax.legend()
    ax.set_ylabel(ylabel)
    ax.set_title(kind)
    fig.tight_layout()
    dest = Path(out) if out else Path(csv_path).with_suffix(f".{kind}.png")
    fig.savefig(dest, dpi=120)
    plt.close(fig)
    return dest


def _isnum(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True
