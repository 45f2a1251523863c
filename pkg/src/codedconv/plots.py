"""Figures written next to CSV outputs."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# no timestamp or version in the file, so reruns are byte-identical
_META = {"Software": None}


def figure_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".png")


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def l_curve(path, curve, k_relaxed: float, k_circ: int):
    ks, Ls = zip(*curve)
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(ks, Ls, "o-", color="tab:blue", label="L(k)")
    ax.axvline(k_relaxed, color="gray", ls="--", lw=1, label=f"relaxed optimum {k_relaxed:.2f}")
    ax.axvline(k_circ, color="tab:red", lw=1, label=f"chosen k = {k_circ}")
    ax.set_xlabel("k")
    ax.set_ylabel("approximate latency (s)")
    ax.legend(fontsize=8)
    return _save(fig, path)


def strategy_bars(path, summaries):
    labels = [s.strategy for s in summaries]
    fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(labels) + 1), 3.4))
    means = [s.mean_s for s in summaries]
    err = [[m - s.p50 if m > s.p50 else 0 for m, s in zip(means, summaries)],
           [s.p95 - m for m, s in zip(means, summaries)]]
    ax.bar(labels, means, yerr=err, capsize=3, color="tab:blue")
    ax.set_ylabel("latency (s): mean, p50 to p95")
    ax.tick_params(axis="x", rotation=30)
    return _save(fig, path)


def sweep(path, param: str, rows):
    """rows: (value, SimSummary) pairs."""
    series = defaultdict(list)
    for value, s in rows:
        series[s.strategy].append((value, s.mean_s))
    fig, ax = plt.subplots(figsize=(5, 3.4))
    for name, pts in sorted(series.items()):
        if not pts:
            continue
        xs, ys = zip(*pts)
        ax.plot(xs, ys, "o-", label=name)
    ax.set_xlabel(param)
    ax.set_ylabel("mean latency (s)")
    ax.legend(fontsize=8)
    return _save(fig, path)


def gain_curve(path, curve, R: float):
    ks, hs = zip(*curve)
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(ks, hs, "o-", label="h(n, k)")
    ax.axhline(R, color="tab:red", lw=1, label=f"R = {R:.3g}")
    ax.set_xlabel("k")
    ax.set_ylabel("straggler gain")
    ax.legend(fontsize=8)
    return _save(fig, path)


def timing(path, rows):
    """Stacked per-layer phase times from (layer_id, phase, seconds) rows."""
    layers = list(dict.fromkeys(str(r[0]) for r in rows))
    phases = ["enc", "exec", "dec", "local"]
    data = {p: [0.0] * len(layers) for p in phases}
    for lid, phase, sec in rows:
        data[phase][layers.index(str(lid))] += sec
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(layers) + 1), 3.4))
    bottom = [0.0] * len(layers)
    for p in phases:
        ax.bar(layers, data[p], bottom=bottom, label=p)
        bottom = [b + v for b, v in zip(bottom, data[p])]
    ax.set_xlabel("layer")
    ax.set_ylabel("seconds")
    ax.legend(fontsize=8)
    return _save(fig, path)
