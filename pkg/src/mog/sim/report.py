"""Experiment drivers that emit CSV rows and matplotlib figures.

Every row is ``(setting, seed, gamma, metric, value)``.  Floats are written
with ``repr`` so a re-run with the same seed reproduces the file byte for
byte.
"""

from __future__ import annotations

import csv
import io
import os
from typing import Iterable, Sequence

from .attacks import GameConfig, attack_oscillation, attack_splitview
from .compression import changed_bound, delta_samples, depth_band, summarize
from .config import SimConfig
from .latency import run_latency
from .liveness import run_liveness

Row = tuple[str, int, int, str, float]
COLUMNS = ("setting", "seed", "gamma", "metric", "value")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def rows_to_csv(rows: Iterable[Row]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_csv(rows: Iterable[Row], path: str) -> None:
    text = rows_to_csv(rows)
    if path == "-":
        print(text, end="")
        return
    with open(path, "w", newline="") as fh:
        fh.write(text)


def read_csv(path: str) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- experiments


def liveness_rows(cfg: SimConfig, gammas: Sequence[int], seed: int, runs: int, **kw) -> list[Row]:
    rows = run_liveness(cfg, gammas, seed=seed, runs=runs, **kw)
    out: list[Row] = []
    for g in gammas:
        fracs = [f for _, gg, f in rows if gg == g]
        for run, f in enumerate(fracs):
            out.append((cfg.setting, seed, g, f"run{run}.consensus_fraction", f))
        out.append((cfg.setting, seed, g, "consensus_fraction", sum(fracs) / len(fracs)))
    return out


def latency_rows(cfg: SimConfig, gamma: int, seed: int, runs: int, trials: int = 5) -> list[Row]:
    out: list[Row] = []
    ms, size, res = run_latency(cfg, "broadcast", gamma, seed, runs, trials)
    attempts = sum(r["attempts"] for r in res) / len(res)
    out += [
        (cfg.setting, seed, gamma, "broadcast_ms", ms),
        (cfg.setting, seed, gamma, "broadcast_bytes", size),
        (cfg.setting, seed, gamma, "broadcast_attempts", attempts),
    ]
    ms, size, res = run_latency(cfg, "collection", gamma, seed, runs, trials)
    failed = sum(r["time_ms"] is None for r in res)
    out += [
        (cfg.setting, seed, gamma, "collection_ms", ms),
        (cfg.setting, seed, gamma, "collection_bytes", size),
        (cfg.setting, seed, gamma, "collection_failures", failed),
    ]
    return out


def attack_rows(cfg: SimConfig, seed: int, runs: int) -> list[Row]:
    """Seeds ``seed .. seed+runs-1`` of each game at the setting's witness count."""
    game = GameConfig(n_w=cfg.N_W, v=cfg.V, gamma=cfg.gamma)
    out: list[Row] = []
    for name, fn, script in (
        ("splitview", attack_splitview, "fork"),
        ("oscillation", attack_oscillation, "fork"),
        ("oscillation_forge", attack_oscillation, "forge"),
    ):
        wins = sum(fn(game, s, script).won for s in range(seed, seed + runs))
        out.append((cfg.setting, seed, cfg.gamma, f"{name}.wins", wins))
        out.append((cfg.setting, seed, cfg.gamma, f"{name}.scenarios", runs))
    return out


def compression_rows(ms: Sequence[int], versions: int, seed: int) -> list[Row]:
    out: list[Row] = []
    for m in ms:
        s = summarize(delta_samples(m, versions, seed))
        lo, hi = depth_band(m)
        for metric, value in (
            ("trials", s["trials"]),
            ("mean_changed", s["mean_changed"]),
            ("changed_bound", changed_bound(m)),
            ("mean_deepest", s["mean_deepest"]),
            ("deepest_lo", lo),
            ("deepest_hi", hi),
        ):
            out.append(("compression", seed, m, metric, value))
    return out


# ---------------------------------------------------------------- figures


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_liveness(rows: Iterable[Row], path: str) -> None:
    """Consensus fraction against gamma, one line per setting."""
    plt = _pyplot()
    series: dict[str, list[tuple[int, float]]] = {}
    for setting, _, g, metric, value in rows:
        if metric == "consensus_fraction":
            series.setdefault(setting, []).append((g, float(value)))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for setting, pts in sorted(series.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=setting)
    ax.axhline(0.5, color="grey", lw=0.8, ls=":")
    ax.axhline(0.9, color="grey", lw=0.8, ls="--")
    ax.set_xlabel("gamma (checkpoints per witness response)")
    ax.set_ylabel("fraction of servers with consensus")
    ax.set_ylim(0, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_latency(rows: Iterable[Row], path: str) -> None:
    plt = _pyplot()
    vals: dict[tuple[str, str], float] = {}
    for setting, _, _, metric, value in rows:
        if metric in ("broadcast_ms", "collection_ms"):
            vals[(setting, metric)] = float(value)
    settings = sorted({s for s, _ in vals})
    fig, ax = plt.subplots(figsize=(5, 3.5))
    width = 0.38
    for i, metric in enumerate(("broadcast_ms", "collection_ms")):
        xs = [j + (i - 0.5) * width for j in range(len(settings))]
        ax.bar(xs, [vals.get((s, metric), 0.0) for s in settings], width, label=metric.split("_")[0])
    ax.set_xticks(range(len(settings)), settings)
    ax.set_ylabel("end-to-end time (ms)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_compression(rows: Iterable[Row], path: str) -> None:
    plt = _pyplot()
    by_m: dict[int, dict[str, float]] = {}
    for _, _, m, metric, value in rows:
        by_m.setdefault(int(m), {})[metric] = float(value)
    ms = sorted(by_m)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ms, [by_m[m]["mean_changed"] for m in ms], marker="o", label="mean changed siblings")
    ax.plot(ms, [by_m[m]["mean_deepest"] for m in ms], marker="s", label="mean deepest change")
    ax.fill_between(ms, [by_m[m]["deepest_lo"] for m in ms], [by_m[m]["deepest_hi"] for m in ms], alpha=0.2, label="depth band")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("updates per version (M)")
    ax.set_ylabel("siblings / depth")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def figure_path(out: str, name: str) -> str:
    base = os.path.splitext(out)[0] if out and out != "-" else name
    return f"{base}.png"
