"""Ablation sweeps over shuffle count, collector kind and the variational flag."""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .core import ConfigError, MetricsReport, TabularDataset  # noqa: E402
from .downstream import SubsetScorer  # noqa: E402
from .pipeline import RunConfig, collect_records, run_from_records  # noqa: E402

SHUFFLE_GRID = (0, 5, 10, 25)
METRICS = ("precision", "recall", "f1", "auc")
KINDS = ("shuffle", "collector", "variational")


def _row(arm: str, report: MetricsReport, utility: float, size: int) -> dict:
    return {
        "arm": arm,
        **{m: round(getattr(report, m), 6) for m in METRICS},
        "utility": round(utility, 6),
        "subset_size": size,
    }


def _pipeline_row(arm, ds, records, cfg, scorer) -> dict:
    _, _, result = run_from_records(ds, records, cfg, scorer)
    return _row(arm, result.report, result.utility, len(result.best))


def shuffle_sweep(ds: TabularDataset, cfg: RunConfig, grid=SHUFFLE_GRID) -> list[dict]:
    scorer = SubsetScorer(ds, cfg.eval)
    records, _ = collect_records(ds, cfg, scorer)
    rows = []
    for s in grid:
        sub = dataclasses.replace(cfg, augment=dataclasses.replace(cfg.augment, shuffles=s))
        rows.append(_pipeline_row(f"S={s}", ds, records, sub, scorer))
    return rows


def collector_sweep(ds: TabularDataset, cfg: RunConfig) -> list[dict]:
    scorer = SubsetScorer(ds, cfg.eval)
    rows = []
    for kind in ("rl", "random"):
        sub = dataclasses.replace(cfg, collector_kind=kind)
        records, _ = collect_records(ds, sub, scorer)
        rows.append(_pipeline_row(kind, ds, records, sub, scorer))
    full = tuple(ds.vocab.tokens(range(ds.n_features)))
    rows.append(_row("original", scorer.report(full), scorer(full), ds.n_features))
    return rows


def variational_sweep(ds: TabularDataset, cfg: RunConfig) -> list[dict]:
    scorer = SubsetScorer(ds, cfg.eval)
    records, _ = collect_records(ds, cfg, scorer)
    rows = []
    for flag, arm in ((True, "variational"), (False, "deterministic")):
        sub = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, variational=flag))
        rows.append(_pipeline_row(arm, ds, records, sub, scorer))
    return rows


def plot_rows(rows: list[dict], kind: str, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    arms = [r["arm"] for r in rows]
    if kind == "shuffle":
        xs = [int(a.split("=")[1]) for a in arms]
        for m in METRICS:
            ax.plot(xs, [r[m] for r in rows], marker="o", label=m)
        ax.set_xlabel("shuffles per record")
    else:
        width = 0.8 / len(METRICS)
        for i, m in enumerate(METRICS):
            ax.bar([j + i * width for j in range(len(rows))], [r[m] for r in rows], width, label=m)
        ax.set_xticks([j + 0.4 - width / 2 for j in range(len(rows))], arms)
    ax.set_ylim(0, 1)
    ax.set_ylabel("score")
    ax.set_title(f"{kind} ablation")
    ax.legend(loc="lower right", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def run_ablation(kind: str, ds: TabularDataset, cfg: RunConfig, out_dir) -> tuple[Path, Path]:
    if kind == "shuffle":
        rows = shuffle_sweep(ds, cfg)
    elif kind == "collector":
        rows = collector_sweep(ds, cfg)
    elif kind == "variational":
        rows = variational_sweep(ds, cfg)
    else:
        raise ConfigError(f"unknown ablation {kind!r}; choose from {KINDS}")
    out_dir = Path(out_dir)
    csv_path = out_dir / f"ablation_{kind}.csv"
    png_path = out_dir / f"ablation_{kind}.png"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    plot_rows(rows, kind, png_path)
    return csv_path, png_path
