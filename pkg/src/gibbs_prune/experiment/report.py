"""Aggregate per-run CSV reports into summary tables and plot-ready curves."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

SUMMARY_COLUMNS = ["experiment_id", "runs", "seeds", "mean_accuracy", "std_accuracy",
                   "min_accuracy", "max_accuracy", "mean_pruned_fraction"]
CURVE_COLUMNS = ["experiment_id", "epoch", "phase", "runs", "mean_val_accuracy", "mean_train_loss",
                 "beta", "lr"]


def find_reports(paths) -> list[Path]:
    found = []
    for p in map(Path, paths):
        if p.is_dir():
            found += sorted(p.rglob("report.csv"))
        elif p.exists():
            found.append(p)
        else:
            raise FileNotFoundError(p)
    return found


def read_report(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _pruned_mean(row):
    vals = [float(v) for k, v in row.items() if k.startswith("pruned_fraction.")]
    return float(np.mean(vals)) if vals else 0.0


def summarize(paths):
    """Return ``(summary_rows, curve_rows)`` over every report found under ``paths``."""
    finals = defaultdict(list)
    curves = defaultdict(list)
    for path in find_reports(paths):
        rows = read_report(path)
        if not rows:
            continue
        final = rows[-1]
        finals[final["experiment_id"]].append(final)
        for r in rows:
            curves[(r["experiment_id"], int(r["epoch"]), r["phase"])].append(r)
    summary = []
    for exp, rows in sorted(finals.items()):
        acc = np.array([float(r["val_accuracy"]) for r in rows])
        summary.append({
            "experiment_id": exp,
            "runs": len(rows),
            "seeds": " ".join(sorted({r["seed"] for r in rows}, key=int)),
            "mean_accuracy": float(acc.mean()),
            "std_accuracy": float(acc.std(ddof=1)) if acc.size > 1 else 0.0,
            "min_accuracy": float(acc.min()),
            "max_accuracy": float(acc.max()),
            "mean_pruned_fraction": float(np.mean([_pruned_mean(r) for r in rows])),
        })
    curve_rows = []
    for (exp, epoch, phase), rows in sorted(curves.items()):
        curve_rows.append({
            "experiment_id": exp, "epoch": epoch, "phase": phase, "runs": len(rows),
            "mean_val_accuracy": float(np.mean([float(r["val_accuracy"]) for r in rows])),
            "mean_train_loss": float(np.mean([float(r["train_loss"]) for r in rows])),
            "beta": float(rows[0]["beta"]), "lr": float(rows[0]["lr"]),
        })
    return summary, curve_rows


def write_table(rows, columns, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def write_summary(paths, out_dir) -> tuple[Path, Path]:
    summary, curves = summarize(paths)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_table(summary, SUMMARY_COLUMNS, out / "summary.csv")
    write_table(curves, CURVE_COLUMNS, out / "curves.csv")
    return out / "summary.csv", out / "curves.csv"
