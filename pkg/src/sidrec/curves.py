"""Learning-curve tables: per-epoch metrics, merged run comparisons, sweeps.

Tables are tab-separated UTF-8 text with a header row; they are the canonical
output.  Charts are a convenience and need matplotlib (``pip install sidrec[plot]``).
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .errors import ConfigError, DataError
from .train import EpochRecord

FLOAT_FMT = "{:.6f}"


class ColumnMismatch(ConfigError):
    """Runs being merged do not share the same metric columns."""


def _fmt(value) -> str:
    if isinstance(value, float):
        return FLOAT_FMT.format(value)
    return str(value)


def write_table(rows: Sequence[Mapping], path, columns: Optional[Sequence[str]] = None) -> Path:
    if not rows:
        raise ValueError("no rows to write")
    columns = list(columns or rows[0].keys())
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(row[c]) for c in columns) + "\n")
    return path


def read_table(path) -> list[dict]:
    """Read a table written by :func:`write_table`, or a metrics JSONL file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines:
        raise DataError(f"{path} is empty")
    if path.suffix == ".jsonl":
        try:
            return [json.loads(l) for l in lines]
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: malformed JSON line: {exc}") from exc
    header = lines[0].split("\t")
    rows = []
    for n, line in enumerate(lines[1:], start=2):
        cells = line.split("\t")
        if len(cells) != len(header):
            raise DataError(f"{path}:{n}: expected {len(header)} cells, got {len(cells)}")
        rows.append({h: _parse_cell(c) for h, c in zip(header, cells)})
    return rows


def _parse_cell(cell: str):
    for cast in (int, float):
        try:
            return cast(cell)
        except ValueError:
            pass
    return cell


def epoch_rows(records: Iterable[EpochRecord]) -> list[dict]:
    return [r.to_row() for r in records]


def export_curves(records: Sequence[EpochRecord], path, chart: Optional[str | Path] = None,
                  metric: str = "recall@20") -> Path:
    """One row per epoch; optionally render ``metric`` against epoch to ``chart``."""
    if not records:
        raise ValueError("export_curves needs at least one record")
    out = write_table(epoch_rows(records), path)
    if chart is not None:
        render_chart({"run": epoch_rows(records)}, chart, metric)
    return out


def merge_runs(runs: Mapping[str, Sequence[Mapping]]) -> list[dict]:
    """Stack per-epoch rows of several runs under a leading ``run`` column.

    Every run must have the same columns; otherwise ColumnMismatch.
    """
    if not runs:
        raise ValueError("no runs to merge")
    columns = None
    merged = []
    for label, rows in runs.items():
        if not rows:
            raise DataError(f"run {label!r} has no rows")
        cols = list(rows[0].keys())
        if columns is None:
            columns = cols
        elif set(cols) != set(columns):
            extra = sorted(set(cols) ^ set(columns))
            raise ColumnMismatch(f"run {label!r} has different columns: {', '.join(extra)}")
        for row in rows:
            if set(row) != set(columns):
                raise ColumnMismatch(f"run {label!r} has a row with different columns")
            merged.append({"run": label, **{c: row[c] for c in columns}})
    return merged


def export_comparison(runs: Mapping[str, Sequence[Mapping]], path,
                      chart: Optional[str | Path] = None, metric: str = "recall@20") -> Path:
    merged = merge_runs(runs)
    out = write_table(merged, path)
    if chart is not None:
        render_chart(runs, chart, metric)
    return out


def best_of(rows: Sequence[Mapping], metric: str = "recall@20") -> dict:
    """Row with the highest ``metric`` (earliest epoch on ties)."""
    if not rows:
        raise ValueError("no rows")
    return max(rows, key=lambda r: (r[metric], -r["epoch"]))


def sweep_table(results: Mapping[float, Sequence[Mapping]], k: int = 20) -> list[dict]:
    """One row per attention-loss weight with the best Recall@k and MRR@k of its run."""
    rows = []
    for lam in sorted(results):
        recs = results[lam]
        rows.append({"lambda": float(lam),
                     f"best_recall@{k}": max(r[f"recall@{k}"] for r in recs),
                     f"best_mrr@{k}": max(r[f"mrr@{k}"] for r in recs)})
    return rows


def is_non_increasing(values: Sequence[float], tol: float = 0.0) -> bool:
    return all(b <= a + tol for a, b in zip(values, values[1:]))


def write_metrics_jsonl(records: Sequence[EpochRecord], path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_row(), sort_keys=True) + "\n")
    return path


def summary(records: Sequence[EpochRecord], metric: Optional[str] = None) -> dict:
    """Best-epoch and final metrics; ``metric`` defaults to Recall@20, else the largest K."""
    if not records:
        return {"epochs": 0}
    if metric is None:
        ks = records[0].recall
        metric = f"recall@{20 if 20 in ks else max(ks)}"
    best = best_of(epoch_rows(records), metric)
    return {"epochs": len(records), "best_epoch": best["epoch"], "monitor": metric,
            "best": {k: v for k, v in best.items() if "@" in k},
            "final": {k: v for k, v in records[-1].to_row().items() if "@" in k},
            "wall_seconds": math.fsum(r.wall_seconds for r in records)}


def render_chart(runs: Mapping[str, Sequence[Mapping]], path, metric: str = "recall@20") -> Path:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ConfigError("chart output needs matplotlib: pip install 'sidrec[plot]'") from exc
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, rows in runs.items():
        ax.plot([r["epoch"] for r in rows], [r[metric] for r in rows], marker="o", label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel(metric)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
