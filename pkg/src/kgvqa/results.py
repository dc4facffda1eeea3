"""Append-only results CSV with one fixed column set for every stage."""

from __future__ import annotations

import csv
from pathlib import Path

from .errors import DataError

RESULT_COLUMNS = ("stage", "config_hash", "seed", "kind", "sampling", "occlusion", "mode", "split",
                  "lambda1", "lambda2", "lambda3", "top_k", "mr", "mrr", "hits1", "hits3", "hits10",
                  "gate_accuracy", "n")


def append_row(path, row: dict) -> None:
    unknown = set(row) - set(RESULT_COLUMNS)
    if unknown:
        raise DataError(f"unknown result columns {sorted(unknown)}")
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    if not new:
        with path.open(newline="") as fh:
            header = next(csv.reader(fh), [])
        if tuple(header) != RESULT_COLUMNS:
            raise DataError(f"{path}: existing header does not match the results schema")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, restval="")
        if new:
            w.writeheader()
        w.writerow(row)


def read_rows(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
