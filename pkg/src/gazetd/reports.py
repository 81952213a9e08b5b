"""Readers for every report the CLI writes. Used by the tests to check that
outputs are well-formed; handy from a notebook too."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path


class ReportError(ValueError):
    pass


def _num(v: str):
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ReportError(f"{path}: invalid JSON ({exc})") from None


def read_jsonl(path) -> list:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ReportError(f"{path}:{lineno}: invalid JSON ({exc})") from None
    return out


def read_csv(path, required=()) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ReportError(f"{path}: empty CSV")
        missing = [f for f in required if f not in reader.fieldnames]
        if missing:
            raise ReportError(f"{path}: missing columns {missing}")
        rows = [{k: _num(v) for k, v in row.items()} for row in reader]
    for i, row in enumerate(rows, start=2):
        if None in row or any(v is None for v in row.values()):
            raise ReportError(f"{path}:{i}: ragged row")
    return rows


def read_history(path) -> list[dict]:
    return read_csv(path, ("epoch", "train_loss", "train_acc", "val_loss", "val_acc"))


def read_bench(json_path) -> dict:
    rep = read_json(json_path)
    for key in ("rows", "scaling", "machine", "config"):
        if key not in rep:
            raise ReportError(f"{json_path}: missing '{key}'")
    seen = set()
    for row in rep["rows"]:
        k = (row["scenario"], row["n_widgets"])
        if k in seen:
            raise ReportError(f"{json_path}: duplicate row {k}")
        seen.add(k)
        if not (math.isfinite(row["mean_us"]) and row["mean_us"] >= 0):
            raise ReportError(f"{json_path}: bad latency in row {k}")
    return rep


def read_pipeline_output(path) -> tuple[list, dict]:
    """Split a pipeline JSONL output into (records, summary)."""
    lines = read_jsonl(path)
    if not lines or "summary" not in lines[-1]:
        raise ReportError(f"{path}: missing trailing summary object")
    records = lines[:-1]
    for i, r in enumerate(records):
        if abs(sum(r["probs"]) - 1.0) > 1e-9:
            raise ReportError(f"{path}: record {i} probabilities do not sum to 1")
    return records, lines[-1]["summary"]
