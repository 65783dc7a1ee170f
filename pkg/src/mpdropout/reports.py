"""CSV emission/reading for run and sweep metrics, and model-count reports."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

from mpdropout.arch import parse_arch
from mpdropout.experiment import MetricsRecord, SweepRow
from mpdropout.pooling import model_count, model_count_base

RUN_HEADER = ("epoch", "train_loss", "test_error_percent", "wall_seconds")
SWEEP_HEADER = ("p", "test_mode", "test_error_percent")
MODEL_COUNT_HEADER = ("layer", "r", "s", "t", "base", "log10_count")


@dataclass
class ModelCountRow:
    layer: int
    r: int
    s: int
    t: int
    base: float | None
    log10_count: float | None  # None where overlapping pooling makes the count undefined


def report_model_count(arch):
    if isinstance(arch, str):
        arch = parse_arch(arch)
    rows = []
    for i, pool, (c, h, w) in arch.pool_inputs():
        t = pool.region * pool.region
        tiles = h % pool.region == 0 and w % pool.region == 0
        if pool.stride == pool.region and tiles:
            rows.append(ModelCountRow(i, c, h * w, t, model_count_base(t),
                                      model_count(c, h * w, t).log10))
        else:
            rows.append(ModelCountRow(i, c, h * w, t, None, None))
    return rows


def format_model_count(rows, fmt="text"):
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(MODEL_COUNT_HEADER)
        for r in rows:
            w.writerow([r.layer, r.r, r.s, r.t,
                        "N/A" if r.base is None else f"{r.base:.6f}",
                        "N/A" if r.log10_count is None else f"{r.log10_count:.2f}"])
        return buf.getvalue()
    lines = []
    for r in rows:
        head = f"pool layer {r.layer}: r={r.r} s={r.s} t={r.t}"
        if r.log10_count is None:
            lines.append(f"{head}  N/A (count assumes non-overlapping pooling)")
        else:
            lines.append(f"{head}  b(t)={r.base:.6f}  log10(C)={r.log10_count:.2f}")
    return "\n".join(lines) + "\n"


def write_metrics_csv(records, path_or_file):
    _write_csv(path_or_file, RUN_HEADER,
               ([r.epoch, repr(r.train_loss), repr(r.test_error_percent), repr(r.wall_seconds)]
                for r in records))


def read_metrics_csv(path_or_file):
    return [MetricsRecord(int(row["epoch"]), float(row["train_loss"]),
                          float(row["test_error_percent"]), float(row["wall_seconds"]))
            for row in _read_csv(path_or_file, RUN_HEADER)]


def write_sweep_csv(rows, path_or_file):
    _write_csv(path_or_file, SWEEP_HEADER,
               (["" if r.p is None else repr(r.p), r.test_mode, repr(r.test_error_percent)]
                for r in rows))


def read_sweep_csv(path_or_file):
    return [SweepRow(None if row["p"] == "" else float(row["p"]), row["test_mode"],
                     float(row["test_error_percent"]))
            for row in _read_csv(path_or_file, SWEEP_HEADER)]


def _write_csv(path_or_file, header, rows):
    if isinstance(path_or_file, (str, Path)):
        with open(path_or_file, "w", newline="") as f:
            return _write_csv(f, header, rows)
    w = csv.writer(path_or_file, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)


def _read_csv(path_or_file, header):
    if isinstance(path_or_file, (str, Path)):
        with open(path_or_file, newline="") as f:
            return _read_csv(f, header)
    reader = csv.DictReader(path_or_file)
    if tuple(reader.fieldnames or ()) != header:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}, expected {header}")
    return list(reader)
