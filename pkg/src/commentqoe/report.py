"""Dataset statistics, per-operator reports and plot-ready series files.

Reports carry window-level numbers only. No comment text or user
identifier ever reaches an operator-facing artifact.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from commentqoe.aggregate import (
    DEFAULT_THRESHOLD,
    AlertEpisode,
    DeltaPoint,
    GlobalPoint,
    WindowAggregate,
    WindowKey,
)
from commentqoe.scoring import VALID_SCORES, ScoredComment


class UnknownISPError(KeyError):
    pass


@dataclass(frozen=True)
class DatasetStats:
    total: int
    valid: int
    excluded: int
    histogram: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "valid": self.valid,
            "excluded": self.excluded,
            "histogram": {str(k): self.histogram.get(k, 0) for k in VALID_SCORES},
        }


def dataset_stats(scored: Iterable[ScoredComment]) -> DatasetStats:
    hist = Counter(s.comment_mos for s in scored)
    total = sum(hist.values())
    excluded = hist.get(-1, 0)
    return DatasetStats(total, total - excluded, excluded, dict(hist))


@dataclass(frozen=True)
class ReportRow:
    window: WindowKey
    local_avg_mos: float
    comment_count: int
    global_mos: float
    delta: float


@dataclass(frozen=True)
class OperatorReport:
    isp: str
    rows: tuple
    episodes: tuple
    period: tuple | None  # (first window, last window) or None when empty

    def to_dict(self) -> dict:
        return {
            "isp": self.isp,
            "period": None if self.period is None else [w.label() for w in self.period],
            "rows": [
                {
                    "time_window": r.window.label(),
                    "local_avg_mos": r.local_avg_mos,
                    "comment_count": r.comment_count,
                    "global_mos": r.global_mos,
                    "delta_mos": r.delta,
                }
                for r in self.rows
            ],
            "episodes": [e.to_dict() for e in self.episodes],
        }


def operator_report(
    isp: str,
    aggs: Iterable[WindowAggregate],
    globals_: Iterable[GlobalPoint],
    episodes: Iterable[AlertEpisode],
    *,
    isps: Sequence[str],
) -> OperatorReport:
    """Local and platform-wide MOS per window for one operator.

    ``isps`` is the configured provider list; asking for a label outside it
    raises :class:`UnknownISPError`, while a known ISP with no comments gets
    an empty report.
    """
    if isp not in isps:
        raise UnknownISPError(isp)
    ref = {g.window: g.global_mos for g in globals_}
    rows = []
    for a in sorted((a for a in aggs if a.isp == isp), key=lambda a: a.window):
        g = ref[a.window]
        rows.append(ReportRow(a.window, a.avg_mos, a.comment_count, g, a.avg_mos - g))
    eps = tuple(sorted((e for e in episodes if e.isp == isp), key=lambda e: e.first_window))
    period = (rows[0].window, rows[-1].window) if rows else None
    return OperatorReport(isp, tuple(rows), eps, period)


def write_report(report: OperatorReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")


GLOBAL_SERIES_FILE = "global_mos_series.csv"
SERIES_META_FILE = "series_meta.json"
GLOBAL_SERIES_COLUMNS = ("time_window", "global_mos", "period_mean")
DELTA_SERIES_COLUMNS = ("time_window", "delta_mos", "baseline", "threshold")


def delta_series_file(isp: str) -> str:
    return f"delta_mos_{isp}.csv"


def emit_plot_series(
    globals_: Sequence[GlobalPoint],
    deltas: Iterable[DeltaPoint],
    out_dir,
    *,
    isps: Sequence[str],
    threshold: float = DEFAULT_THRESHOLD,
) -> list[Path]:
    """Write one global MOS timeline and one delta timeline per ISP.

    The global file carries the whole-period mean as a reference column;
    delta files carry the zero baseline and the alert threshold so a
    plotting tool can draw both guide lines. The same annotations go to
    ``series_meta.json``, which survives even when a series is empty.
    Returns the series files (not the metadata file).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    mean = math.fsum(g.global_mos for g in globals_) / len(globals_) if globals_ else None
    path = out / GLOBAL_SERIES_FILE
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GLOBAL_SERIES_COLUMNS)
        for g in globals_:
            w.writerow([g.window.label(), repr(g.global_mos), repr(mean)])
    written.append(path)

    by_isp: dict[str, list[DeltaPoint]] = {isp: [] for isp in isps}
    for d in deltas:
        if d.isp not in by_isp:
            raise UnknownISPError(d.isp)
        by_isp[d.isp].append(d)
    for isp in isps:
        path = out / delta_series_file(isp)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(DELTA_SERIES_COLUMNS)
            for d in sorted(by_isp[isp], key=lambda d: d.window):
                w.writerow([d.window.label(), repr(d.delta), "0.0", repr(float(threshold))])
        written.append(path)

    meta = {
        "global_file": GLOBAL_SERIES_FILE,
        "delta_files": {isp: delta_series_file(isp) for isp in isps},
        "baseline": 0.0,
        "threshold": float(threshold),
        "period_mean": mean,
    }
    with open(out / SERIES_META_FILE, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    return written


def write_stats(stats: DatasetStats, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(stats.to_dict(), fh, indent=2)
        fh.write("\n")
