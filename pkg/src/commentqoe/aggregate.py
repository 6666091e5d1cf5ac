"""Windowed MOS aggregation, platform-wide MOS, per-ISP delta MOS and
threshold-based outage episodes."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Iterable, Mapping, Sequence

from commentqoe.simulate import EnrichedRecord, format_timestamp, parse_timestamp

DEFAULT_WIDTH = timedelta(minutes=5)
DEFAULT_THRESHOLD = -0.4

_EPOCH = datetime(1970, 1, 1)
_EPOCH_UTC = _EPOCH.replace(tzinfo=timezone.utc)


def _epoch_for(t: datetime) -> datetime:
    return _EPOCH if t.tzinfo is None else _EPOCH_UTC


class WindowMismatchError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class WindowKey:
    start: datetime
    width: timedelta = DEFAULT_WIDTH

    def __post_init__(self):
        if self.width <= timedelta(0):
            raise ValueError("window width must be positive")
        if (self.start - _epoch_for(self.start)) % self.width:
            raise ValueError(f"{self.start} is not aligned to a {self.width} grid")

    @property
    def end(self) -> datetime:
        return self.start + self.width

    def next(self) -> "WindowKey":
        return WindowKey(self.start + self.width, self.width)

    def label(self) -> str:
        return format_timestamp(self.start)


def floor_window(t: datetime, width: timedelta = DEFAULT_WIDTH) -> WindowKey:
    if width <= timedelta(0):
        raise ValueError("window width must be positive")
    epoch = _epoch_for(t)
    return WindowKey(epoch + ((t - epoch) // width) * width, width)


@dataclass(frozen=True)
class WindowAggregate:
    window: WindowKey
    isp: str
    avg_mos: float
    comment_count: int


@dataclass(frozen=True)
class GlobalPoint:
    window: WindowKey
    global_mos: float
    isp_count: int


@dataclass(frozen=True)
class DeltaPoint:
    window: WindowKey
    isp: str
    delta: float


@dataclass(frozen=True)
class AlertEpisode:
    isp: str
    first_window: WindowKey
    last_window: WindowKey
    min_delta: float
    threshold: float
    window_count: int

    def to_dict(self) -> dict:
        return {
            "isp": self.isp,
            "first_window": self.first_window.label(),
            "last_window": self.last_window.label(),
            "end": format_timestamp(self.last_window.end),
            "window_count": self.window_count,
            "min_delta": self.min_delta,
            "threshold": self.threshold,
        }


# Partial sums keyed by (window start, isp) hold exact integer totals, so
# shards can be merged before the single division per cell.
PartialSums = dict


def partial_sums(records: Iterable[EnrichedRecord], width: timedelta = DEFAULT_WIDTH) -> PartialSums:
    if width <= timedelta(0):
        raise ValueError("window width must be positive")
    cells: dict = defaultdict(lambda: [0, 0])
    for r in records:
        epoch = _epoch_for(r.timestamp)
        start = epoch + ((r.timestamp - epoch) // width) * width
        cell = cells[(start, r.isp)]
        cell[0] += r.mos
        cell[1] += 1
    return {"width": width, "cells": dict(cells)}


def merge_partials(*parts: PartialSums) -> PartialSums:
    widths = {p["width"] for p in parts}
    if len(widths) > 1:
        raise WindowMismatchError(f"cannot merge partial sums over widths {widths}")
    merged: dict = defaultdict(lambda: [0, 0])
    for p in parts:
        for key, (s, n) in p["cells"].items():
            merged[key][0] += s
            merged[key][1] += n
    return {"width": widths.pop() if widths else DEFAULT_WIDTH, "cells": dict(merged)}


def finalize(parts: PartialSums) -> list[WindowAggregate]:
    width = parts["width"]
    return [
        WindowAggregate(WindowKey(start, width), isp, total / count, count)
        for (start, isp), (total, count) in sorted(parts["cells"].items())
    ]


def aggregate(records: Iterable[EnrichedRecord], width: timedelta = DEFAULT_WIDTH) -> list[WindowAggregate]:
    """Mean MOS and comment count for every non-empty (window, ISP) cell,
    sorted by window start then ISP label."""
    return finalize(partial_sums(records, width))


def global_mos(aggs: Iterable[WindowAggregate]) -> list[GlobalPoint]:
    """Unweighted mean of the per-ISP averages present in each window.

    Every ISP counts once regardless of its comment volume; ISPs without
    comments in a window are left out of that window's divisor.
    """
    by_window: dict[WindowKey, dict[str, float]] = defaultdict(dict)
    for a in aggs:
        if a.isp in by_window[a.window]:
            raise ValueError(f"duplicate aggregate for {a.isp} at {a.window.label()}")
        by_window[a.window][a.isp] = a.avg_mos
    points = []
    for window in sorted(by_window):
        cell = by_window[window]
        values = [cell[isp] for isp in sorted(cell)]
        points.append(GlobalPoint(window, math.fsum(values) / len(values), len(values)))
    return points


def delta_mos(aggs: Iterable[WindowAggregate], globals_: Iterable[GlobalPoint]) -> list[DeltaPoint]:
    aggs = list(aggs)
    ref = {g.window: g.global_mos for g in globals_}
    agg_windows = {a.window for a in aggs}
    if agg_windows != set(ref):
        missing = sorted(w.label() for w in agg_windows ^ set(ref))
        raise WindowMismatchError(f"aggregate and global windows differ at {missing[:5]}")
    out = [DeltaPoint(a.window, a.isp, a.avg_mos - ref[a.window]) for a in aggs]
    out.sort(key=lambda d: (d.window, d.isp))
    return out


def detect_episodes(
    deltas: Iterable[DeltaPoint],
    threshold: float = DEFAULT_THRESHOLD,
    min_run: int = 1,
) -> list[AlertEpisode]:
    """Maximal runs of adjacent windows with ``delta < threshold`` per ISP.

    A window in which the ISP has no delta point breaks a run. Runs shorter
    than ``min_run`` windows are not reported.
    """
    if min_run < 1:
        raise ValueError("min_run must be >= 1")
    per_isp: dict[str, list[DeltaPoint]] = defaultdict(list)
    for d in deltas:
        per_isp[d.isp].append(d)

    episodes = []
    for isp in sorted(per_isp):
        run: list[DeltaPoint] = []
        for d in sorted(per_isp[isp], key=lambda d: d.window):
            adjacent = bool(run) and run[-1].window.end == d.window.start
            if d.delta < threshold:
                if run and not adjacent:
                    episodes.append(_episode(isp, run, threshold))
                    run = []
                run.append(d)
            elif run:
                episodes.append(_episode(isp, run, threshold))
                run = []
        if run:
            episodes.append(_episode(isp, run, threshold))
    return [e for e in episodes if e.window_count >= min_run]


def _episode(isp: str, run: Sequence[DeltaPoint], threshold: float) -> AlertEpisode:
    return AlertEpisode(isp, run[0].window, run[-1].window, min(d.delta for d in run),
                        threshold, len(run))


@dataclass(frozen=True)
class ObjectivePoint:
    window: WindowKey
    isp: str
    objective_mos: float


@dataclass(frozen=True)
class Discrepancy:
    window: WindowKey
    isp: str
    subjective_mos: float | None
    objective_mos: float | None

    @property
    def discrepancy(self) -> float | None:
        """Subjective minus objective; ``None`` marks a gap in either series."""
        if self.subjective_mos is None or self.objective_mos is None:
            return None
        return self.subjective_mos - self.objective_mos


def compare_objective(
    subjective: Iterable[WindowAggregate] | Mapping,
    objective: Iterable[ObjectivePoint],
) -> list[Discrepancy]:
    """Line up subjective window averages with an external objective MOS
    series on the same grid. Cells present in only one series are kept as
    gaps rather than zeros."""
    if isinstance(subjective, Mapping):
        subj = dict(subjective)
    else:
        subj = {(a.window, a.isp): a.avg_mos for a in subjective}
    obj = {(o.window, o.isp): o.objective_mos for o in objective}
    widths = {w.width for w, _ in subj} | {w.width for w, _ in obj}
    if len(widths) > 1:
        raise WindowMismatchError(f"series use different window widths: {sorted(widths)}")
    keys = sorted(set(subj) | set(obj), key=lambda k: (k[0], k[1]))
    return [Discrepancy(w, isp, subj.get((w, isp)), obj.get((w, isp))) for w, isp in keys]


# -- file formats -----------------------------------------------------------

AGGREGATE_COLUMNS = ("time_window", "isp", "comment_count", "avg_mos")
GLOBAL_COLUMNS = ("time_window", "global_mos", "isp_count")
DELTA_COLUMNS = ("time_window", "isp", "delta_mos")
DISCREPANCY_COLUMNS = ("time_window", "isp", "subjective_mos", "objective_mos", "discrepancy")


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def _write(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_aggregates(aggs: Iterable[WindowAggregate], path) -> None:
    _write(path, AGGREGATE_COLUMNS,
           ([a.window.label(), a.isp, a.comment_count, _fmt(a.avg_mos)] for a in aggs))


def read_aggregates(path, width: timedelta = DEFAULT_WIDTH) -> list[WindowAggregate]:
    return [WindowAggregate(WindowKey(parse_timestamp(r["time_window"]), width), r["isp"],
                            float(r["avg_mos"]), int(r["comment_count"])) for r in _read(path)]


def write_globals(points: Iterable[GlobalPoint], path) -> None:
    _write(path, GLOBAL_COLUMNS, ([g.window.label(), _fmt(g.global_mos), g.isp_count] for g in points))


def read_globals(path, width: timedelta = DEFAULT_WIDTH) -> list[GlobalPoint]:
    return [GlobalPoint(WindowKey(parse_timestamp(r["time_window"]), width),
                        float(r["global_mos"]), int(r["isp_count"])) for r in _read(path)]


def write_deltas(points: Iterable[DeltaPoint], path) -> None:
    _write(path, DELTA_COLUMNS, ([d.window.label(), d.isp, _fmt(d.delta)] for d in points))


def read_deltas(path, width: timedelta = DEFAULT_WIDTH) -> list[DeltaPoint]:
    return [DeltaPoint(WindowKey(parse_timestamp(r["time_window"]), width), r["isp"],
                       float(r["delta_mos"])) for r in _read(path)]


def read_objective(path, width: timedelta = DEFAULT_WIDTH) -> list[ObjectivePoint]:
    rows = _read(path)
    if rows and "objective_mos" not in rows[0]:
        raise ValueError(f"{path}: missing objective_mos column")
    return [ObjectivePoint(WindowKey(parse_timestamp(r["time_window"]), width), r["isp"],
                           float(r["objective_mos"])) for r in rows]


def write_discrepancies(items: Iterable[Discrepancy], path) -> None:
    _write(path, DISCREPANCY_COLUMNS,
           ([d.window.label(), d.isp, _fmt(d.subjective_mos), _fmt(d.objective_mos),
             _fmt(d.discrepancy)] for d in items))


def write_episodes(episodes: Iterable[AlertEpisode], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([e.to_dict() for e in episodes], fh, indent=2)
        fh.write("\n")


def read_episodes(path, width: timedelta = DEFAULT_WIDTH) -> list[AlertEpisode]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return [AlertEpisode(e["isp"], WindowKey(parse_timestamp(e["first_window"]), width),
                         WindowKey(parse_timestamp(e["last_window"]), width),
                         float(e["min_delta"]), float(e["threshold"]), int(e["window_count"]))
            for e in raw]
