"""Simulated ISP labels, synthetic timestamps and outage injection."""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from datetime import datetime, timedelta
from itertools import accumulate, repeat
from pathlib import Path
from typing import Iterable, Sequence

from commentqoe.scoring import NOT_RELEVANT, ScoredComment

DEFAULT_BASE_TIME = datetime(2024, 1, 1, 12, 0, 0)
ENRICHED_COLUMNS = ("isp", "timestamp", "original_comment", "mos")

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 generator (Steele, Lea & Flood 2014).

    Chosen because it is tiny and trivially portable: every implementation
    with 64-bit wrapping arithmetic reproduces the same stream for a seed.
    """

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, k: int) -> int:
        """Uniform integer in [0, k) by rejection sampling, then modulo."""
        limit = (1 << 64) - ((1 << 64) % k)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % k


@dataclass(frozen=True)
class SimulationConfig:
    isps: tuple = ("ISP1", "ISP2", "ISP3")
    seed: int = 0
    base_time: datetime = DEFAULT_BASE_TIME
    step: timedelta = timedelta(seconds=3)

    def __post_init__(self):
        object.__setattr__(self, "isps", tuple(self.isps))
        if not self.isps:
            raise ValueError("at least one ISP label is required")
        if len(set(self.isps)) != len(self.isps):
            raise ValueError("ISP labels must be unique")
        if self.step <= timedelta(0):
            raise ValueError("step must be positive")


@dataclass(frozen=True)
class EnrichedRecord:
    isp: str
    timestamp: datetime
    original_comment: str
    mos: int

    def __post_init__(self):
        if not 1 <= self.mos <= 5:
            raise ValueError(f"enriched mos must lie in [1, 5], got {self.mos}")


@dataclass(frozen=True)
class OutageSpec:
    target_isp: str
    start: datetime
    end: datetime
    forced_mos: int = 1

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError("outage start must precede end")
        if not 1 <= self.forced_mos <= 5:
            raise ValueError("forced_mos must lie in [1, 5]")

    def covers(self, rec: EnrichedRecord) -> bool:
        # closed interval on both ends
        return rec.isp == self.target_isp and self.start <= rec.timestamp <= self.end


def drop_invalid(scored: Iterable[ScoredComment]) -> list[ScoredComment]:
    return [s for s in scored if s.comment_mos != NOT_RELEVANT]


def assign_isps(n: int, cfg: SimulationConfig) -> list[str]:
    """Draw ``n`` ISP labels uniformly and independently.

    Label ``i`` is ``cfg.isps[g.below(len(cfg.isps))]`` for the i-th draw of
    a :class:`SplitMix64` seeded with ``cfg.seed``.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = SplitMix64(cfg.seed)
    k = len(cfg.isps)
    return [cfg.isps[rng.below(k)] for _ in range(n)]


def gen_timestamps(n: int, cfg: SimulationConfig) -> list[datetime]:
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return []
    # datetime arithmetic is exact integer microseconds, so the running sum
    # equals base_time + i * step for every i
    return list(accumulate(repeat(cfg.step, n - 1), initial=cfg.base_time))


def enrich(scored: Iterable[ScoredComment], cfg: SimulationConfig) -> list[EnrichedRecord]:
    """Drop -1 records, then label and timestamp the survivors in order."""
    valid = drop_invalid(scored)
    isps = assign_isps(len(valid), cfg)
    stamps = gen_timestamps(len(valid), cfg)
    return [EnrichedRecord(isp, ts, s.original_comment, s.comment_mos)
            for s, isp, ts in zip(valid, isps, stamps)]


def inject_outage(records: Sequence[EnrichedRecord], spec: OutageSpec) -> list[EnrichedRecord]:
    return [dataclasses.replace(r, mos=spec.forced_mos) if spec.covers(r) else r for r in records]


def format_timestamp(ts: datetime) -> str:
    return ts.isoformat(timespec="seconds")


def parse_timestamp(text: str) -> datetime:
    return datetime.fromisoformat(text.strip())


def write_enriched(records: Iterable[EnrichedRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ENRICHED_COLUMNS)
        for r in records:
            w.writerow([r.isp, format_timestamp(r.timestamp), r.original_comment, r.mos])


def read_enriched(path: str | Path) -> list[EnrichedRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            mos = float(row["mos"])
            if not mos.is_integer() or not 1 <= mos <= 5:
                raise ValueError(f"{path}:{lineno}: mos {row['mos']!r} not an integer in [1, 5]")
            out.append(EnrichedRecord(row["isp"], parse_timestamp(row["timestamp"]),
                                      row.get("original_comment") or "", int(mos)))
    return out
