"""Per-direction yearly diffusion rates, stage timelines and decay patterns."""
from __future__ import annotations

import csv
import enum
import io
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import MismatchedYearRanges, TooFewPeriods

logger = logging.getLogger(__name__)


class Stage(enum.IntEnum):
    BUDDING = 0
    GROWING = 1
    MATURE = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def from_label(cls, label: str) -> "Stage":
        return cls[label.upper()]


@dataclass(frozen=True)
class DiffusionSeries:
    direction: str
    counts: dict  # year -> new citations

    def __post_init__(self):
        if any(c < 0 for c in self.counts.values()):
            raise ValueError(f"negative count in series {self.direction!r}")

    @property
    def years(self) -> tuple[int, ...]:
        return tuple(sorted(self.counts))

    @property
    def first_year(self) -> Optional[int]:
        return next((y for y in self.years if self.counts[y] >= 1), None)

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass(frozen=True)
class StageTimeline:
    stages: dict  # year -> Stage
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def years(self) -> tuple[int, ...]:
        return tuple(sorted(self.stages))

    @property
    def boundaries(self) -> dict:
        """First year labelled with each stage that occurs."""
        out = {}
        for y in self.years:
            out.setdefault(self.stages[y], y)
        return out

    def years_in(self, stage: Stage) -> list[int]:
        return [y for y in self.years if self.stages[y] == stage]

    def blocks(self) -> list[tuple[Stage, int, int]]:
        """Maximal runs of consecutive years sharing a stage."""
        out = []
        for y in self.years:
            s = self.stages[y]
            if out and out[-1][0] == s and out[-1][2] == y - 1:
                out[-1] = (s, out[-1][1], y)
            else:
                out.append((s, y, y))
        return out


@dataclass(frozen=True)
class PatternFlags:
    senescence_at: tuple[tuple[str, int], ...] = ()
    moth_decay_at: tuple[tuple[str, tuple[int, int, int]], ...] = ()

    def __bool__(self):
        return bool(self.senescence_at or self.moth_decay_at)


def compute_diffusion_series(labeled: Iterable[tuple[str, str, int]],
                             year_range: tuple[int, int]) -> list[DiffusionSeries]:
    """Tally (doc_id, direction, year) rows into one series per direction.

    Rows outside ``year_range`` are ignored. Series come back sorted by
    direction label.
    """
    lo, hi = year_range
    if lo > hi:
        raise ValueError(f"invalid year range {year_range}")
    tally: Counter = Counter()
    directions = set()
    for _, direction, year in labeled:
        directions.add(direction)
        if lo <= year <= hi:
            tally[direction, year] += 1
    return [DiffusionSeries(d, {y: tally[d, y] for y in range(lo, hi + 1)})
            for d in sorted(directions)]


def classify_stage_timeline(all_series: Sequence[DiffusionSeries], threshold: float = 3) -> StageTimeline:
    """Label each year Budding, Growing or Mature.

    Budding: every direction's rate is at most ``threshold``. Otherwise the
    year is Growing when some direction has its first citation that year,
    Mature when none does.
    """
    if not all_series:
        return StageTimeline({})
    years = all_series[0].years
    for s in all_series[1:]:
        if s.years != years:
            raise MismatchedYearRanges(
                f"series {s.direction!r} spans {s.years[:1]}..{s.years[-1:]}, expected {years[0]}..{years[-1]}")
    firsts = {s.first_year for s in all_series}
    stages = {}
    for y in years:
        if all(s.counts[y] <= threshold for s in all_series):
            stages[y] = Stage.BUDDING
        elif y in firsts:
            stages[y] = Stage.GROWING
        else:
            stages[y] = Stage.MATURE
    warnings = []
    peak = Stage.BUDDING
    for y in years:
        if stages[y] < peak:
            warnings.append(f"{y}: {stages[y].label} after {peak.label} (non-monotone progression)")
        peak = max(peak, stages[y])
    for w in warnings:
        logger.warning(w)
    return StageTimeline(stages, tuple(warnings))


def detect_decay_patterns(period_counts: Iterable[tuple[str, Sequence[float]]]) -> PatternFlags:
    """Flag senescence (a drop from the previous period) and moth decay.

    Periods are numbered from 1. Moth decay at (p-1, p, p+1) means the count
    rose into p-1, fell into p and rose again into p+1; every comparison is
    strict, so plateaus never count.
    """
    senescence, moth = [], []
    for label, counts in period_counts:
        c = list(counts)
        if len(c) < 2:
            raise TooFewPeriods(f"branch {label!r} has {len(c)} period(s); need at least 2")
        for p in range(2, len(c) + 1):
            if c[p - 1] < c[p - 2]:
                senescence.append((label, p))
        for p in range(3, len(c)):
            # 1-based p: rise into p-1, fall into p, rise into p+1
            if c[p - 3] < c[p - 2] > c[p - 1] < c[p]:
                moth.append((label, (p - 1, p, p + 1)))
    return PatternFlags(tuple(senescence), tuple(moth))


# ---------------------------------------------------------------------------
# CSV emission


def series_to_csv(all_series: Sequence[DiffusionSeries]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["direction", "year", "count"])
    for s in all_series:
        for y in s.years:
            w.writerow([s.direction, y, s.counts[y]])
    return buf.getvalue()


def series_from_csv(text: str) -> list[DiffusionSeries]:
    counts: dict[str, dict] = {}
    for row in csv.DictReader(io.StringIO(text)):
        counts.setdefault(row["direction"], {})[int(row["year"])] = int(row["count"])
    return [DiffusionSeries(d, c) for d, c in counts.items()]


def timeline_to_csv(timeline: StageTimeline) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["year", "stage"])
    for y in timeline.years:
        w.writerow([y, timeline.stages[y].label])
    return buf.getvalue()


def timeline_from_csv(text: str) -> StageTimeline:
    return StageTimeline({int(r["year"]): Stage.from_label(r["stage"])
                          for r in csv.DictReader(io.StringIO(text))})

