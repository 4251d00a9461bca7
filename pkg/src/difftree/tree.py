"""Evolution trees: discipline-direction, knowledge-evolution and factor trees.

All three share one shape: root -> branches -> twigs -> leaves, where a leaf
is either one citation (size 1) or an aggregated count.
"""
from __future__ import annotations

import csv
import enum
import json
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

from .diffusion import StageTimeline
from .errors import MissingProfile, UncoveredYear


class TreeKind(enum.Enum):
    DISCIPLINE_DIRECTION = "DisciplineDirection"
    KNOWLEDGE_EVOLUTION = "KnowledgeEvolution"
    FACTOR = "Factor"


class IncomeType(enum.IntEnum):
    HIGH = 0
    UPPER_MIDDLE = 1
    LOWER_MIDDLE = 2
    LOW = 3

    @property
    def label(self) -> str:
        return {0: "High", 1: "UpperMiddle", 2: "LowerMiddle", 3: "Low"}[int(self)]

    @classmethod
    def parse(cls, text: str) -> "IncomeType":
        key = text.strip().lower().replace("-", "").replace("_", "").replace(" ", "")
        for member in cls:
            if member.label.lower() == key:
                return member
        raise ValueError(f"unknown income type {text!r}")


@dataclass(frozen=True)
class Leaf:
    id: str
    size: int = 1

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"leaf {self.id!r} has size {self.size}")


@dataclass(frozen=True)
class Twig:
    label: str
    leaves: tuple[Leaf, ...] = ()

    @property
    def total(self) -> int:
        return sum(leaf.size for leaf in self.leaves)


@dataclass(frozen=True)
class Branch:
    label: str
    order_key: int
    twigs: tuple[Twig, ...] = ()

    def __post_init__(self):
        labels = [t.label for t in self.twigs]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate twig labels in branch {self.label!r}")

    @property
    def total(self) -> int:
        return sum(t.total for t in self.twigs)


@dataclass(frozen=True)
class EvolutionTree:
    root_label: str
    kind: TreeKind
    branches: tuple[Branch, ...] = ()

    def __post_init__(self):
        labels = [b.label for b in self.branches]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate branch labels")

    @property
    def total(self) -> int:
        return sum(b.total for b in self.branches)

    def branch(self, label: str) -> Branch:
        for b in self.branches:
            if b.label == label:
                return b
        raise KeyError(label)

    def counts(self) -> dict:
        n_twigs = sum(len(b.twigs) for b in self.branches)
        n_leaves = sum(len(t.leaves) for b in self.branches for t in b.twigs)
        return {"branches": len(self.branches), "twigs": n_twigs, "leaves": n_leaves,
                "total_size": self.total}


@dataclass(frozen=True)
class EconomyProfile:
    country: str
    income_type: IncomeType
    se_share: float

    def __post_init__(self):
        if not 0.0 <= self.se_share <= 1.0:
            raise ValueError(f"se_share {self.se_share} outside [0, 1] for {self.country!r}")

    @property
    def dev_stage(self) -> int:
        return development_stage(self.se_share)


def development_stage(se_share: float) -> int:
    """1 below 1% of global S&E output, 2 for 1%-3% inclusive, 3 above 3%."""
    if se_share < 0.01:
        return 1
    if se_share <= 0.03:
        return 2
    return 3


def load_profiles(path) -> list[EconomyProfile]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [line for line in fh if line.strip() and not line.startswith("#")]
    out = []
    for row in csv.DictReader(rows):
        out.append(EconomyProfile(row["country"].strip(), IncomeType.parse(row["income_type"]),
                                  float(row["se_share"])))
    return out


def _emergence_order(first_year: Mapping[str, int], order: Optional[Sequence[str]]) -> list[str]:
    # ties on year go to the supplied order (e.g. the taxonomy), then to the label
    rank = {label: i for i, label in enumerate(order or ())}
    return sorted(first_year, key=lambda b: (first_year[b], rank.get(b, len(rank)), b))


def build_discipline_direction_tree(labeled: Iterable[tuple[str, str, str, int]],
                                    period: tuple[int, int],
                                    discipline_order: Optional[Sequence[str]] = None,
                                    first_years: Optional[Mapping[str, int]] = None) -> EvolutionTree:
    """Disciplines as branches, directions as twigs, one leaf per citation.

    Branches are ordered by the year each discipline first appears. Pass
    ``first_years`` to order by emergence over the whole corpus rather than
    inside ``period``.
    """
    lo, hi = period
    if lo > hi:
        raise ValueError(f"invalid period {period}")
    rows = [r for r in labeled if lo <= r[3] <= hi]
    emerged: dict[str, int] = {}
    grouped: dict[str, dict[str, list[str]]] = defaultdict(lambda: defaultdict(list))
    for doc_id, direction, discipline, year in sorted(rows, key=lambda r: (r[3], r[0])):
        emerged.setdefault(discipline, year)
        grouped[discipline][direction].append(doc_id)
    if first_years is not None:
        emerged = {d: first_years.get(d, y) for d, y in emerged.items()}
    branches = []
    for discipline in _emergence_order(emerged, discipline_order):
        twigs = tuple(Twig(direction, tuple(Leaf(doc_id) for doc_id in docs))
                      for direction, docs in sorted(grouped[discipline].items()))
        branches.append(Branch(discipline, emerged[discipline], twigs))
    root = f"{lo}-{hi}" if lo != hi else str(lo)
    return EvolutionTree(root, TreeKind.DISCIPLINE_DIRECTION, tuple(branches))


def build_period_tree(labeled: Iterable[tuple[str, str, str, int]],
                      periods: Sequence[tuple[str, int, int]],
                      discipline_order: Optional[Sequence[str]] = None,
                      root_label: str = "periods",
                      kind: TreeKind = TreeKind.KNOWLEDGE_EVOLUTION) -> EvolutionTree:
    """Disciplines as branches, named year periods as twigs, direction counts as leaves.

    ``periods`` is a list of (label, first_year, last_year). Every citation
    year must fall inside some period.
    """
    def period_of(year):
        for label, lo, hi in periods:
            if lo <= year <= hi:
                return label
        raise UncoveredYear(f"year {year} is not covered by any period")

    return _staged_tree(labeled, period_of, [p[0] for p in periods], discipline_order, root_label, kind)


def _staged_tree(labeled, stage_of, stage_labels, discipline_order, root_label, kind):
    counts: Counter = Counter()
    emerged: dict[str, int] = {}
    for _, direction, discipline, year in labeled:
        counts[discipline, stage_of(year), direction] += 1
        emerged[discipline] = min(year, emerged.get(discipline, year))
    branches = []
    for discipline in _emergence_order(emerged, discipline_order):
        twigs = []
        for stage in stage_labels:
            leaves = tuple(Leaf(direction, n) for (disc, st, direction), n in sorted(counts.items())
                           if disc == discipline and st == stage)
            twigs.append(Twig(stage, leaves))
        branches.append(Branch(discipline, emerged[discipline], tuple(twigs)))
    return EvolutionTree(root_label, kind, tuple(branches))


def build_knowledge_evolution_tree(labeled: Iterable[tuple[str, str, str, int]],
                                   timeline: StageTimeline,
                                   discipline_order: Optional[Sequence[str]] = None,
                                   root_label: str = "knowledge evolution") -> EvolutionTree:
    """Disciplines as branches, diffusion stages as twigs, directions as sized leaves."""
    def stage_of(year):
        try:
            return timeline.stages[year].label
        except KeyError:
            raise UncoveredYear(f"year {year} is not covered by the stage timeline") from None

    present = sorted(set(timeline.stages.values()))
    return _staged_tree(labeled, stage_of, [s.label for s in present], discipline_order,
                        root_label, TreeKind.KNOWLEDGE_EVOLUTION)


def build_factor_tree(citations_by_country: Mapping[str, int], profiles: Iterable[EconomyProfile],
                      root_label: str = "economies") -> EvolutionTree:
    """Income types as branches (High to Low), development stages as twigs, economies as leaves."""
    by_country = {p.country: p for p in profiles}
    grouped: dict[IncomeType, dict[int, list[Leaf]]] = defaultdict(lambda: defaultdict(list))
    for country, n in sorted(citations_by_country.items()):
        if n <= 0:
            continue
        profile = by_country.get(country)
        if profile is None:
            raise MissingProfile(country)
        grouped[profile.income_type][profile.dev_stage].append(Leaf(country, int(n)))
    branches = []
    for income in sorted(grouped):
        twigs = tuple(Twig(str(stage), tuple(grouped[income][stage])) for stage in sorted(grouped[income]))
        branches.append(Branch(income.label, int(income), twigs))
    return EvolutionTree(root_label, TreeKind.FACTOR, tuple(branches))


# ---------------------------------------------------------------------------
# serialization


def tree_to_dict(tree: EvolutionTree) -> dict:
    return {
        "root": tree.root_label,
        "kind": tree.kind.value,
        "branches": [
            {"label": b.label, "order_key": b.order_key,
             "twigs": [{"label": t.label, "leaves": [{"id": leaf.id, "size": leaf.size} for leaf in t.leaves]}
                       for t in b.twigs]}
            for b in tree.branches
        ],
    }


def tree_from_dict(d: dict) -> EvolutionTree:
    return EvolutionTree(
        d["root"], TreeKind(d["kind"]),
        tuple(Branch(b["label"], int(b["order_key"]),
                     tuple(Twig(t["label"], tuple(Leaf(leaf["id"], int(leaf["size"])) for leaf in t["leaves"]))
                           for t in b["twigs"]))
              for b in d["branches"]))


def _dot_quote(text: str) -> str:
    return '"' + str(text).replace("\\", "\\\\").replace('"', '\\"') + '"'


def tree_to_dot(tree: EvolutionTree, max_leaf_width: float = 1.5) -> str:
    """Graphviz DOT; leaf circles have width proportional to leaf size."""
    biggest = max((leaf.size for b in tree.branches for t in b.twigs for leaf in t.leaves), default=1)
    scale = max_leaf_width / biggest
    lines = [f"digraph {_dot_quote(tree.kind.value)} {{", "  rankdir=BT;",
             f"  n0 [label={_dot_quote(tree.root_label)}, shape=box];"]
    edges = []
    counter = 1
    for b in tree.branches:
        bid = f"n{counter}"
        counter += 1
        lines.append(f"  {bid} [label={_dot_quote(b.label)}, shape=box];")
        edges.append(f"  n0 -> {bid};")
        for t in b.twigs:
            tid = f"n{counter}"
            counter += 1
            lines.append(f"  {tid} [label={_dot_quote(t.label)}, shape=ellipse];")
            edges.append(f"  {bid} -> {tid};")
            for leaf in t.leaves:
                lid = f"n{counter}"
                counter += 1
                lines.append(f"  {lid} [label={_dot_quote(leaf.id)}, tooltip=\"{leaf.size}\", "
                             f"shape=circle, fixedsize=true, width={leaf.size * scale:.6g}];")
                edges.append(f"  {tid} -> {lid};")
    return "\n".join(lines + edges + ["}"]) + "\n"


def serialize_tree(tree: EvolutionTree, format: str = "JSON") -> str:
    fmt = format.upper()
    if fmt == "DOT":
        return tree_to_dot(tree)
    if fmt == "JSON":
        return json.dumps(tree_to_dict(tree), indent=2, ensure_ascii=False) + "\n"
    raise ValueError(f"unknown tree format {format!r}")


def parse_tree_json(text: str) -> EvolutionTree:
    return tree_from_dict(json.loads(text))
