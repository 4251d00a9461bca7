"""Citation-record parsing, deduplication, year filtering and geocoding.

Input is the tagged plain-text export format: every field line starts with a
two-letter tag, continuation lines are indented, a record ends with ``ER`` and
the file ends with ``EF``.
"""
from __future__ import annotations

import csv
import datetime
import io
import json
import logging
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

from .errors import EmptyInput, InvalidWindow, MalformedRecord

logger = logging.getLogger(__name__)

UNRESOLVED = "UNRESOLVED"

_TAG_LINE = re.compile(r"^([A-Z][A-Z0-9])(?: (.*))?$")
_HEADER_TAGS = {"FN", "VR"}
# list-valued tags whose values are separated by semicolons
_SEMICOLON_TAGS = {"WC": "wos_categories", "SC": "research_areas"}
_NON_ALNUM = re.compile(r"[^0-9a-z]+")
_AUTHOR_PREFIX = re.compile(r"^\s*\[[^\]]*\]")


@dataclass(frozen=True)
class CitationRecord:
    record_id: str
    title: str
    year: int
    abstract: str = ""
    addresses: tuple[str, ...] = ()
    wos_categories: tuple[str, ...] = ()
    research_areas: tuple[str, ...] = ()
    doi: Optional[str] = None
    url: Optional[str] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("addresses", "wos_categories", "research_areas"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CitationRecord":
        return cls(
            record_id=d["record_id"],
            title=d["title"],
            year=int(d["year"]),
            abstract=d.get("abstract", ""),
            addresses=tuple(d.get("addresses", ())),
            wos_categories=tuple(d.get("wos_categories", ())),
            research_areas=tuple(d.get("research_areas", ())),
            doi=d.get("doi"),
            url=d.get("url"),
        )


@dataclass(frozen=True)
class Corpus:
    records: tuple[CitationRecord, ...]
    source_label: str = ""
    # parse-time diagnostics; not part of record equality
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def with_records(self, records: Iterable[CitationRecord]) -> "Corpus":
        return replace(self, records=tuple(records))


@dataclass(frozen=True)
class DedupReport:
    kept: int
    removed: int
    removed_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class GeoPoint:
    country: str
    latitude: Optional[float] = None
    longitude: Optional[float] = None
    resolved: bool = False

    def __post_init__(self):
        if not self.resolved and (self.country != UNRESOLVED or self.latitude is not None
                                  or self.longitude is not None):
            raise ValueError("unresolved GeoPoint must carry the sentinel and no coordinates")
        if self.resolved:
            if not -90.0 <= self.latitude <= 90.0 or not -180.0 <= self.longitude <= 180.0:
                raise ValueError(f"coordinates out of range: {self.latitude}, {self.longitude}")


UNRESOLVED_POINT = GeoPoint(UNRESOLVED)


# ---------------------------------------------------------------------------
# parsing


def _current_year() -> int:
    return datetime.date.today().year


def _finish_record(fields: dict[str, list[str]], position: int, seen_ids: dict[str, int],
                   warnings: list[str], source_line: int) -> Optional[CitationRecord]:
    def joined(tag):
        return " ".join(" ".join(fields.get(tag, [])).split())

    title = joined("TI")
    rid = joined("UT") or f"rec-{position}"
    if rid in seen_ids:
        seen_ids[rid] += 1
        new_rid = f"{rid}#{seen_ids[rid]}"
        warnings.append(f"record at line {source_line}: repeated id {rid!r} renamed {new_rid!r}")
        rid = new_rid
    else:
        seen_ids[rid] = 1

    if not title:
        warnings.append(f"record {rid!r} (line {source_line}): missing title, excluded")
        return None
    py = joined("PY")
    try:
        year = int(py)
    except ValueError:
        warnings.append(f"record {rid!r} (line {source_line}): unparseable PY {py!r}, excluded")
        return None
    if not 1900 < year <= _current_year():
        warnings.append(f"record {rid!r} (line {source_line}): PY {year} out of range, excluded")
        return None

    lists = {}
    for tag, name in _SEMICOLON_TAGS.items():
        raw = joined(tag)
        lists[name] = tuple(p.strip() for p in raw.split(";") if p.strip())
    return CitationRecord(
        record_id=rid,
        title=title,
        year=year,
        abstract=joined("AB"),
        # one address per physical line, as exported
        addresses=tuple(" ".join(a.split()) for a in fields.get("C1", []) if a.strip()),
        doi=joined("DI") or None,
        url=joined("UR") or None,
        **lists,
    )


def parse_wos_plaintext(text: str, source_label: str = "") -> Corpus:
    """Parse a tagged plain-text export into a Corpus.

    Records with a missing title or an unusable ``PY`` are excluded and
    reported in ``Corpus.warnings``; structural problems raise
    :class:`MalformedRecord`.
    """
    if not text or not text.strip():
        raise EmptyInput("export text is empty")

    warnings: list[str] = []
    records: list[CitationRecord] = []
    seen_ids: dict[str, int] = {}
    fields: Optional[dict[str, list[str]]] = None
    current_tag: Optional[str] = None
    record_start = 0
    n_blocks = 0
    terminated = False

    lines = text.splitlines()
    for i, line in enumerate(lines, start=1):
        if terminated:
            if line.strip():
                warnings.append(f"ignored text after EF starting at line {i}")
                break
            continue
        if not line.strip():
            continue
        line = line.lstrip("﻿")
        if line.startswith("  "):
            if fields is None or current_tag is None:
                raise MalformedRecord("continuation line outside a record", i)
            value = line.strip()
            if current_tag == "C1":
                fields["C1"].append(value)
            else:
                fields[current_tag][-1] += " " + value
            continue
        m = _TAG_LINE.match(line.rstrip())
        if m is None:
            raise MalformedRecord(f"expected a tag line, got {line[:40]!r}", i)
        tag, value = m.group(1), (m.group(2) or "").strip()

        if tag == "EF":
            if fields is not None:
                raise MalformedRecord("end of file inside a record (missing ER)", i)
            terminated = True
            continue
        if tag == "ER":
            if fields is None:
                raise MalformedRecord("ER without an open record", i)
            n_blocks += 1
            rec = _finish_record(fields, n_blocks, seen_ids, warnings, record_start)
            if rec is not None:
                records.append(rec)
            fields, current_tag = None, None
            continue
        if fields is None:
            if tag in _HEADER_TAGS and n_blocks == 0:
                continue
            if tag != "PT":
                raise MalformedRecord(f"tag {tag} before any record start", i)
            fields, record_start = {}, i
        elif tag == "PT":
            raise MalformedRecord("new record started before ER", i)
        fields.setdefault(tag, []).append(value)
        current_tag = tag

    if fields is not None:
        raise MalformedRecord("input ended inside a record (missing ER)", len(lines))
    if not terminated:
        warnings.append("missing EF terminator")
    if n_blocks == 0:
        raise EmptyInput("no records found")
    for w in warnings:
        logger.warning(w)
    return Corpus(tuple(records), source_label, tuple(warnings))


def read_wos_file(path, source_label: Optional[str] = None) -> Corpus:
    path = Path(path)
    text = path.read_text(encoding="utf-8-sig")
    return parse_wos_plaintext(text, source_label if source_label is not None else path.stem)


def _wrap(tag: str, value: str) -> list[str]:
    return [f"{tag} {value}"]


def to_wos_plaintext(corpus: Corpus) -> str:
    """Emit a Corpus in the tagged export format (inverse of the parser)."""
    out = ["FN Clarivate Analytics Web of Science", "VR 1.0"]
    for r in corpus.records:
        out.append("PT J")
        out += _wrap("TI", r.title)
        if r.addresses:
            out.append(f"C1 {r.addresses[0]}")
            out += [f"   {a}" for a in r.addresses[1:]]
        if r.abstract:
            out += _wrap("AB", r.abstract)
        if r.wos_categories:
            out += _wrap("WC", "; ".join(r.wos_categories))
        if r.research_areas:
            out += _wrap("SC", "; ".join(r.research_areas))
        out.append(f"PY {r.year}")
        if r.doi:
            out += _wrap("DI", r.doi)
        if r.url:
            out += _wrap("UR", r.url)
        out.append(f"UT {r.record_id}")
        out.append("ER")
        out.append("")
    out.append("EF")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# dedup and filtering


def normalize_title(title: str) -> str:
    return " ".join(_NON_ALNUM.sub(" ", title.lower()).split())


def _doi_key(doi: Optional[str]) -> Optional[str]:
    if not doi:
        return None
    return doi.strip().lower()


def deduplicate(corpus: Corpus) -> tuple[Corpus, DedupReport]:
    """Collapse duplicate records onto their first occurrence.

    Two records are duplicates when both carry a DOI and the DOIs agree
    (case-insensitive), or when normalized title and year agree.
    """
    dois: set[str] = set()
    title_years: set[tuple[str, int]] = set()
    kept, removed = [], []
    for r in corpus.records:
        doi = _doi_key(r.doi)
        ty = (normalize_title(r.title), r.year)
        if (doi is not None and doi in dois) or ty in title_years:
            removed.append(r.record_id)
            continue
        kept.append(r)
        if doi is not None:
            dois.add(doi)
        title_years.add(ty)
    report = DedupReport(len(kept), len(removed), tuple(removed))
    return corpus.with_records(kept), report


def filter_year_window(corpus: Corpus, min_year: int, max_year: int) -> Corpus:
    if min_year > max_year:
        raise InvalidWindow(f"min_year {min_year} > max_year {max_year}")
    return corpus.with_records(r for r in corpus.records if min_year <= r.year <= max_year)


# ---------------------------------------------------------------------------
# serialization


def write_jsonl(corpus: Corpus, fh) -> None:
    for r in corpus.records:
        fh.write(json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def read_jsonl(fh, source_label: str = "") -> Corpus:
    records = [CitationRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
    return Corpus(tuple(records), source_label)


CSV_COLUMNS = ["record_id", "title", "year", "abstract", "addresses", "wos_categories",
               "research_areas", "doi", "url"]


def write_csv(corpus: Corpus, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in corpus.records:
        w.writerow([r.record_id, r.title, r.year, r.abstract, "; ".join(r.addresses),
                    "; ".join(r.wos_categories), "; ".join(r.research_areas),
                    r.doi or "", r.url or ""])


def corpus_to_csv(corpus: Corpus) -> str:
    buf = io.StringIO()
    write_csv(corpus, buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# geocoding


def _toponym_tokens(text: str) -> list[str]:
    return _NON_ALNUM.sub(" ", text.lower()).split()


@dataclass(frozen=True)
class Gazetteer:
    """Read-only toponym index. Keys are normalized token tuples."""

    entries: dict

    def __post_init__(self):
        object.__setattr__(self, "_max_tokens", max((len(k) for k in self.entries), default=0))

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[str, str, float, float]]) -> "Gazetteer":
        entries = {}
        for toponym, country, lat, lon in rows:
            key = tuple(_toponym_tokens(toponym))
            if not key:
                raise ValueError(f"empty toponym for country {country!r}")
            entries[key] = (country, float(lat), float(lon))
        return cls(entries)

    @classmethod
    def load(cls, path) -> "Gazetteer":
        rows = []
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, start=1):
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 4:
                    raise ValueError(f"{path}:{n}: expected 4 tab-separated fields, got {len(parts)}")
                rows.append((parts[0], parts[1].strip(), float(parts[2]), float(parts[3])))
        return cls.from_rows(rows)

    def __len__(self):
        return len(self.entries)

    @property
    def countries(self) -> set[str]:
        return {c for c, _, _ in self.entries.values()}

    def lookup(self, toponym: str):
        return self.entries.get(tuple(_toponym_tokens(toponym)))

    def match(self, text: str):
        """Longest toponym in ``text``; scans right to left, ties go to the rightmost."""
        tokens = _toponym_tokens(text)
        best = None
        best_len = 0
        for end in range(len(tokens), 0, -1):
            for n in range(min(self._max_tokens, end), best_len, -1):
                hit = self.entries.get(tuple(tokens[end - n:end]))
                if hit is not None:
                    best, best_len = hit, n
                    break
        return best


def load_gazetteer(path) -> Gazetteer:
    return Gazetteer.load(path)


def geocode_record(record: CitationRecord, gazetteer: Gazetteer) -> GeoPoint:
    if not len(gazetteer):
        raise ValueError("gazetteer is empty")
    if not record.addresses:
        return UNRESOLVED_POINT
    # drop the "[Author A; Author B]" prefix so author names never match toponyms
    hit = gazetteer.match(_AUTHOR_PREFIX.sub("", record.addresses[0]))
    if hit is None:
        return UNRESOLVED_POINT
    country, lat, lon = hit
    return GeoPoint(country, lat, lon, True)
