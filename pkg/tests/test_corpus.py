import io

import pytest
from hypothesis import given
from hypothesis import strategies as st

from difftree.corpus import (UNRESOLVED_POINT, CitationRecord, Corpus, Gazetteer, GeoPoint, corpus_to_csv,
                             deduplicate, filter_year_window, geocode_record, normalize_title,
                             parse_wos_plaintext, read_jsonl, to_wos_plaintext, write_jsonl)
from difftree.errors import EmptyInput, InvalidWindow, MalformedRecord
from conftest import DATA
from helpers import brute_force_dedup, random_records
from wos_cases import CASES


@pytest.mark.parametrize("name,text,expected,n_warnings", CASES, ids=[c[0] for c in CASES])
def test_golden_fixture(name, text, expected, n_warnings):
    corpus = parse_wos_plaintext(text)
    assert list(corpus.records) == expected
    assert len(corpus.warnings) == n_warnings


@pytest.mark.parametrize("name,text,expected,n_warnings", CASES, ids=[c[0] for c in CASES])
def test_round_trip_is_field_equal(name, text, expected, n_warnings):
    corpus = parse_wos_plaintext(text)
    again = parse_wos_plaintext(to_wos_plaintext(corpus))
    assert again.records == corpus.records
    assert again.warnings == ()


@pytest.mark.parametrize("text,line", [
    ("TI orphan title\nER\nEF\n", 1),
    ("PT J\nTI never closed\nPY 2010\nEF\n", 4),
    ("PT J\nTI never closed\nPY 2010\n", 3),
    ("PT J\nTI a\nPY 2010\nPT J\nTI b\nER\nEF\n", 4),
    ("   continuation first\nPT J\nER\n", 1),
    ("PT J\nTI fine\nPY 2010\nER\nER\nEF\n", 5),
    ("PT J\nthis is not a tag line\nER\nEF\n", 2),
])
def test_structural_errors_carry_line_numbers(text, line):
    with pytest.raises(MalformedRecord) as info:
        parse_wos_plaintext(text)
    assert info.value.line_no == line


@pytest.mark.parametrize("text", ["", "   \n\n", "FN Clarivate\nVR 1.0\nEF\n"])
def test_empty_input(text):
    with pytest.raises(EmptyInput):
        parse_wos_plaintext(text)


def test_repeated_ut_gets_suffix_and_warning():
    text = "PT J\nTI a\nPY 2010\nUT X\nER\nPT J\nTI b\nPY 2011\nUT X\nER\nEF\n"
    corpus = parse_wos_plaintext(text)
    assert [r.record_id for r in corpus] == ["X", "X#2"]
    assert len(corpus.warnings) == 1


def test_future_year_rejected():
    corpus = parse_wos_plaintext("PT J\nTI a\nPY 2999\nER\nPT J\nTI b\nPY 1850\nER\nEF\n")
    assert len(corpus) == 0 and len(corpus.warnings) == 2


_text = st.text(alphabet=st.characters(codec="ascii", categories=["L", "N", "P", "Zs"]), min_size=1,
                max_size=60).map(lambda s: " ".join(s.split())).filter(bool)
_items = st.lists(_text.filter(lambda s: ";" not in s), max_size=3)


@st.composite
def records(draw):
    n = draw(st.integers(1, 6))
    out = []
    for i in range(n):
        out.append(CitationRecord(
            record_id=f"WOS:{i}", title=draw(_text), year=draw(st.integers(1901, 2024)),
            abstract=draw(st.one_of(st.just(""), _text)),
            addresses=tuple(draw(_items)), wos_categories=tuple(draw(_items)),
            research_areas=tuple(draw(_items)),
            doi=draw(st.one_of(st.none(), _text.filter(lambda s: " " not in s))),
            url=draw(st.one_of(st.none(), _text.filter(lambda s: " " not in s)))))
    return Corpus(tuple(out))


@given(records())
def test_emit_then_parse_round_trip(corpus):
    assert parse_wos_plaintext(to_wos_plaintext(corpus)).records == corpus.records


@given(records())
def test_jsonl_round_trip(corpus):
    buf = io.StringIO()
    write_jsonl(corpus, buf)
    buf.seek(0)
    assert read_jsonl(buf).records == corpus.records


def test_csv_has_one_row_per_record_and_joins_lists():
    corpus = parse_wos_plaintext(CASES[5][1])
    lines = corpus_to_csv(corpus).splitlines()
    assert len(lines) == 2
    assert "Infectious Diseases; Tropical Medicine" in lines[1]


# ---------------------------------------------------------------------------
# dedup


def _r(rid, title, year, doi=None):
    return CitationRecord(rid, title, year, doi=doi)


def test_dedup_example_keeps_three():
    corpus = Corpus((_r("1", "Alpha", 2010, "10.1/a"), _r("2", "Beta study", 2011),
                     _r("3", "Gamma", 2012, "10.1/A"), _r("4", "Delta", 2013),
                     _r("5", "beta  STUDY.", 2011)))
    out, report = deduplicate(corpus)
    assert [r.record_id for r in out] == ["1", "2", "4"]
    assert (report.kept, report.removed, report.removed_ids) == (3, 2, ("3", "5"))


def test_dedup_identity_on_distinct_records():
    corpus = Corpus((_r("1", "A", 2010), _r("2", "A", 2011), _r("3", "B", 2011, "10.1/x")))
    out, report = deduplicate(corpus)
    assert out == corpus and report.removed == 0


def test_same_title_different_year_is_not_a_duplicate():
    out, _ = deduplicate(Corpus((_r("1", "A", 2010), _r("2", "A", 2011))))
    assert len(out) == 2


def test_different_dois_do_not_protect_title_year_duplicates():
    out, _ = deduplicate(Corpus((_r("1", "A", 2010, "10.1/x"), _r("2", "a!", 2010, "10.1/y"))))
    assert [r.record_id for r in out] == ["1"]


@given(st.integers(0, 2**32 - 1), st.integers(1, 120))
def test_dedup_matches_pairwise_oracle(seed, n):
    corpus = random_records(n, seed)
    out, report = deduplicate(corpus)
    kept, removed = brute_force_dedup(corpus.records)
    assert list(out.records) == kept
    assert list(report.removed_ids) == removed


@given(st.integers(0, 2**32 - 1))
def test_dedup_idempotent(seed):
    once, _ = deduplicate(random_records(60, seed))
    twice, report = deduplicate(once)
    assert twice == once and report.removed == 0


def test_normalize_title():
    assert normalize_title("  Geo-Detector:   a STUDY! ") == "geo detector a study"


# ---------------------------------------------------------------------------
# year window


def _years(*years):
    return Corpus(tuple(_r(str(i), f"t{i}", y) for i, y in enumerate(years)))


def test_window_bounds_inclusive():
    assert [r.year for r in filter_year_window(_years(2009, 2010, 2020, 2021), 2010, 2020)] == [2010, 2020]


def test_window_identity_and_empty():
    c = _years(2011, 2015)
    assert filter_year_window(c, 2011, 2015) == c
    assert len(filter_year_window(Corpus(()), 2000, 2001)) == 0


def test_invalid_window():
    with pytest.raises(InvalidWindow):
        filter_year_window(_years(2010), 2012, 2011)


@given(st.lists(st.integers(1990, 2025), max_size=40), st.integers(1990, 2025), st.integers(0, 10))
def test_window_partitions_corpus(years, lo, width):
    c = _years(*years)
    kept = filter_year_window(c, lo, lo + width)
    excluded = [y for y in years if not lo <= y <= lo + width]
    assert len(kept) + len(excluded) == len(c)


# ---------------------------------------------------------------------------
# geocoding


@pytest.fixture(scope="module")
def gazetteer():
    return Gazetteer.load(DATA / "gazetteer.tsv")


def _addr(*addresses):
    return CitationRecord("x", "t", 2015, addresses=addresses)


def test_geocode_country_from_bundled_gazetteer(gazetteer):
    p = geocode_record(_addr("Inst Geog Sci, Beijing 100101, Peoples R China"), gazetteer)
    assert p.resolved and p.country == "China"


def test_geocode_no_address_is_unresolved(gazetteer):
    assert geocode_record(_addr(), gazetteer) == UNRESOLVED_POINT


def test_geocode_unknown_place_is_unresolved(gazetteer):
    assert geocode_record(_addr("Independent Researcher, Atlantis"), gazetteer) == UNRESOLVED_POINT


def test_longest_toponym_wins():
    g = Gazetteer.from_rows([("Hong Kong", "HK-city", 22.3, 114.2), ("Kong", "K", 1.0, 1.0),
                             ("China", "China", 35.0, 104.0)])
    assert geocode_record(_addr("Univ, Hong Kong"), g).country == "HK-city"
    # both a city and its country: the three-token country name beats the two-token city
    g2 = Gazetteer.from_rows([("Wuhan", "CityLevel", 30.6, 114.3), ("Peoples R China", "China", 35.0, 104.0)])
    assert geocode_record(_addr("Wuhan Univ, Wuhan 430079, Peoples R China"), g2).country == "China"


def test_equal_length_tie_goes_to_rightmost():
    g = Gazetteer.from_rows([("Georgia", "USA", 33.0, -83.0), ("Canada", "Canada", 56.0, -106.0)])
    assert geocode_record(_addr("Univ Georgia Campus, Canada"), g).country == "Canada"


def test_only_first_address_and_author_names_ignored(gazetteer):
    rec = _addr("[Chile, A; Jordan, M] Univ Toronto, Toronto, Canada", "Tsinghua Univ, Peoples R China")
    assert geocode_record(rec, gazetteer).country == "Canada"


def test_lookup_is_case_insensitive(gazetteer):
    assert gazetteer.lookup("PEOPLES r china")[0] == "China"
    assert gazetteer.lookup("peoples-r-china")[0] == "China"


def test_empty_gazetteer_rejected():
    with pytest.raises(ValueError):
        geocode_record(_addr("x"), Gazetteer({}))


_place = st.sampled_from(["Peoples R China", "USA", "Wuhan", "New Zealand", "Zealand", "Atlantis", "R"])


@given(st.lists(st.lists(st.one_of(_text, _place), min_size=1, max_size=4).map(", ".join), max_size=3))
def test_resolved_country_always_in_gazetteer(gazetteer, addresses):
    p = geocode_record(_addr(*addresses), gazetteer)
    assert (p.country in gazetteer.countries) if p.resolved else p == UNRESOLVED_POINT


def test_geopoint_invariants():
    with pytest.raises(ValueError):
        GeoPoint("China", 1.0, 2.0, resolved=False)
    with pytest.raises(ValueError):
        GeoPoint("X", 91.0, 0.0, resolved=True)
