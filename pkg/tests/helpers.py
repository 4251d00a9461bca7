"""Random fixture builders shared by the unit and acceptance suites."""
import numpy as np

from difftree.corpus import CitationRecord, Corpus

WORDS = "spatial soil urban rural grain water haze disease sampling climate heat risk basin".split()


def random_records(n, seed, dup_share=0.2):
    """``n`` records; about ``dup_share`` of them copy an earlier record's DOI or title+year."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        if out and rng.random() < dup_share:
            src = out[int(rng.integers(len(out)))]
            if rng.random() < 0.5 and src.doi:
                # same DOI in different case, different title
                out.append(CitationRecord(f"r{i}", f"variant {i}", int(rng.integers(2010, 2021)),
                                          doi=src.doi.upper()))
            else:
                # same title modulo case, punctuation and spacing; same year; maybe another DOI
                title = "  " + src.title.upper().replace(" ", " ,  ") + "!"
                doi = f"10.1/{i}" if rng.random() < 0.5 else None
                out.append(CitationRecord(f"r{i}", title, src.year, doi=doi))
            continue
        words = rng.choice(WORDS, size=int(rng.integers(2, 5)))
        doi = f"10.1/{i}" if rng.random() < 0.7 else None
        out.append(CitationRecord(f"r{i}", " ".join(words), int(rng.integers(2010, 2021)), doi=doi))
    return Corpus(tuple(out), "random")


def is_duplicate(a, b):
    from difftree.corpus import normalize_title
    if a.doi and b.doi and a.doi.lower() == b.doi.lower():
        return True
    return normalize_title(a.title) == normalize_title(b.title) and a.year == b.year


def brute_force_dedup(records):
    """O(n^2) oracle: keep a record unless it duplicates something already kept."""
    kept, removed = [], []
    for r in records:
        if any(is_duplicate(r, k) for k in kept):
            removed.append(r.record_id)
        else:
            kept.append(r)
    return kept, removed


def random_labeled(rng, n, n_disciplines=4, n_directions=9, years=(2010, 2020)):
    """(doc_id, direction, discipline, year) rows with directions nested in disciplines."""
    disc_of = {f"R{k}": f"D{k % n_disciplines}" for k in range(n_directions)}
    rows = []
    for i in range(n):
        direction = f"R{int(rng.integers(n_directions))}"
        rows.append((f"doc{i}", direction, disc_of[direction], int(rng.integers(years[0], years[1] + 1))))
    return rows


def hungarian_purity(predicted, truth):
    """Share of items on the best one-to-one matching of predicted to true labels."""
    from scipy.optimize import linear_sum_assignment
    p_labels = sorted(set(predicted))
    t_labels = sorted(set(truth))
    table = np.zeros((len(p_labels), len(t_labels)))
    pi = {p: i for i, p in enumerate(p_labels)}
    ti = {t: i for i, t in enumerate(t_labels)}
    for p, t in zip(predicted, truth):
        table[pi[p], ti[t]] += 1
    rows, cols = linear_sum_assignment(-table)
    return table[rows, cols].sum() / len(truth)


def mixed_model_rows(seed, groups=4, years=6):
    """(year, count, group) rows from group lines with random intercepts and slopes plus unit noise."""
    rng = np.random.default_rng(seed)
    rows = []
    for g in range(groups):
        a, b = 5 + rng.normal(0, 2), 2 + rng.normal(0, 0.7)
        rows += [(2010 + t, a + b * t + rng.normal(0, 1.0), f"g{g}") for t in range(years)]
    return rows


def heterogeneous_slope_rows(seed=0):
    """40 forecast rows: four directions over ten years with slopes 1, 3, 5 and 7."""
    from difftree.forecast import Row
    rng = np.random.default_rng(seed)
    out = []
    for d in range(4):
        slope = 1 + 2 * d
        for y in range(2010, 2020):
            out.append(Row(y, max(0.0, 2 + slope * (y - 2010) + rng.normal(0, 2)), f"R{d}", "AB"[d % 2]))
    return out
