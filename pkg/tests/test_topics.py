import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from difftree import topics
from difftree.corpus import CitationRecord
from difftree.errors import (ConfigFormatError, EmptyDocument, InvalidHyperparameter, TooFewDocuments,
                             UnknownLabel, UnmappedTopic, VocabularyMismatch)
from difftree.synthetic import separated_topic_corpus
from difftree.topics import (LabelMap, Taxonomy, TokenDoc, TopicModel, Vocabulary, apply_label_map,
                             dominant_topic, fit_lda, fold_in, perplexity, preprocess, select_topic_count)
from conftest import DATA
from helpers import hungarian_purity


def _record(title, abstract=""):
    return CitationRecord("d", title, 2015, abstract)


def test_preprocess_drops_stopwords_and_short_tokens():
    vocab = Vocabulary()
    doc = preprocess(_record("Spatial analysis of risk"), {"of"}, vocab)
    assert [vocab.words[i] for i in doc.tokens] == ["spatial", "analysis", "risk"]
    assert doc.n_tokens == 3


def test_preprocess_splits_on_punctuation_and_lowercases():
    vocab = Vocabulary()
    doc = preprocess(_record("PM2.5-Haze", "in  a GIS; by"), set(), vocab)
    assert [vocab.words[i] for i in doc.tokens] == ["pm2", "haze", "gis"]


def test_preprocess_empty_document():
    with pytest.raises(EmptyDocument):
        preprocess(_record("", ""), set(), Vocabulary())
    with pytest.raises(EmptyDocument):
        preprocess(_record("of an it"), {"the"}, Vocabulary())


def test_preprocess_deterministic_first_seen_vocabulary():
    v1, v2 = Vocabulary(), Vocabulary()
    a = preprocess(_record("urban heat urban island"), set(), v1)
    b = preprocess(_record("urban heat urban island"), set(), v2)
    assert a == b and v1.words == ["urban", "heat", "island"]


def test_preprocess_frozen_vocabulary_drops_unseen():
    vocab = Vocabulary(["soil", "crop"])
    doc = preprocess(_record("soil moisture crop"), set(), vocab, grow=False)
    assert doc.tokens == (0, 1) and len(vocab) == 2


def test_bundled_stopwords_load():
    stop = topics.load_stopwords(DATA / "stopwords.txt")
    assert {"the", "of", "study"} <= stop and "#" not in "".join(stop)


# ---------------------------------------------------------------------------
# fitting


@pytest.fixture(scope="module")
def two_topic():
    docs, labels, V = separated_topic_corpus(200, 2, seed=11)
    return docs, labels, V


def _rows_stochastic(m):
    return (np.allclose(m.doc_topic.sum(1), 1, atol=1e-9, rtol=0)
            and np.allclose(m.topic_word.sum(1), 1, atol=1e-9, rtol=0))


def test_two_topic_recovery(two_topic):
    docs, labels, V = two_topic
    m = fit_lda(docs, 2, iterations=200, seed=1, vocab_size=V)
    pred = [dominant_topic(m, i) for i in range(len(docs))]
    assert hungarian_purity(pred, labels) >= 0.95
    assert _rows_stochastic(m)


def test_fit_is_bit_identical_under_seed(two_topic):
    docs, _, V = two_topic
    a = fit_lda(docs, 3, iterations=30, seed=42, vocab_size=V)
    b = fit_lda(docs, 3, iterations=30, seed=42, vocab_size=V)
    assert a == b
    assert all(np.array_equal(x, y) for x, y in zip(a.assignments, b.assignments))
    c = fit_lda(docs, 3, iterations=30, seed=43, vocab_size=V)
    assert a != c


def test_single_word_vocabulary():
    docs = [TokenDoc(f"d{i}", (0,) * 5) for i in range(6)]
    m = fit_lda(docs, 2, alpha=0.5, beta=0.01, iterations=20, seed=0)
    assert np.allclose(m.topic_word, 1.0)
    # theta rows stay within prior smoothing of whatever split the sampler found; all valid
    assert _rows_stochastic(m)


def test_default_alpha_is_fifty_over_k(two_topic):
    docs, _, V = two_topic
    assert fit_lda(docs, 4, iterations=1, vocab_size=V).alpha == pytest.approx(12.5)


@pytest.mark.parametrize("kw,err", [
    (dict(K=1), InvalidHyperparameter),
    (dict(K=2, alpha=0.0), InvalidHyperparameter),
    (dict(K=2, beta=-1.0), InvalidHyperparameter),
    (dict(K=2, iterations=0), InvalidHyperparameter),
    (dict(K=2, restarts=0), InvalidHyperparameter),
    (dict(K=50), TooFewDocuments),
])
def test_fit_rejects_bad_arguments(kw, err):
    docs = [TokenDoc(f"d{i}", (0, 1)) for i in range(5)]
    with pytest.raises(err):
        fit_lda(docs, **kw)


def test_vocab_size_must_cover_tokens():
    with pytest.raises(VocabularyMismatch):
        fit_lda([TokenDoc("a", (0, 5)), TokenDoc("b", (1,))], 2, vocab_size=3, iterations=1)


def test_restarts_keep_the_most_likely_chain(two_topic):
    docs, _, V = two_topic
    single = fit_lda(docs, 4, iterations=20, seed=5, vocab_size=V)
    multi = fit_lda(docs, 4, iterations=20, seed=5, vocab_size=V, restarts=3)
    ll = lambda m: topics.log_likelihood(m.doc_topic, m.topic_word, docs)  # noqa: E731
    assert ll(multi) >= ll(single)
    assert fit_lda(docs, 4, iterations=20, seed=5, vocab_size=V, restarts=1) == single


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.integers(2, 5), st.floats(0.05, 5.0), st.floats(0.001, 1.0))
def test_rows_are_stochastic_after_any_fit(seed, K, alpha, beta):
    docs, _, V = separated_topic_corpus(12, 3, words_per_topic=5, doc_length=(1, 6), seed=seed)
    m = fit_lda(docs, K, alpha, beta, iterations=3, seed=seed, vocab_size=V)
    assert _rows_stochastic(m)
    assert sum(len(a) for a in m.assignments) == sum(d.n_tokens for d in docs)
    assert all(a.min() >= 0 and a.max() < K for a in m.assignments)


# ---------------------------------------------------------------------------
# perplexity


def _fixed_model(topic_word, doc_topic=None, alpha=0.1):
    topic_word = np.asarray(topic_word, dtype=float)
    K = topic_word.shape[0]
    doc_topic = np.full((1, K), 1.0 / K) if doc_topic is None else np.asarray(doc_topic, dtype=float)
    return TopicModel(K, alpha, 0.01, doc_topic, topic_word, (), 0, 1)


def test_uniform_model_has_perplexity_v():
    V = 7
    m = _fixed_model(np.full((2, V), 1.0 / V))
    docs = [TokenDoc("a", (0, 3, 6)), TokenDoc("b", (1, 1, 2, 5))]
    assert perplexity(m, docs) == pytest.approx(V, rel=1e-12)


def test_point_mass_model_approaches_one():
    # topic k puts all mass on word k; each doc uses one word
    m = _fixed_model(np.eye(3) * (1 - 2e-9) + 1e-9, alpha=1e-6)
    docs = [TokenDoc(f"d{k}", (k,) * 20) for k in range(3)]
    assert perplexity(m, docs, seed=0) == pytest.approx(1.0, abs=1e-4)


def test_perplexity_deterministic_and_at_least_one(two_topic):
    docs, _, V = two_topic
    m = fit_lda(docs[:150], 2, iterations=50, seed=3, vocab_size=V)
    a, b = perplexity(m, docs[150:]), perplexity(m, docs[150:])
    assert a == b and np.isfinite(a) and a >= 1.0
    assert perplexity(m, docs[:150], theta=m.doc_topic) >= 1.0


def test_perplexity_vocabulary_mismatch():
    m = _fixed_model(np.full((2, 3), 1 / 3))
    with pytest.raises(VocabularyMismatch):
        perplexity(m, [TokenDoc("a", (0, 3))])


def test_fold_in_rows_stochastic(two_topic):
    docs, _, V = two_topic
    m = fit_lda(docs[:100], 2, iterations=20, seed=0, vocab_size=V)
    theta = fold_in(m, docs[100:120], iterations=10, seed=1)
    assert theta.shape == (20, 2) and np.allclose(theta.sum(1), 1, atol=1e-12)


def test_select_topic_count_picks_generative_k_on_two_topics():
    docs, _, V = separated_topic_corpus(300, 2, seed=21)
    sel = select_topic_count(docs, [2, 3, 4, 5], 0.02, seed=0, iterations=150, vocab_size=V,
                             return_details=True)
    assert sel.chosen == 2
    assert len(sel.perplexities) == len(sel.candidates) >= 2


@pytest.mark.parametrize("cands", [[3], [4, 3], [2, 2, 3]])
def test_select_topic_count_rejects_bad_candidates(cands):
    docs, _, V = separated_topic_corpus(20, 2, seed=0)
    with pytest.raises(ValueError):
        select_topic_count(docs, cands, vocab_size=V)


# ---------------------------------------------------------------------------
# dominant topic, persistence


def test_dominant_topic_argmax_and_ties():
    m = _fixed_model(np.full((3, 2), 0.5), doc_topic=[[0.1, 0.7, 0.2], [0.4, 0.4, 0.2]])
    assert dominant_topic(m, 0) == 1
    assert dominant_topic(m, 1) == 0
    with pytest.raises(IndexError):
        dominant_topic(m, 2)


def test_model_save_load_round_trip(tmp_path, two_topic):
    docs, _, V = two_topic
    vocab = Vocabulary(f"w{i}" for i in range(V))
    m = fit_lda(docs[:40], 3, iterations=5, seed=9, vocab_size=V)
    topics.save_model(m, tmp_path / "m.txt", vocab)
    loaded, v2 = topics.load_model(tmp_path / "m.txt")
    assert loaded == m and v2.words == vocab.words
    assert (tmp_path / "m.txt").read_text().startswith(topics.MODEL_FORMAT)


def test_load_model_rejects_other_formats(tmp_path):
    (tmp_path / "m.txt").write_text("not a model\n")
    with pytest.raises(ConfigFormatError):
        topics.load_model(tmp_path / "m.txt")


# ---------------------------------------------------------------------------
# taxonomy and label maps


@pytest.fixture
def taxonomy(tmp_path):
    p = tmp_path / "tax.ini"
    p.write_text("[disciplines]\nGS = Geosciences\nHS = Health\n\n[directions]\n"
                 "R1 = GS | GIS\nR2 = GS\nR3 = HS | disease\n")
    return Taxonomy.load(p)


def test_taxonomy_load(taxonomy):
    assert taxonomy.disciplines == ("GS", "HS")
    assert taxonomy.discipline_of("R3") == "HS"
    assert taxonomy.names["R1"] == "GIS"


def test_bundled_synthetic_taxonomy_and_label_map():
    tax = Taxonomy.load(DATA / "synthetic" / "taxonomy.ini")
    assert tax.disciplines == ("GS", "AS", "AS&M", "HS", "M&S")
    lm = LabelMap.load(DATA / "synthetic" / "label_map.ini", tax)
    lm.validate(tax, len(lm.topic_to_label))


def test_taxonomy_rejects_unknown_discipline(tmp_path):
    p = tmp_path / "t.ini"
    p.write_text("[disciplines]\nGS = x\n[directions]\nR1 = XX\n")
    with pytest.raises(ConfigFormatError):
        Taxonomy.load(p)


def test_apply_label_map_identity(taxonomy):
    lm = LabelMap({0: "R1", 1: "R2", 2: "R3"})
    rows = apply_label_map([("a", 0), ("b", 1), ("c", 2)], lm, taxonomy)
    assert rows == [("a", "R1", "GS"), ("b", "R2", "GS"), ("c", "R3", "HS")]


def test_two_topics_may_share_a_label(taxonomy):
    lm = LabelMap({0: "R1", 1: "R1"})
    assert [r[1] for r in apply_label_map([("a", 0), ("b", 1)], lm, taxonomy)] == ["R1", "R1"]


def test_unmapped_topic(taxonomy):
    lm = LabelMap({0: "R1", 1: "R2", 2: "R3", 3: "R1"})
    with pytest.raises(UnmappedTopic):
        apply_label_map([("a", 4)], lm, taxonomy)
    with pytest.raises(UnmappedTopic):
        lm.validate(taxonomy, K=5)


def test_unknown_label(taxonomy, tmp_path):
    with pytest.raises(UnknownLabel):
        apply_label_map([("a", 0)], LabelMap({0: "R9"}), taxonomy)
    p = tmp_path / "lm.ini"
    p.write_text("[topics]\n0 = R9\n")
    with pytest.raises(UnknownLabel):
        LabelMap.load(p, taxonomy)


def test_label_map_keys_must_be_integers(tmp_path):
    p = tmp_path / "lm.ini"
    p.write_text("[topics]\nzero = R1\n")
    with pytest.raises(ConfigFormatError):
        LabelMap.load(p)


@given(st.lists(st.integers(0, 2), max_size=30))
def test_label_rows_always_carry_a_discipline(topic_ids):
    tax = Taxonomy(("A", "B"), ("x", "y", "z"), {"x": "A", "y": "B", "z": "A"})
    rows = apply_label_map([(f"d{i}", k) for i, k in enumerate(topic_ids)], LabelMap({0: "x", 1: "y", 2: "z"}), tax)
    assert all(disc in tax.disciplines and tax.discipline_of(d) == disc for _, d, disc in rows)
