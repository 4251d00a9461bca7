"""Tokenization, LDA by collapsed Gibbs sampling, and taxonomy labelling.

The sampler keeps the usual three count tables (doc-topic, topic-word,
topic totals). Randomness comes from a numpy ``Generator`` seeded once per
fit; each sweep consumes one uniform per token, so a fit is a deterministic
function of (docs, K, alpha, beta, iterations, seed).
"""
from __future__ import annotations

import configparser
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numba
import numpy as np

from .errors import (ConfigFormatError, EmptyDocument, InvalidHyperparameter, TooFewDocuments,
                     UnknownLabel, UnmappedTopic, VocabularyMismatch)

logger = logging.getLogger(__name__)

_SPLIT = re.compile(r"[^0-9a-z]+")
MODEL_FORMAT = "difftree-topicmodel 1"


# ---------------------------------------------------------------------------
# preprocessing


class Vocabulary:
    """Word <-> index map that grows in first-seen order."""

    def __init__(self, words: Iterable[str] = ()):
        self._index: dict[str, int] = {}
        self.words: list[str] = []
        for w in words:
            self.add(w)

    def add(self, word: str) -> int:
        idx = self._index.get(word)
        if idx is None:
            idx = len(self.words)
            self._index[word] = idx
            self.words.append(word)
        return idx

    def get(self, word: str) -> Optional[int]:
        return self._index.get(word)

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self._index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.words == other.words


@dataclass(frozen=True)
class TokenDoc:
    doc_id: str
    tokens: tuple[int, ...]

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)


def tokenize(text: str, stopwords: set[str]) -> list[str]:
    return [t for t in _SPLIT.split(text.lower()) if len(t) >= 3 and t not in stopwords]


def preprocess(record, stopwords: set[str], vocab: Vocabulary, *, grow: bool = True) -> TokenDoc:
    """Title + abstract -> TokenDoc, extending ``vocab`` with unseen words.

    With ``grow=False`` unseen words are dropped instead (held-out scoring
    against a fixed vocabulary).
    """
    words = tokenize(f"{record.title} {record.abstract}", stopwords)
    if grow:
        ids = [vocab.add(w) for w in words]
    else:
        ids = [i for i in (vocab.get(w) for w in words) if i is not None]
    if not ids:
        raise EmptyDocument(f"no tokens survive preprocessing for {record.record_id!r}")
    return TokenDoc(record.record_id, tuple(ids))


def load_stopwords(path) -> set[str]:
    with open(path, encoding="utf-8") as fh:
        return {line.strip().lower() for line in fh if line.strip() and not line.startswith("#")}


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True, eq=False)
class TopicModel:
    K: int
    alpha: float
    beta: float
    doc_topic: np.ndarray  # M x K
    topic_word: np.ndarray  # K x V
    assignments: tuple[np.ndarray, ...]  # per doc, topic label per token
    seed: int
    iterations: int
    doc_ids: tuple[str, ...] = ()

    @property
    def n_docs(self) -> int:
        return self.doc_topic.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.topic_word.shape[1]

    def __eq__(self, other):
        if not isinstance(other, TopicModel):
            return NotImplemented
        return (
            (self.K, self.alpha, self.beta, self.seed, self.iterations, self.doc_ids)
            == (other.K, other.alpha, other.beta, other.seed, other.iterations, other.doc_ids)
            and np.array_equal(self.doc_topic, other.doc_topic)
            and np.array_equal(self.topic_word, other.topic_word)
            and len(self.assignments) == len(other.assignments)
            and all(np.array_equal(a, b) for a, b in zip(self.assignments, other.assignments))
        )

    def top_words(self, vocab: Vocabulary, n: int = 10) -> list[list[str]]:
        order = np.argsort(-self.topic_word, axis=1, kind="stable")[:, :n]
        return [[vocab.words[i] for i in row] for row in order]


def default_alpha(K: int) -> float:
    return 50.0 / K


@numba.njit(cache=True)
def _gibbs_sweep(words, doc_of, z, ndk, nkw, nk, uniforms, alpha, beta, vbeta, prob):
    K = nk.shape[0]
    for i in range(words.shape[0]):
        w = words[i]
        d = doc_of[i]
        k = z[i]
        ndk[d, k] -= 1
        nkw[k, w] -= 1
        nk[k] -= 1
        total = 0.0
        for t in range(K):
            total += (ndk[d, t] + alpha) * (nkw[t, w] + beta) / (nk[t] + vbeta)
            prob[t] = total
        u = uniforms[i] * total
        k = 0
        while k < K - 1 and prob[k] <= u:
            k += 1
        z[i] = k
        ndk[d, k] += 1
        nkw[k, w] += 1
        nk[k] += 1


@numba.njit(cache=True)
def _foldin_sweep(words, doc_of, z, ndk, phi, uniforms, alpha, prob):
    K = phi.shape[0]
    for i in range(words.shape[0]):
        w = words[i]
        d = doc_of[i]
        k = z[i]
        ndk[d, k] -= 1
        total = 0.0
        for t in range(K):
            total += (ndk[d, t] + alpha) * phi[t, w]
            prob[t] = total
        u = uniforms[i] * total
        k = 0
        while k < K - 1 and prob[k] <= u:
            k += 1
        z[i] = k
        ndk[d, k] += 1


def _flatten(docs: Sequence[TokenDoc]):
    lengths = np.array([d.n_tokens for d in docs], dtype=np.int64)
    words = np.fromiter((w for d in docs for w in d.tokens), dtype=np.int64, count=int(lengths.sum()))
    doc_of = np.repeat(np.arange(len(docs), dtype=np.int64), lengths)
    return words, doc_of, lengths


def _check_counts(ndk, nkw, nk):
    per_doc = ndk.sum(axis=0)
    per_word = nkw.sum(axis=1)
    if not (np.array_equal(per_doc, nk) and np.array_equal(per_word, nk)):
        raise RuntimeError("Gibbs count tables out of sync")


def _run_chain(words, doc_of, lengths, K, alpha, beta, V, iterations, seed):
    rng = np.random.default_rng(seed)
    z = rng.integers(0, K, size=words.shape[0]).astype(np.int64)
    ndk = np.zeros((len(lengths), K), dtype=np.int64)
    nkw = np.zeros((K, V), dtype=np.int64)
    np.add.at(ndk, (doc_of, z), 1)
    np.add.at(nkw, (z, words), 1)
    nk = nkw.sum(axis=1)
    prob = np.empty(K)
    vbeta = V * beta
    for _ in range(iterations):
        _gibbs_sweep(words, doc_of, z, ndk, nkw, nk, rng.random(words.shape[0]),
                     alpha, beta, vbeta, prob)
        _check_counts(ndk, nkw, nk)
    doc_topic = (ndk + alpha) / (lengths[:, None] + K * alpha)
    topic_word = (nkw + beta) / (nk[:, None] + vbeta)
    doc_topic /= doc_topic.sum(axis=1, keepdims=True)
    topic_word /= topic_word.sum(axis=1, keepdims=True)
    return doc_topic, topic_word, z


def fit_lda(docs: Sequence[TokenDoc], K: int, alpha: Optional[float] = None, beta: float = 0.01,
            iterations: int = 1000, seed: int = 0, vocab_size: Optional[int] = None,
            restarts: int = 1) -> TopicModel:
    """Fit LDA with collapsed Gibbs sampling.

    Point estimates come from the final-sweep counts smoothed by the priors.
    ``alpha`` defaults to 50/K. ``vocab_size`` defaults to one past the
    largest token index.

    With ``restarts`` > 1, independent chains are run (the first seeded with
    ``seed``, chain r with ``[seed, r]``) and the one with the highest
    training log-likelihood is kept. This guards against chains stuck with
    two topics merged.
    """
    if K < 2:
        raise InvalidHyperparameter(f"K must be >= 2, got {K}")
    if alpha is None:
        alpha = default_alpha(K)
    if not alpha > 0 or not beta > 0:
        raise InvalidHyperparameter(f"alpha and beta must be positive (alpha={alpha}, beta={beta})")
    if iterations < 1:
        raise InvalidHyperparameter(f"iterations must be >= 1, got {iterations}")
    if restarts < 1:
        raise InvalidHyperparameter(f"restarts must be >= 1, got {restarts}")
    if len(docs) < K:
        raise TooFewDocuments(f"{len(docs)} documents for K={K}")

    words, doc_of, lengths = _flatten(docs)
    if np.any(lengths == 0):
        raise EmptyDocument("fit_lda received an empty document")
    V = int(words.max()) + 1 if vocab_size is None else int(vocab_size)
    if words.max() >= V:
        raise VocabularyMismatch(f"token index {words.max()} >= vocab size {V}")
    best = None
    for r in range(restarts):
        chain = _run_chain(words, doc_of, lengths, K, float(alpha), float(beta), V, iterations,
                           seed if r == 0 else [seed, r])
        ll = log_likelihood(chain[0], chain[1], docs)
        logger.debug("K=%d chain %d training log-likelihood %.3f", K, r, ll)
        if best is None or ll > best[0]:
            best = (ll, chain)
    doc_topic, topic_word, z = best[1]
    bounds = np.cumsum(lengths)[:-1]
    assignments = tuple(a.copy() for a in np.split(z, bounds))
    return TopicModel(K, float(alpha), float(beta), doc_topic, topic_word, assignments,
                      seed, iterations, tuple(d.doc_id for d in docs))


def fold_in(model: TopicModel, docs: Sequence[TokenDoc], iterations: int = 50,
            seed: Optional[int] = None) -> np.ndarray:
    """Doc-topic estimates for new documents with topic_word held fixed."""
    words, doc_of, lengths = _flatten(docs)
    if words.size and words.max() >= model.vocab_size:
        raise VocabularyMismatch(
            f"token index {words.max()} outside model vocabulary of {model.vocab_size}")
    K = model.K
    rng = np.random.default_rng(model.seed if seed is None else seed)
    z = rng.integers(0, K, size=words.shape[0]).astype(np.int64)
    ndk = np.zeros((len(docs), K), dtype=np.int64)
    np.add.at(ndk, (doc_of, z), 1)
    phi = np.ascontiguousarray(model.topic_word)
    prob = np.empty(K)
    for _ in range(iterations):
        _foldin_sweep(words, doc_of, z, ndk, phi, rng.random(words.shape[0]), model.alpha, prob)
    theta = (ndk + model.alpha) / (lengths[:, None] + K * model.alpha)
    return theta / theta.sum(axis=1, keepdims=True)


def log_likelihood(theta: np.ndarray, topic_word: np.ndarray, docs: Sequence[TokenDoc]) -> float:
    words, doc_of, _ = _flatten(docs)
    # p(w|d) = sum_k theta_dk phi_kw
    p = np.einsum("ik,ki->i", theta[doc_of], topic_word[:, words])
    return float(np.log(p).sum())


def perplexity(model: TopicModel, docs: Sequence[TokenDoc], *, fold_in_iterations: int = 50,
               seed: Optional[int] = None, theta: Optional[np.ndarray] = None) -> float:
    """exp(-loglik / tokens) with doc-topic mixtures estimated by fold-in.

    Pass ``theta`` to skip fold-in (e.g. scoring the training documents with
    the fitted doc_topic).
    """
    if not docs:
        raise ValueError("perplexity needs at least one document")
    n_tokens = sum(d.n_tokens for d in docs)
    if n_tokens == 0:
        raise EmptyDocument("no tokens to score")
    if max(max(d.tokens) for d in docs if d.tokens) >= model.vocab_size:
        raise VocabularyMismatch("documents use words outside the model vocabulary")
    if theta is None:
        theta = fold_in(model, docs, fold_in_iterations, seed)
    ll = log_likelihood(theta, model.topic_word, docs)
    return float(np.exp(-ll / n_tokens))


def split_docs(docs: Sequence[TokenDoc], test_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(docs))
    n_test = max(1, int(round(test_fraction * len(docs))))
    test_idx = np.sort(order[:n_test])
    train_idx = np.sort(order[n_test:])
    return [docs[i] for i in train_idx], [docs[i] for i in test_idx]


@dataclass(frozen=True)
class TopicCountSelection:
    chosen: int
    candidates: tuple[int, ...]
    perplexities: tuple[float, ...]


def select_topic_count(docs: Sequence[TokenDoc], candidates: Sequence[int], tolerance: float = 0.02,
                       seed: int = 0, *, alpha: Optional[float] = None, beta: float = 0.01,
                       iterations: int = 1000, test_fraction: float = 0.2,
                       vocab_size: Optional[int] = None, restarts: int = 1,
                       return_details: bool = False):
    """Elbow choice of K over ascending ``candidates`` by held-out perplexity.

    Walks the candidates in order and stops at the first K whose successor
    improves held-out perplexity by less than ``tolerance`` (relative). If
    every step improves by at least ``tolerance``, the largest candidate wins.
    """
    candidates = list(candidates)
    if len(candidates) < 2:
        raise ValueError("need at least two candidate topic counts")
    if candidates != sorted(set(candidates)):
        raise ValueError("candidates must be strictly ascending")
    if vocab_size is None:
        vocab_size = max(max(d.tokens) for d in docs) + 1
    train, test = split_docs(docs, test_fraction, seed)

    perps = []
    chosen = None
    for i, K in enumerate(candidates):
        model = fit_lda(train, K, alpha, beta, iterations, seed, vocab_size=vocab_size, restarts=restarts)
        perps.append(perplexity(model, test, seed=seed))
        logger.info("K=%d held-out perplexity %.4f", K, perps[-1])
        if i > 0 and chosen is None:
            improvement = (perps[i - 1] - perps[i]) / perps[i - 1]
            if improvement < tolerance:
                chosen = candidates[i - 1]
                break
    if chosen is None:
        chosen = candidates[-1]
    if return_details:
        return TopicCountSelection(chosen, tuple(candidates[:len(perps)]), tuple(perps))
    return chosen


def dominant_topic(model: TopicModel, doc_index: int) -> int:
    if not 0 <= doc_index < model.n_docs:
        raise IndexError(f"document index {doc_index} out of range [0, {model.n_docs})")
    # np.argmax returns the first maximum, i.e. the lowest topic index on ties
    return int(np.argmax(model.doc_topic[doc_index]))


# ---------------------------------------------------------------------------
# persistence


def _fmt_row(row) -> str:
    return " ".join(repr(float(x)) for x in row)


def save_model(model: TopicModel, path, vocab: Optional[Vocabulary] = None) -> None:
    lines = [
        MODEL_FORMAT,
        f"K {model.K}",
        f"alpha {model.alpha!r}",
        f"beta {model.beta!r}",
        f"seed {model.seed}",
        f"iterations {model.iterations}",
        f"docs {model.n_docs}",
        f"vocab {model.vocab_size}",
        "[doc_topic]",
    ]
    for doc_id, row in zip(model.doc_ids or [""] * model.n_docs, model.doc_topic):
        lines.append(f"{doc_id}\t{_fmt_row(row)}")
    lines.append("[topic_word]")
    lines += [_fmt_row(row) for row in model.topic_word]
    lines.append("[assignments]")
    lines += [" ".join(str(int(k)) for k in a) for a in model.assignments]
    if vocab is not None:
        lines.append("[vocabulary]")
        lines += vocab.words
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path) -> tuple[TopicModel, Optional[Vocabulary]]:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if not lines or lines[0] != MODEL_FORMAT:
        raise ConfigFormatError(f"{path}: not a {MODEL_FORMAT!r} file")
    header = dict(line.split(" ", 1) for line in lines[1:8])
    K, M, V = int(header["K"]), int(header["docs"]), int(header["vocab"])
    pos = 8
    if lines[pos] != "[doc_topic]":
        raise ConfigFormatError(f"{path}: missing [doc_topic] section")
    doc_ids, rows = [], []
    for line in lines[pos + 1:pos + 1 + M]:
        doc_id, values = line.split("\t")
        doc_ids.append(doc_id)
        rows.append([float(x) for x in values.split()])
    pos += 1 + M
    doc_topic = np.array(rows, dtype=float).reshape(M, K)
    if lines[pos] != "[topic_word]":
        raise ConfigFormatError(f"{path}: missing [topic_word] section")
    topic_word = np.array([[float(x) for x in line.split()] for line in lines[pos + 1:pos + 1 + K]])
    pos += 1 + K
    if lines[pos] != "[assignments]":
        raise ConfigFormatError(f"{path}: missing [assignments] section")
    assignments = tuple(np.array([int(x) for x in line.split()], dtype=np.int64)
                        for line in lines[pos + 1:pos + 1 + M])
    pos += 1 + M
    vocab = None
    if pos < len(lines) and lines[pos] == "[vocabulary]":
        vocab = Vocabulary(w for w in lines[pos + 1:] if w)
        if len(vocab) != V:
            raise ConfigFormatError(f"{path}: vocabulary has {len(vocab)} words, header says {V}")
    model = TopicModel(K, float(header["alpha"]), float(header["beta"]), doc_topic, topic_word,
                       assignments, int(header["seed"]), int(header["iterations"]),
                       tuple(doc_ids) if any(doc_ids) else ())
    return model, vocab


# ---------------------------------------------------------------------------
# taxonomy and labels


@dataclass(frozen=True)
class Taxonomy:
    disciplines: tuple[str, ...]
    directions: tuple[str, ...]
    direction_to_discipline: dict
    names: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        unknown = {d for d in self.direction_to_discipline.values() if d not in self.disciplines}
        if unknown:
            raise ConfigFormatError(f"directions map to unknown disciplines: {sorted(unknown)}")
        missing = [d for d in self.directions if d not in self.direction_to_discipline]
        if missing:
            raise ConfigFormatError(f"directions without a discipline: {missing}")

    @classmethod
    def load(cls, path) -> "Taxonomy":
        cp = _read_config(path)
        for section in ("disciplines", "directions"):
            if not cp.has_section(section):
                raise ConfigFormatError(f"{path}: missing [{section}] section")
        disciplines = tuple(cp["disciplines"].keys())
        names = dict(cp["disciplines"].items())
        mapping = {}
        for direction, value in cp["directions"].items():
            # "R1 = GS" or "R1 = GS | Geographic information system"
            discipline, _, name = (p.strip() for p in value.partition("|"))
            mapping[direction] = discipline
            if name:
                names[direction] = name
        return cls(disciplines, tuple(mapping), mapping, names)

    def discipline_of(self, direction: str) -> str:
        return self.direction_to_discipline[direction]


def _read_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(delimiters=("=",), interpolation=None)
    cp.optionxform = str  # labels are case-sensitive
    if not cp.read(path, encoding="utf-8"):
        raise ConfigFormatError(f"cannot read {path}")
    return cp


@dataclass(frozen=True)
class LabelMap:
    topic_to_label: dict

    @classmethod
    def load(cls, path, taxonomy: Optional[Taxonomy] = None) -> "LabelMap":
        cp = _read_config(path)
        if not cp.has_section("topics"):
            raise ConfigFormatError(f"{path}: missing [topics] section")
        mapping = {}
        for key, label in cp["topics"].items():
            try:
                mapping[int(key)] = label.strip()
            except ValueError:
                raise ConfigFormatError(f"{path}: topic key {key!r} is not an integer") from None
        lm = cls(mapping)
        if taxonomy is not None:
            lm.validate(taxonomy)
        return lm

    def validate(self, taxonomy: Taxonomy, K: Optional[int] = None) -> None:
        bad = sorted({lab for lab in self.topic_to_label.values() if lab not in taxonomy.directions})
        if bad:
            raise UnknownLabel(f"labels not in taxonomy: {bad}")
        if K is not None:
            missing = [k for k in range(K) if k not in self.topic_to_label]
            if missing:
                raise UnmappedTopic(f"topics without a label: {missing}")


def apply_label_map(assignments: Iterable[tuple[str, int]], label_map: LabelMap,
                    taxonomy: Taxonomy) -> list[tuple[str, str, str]]:
    """(doc_id, topic) pairs -> (doc_id, direction, discipline) rows."""
    rows = []
    for doc_id, topic in assignments:
        try:
            direction = label_map.topic_to_label[int(topic)]
        except KeyError:
            raise UnmappedTopic(f"topic {topic} (document {doc_id!r}) has no label") from None
        if direction not in taxonomy.direction_to_discipline:
            raise UnknownLabel(f"label {direction!r} for topic {topic} is not a taxonomy direction")
        rows.append((doc_id, direction, taxonomy.direction_to_discipline[direction]))
    return rows
