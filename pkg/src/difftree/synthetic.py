"""Generators for synthetic fixtures with known ground truth."""
from __future__ import annotations

import numpy as np

from .topics import TokenDoc


def separated_topic_corpus(n_docs, n_topics, words_per_topic=30, doc_length=(40, 80),
                           mixing=0.0, seed=0):
    """Documents drawn from topics with disjoint vocabularies.

    Each document has one generative topic; with ``mixing`` > 0 that share of
    its tokens comes from the other topics instead. Returns (docs, labels).
    """
    rng = np.random.default_rng(seed)
    V = n_topics * words_per_topic
    # Zipf-ish word weights inside each topic block
    weights = 1.0 / np.arange(1, words_per_topic + 1)
    weights /= weights.sum()
    labels = rng.integers(0, n_topics, size=n_docs)
    docs = []
    for d in range(n_docs):
        n = int(rng.integers(doc_length[0], doc_length[1] + 1))
        topics = np.full(n, labels[d])
        if mixing > 0 and n_topics > 1:
            swap = rng.random(n) < mixing
            others = rng.integers(0, n_topics - 1, size=n)
            others[others >= labels[d]] += 1
            topics = np.where(swap, others, topics)
        offsets = rng.choice(words_per_topic, size=n, p=weights)
        tokens = topics * words_per_topic + offsets
        docs.append(TokenDoc(f"d{d}", tuple(int(t) for t in tokens)))
    return docs, labels, V
