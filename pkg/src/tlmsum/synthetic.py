"""Seeded synthetic corpora with known structure, for training smoke tests and demos."""

from __future__ import annotations

import random
import string

from .corpus import INTRODUCTION, Document, Section, Sentence

MARKER = "zqxmark"


def pseudo_words(n: int, rng: random.Random, min_len: int = 3, max_len: int = 7,
                 alphabet: str = string.ascii_lowercase, exclude=()) -> list[str]:
    words, seen = [], set(exclude)
    while len(words) < n:
        w = "".join(rng.choice(alphabet) for _ in range(rng.randint(min_len, max_len)))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def marker_corpus(num_docs: int, seed: int = 0, vocab_size: int = 120, min_sents: int = 6,
                  max_sents: int = 12, min_marked: int = 2, max_marked: int = 3,
                  words_per_sentence: tuple[int, int] = (4, 9), prefix: str = "doc"):
    """Documents whose labelled sentences carry a marker token.

    Returns (documents, labels) where labels[i] are the marked sentence indices.
    The abstract restates the marked sentences.
    """
    rng = random.Random(seed)
    vocab = pseudo_words(vocab_size, random.Random(1234), exclude=(MARKER,))
    docs, labels = [], []
    for k in range(num_docs):
        n = rng.randint(min_sents, max_sents)
        marked = sorted(rng.sample(range(n), rng.randint(min_marked, max_marked)))
        sents = []
        for i in range(n):
            words = [rng.choice(vocab) for _ in range(rng.randint(*words_per_sentence))]
            if i in marked:
                words.insert(rng.randrange(len(words) + 1), MARKER)
            sents.append(Sentence(" ".join(words)))
        split = rng.randint(1, max(1, n // 3))
        sections = [Section(INTRODUCTION, sents[:split]), Section("body", sents[split:])]
        abstract = [Sentence(sents[i].raw) for i in marked]
        docs.append(Document(f"{prefix}{k:04d}", sections, abstract, "scientific"))
        labels.append(tuple(marked))
    return docs, labels


def key_sentence_corpus(num_docs: int, seed: int = 0, num_entities: int = 40, num_relations: int = 6,
                        intro_sents: int = 3, body_sents: tuple[int, int] = (6, 9), num_keys: int = 3,
                        prefix: str = "kdoc"):
    """Scientific-style documents whose abstract paraphrases three key body sentences.

    Key sentence: ``we observe that <e1> <relation> <e2> in the experiments``.
    Abstract sentence: ``<e1> <paraphrased relation> <e2> .``
    Filler sentences use a vocabulary disjoint from the abstract, and the key
    sentences sit after the introduction, so the introduction carries no
    information about the abstract.
    """
    rng = random.Random(seed)
    vocab_rng = random.Random(4321)
    entities = pseudo_words(num_entities, vocab_rng, 4, 6)
    relations = pseudo_words(num_relations, vocab_rng, 5, 7, exclude=entities)
    paraphrase = dict(zip(relations, pseudo_words(num_relations, vocab_rng, 5, 7,
                                                  exclude=entities + relations)))
    template = ["we", "observe", "that"]
    tail = ["in", "the", "experiments"]
    used = set(entities) | set(relations) | set(paraphrase.values()) | set(template) | set(tail)
    filler = pseudo_words(150, vocab_rng, 3, 6, exclude=used)
    docs = []
    for k in range(num_docs):
        intro = [Sentence(" ".join(rng.choice(filler) for _ in range(rng.randint(5, 8))))
                 for _ in range(intro_sents)]
        n_body = rng.randint(*body_sents)
        body = [" ".join(rng.choice(filler) for _ in range(rng.randint(5, 8))) for _ in range(n_body)]
        slots = sorted(rng.sample(range(n_body), num_keys))
        abstract = []
        for slot in slots:
            e1, e2 = rng.sample(entities, 2)
            rel = rng.choice(relations)
            body[slot] = " ".join(template + [e1, rel, e2] + tail)
            abstract.append(Sentence(f"{e1} {paraphrase[rel]} {e2} ."))
        sections = [Section(INTRODUCTION, intro), Section("results", [Sentence(s) for s in body])]
        docs.append(Document(f"{prefix}{k:04d}", sections, abstract, "scientific"))
    return docs
