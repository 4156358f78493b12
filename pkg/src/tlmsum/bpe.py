"""Word-internal byte pair encoding.

Words are split on whitespace; the final symbol of every word carries the
``</w>`` end-of-word suffix, so merges never cross word boundaries.
"""

from __future__ import annotations

import hashlib
import heapq
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable

from .corpus import Document

logger = logging.getLogger(__name__)

EOW = "</w>"
FORMAT_VERSION = 1

PAD = "<pad>"
UNK = "<unk>"
DOC_START = "<doc>"
EXTRACT_SEP = "<extract>"
SUMMARY_START = "<summary>"
SUMMARY_END = "</summary>"
REST_SEP = "<rest>"
SPECIAL_TOKENS = (PAD, UNK, DOC_START, EXTRACT_SEP, SUMMARY_START, SUMMARY_END, REST_SEP)


class VocabularyError(ValueError):
    pass


def _word_symbols(word: str) -> tuple[str, ...]:
    return tuple(word[:-1]) + (word[-1] + EOW,)


@dataclass
class Vocabulary:
    merges: list[tuple[str, str]]
    alphabet: list[str]
    token_to_id: dict[str, int] = field(init=False)
    id_to_token: list[str] = field(init=False)

    def __post_init__(self):
        self.id_to_token = []
        self.token_to_id = {}
        for tok in (*SPECIAL_TOKENS, *self.alphabet, *(a + b for a, b in self.merges)):
            if tok not in self.token_to_id:
                self.token_to_id[tok] = len(self.id_to_token)
                self.id_to_token.append(tok)
        self.ranks = {pair: i for i, pair in enumerate(self.merges)}
        self._encode_word = lru_cache(maxsize=65536)(self._encode_word_uncached)

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def special_tokens(self) -> frozenset[str]:
        return frozenset(SPECIAL_TOKENS)

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    @property
    def doc_start_id(self) -> int:
        return self.token_to_id[DOC_START]

    @property
    def extract_sep_id(self) -> int:
        return self.token_to_id[EXTRACT_SEP]

    @property
    def summary_start_id(self) -> int:
        return self.token_to_id[SUMMARY_START]

    @property
    def summary_end_id(self) -> int:
        return self.token_to_id[SUMMARY_END]

    @property
    def rest_sep_id(self) -> int:
        return self.token_to_id[REST_SEP]

    def _apply_merges(self, symbols: tuple[str, ...]) -> tuple[str, ...]:
        word = list(symbols)
        while len(word) > 1:
            best = None
            for pair in zip(word, word[1:]):
                r = self.ranks.get(pair)
                if r is not None and (best is None or r < best[0]):
                    best = (r, pair)
            if best is None:
                break
            a, b = best[1]
            merged, i = [], 0
            while i < len(word):
                if i < len(word) - 1 and word[i] == a and word[i + 1] == b:
                    merged.append(a + b)
                    i += 2
                else:
                    merged.append(word[i])
                    i += 1
            word = merged
        return tuple(word)

    def _encode_word_uncached(self, word: str) -> tuple[int, ...]:
        if word in self.token_to_id and word in SPECIAL_TOKENS:
            return (self.token_to_id[word],)
        unk = self.token_to_id[UNK]
        return tuple(self.token_to_id.get(sym, unk) for sym in self._apply_merges(_word_symbols(word)))

    def encode(self, text: str) -> list[int]:
        out: list[int] = []
        for word in text.split():
            out.extend(self._encode_word(word))
        return out

    def decode(self, ids: Iterable[int]) -> str:
        parts = []
        n = len(self.id_to_token)
        for i in ids:
            i = int(i)
            if not 0 <= i < n:
                raise VocabularyError(f"token id {i} out of range for vocabulary of size {n}")
            tok = self.id_to_token[i]
            if tok in SPECIAL_TOKENS:
                if parts and not parts[-1].endswith(" "):
                    parts.append(" ")
                parts.append(tok + " ")
            elif tok.endswith(EOW):
                parts.append(tok[: -len(EOW)] + " ")
            else:
                parts.append(tok)
        return "".join(parts).strip()

    def tokens(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[int(i)] for i in ids]

    # -- persistence ---------------------------------------------------------

    def dumps(self) -> str:
        lines = [f"#bpe-vocab version={FORMAT_VERSION} num_merges={len(self.merges)}"]
        lines += [f"{a}\t{b}" for a, b in self.merges]
        lines.append(f"#specials count={len(SPECIAL_TOKENS)}")
        lines += list(SPECIAL_TOKENS)
        lines.append(f"#alphabet count={len(self.alphabet)}")
        lines += list(self.alphabet)
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        lines = text.split("\n")
        header = lines[0].split()
        if not header or header[0] != "#bpe-vocab":
            raise VocabularyError("not a vocabulary file")
        fields = dict(kv.split("=", 1) for kv in header[1:])
        if int(fields.get("version", -1)) != FORMAT_VERSION:
            raise VocabularyError(f"unsupported vocabulary version {fields.get('version')}")
        n = int(fields["num_merges"])
        merges = []
        for line in lines[1 : 1 + n]:
            a, b = line.split("\t")
            merges.append((a, b))
        pos = 1 + n
        if not lines[pos].startswith("#specials"):
            raise VocabularyError("missing specials block")
        n_spec = int(lines[pos].split("count=")[1])
        specials = tuple(lines[pos + 1 : pos + 1 + n_spec])
        if specials != SPECIAL_TOKENS:
            raise VocabularyError(f"special tokens differ: {specials}")
        pos += 1 + n_spec
        if not lines[pos].startswith("#alphabet"):
            raise VocabularyError("missing alphabet block")
        n_alpha = int(lines[pos].split("count=")[1])
        alphabet = lines[pos + 1 : pos + 1 + n_alpha]
        return cls(merges, alphabet)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _iter_text(corpus: Iterable[Document]) -> Iterable[str]:
    for doc in corpus:
        for s in doc.sentences:
            yield s.raw
        for s in doc.abstract_sentences:
            yield s.raw


def train_bpe(corpus: Iterable[Document] | Iterable[str], num_merges: int = 4000) -> Vocabulary:
    """Learn ``num_merges`` merges; ties go to the lexicographically smallest pair.

    ``corpus`` may be documents or plain strings. Stops early (with a warning)
    when no mergeable pair is left.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    word_freq: Counter[str] = Counter()
    for item in corpus:
        texts = _iter_text([item]) if isinstance(item, Document) else [item]
        for text in texts:
            word_freq.update(w for w in text.split() if w not in SPECIAL_TOKENS)
    if not word_freq:
        raise VocabularyError("cannot train BPE on a corpus without characters")

    alphabet = set()
    for w in word_freq:
        for ch in w:
            alphabet.add(ch)
            alphabet.add(ch + EOW)

    words = [list(_word_symbols(w)) for w in word_freq]
    freqs = list(word_freq.values())
    pair_counts: Counter[tuple[str, str]] = Counter()
    where: dict[tuple[str, str], set[int]] = defaultdict(set)
    for wi, (sym, f) in enumerate(zip(words, freqs)):
        for pair in zip(sym, sym[1:]):
            pair_counts[pair] += f
            where[pair].add(wi)

    heap = [(-c, pair) for pair, c in pair_counts.items()]
    heapq.heapify(heap)
    merges: list[tuple[str, str]] = []
    while len(merges) < num_merges:
        best = None
        while heap:
            neg, pair = heapq.heappop(heap)
            if pair_counts.get(pair, 0) == -neg and -neg > 0:
                best = pair
                break
        if best is None:
            logger.warning("BPE stopped after %d of %d merges: no pairs left", len(merges), num_merges)
            break
        merges.append(best)
        a, b = best
        touched = set()
        for wi in sorted(where.pop(best, ())):
            sym, f = words[wi], freqs[wi]
            for pair in zip(sym, sym[1:]):
                pair_counts[pair] -= f
                touched.add(pair)
            merged, i = [], 0
            while i < len(sym):
                if i < len(sym) - 1 and sym[i] == a and sym[i + 1] == b:
                    merged.append(a + b)
                    i += 2
                else:
                    merged.append(sym[i])
                    i += 1
            words[wi] = merged
            for pair in zip(merged, merged[1:]):
                pair_counts[pair] += f
                where[pair].add(wi)
                touched.add(pair)
        pair_counts.pop(best, None)
        # stale heap entries are skipped on pop; push the fresh counts
        for pair in touched:
            c = pair_counts.get(pair, 0)
            if c > 0:
                heapq.heappush(heap, (-c, pair))
            else:
                pair_counts.pop(pair, None)
    return Vocabulary(merges, sorted(alphabet))


def tokenize_document(doc: Document, vocab: Vocabulary) -> Document:
    """Fill ``tokens`` of every body and abstract sentence in place; returns ``doc``."""
    for s in doc.sentences:
        s.tokens = vocab.encode(s.raw)
    for s in doc.abstract_sentences:
        s.tokens = vocab.encode(s.raw)
    return doc
