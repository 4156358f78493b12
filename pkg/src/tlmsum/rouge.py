"""Full-length ROUGE-N and ROUGE-L F1 with bootstrap corpus aggregation.

Defaults: no stemming, no stopword removal, summary-level LCS over the
concatenated token sequences. Union-LCS (per reference sentence), stemming
and stopword removal are available as options.
"""

from __future__ import annotations

import csv
import io
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

_WORD = re.compile(r"\w+")

VARIANTS = ("rouge-1", "rouge-2", "rouge-3", "rouge-l")


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False

    @classmethod
    def from_pr(cls, p: float, r: float, degenerate: bool = False) -> "RougeScore":
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f, degenerate)

    @classmethod
    def from_counts(cls, hits: int, cand_total: int, ref_total: int) -> "RougeScore":
        """Scores from match counts. F1 is 2h/(c+r), one rounding, so equal ratios compare equal."""
        p = hits / cand_total if cand_total else 0.0
        r = hits / ref_total if ref_total else 0.0
        f = 2 * hits / (cand_total + ref_total) if hits else 0.0
        return cls(p, r, f)


ZERO = RougeScore(0.0, 0.0, 0.0, True)


@dataclass(frozen=True)
class RougeOptions:
    stem: bool = False
    remove_stopwords: bool = False
    union_lcs: bool = False


def tokenize(text: str, options: RougeOptions = RougeOptions()) -> list[str]:
    """Word tokens for scoring; case is left as the corpus normalization produced it."""
    toks = _WORD.findall(text)
    if options.remove_stopwords:
        try:
            from sklearn.feature_extraction.text import ENGLISH_STOP_WORDS
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise RuntimeError("stopword removal requires the 'scikit-learn' package") from exc

        toks = [t for t in toks if t.lower() not in ENGLISH_STOP_WORDS]
    if options.stem:
        try:
            from nltk.stem.porter import PorterStemmer
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise RuntimeError("stemming requires the 'nltk' package") from exc
        stemmer = PorterStemmer()
        toks = [stemmer.stem(t) for t in toks]
    return toks


def ngram_counts(tokens: Sequence, n: int) -> Counter:
    if n < 1:
        raise ValueError("n must be >= 1")
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence, reference: Sequence, n: int) -> RougeScore:
    cand = ngram_counts(candidate, n)
    ref = ngram_counts(reference, n)
    c_total, r_total = sum(cand.values()), sum(ref.values())
    if c_total == 0 and r_total == 0:
        return ZERO
    return RougeScore.from_counts(sum((cand & ref).values()), c_total, r_total)


def lcs_length(a: Sequence, b: Sequence) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def _lcs_positions(a: Sequence, b: Sequence) -> set[int]:
    """Indices of ``b`` on one longest common subsequence of ``a`` and ``b``."""
    m, n = len(a), len(b)
    table = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m):
        for j in range(n):
            table[i + 1][j + 1] = table[i][j] + 1 if a[i] == b[j] else max(table[i][j + 1], table[i + 1][j])
    out, i, j = set(), m, n
    while i > 0 and j > 0:
        if a[i - 1] == b[j - 1]:
            out.add(j - 1)
            i, j = i - 1, j - 1
        elif table[i - 1][j] >= table[i][j - 1]:
            i -= 1
        else:
            j -= 1
    return out


def rouge_l(candidate: Sequence, reference: Sequence) -> RougeScore:
    if not candidate or not reference:
        return ZERO
    return RougeScore.from_counts(lcs_length(candidate, reference), len(candidate), len(reference))


def rouge_l_union(candidate_sents: Sequence[Sequence], reference_sents: Sequence[Sequence]) -> RougeScore:
    """Summary-level union-LCS variant: per reference sentence, union of LCS hits over candidate sentences."""
    cand_len = sum(len(s) for s in candidate_sents)
    ref_len = sum(len(s) for s in reference_sents)
    if not cand_len or not ref_len:
        return ZERO
    hits = 0
    for ref in reference_sents:
        union: set[int] = set()
        for cand in candidate_sents:
            union |= _lcs_positions(cand, ref)
        hits += len(union)
    return RougeScore.from_counts(hits, cand_len, ref_len)


def score_all(candidate: Sequence, reference: Sequence) -> dict[str, RougeScore]:
    return {
        "rouge-1": rouge_n(candidate, reference, 1),
        "rouge-2": rouge_n(candidate, reference, 2),
        "rouge-3": rouge_n(candidate, reference, 3),
        "rouge-l": rouge_l(candidate, reference),
    }


def score_texts(candidate: str | list[str], reference: str | list[str],
                options: RougeOptions = RougeOptions()) -> dict[str, RougeScore]:
    """Score raw text. Lists of strings are treated as sentence lists."""
    cand_sents = [candidate] if isinstance(candidate, str) else list(candidate)
    ref_sents = [reference] if isinstance(reference, str) else list(reference)
    cand_tok = [tokenize(s, options) for s in cand_sents]
    ref_tok = [tokenize(s, options) for s in ref_sents]
    flat_c = [t for s in cand_tok for t in s]
    flat_r = [t for s in ref_tok for t in s]
    scores = score_all(flat_c, flat_r)
    if options.union_lcs:
        scores["rouge-l"] = rouge_l_union(cand_tok, ref_tok)
    return scores


@dataclass
class CorpusRougeReport:
    scores: dict[str, RougeScore]
    ci: dict[str, float]
    num_pairs: int
    num_degenerate: int = 0
    per_pair: list[dict[str, RougeScore]] = field(default_factory=list, repr=False)

    @property
    def ci_halfwidth(self) -> float:
        return max(self.ci.values()) if self.ci else 0.0

    def to_dict(self) -> dict:
        return {
            "num_pairs": self.num_pairs,
            "num_degenerate": self.num_degenerate,
            "ci_halfwidth": self.ci_halfwidth,
            "variants": {
                v: {"precision": s.precision, "recall": s.recall, "f1": s.f1, "ci": self.ci[v]}
                for v, s in self.scores.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_rows(self, model: str = "") -> list[list]:
        return [[model, v, s.precision, s.recall, s.f1, self.ci[v]] for v, s in self.scores.items()]

    def to_csv(self, model: str = "") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "variant", "precision", "recall", "f1", "ci_halfwidth"])
        w.writerows(self.csv_rows(model))
        return buf.getvalue()

    def format_table(self, model: str = "") -> str:
        """One table row: F1 in percent for ROUGE-1/2/3/L, cells separated by &."""
        cells = " & ".join(f"{100 * self.scores[v].f1:.2f}" for v in VARIANTS if v in self.scores)
        return f"{model} & {cells}"


def corpus_rouge(pairs: Sequence[tuple[Sequence, Sequence]], resamples: int = 1000,
                 seed: int = 0, confidence: float = 0.95) -> CorpusRougeReport:
    """Mean per-pair scores with a seeded bootstrap percentile interval on mean F1.

    ``pairs`` holds (candidate tokens, reference tokens).
    """
    if not pairs:
        raise ValueError("corpus_rouge needs at least one pair")
    per_pair = [score_all(c, r) for c, r in pairs]
    return aggregate(per_pair, resamples, seed, confidence)


def aggregate(per_pair: list[dict[str, RougeScore]], resamples: int = 1000, seed: int = 0,
              confidence: float = 0.95) -> CorpusRougeReport:
    if not per_pair:
        raise ValueError("no scores to aggregate")
    n = len(per_pair)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(resamples, n)) if n > 1 else None
    means, ci = {}, {}
    alpha = (1 - confidence) / 2
    for v in per_pair[0]:
        p = np.array([s[v].precision for s in per_pair])
        r = np.array([s[v].recall for s in per_pair])
        f = np.array([s[v].f1 for s in per_pair])
        # fixed-order summation keeps results independent of how pairs were scored
        means[v] = RougeScore(float(np.sum(p) / n), float(np.sum(r) / n), float(np.sum(f) / n))
        if idx is None or np.all(f == f[0]):
            ci[v] = 0.0
        else:
            boot = f[idx].mean(axis=1)
            lo, hi = np.quantile(boot, [alpha, 1 - alpha])
            ci[v] = float(max(hi - lo, 0.0) / 2)
    degenerate = sum(1 for s in per_pair if any(x.degenerate for x in s.values()))
    return CorpusRougeReport(means, ci, n, degenerate, per_pair)
