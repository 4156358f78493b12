"""Ground-truth extractive labels by ROUGE matching against the abstract."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from . import rouge
from .corpus import Document


@dataclass(frozen=True)
class ExtractLabels:
    doc_id: str
    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"extract indices for {self.doc_id!r} must be strictly increasing: {idx}")
        if idx and idx[0] < 0:
            raise ValueError(f"negative extract index for {self.doc_id!r}")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def from_picks(cls, doc_id: str, picks: Iterable[int]) -> "ExtractLabels":
        return cls(doc_id, tuple(sorted(set(picks))))

    def check(self, num_sentences: int) -> None:
        if self.indices and self.indices[-1] >= num_sentences:
            raise IndexError(
                f"extract index {self.indices[-1]} out of range for {self.doc_id!r} with {num_sentences} sentences"
            )

    def to_record(self) -> dict:
        return {"id": self.doc_id, "indices": list(self.indices)}


def sentence_score(variant: str, cand: list[str], ref: list[str]) -> float:
    if variant == "rouge-l":
        return rouge.rouge_l(cand, ref).f1
    if variant.startswith("rouge-"):
        return rouge.rouge_n(cand, ref, int(variant.split("-")[1])).f1
    raise ValueError(f"unknown ROUGE variant {variant!r}")


def top_matches(scores: list[float], per_sentence: int = 2) -> list[int]:
    """Indices of the best positive scores; ties go to the lower index."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return [i for i in order[:per_sentence] if scores[i] > 0]


def build_oracle_labels(doc: Document, score: str = "rouge-1", per_sentence: int = 2) -> ExtractLabels:
    """For each abstract sentence pick its two best-matching document sentences.

    Matching uses the F1 of ``score`` between word tokens; abstract sentences
    with no overlap contribute nothing. The union is returned sorted.
    """
    body = [rouge.tokenize(s.raw) for s in doc.sentences]
    if len(body) < per_sentence:
        return ExtractLabels(doc.id, tuple(range(len(body))))
    picks: set[int] = set()
    for abs_sent in doc.abstract_sentences:
        ref = rouge.tokenize(abs_sent.raw)
        scores = [sentence_score(score, cand, ref) for cand in body]
        picks.update(top_matches(scores, per_sentence))
    return ExtractLabels.from_picks(doc.id, picks)


def write_labels(labels: Iterable[ExtractLabels], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for lab in labels:
            fh.write(json.dumps(lab.to_record()) + "\n")
            n += 1
    return n


def read_labels(path) -> Iterator[ExtractLabels]:
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                yield ExtractLabels(str(rec["id"]), tuple(rec["indices"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad labels record ({exc})") from None


def load_label_map(path) -> dict[str, ExtractLabels]:
    return {lab.doc_id: lab for lab in read_labels(path)}
