"""Document model, corpus loading and corpus statistics.

Records are line-delimited JSON objects::

    {"id": "...", "domain": "scientific",
     "sections": [{"name": "introduction", "sentences": ["...", ...]}, ...],
     "abstract": ["...", ...]}

Sentences arrive pre-segmented; this module never splits text into sentences.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

logger = logging.getLogger(__name__)

DOMAINS = ("scientific", "news", "patent")
SPLITS = ("train", "valid", "test")
INTRODUCTION = "introduction"

_WS = re.compile(r"\s+")


class CorpusError(ValueError):
    """Malformed corpus input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass
class Sentence:
    raw: str
    tokens: list[int] = field(default_factory=list)

    def words(self) -> list[str]:
        return self.raw.split()


@dataclass
class Section:
    name: str
    sentences: list[Sentence]


@dataclass
class Document:
    id: str
    sections: list[Section]
    abstract_sentences: list[Sentence]
    domain_tag: str = "scientific"

    def __post_init__(self):
        if not self.sections:
            raise CorpusError(f"document {self.id!r} has no sections")
        if self.domain_tag not in DOMAINS:
            raise CorpusError(f"document {self.id!r}: unknown domain {self.domain_tag!r}")
        has_intro = any(s.name == INTRODUCTION for s in self.sections)
        if has_intro != (self.domain_tag == "scientific"):
            raise CorpusError(
                f"document {self.id!r}: an {INTRODUCTION!r} section must be present "
                f"exactly when the domain is scientific (domain={self.domain_tag})"
            )

    @property
    def sentences(self) -> list[Sentence]:
        """All body sentences in document order (the extractor's S_1..S_N)."""
        return [s for sec in self.sections for s in sec.sentences]

    @property
    def num_sentences(self) -> int:
        return sum(len(sec.sentences) for sec in self.sections)

    def introduction(self) -> list[Sentence]:
        """The conditioning prefix: the introduction, or the whole body outside science."""
        if self.domain_tag != "scientific":
            return self.sentences
        for sec in self.sections:
            if sec.name == INTRODUCTION:
                return list(sec.sentences)
        return []

    def intro_indices(self) -> list[int]:
        if self.domain_tag != "scientific":
            return list(range(self.num_sentences))
        out, i = [], 0
        for sec in self.sections:
            for _ in sec.sentences:
                if sec.name == INTRODUCTION:
                    out.append(i)
                i += 1
        return out

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "domain": self.domain_tag,
            "sections": [
                {"name": sec.name, "sentences": [s.raw for s in sec.sentences]}
                for sec in self.sections
            ],
            "abstract": [s.raw for s in self.abstract_sentences],
        }


@dataclass(frozen=True)
class NormalizeConfig:
    lowercase: bool = True
    unicode_form: str = "NFC"


def normalize_text(text: str, config: NormalizeConfig = NormalizeConfig()) -> str:
    text = unicodedata.normalize(config.unicode_form, text)
    text = _WS.sub(" ", text).strip()
    if config.lowercase:
        text = text.lower()
    return text


def _sentences(items, norm: NormalizeConfig, line: int, what: str) -> list[Sentence]:
    if not isinstance(items, list) or not all(isinstance(x, str) for x in items):
        raise CorpusError(f"{what} must be an array of strings", line)
    out = []
    for raw in items:
        text = normalize_text(raw, norm)
        if text:
            out.append(Sentence(text))
    return out


def document_from_record(record: dict, norm: NormalizeConfig = NormalizeConfig(),
                         line: int | None = None) -> Document | None:
    """Build a Document from one parsed record; returns None when the abstract is empty."""
    if not isinstance(record, dict):
        raise CorpusError("record is not an object", line)
    doc_id = record.get("id")
    if not isinstance(doc_id, str):
        raise CorpusError("missing or non-string 'id'", line)
    domain = record.get("domain", "scientific")
    if domain not in DOMAINS:
        raise CorpusError(f"unknown domain {domain!r}", line)
    raw_sections = record.get("sections")
    if not isinstance(raw_sections, list) or not raw_sections:
        raise CorpusError("'sections' must be a non-empty array", line)
    sections = []
    for sec in raw_sections:
        if not isinstance(sec, dict) or not isinstance(sec.get("name"), str):
            raise CorpusError("section must be an object with a string 'name'", line)
        name = normalize_text(sec["name"], NormalizeConfig(lowercase=True))
        sections.append(Section(name, _sentences(sec.get("sentences"), norm, line, "section sentences")))
    abstract = _sentences(record.get("abstract", []), norm, line, "'abstract'")
    if not abstract:
        return None
    try:
        return Document(doc_id, sections, abstract, domain)
    except CorpusError as exc:
        raise CorpusError(str(exc), line) from None


class CorpusReader:
    """Iterable over the documents of one record file.

    Each iteration re-reads the file, so passes are independent and
    deterministic. ``skipped`` counts records dropped during the most recent
    pass (empty or missing abstract).
    """

    def __init__(self, path: Path, split: str = "train", norm: NormalizeConfig = NormalizeConfig()):
        self.path = Path(path)
        self.split = split
        self.norm = norm
        self.skipped = 0

    def __iter__(self) -> Iterator[Document]:
        self.skipped = 0
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"invalid JSON ({exc.msg})", lineno) from None
                doc = document_from_record(record, self.norm, lineno)
                if doc is None:
                    self.skipped += 1
                    logger.warning("%s:%d: empty abstract, document skipped", self.path, lineno)
                    continue
                yield doc


def load_corpus(path, split: str = "train", norm: NormalizeConfig = NormalizeConfig()) -> CorpusReader:
    """Open a corpus for streaming.

    ``path`` is either a record file or a directory holding ``{split}.jsonl``.
    """
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    path = Path(path)
    if path.is_dir():
        path = path / f"{split}.jsonl"
    if not path.exists():
        raise FileNotFoundError(path)
    return CorpusReader(path, split, norm)


def write_corpus(docs: Iterable[Document], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_record(), ensure_ascii=False) + "\n")
            n += 1
    return n


def truncate_for_extractor(doc: Document, max_sentences: int = 300,
                           max_tokens_per_sentence: int = 35) -> Document:
    """Keep the first ``max_sentences`` body sentences and clip each token list.

    Returns a copy; ``raw`` text is left whole so word-level scoring still
    sees the full sentence.
    """
    budget = max_sentences
    sections = []
    for sec in doc.sections:
        kept = []
        for sent in sec.sentences[:max(budget, 0)]:
            kept.append(Sentence(sent.raw, list(sent.tokens[:max_tokens_per_sentence])))
        budget -= len(kept)
        sections.append(Section(sec.name, kept))
    abstract = [Sentence(s.raw, list(s.tokens)) for s in doc.abstract_sentences]
    return Document(doc.id, sections, abstract, doc.domain_tag)


def truncate_corpus(docs: Iterable[Document], max_sentences: int = 300,
                    max_tokens_per_sentence: int = 35) -> Iterator[Document]:
    """Truncate every document, dropping those left with an empty body."""
    for doc in docs:
        out = truncate_for_extractor(doc, max_sentences, max_tokens_per_sentence)
        if out.num_sentences == 0:
            logger.warning("document %s has an empty body after truncation, dropped", doc.id)
            continue
        yield out


@dataclass(frozen=True)
class CorpusStats:
    num_documents: int
    mean_doc_words: float
    mean_summary_words: float
    mean_summary_sentences: float
    compression_ratio: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def corpus_stats(corpus: Iterable[Document]) -> CorpusStats:
    n = doc_words = sum_words = sum_sents = 0
    for doc in corpus:
        n += 1
        doc_words += sum(len(s.words()) for s in doc.sentences)
        sum_words += sum(len(s.words()) for s in doc.abstract_sentences)
        sum_sents += len(doc.abstract_sentences)
    if n == 0:
        raise CorpusError("corpus is empty")
    mean_doc = doc_words / n
    mean_sum = sum_words / n
    ratio = mean_doc / mean_sum if mean_sum else float("inf")
    return CorpusStats(n, mean_doc, mean_sum, sum_sents / n, ratio)


def summary_k(stats: CorpusStats) -> int:
    """Number of sentences the classifier selects: rounded mean summary length, at least 1."""
    return max(1, int(round(stats.mean_summary_sentences)))


# -- conversion from the public arXiv/PubMed release -------------------------

_TAG = re.compile(r"</?s>", re.IGNORECASE)


def convert_release_record(record: dict, domain: str = "scientific") -> dict:
    """Map a record with ``article_text``/``abstract_text`` fields into our schema.

    When ``sections``/``section_names`` are present they are kept; the first
    section whose name mentions "introduction" (or else the first section) is
    renamed to ``introduction`` for scientific documents.
    """
    if "article_text" not in record and "sections" not in record:
        raise CorpusError("record has neither 'article_text' nor 'sections'")
    doc_id = str(record.get("article_id", record.get("id", "")))
    abstract = [_TAG.sub("", s).strip() for s in record.get("abstract_text", [])]
    names = record.get("section_names")
    bodies = record.get("sections")
    if names and bodies and len(names) == len(bodies):
        sections = [{"name": str(n), "sentences": list(b)} for n, b in zip(names, bodies)]
    else:
        sections = [{"name": "body", "sentences": list(record.get("article_text", []))}]
    if domain == "scientific":
        idx = next((i for i, s in enumerate(sections) if "introduction" in s["name"].lower()), 0)
        sections[idx]["name"] = INTRODUCTION
        for i, s in enumerate(sections):
            if i != idx and s["name"].strip().lower() == INTRODUCTION:
                s["name"] = f"{s['name']} ({i})"
    else:
        for s in sections:
            if s["name"].strip().lower() == INTRODUCTION:
                s["name"] = "body"
    return {"id": doc_id, "domain": domain, "sections": sections, "abstract": abstract}


def convert_release_file(src, dst, domain: str = "scientific") -> int:
    n = 0
    with open(src, encoding="utf-8") as fin, open(dst, "w", encoding="utf-8") as fout:
        for lineno, line in enumerate(fin, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                out = convert_release_record(record, domain)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"invalid JSON ({exc.msg})", lineno) from None
            except CorpusError as exc:
                raise CorpusError(str(exc), lineno) from None
            fout.write(json.dumps(out, ensure_ascii=False) + "\n")
            n += 1
    return n
