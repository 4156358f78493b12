"""Inference-time extraction: pointer beam search, classifier top-k, Lead-k."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from ..corpus import Document
from ..nn import ops
from ..oracle import ExtractLabels
from .models import DocBatch, EncodedDocs, PointerExtractor, SentenceClassifier, make_batch


@dataclass
class Hypothesis:
    picks: tuple[int, ...]  # emitted indices, stop index excluded
    score: float
    finished: bool = False


def _key(h: Hypothesis):
    return (-h.score, h.picks)


@torch.no_grad()
def beam_search(model: PointerExtractor, memory: EncodedDocs, beam_width: int = 4,
                max_steps: int | None = None) -> Hypothesis:
    """Best hypothesis for a single encoded document (batch of one).

    A hypothesis stops when it repeats its previous index; one that reaches
    ``max_steps`` emissions (default N) without stopping is closed as-is.
    Scores are summed log-probabilities without length normalisation.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    n = int(memory.mask[0].sum())
    max_steps = n if max_steps is None else max_steps
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    alive = [Hypothesis((), 0.0)]
    states = model.initial_state(1, memory.s)
    finished: list[Hypothesis] = []
    for t in range(1, max_steps + 1):
        k = len(alive)
        mem = EncodedDocs(memory.s.expand(k, -1, -1), memory.d.expand(k, -1, -1), memory.mask.expand(k, -1))
        prev = torch.stack([memory.s[0, h.picks[-1]] if h.picks else memory.s.new_zeros(memory.s.shape[-1])
                            for h in alive])
        scores, _, new_states = model.step(mem, prev, states)
        logp = ops.log_softmax(scores, dim=-1, mask=mem.mask)[:, :n].tolist()
        candidates = []
        for hi, h in enumerate(alive):
            for i in range(n):
                score = h.score + logp[hi][i]
                if h.picks and i == h.picks[-1]:
                    candidates.append((Hypothesis(h.picks, score, True), hi))
                elif t == max_steps:
                    candidates.append((Hypothesis(h.picks + (i,), score, True), hi))
                else:
                    candidates.append((Hypothesis(h.picks + (i,), score), hi))
        candidates.sort(key=lambda c: _key(c[0]))
        keep = candidates[:beam_width]
        finished.extend(h for h, _ in keep if h.finished)
        nxt = [(h, hi) for h, hi in keep if not h.finished]
        if not nxt:
            break
        best_done = min(finished, key=_key) if finished else None
        # extensions only lower the score, so a finished leader cannot be overtaken
        if best_done is not None and best_done.score >= max(h.score for h, _ in nxt):
            break
        alive = [h for h, _ in nxt]
        states = new_states.select(torch.tensor([hi for _, hi in nxt]))
    return min(finished, key=_key)


def beam_search_extract(model: PointerExtractor, doc: Document, beam_width: int = 4,
                        max_steps: int | None = None, pad_id: int = 0) -> ExtractLabels:
    model.eval()
    with torch.no_grad():
        memory = model.encoder(make_batch([doc], pad_id))
    best = beam_search(model, memory, beam_width, max_steps)
    return ExtractLabels.from_picks(doc.id, best.picks)


@torch.no_grad()
def classifier_forward(model: SentenceClassifier, doc: Document | DocBatch, pad_id: int = 0) -> list[float]:
    model.eval()
    batch = doc if isinstance(doc, DocBatch) else make_batch([doc], pad_id)
    probs = model(batch)
    return probs[0, : batch.lengths[0]].tolist()


def select_top_k(probs: Sequence[float], k: int, doc_id: str = "") -> ExtractLabels:
    if k < 1:
        raise ValueError("k must be >= 1")
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
    return ExtractLabels(doc_id, tuple(sorted(order[:k])))


def lead_k_extract(doc: Document, k: int = 10) -> ExtractLabels:
    if k < 1:
        raise ValueError("k must be >= 1")
    return ExtractLabels(doc.id, tuple(range(min(k, doc.num_sentences))))


def extract_documents(model, docs: Sequence[Document], method: str, k: int = 1, beam_width: int = 4,
                      pad_id: int = 0) -> list[ExtractLabels]:
    out = []
    for doc in docs:
        if method == "pointer":
            out.append(beam_search_extract(model, doc, beam_width, pad_id=pad_id))
        elif method == "classifier":
            out.append(select_top_k(classifier_forward(model, doc, pad_id), k, doc.id))
        elif method == "lead":
            out.append(lead_k_extract(doc, k))
        else:
            raise ValueError(f"unknown extraction method {method!r}")
    return out
