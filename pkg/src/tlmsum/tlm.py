"""Transformer-LM summarizer: document formatting, windowed training and top-k generation.

A formatted document reads::

    <doc> introduction  <extract> s_a <extract> s_b ...  <summary> abstract </summary>  <rest> rest

For news and patent documents the introduction is the whole body and there
is no rest segment.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import torch

from .bpe import Vocabulary
from .corpus import Document
from .nn import ops
from .nn.checkpoint import config_hash, load_checkpoint, save_checkpoint
from .nn.layers import PRESETS, TransformerLM, seed_dropout
from .nn.optim import ParameterStore, ScheduleSpec, TrainConfig, adam_step, lr_schedule
from .oracle import ExtractLabels

logger = logging.getLogger(__name__)

MODES = ("intro_only", "intro_plus_extracts", "whole_doc")
SEGMENTS = ("introduction", "extracts", "abstract", "rest")


class ContextBudgetError(ValueError):
    pass


@dataclass
class FormattedSequence:
    ids: list[int]
    spans: dict[str, tuple[int, int]]  # token ranges [start, end), partitioning ids

    def segment(self, name: str) -> list[int]:
        a, b = self.spans[name]
        return self.ids[a:b]

    def __len__(self) -> int:
        return len(self.ids)


def _flatten(sents) -> list[int]:
    return [t for s in sents for t in s.tokens]


def _intro_and_rest(doc: Document, mode: str):
    if mode == "whole_doc" or doc.domain_tag != "scientific":
        return doc.sentences, []
    intro_idx = set(doc.intro_indices())
    sents = doc.sentences
    return [s for i, s in enumerate(sents) if i in intro_idx], [s for i, s in enumerate(sents) if i not in intro_idx]


def _extract_ids(doc: Document, extracts: ExtractLabels | Sequence[int] | None, vocab: Vocabulary) -> list[int]:
    indices = extracts.indices if isinstance(extracts, ExtractLabels) else tuple(extracts or ())
    sents = doc.sentences
    out = []
    for i in indices:
        if not 0 <= i < len(sents):
            raise IndexError(f"extract index {i} out of range for document {doc.id!r} with {len(sents)} sentences")
        out.append(vocab.extract_sep_id)
        out.extend(sents[i].tokens)
    return out


def format_document(doc: Document, extracts, mode: str, vocab: Vocabulary) -> FormattedSequence:
    """Lay out a tokenized document for language-model training."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    intro, rest = _intro_and_rest(doc, mode)
    parts = {
        "introduction": [vocab.doc_start_id] + _flatten(intro),
        "extracts": _extract_ids(doc, extracts, vocab) if mode == "intro_plus_extracts" else [],
        "abstract": [vocab.summary_start_id] + _flatten(doc.abstract_sentences) + [vocab.summary_end_id],
        "rest": [vocab.rest_sep_id] + _flatten(rest) if rest else [],
    }
    ids, spans = [], {}
    for name in SEGMENTS:
        spans[name] = (len(ids), len(ids) + len(parts[name]))
        ids.extend(parts[name])
    return FormattedSequence(ids, spans)


def segment_content(seq: FormattedSequence, name: str, vocab: Vocabulary) -> list[int]:
    """Tokens of one segment with its structural specials removed."""
    specials = {vocab.doc_start_id, vocab.extract_sep_id, vocab.summary_start_id, vocab.summary_end_id,
                vocab.rest_sep_id}
    return [t for t in seq.segment(name) if t not in specials]


@dataclass
class Window:
    ids: list[int]  # exactly `window` ids, PAD-filled at the end
    real: int  # number of real tokens

    def loss_mask(self) -> list[bool]:
        """Mask over the window-1 next-token targets."""
        return [i + 1 < self.real for i in range(len(self.ids) - 1)]


def segment_windows(seq: FormattedSequence | Sequence[int], window: int, pad_id: int = 0) -> list[Window]:
    if window < 2:
        raise ValueError("window must be >= 2")
    ids = list(seq.ids if isinstance(seq, FormattedSequence) else seq)
    out = []
    for start in range(0, max(len(ids), 1), window):
        chunk = ids[start : start + window]
        out.append(Window(chunk + [pad_id] * (window - len(chunk)), len(chunk)))
    return out


def batch_windows(windows: Sequence[Window]):
    """Stack windows, trimming columns that are padding in every row (exact under causal masking)."""
    width = max(w.real for w in windows)
    width = max(width, 2)
    ids = torch.tensor([w.ids[:width] for w in windows], dtype=torch.long)
    mask = torch.tensor([[i + 1 < w.real for i in range(width - 1)] for w in windows], dtype=torch.bool)
    return ids, mask


def lm_loss(model: TransformerLM, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean next-token cross-entropy over unmasked targets."""
    logits = model(ids[:, :-1])
    return ops.cross_entropy(logits, ids[:, 1:], mask)


@torch.no_grad()
def token_losses(model: TransformerLM, ids: Sequence[int]) -> list[float]:
    """Per-position negative log-likelihood of ids[1:] given the prefix."""
    model.eval()
    x = torch.tensor([list(ids)], dtype=torch.long)
    logits = model(x[:, :-1])
    return ops.cross_entropy(logits, x[:, 1:], reduction="none")[0].tolist()


@dataclass(frozen=True)
class TLMConfig:
    vocab_size: int
    dim: int = 128
    layers: int = 4
    heads: int = 4
    window: int = 256
    mlp_dim: int | None = None
    dropout: float = 0.1

    def build(self) -> TransformerLM:
        return TransformerLM(self.vocab_size, self.dim, self.layers, self.heads, self.window, self.mlp_dim,
                             self.dropout)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def preset(cls, vocab_size: int, scale: str = "desk", **overrides) -> "TLMConfig":
        return cls(vocab_size, **{**PRESETS[scale], **overrides})


def default_tlm_train_config(max_updates: int = 2000, **overrides) -> TrainConfig:
    warmup = max(1, max_updates // 20)
    base = dict(schedule=ScheduleSpec(1e-3, warmup, max_updates - warmup, "warmup_cosine"), weight_decay=0.0,
                batch_size=16, dropout=0.1, max_updates=max_updates, eval_every=100, patience=10**6)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class TLMResult:
    model: TransformerLM
    store: ParameterStore
    losses: list[float] = field(default_factory=list)
    initial_loss: float = float("nan")
    updates: int = 0


def build_windows(docs: Sequence[Document], labels: dict | None, mode: str, vocab: Vocabulary,
                  window: int) -> list[Window]:
    windows = []
    for doc in docs:
        extracts = None
        if mode == "intro_plus_extracts":
            if labels is None or doc.id not in labels:
                raise KeyError(f"mode {mode} needs extract labels for document {doc.id!r}")
            extracts = labels[doc.id]
        windows.extend(segment_windows(format_document(doc, extracts, mode, vocab), window, vocab.pad_id))
    return windows


def train_tlm(corpus: Sequence[Document], labels: dict | None, mode: str, vocab: Vocabulary,
              model_config: TLMConfig, config: TrainConfig, labels_source: str = "oracle",
              stop: Callable[[int, float], bool] | None = None, check_every: int = 50) -> TLMResult:
    """Train on per-document non-overlapping windows.

    ``stop(update, full_train_loss)`` is consulted every ``check_every`` updates
    with the dropout-free mean loss over all training windows.
    """
    if labels_source not in ("oracle", "model"):
        raise ValueError("labels_source must be 'oracle' or 'model'")
    windows = build_windows(corpus, labels, mode, vocab, model_config.window)
    torch.manual_seed(config.seed)
    model = model_config.build()
    seed_dropout(model, config.seed + 1)
    store = ParameterStore(model)
    result = TLMResult(model, store)
    result.initial_loss = corpus_loss(model, windows)
    rng = random.Random(config.seed)
    order: list[int] = []
    while store.step < config.max_updates:
        if len(order) < config.batch_size:
            perm = list(range(len(windows)))
            rng.shuffle(perm)
            order.extend(perm)
        idx, order = order[: config.batch_size], order[config.batch_size :]
        model.train()
        ids, mask = batch_windows([windows[i] for i in idx])
        loss = lm_loss(model, ids, mask)
        store.zero_grad()
        loss.backward()
        store.clip_grad_norm(config.clip_norm)
        adam_step(store, config, lr_schedule(store.step, config.schedule))
        result.losses.append(loss.item())
        if stop is not None and store.step % check_every == 0:
            full = corpus_loss(model, windows)
            logger.info("tlm update %d: batch %.4f full %.4f", store.step, loss.item(), full)
            if stop(store.step, full):
                break
    result.updates = store.step
    model.eval()
    return result


@torch.no_grad()
def corpus_loss(model: TransformerLM, windows: Sequence[Window], batch_size: int = 32) -> float:
    """Token-weighted mean next-token loss with dropout off."""
    model.eval()
    total, count = 0.0, 0
    for i in range(0, len(windows), batch_size):
        ids, mask = batch_windows(windows[i : i + batch_size])
        n = int(mask.sum())
        if n:
            total += float(lm_loss(model, ids, mask)) * n
            count += n
    return total / max(count, 1)


def save_tlm(result_or_store, path, model_config: TLMConfig, vocab: Vocabulary, extra: dict | None = None):
    store = getattr(result_or_store, "store", result_or_store)
    meta = {"kind": "tlm", "model_config": model_config.to_dict(), **(extra or {})}
    return save_checkpoint(store, path, meta, config_hash(meta), vocab.hash)


def load_tlm(path, vocab: Vocabulary | None = None, strict: bool = True) -> TransformerLM:
    ckpt = load_checkpoint(path, expected_vocab_hash=vocab.hash if vocab else None, strict=strict)
    if ckpt.meta.get("kind") != "tlm":
        raise ValueError(f"{path} is not a language-model checkpoint")
    model = TLMConfig(**ckpt.meta["model_config"]).build()
    ckpt.load_into(model)
    model.eval()
    return model


# -- inference -----------------------------------------------------------------


def build_inference_context(doc: Document, extracts, mode: str, vocab: Vocabulary, window: int,
                            max_new_tokens: int = 0) -> list[int]:
    """Conditioning prefix ending in the summary-start token.

    When it does not fit in ``window - max_new_tokens`` the introduction is
    cut from its tail; extracts are never cut.
    """
    seq = format_document(doc, extracts, mode, vocab)
    intro = seq.segment("introduction")
    ext = seq.segment("extracts")
    budget = window - max_new_tokens
    fixed = 1 + len(ext) + 1  # <doc> ... <summary>
    if fixed > budget:
        raise ContextBudgetError(
            f"extracts for {doc.id!r} need {fixed} tokens but the budget is {budget}; use fewer extracts"
        )
    intro = intro[: budget - len(ext) - 1]
    return intro + ext + [vocab.summary_start_id]


@dataclass(frozen=True)
class GenerationConfig:
    top_k: int = 30
    temperature: float = 0.7
    max_new_tokens: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")


def top_k_distribution(logits: torch.Tensor, top_k: int, temperature: float):
    """Candidate ids (exactly k by rank, lower id first on ties) and their renormalised probabilities."""
    k = min(top_k, logits.shape[-1])
    order = torch.sort(logits, descending=True, stable=True).indices[:k]
    probs = ops.softmax(logits[order].double() / temperature)
    return order, probs


def doc_seed(root: int, doc_id: str) -> int:
    return int.from_bytes(hashlib.sha256(f"{root}:{doc_id}".encode()).digest()[:8], "little")


@torch.no_grad()
def generate_summary(model: TransformerLM, context: Sequence[int], gen: GenerationConfig, vocab: Vocabulary,
                     trace: list | None = None) -> list[int]:
    """Top-k sampling until ``</summary>`` or ``max_new_tokens``; returns the new tokens without the stop token.

    ``trace``, when given, receives (candidate ids, probabilities, chosen id) per step.
    """
    if not context or context[-1] != vocab.summary_start_id:
        raise ValueError("context must end with the summary-start token")
    model.eval()
    g = torch.Generator().manual_seed(gen.seed)
    ids = list(context)
    out: list[int] = []
    for _ in range(gen.max_new_tokens):
        x = torch.tensor([ids[-model.window :]], dtype=torch.long)
        logits = model(x)[0, -1]
        cand, probs = top_k_distribution(logits, gen.top_k, gen.temperature)
        if len(cand) == 1:
            choice = int(cand[0])
        else:
            choice = int(cand[torch.multinomial(probs, 1, generator=g)])
        if trace is not None:
            trace.append((cand.tolist(), probs.tolist(), choice))
        if choice == vocab.summary_end_id:
            break
        out.append(choice)
        ids.append(choice)
    return out


def default_max_new_tokens(docs: Sequence[Document]) -> int:
    """1.5 times the mean abstract length in tokens (plus the stop token)."""
    lengths = [len(_flatten(d.abstract_sentences)) for d in docs]
    return max(1, math.ceil(1.5 * sum(lengths) / max(len(lengths), 1))) + 1
