"""Hierarchical LSTM document encoder, sentence pointer and sentence classifier."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Sequence

import torch
from torch import nn

from ..corpus import Document
from ..nn import ops
from ..nn.layers import INIT_STD, BiLSTM, Dropout, Embedding, Linear, LSTMCell


@dataclass(frozen=True)
class ExtractorConfig:
    vocab_size: int
    emb_dim: int = 32
    hidden: int = 64
    layers: int = 2
    dropout: float = 0.1
    init_std: float = INIT_STD

    def to_dict(self) -> dict:
        return asdict(self)


EXTRACTOR_PRESETS = {
    "desk": dict(emb_dim=32, hidden=64, layers=2, dropout=0.3, init_std=0.1),
    "paper": dict(emb_dim=300, hidden=512, layers=2, dropout=0.5),
}


def preset_config(vocab_size: int, scale: str = "desk", **overrides) -> ExtractorConfig:
    return replace(ExtractorConfig(vocab_size, **EXTRACTOR_PRESETS[scale]), **overrides)


@dataclass
class DocBatch:
    """Documents flattened for the two-level encoder.

    ``tokens``/``tok_mask`` hold every sentence of every document, row-wise;
    ``sent_rows`` (B, N_max) maps each document slot to its sentence row.
    """

    tokens: torch.Tensor
    tok_mask: torch.Tensor
    sent_rows: torch.Tensor
    sent_mask: torch.Tensor
    lengths: list[int]


def make_batch(docs: Sequence[Document], pad_id: int = 0, unk_id: int = 1) -> DocBatch:
    rows: list[list[int]] = []
    lengths = []
    for doc in docs:
        sents = doc.sentences
        if not sents:
            raise ValueError(f"document {doc.id!r} has no sentences")
        lengths.append(len(sents))
        rows.extend(list(s.tokens) or [unk_id] for s in sents)
    T = max(len(r) for r in rows)
    tokens = torch.full((len(rows), T), pad_id, dtype=torch.long)
    tok_mask = torch.zeros((len(rows), T), dtype=torch.bool)
    for i, r in enumerate(rows):
        tokens[i, : len(r)] = torch.tensor(r, dtype=torch.long)
        tok_mask[i, : len(r)] = True
    n_max = max(lengths)
    sent_rows = torch.zeros((len(docs), n_max), dtype=torch.long)
    sent_mask = torch.zeros((len(docs), n_max), dtype=torch.bool)
    start = 0
    for b, n in enumerate(lengths):
        sent_rows[b, :n] = torch.arange(start, start + n)
        sent_mask[b, :n] = True
        start += n
    return DocBatch(tokens, tok_mask, sent_rows, sent_mask, lengths)


@dataclass
class EncodedDocs:
    s: torch.Tensor  # (B, N, sentence width)
    d: torch.Tensor  # (B, N, document width)
    mask: torch.Tensor  # (B, N)


class HierarchicalEncoder(nn.Module):
    """Token-level biLSTM per sentence, then a sentence-level biLSTM over the document."""

    def __init__(self, config: ExtractorConfig):
        super().__init__()
        c = config
        self.embed = Embedding(c.vocab_size, c.emb_dim, std=c.init_std)
        self.word_rnn = BiLSTM(c.emb_dim, c.hidden, c.layers, c.dropout, c.init_std)
        self.sent_rnn = BiLSTM(2 * c.hidden, c.hidden, c.layers, c.dropout, c.init_std)
        self.drop = Dropout(c.dropout)

    @property
    def sent_dim(self) -> int:
        return self.word_rnn.out_dim

    @property
    def doc_dim(self) -> int:
        return self.sent_rnn.out_dim

    def forward(self, batch: DocBatch) -> EncodedDocs:
        x = self.drop(self.embed(batch.tokens))
        _, (h_f, h_b) = self.word_rnn(x, batch.tok_mask)
        sent_emb = ops.concat([h_f, h_b], dim=-1)
        s = sent_emb[batch.sent_rows] * batch.sent_mask.unsqueeze(-1).to(sent_emb.dtype)
        d, _ = self.sent_rnn(self.drop(s), batch.sent_mask)
        return EncodedDocs(s, d, batch.sent_mask)


def dot_attention(d: torch.Tensor, h: torch.Tensor, mask: torch.Tensor | None = None):
    """Scores d_i . h, attention weights over sentences and the context vector.

    d (B, N, D), h (B, D) -> scores (B, N), weights (B, N), context (B, D).
    """
    if d.shape[0] != h.shape[0] or d.shape[-1] != h.shape[-1]:
        raise ops.ShapeError("dot_attention", d.shape, h.shape)
    scores = ops.matmul(d, h.unsqueeze(-1)).squeeze(-1)
    weights = ops.softmax(scores, dim=-1, mask=mask)
    context = ops.matmul(weights.unsqueeze(1), d).squeeze(1)
    return scores, weights, context


@dataclass
class DecoderState:
    layers: list[tuple[torch.Tensor, torch.Tensor]]
    h_tilde: torch.Tensor

    def select(self, index: torch.Tensor) -> "DecoderState":
        return DecoderState([(h[index], c[index]) for h, c in self.layers], self.h_tilde[index])


class PointerExtractor(nn.Module):
    """Sequence-to-sequence pointer over sentences with Luong dot attention and input feeding."""

    kind = "pointer"

    def __init__(self, config: ExtractorConfig):
        super().__init__()
        self.config = config
        self.encoder = HierarchicalEncoder(config)
        dec_hidden = self.encoder.doc_dim  # must match d_i for dot-product scores
        self.dec_hidden = dec_hidden
        self.input_dim = self.encoder.sent_dim + dec_hidden
        self.decoder = nn.ModuleList(
            LSTMCell(self.input_dim if i == 0 else dec_hidden, dec_hidden, config.init_std)
            for i in range(config.layers)
        )
        self.w_htilde = Linear(self.encoder.doc_dim + dec_hidden, dec_hidden, bias=False, std=config.init_std)
        self.drop = Dropout(config.dropout)

    def initial_state(self, batch_size: int, like: torch.Tensor) -> DecoderState:
        z = like.new_zeros(batch_size, self.dec_hidden)
        return DecoderState([(z, z) for _ in self.decoder], z)

    def step(self, memory: EncodedDocs, prev_emb: torch.Tensor, state: DecoderState):
        """One decoder step. Returns (scores, attention distribution, next state)."""
        x = ops.concat([prev_emb, state.h_tilde], dim=-1)
        new_layers = []
        for i, (cell, st) in enumerate(zip(self.decoder, state.layers)):
            if i > 0:
                x = self.drop(x)
            h, c = cell(x, st)
            new_layers.append((h, c))
            x = h
        scores, weights, context = dot_attention(memory.d, x, memory.mask)
        h_tilde = self.w_htilde(ops.concat([context, x], dim=-1))
        return scores, weights, DecoderState(new_layers, h_tilde)

    def teacher_forced(self, memory: EncodedDocs, picks: Sequence[Sequence[int]]):
        """Scores for every decoder step under teacher forcing.

        Inputs are 0, s_{i_1}, ..., s_{i_M}; targets i_1, ..., i_M, i_M.
        Returns scores (B, M_max+1, N), targets (B, M_max+1), step mask.
        """
        B, N, _ = memory.s.shape
        steps = max(len(p) for p in picks) + 1
        targets = torch.zeros((B, steps), dtype=torch.long)
        step_mask = torch.zeros((B, steps), dtype=torch.bool)
        for b, p in enumerate(picks):
            if not p:
                raise ValueError("teacher forcing needs at least one extracted sentence per document")
            seq = list(p) + [p[-1]]
            targets[b, : len(seq)] = torch.tensor(seq)
            step_mask[b, : len(seq)] = True
        state = self.initial_state(B, memory.s)
        prev = memory.s.new_zeros(B, memory.s.shape[-1])
        all_scores = []
        arange = torch.arange(B)
        for t in range(steps):
            scores, _, state = self.step(memory, prev, state)
            all_scores.append(scores)
            prev = memory.s[arange, targets[:, t]]
        return torch.stack(all_scores, dim=1), targets, step_mask

    def loss(self, batch: DocBatch, picks: Sequence[Sequence[int]]):
        memory = self.encoder(batch)
        scores, targets, step_mask = self.teacher_forced(memory, picks)
        logit_mask = memory.mask.unsqueeze(1).expand_as(scores)
        loss = ops.cross_entropy(scores, targets, step_mask, logit_mask)
        masked = scores.masked_fill(~logit_mask, float("-inf"))
        correct = ((masked.argmax(-1) == targets) & step_mask).sum().item()
        return loss, {"correct": correct, "total": int(step_mask.sum())}


class SentenceClassifier(nn.Module):
    """Per-sentence inclusion probability from the sentence state and a pooled document vector."""

    kind = "classifier"

    def __init__(self, config: ExtractorConfig):
        super().__init__()
        self.config = config
        self.encoder = HierarchicalEncoder(config)
        D = self.encoder.doc_dim
        self.doc_proj = Linear(D, D, std=config.init_std)  # W_d, b_d
        self.out = Linear(2 * D, 1, std=config.init_std)  # W_o, b_o

    def head(self, d: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Pre-sigmoid scores (B, N) from document representations d (B, N, D)."""
        pooled = ops.tanh(self.doc_proj(ops.mean(d, dim=1, mask=mask)))
        pooled = pooled.unsqueeze(1).expand_as(d)
        return self.out(ops.concat([d, pooled], dim=-1)).squeeze(-1)

    def logits(self, batch: DocBatch) -> torch.Tensor:
        memory = self.encoder(batch)
        return self.head(memory.d, memory.mask)

    def forward(self, batch: DocBatch) -> torch.Tensor:
        return ops.sigmoid(self.logits(batch))

    def loss(self, batch: DocBatch, picks: Sequence[Sequence[int]]):
        logits = self.logits(batch)
        targets = torch.zeros_like(logits)
        for b, p in enumerate(picks):
            targets[b, list(p)] = 1.0
        loss = ops.binary_cross_entropy_logits(logits, targets, batch.sent_mask)
        pred = (logits > 0) & batch.sent_mask
        gold = targets.bool() & batch.sent_mask
        stats = {
            "tp": int((pred & gold).sum()),
            "fp": int((pred & ~gold).sum()),
            "fn": int((~pred & gold).sum()),
        }
        return loss, stats


def build_extractor(kind: str, config: ExtractorConfig) -> nn.Module:
    if kind == "pointer":
        return PointerExtractor(config)
    if kind == "classifier":
        return SentenceClassifier(config)
    raise ValueError(f"unknown extractor kind {kind!r}")
