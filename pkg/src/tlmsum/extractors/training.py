"""Training loops for the extractors: bucketed batches, Adam, early stopping on validation loss."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

import torch

from ..corpus import Document
from ..nn.layers import seed_dropout
from ..nn.optim import ParameterStore, TrainConfig, adam_step, lr_schedule
from ..oracle import ExtractLabels
from .models import ExtractorConfig, PointerExtractor, SentenceClassifier, build_extractor, make_batch

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: torch.nn.Module
    store: ParameterStore
    train_losses: list[float] = field(default_factory=list)
    valid_history: list[tuple[int, float, dict]] = field(default_factory=list)
    best_valid_loss: float = float("inf")
    best_update: int = 0
    updates: int = 0


def pair_labels(docs: Sequence[Document], labels) -> list[tuple[int, ...]]:
    """Label indices aligned with ``docs``; ``labels`` is a map or a parallel sequence."""
    out = []
    if isinstance(labels, dict):
        for doc in docs:
            if doc.id not in labels:
                raise KeyError(f"no extract labels for document {doc.id!r}")
            out.append(labels[doc.id])
    else:
        labels = list(labels)
        if len(labels) != len(docs):
            raise ValueError(f"{len(docs)} documents but {len(labels)} label records")
        out = labels
    picks = []
    for doc, lab in zip(docs, out):
        if isinstance(lab, ExtractLabels):
            if lab.doc_id != doc.id:
                raise ValueError(f"label record {lab.doc_id!r} does not match document {doc.id!r}")
            lab.check(doc.num_sentences)
            picks.append(lab.indices)
        else:
            picks.append(tuple(lab))
    return picks


def bucket_batches(lengths: Sequence[int], batch_size: int, rng: random.Random) -> list[list[int]]:
    """Group documents of similar sentence count, then shuffle batch order."""
    order = sorted(range(len(lengths)), key=lambda i: (lengths[i], rng.random()))
    batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    rng.shuffle(batches)
    return batches


@torch.no_grad()
def evaluate(model, docs: Sequence[Document], picks, batch_size: int = 32, pad_id: int = 0):
    model.eval()
    total, count = 0.0, 0
    stats: dict[str, int] = {}
    for i in range(0, len(docs), batch_size):
        batch_docs, batch_picks = docs[i : i + batch_size], picks[i : i + batch_size]
        loss, st = model.loss(make_batch(batch_docs, pad_id), batch_picks)
        total += float(loss) * len(batch_docs)
        count += len(batch_docs)
        for k, v in st.items():
            stats[k] = stats.get(k, 0) + v
    return total / max(count, 1), stats


def summarize_stats(stats: dict) -> dict:
    if "correct" in stats:
        return {"accuracy": stats["correct"] / max(stats["total"], 1)}
    tp, fp, fn = stats["tp"], stats["fp"], stats["fn"]
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return {"precision": p, "recall": r, "f1": 2 * p * r / (p + r) if p + r else 0.0}


def fit(model, train_docs: Sequence[Document], train_picks, valid_docs: Sequence[Document], valid_picks,
        config: TrainConfig, pad_id: int = 0, stop: Callable[[dict], bool] | None = None) -> TrainResult:
    """Generic loop. Every ``eval_every`` updates the validation loss is measured;
    training ends after ``patience`` evaluations without improvement, at
    ``max_updates``, or when ``stop(metrics)`` is true. The best parameters are
    restored at the end."""
    torch.manual_seed(config.seed)
    seed_dropout(model, config.seed + 1)
    rng = random.Random(config.seed)
    store = ParameterStore(model)
    result = TrainResult(model, store)
    best_snap = store.snapshot()
    bad_evals = 0
    lengths = [d.num_sentences for d in train_docs]
    done = False
    while not done:
        for idx in bucket_batches(lengths, config.batch_size, rng):
            model.train()
            batch = make_batch([train_docs[i] for i in idx], pad_id)
            loss, _ = model.loss(batch, [train_picks[i] for i in idx])
            store.zero_grad()
            loss.backward()
            store.clip_grad_norm(config.clip_norm)
            adam_step(store, config, lr_schedule(store.step, config.schedule))
            result.train_losses.append(loss.item())
            result.updates = store.step
            if store.step % config.eval_every == 0 or store.step >= config.max_updates:
                v_loss, v_stats = evaluate(model, valid_docs, valid_picks, config.batch_size, pad_id)
                metrics = summarize_stats(v_stats)
                result.valid_history.append((store.step, v_loss, metrics))
                logger.info("update %d: train %.4f valid %.4f %s", store.step, loss.item(), v_loss, metrics)
                if v_loss < result.best_valid_loss:
                    result.best_valid_loss, result.best_update = v_loss, store.step
                    best_snap = store.snapshot()
                    bad_evals = 0
                else:
                    bad_evals += 1
                if bad_evals >= config.patience or store.step >= config.max_updates or (stop and stop(metrics)):
                    done = True
                    break
    store.restore(best_snap)
    model.eval()
    return result


def _train(kind: str, corpus, labels, config: TrainConfig, model_config: ExtractorConfig,
           valid=None, valid_labels=None, pad_id: int = 0, stop=None) -> TrainResult:
    docs = list(corpus)
    picks = pair_labels(docs, labels)
    # the pointer needs at least one target; the classifier learns from all-negative documents too
    keep = [i for i, p in enumerate(picks) if p or kind == "classifier"]
    if len(keep) < len(docs):
        logger.warning("%d training documents have empty extracts and are skipped", len(docs) - len(keep))
    docs, picks = [docs[i] for i in keep], [picks[i] for i in keep]
    if not docs:
        raise ValueError("no training documents with extract labels")
    if valid is None:
        v_docs, v_picks = docs, picks
    else:
        v_docs = list(valid)
        v_picks = pair_labels(v_docs, valid_labels)
        keep = [i for i, p in enumerate(v_picks) if p or kind == "classifier"]
        v_docs, v_picks = [v_docs[i] for i in keep], [v_picks[i] for i in keep]
    torch.manual_seed(config.seed)
    model = build_extractor(kind, model_config)
    return fit(model, docs, picks, v_docs, v_picks, config, pad_id, stop)


def train_pointer(corpus, labels, config: TrainConfig, model_config: ExtractorConfig, valid=None,
                  valid_labels=None, pad_id: int = 0, stop=None) -> TrainResult:
    """Teacher-forced cross-entropy over the M+1 decoder steps of each document."""
    return _train("pointer", corpus, labels, config, model_config, valid, valid_labels, pad_id, stop)


def train_classifier(corpus, labels, config: TrainConfig, model_config: ExtractorConfig, valid=None,
                     valid_labels=None, pad_id: int = 0, stop=None) -> TrainResult:
    """Per-sentence binary cross-entropy against membership in the label set."""
    return _train("classifier", corpus, labels, config, model_config, valid, valid_labels, pad_id, stop)


__all__ = ["PointerExtractor", "SentenceClassifier", "TrainResult", "evaluate", "fit", "train_classifier",
           "train_pointer"]
