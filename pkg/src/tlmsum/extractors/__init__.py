"""Extractive models: hierarchical sentence pointer, sentence classifier and Lead-k."""

from __future__ import annotations

from ..nn.checkpoint import config_hash, load_checkpoint, save_checkpoint
from .decode import (beam_search, beam_search_extract, classifier_forward, extract_documents, lead_k_extract,
                     select_top_k)
from .models import (DocBatch, EncodedDocs, ExtractorConfig, HierarchicalEncoder, PointerExtractor,
                     SentenceClassifier, build_extractor, dot_attention, make_batch, preset_config)
from .training import TrainResult, train_classifier, train_pointer


def save_extractor(result_or_store, path, kind: str, model_config: ExtractorConfig, vocab_hash: str | None = None,
                   extra: dict | None = None):
    store = getattr(result_or_store, "store", result_or_store)
    meta = {"kind": kind, "model_config": model_config.to_dict(), **(extra or {})}
    return save_checkpoint(store, path, meta, config_hash(meta), vocab_hash)


def load_extractor(path, vocab_hash: str | None = None, strict: bool = True):
    ckpt = load_checkpoint(path, expected_vocab_hash=vocab_hash, strict=strict)
    kind = ckpt.meta["kind"]
    model = build_extractor(kind, ExtractorConfig(**ckpt.meta["model_config"]))
    ckpt.load_into(model)
    model.eval()
    return model


__all__ = [
    "DocBatch", "EncodedDocs", "ExtractorConfig", "HierarchicalEncoder", "PointerExtractor", "SentenceClassifier",
    "TrainResult", "beam_search", "beam_search_extract", "build_extractor", "classifier_forward", "dot_attention",
    "extract_documents", "lead_k_extract", "load_extractor", "make_batch", "preset_config", "save_extractor",
    "select_top_k", "train_classifier", "train_pointer",
]
