"""Staged, resumable experiment runs.

A run directory holds every artifact a run produces. Each stage records a
fingerprint of its parameters and input files in ``stages/<name>.json``; a
stage whose outputs exist and whose fingerprint is unchanged is skipped, so a
rerun only recomputes what is stale or missing.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import torch

from . import rouge
from .bpe import Vocabulary, tokenize_document, train_bpe
from .copying import CopyInput, plot_profiles, profile_corpus, write_profiles_csv
from .corpus import (CorpusError, Document, NormalizeConfig, corpus_stats, load_corpus, summary_k,
                     truncate_for_extractor)
from .extractors import (extract_documents, load_extractor, preset_config, save_extractor, train_classifier,
                         train_pointer)
from .nn import ScheduleSpec, TrainConfig
from .nn.checkpoint import config_hash, load_checkpoint
from .oracle import ExtractLabels, build_oracle_labels, load_label_map, write_labels
from .tlm import (ContextBudgetError, GenerationConfig, TLMConfig, build_inference_context, default_max_new_tokens,
                  default_tlm_train_config, doc_seed, generate_summary, load_tlm, save_tlm, train_tlm)

logger = logging.getLogger(__name__)

EXTRACTIVE = {"Sent-PTR": "pointer", "Sent-CLF": "classifier", "Lead-k": "lead"}
# variant -> (formatting mode, extracts used for training, extracts used at inference)
ABSTRACTIVE = {
    "TLM-I": ("intro_only", None, None),
    "TLM-I+E (G,M)": ("intro_plus_extracts", "oracle", "model"),
    "TLM-I+E (M,M)": ("intro_plus_extracts", "model", "model"),
    "TLM-I+E (G,G)": ("intro_plus_extracts", "oracle", "oracle"),
}
ALL_VARIANTS = (*EXTRACTIVE, *ABSTRACTIVE)


class ArtifactMissingError(RuntimeError):
    def __init__(self, path, stage: str):
        self.path, self.stage = Path(path), stage
        super().__init__(f"missing artifact {self.path}; run the '{stage}' stage first ({stage_command(stage)})")


def stage_command(stage: str) -> str:
    """The CLI invocation that produces a stage's outputs."""
    name, _, rest = stage.partition(":")
    if name == "extract" and rest:
        split, method = rest.split(":")
        return f"tlmsum extract --split {split} --method {method}"
    if name == "train-extractor" and rest:
        return f"tlmsum train-extractor {rest}"
    if name == "train-tlm" and rest:
        variant = next((v for v in ABSTRACTIVE if tlm_tag(v) == rest), rest)
        return f"tlmsum train-tlm --variant '{variant}'"
    if name == "generate" and rest:
        return f"tlmsum generate --variant '{rest}'"
    return f"tlmsum {name}"


class ConfigError(ValueError):
    pass


# -- configuration ---------------------------------------------------------------


@dataclass
class DataSection:
    dir: str = "data"
    lowercase: bool = True
    max_sentences: int = 300
    max_tokens_per_sentence: int = 35


@dataclass
class ExtractorSection:
    model_extractor: str = "pointer"
    batch_size: int = 8
    lr: float = 1e-3
    weight_decay: float = 1e-5
    eval_every: int = 50
    patience: int = 10
    max_updates: int = 2000
    beam_width: int = 4
    classifier_k: int | None = None  # None: rounded mean abstract length in sentences
    lead_k: int = 10
    model: dict = field(default_factory=dict)  # overrides of the scale preset


@dataclass
class TLMSection:
    max_updates: int = 2000
    batch_size: int = 16
    lr: float = 1e-3
    warmup_steps: int | None = None
    model: dict = field(default_factory=dict)


@dataclass
class GenerationSection:
    top_k: int = 30
    temperature: float = 0.7
    max_new_tokens: int | None = None  # None: 1.5x mean training abstract length


@dataclass
class EvaluationSection:
    split: str = "test"
    resamples: int = 1000
    copy_n_max: int = 25


@dataclass
class RunConfig:
    seed: int = 0
    scale: str = "desk"
    variants: list[str] = field(default_factory=lambda: list(ALL_VARIANTS))
    bpe_merges: int = 4000
    data: DataSection = field(default_factory=DataSection)
    extractor: ExtractorSection = field(default_factory=ExtractorSection)
    tlm: TLMSection = field(default_factory=TLMSection)
    generation: GenerationSection = field(default_factory=GenerationSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    def __post_init__(self):
        unknown = [v for v in self.variants if v not in ALL_VARIANTS]
        if unknown:
            raise ConfigError(f"unknown variants {unknown}; choose from {list(ALL_VARIANTS)}")
        if self.scale not in ("desk", "paper"):
            raise ConfigError(f"scale must be 'desk' or 'paper', got {self.scale!r}")
        if self.extractor.model_extractor not in ("pointer", "classifier"):
            raise ConfigError("extractor.model_extractor must be 'pointer' or 'classifier'")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        sections = {"data": DataSection, "extractor": ExtractorSection, "tlm": TLMSection,
                    "generation": GenerationSection, "evaluation": EvaluationSection}
        top = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in d.items():
            if key not in top:
                raise ConfigError(f"unknown config key {key!r}")
            if key in sections:
                if not isinstance(value, dict):
                    raise ConfigError(f"[{key}] must be a table")
                allowed = {f.name for f in dataclasses.fields(sections[key])}
                bad = set(value) - allowed
                if bad:
                    raise ConfigError(f"unknown keys in [{key}]: {sorted(bad)}")
                kwargs[key] = sections[key](**value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib
        with open(path, "rb") as fh:
            try:
                return cls.from_dict(tomllib.load(fh))
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())


def stage_seed(root: int, stage: str) -> int:
    """Independent seed for one stage, derived from the run's root seed."""
    return int.from_bytes(hashlib.sha256(f"{root}/{stage}".encode()).digest()[:4], "little")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- the run -----------------------------------------------------------------------


@dataclass
class Stage:
    name: str
    inputs: Callable[[], list[Path]]
    outputs: Callable[[], list[Path]]
    params: Callable[[], dict]
    run: Callable[[], None]
    # stage producing each input, for error messages
    producers: dict[str, str] = field(default_factory=dict)


class Run:
    def __init__(self, config: RunConfig, out_dir, data_dir=None):
        self.config = config
        self.out = Path(out_dir)
        self.data_dir = Path(data_dir or config.data.dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.timings: dict[str, float] = {}
        self._docs: dict[str, list[Document]] = {}
        self._vocab: Vocabulary | None = None
        self.stages = self._build_stages()

    # paths ----------------------------------------------------------------
    def split_file(self, split: str) -> Path:
        return self.data_dir / f"{split}.jsonl"

    @property
    def vocab_path(self) -> Path:
        return self.out / "vocab.txt"

    def labels_path(self, split: str) -> Path:
        return self.out / "labels" / f"{split}.oracle.jsonl"

    def extractor_path(self, kind: str) -> Path:
        return self.out / "extractors" / f"{kind}.ckpt"

    def extracts_path(self, split: str, method: str) -> Path:
        return self.out / "extracts" / f"{split}.{method}.jsonl"

    def tlm_path(self, tag: str) -> Path:
        return self.out / "tlm" / f"{tag}.ckpt"

    def generations_path(self, variant: str) -> Path:
        return self.out / "generations" / f"{slug(variant)}.jsonl"

    @property
    def report_path(self) -> Path:
        return self.out / "report.json"

    # data -----------------------------------------------------------------
    def docs(self, split: str) -> list[Document]:
        if split not in self._docs:
            path = self.split_file(split)
            if not path.exists():
                raise CorpusError(f"data split not found: {path}")
            docs = list(load_corpus(path, split, NormalizeConfig(lowercase=self.config.data.lowercase)))
            if not docs:
                raise CorpusError(f"{path} holds no usable documents")
            self._docs[split] = docs
        return self._docs[split]

    def vocab(self) -> Vocabulary:
        if self._vocab is None:
            self._require(self.vocab_path, "train-bpe")
            self._vocab = Vocabulary.load(self.vocab_path)
        return self._vocab

    def tokenized(self, split: str) -> list[Document]:
        vocab = self.vocab()
        return [tokenize_document(d, vocab) for d in self.docs(split)]

    def truncated(self, split: str) -> list[Document]:
        c = self.config.data
        return [truncate_for_extractor(d, c.max_sentences, c.max_tokens_per_sentence) for d in self.tokenized(split)]

    def _require(self, path: Path, stage: str) -> Path:
        if not path.exists():
            raise ArtifactMissingError(path, stage)
        return path

    def labels(self, split: str) -> dict[str, ExtractLabels]:
        return load_label_map(self._require(self.labels_path(split), "make-labels"))

    def extracts(self, split: str, method: str) -> dict[str, ExtractLabels]:
        return load_label_map(self._require(self.extracts_path(split, method), "extract"))

    # stage machinery -------------------------------------------------------
    def _fingerprint(self, stage: Stage) -> str:
        h = hashlib.sha256(json.dumps(stage.params(), sort_keys=True, default=str).encode())
        for path in stage.inputs():
            h.update(str(path.name).encode())
            h.update(file_digest(path).encode())
        return h.hexdigest()

    def _meta_path(self, name: str) -> Path:
        return self.out / "stages" / f"{slug(name)}.json"

    def is_current(self, stage: Stage) -> bool:
        meta = self._meta_path(stage.name)
        if not meta.exists() or not all(p.exists() for p in stage.outputs()):
            return False
        if any(not p.exists() for p in stage.inputs()):
            return False
        return json.loads(meta.read_text()).get("fingerprint") == self._fingerprint(stage)

    def run_stage(self, name: str, force: bool = False) -> bool:
        """Run one stage if stale. Returns True when it actually ran."""
        stage = self.stages[name]
        for path in stage.inputs():
            if not path.exists():
                producer = stage.producers.get(str(path), "an upstream")
                raise ArtifactMissingError(path, producer)
        if not force and self.is_current(stage):
            logger.info("stage %s is up to date", name)
            return False
        if self._meta_path(name).exists():
            logger.info("stage %s: inputs or config changed, recomputing", name)
        logger.info("running stage %s", name)
        t0 = time.time()
        stage.run()
        self.timings[name] = time.time() - t0
        meta = {"stage": name, "fingerprint": self._fingerprint(stage), "config_hash": self.config.hash,
                "seconds": self.timings[name], "outputs": [str(p.relative_to(self.out)) for p in stage.outputs()]}
        self._meta_path(name).parent.mkdir(parents=True, exist_ok=True)
        self._meta_path(name).write_text(json.dumps(meta, indent=2, sort_keys=True))
        return True

    def plan(self) -> list[str]:
        """Stage names needed for the configured variants, in dependency order."""
        variants = self.config.variants
        want_model = self.config.extractor.model_extractor
        names = ["train-bpe", "make-labels"]
        extractors, extract_jobs, tlms = [], [], []
        for v in variants:
            if v in EXTRACTIVE and EXTRACTIVE[v] != "lead":
                extractors.append(EXTRACTIVE[v])
                extract_jobs.append(("test", EXTRACTIVE[v]))
            elif v == "Lead-k":
                extract_jobs.append(("test", "lead"))
            elif v in ABSTRACTIVE:
                _, train_src, infer_src = ABSTRACTIVE[v]
                if "model" in (train_src, infer_src):
                    extractors.append(want_model)
                    extract_jobs.append(("test", want_model))
                if train_src == "model":
                    extract_jobs.append(("train", want_model))
                tlms.append(tlm_tag(v))
        names += [f"train-extractor:{k}" for k in dict.fromkeys(extractors)]
        names += [f"extract:{s}:{m}" for s, m in dict.fromkeys(extract_jobs)]
        names += [f"train-tlm:{t}" for t in dict.fromkeys(tlms)]
        names += [f"generate:{v}" for v in variants if v in ABSTRACTIVE]
        names += ["evaluate", "analyze-copying"]
        return names

    def run_all(self, force: bool = False) -> dict:
        for name in self.plan():
            self.run_stage(name, force)
        return json.loads(self.report_path.read_text())

    # stage definitions ------------------------------------------------------
    def _build_stages(self) -> dict[str, Stage]:
        c = self.config
        stages: dict[str, Stage] = {}

        def add(stage: Stage):
            stages[stage.name] = stage

        splits = ("train", "valid", "test")
        add(Stage("train-bpe", lambda: [self.split_file("train")], lambda: [self.vocab_path],
                  lambda: {"merges": c.bpe_merges, "lowercase": c.data.lowercase}, self._train_bpe))
        add(Stage("make-labels", lambda: [self.split_file(s) for s in splits],
                  lambda: [self.labels_path(s) for s in splits],
                  lambda: {"data": dataclasses.asdict(c.data)}, self._make_labels))
        for kind in ("pointer", "classifier"):
            add(Stage(f"train-extractor:{kind}",
                      lambda: [self.vocab_path, *(self.split_file(s) for s in ("train", "valid")),
                               *(self.labels_path(s) for s in ("train", "valid"))],
                      lambda kind=kind: [self.extractor_path(kind)],
                      lambda kind=kind: {"kind": kind, "scale": c.scale, "seed": stage_seed(c.seed, kind),
                                         "data": dataclasses.asdict(c.data),
                                         "extractor": self._extractor_params()},
                      lambda kind=kind: self._train_extractor(kind),
                      self._producers()))
        for split in splits:
            for method in ("pointer", "classifier", "lead"):
                inputs = (lambda split=split: [self.split_file(split), self.split_file("train")]) if method == "lead" \
                    else (lambda split=split, method=method: [self.vocab_path, self.split_file(split),
                                                              self.extractor_path(method)])
                add(Stage(f"extract:{split}:{method}", inputs,
                          lambda split=split, method=method: [self.extracts_path(split, method)],
                          lambda method=method: {"method": method, "beam": c.extractor.beam_width,
                                                 "k": c.extractor.classifier_k, "lead_k": c.extractor.lead_k,
                                                 "data": dataclasses.asdict(c.data)},
                          lambda split=split, method=method: self._extract(split, method),
                          self._producers()))
        for variant in ABSTRACTIVE:
            tag = tlm_tag(variant)
            add(Stage(f"train-tlm:{tag}", lambda tag=tag: self._tlm_inputs(tag),
                      lambda tag=tag: [self.tlm_path(tag)],
                      lambda tag=tag: {"tag": tag, "scale": c.scale, "seed": stage_seed(c.seed, f"tlm/{tag}"),
                                       "tlm": dataclasses.asdict(c.tlm)},
                      lambda tag=tag: self._train_tlm(tag), self._producers()))
            add(Stage(f"generate:{variant}", lambda v=variant: self._generate_inputs(v),
                      lambda v=variant: [self.generations_path(v)],
                      lambda v=variant: {"variant": v, "seed": stage_seed(c.seed, "generate"),
                                         "generation": dataclasses.asdict(c.generation),
                                         "split": c.evaluation.split},
                      lambda v=variant: self._generate(v), self._producers()))
        add(Stage("evaluate", self._evaluate_inputs, lambda: [self.report_path, self.out / "rouge.csv"],
                  lambda: {"evaluation": dataclasses.asdict(c.evaluation), "variants": c.variants,
                           "lead_k": c.extractor.lead_k}, self._evaluate, self._producers()))
        add(Stage("analyze-copying", self._copy_inputs,
                  lambda: [self.out / "copying.csv", self.out / "copying.svg"],
                  lambda: {"n_max": c.evaluation.copy_n_max, "variants": c.variants},
                  self._analyze_copying, self._producers()))
        return stages

    def _producers(self) -> dict[str, str]:
        out = {str(self.vocab_path): "train-bpe"}
        for s in ("train", "valid", "test"):
            out[str(self.labels_path(s))] = "make-labels"
            out[str(self.split_file(s))] = "convert-data"
            for m in ("pointer", "classifier", "lead"):
                out[str(self.extracts_path(s, m))] = f"extract:{s}:{m}"
        for k in ("pointer", "classifier"):
            out[str(self.extractor_path(k))] = f"train-extractor:{k}"
        for v in ABSTRACTIVE:
            out[str(self.tlm_path(tlm_tag(v)))] = f"train-tlm:{tlm_tag(v)}"
            out[str(self.generations_path(v))] = f"generate:{v}"
        out[str(self.report_path)] = "evaluate"
        return out

    # individual stages -----------------------------------------------------
    def _train_bpe(self):
        vocab = train_bpe(self.docs("train"), self.config.bpe_merges)
        vocab.save(self.vocab_path)
        self._vocab = None

    def _make_labels(self):
        c = self.config.data
        for split in ("train", "valid", "test"):
            docs = [truncate_for_extractor(d, c.max_sentences, c.max_tokens_per_sentence) for d in self.docs(split)]
            path = self.labels_path(split)
            path.parent.mkdir(parents=True, exist_ok=True)
            labels = [build_oracle_labels(d) for d in docs]
            empty = sum(1 for lab in labels if not lab.indices)
            if empty:
                logger.warning("%s: %d documents have no sentence overlapping the abstract", split, empty)
            write_labels(labels, path)

    def _extractor_params(self) -> dict:
        return dataclasses.asdict(self.config.extractor)

    def _train_extractor(self, kind: str):
        c = self.config
        e = c.extractor
        vocab = self.vocab()
        model_cfg = preset_config(len(vocab), c.scale, **e.model)
        train_cfg = TrainConfig(schedule=ScheduleSpec(e.lr, 0, 0, "constant"), weight_decay=e.weight_decay,
                                batch_size=e.batch_size, dropout=model_cfg.dropout, seed=stage_seed(c.seed, kind),
                                eval_every=e.eval_every, patience=e.patience, max_updates=e.max_updates)
        fn = train_pointer if kind == "pointer" else train_classifier
        res = fn(self.truncated("train"), self.labels("train"), train_cfg, model_cfg, valid=self.truncated("valid"),
                 valid_labels=self.labels("valid"), pad_id=vocab.pad_id)
        path = self.extractor_path(kind)
        path.parent.mkdir(parents=True, exist_ok=True)
        last = res.valid_history[-1][2] if res.valid_history else {}
        save_extractor(res, path, kind, model_cfg, vocab.hash,
                       {"run_config_hash": c.hash, "best_valid_loss": res.best_valid_loss,
                        "best_update": res.best_update, "updates": res.updates, "valid_metrics": last})

    def summary_k(self) -> int:
        if self.config.extractor.classifier_k:
            return self.config.extractor.classifier_k
        return summary_k(corpus_stats(self.docs("train")))

    def _extract(self, split: str, method: str):
        e = self.config.extractor
        if method == "lead":
            labels = extract_documents(None, self.docs(split), "lead", k=e.lead_k)
        else:
            vocab = self.vocab()
            model = load_extractor(self._require(self.extractor_path(method), f"train-extractor:{method}"),
                                   vocab.hash)
            labels = extract_documents(model, self.truncated(split), method, k=self.summary_k(),
                                       beam_width=e.beam_width, pad_id=vocab.pad_id)
        path = self.extracts_path(split, method)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_labels(labels, path)

    def _tlm_inputs(self, tag: str) -> list[Path]:
        paths = [self.vocab_path, self.split_file("train")]
        if tag == "extracts_oracle":
            paths.append(self.labels_path("train"))
        elif tag == "extracts_model":
            paths.append(self.extracts_path("train", self.config.extractor.model_extractor))
        return paths

    def tlm_config(self) -> TLMConfig:
        return TLMConfig.preset(len(self.vocab()), self.config.scale, **self.config.tlm.model)

    def _train_tlm(self, tag: str):
        c = self.config
        t = c.tlm
        vocab = self.vocab()
        mode = "intro_only" if tag == "intro_only" else "intro_plus_extracts"
        labels = None
        if tag == "extracts_oracle":
            labels = self.labels("train")
        elif tag == "extracts_model":
            labels = self.extracts("train", c.extractor.model_extractor)
        overrides = dict(batch_size=t.batch_size, seed=stage_seed(c.seed, f"tlm/{tag}"))
        train_cfg = default_tlm_train_config(t.max_updates, **overrides)
        warmup = t.warmup_steps if t.warmup_steps is not None else train_cfg.schedule.warmup_steps
        train_cfg = dataclasses.replace(train_cfg, schedule=ScheduleSpec(t.lr, warmup, max(t.max_updates - warmup, 0)))
        model_cfg = self.tlm_config()
        res = train_tlm(self.tokenized("train"), labels, mode, vocab, model_cfg, train_cfg,
                        labels_source="model" if tag == "extracts_model" else "oracle")
        path = self.tlm_path(tag)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_tlm(res, path, model_cfg, vocab, {"run_config_hash": c.hash, "mode": mode, "tag": tag,
                                               "initial_loss": res.initial_loss,
                                               "final_loss": res.losses[-1] if res.losses else None})

    def _inference_source(self, variant: str) -> str | None:
        infer = ABSTRACTIVE[variant][2]
        if infer == "model":
            return self.config.extractor.model_extractor
        return infer

    def _generate_inputs(self, variant: str) -> list[Path]:
        split = self.config.evaluation.split
        paths = [self.vocab_path, self.split_file("train"), self.split_file(split), self.tlm_path(tlm_tag(variant))]
        src = self._inference_source(variant)
        if src == "oracle":
            paths.append(self.labels_path(split))
        elif src is not None:
            paths.append(self.extracts_path(split, src))
        return paths

    def _generate(self, variant: str):
        c = self.config
        split = c.evaluation.split
        vocab = self.vocab()
        mode = ABSTRACTIVE[variant][0]
        model = load_tlm(self._require(self.tlm_path(tlm_tag(variant)), f"train-tlm:{tlm_tag(variant)}"), vocab)
        src = self._inference_source(variant)
        extracts = None
        if src == "oracle":
            extracts = self.labels(split)
        elif src is not None:
            extracts = self.extracts(split, src)
        max_new = c.generation.max_new_tokens or default_max_new_tokens(self.tokenized("train"))
        max_new = min(max_new, model.window - 2)
        # one seed per document shared by all variants, so variants differ only in their conditioning
        root = stage_seed(c.seed, "generate")
        special = {vocab.token_to_id[t] for t in vocab.special_tokens}
        path = self.generations_path(variant)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for doc in self.tokenized(split):
                ext = extracts.get(doc.id) if extracts is not None else None
                if extracts is not None and ext is None:
                    raise CorpusError(f"no extracts for document {doc.id!r}")
                context = fitted_context(doc, ext, mode, vocab, model.window, max_new)
                seed = doc_seed(root, doc.id)
                gen = GenerationConfig(c.generation.top_k, c.generation.temperature, max_new, seed)
                ids = generate_summary(model, context, gen, vocab)
                text = vocab.decode([i for i in ids if i not in special])
                rec = {"id": doc.id, "variant": variant, "mode": mode, "summary_text": text,
                       "num_tokens": len(ids), "seed": seed}
                fh.write(json.dumps(rec) + "\n")

    def _evaluate_inputs(self) -> list[Path]:
        split = self.config.evaluation.split
        paths = [self.split_file(split)]
        for v in self.config.variants:
            if v in EXTRACTIVE:
                paths.append(self.extracts_path(split, EXTRACTIVE[v]))
            else:
                paths.append(self.generations_path(v))
        return paths

    def candidates(self, variant: str) -> dict[str, str]:
        split = self.config.evaluation.split
        if variant in EXTRACTIVE:
            labels = self.extracts(split, EXTRACTIVE[variant])
            out = {}
            for doc in self.docs(split):
                sents = doc.sentences
                out[doc.id] = " ".join(sents[i].raw for i in labels[doc.id].indices)
            return out
        path = self._require(self.generations_path(variant), f"generate:{variant}")
        with open(path, encoding="utf-8") as fh:
            return {r["id"]: r["summary_text"] for r in map(json.loads, fh)}

    def _evaluate(self):
        c = self.config
        split = c.evaluation.split
        docs = self.docs(split)
        refs = {d.id: " ".join(s.raw for s in d.abstract_sentences) for d in docs}
        results = {}
        for variant in c.variants:
            cands = self.candidates(variant)
            pairs = [(rouge.tokenize(cands.get(d.id, "")), rouge.tokenize(refs[d.id])) for d in docs]
            results[display_name(variant, c.extractor.lead_k)] = rouge.corpus_rouge(
                pairs, c.evaluation.resamples, stage_seed(c.seed, "evaluate"))
        stats = {s: corpus_stats(self.docs(s)).as_dict() for s in ("train", "test")}
        report = {
            "config": c.to_dict(),
            "config_hash": c.hash,
            "split": split,
            "corpus_stats": stats,
            "variants": {name: rep.to_dict() for name, rep in results.items()},
            "artifacts": {name: str(p.relative_to(self.out)) for name, p in self._variant_artifacts().items()},
            "stage_seconds": self._stage_seconds(),
        }
        self.report_path.write_text(json.dumps(report, indent=2, sort_keys=True))
        with open(self.out / "rouge.csv", "w", encoding="utf-8") as fh:
            fh.write("model,variant,precision,recall,f1,ci_halfwidth\n")
            for name, rep in results.items():
                fh.write(rep.to_csv(name).split("\n", 1)[1])
        lines = ["| Model | ROUGE-1 | ROUGE-2 | ROUGE-3 | ROUGE-L |", "|---|---|---|---|---|"]
        for name, rep in results.items():
            cells = " | ".join(f"{100 * rep.scores[v].f1:.2f}" for v in rouge.VARIANTS)
            lines.append(f"| {name} | {cells} |")
        (self.out / "report.md").write_text("\n".join(lines) + "\n")

    def _variant_artifacts(self) -> dict[str, Path]:
        split = self.config.evaluation.split
        return {v: (self.extracts_path(split, EXTRACTIVE[v]) if v in EXTRACTIVE else self.generations_path(v))
                for v in self.config.variants}

    def _stage_seconds(self) -> dict[str, float]:
        out = {}
        for meta in sorted((self.out / "stages").glob("*.json")):
            rec = json.loads(meta.read_text())
            out[rec["stage"]] = rec["seconds"]
        out.update(self.timings)
        return out

    def _copy_inputs(self) -> list[Path]:
        return self._evaluate_inputs() + [self.labels_path(self.config.evaluation.split)]

    def copy_inputs_for(self, variant: str | None) -> list[CopyInput]:
        """Word-level copy inputs. ``None`` profiles the reference abstracts."""
        split = self.config.evaluation.split
        docs = self.docs(split)
        if variant is None:
            labels = self.labels(split)
            cands = {d.id: " ".join(s.raw for s in d.abstract_sentences) for d in docs}
        else:
            cands = self.candidates(variant)
            src = self._inference_source(variant) if variant in ABSTRACTIVE else EXTRACTIVE[variant]
            if src is None:
                labels = None
            elif src == "oracle":
                labels = self.labels(split)
            else:
                labels = self.extracts(split, src)
        items = []
        for doc in docs:
            picked = set(labels[doc.id].indices) if labels is not None else set()
            sents = doc.sentences
            if variant is not None and variant in ABSTRACTIVE:
                visible = set(doc.intro_indices())  # the model saw the introduction and the extracts
            else:
                visible = set(range(len(sents)))
            extract = [w for i in sorted(picked) for w in rouge.tokenize(sents[i].raw)]
            other = [w for i in sorted(visible - picked) for w in rouge.tokenize(sents[i].raw)]
            items.append(CopyInput(rouge.tokenize(cands.get(doc.id, "")), extract, other))
        return items

    def _analyze_copying(self):
        n_max = self.config.evaluation.copy_n_max
        profiles = {"reference": profile_corpus(self.copy_inputs_for(None), n_max)}
        for variant in self.config.variants:
            if variant in ABSTRACTIVE:
                profiles[variant] = profile_corpus(self.copy_inputs_for(variant), n_max)
        write_profiles_csv(profiles, self.out / "copying.csv")
        plot_profiles(profiles, self.out / "copying.svg")


def fitted_context(doc: Document, extracts, mode: str, vocab: Vocabulary, window: int, max_new: int) -> list[int]:
    """Inference context; drops trailing extracts when they alone exceed the budget."""
    picks = list(extracts.indices) if isinstance(extracts, ExtractLabels) else list(extracts or ())
    while True:
        try:
            return build_inference_context(doc, picks, mode, vocab, window, max_new)
        except ContextBudgetError:
            if not picks:
                raise
            logger.warning("document %s: dropping extract %d to fit the context window", doc.id, picks[-1])
            picks.pop()


def tlm_tag(variant: str) -> str:
    train_src = ABSTRACTIVE[variant][1]
    return "intro_only" if train_src is None else f"extracts_{train_src}"


def slug(name: str) -> str:
    out = "".join(ch if ch.isalnum() else "_" for ch in name)
    while "__" in out:
        out = out.replace("__", "_")
    return out.strip("_")


def display_name(variant: str, lead_k: int) -> str:
    return f"Lead-{lead_k}" if variant == "Lead-k" else variant


# -- auxiliary exports ---------------------------------------------------------------


def export_embeddings(checkpoint, vocab: Vocabulary, out_path) -> int:
    """Write one TSV row per vocabulary token: the token, then its embedding values."""
    ckpt = load_checkpoint(checkpoint, expected_vocab_hash=vocab.hash)
    names = [n for n in ("wte.weight", "encoder.embed.weight") if n in ckpt.tensors]
    if not names:
        raise CorpusError(f"{checkpoint} has no token embedding table")
    table = ckpt.tensors[names[0]]
    if table.shape[0] != len(vocab):
        raise CorpusError(f"embedding table has {table.shape[0]} rows but the vocabulary has {len(vocab)} tokens")
    with open(out_path, "w", encoding="utf-8") as fh:
        for tok, row in zip(vocab.id_to_token, table):
            fh.write(tok + "\t" + "\t".join(f"{x:.6g}" for x in row) + "\n")
    return len(vocab)


def tfidf_words(records, category_field: str, per_category: int = 300) -> dict[str, list[tuple[str, float]]]:
    """Most representative words per category.

    Score = (count of the word in the category) x (log((1 + C) / (1 + categories containing it)) + 1),
    with C the number of categories. Ties rank alphabetically.
    """
    from collections import Counter

    from .corpus import normalize_text

    counts: dict[str, Counter] = {}
    for lineno, rec in enumerate(records, start=1):
        if category_field not in rec:
            raise CorpusError(f"record has no field {category_field!r}", lineno)
        cat = str(rec[category_field])
        words = counts.setdefault(cat, Counter())
        for sec in rec.get("sections", []):
            for sent in sec.get("sentences", []):
                words.update(w for w in rouge.tokenize(normalize_text(sent)))
    if not counts:
        raise CorpusError("no records to score")
    n_cat = len(counts)
    df = Counter(w for c in counts.values() for w in c)
    out = {}
    for cat, words in sorted(counts.items()):
        scored = [(w, tf * (math.log((1 + n_cat) / (1 + df[w])) + 1)) for w, tf in words.items()]
        scored.sort(key=lambda x: (-x[1], x[0]))
        out[cat] = scored[:per_category]
    return out


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"invalid JSON ({exc.msg})", lineno) from None
    return out


def set_threads(n: int | None) -> None:
    if n:
        torch.set_num_threads(n)
