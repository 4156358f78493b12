import json
import math

import pytest

from tlmsum import rouge
from tlmsum.bpe import Vocabulary
from tlmsum.cli import main
from tlmsum.corpus import write_corpus
from tlmsum.nn.checkpoint import load_checkpoint
from tlmsum.pipeline import ALL_VARIANTS, Run, RunConfig, tfidf_words
from tlmsum.synthetic import key_sentence_corpus

TINY = """
seed = 3
bpe_merges = 60
[data]
dir = "{data}"
[extractor]
max_updates = 6
eval_every = 3
model = {{emb_dim = 8, hidden = 8, layers = 1}}
[tlm]
max_updates = {tlm_updates}
batch_size = 4
model = {{dim = 16, layers = 1, heads = 2, window = 64}}
[generation]
max_new_tokens = 12
[evaluation]
resamples = 50
copy_n_max = 4
"""


def write_config(path, data, tlm_updates=4):
    path.write_text(TINY.format(data=data, tlm_updates=tlm_updates))
    return path


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    for split, n, seed in (("train", 12, 0), ("valid", 4, 1), ("test", 5, 2)):
        write_corpus(key_sentence_corpus(n, seed=seed, prefix=split), d / f"{split}.jsonl")
    return d


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory, data_dir):
    root = tmp_path_factory.mktemp("run")
    cfg = write_config(root / "cfg.toml", data_dir)
    assert main(["pipeline", "--config", str(cfg), "--out-dir", str(root / "out")]) == 0
    return root, cfg


def test_pipeline_reports_every_variant(finished_run):
    root, _ = finished_run
    report = json.loads((root / "out" / "report.json").read_text())
    assert set(report["variants"]) == {"Lead-10" if v == "Lead-k" else v for v in ALL_VARIANTS}
    for rep in report["variants"].values():
        assert set(rep["variants"]) == set(rouge.VARIANTS)
        assert rep["num_pairs"] == 5
    assert report["corpus_stats"]["test"]["num_documents"] == 5
    assert {"train-bpe", "make-labels", "train-tlm:intro_only", "generate:TLM-I"} <= set(report["stage_seconds"])
    for name in ("rouge.csv", "report.md", "copying.csv", "copying.svg", "run_config.json"):
        assert (root / "out" / name).exists()


def test_rerun_is_identical_and_skips_everything(finished_run, tmp_path):
    root, cfg = finished_run
    config = RunConfig.load(cfg)
    run = Run(config, root / "out")
    assert not any(run.run_stage(name) for name in run.plan())
    fresh = tmp_path / "again"
    assert main(["pipeline", "--config", str(cfg), "--out-dir", str(fresh)]) == 0
    a = json.loads((root / "out" / "report.json").read_text())
    b = json.loads((fresh / "report.json").read_text())
    assert a["variants"] == b["variants"]
    assert a["config_hash"] == b["config_hash"]
    for v in ("TLM-I", "TLM-I+E (G,G)"):
        name = run.generations_path(v).name
        assert (root / "out" / "generations" / name).read_bytes() == (fresh / "generations" / name).read_bytes()


def test_deleted_extractor_only_recomputes_dependents(finished_run, tmp_path):
    root, cfg = finished_run
    import shutil

    work = tmp_path / "copy"
    shutil.copytree(root / "out", work)
    (work / "extractors" / "pointer.ckpt").unlink()
    run = Run(RunConfig.load(cfg), work)
    ran = [name for name in run.plan() if run.run_stage(name)]
    assert "train-extractor:pointer" in ran
    pointer_dependent = {"train-extractor:pointer", "extract:test:pointer", "extract:train:pointer",
                         "train-tlm:extracts_model", "generate:TLM-I+E (G,M)", "generate:TLM-I+E (M,M)",
                         "evaluate", "analyze-copying"}
    assert set(ran) <= pointer_dependent


def test_config_change_reruns_only_stale_stages(finished_run, tmp_path):
    root, _ = finished_run
    import shutil

    work = tmp_path / "copy"
    shutil.copytree(root / "out", work)
    config = RunConfig.load(write_config(tmp_path / "cfg.toml", RunConfig.load(root / "cfg.toml").data.dir, 5))
    run = Run(config, work)
    ran = [name for name in run.plan() if run.run_stage(name)]
    assert {"train-tlm:intro_only", "train-tlm:extracts_oracle", "train-tlm:extracts_model"} <= set(ran)
    assert not any(n.startswith(("train-bpe", "make-labels", "train-extractor", "extract:")) for n in ran)


def test_config_hash_in_checkpoints_and_report(finished_run):
    root, cfg = finished_run
    config = RunConfig.load(cfg)
    out = root / "out"
    vocab = Vocabulary.load(out / "vocab.txt")
    for path in [*(out / "extractors").glob("*.ckpt"), *(out / "tlm").glob("*.ckpt")]:
        ckpt = load_checkpoint(path, expected_vocab_hash=vocab.hash)
        assert ckpt.meta["run_config_hash"] == config.hash
    assert json.loads((out / "report.json").read_text())["config_hash"] == config.hash


def test_report_numbers_regenerate_from_artifacts(finished_run):
    root, cfg = finished_run
    run = Run(RunConfig.load(cfg), root / "out")
    report = json.loads(run.report_path.read_text())
    docs = run.docs("test")
    for variant in ("TLM-I+E (G,M)", "Sent-PTR"):
        cands = run.candidates(variant)
        pairs = [(rouge.tokenize(cands[d.id]), rouge.tokenize(" ".join(s.raw for s in d.abstract_sentences)))
                 for d in docs]
        rep = rouge.corpus_rouge(pairs, 50, 0)
        for v in rouge.VARIANTS:
            assert report["variants"][variant]["variants"][v]["f1"] == rep.scores[v].f1


def test_stage_commands_share_the_run_directory(data_dir, tmp_path):
    cfg = write_config(tmp_path / "cfg.toml", data_dir)
    args = ["--config", str(cfg), "--out-dir", str(tmp_path / "out")]
    assert main(["train-bpe", *args]) == 0
    assert main(["make-labels", *args]) == 0
    assert main(["extract", "--method", "lead", *args]) == 0
    assert main(["train-tlm", "--variant", "TLM-I+E (G,G)", *args]) == 0
    assert main(["generate", "--variant", "TLM-I+E (G,G)", *args]) == 0
    recs = [json.loads(line) for line in (tmp_path / "out" / "generations" / "TLM_I_E_G_G.jsonl").open()]
    assert len(recs) == 5
    assert set(recs[0]) == {"id", "variant", "mode", "summary_text", "num_tokens", "seed"}
    assert len({r["seed"] for r in recs}) == 5
    # global flags may also precede the subcommand
    assert main([*args, "train-bpe"]) == 0


def test_missing_artifact_exit_code_names_stage(data_dir, tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.toml", data_dir)
    code = main(["generate", "--variant", "TLM-I", "--config", str(cfg), "--out-dir", str(tmp_path / "o")])
    assert code == 3
    assert "train-bpe" in capsys.readouterr().err
    main(["train-bpe", "--config", str(cfg), "--out-dir", str(tmp_path / "o")])
    code = main(["extract", "--method", "pointer", "--config", str(cfg), "--out-dir", str(tmp_path / "o")])
    assert code == 3
    assert "train-extractor pointer" in capsys.readouterr().err


def test_usage_and_config_errors_exit_1(data_dir, tmp_path):
    assert main(["no-such-command"]) == 1
    assert main(["train-extractor", "transformer"]) == 1
    bad = tmp_path / "bad.toml"
    bad.write_text("[extractor]\nlearning_rate = 1\n")
    assert main(["train-bpe", "--config", str(bad), "--out-dir", str(tmp_path)]) == 1
    bad.write_text("variants = ['TLM-X']\n")
    assert main(["train-bpe", "--config", str(bad), "--out-dir", str(tmp_path)]) == 1
    bad.write_text("seed = = 1\n")
    assert main(["train-bpe", "--config", str(bad), "--out-dir", str(tmp_path)]) == 1


def test_malformed_data_exit_2(tmp_path):
    d = tmp_path / "data"
    d.mkdir()
    (d / "train.jsonl").write_text('{"id": "a", "sections": 3}\n')
    assert main(["train-bpe", "--data-dir", str(d), "--out-dir", str(tmp_path / "o")]) == 2


def test_convert_data(tmp_path):
    src = tmp_path / "release.jsonl"
    src.write_text(json.dumps({"article_id": "x1", "article_text": ["first line .", "second line ."],
                               "abstract_text": ["<S> a summary . </S>"], "section_names": ["Introduction"],
                               "sections": [["first line .", "second line ."]]}) + "\n")
    assert main(["convert-data", str(src), str(tmp_path / "out.jsonl")]) == 0
    rec = json.loads((tmp_path / "out.jsonl").read_text())
    assert rec["sections"][0]["name"] == "introduction"
    assert rec["abstract"] == ["a summary ."]
    (tmp_path / "broken.jsonl").write_text("{not json\n")
    assert main(["convert-data", str(tmp_path / "broken.jsonl"), str(tmp_path / "o2.jsonl")]) == 2


def test_export_embeddings_one_row_per_token(finished_run, tmp_path):
    root, _ = finished_run
    out = root / "out"
    vocab = Vocabulary.load(out / "vocab.txt")
    for ckpt in ("tlm/intro_only.ckpt", "extractors/pointer.ckpt"):
        tsv = tmp_path / "emb.tsv"
        assert main(["export-embeddings", "--checkpoint", str(out / ckpt), "--vocab", str(out / "vocab.txt"),
                     "--output", str(tsv)]) == 0
        rows = tsv.read_text().splitlines()
        assert len(rows) == len(vocab)
        assert [r.split("\t")[0] for r in rows] == vocab.id_to_token
        assert len({len(r.split("\t")) for r in rows}) == 1
    assert main(["export-embeddings", "--checkpoint", str(tmp_path / "nope.ckpt"), "--vocab",
                 str(out / "vocab.txt"), "--output", str(tmp_path / "x.tsv")]) == 3


def _record(cat, text):
    return {"id": text, "category": cat, "sections": [{"name": "body", "sentences": [text]}], "abstract": ["x"]}


def test_tfidf_two_category_hand_fixture():
    # A: apple apple banana; B: banana cherry cherry. C = 2 categories.
    # idf(apple) = idf(cherry) = ln(3/2) + 1; idf(banana) = ln(3/3) + 1 = 1.
    ranked = tfidf_words([_record("A", "apple apple banana"), _record("B", "banana cherry cherry")], "category")
    assert ranked["A"][0][0] == "apple"
    assert ranked["B"][0][0] == "cherry"
    assert ranked["A"][0][1] == pytest.approx(2 * (math.log(1.5) + 1), abs=1e-12)
    assert ranked["A"][1] == ("banana", pytest.approx(1.0))


def test_tfidf_single_category_is_term_frequency():
    texts = ["red red red blue", "blue green red", "green"]
    ranked = tfidf_words([_record("only", t) for t in texts], "category")
    assert [w for w, _ in ranked["only"]] == ["red", "blue", "green"]
    assert [s for _, s in ranked["only"]] == [4.0, 2.0, 2.0]


def test_tfidf_cli_and_unknown_field(tmp_path):
    corpus = tmp_path / "c.jsonl"
    corpus.write_text("\n".join(json.dumps(_record(c, t)) for c, t in [("A", "apple apple banana"),
                                                                         ("B", "banana cherry cherry")]))
    out = tmp_path / "words.tsv"
    assert main(["tfidf-words", str(corpus), "--output", str(out), "--per-category", "1"]) == 0
    assert out.read_text().splitlines() == [f"A\tapple\t{2 * (math.log(1.5) + 1):.6f}",
                                            f"B\tcherry\t{2 * (math.log(1.5) + 1):.6f}"]
    assert main(["tfidf-words", str(corpus), "--output", str(out), "--category-field", "topic"]) == 2
