import json
import logging
import math
import shutil
from pathlib import Path

import numpy as np
import pytest

from hybridasr import cli
from hybridasr.audio import read_wav
from hybridasr.config import PipelineConfig, dump_config, load_config, parse_config_text
from hybridasr.datadir import DataDir
from hybridasr.errors import BadConfig, MissingArtifact, ValidationFailed
from hybridasr.pipeline import Workspace, run_pipeline, sha256_file
from hybridasr.synth import PHONES, SynthConfig, generate_corpus, make_lexicon

TINY = [
    "synth.vocab_size = 4",
    "synth.num_train = 12",
    "synth.num_test = 10",
    "synth.max_words = 3",
    "gmm.mono_iters = 3",
    "gmm.tri_iters = 2",
    "gmm.realign_iters = 1",
    "gmm.mono_gaussians = 40",
    "gmm.tri_gaussians = 60",
    "gmm.tri_leaves = 40",
    "tree.leaves = 40",
    "chain.epochs = 1",
    "chain.minibatch = 4",
    "chain.chunk_frames_output = 12",
    "chain.chunk_alternates = 10,14",
    "chain.tdnn_width = 16",
    "chain.tdnn_layers = 4",
    "chain.conv_layers = 1",
    "chain.conv_filters = 2",
]


def tiny_config(tmp_path):
    p = tmp_path / "tiny.conf"
    p.write_text("\n".join(TINY) + "\n")
    return p


# synthetic corpus

def test_phone_formants_distinct():
    assert len(set(PHONES.values())) == len(PHONES)


def test_lexicon_shape(rng):
    lex = make_lexicon(20, rng)
    assert len(lex) == 20 and len(set(lex.values())) == 20
    assert all(2 <= len(p) <= 4 and set(p) <= set(PHONES) for p in lex.values())


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    cfg = SynthConfig(vocab_size=5, num_train=12, num_test=10, seed=3)
    generate_corpus(root / "a", cfg)
    generate_corpus(root / "b", cfg)
    return root, cfg


def test_synth_deterministic(small_corpus):
    root, _ = small_corpus
    files_a = sorted(p.relative_to(root / "a") for p in (root / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(root / "b") for p in (root / "b").rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) > 20
    for f in files_a:
        assert (root / "a" / f).read_bytes() == (root / "b" / f).read_bytes()


def test_synth_structure(small_corpus):
    root, cfg = small_corpus
    vocab = {line.split()[0] for line in (root / "a" / "lexicon.txt").read_text().splitlines()}
    assert len(vocab) == cfg.vocab_size
    for part, n in (("train", cfg.num_train), ("test", cfg.num_test)):
        d = DataDir.load(root / "a" / part)
        assert len(d.utts) == n
        assert sum(u.endswith("-noisy") for u in d.utts) == n // 2
        for words in d.text.values():
            assert 1 <= len(words) <= cfg.max_words and set(words) <= vocab


def test_synth_snr(small_corpus):
    root, cfg = small_corpus
    d = DataDir.load(root / "a" / "train")
    for u in d.utts:
        if not u.endswith("-clean"):
            continue
        clean = read_wav(d.path / d.wav_scp[u]).samples
        noisy = read_wav(d.path / d.wav_scp[u.replace("-clean", "-noisy")]).samples
        noise = noisy - clean
        snr = 10 * math.log10(np.mean(clean**2) / np.mean(noise**2))
        assert abs(snr - cfg.noise_snr_db) < 0.1


@pytest.mark.parametrize("kw", [{"vocab_size": 1}, {"num_train": 8}, {"num_test": 4}])
def test_synth_bad_config(kw):
    with pytest.raises(BadConfig):
        SynthConfig(**kw)


# data directories

def test_datadir_inconsistent_utt2spk(small_corpus, tmp_path):
    root, _ = small_corpus
    d = DataDir.load(root / "a" / "test")
    bad = sorted(d.utts)[3]
    d.utt2spk[bad] = "other"
    d.write(tmp_path / "bad")
    (tmp_path / "bad" / "spk2utt").write_text((root / "a" / "test" / "spk2utt").read_text())
    with pytest.raises(ValidationFailed, match=bad):
        DataDir.load(tmp_path / "bad")


def test_datadir_missing_transcript(small_corpus, tmp_path):
    root, _ = small_corpus
    d = DataDir.load(root / "a" / "test")
    gone = d.utts[0]
    del d.text[gone]
    d.write(tmp_path / "bad")
    with pytest.raises(ValidationFailed, match=gone):
        DataDir.load(tmp_path / "bad")


def test_datadir_missing_file(tmp_path):
    with pytest.raises(MissingArtifact):
        DataDir.load(tmp_path)


# configuration

def test_config_defaults_roundtrip(tmp_path):
    cfg = PipelineConfig()
    assert cfg.gmm.mono_iters == 40 and cfg.lm.order == 3 and cfg.decode.beam == 16.0
    p = tmp_path / "all.conf"
    p.write_text(dump_config(cfg))
    assert load_config(p) == load_config()


def test_config_overrides(tmp_path):
    p = tmp_path / "x.conf"
    p.write_text("# comment\nchain.minibatch = 8\nchain.chunk_alternates = 30, 70\nseed = 4\n")
    cfg = load_config(p, ["chain.minibatch=16", "decode.beam=9"])
    assert cfg.chain.minibatch == 16 and cfg.chain.chunk_alternates == (30, 70)
    assert cfg.decode.beam == 9.0 and cfg.seed == 4
    assert cfg.synth.seed == 4 and cfg.chain.seed == 4
    assert load_config(p, seed=11).chain.seed == 11


@pytest.mark.parametrize("text", ["nokey\n", "gmm.bogus = 1\n", "bogus.key = 1\n", "gmm.mono_iters = many\n", "lm.order = 0\n"])
def test_config_errors(tmp_path, text):
    p = tmp_path / "bad.conf"
    p.write_text(text)
    with pytest.raises(BadConfig):
        load_config(p)


def test_parse_config_text():
    assert parse_config_text("a.b = 1 # x\n\n c = d=e\n") == [("a.b", "1"), ("c", "d=e")]


# command line

def test_cli_exit_codes(tmp_path, small_corpus, monkeypatch):
    root, _ = small_corpus
    work = str(tmp_path / "w")
    assert cli.main(["--work-dir", work, "train-gmm"]) == cli.EXIT_MISSING
    assert cli.main(["--work-dir", work, "prep", str(tmp_path / "nowhere")]) == cli.EXIT_MISSING
    bad = tmp_path / "bad"
    d = DataDir.load(root / "a" / "test")
    d.utt2spk[d.utts[0]] = "zz"
    d.write(bad)
    (bad / "spk2utt").write_text((root / "a" / "test" / "spk2utt").read_text())
    assert cli.main(["--work-dir", work, "prep", str(bad)]) == cli.EXIT_VALIDATION
    assert cli.main(["--work-dir", work, "--set", "gmm.nope=1", "config"]) == cli.EXIT_VALIDATION

    def boom(*a):
        raise RuntimeError("boom")

    monkeypatch.setattr(Workspace, "lm", boom)
    assert cli.main(["--work-dir", work, "lm"]) == cli.EXIT_INTERNAL


def test_cli_synth_and_config(tmp_path, capsys):
    assert cli.main(["--seed", "2", "synth", str(tmp_path / "c"), "--vocab", "3", "--utterances", "10",
                     "--test-utterances", "10"]) == 0
    assert len((tmp_path / "c" / "lexicon.txt").read_text().splitlines()) == 3
    capsys.readouterr()
    assert cli.main(["--seed", "2", "config"]) == 0
    out = capsys.readouterr().out
    assert "seed = 2" in out and "synth.seed = 2" in out


def test_feats_idempotent_and_stale_detection(tmp_path, small_corpus, caplog):
    root, _ = small_corpus
    corpus = tmp_path / "corpus"
    shutil.copytree(root / "a", corpus)
    ws = Workspace(tmp_path / "w", load_config(), jobs=1)
    ws.prep(corpus / "train", corpus / "lexicon.txt")
    ws.feats("train")
    before = sha256_file(ws.feat_dir("train") / "mfcc.ark")
    with caplog.at_level(logging.INFO, logger="hybridasr"):
        ws.feats("train")
    assert "feats-train: up to date" in caplog.text
    assert sha256_file(ws.feat_dir("train") / "mfcc.ark") == before
    # a changed wav makes the features stale: downstream stages refuse to run
    d = DataDir.load(corpus / "train")
    wav = corpus / "train" / d.wav_scp[d.utts[0]]
    data = bytearray(wav.read_bytes())
    data[2000:2002] = b"\x00\x40"
    wav.write_bytes(bytes(data))
    with pytest.raises(MissingArtifact, match="stale"):
        ws.train_gmm("train")
    ws.feats("train")
    assert sha256_file(ws.feat_dir("train") / "mfcc.ark") != before
    # a hand-edited product is detected too
    (ws.feat_dir("train") / "utt2spk").write_text("tampered\n")
    with pytest.raises(MissingArtifact, match="changed since"):
        ws.train_gmm("train")


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("tiny")
    cfg = load_config(tiny_config(tmp), seed=5)
    reports = run_pipeline(tmp / "w", cfg, jobs=1)
    return tmp, cfg, reports


def test_tiny_pipeline_emits_reports(tiny_run):
    tmp, cfg, reports = tiny_run
    assert set(reports) == {"mono", "tri", "chain"}
    for rep in reports.values():
        assert rep["num_utts"] == cfg.synth.num_test
        assert math.isfinite(rep["wer"]) and 0 <= rep["ser"] <= 1
    w = tmp / "w"
    for f in ("gmm/mono.mdl", "gmm/tri.mdl", "gmm/tri.ali", "chain/final.net", "chain/den.fst",
              "graph_chain/HCLG.fst", "decode_chain_test/hyp.txt", "score_chain_test/report.txt"):
        assert (w / f).exists(), f
    assert len((w / "decode_tri_test" / "hyp.txt").read_text().splitlines()) == cfg.synth.num_test


def test_tiny_pipeline_rerun_is_noop(tiny_run, caplog):
    tmp, cfg, reports = tiny_run
    stamps = {p.name: p.read_bytes() for p in (tmp / "w" / "stamps").iterdir()}
    with caplog.at_level(logging.INFO, logger="hybridasr"):
        again = run_pipeline(tmp / "w", cfg, jobs=1)
    assert again == reports
    assert "running" not in caplog.text
    assert caplog.text.count("up to date") == len(stamps) + 1
    assert stamps == {p.name: p.read_bytes() for p in (tmp / "w" / "stamps").iterdir()}


def test_cli_stage_commands(tiny_run, capsys, monkeypatch):
    tmp, cfg, _ = tiny_run
    work = str(tmp / "w")
    conf = str(tiny_config(tmp))
    assert cli.main(["--work-dir", work, "--config", conf, "--seed", "5", "decode", "tri"]) == 0
    assert cli.main(["--work-dir", work, "--config", conf, "--seed", "5", "score", "tri"]) == 0
    assert capsys.readouterr().out.strip().splitlines()[-1].startswith("WER ")
    ref = tmp / "w" / "corpus" / "test" / "text"
    hyp = tmp / "w" / "decode_tri_test" / "hyp.txt"
    monkeypatch.chdir(tmp)
    assert cli.main(["score", "--hyp", str(hyp), "--ref", str(ref), "--out", str(tmp / "s")]) == 0
    assert not (tmp / "exp").exists()  # standalone scoring needs no workspace
    rep = json.loads((tmp / "s" / "report.json").read_text())
    assert rep == json.loads((tmp / "w" / "score_tri_test" / "report.json").read_text())
