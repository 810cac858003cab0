"""Stage orchestration over a work directory with content-hash stamps.

Every stage declares its input files, output files and parameters. After a
stage succeeds, a stamp records the SHA-256 of each of them. A stage whose
stamp still matches is skipped with an "up to date" notice. A stage refuses
to run when one of its inputs inside the work directory is not the current
output of an up-to-date upstream stage.
"""
import dataclasses
import hashlib
import json
import logging
import os
import shutil
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .audio import read_wav, resample, to_mono
from .chain.supervision import ChainSupervision, compose_with_normalization, make_numerator_fst, split_supervision
from .chain.tdnn import TdnnNet, default_specs
from .chain.train import make_examples, train_chain, write_training_log
from .datadir import DataDir, read_table, write_table
from .decode import DecodeOptions, GraphArrays, chain_scorer, decode_utterance, gmm_scorer
from .errors import MissingArtifact, NoPathSurvived, ValidationFailed
from .features import (
    accumulate_cmvn,
    append_deltas,
    apply_cmvn,
    compute_features,
    read_cmvn_stats,
    read_feature_archive,
    write_cmvn_stats,
    write_feature_archive,
)
from .fst.core import Fst
from .gmm.align import read_alignments, subsample_alignment, write_alignments
from .gmm.diag_gmm import AmGmm
from .gmm.train import alignment_phone_sequences, train_mono, train_tri
from .gmm.tree import accumulate_tree_stats, build_tree
from .graph.den import compile_denominator_graph, make_normalization_fst, train_phone_lm
from .graph.hclg import build_decoding_graph
from .graph.topology import ContextDependency, HmmTopology, TransitionModel
from .lexicon import load_lexicon
from .ngram import count_ngrams, estimate_lm, read_arpa, write_arpa
from .score import read_transcripts, score_corpus
from .synth import generate_corpus

__all__ = ["Workspace", "sha256_file", "STAGES", "run_pipeline"]

log = logging.getLogger(__name__)

STAGES = ("mono", "tri", "chain")
CANONICAL_RATE = 16000


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _params_hash(params):
    blob = json.dumps({"version": __version__, "params": params}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _pmap(fn, items, jobs, init=None, initargs=()):
    """Order-preserving map, in worker processes when ``jobs > 1``."""
    if jobs <= 1 or len(items) < 2:
        if init is not None:
            init(*initargs)
        return [fn(x) for x in items]
    with ProcessPoolExecutor(jobs, initializer=init, initargs=initargs) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def load_audio(path, utt_id):
    """Read a wav file and bring it to mono at the canonical rate."""
    audio = to_mono(read_wav(path, utt_id))
    if audio.sample_rate_hz != CANONICAL_RATE:
        audio = resample(audio, CANONICAL_RATE)
    return audio


def _feature_job(args):
    utt, path, mfcc_cfg, fbank_cfg, seed = args
    audio = load_audio(path, utt)
    key = zlib.crc32(utt.encode())
    mfcc = compute_features(audio, mfcc_cfg, np.random.default_rng([seed, key, 0]))
    fbank = compute_features(audio, fbank_cfg, np.random.default_rng([seed, key, 1]))
    return utt, mfcc, fbank


_DECODER = {}


def _decoder_init(graph, label2pdf, stage, model_path, opts, beams):
    if stage == "chain":
        net = TdnnNet.read(model_path)
        scorer = chain_scorer(net)
        prep = net.pad_input
    else:
        am, _, _ = AmGmm.read(model_path)
        scorer = gmm_scorer(am)
        prep = None
    _DECODER.update(graph=graph, label2pdf=label2pdf, scorer=scorer, prep=prep, opts=opts, beams=beams)


def _decode_job(args):
    utt, frames = args
    d = _DECODER
    if d["prep"] is not None:
        frames = d["prep"](frames)
    scores = d["scorer"](frames)
    for beam in d["beams"]:
        try:
            r = decode_utterance(d["graph"], scores, d["label2pdf"], dataclasses.replace(d["opts"], beam=beam))
            return utt, r.words, r.total_cost, r.acoustic_cost, r.graph_cost, beam
        except NoPathSurvived:
            log.info("%s: no path survived at beam %g", utt, beam)
    log.warning("%s: no path survived at any beam; emitting an empty hypothesis", utt)
    return utt, [], float("inf"), float("inf"), float("inf"), None


class Workspace:
    """Artifacts of one experiment under ``root``; all stage methods are idempotent."""

    def __init__(self, root, cfg, jobs=None):
        self.root = Path(root).resolve()
        self.cfg = cfg
        self.jobs = max(1, int(jobs or os.cpu_count() or 1))
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "stamps").mkdir(exist_ok=True)

    # paths
    def path(self, *parts):
        return self.root.joinpath(*parts)

    def data_record(self, name):
        return self.path("data", f"{name}.json")

    @property
    def lexicon_path(self):
        return self.path("lang", "lexicon.txt")

    @property
    def lm_path(self):
        return self.path("lang", "lm.arpa")

    def feat_dir(self, name):
        return self.path("feats", name)

    def model_path(self, stage):
        return {
            "mono": self.path("gmm", "mono.mdl"),
            "tri": self.path("gmm", "tri.mdl"),
            "chain": self.path("chain", "final.net"),
        }[stage]

    def graph_path(self, stage):
        return self.path(f"graph_{stage}", "HCLG.fst")

    def decode_dir(self, stage, name):
        return self.path(f"decode_{stage}_{name}")

    def score_dir(self, stage, name):
        return self.path(f"score_{stage}_{name}")

    # stamps
    def _stamp_path(self, key):
        return self.path("stamps", f"{key}.json")

    def _read_stamp(self, key):
        p = self._stamp_path(key)
        return json.loads(p.read_text()) if p.exists() else None

    def _current(self, paths):
        return {str(p): sha256_file(p) for p in paths}

    def _check_upstream(self, key, inputs):
        produced = {}
        for sp in sorted(self.path("stamps").glob("*.json")):
            stamp = json.loads(sp.read_text())
            for out in stamp["outputs"]:
                produced[out] = (sp.stem, stamp)
        for p in inputs:
            p = Path(p)
            if not p.exists():
                raise MissingArtifact(f"{key}: required input {p} does not exist")
            if str(p) not in produced:
                continue  # a source file, not a stage product
            up_key, stamp = produced[str(p)]
            if sha256_file(p) != stamp["outputs"][str(p)]:
                raise MissingArtifact(f"{key}: {p} changed since stage {up_key} wrote it; rerun {up_key}")
            for q, h in stamp["inputs"].items():
                if not Path(q).exists() or sha256_file(q) != h:
                    raise MissingArtifact(f"{key}: upstream stage {up_key} is stale ({q} changed); rerun it first")

    def run_stage(self, key, inputs, outputs, params, fn):
        """Run ``fn`` unless the stamp of ``key`` matches; returns True when work was done."""
        inputs = [Path(p) for p in inputs]
        outputs = [Path(p) for p in outputs]
        self._check_upstream(key, inputs)
        stamp = self._read_stamp(key)
        phash = _params_hash(params)
        if stamp is not None and stamp["params"] == phash and all(p.exists() for p in outputs):
            if stamp["inputs"] == self._current(inputs) and stamp["outputs"] == self._current(outputs):
                log.info("%s: up to date", key)
                return False
        self._stamp_path(key).unlink(missing_ok=True)
        for p in outputs:
            p.parent.mkdir(parents=True, exist_ok=True)
        log.info("%s: running", key)
        fn()
        missing = [str(p) for p in outputs if not p.exists()]
        if missing:
            raise MissingArtifact(f"{key}: stage did not produce {', '.join(missing)}")
        record = {"params": phash, "inputs": self._current(inputs), "outputs": self._current(outputs)}
        self._stamp_path(key).write_text(json.dumps(record, sort_keys=True, indent=1) + "\n")
        return True

    # data
    def data_dir(self, name):
        rec = self.data_record(name)
        if not rec.exists():
            raise MissingArtifact(f"data set {name!r} has not been prepared ({rec} missing)")
        return DataDir.load(json.loads(rec.read_text())["path"])

    def lexicon(self):
        if not self.lexicon_path.exists():
            raise MissingArtifact(f"{self.lexicon_path} missing; run prep with a lexicon")
        return load_lexicon(self.lexicon_path)

    def prep(self, data_dir, lexicon=None, name=None):
        """Validate a data directory (writing spk2utt when absent) and register it."""
        data_dir = Path(data_dir).resolve()
        name = name or data_dir.name
        d = DataDir.load(data_dir)
        if not (data_dir / "spk2utt").exists():
            write_table({s: " ".join(u) for s, u in d.spk2utt.items()}, data_dir / "spk2utt")
        if lexicon is None:
            for cand in (data_dir / "lexicon.txt", data_dir.parent / "lexicon.txt"):
                if cand.exists():
                    lexicon = cand
                    break
        inputs = [data_dir / f for f in ("wav.scp", "text", "utt2spk", "spk2utt")]
        outputs = [self.data_record(name)]
        if lexicon is not None:
            inputs.append(Path(lexicon).resolve())
            outputs.append(self.lexicon_path)

        def work():
            if lexicon is not None:
                lex = load_lexicon(lexicon)
                oov = sorted({w for ws in d.text.values() for w in ws} - set(w for w, _, _ in lex.entries))
                if oov:
                    raise ValidationFailed(f"{len(oov)} transcript words missing from the lexicon, e.g. {oov[0]!r}")
                shutil.copyfile(lexicon, self.lexicon_path)
            rec = {"path": str(data_dir), "num_utts": len(d.utts), "num_speakers": len(d.spk2utt)}
            self.data_record(name).write_text(json.dumps(rec, sort_keys=True) + "\n")

        self.run_stage(f"prep-{name}", inputs, outputs, {"name": name}, work)
        return d

    # features
    def _feat_outputs(self, name):
        fd = self.feat_dir(name)
        return [fd / "mfcc.ark", fd / "mfcc.ark.idx", fd / "fbank.ark", fd / "fbank.ark.idx",
                fd / "cmvn_mfcc.stats", fd / "cmvn_fbank.stats", fd / "utt2spk"]

    def feats(self, name):
        d = self.data_dir(name)
        wavs = {u: (d.path / d.wav_scp[u]) for u in d.utts}
        inputs = [self.data_record(name), d.path / "wav.scp", d.path / "utt2spk"] + [wavs[u] for u in d.utts]
        params = {"mfcc": dataclasses.asdict(self.cfg.mfcc), "fbank": dataclasses.asdict(self.cfg.fbank),
                  "seed": self.cfg.seed}

        def work():
            jobs = [(u, str(wavs[u]), self.cfg.mfcc, self.cfg.fbank, self.cfg.seed) for u in d.utts]
            res = _pmap(_feature_job, jobs, self.jobs)
            fd = self.feat_dir(name)
            for kind, k in (("mfcc", 1), ("fbank", 2)):
                feats = {r[0]: r[k] for r in res}
                write_feature_archive(feats, fd / f"{kind}.ark", kind)
                write_cmvn_stats(accumulate_cmvn(feats, d.utt2spk), fd / f"cmvn_{kind}.stats")
            write_table(d.utt2spk, fd / "utt2spk")

        self.run_stage(f"feats-{name}", inputs, self._feat_outputs(name), params, work)

    def load_feats(self, name, kind, deltas=False):
        """CMVN-normalized feature matrices (with deltas on request) as float64 arrays."""
        fd = self.feat_dir(name)
        for p in (fd / f"{kind}.ark", fd / f"cmvn_{kind}.stats", fd / "utt2spk"):
            if not p.exists():
                raise MissingArtifact(f"{p} missing; run feats for {name}")
        raw = read_feature_archive(fd / f"{kind}.ark")
        stats = read_cmvn_stats(fd / f"cmvn_{kind}.stats")
        utt2spk = read_table(fd / "utt2spk")
        out = {}
        for u, f in raw.items():
            f = apply_cmvn(f, stats[utt2spk[u]])
            if deltas:
                f = append_deltas(f, self.cfg.mfcc.delta_window, 2)
            out[u] = f.frames
        return out

    # language model
    def lm(self, train="train"):
        d = self.data_dir(train)
        inputs = [self.data_record(train), d.path / "text", self.lexicon_path]

        def work():
            lex = self.lexicon()
            vocab = sorted({w for w, _, _ in lex.entries})
            text = [d.text[u] for u in d.utts]
            lm = estimate_lm(count_ngrams(text, self.cfg.lm.order), self.cfg.lm.order, self.cfg.lm.smoothing, vocab)
            write_arpa(lm, self.lm_path)

        self.run_stage("lm", inputs, [self.lm_path], dataclasses.asdict(self.cfg.lm), work)

    # acoustic models
    def train_gmm(self, train="train"):
        d = self.data_dir(train)
        fd = self.feat_dir(train)
        inputs = [self.data_record(train), d.path / "text", self.lexicon_path, fd / "mfcc.ark",
                  fd / "cmvn_mfcc.stats", fd / "utt2spk"]
        g = self.path("gmm")
        outputs = [g / "mono.mdl", g / "mono.ali", g / "tri.mdl", g / "tri.ali", g / "train.log"]
        params = {"gmm": dataclasses.asdict(self.cfg.gmm), "delta_window": self.cfg.mfcc.delta_window}

        def work():
            lex = self.lexicon()
            cfg = self.cfg.gmm
            mono = train_mono(self.load_feats(train, "mfcc"), d.text, lex, cfg)
            mono.am.write(g / "mono.mdl", mono.tm, {"stage": "mono"})
            write_alignments(mono.alignments, g / "mono.ali")
            tri = train_tri(self.load_feats(train, "mfcc", deltas=True), d.text, lex, mono, cfg)
            tri.am.write(g / "tri.mdl", tri.tm, {"stage": "tri"})
            write_alignments(tri.alignments, g / "tri.ali")
            with open(g / "train.log", "w") as f:
                for stage, res in (("mono", mono), ("tri", tri)):
                    f.write(f"{stage} pdfs {res.tm.num_pdfs} gaussians {res.am.num_gaussians} "
                            f"failed_alignments {len(res.failures)}\n")
                    for i, ll in enumerate(res.loglikes):
                        f.write(f"{stage} iter {i} loglike_per_frame {ll:.6f}\n")

        self.run_stage("train-gmm", inputs, outputs, params, work)

    def train_chain(self, train="train"):
        d = self.data_dir(train)
        fd = self.feat_dir(train)
        g = self.path("gmm")
        c = self.path("chain")
        inputs = [self.data_record(train), self.lexicon_path, g / "tri.mdl", g / "tri.ali", fd / "mfcc.ark",
                  fd / "fbank.ark", fd / "cmvn_mfcc.stats", fd / "cmvn_fbank.stats", fd / "utt2spk"]
        outputs = [c / "tree.mdl", c / "phone_lm.arpa", c / "den.fst", c / "den.fst.json", c / "final.net",
                   c / "train.log"]
        params = {"chain": dataclasses.asdict(self.cfg.chain), "tree": dataclasses.asdict(self.cfg.tree),
                  "delta_window": self.cfg.mfcc.delta_window}

        def work():
            cfg = self.cfg.chain
            lex = self.lexicon()
            _, tri_tm, _ = AmGmm.read(g / "tri.mdl")
            alis = read_alignments(g / "tri.ali")
            f39 = self.load_feats(train, "mfcc", deltas=True)
            fbank = self.load_feats(train, "fbank")
            ctm = build_chain_tree(alis, tri_tm, f39, self.cfg.tree, cfg.frame_subsample)
            ctm.write(c / "tree.mdl")
            plm = train_phone_lm(alignment_phone_sequences(alis, tri_tm, lex.phone_table), cfg.phone_lm_order)
            write_arpa(plm, c / "phone_lm.arpa")
            den = compile_denominator_graph(plm, ctm, lex.phone_table)
            den.write(c / "den.fst")
            log.info("chain: %d pdfs, denominator %d states", ctm.num_pdfs, den.num_states)
            chunks = make_chain_chunks(alis, tri_tm, ctm, den, cfg)
            net = TdnnNet(fbank[next(iter(fbank))].shape[1], ctm.num_pdfs,
                          default_specs(cfg.conv_layers, cfg.conv_filters, cfg.tdnn_width, cfg.tdnn_layers),
                          rng=np.random.default_rng([cfg.seed, 1]))
            examples = make_examples(fbank, chunks, net)
            log.info("chain: %d training chunks", len(examples))
            net, history = train_chain(examples, den, net, cfg)
            net.write(c / "final.net")
            write_training_log(history, c / "train.log")

        self.run_stage("train-chain", inputs, outputs, params, work)

    # graphs, decoding, scoring
    def _stage_tm(self, stage):
        if stage == "chain":
            return TransitionModel.read(self.path("chain", "tree.mdl"))
        _, tm, _ = AmGmm.read(self.model_path(stage))
        return tm

    def mkgraph(self, stage):
        _check_stage(stage)
        model = self.path("chain", "tree.mdl") if stage == "chain" else self.model_path(stage)
        inputs = [model, self.lexicon_path, self.lm_path]

        def work():
            hclg = build_decoding_graph(self.lexicon(), read_arpa(self.lm_path), self._stage_tm(stage),
                                        self.cfg.gmm.sil_prob)
            hclg.write(self.graph_path(stage))

        self.run_stage(f"mkgraph-{stage}", inputs, [self.graph_path(stage)], {"sil_prob": self.cfg.gmm.sil_prob}, work)

    def decode(self, stage, name="test"):
        _check_stage(stage)
        fd = self.feat_dir(name)
        kind = "fbank" if stage == "chain" else "mfcc"
        model = self.model_path(stage)
        inputs = [self.graph_path(stage), model, fd / f"{kind}.ark", fd / f"cmvn_{kind}.stats", fd / "utt2spk"]
        if stage == "chain":
            inputs.append(self.path("chain", "tree.mdl"))
        out = self.decode_dir(stage, name)
        params = {"decode": dataclasses.asdict(self.cfg.decode), "delta_window": self.cfg.mfcc.delta_window}

        def work():
            dc = self.cfg.decode
            feats = self.load_feats(name, kind, deltas=stage == "tri")
            tm = self._stage_tm(stage)
            scale = dc.chain_acoustic_scale if stage == "chain" else dc.gmm_acoustic_scale
            opts = DecodeOptions(dc.beam, dc.max_active, scale)
            graph = GraphArrays(Fst.read(self.graph_path(stage)))
            beams = (dc.beam,) + tuple(b for b in dc.retry_beams if b > dc.beam)
            items = [(u, feats[u]) for u in sorted(feats)]
            res = _pmap(_decode_job, items, self.jobs, _decoder_init, (graph, tm.tid2pdf, stage, str(model), opts, beams))
            table = self.lexicon().word_table
            with open(out / "hyp.txt", "w") as fh, open(out / "costs.txt", "w") as fc:
                for utt, words, total, ac, gc, beam in res:
                    fh.write(" ".join([utt] + [table.symbol(w) for w in words]) + "\n")
                    fc.write(f"{utt} total {total:.6f} acoustic {ac:.6f} graph {gc:.6f} beam {beam}\n")

        self.run_stage(f"decode-{stage}-{name}", inputs, [out / "hyp.txt", out / "costs.txt"], params, work)
        return out / "hyp.txt"

    def score(self, stage, name="test"):
        d = self.data_dir(name)
        hyp = self.decode_dir(stage, name) / "hyp.txt"
        out = self.score_dir(stage, name)
        score_files(hyp, d.path / "text", out, key=f"score-{stage}-{name}", workspace=self)
        return load_report(out)


def _check_stage(stage):
    if stage not in STAGES:
        raise ValidationFailed(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")


def score_files(hyp_path, ref_path, out_dir, key=None, workspace=None):
    """Write ``report.txt`` and ``report.json`` scoring a hypothesis file against references."""
    hyp_path, ref_path, out_dir = Path(hyp_path), Path(ref_path), Path(out_dir)
    for p in (hyp_path, ref_path):
        if not p.exists():
            raise MissingArtifact(f"{p} does not exist")

    def work():
        out_dir.mkdir(parents=True, exist_ok=True)
        report = score_corpus(read_transcripts(ref_path), read_transcripts(hyp_path))
        (out_dir / "report.txt").write_text(report.to_text())
        (out_dir / "report.json").write_text(report.to_json())

    if workspace is None:
        work()
    else:
        workspace.run_stage(key, [hyp_path, ref_path], [out_dir / "report.txt", out_dir / "report.json"], {}, work)
    return out_dir / "report.json"


def load_report(out_dir):
    return json.loads((Path(out_dir) / "report.json").read_text())


def build_chain_tree(alis, gmm_tm, feats, tree_cfg, factor=3):
    """Two-state chain topology with a tree grown on subsampled alignments."""
    phones = sorted(gmm_tm.phones)
    topo = HmmTopology.chain_two_state()
    mono = TransitionModel(topo, ContextDependency.monophone(phones, topo, width=2), phones)
    sub = {u: subsample_alignment(a, gmm_tm, mono, factor) for u, a in alis.items()}
    sub_feats = {u: feats[u][::factor][: len(sub[u])] for u in sub}
    stats = accumulate_tree_stats(sub, sub_feats, mono, 2)
    ctx = build_tree(stats, phones, topo, 2, tree_cfg.leaves, tree_cfg.min_gain)
    return TransitionModel(topo, ctx, phones)


def make_chain_chunks(alis, gmm_tm, chain_tm, den, cfg):
    """Numerator lattices split into fixed-length chunks and composed with the normalization FST."""
    norm = make_normalization_fst(den)
    chunks = []
    for u in sorted(alis):
        num = make_numerator_fst(alis[u], gmm_tm, chain_tm, cfg.tolerance_frames, cfg.frame_subsample)
        n_out = -(-len(alis[u]) // cfg.frame_subsample)
        sup = ChainSupervision(num, n_out, u)
        for chunk in split_supervision(sup, cfg.chunk_frames_output, cfg.chunk_alternates):
            composed = compose_with_normalization(chunk, norm)
            if composed is not None:
                chunks.append(composed)
    return chunks


def run_pipeline(work_dir, cfg, corpus=None, jobs=None, stages=STAGES):
    """Synthesize (when ``corpus`` is None), then prep, train, decode and score every stage.

    Returns ``{stage: report dict}`` for the test set.
    """
    ws = Workspace(work_dir, cfg, jobs)
    if corpus is None:
        corpus = ws.path("corpus")
        marker = corpus / "synth.json"
        params = dataclasses.asdict(cfg.synth)
        if not marker.exists() or json.loads(marker.read_text()) != params:
            log.info("synth: generating corpus in %s", corpus)
            shutil.rmtree(corpus, ignore_errors=True)
            generate_corpus(corpus, cfg.synth)
            marker.write_text(json.dumps(params, sort_keys=True) + "\n")
        else:
            log.info("synth: up to date")
    corpus = Path(corpus)
    ws.prep(corpus / "train", corpus / "lexicon.txt")
    ws.prep(corpus / "test")
    ws.feats("train")
    ws.feats("test")
    ws.lm("train")
    ws.train_gmm("train")
    if "chain" in stages:
        ws.train_chain("train")
    reports = {}
    for stage in stages:
        ws.mkgraph(stage)
        ws.decode(stage, "test")
        reports[stage] = ws.score(stage, "test")
    return reports
