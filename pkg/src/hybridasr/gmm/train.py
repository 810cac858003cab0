"""Monophone and delta-triphone Viterbi training ladder."""
import logging
from dataclasses import dataclass

from ..decode import GraphArrays
from ..errors import AlignmentFailed, EmptyData, InsufficientData
from ..graph.hclg import build_training_graph
from ..graph.topology import ContextDependency, HmmTopology, TransitionModel
from .align import align_utterance, convert_alignment, equal_alignment
from .diag_gmm import AmGmm
from .tree import accumulate_tree_stats, build_tree

__all__ = ["GmmConfig", "StageResult", "training_graphs", "train_stage", "train_mono", "train_tri", "train_ladder", "alignment_phone_sequences"]

log = logging.getLogger(__name__)

REALIGN_ITERS = (1, 2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 25, 30, 35)


@dataclass
class GmmConfig:
    mono_iters: int = 40
    tri_iters: int = 35
    realign_iters: tuple = REALIGN_ITERS
    mono_gaussians: int = 1000
    tri_gaussians: int = 2500
    tri_leaves: int = 500
    tree_min_gain: float = 150.0
    max_per_pdf: int = 32
    beam: float = 10.0
    acoustic_scale: float = 0.1
    sil_prob: float = 0.5
    min_occ: float = 10.0


@dataclass
class StageResult:
    am: AmGmm
    tm: TransitionModel
    alignments: dict
    loglikes: list  # per-iteration pre-update log-likelihood per frame
    failures: list


def training_graphs(lex, text, tm, sil_prob=0.5, utts=None):
    """Per-utterance transcript-constrained graphs in search-ready form."""
    out = {}
    for utt in sorted(utts if utts is not None else text):
        out[utt] = GraphArrays(build_training_graph(lex, text[utt], tm, sil_prob))
    return out


def _accumulate(am, tm, feats, alis):
    stats, total, frames = None, 0.0, 0
    for utt in sorted(alis):
        x = feats[utt]
        stats, ll = am.accumulate(x, tm.tid2pdf[alis[utt]], stats)
        total += ll
        frames += len(x)
    return stats, total, frames


def _realign(am, tm, feats, graphs, alis, cfg, failures):
    new = {}
    for utt in sorted(graphs):
        try:
            new[utt] = align_utterance(am, graphs[utt], feats[utt], tm, cfg.beam, cfg.acoustic_scale)
        except AlignmentFailed as e:
            failures.append(utt)
            log.warning("alignment failed for %s: %s", utt, e)
            if utt in alis:
                new[utt] = alis[utt]
    return new


def train_stage(am, tm, feats, graphs, alis, num_iters, target_gaussians, cfg):
    """Iterate (optional realignment, accumulate, update, grow mixtures)."""
    history, failures = [], []
    start = am.num_gaussians
    inc_iters = max(1, num_iters - 10)
    for it in range(1, num_iters + 1):
        if it in cfg.realign_iters:
            alis = _realign(am, tm, feats, graphs, alis, cfg, failures)
        stats, total, frames = _accumulate(am, tm, feats, alis)
        am.update(stats, cfg.min_occ)
        history.append(total / max(frames, 1))
        target = start + (target_gaussians - start) * min(it, inc_iters) // inc_iters
        if target > am.num_gaussians:
            am.split_mixtures(target, max_per_pdf=cfg.max_per_pdf)
        log.info("iter %d: loglike/frame %.4f, %d gaussians", it, history[-1], am.num_gaussians)
    return am, alis, history, sorted(set(failures))


def _phone_ids(lex):
    return [lex.phone_table[p] for p in lex.phone_set]


def train_mono(feats, text, lex, cfg=None):
    cfg = cfg or GmmConfig()
    topo = HmmTopology.three_state()
    phones = _phone_ids(lex)
    tm = TransitionModel(topo, ContextDependency.monophone(phones, topo, width=1), phones)
    utts = sorted(u for u in text if u in feats)
    if not utts:
        raise EmptyData("no utterances with both features and transcripts")
    am = AmGmm.flat_start([feats[u] for u in utts], tm.num_pdfs)
    pron = {w: prons[0][0] for w, prons in lex.pron_map().items()}
    sil = lex.phone_table[lex.silence_phone]
    alis = {}
    for u in utts:
        seq = [sil] + [lex.phone_table[p] for w in text[u] for p in pron[w]] + [sil]
        try:
            alis[u] = equal_alignment(tm, seq, len(feats[u]))
        except AlignmentFailed:
            log.warning("utterance %s too short for equal alignment", u)
    stats, _, _ = _accumulate(am, tm, feats, alis)
    am.update(stats, cfg.min_occ)
    graphs = training_graphs(lex, text, tm, cfg.sil_prob, utts)
    am, alis, hist, fails = train_stage(am, tm, feats, graphs, alis, cfg.mono_iters, cfg.mono_gaussians, cfg)
    return StageResult(am, tm, alis, hist, fails)


def train_tri(feats, text, lex, mono, cfg=None):
    """Tree from monophone alignments, then Viterbi training on delta features."""
    cfg = cfg or GmmConfig()
    topo = mono.tm.topo
    phones = _phone_ids(lex)
    stats = accumulate_tree_stats(mono.alignments, feats, mono.tm, 3)
    try:
        ctx = build_tree(stats, phones, topo, 3, cfg.tri_leaves, cfg.tree_min_gain)
    except InsufficientData:
        log.warning("insufficient data for a tree; using monophone tying")
        ctx = ContextDependency.monophone(phones, topo, width=3)
    tm = TransitionModel(topo, ctx, phones)
    alis = {u: convert_alignment(a, mono.tm, tm) for u, a in mono.alignments.items()}
    utts = sorted(alis)
    am = AmGmm.flat_start([feats[u] for u in utts], tm.num_pdfs)
    st, _, _ = _accumulate(am, tm, feats, alis)
    am.update(st, min_occ=1.0)
    graphs = training_graphs(lex, text, tm, cfg.sil_prob, sorted(u for u in text if u in feats))
    am, alis, hist, fails = train_stage(am, tm, feats, graphs, alis, cfg.tri_iters, cfg.tri_gaussians, cfg)
    return StageResult(am, tm, alis, hist, fails)


def train_ladder(feats_mono, feats_tri, text, lex, cfg=None):
    """Monophone then delta-triphone stages; returns {"mono": ..., "tri": ...}."""
    mono = train_mono(feats_mono, text, lex, cfg)
    tri = train_tri(feats_tri, text, lex, mono, cfg)
    return {"mono": mono, "tri": tri}


def alignment_phone_sequences(alis, tm, phone_table):
    return [[phone_table.symbol(p) for p, _, _ in tm.phone_segments(a)] for a in (alis[u] for u in sorted(alis))]

