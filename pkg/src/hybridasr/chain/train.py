"""Chain training: example assembly and minibatch gradient descent."""
import json
import logging
from dataclasses import dataclass

import numpy as np

from ..errors import BadConfig, Diverged, DiscardChunk, NumericalFailure
from ..fst.core import LOG, Fst
from .objective import chain_objective_and_grad
from .supervision import ChainSupervision

__all__ = [
    "ChainConfig",
    "ChainExample",
    "EpochLog",
    "make_examples",
    "chain_loss_and_grads",
    "train_chain",
    "write_training_log",
    "write_supervisions",
    "read_supervisions",
]

log = logging.getLogger(__name__)


@dataclass
class ChainConfig:
    frame_subsample: int = 3
    chunk_frames_output: int = 50
    chunk_alternates: tuple = (40, 60)
    tolerance_frames: int = 2
    leaky_coeff: float = 1e-5
    l2_out: float = 5e-4
    xent_scale: float = 0.1
    clamp: tuple = (-30.0, 30.0)
    minibatch: int = 64
    epochs: int = 10
    lr_init: float = 0.00015
    lr_final: float = 0.00015
    max_change: float = 2.0
    phone_lm_order: int = 4
    conv_layers: int = 2
    conv_filters: int = 16
    tdnn_width: int = 256
    tdnn_layers: int = 5
    seed: int = 0

    def __post_init__(self):
        for name in ("frame_subsample", "chunk_frames_output", "minibatch", "epochs", "tdnn_width", "tdnn_layers"):
            if getattr(self, name) < 1:
                raise BadConfig(f"{name} must be positive")
        for name in ("leaky_coeff", "l2_out", "xent_scale", "tolerance_frames", "conv_layers"):
            if getattr(self, name) < 0:
                raise BadConfig(f"{name} must be non-negative")
        if not (self.lr_init > 0 and self.lr_final > 0 and self.max_change > 0):
            raise BadConfig("learning rates and max_change must be positive")
        if not self.clamp[0] < 0 < self.clamp[1]:
            raise BadConfig("clamp must straddle zero")

    def lr(self, epoch):
        """Geometric interpolation from lr_init (epoch 0) to lr_final (last epoch)."""
        if self.epochs == 1:
            return self.lr_init
        return self.lr_init * (self.lr_final / self.lr_init) ** (epoch / (self.epochs - 1))


@dataclass
class ChainExample:
    sup: ChainSupervision
    inputs: np.ndarray  # (num_frames - 1) * subsample + context + 1 rows


@dataclass
class EpochLog:
    epoch: int
    objf: float  # frame-weighted mean per-frame objective
    xent: float  # frame-weighted mean per-frame cross-entropy log-likelihood
    clamp_rate: float  # fraction of minibatches with a clamped chunk
    lr: float = 0.0
    num_updates: int = 0


def make_examples(feats, chunks, net):
    """Pair each supervision chunk with the padded input rows its outputs depend on.

    Utterance features are edge-padded by the network context, so output
    frame k of an utterance sees padded rows [s*k, s*k + context].
    """
    s = net.subsample
    padded = {}
    out = []
    for sup in chunks:
        if sup.utt_id not in padded:
            padded[sup.utt_id] = net.pad_input(np.asarray(feats[sup.utt_id], dtype=net.dtype))
        x = padded[sup.utt_id]
        a = s * sup.start_frame
        b = a + s * (sup.num_frames - 1) + net.context + 1
        if b > len(x):
            log.info("skipping %s chunk %d: supervision longer than features", sup.utt_id, sup.index)
            continue
        out.append(ChainExample(sup, x[a:b]))
    return out


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def chain_loss_and_grads(net, examples, den, cfg):
    """Summed minibatch loss and its parameter gradients.

    Per chunk the loss is the negated total chain objective, plus
    ``l2_out`` times the per-frame mean squared output, minus ``xent_scale``
    times the cross-entropy log-likelihood of the auxiliary head against
    numerator occupancies; every term is summed over frames.
    """
    x = np.stack([e.inputs for e in examples])
    logits, xent_logits, cache = net.forward(x)
    y = logits.astype(np.float64)
    g_y = np.zeros_like(y)
    g_x = np.zeros_like(y)
    stats = {"objf": 0.0, "xent": 0.0, "frames": 0, "clamped": 0, "loss": 0.0}
    lsm = _log_softmax(xent_logits.astype(np.float64))
    P = y.shape[2]
    for b, e in enumerate(examples):
        n = e.sup.num_frames
        try:
            r = chain_objective_and_grad(e.sup, den, y[b], cfg.leaky_coeff, cfg.clamp)
        except (DiscardChunk, NumericalFailure) as err:
            log.warning("chunk %s/%d skipped: %s", e.sup.utt_id, e.sup.index, err)
            stats["clamped"] += 1
            continue
        stats["clamped"] += int(r.clamped)
        stats["objf"] += r.objf * n
        stats["frames"] += n
        xe = float((r.xent_targets * lsm[b]).sum())
        stats["xent"] += xe
        g_y[b] = -r.grad + cfg.l2_out * 2.0 * y[b] / P
        g_x[b] = cfg.xent_scale * (np.exp(lsm[b]) * r.xent_targets.sum(1, keepdims=True) - r.xent_targets)
        stats["loss"] += -r.objf * n + cfg.l2_out * float((y[b] ** 2).mean(1).sum()) - cfg.xent_scale * xe
    grads = net.backward(cache, g_y, g_x)
    return stats, grads


def _minibatches(examples, size, rng):
    """Shuffle, group by input length (so chunks stack) and split into minibatches."""
    order = rng.permutation(len(examples))
    groups = {}
    for i in order:
        groups.setdefault(examples[i].inputs.shape[0], []).append(examples[i])
    batches = []
    for n in sorted(groups):
        g = groups[n]
        batches.extend(g[k : k + size] for k in range(0, len(g), size))
    return [batches[i] for i in rng.permutation(len(batches))]


def train_chain(examples, den, net, cfg=None, rng=None):
    """SGD with global max-change clipping; returns (net, per-epoch logs)."""
    cfg = cfg or ChainConfig()
    if not examples:
        raise ValueError("no training examples")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr(epoch)
        totals = {"objf": 0.0, "xent": 0.0, "frames": 0}
        clamped_batches = 0
        batches = _minibatches(examples, cfg.minibatch, rng)
        for batch in batches:
            stats, grads = chain_loss_and_grads(net, batch, den, cfg)
            clamped_batches += stats["clamped"] > 0
            for k in totals:
                totals[k] += stats[k]
            deltas = {k: -lr * g for k, g in grads.items()}
            norm = float(np.sqrt(sum(float((d.astype(np.float64) ** 2).sum()) for d in deltas.values())))
            scale = min(1.0, cfg.max_change / norm) if norm > 0 else 1.0
            if not np.isfinite(norm):
                raise Diverged(f"non-finite update in epoch {epoch}")
            for k, d in deltas.items():
                net.params[k] += (scale * d).astype(net.dtype)
        frames = max(totals["frames"], 1)
        entry = EpochLog(epoch, totals["objf"] / frames, totals["xent"] / frames, clamped_batches / len(batches), lr, len(batches))
        history.append(entry)
        log.info("epoch %d objf %.4f xent %.4f clamp_rate %.3f", entry.epoch, entry.objf, entry.xent, entry.clamp_rate)
        if entry.clamp_rate > 0.5:
            raise Diverged(f"objective clamped in {entry.clamp_rate:.0%} of minibatches in epoch {epoch}")
    return net, history


def write_training_log(history, path):
    with open(path, "w") as f:
        for h in history:
            f.write(f"{h.epoch} {h.objf:.6f} {h.xent:.6f} {h.clamp_rate:.4f}\n")


def write_supervisions(chunks, path):
    """One JSON record per line: utt_id, index, start_frame, num_frames, weight, FST text."""
    with open(path, "w") as f:
        for c in chunks:
            rec = {
                "utt_id": c.utt_id,
                "index": c.index,
                "start_frame": c.start_frame,
                "num_frames": c.num_frames,
                "weight": c.weight,
                "fst": c.fst.to_text(),
            }
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_supervisions(path):
    out = []
    with open(path) as f:
        for line in f:
            if line.strip():
                r = json.loads(line)
                fst = Fst.from_text(r["fst"], LOG)
                out.append(ChainSupervision(fst, r["num_frames"], r["utt_id"], r["index"], r["start_frame"], r["weight"]))
    return out

