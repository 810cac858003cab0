"""Small time-delay network with an optional 2-D convolutional front end.

Arrays are batched as (batch, time, ...). Every layer uses valid
convolution in time, so the network shrinks its input by its total context.
"""
from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch, InputTooShort
from ..serialize import read_arrays, write_arrays

__all__ = ["LayerSpec", "TdnnNet", "default_specs"]


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" (3x3 over time x feature) or "tdnn"
    dim: int  # filters for conv, output width for tdnn
    offsets: tuple = (-1, 0, 1)  # in units of the layer's input frame rate
    subsample: int = 1


def default_specs(conv_layers=2, conv_filters=16, width=256, num_tdnn=5, subsample_at=3):
    specs = [LayerSpec("conv", conv_filters) for _ in range(conv_layers)]
    for i in range(1, num_tdnn + 1):
        specs.append(LayerSpec("tdnn", width, (-1, 0, 1), 3 if i == subsample_at else 1))
    return specs


def _splice(h, offsets, sub):
    """(B, T, d) -> (B, n, d * len(offsets)) gathering h[k*sub + o - min(o)]."""
    lo = min(offsets)
    span = max(offsets) - lo
    n = (h.shape[1] - span - 1) // sub + 1
    parts = [h[:, o - lo : o - lo + sub * (n - 1) + 1 : sub] for o in offsets]
    return np.concatenate(parts, axis=2), n


def _unsplice(g, offsets, sub, in_shape):
    lo = min(offsets)
    n = g.shape[1]
    d = in_shape[2]
    out = np.zeros(in_shape, dtype=g.dtype)
    for i, o in enumerate(offsets):
        out[:, o - lo : o - lo + sub * (n - 1) + 1 : sub] += g[:, :, i * d : (i + 1) * d]
    return out


def _im2col(h):
    """(B, T, F, C) -> (B, T-2, F, 9C) patches with zero padding along F."""
    B, T, F, C = h.shape
    p = np.zeros((B, T, F + 2, C), dtype=h.dtype)
    p[:, :, 1:-1] = h
    cols = [p[:, dt : T - 2 + dt, df : df + F] for dt in range(3) for df in range(3)]
    return np.concatenate(cols, axis=3)


def _col2im(g, shape):
    B, T, F, C = shape
    p = np.zeros((B, T, F + 2, C), dtype=g.dtype)
    k = 0
    for dt in range(3):
        for df in range(3):
            p[:, dt : T - 2 + dt, df : df + F] += g[..., k * C : (k + 1) * C]
            k += 1
    return p[:, :, 1:-1]


class TdnnNet:
    def __init__(self, input_dim, num_pdfs, specs, rng=None, dtype=np.float32, params=None):
        self.input_dim = int(input_dim)
        self.num_pdfs = int(num_pdfs)
        self.specs = list(specs)
        self.dtype = np.dtype(dtype)
        seen_tdnn = False
        for s in self.specs:
            if s.kind == "conv" and seen_tdnn:
                raise ValueError("conv layers must precede tdnn layers")
            seen_tdnn |= s.kind == "tdnn"
        if params is not None:
            self.params = {k: np.asarray(v, dtype=self.dtype) for k, v in params.items()}
            return
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {}
        chans, width = 1, None
        for i, s in enumerate(self.specs):
            if s.kind == "conv":
                fan_in = 9 * chans
                self.params[f"L{i}.W"] = rng.normal(0, np.sqrt(2.0 / fan_in), (fan_in, s.dim))
                chans = s.dim
            else:
                fan_in = (width if width is not None else self.input_dim * chans) * len(s.offsets)
                self.params[f"L{i}.W"] = rng.normal(0, np.sqrt(2.0 / fan_in), (fan_in, s.dim))
                width = s.dim
            self.params[f"L{i}.b"] = np.zeros(s.dim)
        hid = width if width is not None else self.input_dim * chans
        for head in ("out", "xent"):
            self.params[f"{head}.W"] = rng.normal(0, 0.5 / np.sqrt(hid), (hid, self.num_pdfs))
            self.params[f"{head}.b"] = np.zeros(self.num_pdfs)
        self.params = {k: v.astype(self.dtype) for k, v in self.params.items()}

    # geometry
    @property
    def left_context(self):
        return self._context()[0]

    @property
    def right_context(self):
        return self._context()[1]

    @property
    def context(self):
        left, right = self._context()
        return left + right

    @property
    def subsample(self):
        f = 1
        for s in self.specs:
            f *= s.subsample
        return f

    def _context(self):
        left = right = 0
        stride = 1
        for s in self.specs:
            offs = (-1, 0, 1) if s.kind == "conv" else s.offsets
            left += -min(offs) * stride
            right += max(offs) * stride
            stride *= s.subsample
        return left, right

    def output_length(self, num_input):
        n = num_input
        for s in self.specs:
            offs = (-1, 0, 1) if s.kind == "conv" else s.offsets
            span = max(offs) - min(offs)
            if n - span < 1:
                return 0
            n = (n - span - 1) // s.subsample + 1
        return n

    # computation
    def forward(self, x):
        """x: (B, T, input_dim) -> (logits, xent_logits, cache); outputs (B, T', num_pdfs)."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.shape[2] != self.input_dim:
            raise DimensionMismatch(f"net expects {self.input_dim}-dim input, got {x.shape[2]}")
        if self.output_length(x.shape[1]) < 1:
            raise InputTooShort(f"{x.shape[1]} input frames shorter than context {self.context} + 1")
        p = self.params
        cache = []
        h = x
        conv_shape = None
        for i, s in enumerate(self.specs):
            if s.kind == "conv":
                if h.ndim == 3:
                    h = h[..., None]
                cols = _im2col(h)
                z = cols @ p[f"L{i}.W"] + p[f"L{i}.b"]
                cache.append(("conv", h.shape, cols, z))
                h = np.maximum(z, 0)
            else:
                if h.ndim == 4:
                    conv_shape = h.shape
                    h = h.reshape(h.shape[0], h.shape[1], -1)
                spliced, _ = _splice(h, s.offsets, s.subsample)
                z = spliced @ p[f"L{i}.W"] + p[f"L{i}.b"]
                cache.append(("tdnn", h.shape, spliced, z))
                h = np.maximum(z, 0)
        if h.ndim == 4:
            conv_shape = h.shape
            h = h.reshape(h.shape[0], h.shape[1], -1)
        logits = h @ p["out.W"] + p["out.b"]
        xent = h @ p["xent.W"] + p["xent.b"]
        return logits, xent, (cache, h, conv_shape)

    def backward(self, cache, g_logits, g_xent=None):
        """Parameter gradients given d(loss)/d(logits) and d(loss)/d(xent_logits)."""
        layers, h, conv_shape = cache
        p = self.params
        grads = {}
        g_logits = np.asarray(g_logits, dtype=self.dtype)
        grads["out.W"] = np.einsum("bth,btp->hp", h, g_logits)
        grads["out.b"] = g_logits.sum((0, 1))
        gh = g_logits @ p["out.W"].T
        if g_xent is not None:
            g_xent = np.asarray(g_xent, dtype=self.dtype)
            grads["xent.W"] = np.einsum("bth,btp->hp", h, g_xent)
            grads["xent.b"] = g_xent.sum((0, 1))
            gh = gh + g_xent @ p["xent.W"].T
        else:
            grads["xent.W"] = np.zeros_like(p["xent.W"])
            grads["xent.b"] = np.zeros_like(p["xent.b"])
        for i in range(len(self.specs) - 1, -1, -1):
            kind, in_shape, inp, z = layers[i]
            s = self.specs[i]
            gz = gh * (z > 0)
            W = p[f"L{i}.W"]
            if kind == "tdnn":
                grads[f"L{i}.W"] = inp.reshape(-1, inp.shape[-1]).T @ gz.reshape(-1, gz.shape[-1])
                grads[f"L{i}.b"] = gz.sum((0, 1))
                if i > 0:
                    gh = _unsplice(gz @ W.T, s.offsets, s.subsample, in_shape)
                    if layers[i - 1][0] == "conv":
                        gh = gh.reshape(conv_shape)
            else:
                if gh.ndim == 3:
                    gh = gh.reshape(gz.shape)
                grads[f"L{i}.W"] = inp.reshape(-1, inp.shape[-1]).T @ gz.reshape(-1, gz.shape[-1])
                grads[f"L{i}.b"] = gz.sum((0, 1, 2))
                if i > 0:
                    gh = _col2im(gz @ W.T, in_shape)
        return grads

    def infer(self, frames):
        """Raw output logits for one utterance: ``ceil((T - context) / subsample)`` frames."""
        logits, _, _ = self.forward(np.asarray(frames)[None])
        return logits[0].astype(np.float64)

    def pad_input(self, frames):
        """Edge-replicate by the network context so the output covers ``ceil(T / subsample)`` frames."""
        return np.pad(frames, ((self.left_context, self.right_context), (0, 0)), mode="edge")

    # io
    def write(self, path):
        meta = {
            "input_dim": self.input_dim,
            "num_pdfs": self.num_pdfs,
            "specs": [[s.kind, s.dim, list(s.offsets), s.subsample] for s in self.specs],
        }
        write_arrays(path, meta, {k: v.astype(np.float32) for k, v in self.params.items()})

    @classmethod
    def read(cls, path, dtype=np.float32):
        meta, arrays = read_arrays(path)
        specs = [LayerSpec(k, d, tuple(o), s) for k, d, o, s in meta["specs"]]
        return cls(meta["input_dim"], meta["num_pdfs"], specs, dtype=dtype, params=arrays)
