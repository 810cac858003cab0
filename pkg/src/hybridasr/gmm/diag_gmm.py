"""Diagonal-covariance GMMs and the per-pdf acoustic model container."""
import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..errors import EmptyData
from ..serialize import read_arrays, write_arrays

__all__ = ["DiagGmm", "AmGmm", "GmmStats", "variance_floor"]

LOG_2PI = math.log(2.0 * math.pi)


def variance_floor(global_var, rel=1e-4, absolute=1e-6):
    return np.maximum(rel * np.asarray(global_var), absolute)


@dataclass
class DiagGmm:
    weights: np.ndarray
    means: np.ndarray
    vars: np.ndarray

    @property
    def num_components(self):
        return len(self.weights)

    def component_loglikes(self, x):
        x = np.atleast_2d(x)
        iv = 1.0 / self.vars
        gconst = np.log(self.weights) - 0.5 * (self.means.shape[1] * LOG_2PI + np.log(self.vars).sum(1) + (self.means ** 2 * iv).sum(1))
        return gconst + x @ (self.means * iv).T - 0.5 * (x ** 2) @ iv.T

    def loglike(self, x):
        return logsumexp(self.component_loglikes(x), axis=1)


class GmmStats:
    """Per-component zeroth, first and second order statistics of one pdf."""

    def __init__(self, k, dim):
        self.occ = np.zeros(k)
        self.x = np.zeros((k, dim))
        self.x2 = np.zeros((k, dim))


class AmGmm:
    """One DiagGmm per pdf id, with a stacked cache for fast scoring."""

    def __init__(self, pdfs, var_floor):
        self.pdfs = list(pdfs)
        self.var_floor = np.asarray(var_floor, dtype=float)
        self.occ = [np.zeros(g.num_components) for g in self.pdfs]
        self._cache = None

    @property
    def num_pdfs(self):
        return len(self.pdfs)

    @property
    def dim(self):
        return self.pdfs[0].means.shape[1]

    @property
    def num_gaussians(self):
        return sum(g.num_components for g in self.pdfs)

    @classmethod
    def flat_start(cls, feats, num_pdfs):
        """Every pdf starts as one Gaussian with the global mean and variance."""
        frames = [f for f in feats if len(f)]
        if not frames:
            raise EmptyData("no feature frames for flat start")
        x = np.concatenate(frames)
        mean = x.mean(0)
        var = x.var(0)
        floor = variance_floor(var)
        var = np.maximum(var, floor)
        pdfs = [DiagGmm(np.ones(1), mean[None, :].copy(), var[None, :].copy()) for _ in range(num_pdfs)]
        return cls(pdfs, floor)

    def _build_cache(self):
        w, m, v, owner = [], [], [], []
        for p, g in enumerate(self.pdfs):
            w.append(g.weights)
            m.append(g.means)
            v.append(g.vars)
            owner.append(np.full(g.num_components, p))
        w, m, v = np.concatenate(w), np.concatenate(m), np.concatenate(v)
        iv = 1.0 / v
        with np.errstate(divide="ignore"):
            gconst = np.log(w) - 0.5 * (m.shape[1] * LOG_2PI + np.log(v).sum(1) + (m * m * iv).sum(1))
        sizes = np.array([g.num_components for g in self.pdfs])
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        self._cache = (gconst, (m * iv).T.copy(), (-0.5 * iv).T.copy(), offsets, np.concatenate(owner))

    def loglikes(self, x):
        """``(T, num_pdfs)`` matrix of per-pdf log-likelihoods."""
        if self._cache is None:
            self._build_cache()
        gconst, miv, hiv, offsets, _ = self._cache
        comp = gconst + x @ miv + (x * x) @ hiv
        mx = np.maximum.reduceat(comp, offsets, axis=1)
        return mx + np.log(np.add.reduceat(np.exp(comp - np.repeat(mx, np.diff(np.append(offsets, comp.shape[1])), axis=1)), offsets, axis=1))

    def invalidate(self):
        self._cache = None

    # estimation
    def accumulate(self, frames, pdf_ids, stats=None):
        """Hard pdf assignment, soft component responsibilities within the pdf.

        Returns (stats, total log-likelihood under the current model).
        """
        if stats is None:
            stats = [GmmStats(g.num_components, self.dim) for g in self.pdfs]
        pdf_ids = np.asarray(pdf_ids)
        total = 0.0
        order = np.argsort(pdf_ids, kind="stable")
        sorted_ids = pdf_ids[order]
        bounds = np.flatnonzero(np.diff(sorted_ids)) + 1
        for chunk in np.split(order, bounds):
            if not len(chunk):
                continue
            p = int(pdf_ids[chunk[0]])
            x = frames[chunk]
            cl = self.pdfs[p].component_loglikes(x)
            ll = logsumexp(cl, axis=1)
            total += float(ll.sum())
            post = np.exp(cl - ll[:, None])
            s = stats[p]
            s.occ += post.sum(0)
            s.x += post.T @ x
            s.x2 += post.T @ (x * x)
        return stats, total

    def update(self, stats, min_occ=10.0):
        """ML update; components with tiny occupancy keep their mean/variance."""
        for p, (g, s) in enumerate(zip(self.pdfs, stats)):
            tot = s.occ.sum()
            if tot <= 0:
                continue
            keep = s.occ > 0
            if not keep.all() and keep.any():
                g = DiagGmm(g.weights[keep], g.means[keep], g.vars[keep])
                s_occ, s_x, s_x2 = s.occ[keep], s.x[keep], s.x2[keep]
            else:
                s_occ, s_x, s_x2 = s.occ, s.x, s.x2
            weights = s_occ / tot
            means = g.means.copy()
            vars_ = g.vars.copy()
            upd = s_occ >= min_occ
            if upd.any():
                mu = s_x[upd] / s_occ[upd, None]
                var = s_x2[upd] / s_occ[upd, None] - mu * mu
                means[upd] = mu
                vars_[upd] = np.maximum(var, self.var_floor)
            self.pdfs[p] = DiagGmm(weights, means, vars_)
            self.occ[p] = s_occ.copy()
        self.invalidate()

    def split_mixtures(self, target_total, perturb=0.01, max_per_pdf=32):
        """Split the highest-occupancy components until ``target_total`` is reached.

        Both halves of a split go back into the queue with half the
        occupancy, so a component can be split again within one call.
        """
        total = self.num_gaussians
        comps = []
        heap = []
        for p, g in enumerate(self.pdfs):
            occ = self.occ[p] if len(self.occ[p]) == g.num_components else g.weights
            comps.append([list(g.weights), list(g.means), list(g.vars), [float(o) for o in occ]])
            for k in range(g.num_components):
                heapq.heappush(heap, (-float(occ[k]), p, k))
        changed = set()
        while total < target_total and heap:
            _, p, k = heapq.heappop(heap)
            w, m, v, occ = comps[p]
            if len(w) >= max_per_pdf:
                continue
            delta = perturb * np.sqrt(v[k])
            w[k] /= 2
            occ[k] /= 2
            w.append(w[k])
            occ.append(occ[k])
            m.append(m[k] - delta)
            v.append(v[k].copy())
            m[k] = m[k] + delta
            heapq.heappush(heap, (-occ[k], p, k))
            heapq.heappush(heap, (-occ[-1], p, len(w) - 1))
            changed.add(p)
            total += 1
        for p in changed:
            w, m, v, occ = comps[p]
            self.pdfs[p] = DiagGmm(np.array(w), np.array(m), np.array(v))
            self.occ[p] = np.array(occ)
        self.invalidate()
        return self

    # io
    def to_arrays(self):
        sizes = np.array([g.num_components for g in self.pdfs], dtype=np.int64)
        return {
            "gmm_sizes": sizes,
            "gmm_weights": np.concatenate([g.weights for g in self.pdfs]),
            "gmm_means": np.concatenate([g.means for g in self.pdfs]),
            "gmm_vars": np.concatenate([g.vars for g in self.pdfs]),
            "gmm_var_floor": self.var_floor,
        }

    @classmethod
    def from_arrays(cls, arrays):
        sizes = arrays["gmm_sizes"]
        offs = np.concatenate([[0], np.cumsum(sizes)])
        pdfs = [
            DiagGmm(arrays["gmm_weights"][a:b].copy(), arrays["gmm_means"][a:b].copy(), arrays["gmm_vars"][a:b].copy())
            for a, b in zip(offs[:-1], offs[1:])
        ]
        return cls(pdfs, arrays["gmm_var_floor"])

    def write(self, path, tm=None, meta=None):
        arrays = self.to_arrays()
        meta = dict(meta or {})
        if tm is not None:
            arrays.update(tm.to_arrays())
            meta["topology"] = tm.topo.kind
        write_arrays(path, meta, arrays)

    @classmethod
    def read(cls, path):
        from ..graph.topology import TransitionModel

        meta, arrays = read_arrays(path)
        am = cls.from_arrays(arrays)
        tm = TransitionModel.from_arrays(meta["topology"], arrays) if "tm_tree" in arrays else None
        return am, tm, meta
