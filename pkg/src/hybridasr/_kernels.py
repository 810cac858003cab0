"""numba kernels for token-passing Viterbi search."""
import numpy as np
from numba import njit

INF = np.inf


@njit(cache=True)
def _grow(arr, n):
    out = np.empty(max(n, 2 * arr.shape[0]), arr.dtype)
    out[: arr.shape[0]] = arr
    return out


@njit(cache=True)
def viterbi_search(
    arc_start, ilabels, olabels, weights, nexts, finals, start,
    label2pdf, loglikes, acoustic_scale, beam, max_active,
):
    """Token passing over a CSR graph.

    Emitting arcs (ilabel > 0) consume one frame scored by
    ``loglikes[t, label2pdf[ilabel]]``; arcs with ilabel 0 are followed
    within a frame. Returns (best_record, total, acoustic, graph,
    rec_prev, rec_ilabel, rec_olabel, active_counts); best_record is -1 when
    no token reaches a final state.
    """
    n = finals.shape[0]
    T = loglikes.shape[0]
    cap = 1024
    rec_prev = np.empty(cap, np.int64)
    rec_il = np.empty(cap, np.int64)
    rec_ol = np.empty(cap, np.int64)
    nrec = 0

    cost = np.full(n, INF)
    ac = np.zeros(n)
    bp = np.full(n, -1, np.int64)
    ncost = np.full(n, INF)
    nac = np.zeros(n)
    nbp = np.full(n, -1, np.int64)
    nil = np.zeros(n, np.int64)
    nol = np.zeros(n, np.int64)
    active = np.empty(n, np.int64)
    nactive = 0
    nxt_active = np.empty(n, np.int64)
    stamp = np.full(n, -1, np.int64)
    queue = np.empty(n, np.int64)
    inq = np.zeros(n, np.bool_)
    active_counts = np.zeros(T, np.int64)

    cost[start] = 0.0
    active[0] = start
    nactive = 1
    stamp[start] = 0

    for t in range(T + 1):
        # epsilon closure of the current token set
        qh = 0
        qt = 0
        for i in range(nactive):
            queue[qt] = active[i]
            qt += 1
            inq[active[i]] = True
        while qh != qt:
            s = queue[qh]
            qh += 1
            if qh == n:
                qh = 0
            inq[s] = False
            for k in range(arc_start[s], arc_start[s + 1]):
                if ilabels[k] != 0:
                    continue
                d = nexts[k]
                c = cost[s] + weights[k]
                if c < cost[d]:
                    if stamp[d] != t:
                        stamp[d] = t
                        active[nactive] = d
                        nactive += 1
                    cost[d] = c
                    ac[d] = ac[s]
                    if nrec == rec_prev.shape[0]:
                        rec_prev = _grow(rec_prev, nrec + 1)
                        rec_il = _grow(rec_il, nrec + 1)
                        rec_ol = _grow(rec_ol, nrec + 1)
                    rec_prev[nrec] = bp[s]
                    rec_il[nrec] = 0
                    rec_ol[nrec] = olabels[k]
                    bp[d] = nrec
                    nrec += 1
                    if not inq[d]:
                        inq[d] = True
                        queue[qt] = d
                        qt += 1
                        if qt == n:
                            qt = 0
        if t == T:
            break
        # pruning thresholds
        best = INF
        for i in range(nactive):
            if cost[active[i]] < best:
                best = cost[active[i]]
        if best == INF:
            break
        cutoff = best + beam
        if nactive > max_active:
            vals = np.empty(nactive)
            for i in range(nactive):
                vals[i] = cost[active[i]]
            kth = np.partition(vals, max_active - 1)[max_active - 1]
            if kth < cutoff:
                cutoff = kth
        # emitting step
        nn = 0
        cnt = 0
        for i in range(nactive):
            s = active[i]
            cs = cost[s]
            if cs > cutoff:
                continue
            cnt += 1
            for k in range(arc_start[s], arc_start[s + 1]):
                lab = ilabels[k]
                if lab == 0:
                    continue
                a = -acoustic_scale * loglikes[t, label2pdf[lab]]
                c = cs + weights[k] + a
                d = nexts[k]
                if c < ncost[d]:
                    if ncost[d] == INF:
                        nxt_active[nn] = d
                        nn += 1
                    ncost[d] = c
                    nac[d] = ac[s] + a
                    nbp[d] = bp[s]
                    nil[d] = lab
                    nol[d] = olabels[k]
        active_counts[t] = cnt
        for i in range(nactive):
            s = active[i]
            cost[s] = INF
            bp[s] = -1
        nactive = 0
        for i in range(nn):
            d = nxt_active[i]
            if nrec == rec_prev.shape[0]:
                rec_prev = _grow(rec_prev, nrec + 1)
                rec_il = _grow(rec_il, nrec + 1)
                rec_ol = _grow(rec_ol, nrec + 1)
            rec_prev[nrec] = nbp[d]
            rec_il[nrec] = nil[d]
            rec_ol[nrec] = nol[d]
            cost[d] = ncost[d]
            ac[d] = nac[d]
            bp[d] = nrec
            nrec += 1
            ncost[d] = INF
            active[nactive] = d
            nactive += 1
            stamp[d] = t + 1

    best_rec = -1
    best_total = INF
    best_ac = 0.0
    if T > 0 or nactive > 0:
        for i in range(nactive):
            s = active[i]
            if finals[s] == INF or cost[s] == INF:
                continue
            tot = cost[s] + finals[s]
            if tot < best_total:
                best_total = tot
                best_ac = ac[s]
                best_rec = bp[s]
                if best_rec == -1:
                    best_rec = -2  # final start state reached without records
    return (best_rec, best_total, best_ac, best_total - best_ac,
            rec_prev[:nrec], rec_il[:nrec], rec_ol[:nrec], active_counts)


@njit(cache=True)
def den_forward_backward(src, dst, pdf, prob, init, logits, leaky):
    """Scaled probability-domain forward-backward over an epsilon-free graph.

    Every state is final with weight one. Before each frame a leaky jump
    moves ``leaky * sum(alpha) * init`` extra mass into the states. Returns
    (logprob, posteriors, ok); ok is False when a frame's alpha sum is not a
    positive finite number.
    """
    T = logits.shape[0]
    P = logits.shape[1]
    n = init.shape[0]
    m = src.shape[0]
    alphas = np.zeros((T + 1, n))
    scales = np.zeros(T)
    shift = np.zeros(T)
    post = np.zeros((T, P))
    for s in range(n):
        alphas[0, s] = init[s]
    logprob = 0.0
    e = np.empty(P)
    u = np.empty(n)
    for t in range(T):
        mx = logits[t, 0]
        for p in range(P):
            if logits[t, p] > mx:
                mx = logits[t, p]
        shift[t] = mx
        for p in range(P):
            e[p] = np.exp(logits[t, p] - mx)
        tot = 0.0
        for s in range(n):
            tot += alphas[t, s]
        for s in range(n):
            u[s] = alphas[t, s] + leaky * tot * init[s]
        for k in range(m):
            alphas[t + 1, dst[k]] += u[src[k]] * prob[k] * e[pdf[k]]
        c = 0.0
        for s in range(n):
            c += alphas[t + 1, s]
        if not (c > 0.0) or not np.isfinite(c):
            return -np.inf, post, False
        for s in range(n):
            alphas[t + 1, s] /= c
        scales[t] = c
        logprob += np.log(c) + mx
    beta = np.ones(n)
    bu = np.empty(n)
    for t in range(T - 1, -1, -1):
        for p in range(P):
            e[p] = np.exp(logits[t, p] - shift[t])
        tot = 0.0
        for s in range(n):
            tot += alphas[t, s]
        for s in range(n):
            u[s] = alphas[t, s] + leaky * tot * init[s]
            bu[s] = 0.0
        c = scales[t]
        for k in range(m):
            w = prob[k] * e[pdf[k]] * beta[dst[k]] / c
            bu[src[k]] += w
            post[t, pdf[k]] += u[src[k]] * w
        jump = 0.0
        for s in range(n):
            jump += init[s] * bu[s]
        for s in range(n):
            beta[s] = bu[s] + leaky * jump
    return logprob, post, True
