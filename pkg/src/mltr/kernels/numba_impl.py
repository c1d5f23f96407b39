"""Loop-based kernels compiled with numba.

Same signatures and buffer layouts as ``numpy_impl``. Written as explicit
loops because the lists and layers involved are small (tens of items, tens
of units) and per-call overhead dominates the vectorized path.
"""

import math

import numpy as np
from numba import njit

LN2 = math.log(2.0)

_jit = njit(cache=True, nogil=True)


@_jit
def _layer(theta, dims, l):
    # (W, b) views of layer l; W is (fan_in, fan_out) row-major
    off = 0
    for m in range(l):
        off += dims[m] * dims[m + 1] + dims[m + 1]
    fi = dims[l]
    fo = dims[l + 1]
    return theta[off:off + fi * fo].reshape((fi, fo)), theta[off + fi * fo:off + fi * fo + fo]


@_jit
def _block(buf, dims, n, l):
    # (n, dims[l+1]) view of pre-activation block l
    off = 0
    for m in range(l):
        off += n * dims[m + 1]
    return buf[off:off + n * dims[l + 1]].reshape((n, dims[l + 1]))


@_jit
def _inputs(X, zbuf, dims, l):
    # input to layer l: raw features for l == 0, rectified block l-1 otherwise
    if l == 0:
        return X
    Z = _block(zbuf, dims, X.shape[0], l - 1)
    A = np.empty(Z.shape)
    for i in range(Z.shape[0]):
        for k in range(Z.shape[1]):
            z = Z[i, k]
            A[i, k] = z if z > 0.0 else 0.0
    return A


@_jit
def _r_inputs(X, zbuf, rzbuf, dims, l):
    # R-derivative of layer l's input; zero for the raw features
    n = X.shape[0]
    if l == 0:
        return np.zeros((n, dims[0]))
    Z = _block(zbuf, dims, n, l - 1)
    RZ = _block(rzbuf, dims, n, l - 1)
    RA = np.empty(Z.shape)
    for i in range(n):
        for k in range(Z.shape[1]):
            RA[i, k] = RZ[i, k] if Z[i, k] > 0.0 else 0.0
    return RA


@_jit
def _affine(A, W, b, out):
    n, fi = A.shape
    fo = W.shape[1]
    for i in range(n):
        for j in range(fo):
            out[i, j] = b[j]
        for k in range(fi):
            a = A[i, k]
            if a == 0.0:
                continue
            for j in range(fo):
                out[i, j] += a * W[k, j]


@_jit
def _back_delta(delta, W, Z):
    # (delta @ W.T) masked by ReLU'(Z)
    n, fi = Z.shape
    fo = W.shape[1]
    nd = np.zeros((n, fi))
    for i in range(n):
        for k in range(fi):
            if Z[i, k] <= 0.0:
                continue
            acc = 0.0
            for j in range(fo):
                acc += delta[i, j] * W[k, j]
            nd[i, k] = acc
    return nd


@_jit
def _outer_acc(A, delta, GW, gb):
    # GW += A.T @ delta; gb += column sums of delta
    n, fi = A.shape
    fo = delta.shape[1]
    for i in range(n):
        for k in range(fi):
            a = A[i, k]
            if a == 0.0:
                continue
            for j in range(fo):
                GW[k, j] += a * delta[i, j]
        for j in range(fo):
            gb[j] += delta[i, j]


@_jit
def mlp_forward(theta, dims, X):
    X = np.ascontiguousarray(X)
    n = X.shape[0]
    nl = dims.shape[0] - 1
    total = 0
    for l in range(1, dims.shape[0]):
        total += dims[l]
    zbuf = np.empty(n * total)
    for l in range(nl):
        W, b = _layer(theta, dims, l)
        _affine(_inputs(X, zbuf, dims, l), W, b, _block(zbuf, dims, n, l))
    scores = _block(zbuf, dims, n, nl - 1)[:, 0].copy()
    return scores, zbuf


@_jit
def mlp_backward(theta, dims, X, zbuf, g):
    X = np.ascontiguousarray(X)
    n = X.shape[0]
    nl = dims.shape[0] - 1
    grad = np.zeros(theta.shape[0])
    delta = np.empty((n, 1))
    for i in range(n):
        delta[i, 0] = g[i]
    for l in range(nl - 1, -1, -1):
        W, _ = _layer(theta, dims, l)
        GW, gb = _layer(grad, dims, l)
        _outer_acc(_inputs(X, zbuf, dims, l), delta, GW, gb)
        if l > 0:
            delta = _back_delta(delta, W, _block(zbuf, dims, n, l - 1))
    return grad


@_jit
def mlp_rforward(theta, dims, X, zbuf, v):
    X = np.ascontiguousarray(X)
    n = X.shape[0]
    nl = dims.shape[0] - 1
    rzbuf = np.empty(zbuf.shape[0])
    for l in range(nl):
        W, _ = _layer(theta, dims, l)
        VW, vb = _layer(v, dims, l)
        RZ = _block(rzbuf, dims, n, l)
        _affine(_inputs(X, zbuf, dims, l), VW, vb, RZ)
        if l > 0:
            RA = _r_inputs(X, zbuf, rzbuf, dims, l)
            fi, fo = W.shape
            for i in range(n):
                for k in range(fi):
                    ra = RA[i, k]
                    if ra == 0.0:
                        continue
                    for j in range(fo):
                        RZ[i, j] += ra * W[k, j]
    rs = _block(rzbuf, dims, n, nl - 1)[:, 0].copy()
    return rs, rzbuf


@_jit
def mlp_rbackward(theta, dims, X, zbuf, rzbuf, g, rg, v):
    X = np.ascontiguousarray(X)
    n = X.shape[0]
    nl = dims.shape[0] - 1
    hv = np.zeros(theta.shape[0])
    delta = np.empty((n, 1))
    rdelta = np.empty((n, 1))
    for i in range(n):
        delta[i, 0] = g[i]
        rdelta[i, 0] = rg[i]
    for l in range(nl - 1, -1, -1):
        W, _ = _layer(theta, dims, l)
        VW, _ = _layer(v, dims, l)
        HW, hb = _layer(hv, dims, l)
        _outer_acc(_inputs(X, zbuf, dims, l), rdelta, HW, hb)
        if l > 0:
            zero_b = np.zeros(hb.shape[0])
            _outer_acc(_r_inputs(X, zbuf, rzbuf, dims, l), delta, HW, zero_b)
            Z = _block(zbuf, dims, n, l - 1)
            nrd = _back_delta(rdelta, W, Z)
            nrd += _back_delta(delta, VW, Z)
            delta = _back_delta(delta, W, Z)
            rdelta = nrd
    return hv


@_jit
def _softplus(x):
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@_jit
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@_jit
def rank_mse(s, y):
    n = s.shape[0]
    grad = np.empty(n)
    loss = 0.0
    for i in range(n):
        r = s[i] - y[i]
        loss += r * r
        grad[i] = 2.0 * r
    return loss, grad


@_jit
def rank_positions(s):
    order = np.argsort(-s, kind="mergesort")
    pos = np.empty(s.shape[0], dtype=np.int64)
    for r in range(s.shape[0]):
        pos[order[r]] = r + 1
    return pos


@_jit
def _idcg(y):
    ideal = np.sort(y)[::-1]
    acc = 0.0
    for i in range(ideal.shape[0]):
        acc += (2.0 ** ideal[i] - 1.0) / math.log2(i + 2.0)
    return acc


@_jit
def delta_ndcg(s, y):
    n = s.shape[0]
    out = np.zeros((n, n))
    idcg = _idcg(y)
    if idcg == 0.0:
        return out, 0.0
    pos = rank_positions(s)
    for j in range(n):
        gj = 2.0 ** y[j] - 1.0
        dj = 1.0 / math.log2(pos[j] + 1.0)
        for k in range(n):
            gk = 2.0 ** y[k] - 1.0
            dk = 1.0 / math.log2(pos[k] + 1.0)
            out[j, k] = abs((gj - gk) * (dj - dk)) / idcg
    return out, idcg


@_jit
def _pairwise(s, y, sigma, w, weighted):
    n = s.shape[0]
    grad = np.zeros(n)
    loss = 0.0
    for j in range(n):
        for k in range(n):
            if y[j] <= y[k]:
                continue
            c = w[j, k] if weighted else 1.0
            u = s[j] - s[k]
            loss += c * _softplus(-sigma * u)
            d = -(sigma / LN2) * c * _sigmoid(-sigma * u)
            grad[j] += d
            grad[k] -= d
    return loss / LN2, grad


@_jit
def ranknet(s, y, sigma):
    return _pairwise(s, y, sigma, np.empty((0, 0)), False)


@_jit
def lambdarank(s, y, sigma):
    w, idcg = delta_ndcg(s, y)
    if idcg == 0.0:
        return 0.0, np.zeros(s.shape[0])
    return _pairwise(s, y, sigma, w, True)


@_jit
def _log_softmax(x):
    m = np.max(x)
    acc = 0.0
    for i in range(x.shape[0]):
        acc += math.exp(x[i] - m)
    return x - m - math.log(acc)


@_jit
def listnet(s, y):
    logp = _log_softmax(y)
    logq = _log_softmax(s)
    n = s.shape[0]
    grad = np.empty(n)
    loss = 0.0
    for i in range(n):
        p = math.exp(logp[i])
        loss -= p * logq[i]
        grad[i] = math.exp(logq[i]) - p
    return loss, grad


@_jit
def _pairwise_hvp(s, y, sigma, w, weighted, v):
    n = s.shape[0]
    out = np.zeros(n)
    for j in range(n):
        for k in range(n):
            if y[j] <= y[k]:
                continue
            c = w[j, k] if weighted else 1.0
            u = s[j] - s[k]
            h = (sigma * sigma / LN2) * c * _sigmoid(sigma * u) * _sigmoid(-sigma * u) * (v[j] - v[k])
            out[j] += h
            out[k] -= h
    return out


@_jit
def rank_mse_hvp(s, y, v):
    return 2.0 * v


@_jit
def ranknet_hvp(s, y, sigma, v):
    return _pairwise_hvp(s, y, sigma, np.empty((0, 0)), False, v)


@_jit
def lambdarank_hvp(s, y, sigma, v):
    w, idcg = delta_ndcg(s, y)
    if idcg == 0.0:
        return np.zeros(s.shape[0])
    return _pairwise_hvp(s, y, sigma, w, True, v)


@_jit
def listnet_hvp(s, y, v):
    q = np.exp(_log_softmax(s))
    qv = 0.0
    for i in range(s.shape[0]):
        qv += q[i] * v[i]
    return q * v - q * qv


@_jit
def dcg_at_k(labels, k):
    m = min(k, labels.shape[0])
    acc = 0.0
    for i in range(m):
        acc += (2.0 ** labels[i] - 1.0) / math.log2(i + 2.0)
    return acc
