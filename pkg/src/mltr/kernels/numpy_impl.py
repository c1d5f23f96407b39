"""Vectorized numpy kernels.

Reference backend. Every function here has a loop-based twin in
``numba_impl`` with an identical signature; the two are cross-checked in
the test suite.

Parameter layout: for each layer ``l`` the flat vector holds ``W_l``
(``fan_in x fan_out``, row-major) followed by ``b_l`` (``fan_out``).
Pre-activations of every layer are kept in one flat buffer ``zbuf``; the
block of layer ``l`` is an ``(n, dims[l+1])`` row-major matrix.
"""

import numpy as np

LN2 = np.log(2.0)


def _layers(theta, dims):
    off = 0
    out = []
    for l in range(len(dims) - 1):
        fi, fo = dims[l], dims[l + 1]
        W = theta[off:off + fi * fo].reshape(fi, fo)
        off += fi * fo
        b = theta[off:off + fo]
        off += fo
        out.append((W, b))
    return out


def _zblocks(zbuf, dims, n):
    blocks = []
    off = 0
    for l in range(1, len(dims)):
        size = n * dims[l]
        blocks.append(zbuf[off:off + size].reshape(n, dims[l]))
        off += size
    return blocks


def mlp_forward(theta, dims, X):
    n = X.shape[0]
    zbuf = np.empty(n * int(np.sum(dims[1:])))
    blocks = _zblocks(zbuf, dims, n)
    a = X
    layers = _layers(theta, dims)
    for l, (W, b) in enumerate(layers):
        z = a @ W + b
        blocks[l][:] = z
        a = np.maximum(z, 0.0) if l < len(layers) - 1 else z
    return a[:, 0].copy(), zbuf


def mlp_backward(theta, dims, X, zbuf, g):
    n = X.shape[0]
    layers = _layers(theta, dims)
    blocks = _zblocks(zbuf, dims, n)
    grad = np.empty_like(theta)
    gl = _layers(grad, dims)
    delta = g.reshape(n, 1).astype(np.float64)
    for l in range(len(layers) - 1, -1, -1):
        a_prev = X if l == 0 else np.maximum(blocks[l - 1], 0.0)
        gl[l][0][:] = a_prev.T @ delta
        gl[l][1][:] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ layers[l][0].T) * (blocks[l - 1] > 0.0)
    return grad


def mlp_rforward(theta, dims, X, zbuf, v):
    """Directional derivative of all pre-activations along ``v``."""
    n = X.shape[0]
    layers = _layers(theta, dims)
    vl = _layers(v, dims)
    blocks = _zblocks(zbuf, dims, n)
    rzbuf = np.empty_like(zbuf)
    rblocks = _zblocks(rzbuf, dims, n)
    a = X
    ra = np.zeros_like(X)
    for l, ((W, _), (VW, Vb)) in enumerate(zip(layers, vl)):
        rz = ra @ W + a @ VW + Vb
        rblocks[l][:] = rz
        if l < len(layers) - 1:
            mask = blocks[l] > 0.0
            a = blocks[l] * mask
            ra = rz * mask
    return rblocks[-1][:, 0].copy(), rzbuf


def mlp_rbackward(theta, dims, X, zbuf, rzbuf, g, rg, v):
    """Hessian-vector product from the R-forward pass and loss curvature.

    ``g`` is dL/ds and ``rg`` the loss Hessian (w.r.t. scores) applied to
    the score directional derivative.
    """
    n = X.shape[0]
    layers = _layers(theta, dims)
    vl = _layers(v, dims)
    blocks = _zblocks(zbuf, dims, n)
    rblocks = _zblocks(rzbuf, dims, n)
    hv = np.empty_like(theta)
    hl = _layers(hv, dims)
    delta = g.reshape(n, 1).astype(np.float64)
    rdelta = rg.reshape(n, 1).astype(np.float64)
    for l in range(len(layers) - 1, -1, -1):
        if l == 0:
            a_prev, ra_prev = X, np.zeros_like(X)
        else:
            mask = blocks[l - 1] > 0.0
            a_prev = blocks[l - 1] * mask
            ra_prev = rblocks[l - 1] * mask
        hl[l][0][:] = ra_prev.T @ delta + a_prev.T @ rdelta
        hl[l][1][:] = rdelta.sum(axis=0)
        if l > 0:
            W, VW = layers[l][0], vl[l][0]
            new_rdelta = (rdelta @ W.T + delta @ VW.T) * mask
            delta = (delta @ W.T) * mask
            rdelta = new_rdelta
    return hv


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def rank_mse(s, y):
    r = s - y
    return float(np.sum(r * r)), 2.0 * r


def rank_positions(s):
    # 1-based position of every item under descending-score, index tie-break
    order = np.argsort(-s, kind="stable")
    pos = np.empty(len(s), dtype=np.int64)
    pos[order] = np.arange(1, len(s) + 1)
    return pos


def delta_ndcg(s, y):
    """Matrix of |NDCG change| when items j and s swap positions."""
    gain = np.power(2.0, y) - 1.0
    ideal = np.sort(gain)[::-1]
    idcg = float(np.sum(ideal / np.log2(np.arange(2, len(y) + 2))))
    if idcg == 0.0:
        return np.zeros((len(s), len(s))), 0.0
    inv_disc = 1.0 / np.log2(rank_positions(s) + 1.0)
    return np.abs(np.subtract.outer(gain, gain) * np.subtract.outer(inv_disc, inv_disc)) / idcg, idcg


def _pairwise(s, y, sigma, weights):
    mask = np.greater.outer(y, y)
    if weights is not None:
        w = np.where(mask, weights, 0.0)
    else:
        w = mask.astype(np.float64)
    u = np.subtract.outer(s, s)
    loss = float(np.sum(w * _softplus(-sigma * u)) / LN2)
    dl = -(sigma / LN2) * w * _sigmoid(-sigma * u)
    grad = dl.sum(axis=1) - dl.sum(axis=0)
    return loss, grad


def ranknet(s, y, sigma):
    return _pairwise(s, y, sigma, None)


def lambdarank(s, y, sigma):
    w, idcg = delta_ndcg(s, y)
    if idcg == 0.0:
        return 0.0, np.zeros_like(s)
    return _pairwise(s, y, sigma, w)


def _log_softmax(x):
    m = np.max(x)
    return x - m - np.log(np.sum(np.exp(x - m)))


def listnet(s, y):
    logp = _log_softmax(y)
    logq = _log_softmax(s)
    p = np.exp(logp)
    return float(-np.sum(p * logq)), np.exp(logq) - p


def _pairwise_hvp(s, y, sigma, weights, v):
    mask = np.greater.outer(y, y)
    w = np.where(mask, weights, 0.0) if weights is not None else mask.astype(np.float64)
    u = np.subtract.outer(s, s)
    c = (sigma * sigma / LN2) * w * _sigmoid(sigma * u) * _sigmoid(-sigma * u)
    h = c * np.subtract.outer(v, v)
    return h.sum(axis=1) - h.sum(axis=0)


def rank_mse_hvp(s, y, v):
    return 2.0 * v


def ranknet_hvp(s, y, sigma, v):
    return _pairwise_hvp(s, y, sigma, None, v)


def lambdarank_hvp(s, y, sigma, v):
    w, idcg = delta_ndcg(s, y)
    if idcg == 0.0:
        return np.zeros_like(s)
    return _pairwise_hvp(s, y, sigma, w, v)


def listnet_hvp(s, y, v):
    q = np.exp(_log_softmax(s))
    return q * v - q * np.dot(q, v)


def dcg_at_k(labels, k):
    labels = np.asarray(labels, dtype=np.float64)[:k]
    return float(np.sum((np.power(2.0, labels) - 1.0) / np.log2(np.arange(2, len(labels) + 2))))
