"""Pure numpy versions of the compiled search kernels.

Used when the extension is not built, or when ``POINTATTN_PURE=1``. Results
are bit-identical to the compiled kernels.
"""

import numpy as np


def _sector(x, y):
    s = np.full(x.shape, 7, dtype=np.int64)
    q0 = (x > 0) & (y >= 0)
    q1 = (x <= 0) & (y > 0)
    q2 = (x < 0) & (y <= 0)
    q3 = ~(q0 | q1 | q2)
    s[q0] = np.where(y[q0] < x[q0], 0, 1)
    s[q1] = np.where(y[q1] > -x[q1], 2, 3)
    s[q2] = np.where(y[q2] > x[q2], 4, 5)
    s[q3] = np.where(x[q3] < -y[q3], 6, 7)
    s[(x == 0) & (y == 0)] = 0
    return s


def bin_of_many(off):
    off = np.asarray(off, dtype=np.float64)
    hemi = np.where(off[:, 2] >= 0, 0, 1)
    return 8 * hemi + _sector(off[:, 0], off[:, 1])


def _sqdist(pos, p):
    o = pos - p
    return o, o[:, 0] * o[:, 0] + o[:, 1] * o[:, 1] + o[:, 2] * o[:, 2]


def _neighborhood(cell_of, keys, starts, order, dims, ci):
    c = cell_of[ci]
    lo = np.maximum(c - 1, 0)
    hi = np.minimum(c + 1, dims - 1)
    gx, gy, gz = np.meshgrid(
        np.arange(lo[0], hi[0] + 1),
        np.arange(lo[1], hi[1] + 1),
        np.arange(lo[2], hi[2] + 1),
        indexing="ij",
    )
    k = ((gx * dims[1] + gy) * dims[2] + gz).ravel()
    loc = np.searchsorted(keys, k)
    ok = loc < len(keys)
    loc, k = loc[ok], k[ok]
    loc = loc[keys[loc] == k]
    if not len(loc):
        return np.empty(0, dtype=np.int64)
    return np.concatenate([order[starts[i]:starts[i + 1]] for i in loc])


def multi_directional(pos, cell_of, keys, starts, order, dims, centers, r2, m):
    out = np.empty((len(centers), 16 * m), dtype=np.int64)
    for c, ci in enumerate(centers):
        cand = _neighborhood(cell_of, keys, starts, order, dims, ci)
        cand = cand[cand != ci]
        off, d = _sqdist(pos[cand], pos[ci])
        keep = d <= r2
        cand, off, d = cand[keep], off[keep], d[keep]
        b = bin_of_many(off)
        srt = np.lexsort((cand, d, b))
        cand, b = cand[srt], b[srt]
        # rank within bin after the (bin, dist, idx) sort
        first = np.searchsorted(b, b, side="left")
        rank = np.arange(len(b)) - first
        row = np.full(16 * m, ci, dtype=np.int64)
        sel = rank < m
        row[b[sel] * m + rank[sel]] = cand[sel]
        out[c] = row
    return out


def ball(pos, cell_of, keys, starts, order, dims, centers, r2, k):
    out = np.empty((len(centers), k), dtype=np.int64)
    for c, ci in enumerate(centers):
        cand = _neighborhood(cell_of, keys, starts, order, dims, ci)
        cand = cand[cand != ci]
        _, d = _sqdist(pos[cand], pos[ci])
        found = np.sort(cand[d <= r2])[:k]
        pad = found[0] if len(found) else ci
        row = np.full(k, pad, dtype=np.int64)
        row[: len(found)] = found
        out[c] = row
    return out


def knn(pos, cell_of, keys, starts, order, dims, centers, cell_size, k):
    # Full scan per center; exact but O(N) per query.
    idx = np.arange(pos.shape[0])
    out = np.empty((len(centers), k), dtype=np.int64)
    for c, ci in enumerate(centers):
        _, d = _sqdist(pos, pos[ci])
        out[c] = np.lexsort((idx, d))[:k]
    return out


def fps(pos, n_out, seed):
    n = pos.shape[0]
    out = np.empty(n_out, dtype=np.int64)
    mind = np.full(n, np.inf)
    out[0] = seed
    mind[seed] = -1.0
    last = seed
    for t in range(1, n_out):
        _, d = _sqdist(pos, pos[last])
        live = mind >= 0
        mind[live] = np.minimum(mind[live], d[live])
        best = int(np.argmax(mind))
        out[t] = best
        mind[best] = -1.0
        last = best
    return out


def scatter_rows(src, idx, n_rows):
    out = np.zeros((n_rows, src.shape[1]))
    np.add.at(out, idx, src)
    return out
