"""Slow, obviously-correct reference implementations.

These share no code with the fast paths and are used by the test suite and
by ``pointattn selfcheck``. All loops are scalar Python on purpose.
"""

import math

import numpy as np


def _d2(p, q):
    dx = q[0] - p[0]
    dy = q[1] - p[1]
    dz = q[2] - p[2]
    return dx * dx + dy * dy + dz * dz


def bin_from_angles(offset):
    """Direction bin re-derived from spherical coordinates (degrees)."""
    x, y, z = (float(v) for v in offset)
    if x == 0.0 and y == 0.0:
        az = 0.0
    else:
        az = math.degrees(math.atan2(y, x)) % 360.0
    elevation = math.degrees(math.atan2(z, math.hypot(x, y)))
    hemi = 0 if elevation >= 0 else 1
    return 8 * hemi + min(int(az // 45.0), 7)


def range_scan(pos, center, radius):
    r2 = radius * radius
    return [j for j in range(len(pos)) if _d2(center, pos[j]) <= r2]


def multi_directional(pos, centers, radius, m, bin_fn=bin_from_angles):
    pos = [tuple(map(float, p)) for p in pos]
    r2 = radius * radius
    rows = []
    for i in centers:
        i = int(i)
        bins = [[] for _ in range(16)]
        for j in range(len(pos)):
            if j == i:
                continue
            d = _d2(pos[i], pos[j])
            if d <= r2:
                off = (pos[j][0] - pos[i][0], pos[j][1] - pos[i][1], pos[j][2] - pos[i][2])
                bins[bin_fn(off)].append((d, j))
        row = []
        for b in bins:
            b.sort()
            picked = [j for _, j in b[:m]]
            row.extend(picked + [i] * (m - len(picked)))
        rows.append(row)
    return np.array(rows, dtype=np.int64)


def knn(pos, centers, k):
    pos = [tuple(map(float, p)) for p in pos]
    rows = []
    for i in centers:
        ds = sorted((_d2(pos[int(i)], pos[j]), j) for j in range(len(pos)))
        rows.append([j for _, j in ds[:k]])
    return np.array(rows, dtype=np.int64)


def ball(pos, centers, radius, k):
    pos = [tuple(map(float, p)) for p in pos]
    r2 = radius * radius
    rows = []
    for i in centers:
        i = int(i)
        found = [j for j in range(len(pos)) if j != i and _d2(pos[i], pos[j]) <= r2][:k]
        pad = found[0] if found else i
        rows.append(found + [pad] * (k - len(found)))
    return np.array(rows, dtype=np.int64)


def fps(pos, n_out, seed):
    pos = [tuple(map(float, p)) for p in pos]
    chosen = [seed]
    while len(chosen) < n_out:
        best, bestd = None, -1.0
        for j in range(len(pos)):
            if j in chosen:
                continue
            d = min(_d2(pos[c], pos[j]) for c in chosen)
            if d > bestd:
                best, bestd = j, d
        chosen.append(best)
    return np.array(chosen, dtype=np.int64)


def finite_difference_grad(f, x, h=1e-6):
    """Central differences of scalar ``f`` w.r.t. every entry of array ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        ix = it.multi_index
        old = x[ix]
        x[ix] = old + h
        fp = f()
        x[ix] = old - h
        fm = f()
        x[ix] = old
        g[ix] = (fp - fm) / (2 * h)
    return g


def edge_coefficients(h_src, h_ctr, nbr, W, a, slope=0.2):
    n, k = nbr.shape
    cin, cl = W.shape
    e = np.zeros((n, k))
    for i in range(n):
        for s in range(k):
            j = nbr[i, s]
            tot = 0.0
            for l in range(cl):
                z = 0.0
                for c in range(cin):
                    z += W[c, l] * (h_src[j, c] - h_ctr[i, c])
                if z < 0:
                    z *= slope
                tot += a[l] * z
            e[i, s] = tot
    return e


def softmax_rows(x):
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        mx = max(x[i])
        ex = [math.exp(v - mx) for v in x[i]]
        s = sum(ex)
        out[i] = [v / s for v in ex]
    return out


def aggregate(alpha, h_src, nbr, W):
    n, k = nbr.shape
    cin, cl = W.shape
    out = np.zeros((n, cl))
    for i in range(n):
        for s in range(k):
            j = nbr[i, s]
            for l in range(cl):
                z = 0.0
                for c in range(cin):
                    z += W[c, l] * h_src[j, c]
                out[i, l] += alpha[i, s] * z
    return out


def idw_weights(fine, coarse, eps=1e-8, k=3):
    fine = [tuple(map(float, p)) for p in fine]
    coarse = [tuple(map(float, p)) for p in coarse]
    kk = min(k, len(coarse))
    idx = np.zeros((len(fine), kk), dtype=np.int64)
    w = np.zeros((len(fine), kk))
    for i, p in enumerate(fine):
        ds = sorted((_d2(p, q), j) for j, q in enumerate(coarse))[:kk]
        recip = [1.0 / (d + eps) for d, _ in ds]
        s = sum(recip)
        idx[i] = [j for _, j in ds]
        w[i] = [r / s for r in recip]
    return idx, w


def confusion(pred, true, num_classes):
    cm = [[0] * num_classes for _ in range(num_classes)]
    for p, t in zip(pred, true):
        cm[int(t)][int(p)] += 1
    return np.array(cm, dtype=np.int64)


def metrics(pred, true, num_classes):
    cm = confusion(pred, true, num_classes)
    total = sum(sum(r) for r in cm)
    oa = 100.0 * sum(cm[c][c] for c in range(num_classes)) / total
    ious = []
    for c in range(num_classes):
        tp = cm[c][c]
        fp = sum(cm[t][c] for t in range(num_classes)) - tp
        fn = sum(cm[c]) - tp
        ious.append(None if tp + fp + fn == 0 else tp / (tp + fp + fn))
    present = [v for v in ious if v is not None]
    return oa, 100.0 * sum(present) / len(present), ious


def resolve_overlaps(n_points, block_members, block_logits):
    """Highest-confidence label per point over blocks; earlier block wins ties."""
    best_conf = [-1.0] * n_points
    best_label = [-1] * n_points
    for members, logits in zip(block_members, block_logits):
        for row, p in enumerate(members):
            z = [float(v) for v in logits[row]]
            mx = max(z)
            ex = [math.exp(v - mx) for v in z]
            s = sum(ex)
            conf = max(ex) / s
            label = z.index(mx)
            if conf > best_conf[p]:
                best_conf[p] = conf
                best_label[p] = label
    return best_label, best_conf
