# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled neighbor-search kernels.

Every kernel mirrors a function of the same name in ``_search_py`` and must
return bit-identical results; both are checked against brute-force oracles.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

ctypedef cnp.int64_t i64


cdef inline int _sector(double x, double y) noexcept nogil:
    if x == 0.0 and y == 0.0:
        return 0
    if x > 0.0 and y >= 0.0:
        return 0 if y < x else 1
    if x <= 0.0 and y > 0.0:
        return 2 if y > -x else 3
    if x < 0.0 and y <= 0.0:
        return 4 if y > x else 5
    return 6 if x < -y else 7


cdef inline int _bin(double x, double y, double z) noexcept nogil:
    cdef int h = 0 if z >= 0.0 else 1
    return 8 * h + _sector(x, y)


def bin_of_many(const double[:, ::1] off):
    cdef Py_ssize_t n = off.shape[0], i
    out = np.empty(n, dtype=np.int64)
    cdef i64[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _bin(off[i, 0], off[i, 1], off[i, 2])
    return out


cdef inline Py_ssize_t _find_cell(const i64[::1] keys, i64 key) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = keys.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if keys[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    if lo < keys.shape[0] and keys[lo] == key:
        return lo
    return -1


cdef inline bint _lt(double da, i64 ia, double db, i64 ib) noexcept nogil:
    return da < db or (da == db and ia < ib)


cdef inline int _insert(double* bd, i64* bi, int cnt, int cap, double d, i64 j) noexcept nogil:
    """Insert (d, j) into an ascending buffer of capacity cap; returns new count."""
    cdef int p
    if cnt == cap:
        if not _lt(d, j, bd[cap - 1], bi[cap - 1]):
            return cnt
        p = cap - 1
    else:
        p = cnt
        cnt += 1
    while p > 0 and _lt(d, j, bd[p - 1], bi[p - 1]):
        bd[p] = bd[p - 1]
        bi[p] = bi[p - 1]
        p -= 1
    bd[p] = d
    bi[p] = j
    return cnt


def multi_directional(const double[:, ::1] pos, const i64[:, ::1] cell_of,
                      const i64[::1] keys, const i64[::1] starts,
                      const i64[::1] order, const i64[::1] dims,
                      const i64[::1] centers, double r2, int m):
    cdef Py_ssize_t nc = centers.shape[0]
    cdef int K = 16 * m
    out = np.empty((nc, K), dtype=np.int64)
    cdef i64[:, ::1] o = out
    bd_arr = np.empty(K, dtype=np.float64)
    bi_arr = np.empty(K, dtype=np.int64)
    cnt_arr = np.empty(16, dtype=np.intc)
    cdef double[::1] bd = bd_arr
    cdef i64[::1] bi = bi_arr
    cdef int[::1] cnt = cnt_arr
    cdef Py_ssize_t c, s, t
    cdef i64 ci, j, cx, cy, cz, gx, gy, gz, key
    cdef int dx, dy, dz, b, q
    cdef Py_ssize_t cell
    cdef double px, py, pz, ox, oy, oz, d
    with nogil:
        for c in range(nc):
            ci = centers[c]
            px = pos[ci, 0]; py = pos[ci, 1]; pz = pos[ci, 2]
            cx = cell_of[ci, 0]; cy = cell_of[ci, 1]; cz = cell_of[ci, 2]
            for b in range(16):
                cnt[b] = 0
            for dx in range(-1, 2):
                gx = cx + dx
                if gx < 0 or gx >= dims[0]:
                    continue
                for dy in range(-1, 2):
                    gy = cy + dy
                    if gy < 0 or gy >= dims[1]:
                        continue
                    for dz in range(-1, 2):
                        gz = cz + dz
                        if gz < 0 or gz >= dims[2]:
                            continue
                        key = (gx * dims[1] + gy) * dims[2] + gz
                        cell = _find_cell(keys, key)
                        if cell < 0:
                            continue
                        for s in range(starts[cell], starts[cell + 1]):
                            j = order[s]
                            if j == ci:
                                continue
                            ox = pos[j, 0] - px
                            oy = pos[j, 1] - py
                            oz = pos[j, 2] - pz
                            d = ox * ox + oy * oy + oz * oz
                            if d > r2:
                                continue
                            b = _bin(ox, oy, oz)
                            cnt[b] = _insert(&bd[b * m], &bi[b * m], cnt[b], m, d, j)
            for b in range(16):
                for q in range(m):
                    o[c, b * m + q] = bi[b * m + q] if q < cnt[b] else ci
    return out


def ball(const double[:, ::1] pos, const i64[:, ::1] cell_of,
         const i64[::1] keys, const i64[::1] starts,
         const i64[::1] order, const i64[::1] dims,
         const i64[::1] centers, double r2, int k):
    cdef Py_ssize_t nc = centers.shape[0]
    out = np.empty((nc, k), dtype=np.int64)
    cdef i64[:, ::1] o = out
    bi_arr = np.empty(k, dtype=np.int64)
    bd_arr = np.zeros(k, dtype=np.float64)
    cdef i64[::1] bi = bi_arr
    cdef double[::1] bd = bd_arr
    cdef Py_ssize_t c, s
    cdef i64 ci, j, cx, cy, cz, gx, gy, gz, key, pad
    cdef int dx, dy, dz, cnt, q
    cdef Py_ssize_t cell
    cdef double px, py, pz, ox, oy, oz, d
    with nogil:
        for c in range(nc):
            ci = centers[c]
            px = pos[ci, 0]; py = pos[ci, 1]; pz = pos[ci, 2]
            cx = cell_of[ci, 0]; cy = cell_of[ci, 1]; cz = cell_of[ci, 2]
            cnt = 0
            for dx in range(-1, 2):
                gx = cx + dx
                if gx < 0 or gx >= dims[0]:
                    continue
                for dy in range(-1, 2):
                    gy = cy + dy
                    if gy < 0 or gy >= dims[1]:
                        continue
                    for dz in range(-1, 2):
                        gz = cz + dz
                        if gz < 0 or gz >= dims[2]:
                            continue
                        key = (gx * dims[1] + gy) * dims[2] + gz
                        cell = _find_cell(keys, key)
                        if cell < 0:
                            continue
                        for s in range(starts[cell], starts[cell + 1]):
                            j = order[s]
                            if j == ci:
                                continue
                            ox = pos[j, 0] - px
                            oy = pos[j, 1] - py
                            oz = pos[j, 2] - pz
                            d = ox * ox + oy * oy + oz * oz
                            if d > r2:
                                continue
                            # keep the k lowest indices; distance plays no part
                            cnt = _insert(&bd[0], &bi[0], cnt, k, 0.0, j)
            pad = bi[0] if cnt > 0 else ci
            for q in range(k):
                o[c, q] = bi[q] if q < cnt else pad
    return out


def knn(const double[:, ::1] pos, const i64[:, ::1] cell_of,
        const i64[::1] keys, const i64[::1] starts,
        const i64[::1] order, const i64[::1] dims,
        const i64[::1] centers, double cell_size, int k):
    cdef Py_ssize_t nc = centers.shape[0]
    cdef Py_ssize_t n = pos.shape[0]
    cdef int kk = k if k < n else <int>n
    out = np.empty((nc, kk), dtype=np.int64)
    cdef i64[:, ::1] o = out
    bd_arr = np.empty(kk, dtype=np.float64)
    bi_arr = np.empty(kk, dtype=np.int64)
    cdef double[::1] bd = bd_arr
    cdef i64[::1] bi = bi_arr
    cdef i64 maxr = dims[0]
    if dims[1] > maxr:
        maxr = dims[1]
    if dims[2] > maxr:
        maxr = dims[2]
    cdef Py_ssize_t c, s
    cdef i64 ci, j, cx, cy, cz, gx, gy, gz, key, R, dx, dy, dz, adx, ady, adz
    cdef int cnt, q
    cdef Py_ssize_t cell
    cdef double px, py, pz, ox, oy, oz, d, bound
    with nogil:
        for c in range(nc):
            ci = centers[c]
            px = pos[ci, 0]; py = pos[ci, 1]; pz = pos[ci, 2]
            cx = cell_of[ci, 0]; cy = cell_of[ci, 1]; cz = cell_of[ci, 2]
            cnt = 0
            R = 0
            while R <= maxr:
                for dx in range(-R, R + 1):
                    gx = cx + dx
                    if gx < 0 or gx >= dims[0]:
                        continue
                    adx = dx if dx >= 0 else -dx
                    for dy in range(-R, R + 1):
                        gy = cy + dy
                        if gy < 0 or gy >= dims[1]:
                            continue
                        ady = dy if dy >= 0 else -dy
                        for dz in range(-R, R + 1):
                            adz = dz if dz >= 0 else -dz
                            if adx != R and ady != R and adz != R:
                                continue
                            gz = cz + dz
                            if gz < 0 or gz >= dims[2]:
                                continue
                            key = (gx * dims[1] + gy) * dims[2] + gz
                            cell = _find_cell(keys, key)
                            if cell < 0:
                                continue
                            for s in range(starts[cell], starts[cell + 1]):
                                j = order[s]
                                ox = pos[j, 0] - px
                                oy = pos[j, 1] - py
                                oz = pos[j, 2] - pz
                                d = ox * ox + oy * oy + oz * oz
                                cnt = _insert(&bd[0], &bi[0], cnt, kk, d, j)
                if cnt == kk:
                    bound = R * cell_size
                    if bd[kk - 1] < bound * bound * (1.0 - 1e-9):
                        break
                R += 1
            for q in range(kk):
                o[c, q] = bi[q]
    return out


def fps(const double[:, ::1] pos, Py_ssize_t n_out, Py_ssize_t seed):
    cdef Py_ssize_t n = pos.shape[0], i, t, best
    out = np.empty(n_out, dtype=np.int64)
    cdef i64[::1] o = out
    mind_arr = np.full(n, INFINITY, dtype=np.float64)
    cdef double[::1] mind = mind_arr
    cdef double lx, ly, lz, ox, oy, oz, d, bestd
    cdef Py_ssize_t last = seed
    with nogil:
        o[0] = seed
        mind[seed] = -1.0
        for t in range(1, n_out):
            lx = pos[last, 0]; ly = pos[last, 1]; lz = pos[last, 2]
            best = -1
            bestd = -INFINITY
            for i in range(n):
                if mind[i] < 0.0:
                    continue
                ox = pos[i, 0] - lx
                oy = pos[i, 1] - ly
                oz = pos[i, 2] - lz
                d = ox * ox + oy * oy + oz * oz
                if d < mind[i]:
                    mind[i] = d
                if mind[i] > bestd:
                    bestd = mind[i]
                    best = i
            o[t] = best
            mind[best] = -1.0
            last = best
    return out


def scatter_rows(const double[:, ::1] src, const i64[::1] idx, Py_ssize_t n_rows):
    """out[idx[r]] += src[r] for every row r (gather backward)."""
    cdef Py_ssize_t r, c, ncol = src.shape[1]
    out = np.zeros((n_rows, ncol), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef i64 t
    with nogil:
        for r in range(src.shape[0]):
            t = idx[r]
            for c in range(ncol):
                o[t, c] += src[r, c]
    return out
