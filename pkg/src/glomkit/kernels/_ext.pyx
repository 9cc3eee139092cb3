# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels.

Mirrors glomkit.kernels._py function-for-function; loop and accumulation
order are kept identical so results match the fallback bit-for-bit.
"""
import numpy as np


def paint_rle(starts, lengths, int height, int width):
    """Paint validated (start, length) runs into a (height, width) uint8 mask."""
    s = np.ascontiguousarray(starts, dtype=np.int64)
    l = np.ascontiguousarray(lengths, dtype=np.int64)
    out = np.zeros((height, width), dtype=np.uint8)
    cdef long long[::1] sv = s
    cdef long long[::1] lv = l
    cdef unsigned char[:, ::1] mv = out
    cdef Py_ssize_t i, k
    cdef long long o, row, col
    for i in range(sv.shape[0]):
        o = sv[i] - 1
        row = o % height
        col = o // height
        for k in range(lv[i]):
            mv[row, col] = 1
            row += 1
            if row == height:
                row = 0
                col += 1
    return out


def runs_from_mask(mask):
    """Extract maximal column-major 1-indexed runs from a binary mask."""
    m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef unsigned char[:, ::1] mv = m
    cdef Py_ssize_t h = mv.shape[0]
    cdef Py_ssize_t w = mv.shape[1]
    cdef Py_ssize_t r, c
    cdef long long n_runs = 0
    cdef int prev = 0, cur
    for c in range(w):
        for r in range(h):
            cur = mv[r, c]
            if cur and not prev:
                n_runs += 1
            prev = cur
    starts = np.empty(n_runs, dtype=np.int64)
    lengths = np.empty(n_runs, dtype=np.int64)
    cdef long long[::1] sv = starts
    cdef long long[::1] lv = lengths
    cdef long long idx = -1, ordinal = 0
    prev = 0
    for c in range(w):
        for r in range(h):
            ordinal += 1
            cur = mv[r, c]
            if cur:
                if not prev:
                    idx += 1
                    sv[idx] = ordinal
                    lv[idx] = 1
                else:
                    lv[idx] += 1
            prev = cur
    return starts, lengths


cdef long long _find(long long[::1] parent, long long i) nogil:
    cdef long long root = i, tmp
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        tmp = parent[i]
        parent[i] = root
        i = tmp
    return root


def label_components(mask, int connectivity=8):
    """Two-pass union-find labeling; labels 1..count in row-major first-pixel order."""
    m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef unsigned char[:, ::1] mv = m
    cdef Py_ssize_t h = mv.shape[0]
    cdef Py_ssize_t w = mv.shape[1]
    labels = np.zeros((h, w), dtype=np.int32)
    cdef int[:, ::1] lb = labels
    if h == 0 or w == 0:
        return labels, 0
    parent_arr = np.arange(h * w // 2 + 2, dtype=np.int64)
    cdef long long[::1] parent = parent_arr
    cdef long long next_label = 1, best, cand, ra, rb
    cdef Py_ssize_t r, c
    cdef bint diag = connectivity == 8

    for r in range(h):
        for c in range(w):
            if not mv[r, c]:
                continue
            best = 0
            # scanned neighbors: W, and for 8-connectivity NW, N, NE (N only for 4)
            if c > 0 and lb[r, c - 1]:
                best = lb[r, c - 1]
            if r > 0:
                if lb[r - 1, c] and (best == 0 or lb[r - 1, c] < best):
                    best = lb[r - 1, c]
                if diag:
                    if c > 0 and lb[r - 1, c - 1] and (best == 0 or lb[r - 1, c - 1] < best):
                        best = lb[r - 1, c - 1]
                    if c + 1 < w and lb[r - 1, c + 1] and (best == 0 or lb[r - 1, c + 1] < best):
                        best = lb[r - 1, c + 1]
            if best == 0:
                lb[r, c] = next_label
                next_label += 1
                continue
            lb[r, c] = best
            ra = _find(parent, best)
            if c > 0 and lb[r, c - 1]:
                rb = _find(parent, lb[r, c - 1])
                if rb != ra:
                    if rb < ra:
                        parent[ra] = rb
                        ra = rb
                    else:
                        parent[rb] = ra
            if r > 0:
                if lb[r - 1, c]:
                    rb = _find(parent, lb[r - 1, c])
                    if rb != ra:
                        if rb < ra:
                            parent[ra] = rb
                            ra = rb
                        else:
                            parent[rb] = ra
                if diag:
                    if c > 0 and lb[r - 1, c - 1]:
                        rb = _find(parent, lb[r - 1, c - 1])
                        if rb != ra:
                            if rb < ra:
                                parent[ra] = rb
                                ra = rb
                            else:
                                parent[rb] = ra
                    if c + 1 < w and lb[r - 1, c + 1]:
                        rb = _find(parent, lb[r - 1, c + 1])
                        if rb != ra:
                            if rb < ra:
                                parent[ra] = rb
                                ra = rb
                            else:
                                parent[rb] = ra

    # second pass: renumber roots by first row-major occurrence
    remap_arr = np.zeros(next_label, dtype=np.int64)
    cdef long long[::1] remap = remap_arr
    cdef long long count = 0, root
    for r in range(h):
        for c in range(w):
            if lb[r, c]:
                root = _find(parent, lb[r, c])
                if remap[root] == 0:
                    count += 1
                    remap[root] = count
                lb[r, c] = <int> remap[root]
    return labels, int(count)


def pairwise_iou(a, b):
    """IoU matrix between (n, 4) and (m, 4) corner-format box arrays."""
    aa = np.ascontiguousarray(a, dtype=np.float64)
    bb = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = aa.shape[0]
    cdef Py_ssize_t m = bb.shape[0]
    out = np.zeros((n, m), dtype=np.float64)
    if n == 0 or m == 0:
        return out
    cdef double[:, ::1] av = aa
    cdef double[:, ::1] bv = bb
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    cdef double ix, iy, inter, area_a, area_b, union
    for i in range(n):
        area_a = (av[i, 2] - av[i, 0]) * (av[i, 3] - av[i, 1])
        for j in range(m):
            ix = min(av[i, 2], bv[j, 2]) - max(av[i, 0], bv[j, 0])
            if ix < 0:
                ix = 0
            iy = min(av[i, 3], bv[j, 3]) - max(av[i, 1], bv[j, 1])
            if iy < 0:
                iy = 0
            inter = ix * iy
            if inter > 0:
                area_b = (bv[j, 2] - bv[j, 0]) * (bv[j, 3] - bv[j, 1])
                union = area_a + area_b - inter
                ov[i, j] = inter / union
    return out


def nms_keep(boxes, double threshold):
    """Greedy suppression flags for boxes already sorted by priority."""
    bb = np.ascontiguousarray(boxes, dtype=np.float64)
    cdef Py_ssize_t n = bb.shape[0]
    keep = np.zeros(n, dtype=np.uint8)
    if n == 0:
        return keep
    cdef double[:, ::1] bv = bb
    cdef unsigned char[::1] kv = keep
    cdef Py_ssize_t i, j
    cdef double ix, iy, inter, union
    cdef bint suppressed
    for i in range(n):
        suppressed = False
        for j in range(i):
            if not kv[j]:
                continue
            ix = min(bv[i, 2], bv[j, 2]) - max(bv[i, 0], bv[j, 0])
            if ix < 0:
                ix = 0
            iy = min(bv[i, 3], bv[j, 3]) - max(bv[i, 1], bv[j, 1])
            if iy < 0:
                iy = 0
            inter = ix * iy
            if inter > 0:
                union = (bv[i, 2] - bv[i, 0]) * (bv[i, 3] - bv[i, 1]) \
                    + (bv[j, 2] - bv[j, 0]) * (bv[j, 3] - bv[j, 1]) - inter
                if inter / union >= threshold:
                    suppressed = True
                    break
        if not suppressed:
            kv[i] = 1
    return keep


def union_area(boxes):
    """Exact union area via x coordinate compression and y interval merging."""
    bb = np.ascontiguousarray(boxes, dtype=np.float64)
    cdef Py_ssize_t n = bb.shape[0]
    if n == 0:
        return 0.0
    xs = np.unique(np.concatenate([bb[:, 0], bb[:, 2]]))
    order = np.argsort(bb[:, 1], kind="stable")
    by = np.ascontiguousarray(bb[order])
    cdef double[::1] xv = xs
    cdef double[:, ::1] yv = by
    cdef Py_ssize_t s, i
    cdef double x0, x1, span, cur_lo, cur_hi, total = 0.0
    cdef bint open_run
    for s in range(xv.shape[0] - 1):
        x0 = xv[s]
        x1 = xv[s + 1]
        span = 0.0
        cur_lo = 0.0
        cur_hi = 0.0
        open_run = False
        for i in range(n):
            if yv[i, 0] <= x0 and yv[i, 2] >= x1:
                if not open_run:
                    cur_lo = yv[i, 1]
                    cur_hi = yv[i, 3]
                    open_run = True
                elif yv[i, 1] > cur_hi:
                    span += cur_hi - cur_lo
                    cur_lo = yv[i, 1]
                    cur_hi = yv[i, 3]
                elif yv[i, 3] > cur_hi:
                    cur_hi = yv[i, 3]
        if open_run:
            span += cur_hi - cur_lo
            total += (x1 - x0) * span
    return total
