"""NumPy implementations of the hot kernels.

This is the fallback backend used when the compiled extension is not
available; both backends expose the same six functions and must produce
identical results (tests/test_kernels.py checks parity).
"""
import numpy as np


def paint_rle(starts, lengths, height, width):
    """Paint validated (start, length) runs into a (height, width) uint8 mask.

    Pixel ordinals are 1-indexed and column-major: ordinal 1 is (row 0,
    col 0), ordinal 2 is (row 1, col 0), ...
    """
    flat = np.zeros(height * width, dtype=np.uint8)
    s = np.asarray(starts, dtype=np.int64) - 1
    e = s + np.asarray(lengths, dtype=np.int64)
    for lo, hi in zip(s, e):
        flat[lo:hi] = 1
    return flat.reshape((height, width), order="F")


def runs_from_mask(mask):
    """Extract maximal column-major runs from a uint8/bool mask.

    Returns (starts, lengths) as int64 arrays, 1-indexed, sorted ascending.
    """
    flat = np.asarray(mask, dtype=np.uint8).flatten(order="F")
    padded = np.concatenate([[0], flat, [0]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    starts = edges[::2] + 1
    lengths = edges[1::2] - edges[::2]
    return starts.astype(np.int64), lengths.astype(np.int64)


def label_components(mask, connectivity=8):
    """Label connected components of a binary mask.

    Returns (labels, count) with labels of dtype int32. Labels are numbered
    1..count in row-major order of each component's first pixel, so both
    backends agree exactly. Union-find over horizontal runs.
    """
    mask = np.asarray(mask, dtype=np.uint8)
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)

    parent = []

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    # one entry per run: (row, col_start, col_end_exclusive, node)
    all_runs = []
    prev_runs = []  # runs of the previous row
    reach = 1 if connectivity == 8 else 0
    for r in range(h):
        row = mask[r]
        padded = np.concatenate([[0], row, [0]])
        edges = np.flatnonzero(padded[1:] != padded[:-1])
        row_runs = []
        for c0, c1 in zip(edges[::2], edges[1::2]):
            node = len(parent)
            parent.append(node)
            for pc0, pc1, pnode in prev_runs:
                if c0 < pc1 + reach and pc0 < c1 + reach:
                    ra, rb = find(node), find(pnode)
                    if ra != rb:
                        parent[max(ra, rb)] = min(ra, rb)
            row_runs.append((c0, c1, node))
            all_runs.append((r, c0, c1, node))
        prev_runs = row_runs

    relabel = {}
    for r, c0, c1, node in all_runs:  # already in row-major first-pixel order
        root = find(node)
        lab = relabel.get(root)
        if lab is None:
            lab = len(relabel) + 1
            relabel[root] = lab
        labels[r, c0:c1] = lab
    return labels, len(relabel)


def pairwise_iou(a, b):
    """IoU matrix between (n, 4) and (m, 4) corner-format box arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    ix = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(ix, 0, None) * np.clip(iy, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=inter > 0)
    return out


def nms_keep(boxes, threshold):
    """Greedy suppression flags for boxes already sorted by priority.

    boxes: (n, 4) float64. A box is kept iff its IoU with every previously
    kept box is < threshold. Returns a uint8 flag per box.
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    n = boxes.shape[0]
    keep = np.zeros(n, dtype=np.uint8)
    if n == 0:
        return keep
    kept_rows = []
    for i in range(n):
        if kept_rows:
            ious = pairwise_iou(boxes[i : i + 1], boxes[kept_rows])[0]
            if np.any(ious >= threshold):
                continue
        keep[i] = 1
        kept_rows.append(i)
    return keep


def union_area(boxes):
    """Exact area of the union of (n, 4) corner-format boxes.

    Coordinate compression over x, interval merging over y per slab; exact
    for integer-valued float coordinates.
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    n = boxes.shape[0]
    if n == 0:
        return 0.0
    xs = np.unique(np.concatenate([boxes[:, 0], boxes[:, 2]]))
    order = np.argsort(boxes[:, 1], kind="stable")
    by = boxes[order]
    total = 0.0
    for x0, x1 in zip(xs[:-1], xs[1:]):
        covering = by[(by[:, 0] <= x0) & (by[:, 2] >= x1)]
        if covering.shape[0] == 0:
            continue
        span = 0.0
        cur_lo = covering[0, 1]
        cur_hi = covering[0, 3]
        for y0, y1 in covering[1:, [1, 3]]:
            if y0 > cur_hi:
                span += cur_hi - cur_lo
                cur_lo, cur_hi = y0, y1
            elif y1 > cur_hi:
                cur_hi = y1
        span += cur_hi - cur_lo
        total += (x1 - x0) * span
    return float(total)
