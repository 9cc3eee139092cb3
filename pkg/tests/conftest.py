import numpy as np
import pytest
from PIL import Image

WHITE = (255, 255, 255)
TISSUE_PINK = (244, 194, 194)
GLOM_MAGENTA = (199, 21, 133)


def paint_slide(width, height, rects, background=WHITE):
    """RGB uint8 array with (x0, y0, x1, y1, color) rectangles painted."""
    img = np.empty((height, width, 3), dtype=np.uint8)
    img[:] = background
    for x0, y0, x1, y1, color in rects:
        img[y0:y1, x0:x1] = color
    return img


def write_slide(path, pixels, fmt=None):
    Image.fromarray(pixels).save(path, format=fmt)
    return path


@pytest.fixture
def slide_factory(tmp_path):
    """Write synthetic slides to disk; returns (make, tmp_path)."""
    counter = [0]

    def make(width, height, rects=(), background=WHITE, suffix=".png", name=None):
        counter[0] += 1
        name = name or f"slide{counter[0]:02d}"
        path = tmp_path / f"{name}{suffix}"
        write_slide(path, paint_slide(width, height, rects, background))
        return path

    return make


def random_boxes(rng, count, slide_w, slide_h, min_side=16, max_side=120,
                 disjoint=False, max_tries=200):
    """Integer-coordinate boxes inside the slide; optionally pairwise disjoint."""
    from glomkit.geometry import BBox, intersection_area

    boxes = []
    tries = 0
    while len(boxes) < count and tries < max_tries * count:
        tries += 1
        w = int(rng.integers(min_side, max_side + 1))
        h = int(rng.integers(min_side, max_side + 1))
        x0 = int(rng.integers(0, slide_w - w))
        y0 = int(rng.integers(0, slide_h - h))
        box = BBox(float(x0), float(y0), float(x0 + w), float(y0 + h))
        if disjoint and any(intersection_area(box, other) > 0 for other in boxes):
            continue
        boxes.append(box)
    return boxes


# --- independent oracles -------------------------------------------------

def flood_fill_components(mask, connectivity=8):
    """BFS flood fill; returns a list of frozensets of (row, col) pixels."""
    mask = np.asarray(mask)
    h, w = mask.shape
    seen = np.zeros((h, w), dtype=bool)
    if connectivity == 8:
        offsets = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    else:
        offsets = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    components = []
    for r in range(h):
        for c in range(w):
            if not mask[r, c] or seen[r, c]:
                continue
            stack = [(r, c)]
            seen[r, c] = True
            pixels = []
            while stack:
                pr, pc = stack.pop()
                pixels.append((pr, pc))
                for dr, dc in offsets:
                    nr, nc = pr + dr, pc + dc
                    if 0 <= nr < h and 0 <= nc < w and mask[nr, nc] and not seen[nr, nc]:
                        seen[nr, nc] = True
                        stack.append((nr, nc))
            components.append(frozenset(pixels))
    return components


def rasterized_union_area(boxes):
    """Paint integer boxes on a grid and count; exact union-area oracle."""
    if not boxes:
        return 0.0
    x1 = max(int(b.x_max) for b in boxes)
    y1 = max(int(b.y_max) for b in boxes)
    grid = np.zeros((y1, x1), dtype=bool)
    for b in boxes:
        grid[int(b.y_min):int(b.y_max), int(b.x_min):int(b.x_max)] = True
    return float(grid.sum())


def naive_iou(a, b):
    """Scalar IoU written independently of the library geometry helpers."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min)
    area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min)
    return inter / (area_a + area_b - inter)


def reference_greedy_match(dets, gts, iou_threshold=0.5):
    """Naive reimplementation of the stated matching policy.

    Detections in descending confidence (ties: x_min then y_min); each
    takes the unmatched gt with the highest IoU >= threshold, lower index
    on ties. Returns (tp_pairs, fp, fn) over original indices.
    """
    order = sorted(range(len(dets)),
                   key=lambda i: (-dets[i].confidence, dets[i].bbox.x_min,
                                  dets[i].bbox.y_min))
    taken = set()
    tp_pairs = []
    fp = []
    for di in order:
        best, best_v = -1, 0.0
        for gi in range(len(gts)):
            if gi in taken:
                continue
            v = naive_iou(dets[di].bbox, gts[gi].bbox)
            if v >= iou_threshold and v > best_v:
                best, best_v = gi, v
        if best >= 0:
            taken.add(best)
            tp_pairs.append((di, best))
        else:
            fp.append(di)
    fn = [gi for gi in range(len(gts)) if gi not in taken]
    return tp_pairs, sorted(fp), fn
