"""Backend parity and oracle checks for the hot kernels."""
import numpy as np
import pytest

from glomkit import kernels
from conftest import flood_fill_components

BACKENDS = kernels.available_backends()


def random_box_array(rng, n, span=60):
    lo = rng.integers(0, span, (n, 2)).astype(np.float64)
    size = rng.integers(1, span // 2, (n, 2)).astype(np.float64)
    return np.concatenate([lo, lo + size], axis=1)


@pytest.mark.parametrize("backend", BACKENDS)
def test_rle_paint_and_extract_roundtrip(backend):
    impl = kernels.get_backend(backend)
    rng = np.random.default_rng(11)
    for _ in range(300):
        h = int(rng.integers(1, 48))
        w = int(rng.integers(1, 48))
        mask = (rng.random((h, w)) < rng.uniform(0.05, 0.9)).astype(np.uint8)
        starts, lengths = impl.runs_from_mask(mask)
        assert np.all(lengths >= 1)
        assert np.all(np.diff(starts) > 0)
        back = impl.paint_rle(starts, lengths, h, w)
        assert np.array_equal(back, mask)


@pytest.mark.parametrize("backend", BACKENDS)
def test_rle_column_major_convention(backend):
    impl = kernels.get_backend(backend)
    # ordinal 1 = (row 0, col 0); ordinal h+1 = (row 0, col 1)
    mask = impl.paint_rle(np.array([1, 5], dtype=np.int64),
                          np.array([2, 1], dtype=np.int64), 3, 3)
    expected = np.array([[1, 0, 0], [1, 1, 0], [0, 0, 0]], dtype=np.uint8)
    assert np.array_equal(mask, expected)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("connectivity", [4, 8])
def test_label_components_matches_flood_fill(backend, connectivity):
    impl = kernels.get_backend(backend)
    rng = np.random.default_rng(23)
    for _ in range(150):
        h = int(rng.integers(1, 36))
        w = int(rng.integers(1, 36))
        mask = (rng.random((h, w)) < 0.45).astype(np.uint8)
        labels, count = impl.label_components(mask, connectivity)
        expected = flood_fill_components(mask, connectivity)
        assert count == len(expected)
        got = {}
        for r, c in zip(*np.nonzero(labels)):
            got.setdefault(labels[r, c], set()).add((int(r), int(c)))
        assert set(map(frozenset, got.values())) == set(expected)
        # labels numbered 1..count by first row-major pixel
        firsts = [min(got[k]) for k in sorted(got)]
        assert firsts == sorted(firsts)


def test_backend_parity_exact():
    if len(BACKENDS) < 2:
        pytest.skip("compiled backend not built")
    py = kernels.get_backend("python")
    ext = kernels.get_backend("compiled")
    rng = np.random.default_rng(5)
    for _ in range(120):
        h = int(rng.integers(1, 40))
        w = int(rng.integers(1, 40))
        mask = (rng.random((h, w)) < 0.4).astype(np.uint8)
        s1, l1 = py.runs_from_mask(mask)
        s2, l2 = ext.runs_from_mask(mask)
        assert np.array_equal(s1, s2) and np.array_equal(l1, l2)
        assert np.array_equal(py.paint_rle(s1, l1, h, w), ext.paint_rle(s2, l2, h, w))
        for conn in (4, 8):
            la, na = py.label_components(mask, conn)
            lb, nb = ext.label_components(mask, conn)
            assert na == nb and np.array_equal(la, lb)
        a = random_box_array(rng, int(rng.integers(0, 9)))
        b = random_box_array(rng, int(rng.integers(0, 9)))
        assert np.array_equal(py.pairwise_iou(a, b), ext.pairwise_iou(a, b))
        assert np.array_equal(py.nms_keep(a, 0.45), ext.nms_keep(a, 0.45))
        assert py.union_area(a) == ext.union_area(a)


@pytest.mark.parametrize("backend", BACKENDS)
def test_union_area_against_rasterization(backend):
    impl = kernels.get_backend(backend)
    rng = np.random.default_rng(17)
    for _ in range(300):
        n = int(rng.integers(0, 9))
        boxes = random_box_array(rng, n)
        if n == 0:
            assert impl.union_area(boxes) == 0.0
            continue
        hi = int(boxes[:, 2:].max())
        grid = np.zeros((hi, hi), dtype=bool)
        for x0, y0, x1, y1 in boxes:
            grid[int(y0):int(y1), int(x0):int(x1)] = True
        assert impl.union_area(boxes) == float(grid.sum())


@pytest.mark.parametrize("backend", BACKENDS)
def test_pairwise_iou_values(backend):
    impl = kernels.get_backend(backend)
    a = np.array([[0.0, 0.0, 10.0, 10.0]])
    b = np.array([[0.0, 0.0, 10.0, 10.0], [5.0, 0.0, 15.0, 10.0], [20.0, 20.0, 30.0, 30.0]])
    out = impl.pairwise_iou(a, b)
    assert out[0, 0] == 1.0
    assert out[0, 1] == pytest.approx(1.0 / 3.0, abs=1e-12)
    assert out[0, 2] == 0.0


@pytest.mark.parametrize("backend", BACKENDS)
def test_nms_keep_greedy(backend):
    impl = kernels.get_backend(backend)
    boxes = np.array([
        [0.0, 0.0, 10.0, 10.0],   # kept
        [1.0, 0.0, 11.0, 10.0],   # IoU 9/11 with first -> suppressed
        [40.0, 40.0, 50.0, 50.0],  # kept
    ])
    assert impl.nms_keep(boxes, 0.45).tolist() == [1, 0, 1]
