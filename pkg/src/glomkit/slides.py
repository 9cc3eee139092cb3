"""Slide reading and tissue masking.

Supported inputs at desk scale are plain/tiled TIFF and PNG; a pyramidal
reader can be slotted in behind the same SlideHandle interface. All
coordinates are level-0 pixels, x right / y down, origin top-left.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import OutOfBounds, UnreadableFile, UnsupportedFormat

# Whole-slide rasters routinely exceed PIL's decompression-bomb limit.
Image.MAX_IMAGE_PIXELS = None

SUPPORTED_FORMATS = ("TIFF", "PNG")

DEFAULT_MASK_DOWNSAMPLE = 16
MIN_TISSUE_COMPONENT_PX = 64


@dataclass
class SlideHandle:
    """Open slide with immutable level-0 dimensions.

    The decoded raster is cached on first region read; concurrent reads are
    plain array slices and therefore thread-safe.
    """

    slide_id: str
    width_px: int
    height_px: int
    source_path: Path
    _pixels: np.ndarray | None = field(default=None, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def _raster(self) -> np.ndarray:
        with self._lock:
            if self._pixels is None:
                with Image.open(self.source_path) as img:
                    self._pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
            return self._pixels


@dataclass(frozen=True)
class Tile:
    origin_x: int
    origin_y: int
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) uint8


@dataclass(frozen=True)
class TissueMask:
    downsample: int
    width: int
    height: int
    bits: np.ndarray  # (height, width) bool
    tissue_area_px2: float  # set bits x downsample^2, in level-0 px^2

    def save_png(self, path) -> None:
        """Dump the mask as a 0/255 PNG for inspection."""
        Image.fromarray(self.bits.astype(np.uint8) * 255, mode="L").save(path)


def open_slide(path) -> SlideHandle:
    """Open a TIFF/PNG slide and report its level-0 dimensions."""
    path = Path(path)
    if not path.is_file():
        raise UnreadableFile(f"cannot read slide file: {path}")
    try:
        with Image.open(path) as img:
            fmt = img.format
            width, height = img.size
    except UnidentifiedImageError:
        raise UnsupportedFormat(
            f"{path}: not a recognized raster; supported formats: {', '.join(SUPPORTED_FORMATS)}"
        ) from None
    except OSError as exc:
        raise UnreadableFile(f"cannot read slide file: {path}: {exc}") from None
    if fmt not in SUPPORTED_FORMATS:
        raise UnsupportedFormat(
            f"{path}: format {fmt} not supported; supported formats: {', '.join(SUPPORTED_FORMATS)}"
        )
    return SlideHandle(slide_id=path.stem, width_px=width, height_px=height, source_path=path)


def read_region(slide: SlideHandle, x: int, y: int, w: int, h: int) -> Tile:
    """Read exactly the requested level-0 rectangle as an RGB tile."""
    if w < 1 or h < 1:
        raise OutOfBounds(f"region size must be positive, got {w}x{h}")
    if x < 0 or y < 0 or x + w > slide.width_px or y + h > slide.height_px:
        raise OutOfBounds(
            f"region ({x},{y},{w},{h}) outside slide {slide.width_px}x{slide.height_px}"
        )
    raster = slide._raster()
    pixels = raster[y : y + h, x : x + w].copy()
    return Tile(origin_x=x, origin_y=y, width=w, height=h, pixels=pixels)


def _saturation(rgb: np.ndarray) -> np.ndarray:
    """HSV saturation channel of an RGB uint8 array, in [0, 1]."""
    arr = rgb.astype(np.float64)
    cmax = arr.max(axis=2)
    cmin = arr.min(axis=2)
    sat = np.zeros(cmax.shape, dtype=np.float64)
    np.divide(cmax - cmin, cmax, out=sat, where=cmax > 0)
    return sat


def _otsu_threshold(values: np.ndarray) -> float:
    """Otsu threshold over 256 bins of values in [0, 1]."""
    hist, edges = np.histogram(values, bins=256, range=(0.0, 1.0))
    total = hist.sum()
    if total == 0:
        return 1.0
    p = hist / total
    centers = (edges[:-1] + edges[1:]) / 2
    w0 = np.cumsum(p)
    w1 = 1.0 - w0
    mu = np.cumsum(p * centers)
    mu_total = mu[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        between = np.where(
            (w0 > 0) & (w1 > 0), w0 * w1 * ((mu / w0) - (mu_total - mu) / w1) ** 2, 0.0
        )
    k = int(np.argmax(between))
    return float(edges[k + 1])


def _binary_close_3x3(mask: np.ndarray) -> np.ndarray:
    """3x3 closing: dilation (outside = 0) then erosion (outside = 1)."""
    return _erode_3x3(_dilate_3x3(mask))


def _shifted(mask: np.ndarray, dr: int, dc: int, fill: bool) -> np.ndarray:
    out = np.full(mask.shape, fill, dtype=bool)
    h, w = mask.shape
    rs, re = max(dr, 0), min(h + dr, h)
    cs, ce = max(dc, 0), min(w + dc, w)
    out[rs:re, cs:ce] = mask[rs - dr : re - dr, cs - dc : ce - dc]
    return out


def _dilate_3x3(mask: np.ndarray) -> np.ndarray:
    out = np.zeros(mask.shape, dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            out |= _shifted(mask, dr, dc, fill=False)
    return out


def _erode_3x3(mask: np.ndarray) -> np.ndarray:
    out = np.ones(mask.shape, dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            out &= _shifted(mask, dr, dc, fill=True)
    return out


def compute_tissue_mask(slide: SlideHandle, downsample: int = DEFAULT_MASK_DOWNSAMPLE) -> TissueMask:
    """Binary tissue foreground at the given downsample.

    Nearest-neighbour subsampling, Otsu threshold on the HSV saturation
    channel, 3x3 morphological closing, then removal of components smaller
    than MIN_TISSUE_COMPONENT_PX mask pixels. tissue_area_px2 is the set-bit
    count scaled back to level-0 pixels squared.
    """
    from . import kernels

    if downsample < 1:
        raise OutOfBounds(f"downsample must be >= 1, got {downsample}")
    full = read_region(slide, 0, 0, slide.width_px, slide.height_px).pixels
    small = full[::downsample, ::downsample]
    sat = _saturation(small)
    thr = _otsu_threshold(sat)
    mask = sat > thr
    if mask.any():
        mask = _binary_close_3x3(mask)
        labels, count = kernels.label_components(mask.astype(np.uint8), 8)
        if count:
            sizes = np.bincount(labels.ravel(), minlength=count + 1)
            keep = sizes >= MIN_TISSUE_COMPONENT_PX
            keep[0] = False
            mask = keep[labels]
    h, w = mask.shape
    assert w == math.ceil(slide.width_px / downsample)
    assert h == math.ceil(slide.height_px / downsample)
    area = float(int(mask.sum()) * downsample * downsample)
    return TissueMask(downsample=downsample, width=w, height=h, bits=mask, tissue_area_px2=area)
