"""Ground-truth annotation parsing and the canonical per-slide schema.

Three source encodings all convert into SlideAnnotation: run-length masks
(Kaggle-style CSV), polygon delineations (GeoJSON-style), and plain boxes
(the canonical JSON itself).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (
    DegenerateBox,
    DimensionMismatch,
    MalformedRle,
    SchemaViolation,
    UnknownVersion,
)
from .geometry import BBox

SCHEMA_VERSION = 1
SOURCE_KINDS = ("rle", "polygon", "bbox")
GLOMERULUS_CLASS_ID = 0
CLASS_IDS = (GLOMERULUS_CLASS_ID,)

# Components below this many level-0 pixels are treated as annotation noise.
DEFAULT_MIN_COMPONENT_AREA = 256


@dataclass(frozen=True)
class Polygon:
    vertices: tuple  # ((x, y), ...) level-0 pixels

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise SchemaViolation(f"polygon needs >= 3 vertices, got {len(self.vertices)}")
        for x, y in self.vertices:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise SchemaViolation("polygon vertex is not finite")


@dataclass(frozen=True)
class RleMask:
    width: int
    height: int
    runs: tuple  # ((start, length), ...) 1-indexed column-major, ascending

    def to_bitmap(self) -> np.ndarray:
        """Decode to a (height, width) uint8 bitmap."""
        if not self.runs:
            return np.zeros((self.height, self.width), dtype=np.uint8)
        arr = np.asarray(self.runs, dtype=np.int64)
        return kernels.paint_rle(arr[:, 0], arr[:, 1], self.height, self.width)


@dataclass(frozen=True)
class GroundTruthBox:
    bbox: BBox
    class_id: int = GLOMERULUS_CLASS_ID

    def __post_init__(self):
        if self.class_id not in CLASS_IDS:
            raise SchemaViolation(f"class_id {self.class_id} not in {CLASS_IDS}")


@dataclass(frozen=True)
class SlideAnnotation:
    slide_id: str
    slide_width: int
    slide_height: int
    boxes: tuple  # (GroundTruthBox, ...)
    source_kind: str = "bbox"

    def validate(self) -> "SlideAnnotation":
        if not self.slide_id:
            raise SchemaViolation("slide_id must be non-empty")
        if self.slide_width < 1 or self.slide_height < 1:
            raise SchemaViolation("slide dimensions must be positive")
        if self.source_kind not in SOURCE_KINDS:
            raise SchemaViolation(f"source_kind {self.source_kind!r} not one of {SOURCE_KINDS}")
        for gt in self.boxes:
            b = gt.bbox
            if b.x_max > self.slide_width or b.y_max > self.slide_height:
                raise SchemaViolation(
                    f"box {b.as_tuple()} exceeds slide bounds "
                    f"{self.slide_width}x{self.slide_height}"
                )
        return self


def decode_rle(runs_text: str, width: int, height: int) -> RleMask:
    """Parse whitespace-separated (start, length) pairs into an RleMask.

    Pixel ordinals are 1-indexed and column-major (top-to-bottom, then
    left-to-right). Starts must be strictly ascending and runs must not
    overlap or leave the width x height pixel grid.
    """
    if width < 1 or height < 1:
        raise DimensionMismatch(f"mask dims must be positive, got {width}x{height}")
    tokens = runs_text.split()
    if len(tokens) % 2 != 0:
        raise MalformedRle(f"odd token count ({len(tokens)})")
    try:
        values = [int(t) for t in tokens]
    except ValueError as exc:
        raise MalformedRle(f"non-integer token: {exc}") from None
    runs = []
    prev_end = 0
    limit = width * height
    for start, length in zip(values[::2], values[1::2]):
        if length < 1:
            raise MalformedRle(f"run length must be >= 1, got {length}")
        if start <= prev_end:
            raise MalformedRle(
                f"run starting at {start} overlaps or precedes previous run ending at {prev_end}"
            )
        end = start + length - 1
        if end > limit:
            raise MalformedRle(f"run {start}+{length} exceeds {width}x{height} grid")
        runs.append((start, length))
        prev_end = end
    return RleMask(width=width, height=height, runs=tuple(runs))


def encode_rle(bitmap: np.ndarray) -> str:
    """Encode a binary bitmap as maximal sorted (start, length) pairs."""
    bitmap = np.asarray(bitmap)
    if bitmap.ndim != 2 or bitmap.shape[0] < 1 or bitmap.shape[1] < 1:
        raise DimensionMismatch(f"bitmap must be 2-D and non-empty, got shape {bitmap.shape}")
    starts, lengths = kernels.runs_from_mask(bitmap.astype(np.uint8))
    return " ".join(f"{s} {l}" for s, l in zip(starts.tolist(), lengths.tolist()))


def mask_components(mask: RleMask, connectivity: int = 8) -> list:
    """Partition set pixels into connected components.

    Returns one (n, 2) int array of (row, col) pixels per component, in
    row-major order of each component's first pixel.
    """
    if connectivity not in (4, 8):
        raise SchemaViolation(f"connectivity must be 4 or 8, got {connectivity}")
    labels, count = kernels.label_components(mask.to_bitmap(), connectivity)
    if count == 0:
        return []
    rows, cols = np.nonzero(labels)
    lab = labels[rows, cols]
    order = np.argsort(lab, kind="stable")
    pixels = np.stack([rows[order], cols[order]], axis=1)
    bounds = np.searchsorted(lab[order], np.arange(2, count + 1))
    return np.split(pixels, bounds)


def bbox_of_points(points) -> BBox:
    """Tightest box over the points: (min x, min y, max x, max y)."""
    if len(points) == 0:
        raise DegenerateBox("no points")
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    return BBox(min(xs), min(ys), max(xs), max(ys))


def annotation_from_rle(
    mask: RleMask,
    slide_id: str,
    slide_width: int,
    slide_height: int,
    min_component_area: int = DEFAULT_MIN_COMPONENT_AREA,
    connectivity: int = 8,
) -> SlideAnnotation:
    """One ground-truth box per connected component of the mask.

    Components smaller than min_component_area level-0 pixels are dropped.
    A component's box covers its pixels: column c contributes [c, c+1).
    """
    if mask.width != slide_width or mask.height != slide_height:
        raise DimensionMismatch(
            f"mask {mask.width}x{mask.height} does not match slide "
            f"{slide_width}x{slide_height}"
        )
    boxes = []
    for pixels in mask_components(mask, connectivity):
        if pixels.shape[0] < min_component_area:
            continue
        rows = pixels[:, 0]
        cols = pixels[:, 1]
        bbox = BBox(
            float(cols.min()),
            float(rows.min()),
            float(cols.max() + 1),
            float(rows.max() + 1),
        )
        boxes.append(GroundTruthBox(bbox=bbox))
    return SlideAnnotation(
        slide_id=slide_id,
        slide_width=slide_width,
        slide_height=slide_height,
        boxes=tuple(boxes),
        source_kind="rle",
    ).validate()


def annotation_from_polygons(
    polygons, slide_id: str, slide_width: int, slide_height: int
) -> SlideAnnotation:
    """One box per polygon from its vertex extremes, clamped to the slide."""
    boxes = []
    for poly in polygons:
        raw = bbox_of_points(poly.vertices)
        clamped = BBox(  # degenerate after clamping means the polygon is off-slide
            min(max(raw.x_min, 0.0), float(slide_width)),
            min(max(raw.y_min, 0.0), float(slide_height)),
            min(max(raw.x_max, 0.0), float(slide_width)),
            min(max(raw.y_max, 0.0), float(slide_height)),
        )
        boxes.append(GroundTruthBox(bbox=clamped))
    return SlideAnnotation(
        slide_id=slide_id,
        slide_width=slide_width,
        slide_height=slide_height,
        boxes=tuple(boxes),
        source_kind="polygon",
    ).validate()


def parse_rle_csv(path) -> dict:
    """Read a `id,encoding` CSV into an id -> encoding-text mapping."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "encoding"} <= set(reader.fieldnames):
            raise SchemaViolation(f"{path}: expected header with 'id' and 'encoding' columns")
        table = {}
        for row in reader:
            key = row["id"]
            if key in table:
                raise SchemaViolation(f"{path}: duplicate id {key!r}")
            table[key] = row["encoding"] or ""
    return table


def parse_polygon_json(path) -> list:
    """Read GeoJSON-style features; only geometry.coordinates is used.

    Accepts a bare feature list or an object with a "features" list. Each
    geometry's coordinates may be a flat vertex list or nested rings (the
    first ring is taken). Unknown fields are ignored.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON: {exc}") from None
    features = doc.get("features") if isinstance(doc, dict) else doc
    if not isinstance(features, list):
        raise SchemaViolation(f"{path}: expected a feature list")
    polygons = []
    for feat in features:
        try:
            coords = feat["geometry"]["coordinates"]
        except (KeyError, TypeError):
            raise SchemaViolation(f"{path}: feature without geometry.coordinates") from None
        if coords and isinstance(coords[0], (list, tuple)) and coords[0] \
                and isinstance(coords[0][0], (list, tuple)):
            coords = coords[0]  # nested rings: exterior ring only
        try:
            vertices = tuple((float(x), float(y)) for x, y in coords)
        except (TypeError, ValueError):
            raise SchemaViolation(f"{path}: malformed coordinates") from None
        polygons.append(Polygon(vertices=vertices))
    return polygons


def save_canonical(annotation: SlideAnnotation, path) -> None:
    """Write the canonical versioned JSON document.

    Pixel coordinates are stored as integers: mins floored, maxs ceiled.
    """
    annotation.validate()
    doc = {
        "schema_version": SCHEMA_VERSION,
        "slide_id": annotation.slide_id,
        "slide_width": int(annotation.slide_width),
        "slide_height": int(annotation.slide_height),
        "source_kind": annotation.source_kind,
        "boxes": [
            {
                "x_min": math.floor(gt.bbox.x_min),
                "y_min": math.floor(gt.bbox.y_min),
                "x_max": math.ceil(gt.bbox.x_max),
                "y_max": math.ceil(gt.bbox.y_max),
                "class_id": gt.class_id,
            }
            for gt in annotation.boxes
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_canonical(path) -> SlideAnnotation:
    """Read and validate a canonical annotation document."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict) or "schema_version" not in doc:
        raise SchemaViolation(f"{path}: missing schema_version")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise UnknownVersion(f"{path}: schema_version {doc['schema_version']} not supported")
    required = ("slide_id", "slide_width", "slide_height", "source_kind", "boxes")
    for key in required:
        if key not in doc:
            raise SchemaViolation(f"{path}: missing field {key!r}")
    boxes = []
    for i, entry in enumerate(doc["boxes"]):
        try:
            bbox = BBox(
                float(entry["x_min"]),
                float(entry["y_min"]),
                float(entry["x_max"]),
                float(entry["y_max"]),
            )
            boxes.append(GroundTruthBox(bbox=bbox, class_id=int(entry.get("class_id", 0))))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaViolation(f"{path}: malformed box {i}: {exc}") from None
        except DegenerateBox as exc:
            raise SchemaViolation(f"{path}: degenerate box {i}: {exc}") from None
    try:
        annotation = SlideAnnotation(
            slide_id=doc["slide_id"],
            slide_width=int(doc["slide_width"]),
            slide_height=int(doc["slide_height"]),
            boxes=tuple(boxes),
            source_kind=doc["source_kind"],
        )
    except (TypeError, ValueError) as exc:
        raise SchemaViolation(f"{path}: {exc}") from None
    return annotation.validate()
