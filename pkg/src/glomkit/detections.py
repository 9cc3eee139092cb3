"""External-detector output handling: parsing, mapping, dedup, simulation.

The detector itself is an external process; this module consumes its JSON
output per tile, combines raw confidences, maps boxes into level-0 slide
coordinates and merges duplicates that arise from tile overlap.
"""
from __future__ import annotations

import json
import math
import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DetectorFailed, DomainError, MalformedDetectionFile
from .geometry import BBox, boxes_to_array
from .tiles import parse_tile_name

DEFAULT_NMS_THRESHOLD = 0.45


@dataclass(frozen=True)
class TileRef:
    x: int
    y: int
    width: int
    height: int


@dataclass(frozen=True)
class DetectorRawOutput:
    tile: TileRef
    center_x: float  # tile-relative, in [0, 1]
    center_y: float
    width: float
    height: float
    objectness: float  # detector-reported object confidence
    class_probs: tuple = (1.0,)

    def __post_init__(self):
        for name in ("center_x", "center_y", "width", "height", "objectness"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise MalformedDetectionFile(f"{name}={v} outside [0, 1]")
        for p in self.class_probs:
            if not 0.0 <= p <= 1.0:
                raise MalformedDetectionFile(f"class probability {p} outside [0, 1]")


@dataclass(frozen=True)
class Detection:
    bbox: BBox  # level-0 slide pixels
    confidence: float
    class_id: int = 0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise DomainError(f"confidence {self.confidence} outside [0, 1]")


def combine_confidence(objectness: float, class_prob: float) -> float:
    """Class-specific confidence: the product of the two probabilities.

    The localization-quality factor is already folded into the detector's
    reported objectness, so no further term appears at inference time.
    """
    for name, v in (("objectness", objectness), ("class_prob", class_prob)):
        if not (math.isfinite(v) and 0.0 <= v <= 1.0):
            raise DomainError(f"{name}={v} outside [0, 1]")
    return objectness * class_prob


def parse_detector_json(path, tile_lookup=None) -> list:
    """Parse darknet-style detection JSON into raw records.

    The file is a list of frames: {"filename": ..., "objects": [...]} with
    each object holding relative_coordinates {center_x, center_y, width,
    height} and confidence. Tile geometry comes from an explicit "tile"
    object {x, y, width, height} on the frame, from tile_lookup (filename
    stem -> (x, y, w, h)), or from the canonical patch naming convention.
    Unknown fields are ignored.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise MalformedDetectionFile(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise MalformedDetectionFile(f"{path}: invalid JSON: {exc}") from None
    if isinstance(doc, dict):
        doc = [doc]
    if not isinstance(doc, list):
        raise MalformedDetectionFile(f"{path}: expected a list of frames")
    records = []
    for frame in doc:
        if not isinstance(frame, dict) or "objects" not in frame:
            raise MalformedDetectionFile(f"{path}: frame without objects array")
        tile = _resolve_tile(frame, tile_lookup, path)
        for obj in frame["objects"]:
            try:
                rel = obj["relative_coordinates"]
                record = DetectorRawOutput(
                    tile=tile,
                    center_x=float(rel["center_x"]),
                    center_y=float(rel["center_y"]),
                    width=float(rel["width"]),
                    height=float(rel["height"]),
                    objectness=float(obj["confidence"]),
                    class_probs=tuple(
                        float(p) for p in obj.get("class_probs", (1.0,))
                    ),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedDetectionFile(f"{path}: malformed object: {exc}") from None
            records.append(record)
    return records


def _resolve_tile(frame, tile_lookup, path) -> TileRef:
    if "tile" in frame:
        t = frame["tile"]
        try:
            return TileRef(int(t["x"]), int(t["y"]), int(t["width"]), int(t["height"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDetectionFile(f"{path}: malformed tile object: {exc}") from None
    name = frame.get("filename")
    if name is None:
        raise MalformedDetectionFile(f"{path}: frame has neither tile nor filename")
    stem = Path(name).stem
    if tile_lookup is not None and stem in tile_lookup:
        return TileRef(*tile_lookup[stem])
    parsed = parse_tile_name(stem)
    if parsed is None:
        raise MalformedDetectionFile(
            f"{path}: cannot resolve tile geometry for frame {name!r}"
        )
    return TileRef(*parsed)


def to_slide_coords(raw: DetectorRawOutput, slide_w=None, slide_h=None) -> Detection:
    """Map a tile-relative center-format box to a level-0 slide Detection.

    Confidence is objectness x max class probability; class_id is the
    argmax. The box is clamped to the slide bounds when they are given.
    """
    tile = raw.tile
    x_min = tile.x + (raw.center_x - raw.width / 2) * tile.width
    x_max = tile.x + (raw.center_x + raw.width / 2) * tile.width
    y_min = tile.y + (raw.center_y - raw.height / 2) * tile.height
    y_max = tile.y + (raw.center_y + raw.height / 2) * tile.height
    if slide_w is not None:
        x_min = min(max(x_min, 0.0), float(slide_w))
        x_max = min(max(x_max, 0.0), float(slide_w))
    if slide_h is not None:
        y_min = min(max(y_min, 0.0), float(slide_h))
        y_max = min(max(y_max, 0.0), float(slide_h))
    class_id = max(range(len(raw.class_probs)), key=raw.class_probs.__getitem__)
    confidence = combine_confidence(raw.objectness, raw.class_probs[class_id])
    return Detection(bbox=BBox(x_min, y_min, x_max, y_max),
                     confidence=confidence, class_id=class_id)


def _canonical_order(dets) -> list:
    """Descending confidence; ties by smaller x_min, then y_min."""
    return sorted(dets, key=lambda d: (-d.confidence, d.bbox.x_min, d.bbox.y_min))


def nms(dets, iou_threshold: float = DEFAULT_NMS_THRESHOLD) -> list:
    """Greedy class-agnostic non-maximum suppression.

    A detection is kept iff its IoU with every already-kept detection is
    below iou_threshold. Output is in canonical (descending confidence)
    order.
    """
    if not 0 < iou_threshold < 1:
        raise DomainError(f"iou_threshold must be in (0, 1), got {iou_threshold}")
    from . import kernels

    ordered = _canonical_order(dets)
    if not ordered:
        return []
    flags = kernels.nms_keep(boxes_to_array([d.bbox for d in ordered]), iou_threshold)
    return [d for d, keep in zip(ordered, flags) if keep]


def stitch(per_tile, nms_threshold: float = DEFAULT_NMS_THRESHOLD,
           slide_w=None, slide_h=None) -> list:
    """Merge per-tile raw outputs into deduplicated slide detections.

    Maps every record into slide coordinates, concatenates, then applies
    NMS over the merged list so duplicates across tile overlap collapse to
    the highest-confidence copy.
    """
    merged = [
        to_slide_coords(raw, slide_w, slide_h)
        for tile_records in per_tile
        for raw in tile_records
    ]
    return nms(merged, nms_threshold)


def project_to_tiles(dets, tilespec, min_visibility: float = 1.0) -> list:
    """Fabricate per-tile raw outputs from slide-coordinate detections.

    The inverse of stitch, used to emulate a per-tile detector run: each
    detection appears (clipped) in every tile where at least min_visibility
    of its area is visible. With overlapping tiles an object can therefore
    be reported several times.
    """
    from .geometry import intersect

    per_tile = []
    for origin in tilespec.origins:
        x, y, w, h = tilespec.rect(origin)
        tile_box = BBox(x, y, x + w, y + h)
        records = []
        for det in dets:
            inter = intersect(det.bbox, tile_box)
            if inter is None or inter.area / det.bbox.area < min_visibility - 1e-12:
                continue
            records.append(
                DetectorRawOutput(
                    tile=TileRef(x, y, w, h),
                    center_x=((inter.x_min + inter.x_max) / 2 - x) / w,
                    center_y=((inter.y_min + inter.y_max) / 2 - y) / h,
                    width=inter.width / w,
                    height=inter.height / h,
                    objectness=det.confidence,
                    class_probs=(1.0,),
                )
            )
        per_tile.append(records)
    return per_tile


@dataclass(frozen=True)
class SimulatorModel:
    """Confidence and size distributions for the detector simulator."""

    tp_confidence: tuple = (0.6, 0.99)
    fp_confidence: tuple = (0.05, 0.45)
    fp_box_size: tuple = (48.0, 160.0)


def simulate_detector(
    annotation,
    drop_rate: float = 0.0,
    fp_rate_per_megapixel: float = 0.0,
    jitter_px: float = 0.0,
    model: SimulatorModel = SimulatorModel(),
    seed: int = 0,
    tissue_mask=None,
) -> list:
    """Seeded stand-in for the external detector.

    Deterministic given (annotation, parameters, seed); draws come from a
    PCG64 stream in a fixed order. Each ground-truth box is dropped with
    probability drop_rate, otherwise emitted with independent uniform
    corner jitter in [-jitter_px, jitter_px] and confidence drawn from
    model.tp_confidence. False positives arrive at a Poisson rate per
    megapixel of slide, placed uniformly (rejection-sampled onto tissue
    when a mask is given) with confidence from model.fp_confidence.
    """
    if not 0.0 <= drop_rate <= 1.0:
        raise DomainError(f"drop_rate must be in [0, 1], got {drop_rate}")
    if fp_rate_per_megapixel < 0 or jitter_px < 0:
        raise DomainError("fp_rate_per_megapixel and jitter_px must be >= 0")
    rng = np.random.Generator(np.random.PCG64(seed))
    slide_w = float(annotation.slide_width)
    slide_h = float(annotation.slide_height)
    dets = []
    for gt in annotation.boxes:
        if rng.uniform() < drop_rate:
            continue
        jit = rng.uniform(-jitter_px, jitter_px, size=4) if jitter_px > 0 else np.zeros(4)
        conf = float(rng.uniform(*model.tp_confidence))
        x0 = min(max(gt.bbox.x_min + jit[0], 0.0), slide_w)
        y0 = min(max(gt.bbox.y_min + jit[1], 0.0), slide_h)
        x1 = min(max(gt.bbox.x_max + jit[2], 0.0), slide_w)
        y1 = min(max(gt.bbox.y_max + jit[3], 0.0), slide_h)
        if x1 <= x0:  # jitter collapsed the span; keep a sliver
            x0, x1 = max(0.0, x1 - 1.0), min(slide_w, x0 + 1.0)
        if y1 <= y0:
            y0, y1 = max(0.0, y1 - 1.0), min(slide_h, y0 + 1.0)
        dets.append(Detection(bbox=BBox(x0, y0, x1, y1), confidence=conf))
    lam = fp_rate_per_megapixel * slide_w * slide_h / 1e6
    n_fp = int(rng.poisson(lam)) if lam > 0 else 0
    for _ in range(n_fp):
        bw = float(rng.uniform(*model.fp_box_size))
        bh = float(rng.uniform(*model.fp_box_size))
        for _attempt in range(100):
            cx = float(rng.uniform(0.0, slide_w))
            cy = float(rng.uniform(0.0, slide_h))
            if tissue_mask is None:
                break
            mc = min(int(cx / tissue_mask.downsample), tissue_mask.width - 1)
            mr = min(int(cy / tissue_mask.downsample), tissue_mask.height - 1)
            if tissue_mask.bits[mr, mc]:
                break
        x0 = min(max(cx - bw / 2, 0.0), slide_w - 1.0)
        y0 = min(max(cy - bh / 2, 0.0), slide_h - 1.0)
        x1 = max(min(cx + bw / 2, slide_w), x0 + 1.0)
        y1 = max(min(cy + bh / 2, slide_h), y0 + 1.0)
        conf = float(rng.uniform(*model.fp_confidence))
        dets.append(Detection(bbox=BBox(x0, y0, x1, y1), confidence=conf))
    return dets


def detections_to_json(dets, slide_id: str) -> str:
    """Serialize slide-coordinate detections (full float precision)."""
    doc = {
        "schema_version": 1,
        "slide_id": slide_id,
        "detections": [
            {
                "x_min": det.bbox.x_min,
                "y_min": det.bbox.y_min,
                "x_max": det.bbox.x_max,
                "y_max": det.bbox.y_max,
                "confidence": det.confidence,
                "class_id": det.class_id,
            }
            for det in dets
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def detections_from_json(text: str) -> tuple:
    """Inverse of detections_to_json: (slide_id, detections)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDetectionFile(f"invalid detections JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("schema_version") != 1:
        raise MalformedDetectionFile("unsupported detections document")
    dets = []
    for entry in doc.get("detections", []):
        try:
            dets.append(
                Detection(
                    bbox=BBox(entry["x_min"], entry["y_min"], entry["x_max"], entry["y_max"]),
                    confidence=float(entry["confidence"]),
                    class_id=int(entry.get("class_id", 0)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDetectionFile(f"malformed detection entry: {exc}") from None
    return doc.get("slide_id", ""), dets


def run_external_detector(command_template: str, tile_dir, out_json) -> list:
    """Invoke the configured detector command and parse its JSON output.

    The template receives {tile_dir} and {out_json} placeholders. A
    non-zero exit raises DetectorFailed.
    """
    cmd = command_template.format(tile_dir=str(tile_dir), out_json=str(out_json))
    argv = shlex.split(cmd)
    try:
        proc = subprocess.run(argv, capture_output=True, text=True)
    except OSError as exc:
        raise DetectorFailed(f"cannot launch detector: {exc}") from None
    if proc.returncode != 0:
        tail = (proc.stderr or proc.stdout or "").strip().splitlines()[-5:]
        raise DetectorFailed(
            f"detector exited with {proc.returncode}: " + " | ".join(tail)
        )
    return parse_detector_json(out_json)
