"""Overlapping tile planning and training-patch export with darknet labels."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from PIL import Image

from .annotations import SlideAnnotation
from .errors import BadGeometry, IoError
from .geometry import BBox, intersect
from .slides import SlideHandle, read_region

DEFAULT_TILE_SIZE = 1024
DEFAULT_OVERLAP = 256
DEFAULT_MIN_FRACTION = 0.6


@dataclass(frozen=True)
class TileSpec:
    tile_size: int
    overlap: int
    origins: tuple  # ((x, y), ...) row-major
    slide_width: int
    slide_height: int

    def rect(self, origin) -> tuple:
        """(x, y, w, h) of a tile, clipped to the slide bounds."""
        x, y = origin
        return (
            x,
            y,
            min(self.tile_size, self.slide_width - x),
            min(self.tile_size, self.slide_height - y),
        )


def _axis_origins(dim: int, tile_size: int, stride: int) -> list:
    if dim <= tile_size:
        return [0]
    origins = []
    pos = 0
    while True:
        if pos + tile_size >= dim:
            origins.append(dim - tile_size)  # clamp the last tile into bounds
            break
        origins.append(pos)
        pos += stride
    return origins


def plan_tiles(slide_w: int, slide_h: int, tile_size: int = DEFAULT_TILE_SIZE,
               overlap: int = DEFAULT_OVERLAP) -> TileSpec:
    """Row-major tile origins on stride tile_size - overlap, covering the slide."""
    if tile_size < 64:
        raise BadGeometry(f"tile_size must be >= 64, got {tile_size}")
    if overlap < 0 or overlap >= tile_size:
        raise BadGeometry(f"overlap must be in [0, tile_size), got {overlap}")
    if slide_w < 1 or slide_h < 1:
        raise BadGeometry(f"slide dims must be positive, got {slide_w}x{slide_h}")
    stride = tile_size - overlap
    xs = _axis_origins(slide_w, tile_size, stride)
    ys = _axis_origins(slide_h, tile_size, stride)
    origins = tuple((x, y) for y in ys for x in xs)
    return TileSpec(tile_size=tile_size, overlap=overlap, origins=origins,
                    slide_width=slide_w, slide_height=slide_h)


def clip_box_to_tile(box: BBox, tile_x: int, tile_y: int, tile_w: int, tile_h: int,
                     min_fraction: float = DEFAULT_MIN_FRACTION):
    """Intersection of box and tile in tile-local coordinates.

    Returns None unless area(intersection) / area(box) >= min_fraction.
    """
    if not 0 < min_fraction <= 1:
        raise BadGeometry(f"min_fraction must be in (0, 1], got {min_fraction}")
    tile = BBox(tile_x, tile_y, tile_x + tile_w, tile_y + tile_h)
    inter = intersect(box, tile)
    if inter is None or inter.area / box.area < min_fraction:
        return None
    return inter.translate(-tile_x, -tile_y)


def to_darknet_label(box: BBox, tile_w: int, tile_h: int, class_id: int = 0) -> str:
    """`<class> <cx> <cy> <w> <h>` line, coordinates normalized to [0, 1]."""
    cx = (box.x_min + box.x_max) / 2 / tile_w
    cy = (box.y_min + box.y_max) / 2 / tile_h
    w = box.width / tile_w
    h = box.height / tile_h
    return f"{class_id} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}\n"


def parse_darknet_label(line: str) -> tuple:
    """Inverse of to_darknet_label: (class_id, cx, cy, w, h)."""
    parts = line.split()
    if len(parts) != 5:
        raise BadGeometry(f"label line needs 5 fields, got {len(parts)}: {line!r}")
    return (int(parts[0]),) + tuple(float(p) for p in parts[1:])


def tile_name(slide_id: str, x: int, y: int, w: int, h: int) -> str:
    """Canonical patch stem; geometry is recoverable from the name."""
    return f"{slide_id}_x{x:06d}_y{y:06d}_w{w}_h{h}"


def parse_tile_name(stem: str):
    """Recover (x, y, w, h) from a canonical patch stem, or None."""
    parts = stem.split("_")
    if len(parts) < 4:
        return None
    try:
        x = int(parts[-4].removeprefix("x"))
        y = int(parts[-3].removeprefix("y"))
        w = int(parts[-2].removeprefix("w"))
        h = int(parts[-1].removeprefix("h"))
    except ValueError:
        return None
    return x, y, w, h


@dataclass(frozen=True)
class ExportManifest:
    patch_count: int
    label_count: int  # number of labelled boxes across all patches
    entries: tuple  # one dict per tile, row-major tile order

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=[
                "tile_index", "origin_x", "origin_y", "width", "height",
                "image", "label", "boxes",
            ])
            writer.writeheader()
            writer.writerows(self.entries)


def read_manifest_csv(path) -> list:
    """Rows of an export manifest with numeric fields restored."""
    with Path(path).open(newline="") as fh:
        rows = []
        for row in csv.DictReader(fh):
            for key in ("tile_index", "origin_x", "origin_y", "width", "height", "boxes"):
                row[key] = int(row[key])
            rows.append(row)
    return rows


def export_patches(
    slide: SlideHandle,
    annotation: SlideAnnotation,
    tilespec: TileSpec,
    min_fraction: float = DEFAULT_MIN_FRACTION,
    out_dir=None,
    workers: int = 1,
) -> ExportManifest:
    """Write one PNG image and one .txt label file per planned tile.

    Label files are empty when no ground-truth box clears min_fraction.
    Tiles may be processed in parallel; the manifest is always assembled in
    row-major tile order so the output is independent of worker count.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise IoError(f"output directory not writable: {out_dir}: {exc}") from None

    def one_tile(item):
        index, origin = item
        x, y, w, h = tilespec.rect(origin)
        tile = read_region(slide, x, y, w, h)
        stem = tile_name(annotation.slide_id, x, y, w, h)
        image_path = out_dir / f"{stem}.png"
        label_path = out_dir / f"{stem}.txt"
        lines = []
        for gt in annotation.boxes:
            local = clip_box_to_tile(gt.bbox, x, y, w, h, min_fraction)
            if local is not None:
                lines.append(to_darknet_label(local, w, h, gt.class_id))
        try:
            Image.fromarray(tile.pixels).save(image_path)
            label_path.write_text("".join(lines))
        except OSError as exc:
            raise IoError(f"failed writing {stem}: {exc}") from None
        return {
            "tile_index": index,
            "origin_x": x,
            "origin_y": y,
            "width": w,
            "height": h,
            "image": image_path.name,
            "label": label_path.name,
            "boxes": len(lines),
        }

    items = list(enumerate(tilespec.origins))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(one_tile, items))
    else:
        entries = [one_tile(item) for item in items]
    entries.sort(key=lambda e: e["tile_index"])
    return ExportManifest(
        patch_count=len(entries),
        label_count=sum(e["boxes"] for e in entries),
        entries=tuple(entries),
    )
