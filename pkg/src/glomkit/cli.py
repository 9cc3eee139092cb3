"""Command-line pipeline orchestration.

Every subcommand delegates to one library operation, writes its outputs
under --out, and records a run manifest (inputs, parameters, versions,
seed) so a run can be replayed bit-exactly. Configuration precedence is
flags > config file (key=value lines) > built-in defaults. Exit codes:
0 success, 1 validation error, 2 I/O or detector failure.
"""
from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

import click

from . import __version__, annotations, darknet, detections, kernels, metrics, reports, slides, tiles
from .errors import GlomkitError, SchemaViolation


def _read_config_file(path: Path) -> dict:
    values = {}
    for raw in path.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaViolation(f"{path}: bad config line {raw!r} (expected key=value)")
        key, val = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = val
    return values


@click.group(name="glomkit")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="key=value defaults applied to all subcommands.")
@click.pass_context
def cli(ctx, config_path):
    """Slide detection pipeline: annotations, tiles, detections, evaluation."""
    if config_path:
        values = _read_config_file(Path(config_path))
        ctx.default_map = {name: dict(values) for name in cli.commands}


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_run_manifest(target: Path, command: str, params: dict) -> None:
    """target: the primary output file or directory of the command."""
    inputs = {}
    for key, value in params.items():
        candidates = value if isinstance(value, (list, tuple)) else [value]
        for item in candidates:
            if isinstance(item, (str, Path)):
                p = Path(item)
                if p.is_file():
                    inputs[str(p)] = f"sha256:{_sha256(p)}"
    manifest = {
        "command": command,
        "package": "glomkit",
        "version": __version__,
        "kernel_backend": kernels.BACKEND,
        "parameters": {
            k: (str(v) if isinstance(v, Path) else list(v) if isinstance(v, tuple) else v)
            for k, v in params.items()
        },
        "seed": params.get("seed"),
        "inputs": inputs,
    }
    if target.is_dir():
        manifest_path = target / f"{command}_manifest.json"
    else:
        manifest_path = target.with_name(target.name + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _slide_geometry(slide_path, width, height, slide_id):
    if slide_path:
        handle = slides.open_slide(slide_path)
        return handle.slide_id, handle.width_px, handle.height_px
    if width is None or height is None or slide_id is None:
        raise SchemaViolation(
            "provide --slide, or all of --width/--height/--slide-id"
        )
    return slide_id, width, height


@cli.command()
@click.option("--rle", "rle_csv", type=click.Path(exists=True, dir_okay=False),
              help="id,encoding CSV with run-length masks.")
@click.option("--polygons", type=click.Path(exists=True, dir_okay=False),
              help="GeoJSON-style polygon annotation file.")
@click.option("--slide", "slide_path", type=click.Path(exists=True, dir_okay=False),
              help="Slide file used for dimensions and id.")
@click.option("--width", type=int, default=None, help="Slide width (alternative to --slide).")
@click.option("--height", type=int, default=None, help="Slide height (alternative to --slide).")
@click.option("--slide-id", default=None, help="Slide id (alternative to --slide).")
@click.option("--id", "row_id", default=None,
              help="Row id in the RLE CSV; defaults to the slide id.")
@click.option("--min-area", type=int, default=annotations.DEFAULT_MIN_COMPONENT_AREA,
              show_default=True, help="Drop mask components below this pixel area.")
@click.option("--connectivity", type=click.Choice(["4", "8"]), default="8", show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True,
              help="Canonical annotation JSON to write.")
def convert(rle_csv, polygons, slide_path, width, height, slide_id, row_id,
            min_area, connectivity, out_path):
    """Convert RLE or polygon annotations to the canonical schema."""
    if (rle_csv is None) == (polygons is None):
        raise SchemaViolation("provide exactly one of --rle / --polygons")
    sid, w, h = _slide_geometry(slide_path, width, height, slide_id)
    if rle_csv:
        table = annotations.parse_rle_csv(rle_csv)
        key = row_id or sid
        if key not in table:
            raise SchemaViolation(f"{rle_csv}: no row with id {key!r}")
        mask = annotations.decode_rle(table[key], w, h)
        annotation = annotations.annotation_from_rle(
            mask, sid, w, h, min_component_area=min_area,
            connectivity=int(connectivity),
        )
    else:
        polys = annotations.parse_polygon_json(polygons)
        annotation = annotations.annotation_from_polygons(polys, sid, w, h)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    annotations.save_canonical(annotation, out)
    _write_run_manifest(out, "convert", {
        "rle": rle_csv, "polygons": polygons, "slide": slide_path,
        "width": w, "height": h, "slide_id": sid, "id": row_id,
        "min_area": min_area, "connectivity": int(connectivity), "out": out_path,
    })
    click.echo(f"wrote {out} ({len(annotation.boxes)} boxes)")


@cli.command()
@click.option("--slide", "slide_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--downsample", type=int, default=slides.DEFAULT_MASK_DOWNSAMPLE,
              show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def mask(slide_path, downsample, out_dir):
    """Compute the tissue mask and its level-0 area for a slide."""
    handle = slides.open_slide(slide_path)
    tissue = slides.compute_tissue_mask(handle, downsample)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    png_path = out / f"{handle.slide_id}_mask.png"
    json_path = out / f"{handle.slide_id}_mask.json"
    tissue.save_png(png_path)
    json_path.write_text(json.dumps({
        "slide_id": handle.slide_id,
        "downsample": tissue.downsample,
        "width": tissue.width,
        "height": tissue.height,
        "tissue_area_px2": tissue.tissue_area_px2,
    }, indent=2) + "\n")
    _write_run_manifest(out, "mask", {
        "slide": slide_path, "downsample": downsample, "out": out_dir,
    })
    click.echo(f"tissue area {tissue.tissue_area_px2:.0f} px^2 -> {json_path}")


@cli.command()
@click.option("--slide", "slide_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--ann", "ann_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Canonical annotation JSON.")
@click.option("--tile-size", type=int, default=tiles.DEFAULT_TILE_SIZE, show_default=True)
@click.option("--overlap", type=int, default=tiles.DEFAULT_OVERLAP, show_default=True)
@click.option("--min-fraction", type=float, default=tiles.DEFAULT_MIN_FRACTION,
              show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def export(slide_path, ann_path, tile_size, overlap, min_fraction, workers, out_dir):
    """Export training patches and darknet label files."""
    handle = slides.open_slide(slide_path)
    annotation = annotations.load_canonical(ann_path)
    spec = tiles.plan_tiles(handle.width_px, handle.height_px, tile_size, overlap)
    manifest = tiles.export_patches(handle, annotation, spec, min_fraction,
                                    Path(out_dir), workers=workers)
    manifest.write_csv(Path(out_dir) / "manifest.csv")
    _write_run_manifest(Path(out_dir), "export", {
        "slide": slide_path, "ann": ann_path, "tile_size": tile_size,
        "overlap": overlap, "min_fraction": min_fraction, "workers": workers,
        "out": out_dir,
    })
    click.echo(f"{manifest.patch_count} patches, {manifest.label_count} labelled boxes")


@cli.command()
@click.option("--num-classes", type=int, default=1, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Write cfg text here instead of stdout.")
def config(num_classes, out_path):
    """Emit the darknet training configuration."""
    cfg = darknet.TrainingConfig(num_classes=num_classes,
                                 filters=(num_classes + 5) * 3)
    text = darknet.render_darknet_cfg(cfg)
    if out_path:
        out = Path(out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        _write_run_manifest(out, "config", {"num_classes": num_classes, "out": out_path})
        click.echo(f"wrote {out}")
    else:
        click.echo(text, nl=False)


@cli.command()
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Write the manifest here instead of stdout.")
def experiments(out_path):
    """Emit the seven train/validate experiment plans."""
    text = darknet.experiment_manifest_json(darknet.build_experiment_plans())
    if out_path:
        out = Path(out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        _write_run_manifest(out, "experiments", {"out": out_path})
        click.echo(f"wrote {out}")
    else:
        click.echo(text, nl=False)


@cli.command()
@click.option("--command", "command_template", required=True,
              help="Detector command with {tile_dir} and {out_json} placeholders.")
@click.option("--tile-dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True,
              help="Detector JSON output path (given to the command).")
def detect(command_template, tile_dir, out_path):
    """Run the configured external detector over a tile directory."""
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    records = detections.run_external_detector(command_template, tile_dir, out)
    _write_run_manifest(out, "detect", {
        "command": command_template, "tile_dir": tile_dir, "out": out_path,
    })
    click.echo(f"detector produced {len(records)} raw detections -> {out}")


@cli.command()
@click.option("--dets", "dets_paths", type=click.Path(exists=True, dir_okay=False),
              multiple=True, required=True, help="Detector JSON file(s), repeatable.")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Patch manifest.csv used to resolve tile geometry.")
@click.option("--slide-width", type=int, default=None)
@click.option("--slide-height", type=int, default=None)
@click.option("--slide-id", default="")
@click.option("--nms", "nms_threshold", type=float,
              default=detections.DEFAULT_NMS_THRESHOLD, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True,
              help="Parallel workers for per-file parsing.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def stitch(dets_paths, manifest_path, slide_width, slide_height, slide_id,
           nms_threshold, workers, out_path):
    """Merge per-tile detector output into deduplicated slide detections."""
    tile_lookup = None
    if manifest_path:
        tile_lookup = {
            Path(row["image"]).stem: (row["origin_x"], row["origin_y"],
                                      row["width"], row["height"])
            for row in tiles.read_manifest_csv(manifest_path)
        }
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_tile = list(pool.map(
                lambda p: detections.parse_detector_json(p, tile_lookup), dets_paths
            ))
    else:
        per_tile = [detections.parse_detector_json(p, tile_lookup) for p in dets_paths]
    merged = detections.stitch(per_tile, nms_threshold, slide_width, slide_height)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(detections.detections_to_json(merged, slide_id))
    _write_run_manifest(out, "stitch", {
        "dets": list(dets_paths), "manifest": manifest_path,
        "slide_width": slide_width, "slide_height": slide_height,
        "slide_id": slide_id, "nms": nms_threshold, "workers": workers,
        "out": out_path,
    })
    click.echo(f"{len(merged)} detections after stitching -> {out}")


@cli.command()
@click.option("--ann", "ann_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--drop-rate", type=float, default=0.0, show_default=True)
@click.option("--fp-rate", type=float, default=0.0, show_default=True,
              help="Expected false positives per megapixel.")
@click.option("--jitter", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--mask-summary", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Mask JSON (from `mask`); restricts false positives to tissue.")
@click.option("--raw-out", type=click.Path(dir_okay=False), default=None,
              help="Also write per-tile detector-style JSON for `stitch`.")
@click.option("--tile-size", type=int, default=tiles.DEFAULT_TILE_SIZE, show_default=True,
              help="Tile grid used with --raw-out.")
@click.option("--overlap", type=int, default=tiles.DEFAULT_OVERLAP, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def simulate(ann_path, drop_rate, fp_rate, jitter, seed, mask_summary,
             raw_out, tile_size, overlap, out_path):
    """Produce seeded synthetic detections for a slide annotation."""
    annotation = annotations.load_canonical(ann_path)
    tissue_mask = None
    if mask_summary:
        info = json.loads(Path(mask_summary).read_text())
        png = Path(mask_summary).with_suffix(".png")
        if png.is_file():
            import numpy as np
            from PIL import Image

            bits = np.asarray(Image.open(png).convert("L")) > 0
            tissue_mask = slides.TissueMask(
                downsample=info["downsample"], width=info["width"],
                height=info["height"], bits=bits,
                tissue_area_px2=info["tissue_area_px2"],
            )
    dets = detections.simulate_detector(
        annotation, drop_rate=drop_rate, fp_rate_per_megapixel=fp_rate,
        jitter_px=jitter, seed=seed, tissue_mask=tissue_mask,
    )
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(detections.detections_to_json(dets, annotation.slide_id))
    if raw_out:
        spec = tiles.plan_tiles(annotation.slide_width, annotation.slide_height,
                                tile_size, overlap)
        per_tile = detections.project_to_tiles(dets, spec)
        frames = []
        for origin, records in zip(spec.origins, per_tile):
            x, y, w, h = spec.rect(origin)
            frames.append({
                "filename": tiles.tile_name(annotation.slide_id, x, y, w, h) + ".png",
                "tile": {"x": x, "y": y, "width": w, "height": h},
                "objects": [
                    {
                        "class_id": 0,
                        "name": "glomerulus",
                        "relative_coordinates": {
                            "center_x": r.center_x, "center_y": r.center_y,
                            "width": r.width, "height": r.height,
                        },
                        "confidence": r.objectness,
                    }
                    for r in records
                ],
            })
        Path(raw_out).write_text(json.dumps(frames, indent=2) + "\n")
    _write_run_manifest(out, "simulate", {
        "ann": ann_path, "drop_rate": drop_rate, "fp_rate": fp_rate,
        "jitter": jitter, "seed": seed, "mask_summary": mask_summary,
        "raw_out": raw_out, "tile_size": tile_size, "overlap": overlap,
        "out": out_path,
    })
    click.echo(f"{len(dets)} simulated detections -> {out}")


def _load_eval_inputs(ann_path, dets_path):
    annotation = annotations.load_canonical(ann_path)
    _, dets = detections.detections_from_json(Path(dets_path).read_text())
    return annotation, dets


def _tissue_area_from_options(mask_area, mask_summary):
    if (mask_area is None) == (mask_summary is None):
        raise SchemaViolation("provide exactly one of --mask-area / --mask-summary")
    if mask_area is not None:
        return float(mask_area)
    return float(json.loads(Path(mask_summary).read_text())["tissue_area_px2"])


@cli.command()
@click.option("--ann", "ann_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--dets", "dets_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--mask-area", type=float, default=None,
              help="Tissue area in level-0 px^2.")
@click.option("--mask-summary", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Mask JSON (from `mask`) holding the tissue area.")
@click.option("--conf", type=float, default=metrics.DEFAULT_CONF_THRESHOLD,
              show_default=True)
@click.option("--iou", "iou_threshold", type=float, default=metrics.DEFAULT_IOU_THRESHOLD,
              show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def evaluate(ann_path, dets_path, mask_area, mask_summary, conf, iou_threshold, out_dir):
    """Evaluate slide detections against the canonical annotation."""
    annotation, dets = _load_eval_inputs(ann_path, dets_path)
    tissue_area = _tissue_area_from_options(mask_area, mask_summary)
    report = metrics.evaluate_slide(
        dets, annotation.boxes, tissue_area, conf_threshold=conf,
        iou_threshold=iou_threshold, slide_id=annotation.slide_id,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(
        json.dumps(metrics_report_to_dict(report), indent=2) + "\n"
    )
    result = reports.ExperimentResult(experiment_id=0, stain="", reports=(report,))
    (out / "metrics.csv").write_text(reports.report_csv([result]))
    _write_run_manifest(out, "evaluate", {
        "ann": ann_path, "dets": dets_path, "mask_area": mask_area,
        "mask_summary": mask_summary, "conf": conf, "iou": iou_threshold,
        "out": out_dir,
    })
    sens = "n/a" if report.sensitivity is None else f"{report.sensitivity:.4f}"
    click.echo(f"tp={report.tp} fp={report.fp} fn={report.fn} "
               f"sensitivity={sens} specificity={report.specificity:.4f}")


def metrics_report_to_dict(report) -> dict:
    return {
        "slide_id": report.slide_id,
        "tp": report.tp, "fp": report.fp, "fn": report.fn,
        "tissue_area": report.tissue_area,
        "gt_area": report.gt_area,
        "fp_area": report.fp_area,
        "tn_area": report.tn_area,
        "sensitivity": report.sensitivity,
        "specificity": report.specificity,
    }


def metrics_report_from_dict(doc) -> metrics.MetricsReport:
    return metrics.MetricsReport(
        tp=int(doc["tp"]), fp=int(doc["fp"]), fn=int(doc["fn"]),
        tissue_area=float(doc["tissue_area"]), gt_area=float(doc["gt_area"]),
        fp_area=float(doc["fp_area"]), tn_area=float(doc["tn_area"]),
        sensitivity=None if doc["sensitivity"] is None else float(doc["sensitivity"]),
        specificity=float(doc["specificity"]),
        slide_id=doc.get("slide_id", ""),
    )


@cli.command()
@click.option("--ann", "ann_paths", type=click.Path(exists=True, dir_okay=False),
              multiple=True, required=True, help="Repeatable; pairs with --dets.")
@click.option("--dets", "dets_paths", type=click.Path(exists=True, dir_okay=False),
              multiple=True, required=True)
@click.option("--mask-area", "mask_areas", type=float, multiple=True, required=True,
              help="Tissue area per slide, same order as --ann.")
@click.option("--iou", "iou_threshold", type=float, default=metrics.DEFAULT_IOU_THRESHOLD,
              show_default=True)
@click.option("--threshold-count", type=int, default=101, show_default=True)
@click.option("--label", default="", help="Curve label in CSV/SVG output.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def roc(ann_paths, dets_paths, mask_areas, iou_threshold, threshold_count, label, out_dir):
    """Sweep confidence thresholds into a ROC curve (CSV + SVG)."""
    if not (len(ann_paths) == len(dets_paths) == len(mask_areas)):
        raise SchemaViolation("--ann, --dets and --mask-area must repeat equally")
    triples = []
    for ann_path, dets_path, area in zip(ann_paths, dets_paths, mask_areas):
        annotation, dets = _load_eval_inputs(ann_path, dets_path)
        triples.append((dets, annotation.boxes, float(area)))
    thresholds = metrics.default_thresholds(threshold_count)
    if len(triples) == 1:
        dets, gts, area = triples[0]
        curve = metrics.roc_curve(dets, gts, area, iou_threshold, thresholds, label=label)
    else:
        curve = metrics.macro_roc(triples, iou_threshold, thresholds, label=label)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "roc.csv").write_text(reports.roc_csv([curve]))
    (out / "roc.svg").write_text(reports.render_roc_svg([curve]))
    _write_run_manifest(out, "roc", {
        "ann": list(ann_paths), "dets": list(dets_paths),
        "mask_area": list(mask_areas), "iou": iou_threshold,
        "threshold_count": threshold_count, "label": label, "out": out_dir,
    })
    click.echo(f"{len(curve.points)} ROC points -> {out / 'roc.csv'}")


@cli.command()
@click.option("--results", "results_path", type=click.Path(exists=True, dir_okay=False),
              required=True,
              help="JSON list of {experiment_id, stain, metrics: [metrics.json paths]}.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def report(results_path, out_dir):
    """Aggregate per-slide metrics files into the experiment table and CSV."""
    try:
        entries = json.loads(Path(results_path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{results_path}: invalid JSON: {exc}") from None
    if not isinstance(entries, list) or not entries:
        raise SchemaViolation(f"{results_path}: expected a non-empty list")
    base = Path(results_path).parent
    results = []
    for entry in entries:
        try:
            slide_reports = tuple(
                metrics_report_from_dict(json.loads((base / p).read_text()))
                if not Path(p).is_absolute()
                else metrics_report_from_dict(json.loads(Path(p).read_text()))
                for p in entry["metrics"]
            )
            results.append(reports.ExperimentResult(
                experiment_id=int(entry["experiment_id"]),
                stain=str(entry["stain"]),
                reports=slide_reports,
            ))
        except (KeyError, TypeError, ValueError, OSError) as exc:
            raise SchemaViolation(f"{results_path}: bad entry: {exc}") from None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = reports.render_report_table(results)
    (out / "report.txt").write_text(table)
    (out / "report.csv").write_text(reports.report_csv(results))
    _write_run_manifest(out, "report", {"results": results_path, "out": out_dir})
    click.echo(table, nl=False)


def main(argv=None) -> int:
    """Entry point with spec exit codes (0 ok, 1 validation, 2 I/O)."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        return 1
    except GlomkitError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    except OSError as exc:
        click.echo(f"io error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
