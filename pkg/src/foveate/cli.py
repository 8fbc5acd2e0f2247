"""Command-line interface and end-to-end pipeline orchestration.

Subcommands cover each stage (tessellate, fields, sample, backproject,
cortical, subsample, grid, cluster, crop, split, train, eval, viz), the full
fixation-to-manifest pipeline, and a reduction-ratio bench. Every subcommand
accepts ``--seed``, ``--config`` (a flat ``key = value`` file) and
``--out-dir``; explicit flags override config-file values.

Exit codes: 0 success, 1 a stage failed, 2 invalid arguments or config.
``FOVEATE_THREADS`` caps pipeline parallelism (0 or unset picks a default);
results never depend on the thread count.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import cortex, dcnn, gaze, imageio, retina
from .errors import FoveateError, StageError, ValidationError


@dataclass
class PipelineConfig:
    """Every tunable of the pipeline and its stages, with full-scale defaults.

    ``subsample_factor`` below 2 disables pooling; ``grid_rows``/``grid_cols``
    of 0 disable the gridding renderer and its bench line.
    """

    node_count: int = 50_000
    fovea_radius: float = retina.DEFAULT_FOVEA_RADIUS
    retina_radius_px: float = retina.DEFAULT_RETINA_RADIUS_PX
    sigma_factor: float = retina.DEFAULT_SIGMA_FACTOR
    crop_size: int = gaze.DEFAULT_CROP_SIZE
    cortical_rows: int = cortex.DEFAULT_GRID_DIMS[0]
    cortical_cols: int = cortex.DEFAULT_GRID_DIMS[1]
    alpha: float = cortex.DEFAULT_ALPHA
    splat_sigma: float = cortex.DEFAULT_SPLAT_SIGMA
    renderer: str = "splat"
    subsample_factor: int = 0
    grid_rows: int = 0
    grid_cols: int = 0
    k_fraction: float = gaze.DEFAULT_K_FRACTION
    train_fraction: float = 0.80
    val_fraction: float = 0.18
    test_fraction: float = 0.02
    strict_homographies: bool = False
    write_weights: bool = False
    seed: int = 0
    conv_filters: tuple[int, ...] = dcnn.DEFAULT_CONV_FILTERS
    fc_widths: tuple[int, ...] = dcnn.DEFAULT_FC_WIDTHS
    num_classes: int = dcnn.DEFAULT_NUM_CLASSES
    dropout_rate: float = dcnn.DEFAULT_DROPOUT_RATE
    padding: str = "same"
    batch_size: int = 64
    learning_rate: float = 0.01
    epochs: int = 18

    @property
    def cortical_dims(self) -> tuple[int, int]:
        return (self.cortical_rows, self.cortical_cols)

    @property
    def split_fractions(self) -> tuple[float, float, float]:
        return (self.train_fraction, self.val_fraction, self.test_fraction)

    def network_spec(self) -> dcnn.NetworkSpec:
        return dcnn.NetworkSpec(
            conv_filters=tuple(self.conv_filters),
            fc_widths=tuple(self.fc_widths),
            num_classes=self.num_classes,
            dropout_rate=self.dropout_rate,
            padding=self.padding,
        )


def parse_config_file(path) -> dict[str, str]:
    """Read a flat ``key = value`` file; '#' starts a comment."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _coerce(raw: str, target_type, key: str):
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if target_type is bool:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"config key {key!r}: expected a boolean, got {raw!r}")
    if target_type is str:
        return raw
    if target_type == tuple[int, ...]:
        parts = [p for p in raw.replace(",", " ").split() if p]
        return tuple(int(p) for p in parts)
    raise ValueError(f"config key {key!r} has unsupported type {target_type!r}")


def build_config(config_path=None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, then config-file values, then explicit overrides."""
    cfg = PipelineConfig()
    field_types = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}
    resolved = {
        "node_count": int, "fovea_radius": float, "retina_radius_px": float,
        "sigma_factor": float, "crop_size": int, "cortical_rows": int,
        "cortical_cols": int, "alpha": float, "splat_sigma": float,
        "renderer": str, "subsample_factor": int, "grid_rows": int,
        "grid_cols": int, "k_fraction": float, "train_fraction": float,
        "val_fraction": float, "test_fraction": float,
        "strict_homographies": bool, "write_weights": bool, "seed": int,
        "conv_filters": tuple[int, ...], "fc_widths": tuple[int, ...],
        "num_classes": int, "dropout_rate": float, "padding": str,
        "batch_size": int, "learning_rate": float, "epochs": int,
    }
    assert set(resolved) == set(field_types)
    if config_path is not None:
        for key, raw in parse_config_file(config_path).items():
            if key not in resolved:
                raise ValueError(f"unknown config key {key!r}")
            setattr(cfg, key, _coerce(raw, resolved[key], key))
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    if cfg.renderer not in ("splat", "grid"):
        raise ValueError(f"renderer must be 'splat' or 'grid', got {cfg.renderer!r}")
    return cfg


def thread_budget(n_jobs: int) -> int:
    """Worker count for ``n_jobs`` independent tasks, capped by FOVEATE_THREADS."""
    raw = os.environ.get("FOVEATE_THREADS", "").strip()
    cap = int(raw) if raw else 0
    if cap < 0:
        raise ValueError(f"FOVEATE_THREADS must be >= 0, got {cap}")
    if cap == 0:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_jobs))


@dataclass
class ReductionReport:
    """Input-size reduction ratios for one configuration."""

    crop_size: int
    node_count: int
    cortical_dims: tuple[int, int]
    crop_to_cortical: float
    crop_to_nodes: float
    inscribed_to_nodes: float
    crop_to_subsampled: float | None = None
    subsampled_dims: tuple[int, int] | None = None
    crop_to_gridded: float | None = None
    gridded_dims: tuple[int, int] | None = None

    def lines(self) -> list[str]:
        s = self.crop_size
        rows, cols = self.cortical_dims
        out = [
            f"crop {s}x{s}x3 -> cortical {rows}x{cols}x3: "
            f"{self.crop_to_cortical:.3f}x",
            f"crop {s}x{s} -> {self.node_count} nodes: {self.crop_to_nodes:.2f}x "
            f"(inscribed circle basis: {self.inscribed_to_nodes:.2f}x)",
        ]
        if self.crop_to_subsampled is not None:
            sr, sc = self.subsampled_dims
            out.append(
                f"crop {s}x{s} -> subsampled cortical {sr}x{sc}: "
                f"{self.crop_to_subsampled:.2f}x"
            )
        if self.crop_to_gridded is not None:
            gr, gc = self.gridded_dims
            out.append(
                f"crop {s}x{s} -> gridded cortical {gr}x{gc}: "
                f"{self.crop_to_gridded:.2f}x"
            )
        return out


def bench_reduction(config: PipelineConfig) -> ReductionReport:
    """Exact-arithmetic reduction ratios for the configured geometry."""
    s = config.crop_size
    rows, cols = config.cortical_dims
    crop_px = s * s
    report = ReductionReport(
        crop_size=s,
        node_count=config.node_count,
        cortical_dims=(rows, cols),
        crop_to_cortical=(crop_px * 3) / float(rows * cols * 3),
        crop_to_nodes=retina.reduction_ratio((s, s, 3), config.node_count, 3),
        inscribed_to_nodes=(np.pi * (s / 2.0) ** 2) / config.node_count,
    )
    if config.subsample_factor >= 2:
        sr, sc = rows // config.subsample_factor, cols // config.subsample_factor
        report.subsampled_dims = (sr, sc)
        report.crop_to_subsampled = crop_px / float(sr * sc)
    if config.grid_rows > 0 and config.grid_cols > 0:
        report.gridded_dims = (config.grid_rows, config.grid_cols)
        report.crop_to_gridded = crop_px / float(config.grid_rows * config.grid_cols)
    return report


def _render_cortical(iv, cmap, config: PipelineConfig) -> cortex.CorticalImage:
    if config.renderer == "grid":
        dims = (
            (config.grid_rows, config.grid_cols)
            if config.grid_rows > 0 and config.grid_cols > 0
            else None
        )
        img = cortex.grid_cortical_image(iv, cmap, config.splat_sigma, dims)
    else:
        img = cortex.splat_cortical_image(iv, cmap, config.splat_sigma)
    if config.subsample_factor >= 2:
        img = cortex.subsample_cortical(img, config.subsample_factor)
    return img


def run_pipeline(
    config: PipelineConfig,
    fixation_logs,
    image_dir,
    out_dir,
    homography_path=None,
) -> tuple[gaze.DatasetManifest | None, list[StageError]]:
    """Fixation logs to a split dataset of cortical images.

    Per class: composite fixations into the reference frame, cluster them,
    and render one crop + image vector + cortical PNG per cluster. Failures
    are collected as :class:`StageError` (processing continues across
    classes); the manifest covers everything that succeeded. Reruns with the
    same inputs and seed produce byte-identical artifacts.
    """
    records: list[gaze.FixationRecord] = []
    for log_path in fixation_logs:
        records.extend(gaze.parse_fixation_log(log_path))
    if not records:
        raise ValidationError("fixation logs contain no records")
    homographies = (
        gaze.load_homographies(homography_path) if homography_path else {}
    )

    os.makedirs(out_dir, exist_ok=True)
    for sub in ("crops", "vectors", "cortical"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    tess = retina.generate_tessellation(config.node_count, config.fovea_radius)
    retina.save_tessellation(os.path.join(out_dir, "retina.txt"), tess)
    half = config.crop_size // 2
    fixation = (float(half), float(half))
    fields = retina.compute_receptive_fields(
        tess,
        config.retina_radius_px,
        (config.crop_size, config.crop_size),
        fixation,
        config.sigma_factor,
    )
    cmap = cortex.cortical_coordinates(tess, config.alpha, config.cortical_dims)

    by_class: dict[str, list[gaze.FixationRecord]] = {}
    for rec in records:
        by_class.setdefault(rec.class_label, []).append(rec)
    class_list = sorted(by_class)

    def process_class(label: str):
        recs = by_class[label]
        entries: list[tuple[str, str]] = []
        errors: list[StageError] = []
        warnings: list[str] = []
        try:
            points = gaze.composite_fixations(
                recs, homographies, strict=config.strict_homographies
            )
            clusters = gaze.cluster_fixations(
                points, config.k_fraction, seed=config.seed
            )
        except Exception as exc:  # noqa: BLE001 - reported per class
            return entries, [StageError("composite/cluster", str(exc), label)], warnings

        image_path = os.path.join(image_dir, recs[0].image_path)
        try:
            reference = imageio.load_image(image_path)
        except OSError as exc:
            return entries, [StageError("load-image", f"{image_path}: {exc}", label)], warnings

        for ci, cluster in enumerate(clusters):
            try:
                rect = gaze.place_retina(
                    cluster, reference.shape[:2], config.crop_size
                )
                if rect.hull_warning:
                    warnings.append(
                        f"class {label} cluster {ci}: fixation hull exceeds the "
                        "retina's field of view"
                    )
                crop = gaze.extract_crop(reference, rect)
                iv = retina.sample(crop, fields, fixation, config.retina_radius_px)
                cimg = _render_cortical(iv, cmap, config)

                stem = f"{label}_{ci:02d}"
                imageio.save_image(os.path.join(out_dir, "crops", f"{stem}.png"), crop)
                retina.save_imagevector(
                    os.path.join(out_dir, "vectors", f"{stem}.riv"), iv
                )
                cortical_rel = os.path.join("cortical", f"{stem}.png")
                imageio.save_image(os.path.join(out_dir, cortical_rel), cimg.pixels)
                if config.write_weights:
                    cortex.save_cortical_weights(
                        os.path.join(out_dir, "cortical", f"{stem}.w"), cimg.weights
                    )
                entries.append((cortical_rel, label))
            except Exception as exc:  # noqa: BLE001 - reported per cluster
                errors.append(StageError("render", str(exc), label, ci))
        return entries, errors, warnings

    workers = thread_budget(len(class_list))
    results: dict[str, tuple] = {}
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {label: pool.submit(process_class, label) for label in class_list}
            results = {label: fut.result() for label, fut in futures.items()}
    else:
        results = {label: process_class(label) for label in class_list}

    all_entries: list[tuple[str, str]] = []
    all_errors: list[StageError] = []
    for label in class_list:
        entries, errors, warnings = results[label]
        all_entries.extend(entries)
        all_errors.extend(errors)
        for w in warnings:
            print(f"warning: {w}", file=sys.stderr)

    manifest = None
    if all_entries:
        manifest = gaze.split_dataset(
            all_entries, config.split_fractions, seed=config.seed
        )
        gaze.save_manifest(os.path.join(out_dir, "manifest.csv"), manifest)
    return manifest, all_errors


def load_dataset_from_manifest(
    manifest: gaze.DatasetManifest, split: str, root
) -> tuple[np.ndarray, np.ndarray]:
    """Stack a manifest split into (images, one-hot labels) float32 arrays."""
    pairs = manifest.paths(split)
    if not pairs:
        raise ValueError(f"manifest has no entries for split {split!r}")
    class_index = {label: i for i, label in enumerate(manifest.classes)}
    images = []
    labels = np.zeros((len(pairs), len(manifest.classes)), dtype=np.float32)
    for i, (rel, label) in enumerate(pairs):
        images.append(imageio.load_image(os.path.join(root, rel)).astype(np.float32))
        labels[i, class_index[label]] = 1.0
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ValidationError(f"split {split!r} mixes image shapes: {sorted(shapes)}")
    return np.stack(images), labels


def viz_tessellation(tess: retina.RetinaTessellation, out_path, canvas: int = 800) -> None:
    """Render nodes as dots whose radius tracks the receptive-field sigma."""
    from PIL import Image, ImageDraw

    img = Image.new("RGB", (canvas, canvas), (10, 10, 14))
    draw = ImageDraw.Draw(img)
    scale = (canvas - 4) / 2.0
    cx = cy = canvas / 2.0
    ecc = tess.eccentricities()
    for (x, y), nn, r in zip(tess.nodes, tess.nearest_neighbor_dist, ecc):
        px = cx + x * scale
        py = cy + y * scale
        radius = max(0.6, retina.DEFAULT_SIGMA_FACTOR * nn * scale)
        shade = int(120 + 135 * (1.0 - min(r, 1.0)))
        draw.ellipse(
            (px - radius, py - radius, px + radius, py + radius),
            fill=(shade, shade, 90),
        )
    img.save(out_path, format="PNG")


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub.add_argument("--config", default=None, help="flat key = value config file")
    sub.add_argument(
        "--out-dir", default=".", help="directory for relative output paths"
    )


def _out_path(args, path):
    if path is None:
        return None
    out = os.fspath(path)
    if not os.path.isabs(out):
        out = os.path.join(args.out_dir, out)
    parent = os.path.dirname(out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return out


def _config_from_args(args, **extra) -> PipelineConfig:
    overrides = {"seed": getattr(args, "seed", None)}
    overrides.update(extra)
    return build_config(args.config, overrides)


def _cmd_tessellate(args) -> int:
    cfg = _config_from_args(args, node_count=args.nodes, fovea_radius=args.fovea_radius)
    tess = retina.generate_tessellation(cfg.node_count, cfg.fovea_radius)
    retina.save_tessellation(_out_path(args, args.out), tess)
    print(f"wrote {tess.node_count} nodes (fovea radius {tess.fovea_radius})")
    return 0


def _load_tess(args, cfg) -> retina.RetinaTessellation:
    if args.tessellation:
        return retina.load_tessellation(args.tessellation)
    return retina.generate_tessellation(cfg.node_count, cfg.fovea_radius)


def _fixation_for(args, cfg, dims) -> tuple[float, float]:
    if getattr(args, "fixation", None):
        return (float(args.fixation[0]), float(args.fixation[1]))
    return ((dims[0] - 1) / 2.0, (dims[1] - 1) / 2.0)


def _cmd_fields(args) -> int:
    cfg = _config_from_args(args, retina_radius_px=args.radius_px)
    tess = _load_tess(args, cfg)
    dims = (args.rows, args.cols)
    fixation = _fixation_for(args, cfg, dims)
    fields = retina.compute_receptive_fields(
        tess, cfg.retina_radius_px, dims, fixation, cfg.sigma_factor
    )
    empty = sum(f.empty for f in fields)
    out = _out_path(args, args.out)
    if out:
        with open(out, "w", encoding="ascii") as fh:
            fh.write(f"FIELDS v1 {len(fields)}\n")
            for f in fields:
                fh.write(
                    f"{f.node_index} {f.center_px[0]:.6f} {f.center_px[1]:.6f} "
                    f"{f.sigma_px:.6f} {f.weights.size}\n"
                )
    print(f"{len(fields)} fields, {empty} empty, image {dims[0]}x{dims[1]}")
    return 0


def _cmd_sample(args) -> int:
    cfg = _config_from_args(args, retina_radius_px=args.radius_px)
    tess = _load_tess(args, cfg)
    image = imageio.load_image(args.image)
    fixation = _fixation_for(args, cfg, image.shape[:2])
    fields = retina.compute_receptive_fields(
        tess, cfg.retina_radius_px, image.shape[:2], fixation, cfg.sigma_factor
    )
    iv = retina.sample(image, fields, fixation, cfg.retina_radius_px)
    retina.save_imagevector(_out_path(args, args.out), iv)
    print(f"sampled {iv.node_count} nodes ({int(iv.valid.sum())} valid)")
    return 0


def _cmd_backproject(args) -> int:
    cfg = _config_from_args(args, retina_radius_px=args.radius_px)
    tess = _load_tess(args, cfg)
    iv = retina.load_imagevector(args.iv)
    dims = (args.rows, args.cols)
    fixation = _fixation_for(args, cfg, dims)
    fields = retina.compute_receptive_fields(
        tess, cfg.retina_radius_px, dims, fixation, cfg.sigma_factor
    )
    image, covered = retina.backproject(iv, fields, dims)
    imageio.save_image(_out_path(args, args.out), image)
    print(f"backprojected onto {dims[0]}x{dims[1]} ({int(covered.sum())} covered pixels)")
    return 0


def _cmd_cortical(args) -> int:
    cfg = _config_from_args(args)
    tess = _load_tess(args, cfg)
    iv = retina.load_imagevector(args.iv)
    cmap = cortex.cortical_coordinates(tess, cfg.alpha, cfg.cortical_dims)
    img = cortex.splat_cortical_image(iv, cmap, cfg.splat_sigma)
    imageio.save_image(_out_path(args, args.out), img.pixels)
    if args.weights_out:
        cortex.save_cortical_weights(_out_path(args, args.weights_out), img.weights)
    print(f"splatted {iv.node_count} nodes onto {img.dims[0]}x{img.dims[1]}")
    return 0


def _cmd_grid(args) -> int:
    cfg = _config_from_args(args)
    tess = _load_tess(args, cfg)
    iv = retina.load_imagevector(args.iv)
    cmap = cortex.cortical_coordinates(tess, cfg.alpha, cfg.cortical_dims)
    dims = (args.target_rows, args.target_cols)
    img = cortex.grid_cortical_image(iv, cmap, cfg.splat_sigma, dims)
    imageio.save_image(_out_path(args, args.out), img.pixels)
    if args.weights_out:
        cortex.save_cortical_weights(_out_path(args, args.weights_out), img.weights)
    print(f"gridded {iv.node_count} nodes onto {img.dims[0]}x{img.dims[1]}")
    return 0


def _cmd_subsample(args) -> int:
    _config_from_args(args)
    pixels = imageio.load_image(args.image)
    if args.weights:
        weights = cortex.load_cortical_weights(args.weights, pixels.shape[:2])
    else:
        weights = np.ones(pixels.shape[:2], dtype=np.float64)
    img = cortex.subsample_cortical(cortex.CorticalImage(pixels, weights), args.factor)
    imageio.save_image(_out_path(args, args.out), img.pixels)
    if args.weights_out:
        cortex.save_cortical_weights(_out_path(args, args.weights_out), img.weights)
    print(f"subsampled to {img.dims[0]}x{img.dims[1]}")
    return 0


def _cmd_cluster(args) -> int:
    cfg = _config_from_args(args, k_fraction=args.k_fraction)
    records = gaze.parse_fixation_log(args.log)
    homographies = gaze.load_homographies(args.homographies) if args.homographies else {}
    points = gaze.composite_fixations(
        records, homographies, strict=cfg.strict_homographies
    )
    clusters = gaze.cluster_fixations(points, cfg.k_fraction, seed=cfg.seed)
    out = _out_path(args, args.out)
    if out:
        with open(out, "w", encoding="ascii") as fh:
            fh.write("cluster,size,centroid_row,centroid_col,hull_vertices\n")
            for i, cl in enumerate(clusters):
                fh.write(
                    f"{i},{cl.size},{cl.centroid_px[0]:.6f},{cl.centroid_px[1]:.6f},"
                    f"{cl.hull_px.shape[0]}\n"
                )
    print(f"{len(points)} fixations -> {len(clusters)} clusters")
    return 0


def _cmd_crop(args) -> int:
    cfg = _config_from_args(args, crop_size=args.size)
    image = imageio.load_image(args.image)
    half = cfg.crop_size // 2
    rect = gaze.CropRect(
        int(round(args.center[0])) - half, int(round(args.center[1])) - half, cfg.crop_size
    )
    crop = gaze.extract_crop(image, rect, pad=args.pad)
    imageio.save_image(_out_path(args, args.out), crop)
    print(f"extracted {cfg.crop_size}x{cfg.crop_size} crop at {rect.row_start},{rect.col_start}")
    return 0


def _cmd_split(args) -> int:
    cfg = _config_from_args(args)
    entries: list[tuple[str, str]] = []
    with open(args.entries, "r", encoding="utf-8") as fh:
        for line in fh.read().splitlines()[1:]:
            if line.strip():
                path, label = line.split(",")[:2]
                entries.append((path.strip(), label.strip()))
    manifest = gaze.split_dataset(entries, cfg.split_fractions, seed=cfg.seed)
    gaze.save_manifest(_out_path(args, args.out), manifest)
    counts = {s: len(manifest.paths(s)) for s in gaze.SPLIT_NAMES}
    print(
        f"split {len(manifest.entries)} entries: "
        + ", ".join(f"{k}={v}" for k, v in counts.items())
    )
    return 0


def _cmd_train(args) -> int:
    cfg = _config_from_args(
        args,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        epochs=args.epochs,
    )
    manifest = gaze.load_manifest(args.manifest)
    root = args.image_root or os.path.dirname(os.path.abspath(args.manifest))
    train_set = load_dataset_from_manifest(manifest, "train", root)
    net = dcnn.build_network(
        cfg.network_spec(), train_set[0].shape[1:], seed=cfg.seed
    )
    tcfg = dcnn.TrainConfig(cfg.batch_size, cfg.learning_rate, cfg.epochs, cfg.seed)
    log_rows = []
    for epoch in range(tcfg.epochs):
        metrics = dcnn.train_epoch(net, train_set, tcfg, epoch)
        for step, (loss, acc) in enumerate(
            zip(metrics.step_losses, metrics.step_accuracies)
        ):
            log_rows.append((epoch, step, loss, acc))
        print(
            f"epoch {epoch}: loss {metrics.loss:.4f} accuracy {metrics.accuracy:.4f}"
        )
    dcnn.save_checkpoint(_out_path(args, args.checkpoint), net)
    if args.log_out:
        dcnn.save_training_log(_out_path(args, args.log_out), log_rows)
    return 0


def _cmd_eval(args) -> int:
    _config_from_args(args)
    manifest = gaze.load_manifest(args.manifest)
    root = args.image_root or os.path.dirname(os.path.abspath(args.manifest))
    dataset = load_dataset_from_manifest(manifest, args.split, root)
    net = dcnn.load_checkpoint(args.checkpoint)
    metrics = dcnn.evaluate(net, dataset)
    print(f"accuracy {metrics.accuracy:.4f}")
    print(f"macro_f1 {metrics.macro_f1:.4f}")
    print("confusion (rows = true class):")
    for row in metrics.confusion:
        print(" ".join(f"{v:6d}" for v in row))
    return 0


def _cmd_pipeline(args) -> int:
    cfg = _config_from_args(args)
    out_dir = args.out_dir
    manifest, errors = run_pipeline(
        cfg, args.logs, args.image_dir, out_dir, args.homographies
    )
    for err in errors:
        print(f"error: {err}", file=sys.stderr)
    if manifest is not None:
        print(f"manifest: {len(manifest.entries)} entries across {len(manifest.classes)} classes")
    return 1 if errors or manifest is None else 0


def _cmd_bench(args) -> int:
    cfg = _config_from_args(args)
    for line in bench_reduction(cfg).lines():
        print(line)
    return 0


def _cmd_viz(args) -> int:
    cfg = _config_from_args(args)
    tess = _load_tess(args, cfg)
    out = _out_path(args, args.out)
    if args.what == "tessellation":
        viz_tessellation(tess, out, canvas=args.canvas)
    elif args.what == "backprojection":
        iv = retina.load_imagevector(args.iv)
        dims = (args.rows, args.cols)
        fixation = _fixation_for(args, cfg, dims)
        fields = retina.compute_receptive_fields(
            tess, cfg.retina_radius_px, dims, fixation, cfg.sigma_factor
        )
        image, _ = retina.backproject(iv, fields, dims)
        imageio.save_image(out, image)
    else:  # cortical
        iv = retina.load_imagevector(args.iv)
        cmap = cortex.cortical_coordinates(tess, cfg.alpha, cfg.cortical_dims)
        imageio.save_image(out, cortex.splat_cortical_image(iv, cmap, cfg.splat_sigma).pixels)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="foveate",
        description="Foveated vision toolkit: retinal sampling, cortical "
        "rendering, gaze datasets, and a compact classifier.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("tessellate", help="generate a retina tessellation file")
    p.add_argument("--nodes", type=int, default=None)
    p.add_argument("--fovea-radius", type=float, default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_tessellate)

    p = subs.add_parser("fields", help="summarize receptive fields on an image grid")
    p.add_argument("--tessellation", default=None)
    p.add_argument("--radius-px", type=float, default=None)
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--fixation", type=float, nargs=2, default=None)
    p.add_argument("--out", default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_fields)

    p = subs.add_parser("sample", help="sample an image into an image vector")
    p.add_argument("--image", required=True)
    p.add_argument("--tessellation", default=None)
    p.add_argument("--radius-px", type=float, default=None)
    p.add_argument("--fixation", type=float, nargs=2, default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_sample)

    p = subs.add_parser("backproject", help="reconstruct pixels from an image vector")
    p.add_argument("--iv", required=True)
    p.add_argument("--tessellation", default=None)
    p.add_argument("--radius-px", type=float, default=None)
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--fixation", type=float, nargs=2, default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_backproject)

    p = subs.add_parser("cortical", help="splat an image vector to a cortical PNG")
    p.add_argument("--iv", required=True)
    p.add_argument("--tessellation", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--weights-out", default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_cortical)

    p = subs.add_parser("grid", help="render a cortical PNG by scattered-data gridding")
    p.add_argument("--iv", required=True)
    p.add_argument("--tessellation", default=None)
    p.add_argument("--target-rows", type=int, required=True)
    p.add_argument("--target-cols", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weights-out", default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_grid)

    p = subs.add_parser("subsample", help="average-pool a cortical image")
    p.add_argument("--image", required=True)
    p.add_argument("--weights", default=None)
    p.add_argument("--factor", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weights-out", default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_subsample)

    p = subs.add_parser("cluster", help="cluster fixations from a log")
    p.add_argument("--log", required=True)
    p.add_argument("--homographies", default=None)
    p.add_argument("--k-fraction", type=float, default=None)
    p.add_argument("--out", default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_cluster)

    p = subs.add_parser("crop", help="extract a square crop")
    p.add_argument("--image", required=True)
    p.add_argument("--center", type=float, nargs=2, required=True)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--pad", action="store_true")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_crop)

    p = subs.add_parser("split", help="stratified train/val/test split")
    p.add_argument("--entries", required=True, help="CSV of path,class_label")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_split)

    p = subs.add_parser("train", help="train the classifier on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--image-root", default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--log-out", default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = subs.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--image-root", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=gaze.SPLIT_NAMES)
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    p = subs.add_parser("pipeline", help="fixation logs to a split cortical dataset")
    p.add_argument("--logs", nargs="+", required=True)
    p.add_argument("--image-dir", required=True)
    p.add_argument("--homographies", default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_pipeline)

    p = subs.add_parser("bench", help="report input-size reduction ratios")
    _add_common(p)
    p.set_defaults(func=_cmd_bench)

    p = subs.add_parser("viz", help="render diagnostic PNGs")
    p.add_argument("what", choices=("tessellation", "backprojection", "cortical"))
    p.add_argument("--tessellation", default=None)
    p.add_argument("--iv", default=None)
    p.add_argument("--rows", type=int, default=None)
    p.add_argument("--cols", type=int, default=None)
    p.add_argument("--fixation", type=float, nargs=2, default=None)
    p.add_argument("--canvas", type=int, default=800)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_viz)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg_probe = args.config
        if cfg_probe is not None and not os.path.exists(cfg_probe):
            print(f"config file not found: {cfg_probe}", file=sys.stderr)
            return 2
        return args.func(args)
    except FoveateError as exc:
        # parse, validation, degeneracy, and stage failures
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # bad argument or config values caught before a stage runs
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
