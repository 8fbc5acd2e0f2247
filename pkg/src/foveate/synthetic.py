"""Procedurally generated images and gaze logs.

Used by end-to-end tests and demos that need a controllable, license-free
stand-in for recorded footage: nine texture/shape classes with mild pose
jitter, plus gaze scenes with multiple observations related by known
homographies.
"""

from __future__ import annotations

import os

import numpy as np

from . import imageio
from .gaze import Homography, save_homographies

CLASS_NAMES = (
    "disc",
    "ring",
    "square",
    "triangle",
    "cross",
    "hbars",
    "vbars",
    "checker",
    "blobs",
)

# (background RGB, foreground RGB) per class; hues chosen to stay distinct
# after Gaussian pooling
_PALETTES = (
    ((0.15, 0.10, 0.30), (0.95, 0.80, 0.20)),
    ((0.05, 0.25, 0.20), (0.90, 0.30, 0.30)),
    ((0.25, 0.15, 0.10), (0.30, 0.80, 0.90)),
    ((0.10, 0.10, 0.10), (0.40, 0.95, 0.40)),
    ((0.30, 0.25, 0.05), (0.85, 0.40, 0.90)),
    ((0.05, 0.15, 0.35), (0.95, 0.95, 0.85)),
    ((0.20, 0.05, 0.15), (0.25, 0.95, 0.75)),
    ((0.12, 0.20, 0.12), (0.95, 0.55, 0.15)),
    ((0.28, 0.08, 0.08), (0.55, 0.65, 0.98)),
)


def _shape_mask(kind: str, xr: np.ndarray, yr: np.ndarray, scale: float) -> np.ndarray:
    r = np.hypot(xr, yr)
    if kind == "disc":
        return r <= 0.55 * scale
    if kind == "ring":
        return (r <= 0.62 * scale) & (r >= 0.38 * scale)
    if kind == "square":
        return (np.abs(xr) <= 0.48 * scale) & (np.abs(yr) <= 0.48 * scale)
    if kind == "triangle":
        return (yr >= -0.45 * scale) & (yr + 2.2 * np.abs(xr) <= 0.55 * scale)
    if kind == "cross":
        arm = 0.16 * scale
        length = 0.6 * scale
        return ((np.abs(xr) <= arm) & (np.abs(yr) <= length)) | (
            (np.abs(yr) <= arm) & (np.abs(xr) <= length)
        )
    if kind == "hbars":
        return (np.mod(yr * 4.0 / scale, 1.0) < 0.5) & (r <= 0.65 * scale)
    if kind == "vbars":
        return (np.mod(xr * 4.0 / scale, 1.0) < 0.5) & (r <= 0.65 * scale)
    if kind == "checker":
        cells = (np.floor(xr * 3.2 / scale) + np.floor(yr * 3.2 / scale)) % 2 == 0
        return cells & (np.abs(xr) <= 0.55 * scale) & (np.abs(yr) <= 0.55 * scale)
    if kind == "blobs":
        centers = ((-0.3, -0.3), (0.35, -0.1), (-0.05, 0.38))
        out = np.zeros_like(xr, dtype=bool)
        for cx, cy in centers:
            out |= np.hypot(xr - cx * scale, yr - cy * scale) <= 0.2 * scale
        return out
    raise ValueError(f"unknown shape kind {kind!r}")


def shape_texture_image(
    class_index: int,
    size: int = 128,
    rng: np.random.Generator | None = None,
    center: tuple[float, float] | None = None,
) -> np.ndarray:
    """One textured shape instance: size x size x 3 floats in [0, 1].

    Pose jitter (rotation up to +/-15 degrees, scale 0.85-1.15) and additive
    noise vary between draws from ``rng``; class identity stays in the shape,
    palette, and carrier frequency.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    kind = CLASS_NAMES[class_index % len(CLASS_NAMES)]
    bg, fg = _PALETTES[class_index % len(_PALETTES)]

    if center is None:
        center = ((size - 1) / 2.0, (size - 1) / 2.0)
    rows = (np.arange(size) - center[0]) / (size / 2.0)
    cols = (np.arange(size) - center[1]) / (size / 2.0)
    yy, xx = np.meshgrid(rows, cols, indexing="ij")

    angle = rng.uniform(-np.pi / 12.0, np.pi / 12.0)
    scale = rng.uniform(0.85, 1.15)
    ca, sa = np.cos(angle), np.sin(angle)
    xr = ca * xx + sa * yy
    yr = -sa * xx + ca * yy

    mask = _shape_mask(kind, xr, yr, scale)
    freq = 3.0 + (class_index % 3) * 2.0
    carrier = 0.12 * np.sin(freq * np.pi * xr) * np.cos(freq * np.pi * yr)

    img = np.empty((size, size, 3), dtype=np.float64)
    for c in range(3):
        img[:, :, c] = np.where(mask, fg[c], bg[c])
    img += carrier[:, :, None]
    img += rng.normal(0.0, 0.03, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def gaze_scene_image(
    class_index: int,
    dims: tuple[int, int],
    spots: tuple[tuple[float, float], ...],
    rng: np.random.Generator,
) -> np.ndarray:
    """A larger scene with the class shape rendered at each attended spot."""
    h, w = dims
    bg, _ = _PALETTES[class_index % len(_PALETTES)]
    img = np.empty((h, w, 3), dtype=np.float64)
    base = rng.normal(0.0, 0.02, size=(h, w))
    for c in range(3):
        img[:, :, c] = bg[c] * 0.6 + base
    for spot in spots:
        patch = shape_texture_image(class_index, size=min(h, w) // 3, rng=rng)
        ph = patch.shape[0]
        r0 = int(round(spot[0])) - ph // 2
        c0 = int(round(spot[1])) - ph // 2
        r0 = min(max(r0, 0), h - ph)
        c0 = min(max(c0, 0), w - ph)
        img[r0 : r0 + ph, c0 : c0 + ph] = patch
    return np.clip(img, 0.0, 1.0)


def make_gaze_scene(
    out_dir,
    num_classes: int = 9,
    image_dims: tuple[int, int] = (400, 400),
    fixations_per_observation: int = 100,
    spots_per_class: int = 2,
    seed: int = 0,
):
    """Write a complete synthetic gaze capture under ``out_dir``.

    Produces one scene image per class, a fixation log with two observations
    per class (the second viewed through a known translation homography), and
    the homography file mapping it back. Returns the created paths.
    """
    rng = np.random.default_rng(seed)
    out_dir = os.fspath(out_dir)
    image_dir = os.path.join(out_dir, "images")
    os.makedirs(image_dir, exist_ok=True)

    h, w = image_dims
    shift = (12.0, 7.0)
    log_lines = [
        "observation_id,frame_index,timestamp_ms,gaze_row,gaze_col,class_label,image_path"
    ]
    homographies: dict[str, Homography] = {}
    spot_map: dict[str, list[tuple[float, float]]] = {}

    for ci in range(num_classes):
        label = CLASS_NAMES[ci % len(CLASS_NAMES)]
        margin = min(h, w) // 4
        spots = tuple(
            (
                float(rng.uniform(margin, h - margin)),
                float(rng.uniform(margin, w - margin)),
            )
            for _ in range(spots_per_class)
        )
        spot_map[label] = list(spots)
        image_name = f"{label}.png"
        imageio.save_image(
            os.path.join(image_dir, image_name),
            gaze_scene_image(ci, image_dims, spots, rng),
        )

        obs_a, obs_b = f"{label}_a", f"{label}_b"
        # observation B is the same scene seen shifted; its raw gaze points
        # need the inverse shift, and the homography restores them
        homographies[obs_b] = Homography.translation(shift[0], shift[1])
        ts = 0
        for obs, offset in ((obs_a, (0.0, 0.0)), (obs_b, (-shift[0], -shift[1]))):
            for fi in range(fixations_per_observation):
                spot = spots[fi % len(spots)]
                gr = spot[0] + rng.normal(0.0, 4.0) + offset[0]
                gc = spot[1] + rng.normal(0.0, 4.0) + offset[1]
                gr = float(np.clip(gr, 0, h - 1))
                gc = float(np.clip(gc, 0, w - 1))
                ts += 33
                log_lines.append(
                    f"{obs},{fi},{ts},{gr:.3f},{gc:.3f},{label},{image_name}"
                )

    log_path = os.path.join(out_dir, "fixations.csv")
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(log_lines) + "\n")
    hom_path = os.path.join(out_dir, "homographies.txt")
    save_homographies(hom_path, homographies)
    return {
        "image_dir": image_dir,
        "log_path": log_path,
        "homography_path": hom_path,
        "spots": spot_map,
    }
