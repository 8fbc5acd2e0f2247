"""Space-variant retina: tessellation, receptive fields, sampling, backprojection.

Geometry conventions used throughout the package:

* Pixel coordinates are (row, col); pixel centers sit at integer coordinates.
* Retina node coordinates (x, y) are normalized to a unit-radius field of
  view centered on the fixation. x maps to the column axis and y to the row
  axis, so a node lands at pixel
  ``(fixation_row + retina_radius_px * y, fixation_col + retina_radius_px * x)``.
* All sampling math is pure: the same inputs always produce bit-identical
  outputs, regardless of how callers parallelize over images.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ParseError

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))

DEFAULT_FOVEA_RADIUS = 0.1
DEFAULT_RETINA_RADIUS_PX = 463.0
DEFAULT_SIGMA_FACTOR = 0.75
SUPPORT_TRUNCATION_SIGMAS = 3.0

TESSELLATION_MAGIC = "RETINA v1"
_IMAGEVECTOR_MAGIC = b"RIV1"


@dataclass(frozen=True)
class RetinaTessellation:
    """A set of retina nodes in the normalized unit-radius field of view.

    Nodes are ordered by non-decreasing eccentricity. ``nearest_neighbor_dist``
    holds, for each node, the distance to its closest sibling; it drives the
    receptive-field size so that field overlap stays roughly constant across
    the retina.
    """

    nodes: np.ndarray  # (N, 2) float64, columns (x, y)
    fovea_radius: float
    nearest_neighbor_dist: np.ndarray  # (N,) float64

    @property
    def node_count(self) -> int:
        return int(self.nodes.shape[0])

    def eccentricities(self) -> np.ndarray:
        return np.hypot(self.nodes[:, 0], self.nodes[:, 1])


def nearest_neighbor_distances(nodes: np.ndarray) -> np.ndarray:
    """Distance from each node to its closest other node (KD-tree query)."""
    nodes = np.asarray(nodes, dtype=np.float64)
    if nodes.shape[0] < 2:
        raise ValueError("need at least 2 nodes to measure spacing")
    tree = cKDTree(nodes)
    dist, _ = tree.query(nodes, k=2)
    return dist[:, 1].astype(np.float64)


def tessellation_from_nodes(
    nodes: np.ndarray, fovea_radius: float = DEFAULT_FOVEA_RADIUS
) -> RetinaTessellation:
    """Wrap an explicit node layout, computing nearest-neighbor spacing.

    Intended for tests and for layouts loaded from disk; single-node layouts
    fall back to ``fovea_radius`` as the nominal spacing.
    """
    nodes = np.atleast_2d(np.asarray(nodes, dtype=np.float64))
    if nodes.ndim != 2 or nodes.shape[1] != 2:
        raise ValueError(f"nodes must be (N, 2), got {nodes.shape}")
    if nodes.shape[0] == 1:
        nn = np.array([fovea_radius], dtype=np.float64)
    else:
        nn = nearest_neighbor_distances(nodes)
    return RetinaTessellation(nodes, float(fovea_radius), nn)


def generate_tessellation(
    node_count: int, fovea_radius: float = DEFAULT_FOVEA_RADIUS
) -> RetinaTessellation:
    """Generate the deterministic golden-angle retina tessellation.

    The first ``round(node_count * fovea_radius)`` nodes tile the foveal disc
    with uniform density (square-root radial profile); the remaining nodes
    continue outward with exponentially growing radii, so node spacing grows
    linearly with eccentricity and the outermost node sits on the unit circle.
    Consecutive nodes advance by the golden angle, which keeps the layout
    locally isotropic at every scale.
    """
    if not isinstance(node_count, (int, np.integer)) or node_count < 1:
        raise ValueError(f"node_count must be a positive integer, got {node_count!r}")
    if not (0.0 < fovea_radius < 1.0):
        raise ValueError(f"fovea_radius must lie in (0, 1), got {fovea_radius!r}")

    n = int(node_count)
    if n == 1:
        nodes = np.zeros((1, 2), dtype=np.float64)
        return RetinaTessellation(nodes, float(fovea_radius), np.array([fovea_radius]))

    n_fovea = min(n, int(round(n * fovea_radius)))
    idx = np.arange(n, dtype=np.float64)
    radii = np.empty(n, dtype=np.float64)
    if n_fovea > 0:
        radii[:n_fovea] = fovea_radius * np.sqrt(idx[:n_fovea] / n_fovea)
    if n > n_fovea:
        span = n - 1 - n_fovea
        gamma = np.log(1.0 / fovea_radius) / span if span > 0 else 0.0
        radii[n_fovea:] = fovea_radius * np.exp(gamma * (idx[n_fovea:] - n_fovea))
    np.minimum(radii, 1.0, out=radii)

    theta = idx * GOLDEN_ANGLE
    nodes = np.column_stack([radii * np.cos(theta), radii * np.sin(theta)])
    # cos/sin roundoff can push x^2 + y^2 a hair past 1; rescale the offenders
    norm = np.hypot(nodes[:, 0], nodes[:, 1])
    over = norm > 1.0
    if over.any():
        nodes[over] /= norm[over, None]

    return RetinaTessellation(nodes, float(fovea_radius), nearest_neighbor_distances(nodes))


@dataclass
class ReceptiveField:
    """Gaussian receptive field of one node, resolved to image pixels.

    ``rows``/``cols``/``weights`` list the pixels of the truncated, clipped
    support; weights are renormalized to sum to 1 after clipping. A field
    whose entire support falls outside the image has empty arrays.
    """

    node_index: int
    center_px: tuple[float, float]  # (row, col)
    sigma_px: float
    rows: np.ndarray = field(repr=False)  # int32 absolute pixel rows
    cols: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)  # float64, sums to 1 unless empty
    image_dims: tuple[int, int] | None = None

    @property
    def empty(self) -> bool:
        return self.weights.size == 0


def compute_receptive_fields(
    tess: RetinaTessellation,
    retina_radius_px: float,
    image_dims: tuple[int, int],
    fixation_px: tuple[float, float],
    sigma_factor: float = DEFAULT_SIGMA_FACTOR,
) -> list[ReceptiveField]:
    """Place one Gaussian receptive field per node onto a pixel grid.

    Field centers are ``fixation + retina_radius_px * node``; each sigma is
    ``sigma_factor`` times the node's nearest-neighbor distance (scaled to
    pixels). Supports are truncated at 3 sigma, clipped to the image, and
    renormalized. For extremely dense layouts where the truncated disc
    contains no pixel center, the field degenerates to the single nearest
    pixel rather than vanishing.
    """
    rows_n, cols_n = int(image_dims[0]), int(image_dims[1])
    if rows_n < 1 or cols_n < 1:
        raise ValueError(f"image_dims must be positive, got {image_dims!r}")
    if retina_radius_px <= 0:
        raise ValueError(f"retina_radius_px must be > 0, got {retina_radius_px!r}")
    if sigma_factor <= 0:
        raise ValueError(f"sigma_factor must be > 0, got {sigma_factor!r}")
    dims = (rows_n, cols_n)
    fix_r, fix_c = float(fixation_px[0]), float(fixation_px[1])
    if not (0.0 <= fix_r <= rows_n - 1 and 0.0 <= fix_c <= cols_n - 1):
        raise ValueError(
            f"fixation {fixation_px!r} outside image bounds {image_dims!r}"
        )

    centers_r = fix_r + retina_radius_px * tess.nodes[:, 1]
    centers_c = fix_c + retina_radius_px * tess.nodes[:, 0]
    sigmas = sigma_factor * tess.nearest_neighbor_dist * retina_radius_px

    empty_i = np.empty(0, dtype=np.int32)
    empty_w = np.empty(0, dtype=np.float64)
    fields: list[ReceptiveField] = []
    for i in range(tess.node_count):
        rc, cc, sigma = centers_r[i], centers_c[i], sigmas[i]
        radius = SUPPORT_TRUNCATION_SIGMAS * sigma
        r_lo = max(int(np.ceil(rc - radius)), 0)
        r_hi = min(int(np.floor(rc + radius)), rows_n - 1)
        c_lo = max(int(np.ceil(cc - radius)), 0)
        c_hi = min(int(np.floor(cc + radius)), cols_n - 1)

        rr_idx = cc_idx = empty_i
        ww = empty_w
        if r_lo <= r_hi and c_lo <= c_hi:
            rr = np.arange(r_lo, r_hi + 1, dtype=np.float64)
            cc_ax = np.arange(c_lo, c_hi + 1, dtype=np.float64)
            d2 = (rr - rc)[:, None] ** 2 + (cc_ax - cc)[None, :] ** 2
            mask = d2 <= radius * radius
            if mask.any():
                mr, mc = np.nonzero(mask)
                rr_idx = (mr + r_lo).astype(np.int32)
                cc_idx = (mc + c_lo).astype(np.int32)
                ww = np.exp(-d2[mask] / (2.0 * sigma * sigma))

        if ww.size == 0 and 0.0 <= rc <= rows_n - 1 and 0.0 <= cc <= cols_n - 1:
            # sub-pixel support: keep the nearest pixel so in-image nodes
            # never silently vanish
            rr_idx = np.array([int(round(rc))], dtype=np.int32)
            cc_idx = np.array([int(round(cc))], dtype=np.int32)
            ww = np.array([1.0], dtype=np.float64)

        if ww.size:
            ww = ww / ww.sum()
        fields.append(
            ReceptiveField(i, (rc, cc), float(sigma), rr_idx, cc_idx, ww, dims)
        )
    return fields


@dataclass
class ImageVector:
    """Per-node sampled values: the retina's compact view of one image.

    ``values`` is (node_count, channels) in [0, 1]; ``valid`` flags nodes
    whose receptive field overlapped the image. ``fixation_px`` and
    ``retina_radius_px`` record the sampling geometry when known (they are
    not part of the on-disk format).
    """

    values: np.ndarray  # (N, C) float64
    valid: np.ndarray  # (N,) bool
    fixation_px: tuple[float, float] | None = None
    retina_radius_px: float = DEFAULT_RETINA_RADIUS_PX

    @property
    def node_count(self) -> int:
        return int(self.values.shape[0])

    @property
    def channels(self) -> int:
        return int(self.values.shape[1])


def _as_hwc(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"image must be HxW or HxWxC, got shape {arr.shape}")
    return arr


def _pack_fields(fields: list[ReceptiveField]):
    lens = np.array([f.weights.size for f in fields], dtype=np.int64)
    if lens.sum() == 0:
        return lens, np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
    rows = np.concatenate([f.rows for f in fields if f.weights.size])
    cols = np.concatenate([f.cols for f in fields if f.weights.size])
    weights = np.concatenate([f.weights for f in fields if f.weights.size])
    return lens, rows.astype(np.int64), cols.astype(np.int64), weights


def sample(
    image: np.ndarray,
    fields: list[ReceptiveField],
    fixation_px: tuple[float, float] | None = None,
    retina_radius_px: float = DEFAULT_RETINA_RADIUS_PX,
) -> ImageVector:
    """Reduce an image to one weighted average per receptive field.

    Each valid node's value is the Gaussian-weighted mean of its support
    pixels; empty fields yield zeros flagged invalid. Fields must have been
    built for this image's dimensions.
    """
    arr = _as_hwc(image)
    h, w, ch = arr.shape
    built_for = next((f.image_dims for f in fields if f.image_dims is not None), None)
    if built_for is not None and tuple(built_for) != (h, w):
        raise ValueError(
            f"fields were built for dimensions {tuple(built_for)}, "
            f"image is {(h, w)}"
        )
    lens, rows, cols, weights = _pack_fields(fields)
    if rows.size and (rows.max() >= h or cols.max() >= w):
        raise ValueError(
            "receptive fields reference pixels outside this image; "
            "they were built for different dimensions"
        )

    n = len(fields)
    values = np.zeros((n, ch), dtype=np.float64)
    if rows.size:
        seg = np.repeat(np.arange(n), lens)
        pix = arr[rows, cols, :]  # (K, C)
        weighted = pix * weights[:, None]
        for c in range(ch):
            values[:, c] = np.bincount(seg, weights=weighted[:, c], minlength=n)
    valid = lens > 0
    return ImageVector(values, valid, fixation_px, float(retina_radius_px))


def backproject(
    iv: ImageVector,
    fields: list[ReceptiveField],
    canvas_dims: tuple[int, int],
) -> tuple[np.ndarray, np.ndarray]:
    """Spread node values back onto a pixel canvas.

    Every pixel becomes the kernel-weighted average of the node values whose
    supports cover it. Returns ``(image, covered)`` where ``covered`` is True
    for pixels reached by at least one field; uncovered pixels are 0.
    """
    h, w = int(canvas_dims[0]), int(canvas_dims[1])
    if h < 1 or w < 1:
        raise ValueError(f"canvas_dims must be positive, got {canvas_dims!r}")
    if len(fields) != iv.node_count:
        raise ValueError(
            f"field count {len(fields)} does not match node count {iv.node_count}"
        )

    lens, rows, cols, weights = _pack_fields(fields)
    ch = iv.channels
    image = np.zeros((h, w, ch), dtype=np.float64)
    wsum = np.zeros(h * w, dtype=np.float64)
    if rows.size:
        seg = np.repeat(np.arange(len(fields)), lens)
        keep = iv.valid[seg] & (rows < h) & (cols < w)
        if keep.any():
            seg = seg[keep]
            lin = rows[keep] * w + cols[keep]
            wk = weights[keep]
            wsum = np.bincount(lin, weights=wk, minlength=h * w)
            flat = image.reshape(h * w, ch)
            for c in range(ch):
                flat[:, c] = np.bincount(
                    lin, weights=wk * iv.values[seg, c], minlength=h * w
                )
    covered = (wsum > 0).reshape(h, w)
    image[covered] /= wsum.reshape(h, w)[covered, None]
    return image, covered


def reduction_ratio(
    crop_dims: tuple[int, int, int], node_count: int, channels: int
) -> float:
    """Input-size reduction from a pixel crop to the node representation."""
    rows, cols, ch = (int(v) for v in crop_dims)
    if rows < 1 or cols < 1 or ch < 1:
        raise ValueError(f"crop_dims must be positive, got {crop_dims!r}")
    if node_count < 1 or channels < 1:
        raise ValueError("node_count and channels must be positive")
    return (rows * cols * ch) / float(node_count * channels)


def save_tessellation(path, tess: RetinaTessellation) -> None:
    """Write the text format: header line, then one ``x y`` pair per node."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{TESSELLATION_MAGIC} {tess.node_count} {tess.fovea_radius:.17g}\n")
        for x, y in tess.nodes:
            fh.write(f"{x:.17g} {y:.17g}\n")


def load_tessellation(path) -> RetinaTessellation:
    """Read the text format written by :func:`save_tessellation`."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty tessellation file", line_number=1)
    head = lines[0].split()
    if len(head) != 4 or " ".join(head[:2]) != TESSELLATION_MAGIC:
        raise ParseError(f"bad header {lines[0]!r}", line_number=1)
    try:
        count = int(head[2])
        fovea_radius = float(head[3])
    except ValueError as exc:
        raise ParseError(f"bad header fields: {exc}", line_number=1) from None
    nodes = np.empty((count, 2), dtype=np.float64)
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != count:
        raise ParseError(
            f"header promises {count} nodes, file has {len(body)}", line_number=1
        )
    for i, line in enumerate(body):
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"expected 'x y', got {line!r}", line_number=i + 2)
        try:
            nodes[i, 0] = float(parts[0])
            nodes[i, 1] = float(parts[1])
        except ValueError:
            raise ParseError(f"non-numeric node {line!r}", line_number=i + 2) from None
    return tessellation_from_nodes(nodes, fovea_radius)


def write_node_values(path, magic: bytes, values: np.ndarray, valid: np.ndarray) -> None:
    """Shared binary layout: magic, u32 count, u32 channels, u32 mask length,
    mask bytes (one per entry), then float32 little-endian values row-major."""
    values = np.asarray(values, dtype=np.float32)
    n, ch = values.shape
    mask = np.asarray(valid, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<III", n, ch, mask.size))
        fh.write(mask.tobytes())
        fh.write(values.astype("<f4").tobytes(order="C"))


def read_node_values(path, magic: bytes):
    """Inverse of :func:`write_node_values`; returns (values, valid)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(magic) + 12 or raw[: len(magic)] != magic:
        raise ParseError(f"not a {magic.decode('ascii', 'replace')} file")
    n, ch, mask_len = struct.unpack_from("<III", raw, len(magic))
    off = len(magic) + 12
    if len(raw) != off + mask_len + 4 * n * ch:
        raise ParseError("truncated node-value file")
    mask = np.frombuffer(raw, dtype=np.uint8, count=mask_len, offset=off)
    values = np.frombuffer(raw, dtype="<f4", count=n * ch, offset=off + mask_len)
    return values.reshape(n, ch).astype(np.float64), mask.astype(bool)


def save_imagevector(path, iv: ImageVector) -> None:
    write_node_values(path, _IMAGEVECTOR_MAGIC, iv.values, iv.valid)


def load_imagevector(path) -> ImageVector:
    """Read an image vector; sampling geometry is not stored on disk."""
    values, valid = read_node_values(path, _IMAGEVECTOR_MAGIC)
    if valid.size != values.shape[0]:
        raise ParseError("validity mask length does not match node count")
    return ImageVector(values, valid)
