"""Retino-cortical mapping and cortical image rendering.

Node positions (x, y) are converted to complex-log coordinates
``u = ln((r + alpha) / alpha)`` and an angular coordinate ``v``, split into
left/right hemifields at the vertical meridian. Each hemifield is fitted
affinely into one half of a rectangular grid (side by side along the column
axis), which turns eccentricity into a horizontal axis and polar angle into
a vertical one: rotations of the input about the fixation become vertical
translations of the rendered image, and scalings become horizontal ones.

Two independent renderers produce cortical images from an ImageVector:

* :func:`splat_cortical_image` walks nodes and scatters truncated Gaussian
  stamps (node-centric).
* :func:`grid_cortical_image` bins nodes into cells and gathers normalized
  contributions per cell (cell-centric scattered-data gridding).

Both compute the same normalized-convolution estimate and are kept separate
deliberately so each can check the other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParseError
from .retina import ImageVector, RetinaTessellation, read_node_values, write_node_values

DEFAULT_ALPHA = 0.05
DEFAULT_GRID_DIMS = (399, 752)
DEFAULT_SPLAT_SIGMA = 1.0
KERNEL_TRUNCATION_SIGMAS = 3.0
_GRID_MARGIN = 1.0
_WEIGHTS_MAGIC = b"CWT1"


@dataclass(frozen=True)
class HemifieldTransform:
    """Affine map from (u, v) to grid (row, col) for one hemifield.

    ``col = u_scale * u + u_offset`` and ``row = v_scale * v + v_offset``.
    The left hemifield uses negative scales, mirroring its lobe so the two
    foveal regions meet at the center seam and an input rotation shifts both
    lobes the same way.
    """

    u_scale: float
    u_offset: float
    v_scale: float
    v_offset: float

    def apply(self, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.v_scale * v + self.v_offset, self.u_scale * u + self.u_offset


def _fit_hemifield(
    u: np.ndarray, v: np.ndarray, grid_dims: tuple[int, int], side: str
) -> HemifieldTransform:
    rows, cols = grid_dims
    half = cols // 2
    row_lo, row_hi = _GRID_MARGIN, rows - 1 - _GRID_MARGIN
    if side == "right":
        col_near, col_far = half + _GRID_MARGIN, cols - 1 - _GRID_MARGIN
    else:
        col_near, col_far = half - 1 - _GRID_MARGIN, _GRID_MARGIN

    if u.size == 0:
        return HemifieldTransform(0.0, (col_near + col_far) / 2.0, 0.0, (row_lo + row_hi) / 2.0)

    u_min, u_max = float(u.min()), float(u.max())
    v_min, v_max = float(v.min()), float(v.max())
    du, dv = u_max - u_min, v_max - v_min

    if du > 0:
        u_scale = (col_far - col_near) / du
        u_offset = col_near - u_scale * u_min
    else:
        u_scale, u_offset = 0.0, (col_near + col_far) / 2.0
    if side == "right":
        if dv > 0:
            v_scale = (row_hi - row_lo) / dv
            v_offset = row_lo - v_scale * v_min
        else:
            v_scale, v_offset = 0.0, (row_lo + row_hi) / 2.0
    else:
        if dv > 0:
            v_scale = -(row_hi - row_lo) / dv
            v_offset = row_hi - v_scale * v_min
        else:
            v_scale, v_offset = 0.0, (row_lo + row_hi) / 2.0
    return HemifieldTransform(u_scale, u_offset, v_scale, v_offset)


@dataclass
class CorticalMap:
    """Per-node complex-log coordinates plus the fitted grid layout."""

    node_u: np.ndarray  # (N,) log-eccentricity
    node_v: np.ndarray  # (N,) angular coordinate in (-pi/2, pi/2]
    right: np.ndarray  # (N,) bool, True for the right hemifield
    alpha: float
    grid_dims: tuple[int, int]
    grid_transform: dict[str, HemifieldTransform]

    @property
    def node_count(self) -> int:
        return int(self.node_u.shape[0])

    def hemifield_transforms(
        self, grid_dims: tuple[int, int] | None = None
    ) -> dict[str, HemifieldTransform]:
        """Transforms for ``grid_dims``, refitting when dims differ."""
        if grid_dims is None or tuple(grid_dims) == tuple(self.grid_dims):
            return self.grid_transform
        dims = _validate_grid_dims(grid_dims)
        return {
            "right": _fit_hemifield(
                self.node_u[self.right], self.node_v[self.right], dims, "right"
            ),
            "left": _fit_hemifield(
                self.node_u[~self.right], self.node_v[~self.right], dims, "left"
            ),
        }

    def grid_positions(
        self, grid_dims: tuple[int, int] | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Real-valued (row, col) grid position of every node."""
        tr = self.hemifield_transforms(grid_dims)
        rows = np.empty(self.node_count, dtype=np.float64)
        cols = np.empty(self.node_count, dtype=np.float64)
        r = self.right
        rows[r], cols[r] = tr["right"].apply(self.node_u[r], self.node_v[r])
        rows[~r], cols[~r] = tr["left"].apply(self.node_u[~r], self.node_v[~r])
        return rows, cols


def _validate_grid_dims(grid_dims) -> tuple[int, int]:
    rows, cols = int(grid_dims[0]), int(grid_dims[1])
    if rows < 3 or cols < 6:
        raise ValueError(
            f"grid_dims too small for a two-lobe layout with margins: {grid_dims!r}"
        )
    return rows, cols


def wrap_angle(a: np.ndarray) -> np.ndarray:
    """Wrap angles into (-pi, pi]."""
    wrapped = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(wrapped == -np.pi, np.pi, wrapped)


def cortical_coordinates(
    tess: RetinaTessellation,
    alpha: float = DEFAULT_ALPHA,
    grid_dims: tuple[int, int] = DEFAULT_GRID_DIMS,
) -> CorticalMap:
    """Complex-log coordinates and hemifield grid layout for a tessellation.

    ``u = ln((r + alpha) / alpha)`` grows monotonically with eccentricity and
    is exactly 0 at the origin. A node belongs to the right hemifield when
    ``|theta| <= pi/2``; its angular coordinate is ``v = theta`` there and
    ``v = wrap(pi - theta)`` on the left, so both hemifields span the same
    (-pi/2, pi/2] range. The affine grid fit maps each hemifield's (u, v)
    bounding box into its half of the grid with a 1-pixel margin.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha!r}")
    dims = _validate_grid_dims(grid_dims)

    x, y = tess.nodes[:, 0], tess.nodes[:, 1]
    r = np.hypot(x, y)
    theta = np.arctan2(y, x)
    theta = np.where(theta == -np.pi, np.pi, theta)
    right = np.abs(theta) <= np.pi / 2.0
    u = np.log1p(r / alpha)
    v = np.where(right, theta, wrap_angle(np.pi - theta))

    transforms = {
        "right": _fit_hemifield(u[right], v[right], dims, "right"),
        "left": _fit_hemifield(u[~right], v[~right], dims, "left"),
    }
    return CorticalMap(u, v, right, float(alpha), dims, transforms)


@dataclass
class CorticalImage:
    """Rendered cortical pixels plus accumulated kernel weight per cell.

    Cells never reached by any node keep weight 0 and pixel value 0.
    """

    pixels: np.ndarray  # (rows, cols, channels) float64
    weights: np.ndarray  # (rows, cols) float64

    @property
    def dims(self) -> tuple[int, int]:
        return (int(self.pixels.shape[0]), int(self.pixels.shape[1]))

    @property
    def channels(self) -> int:
        return int(self.pixels.shape[2])


def _check_nodes(iv: ImageVector, cmap: CorticalMap) -> None:
    if iv.node_count != cmap.node_count:
        raise ValueError(
            f"image vector has {iv.node_count} nodes, map has {cmap.node_count}"
        )


def splat_cortical_image(
    iv: ImageVector,
    cmap: CorticalMap,
    sigma_grid: float = DEFAULT_SPLAT_SIGMA,
    grid_dims: tuple[int, int] | None = None,
) -> CorticalImage:
    """Render by scattering one truncated Gaussian stamp per valid node.

    Each node adds ``kernel * value`` to nearby cells and ``kernel`` to the
    weight plane; covered cells are normalized by their accumulated weight.
    Node order does not affect the result beyond float summation order.
    """
    _check_nodes(iv, cmap)
    if sigma_grid <= 0:
        raise ValueError(f"sigma_grid must be > 0, got {sigma_grid!r}")
    rows_n, cols_n = cmap.grid_dims if grid_dims is None else _validate_grid_dims(grid_dims)

    pos_r, pos_c = cmap.grid_positions((rows_n, cols_n))
    keep = np.asarray(iv.valid, dtype=bool)
    pos_r, pos_c = pos_r[keep], pos_c[keep]
    vals = np.asarray(iv.values, dtype=np.float64)[keep]
    ch = iv.channels

    pixels = np.zeros((rows_n * cols_n, ch), dtype=np.float64)
    wsum = np.zeros(rows_n * cols_n, dtype=np.float64)
    if pos_r.size:
        radius = KERNEL_TRUNCATION_SIGMAS * sigma_grid
        reach = int(np.ceil(radius))
        base_r = np.floor(pos_r).astype(np.int64)
        base_c = np.floor(pos_c).astype(np.int64)
        inv_two_sigma2 = 1.0 / (2.0 * sigma_grid * sigma_grid)
        for dr in range(-reach, reach + 1):
            cell_r = base_r + dr
            row_ok = (cell_r >= 0) & (cell_r < rows_n)
            for dc in range(-reach, reach + 1):
                cell_c = base_c + dc
                d2 = (cell_r - pos_r) ** 2 + (cell_c - pos_c) ** 2
                ok = row_ok & (cell_c >= 0) & (cell_c < cols_n) & (d2 <= radius * radius)
                if not ok.any():
                    continue
                lin = cell_r[ok] * cols_n + cell_c[ok]
                k = np.exp(-d2[ok] * inv_two_sigma2)
                wsum += np.bincount(lin, weights=k, minlength=rows_n * cols_n)
                kv = k[:, None] * vals[ok]
                for c in range(ch):
                    pixels[:, c] += np.bincount(
                        lin, weights=kv[:, c], minlength=rows_n * cols_n
                    )

    covered = wsum > 0
    pixels[covered] /= wsum[covered, None]
    pixels[~covered] = 0.0
    return CorticalImage(
        pixels.reshape(rows_n, cols_n, ch), wsum.reshape(rows_n, cols_n)
    )


def grid_cortical_image(
    iv: ImageVector,
    cmap: CorticalMap,
    sigma_grid: float = DEFAULT_SPLAT_SIGMA,
    target_dims: tuple[int, int] | None = None,
) -> CorticalImage:
    """Render by gridding: cells gather weighted values from nearby nodes.

    Nodes are first binned by their home cell (nearest grid cell in the
    target dimensions), so each output cell only examines the node bins
    within the kernel's truncation radius instead of the whole node set.
    With equal sigma and dimensions this computes the same estimate as
    :func:`splat_cortical_image`.
    """
    _check_nodes(iv, cmap)
    if sigma_grid <= 0:
        raise ValueError(f"sigma_grid must be > 0, got {sigma_grid!r}")
    rows_n, cols_n = (
        cmap.grid_dims if target_dims is None else _validate_grid_dims(target_dims)
    )

    pos_r, pos_c = cmap.grid_positions((rows_n, cols_n))
    keep = np.asarray(iv.valid, dtype=bool)
    pos_r, pos_c = pos_r[keep], pos_c[keep]
    vals = np.asarray(iv.values, dtype=np.float64)[keep]
    ch = iv.channels

    pixels = np.zeros((rows_n * cols_n, ch), dtype=np.float64)
    wsum = np.zeros(rows_n * cols_n, dtype=np.float64)
    if pos_r.size:
        radius = KERNEL_TRUNCATION_SIGMAS * sigma_grid
        # a node at true distance <= radius from a cell has its home bin
        # within radius + 0.5 of that cell
        reach = int(np.ceil(radius + 0.5))
        home_r = np.clip(np.rint(pos_r).astype(np.int64), 0, rows_n - 1)
        home_c = np.clip(np.rint(pos_c).astype(np.int64), 0, cols_n - 1)
        home = home_r * cols_n + home_c
        order = np.argsort(home, kind="stable")
        home_sorted = home[order]
        bins, starts = np.unique(home_sorted, return_index=True)
        counts = np.diff(np.append(starts, home_sorted.size))
        inv_two_sigma2 = 1.0 / (2.0 * sigma_grid * sigma_grid)

        for b, s, cnt in zip(bins, starts, counts):
            members = order[s : s + cnt]
            br, bc = divmod(int(b), cols_n)
            r0, r1 = max(br - reach, 0), min(br + reach, rows_n - 1)
            c0, c1 = max(bc - reach, 0), min(bc + reach, cols_n - 1)
            cell_r = np.arange(r0, r1 + 1, dtype=np.float64)
            cell_c = np.arange(c0, c1 + 1, dtype=np.float64)
            d2 = (
                (cell_r[:, None, None] - pos_r[members]) ** 2
                + (cell_c[None, :, None] - pos_c[members]) ** 2
            )
            k = np.where(d2 <= radius * radius, np.exp(-d2 * inv_two_sigma2), 0.0)
            block = np.arange(r0, r1 + 1)[:, None] * cols_n + np.arange(c0, c1 + 1)
            wsum[block.ravel()] += k.sum(axis=2).ravel()
            pixels[block.ravel()] += (k @ vals[members]).reshape(-1, ch)

    covered = wsum > 0
    pixels[covered] /= wsum[covered, None]
    pixels[~covered] = 0.0
    return CorticalImage(
        pixels.reshape(rows_n, cols_n, ch), wsum.reshape(rows_n, cols_n)
    )


def subsample_cortical(img: CorticalImage, factor: int) -> CorticalImage:
    """Average-pool covered cells in non-overlapping factor x factor windows.

    Output dimensions are ``floor(dims / factor)``; trailing rows/cols that do
    not fill a window are dropped. A window's value averages only its covered
    cells; its weight is the window's total accumulated weight. ``factor=1``
    returns an identical copy.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor!r}")
    factor = int(factor)
    rows_n, cols_n = img.dims
    out_r, out_c = rows_n // factor, cols_n // factor
    if out_r < 1 or out_c < 1:
        raise ValueError(
            f"factor {factor} leaves no complete window in a {img.dims} image"
        )
    if factor == 1:
        return CorticalImage(img.pixels.copy(), img.weights.copy())

    pix = img.pixels[: out_r * factor, : out_c * factor]
    wts = img.weights[: out_r * factor, : out_c * factor]
    ch = img.channels
    pix_w = pix.reshape(out_r, factor, out_c, factor, ch)
    wts_w = wts.reshape(out_r, factor, out_c, factor)
    covered = wts_w > 0
    count = covered.sum(axis=(1, 3))
    # uncovered cells hold exact zeros, so a plain window sum is the sum
    # over covered cells
    total = pix_w.sum(axis=(1, 3))
    out_pix = np.zeros((out_r, out_c, ch), dtype=np.float64)
    nz = count > 0
    out_pix[nz] = total[nz] / count[nz, None]
    return CorticalImage(out_pix, wts_w.sum(axis=(1, 3)))


def save_cortical_weights(path, weights: np.ndarray) -> None:
    """Write a weight plane: same layout as an image vector, one channel."""
    w = np.asarray(weights, dtype=np.float64)
    write_node_values(path, _WEIGHTS_MAGIC, w.reshape(-1, 1), (w > 0).ravel())


def load_cortical_weights(path, dims: tuple[int, int]) -> np.ndarray:
    """Read a weight plane saved by :func:`save_cortical_weights`."""
    values, _ = read_node_values(path, _WEIGHTS_MAGIC)
    rows_n, cols_n = int(dims[0]), int(dims[1])
    if values.shape[0] != rows_n * cols_n:
        raise ParseError(
            f"weight file holds {values.shape[0]} cells, dims {dims!r} need "
            f"{rows_n * cols_n}"
        )
    return values.reshape(rows_n, cols_n)
