"""Gaze-driven dataset construction.

Covers the path from raw fixation logs to labeled crops: parsing, projective
registration of observations into a shared reference frame, fixation
clustering, convex hulls of attended regions, retina placement, crop
extraction, and stratified train/validation/test splitting.

All pixel coordinates are (row, col); homographies act on homogeneous
``(row, col, 1)`` column vectors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateInputError,
    ParseError,
    PointAtInfinityError,
    ValidationError,
)

FIXATION_LOG_FIELDS = (
    "observation_id",
    "frame_index",
    "timestamp_ms",
    "gaze_row",
    "gaze_col",
    "class_label",
    "image_path",
)

DEFAULT_CROP_SIZE = 926
DEFAULT_K_FRACTION = 0.01
DEFAULT_SPLIT_FRACTIONS = (0.80, 0.18, 0.02)
SPLIT_NAMES = ("train", "val", "test")

# grocery-product labels of the reference gaze recordings
DEFAULT_CLASS_LABELS = (
    "Eggs",
    "Gnocchi",
    "Juice",
    "Ling",
    "Milk",
    "Rice",
    "Strep",
    "VitC",
    "Yogurt",
)


@dataclass(frozen=True)
class FixationRecord:
    observation_id: str
    frame_index: int
    timestamp_ms: int
    gaze_px: tuple[float, float]
    class_label: str
    image_path: str


def parse_fixation_log(path, classes=None) -> list[FixationRecord]:
    """Parse a fixation-log CSV into records, validating every row.

    The file must start with the exact header
    ``observation_id,frame_index,timestamp_ms,gaze_row,gaze_col,class_label,image_path``;
    paths may not contain commas (no quoting). Malformed rows raise
    :class:`ParseError` with their line number. When ``classes`` is given,
    labels outside it raise :class:`ValidationError`.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    expected_header = ",".join(FIXATION_LOG_FIELDS)
    if not lines or lines[0].strip() != expected_header:
        found = lines[0] if lines else ""
        raise ParseError(f"expected header {expected_header!r}, got {found!r}", 1)

    records: list[FixationRecord] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise ParseError(f"expected 7 fields, got {len(parts)}", lineno)
        obs_id, frame_s, ts_s, row_s, col_s, label, image_path = (
            p.strip() for p in parts
        )
        try:
            frame = int(frame_s)
            ts = int(ts_s)
            gaze_row = float(row_s)
            gaze_col = float(col_s)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if not (np.isfinite(gaze_row) and np.isfinite(gaze_col)):
            raise ParseError(f"non-finite gaze point ({row_s}, {col_s})", lineno)
        if not obs_id or not label or not image_path:
            raise ParseError("observation_id, class_label and image_path must be non-empty", lineno)
        if classes is not None and label not in classes:
            raise ValidationError(
                f"line {lineno}: unknown class label {label!r} (expected one of {sorted(classes)})"
            )
        records.append(
            FixationRecord(obs_id, frame, ts, (gaze_row, gaze_col), label, image_path)
        )
    return records


@dataclass(frozen=True)
class Homography:
    """3x3 projective transform on homogeneous (row, col, 1) vectors,
    normalized so ``h[2, 2] == 1``."""

    h: np.ndarray

    @staticmethod
    def identity() -> "Homography":
        return Homography(np.eye(3, dtype=np.float64))

    @staticmethod
    def translation(d_row: float, d_col: float) -> "Homography":
        h = np.eye(3, dtype=np.float64)
        h[0, 2] = d_row
        h[1, 2] = d_col
        return Homography(h)


@dataclass(frozen=True)
class RansacConfig:
    threshold_px: float = 3.0
    iterations: int = 1000
    seed: int = 0


def _hartley_normalization(points: np.ndarray) -> np.ndarray:
    """Similarity transform taking the points to zero centroid and mean
    distance sqrt(2). Identical point sets are degenerate."""
    centroid = points.mean(axis=0)
    mean_dist = np.mean(np.hypot(*(points - centroid).T))
    if mean_dist <= 0:
        raise DegenerateInputError("all correspondence points coincide")
    s = np.sqrt(2.0) / mean_dist
    t = np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )
    return t


def _dlt(src: np.ndarray, dst: np.ndarray) -> Homography:
    t_src = _hartley_normalization(src)
    t_dst = _hartley_normalization(dst)
    ones = np.ones((src.shape[0], 1))
    sn = (t_src @ np.hstack([src, ones]).T).T
    dn = (t_dst @ np.hstack([dst, ones]).T).T

    n = src.shape[0]
    a = np.zeros((2 * n, 9), dtype=np.float64)
    r, c = sn[:, 0], sn[:, 1]
    rp, cp = dn[:, 0], dn[:, 1]
    a[0::2, 0] = r
    a[0::2, 1] = c
    a[0::2, 2] = 1.0
    a[0::2, 6] = -rp * r
    a[0::2, 7] = -rp * c
    a[0::2, 8] = -rp
    a[1::2, 3] = r
    a[1::2, 4] = c
    a[1::2, 5] = 1.0
    a[1::2, 6] = -cp * r
    a[1::2, 7] = -cp * c
    a[1::2, 8] = -cp

    _, sv, vt = np.linalg.svd(a)
    if sv[-2] <= 1e-9 * sv[0]:
        raise DegenerateInputError(
            "correspondences do not determine a unique homography "
            "(collinear or repeated points)"
        )
    h_norm = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h_norm @ t_src
    if abs(h[2, 2]) <= 1e-12 * np.abs(h).max():
        raise DegenerateInputError("estimated homography has h[2][2] ~ 0")
    h = h / h[2, 2]
    if abs(np.linalg.det(h)) <= 1e-12:
        raise DegenerateInputError("estimated homography is singular")
    return Homography(h)


def _as_point_arrays(correspondences) -> tuple[np.ndarray, np.ndarray]:
    src = np.array([p[0] for p in correspondences], dtype=np.float64)
    dst = np.array([p[1] for p in correspondences], dtype=np.float64)
    if src.ndim != 2 or src.shape[1] != 2 or dst.shape != src.shape:
        raise ValueError("correspondences must be ((row, col), (row, col)) pairs")
    return src, dst


def _reprojection_errors(h: Homography, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    ones = np.ones((src.shape[0], 1))
    mapped = (h.h @ np.hstack([src, ones]).T).T
    w = mapped[:, 2]
    err = np.full(src.shape[0], np.inf)
    finite = w != 0
    proj = mapped[finite, :2] / w[finite, None]
    err[finite] = np.hypot(*(proj - dst[finite]).T)
    return err


def ransac_homography(
    correspondences, config: RansacConfig
) -> tuple[Homography, np.ndarray]:
    """Seeded RANSAC around the direct linear transform.

    Samples 4 correspondences per iteration, keeps the largest consensus set
    (first-found wins ties), and refits on all of its inliers. Returns the
    refit homography and the inlier indices.
    """
    src, dst = _as_point_arrays(correspondences)
    n = src.shape[0]
    if n < 4:
        raise ValueError(f"need at least 4 correspondences, got {n}")
    rng = np.random.default_rng(config.seed)
    best_inliers: np.ndarray | None = None
    for _ in range(config.iterations):
        pick = rng.choice(n, size=4, replace=False)
        try:
            cand = _dlt(src[pick], dst[pick])
        except DegenerateInputError:
            continue
        inliers = np.nonzero(
            _reprojection_errors(cand, src, dst) < config.threshold_px
        )[0]
        if best_inliers is None or inliers.size > best_inliers.size:
            best_inliers = inliers
    if best_inliers is None or best_inliers.size < 4:
        raise DegenerateInputError(
            "RANSAC found no 4-point sample with a consensus set"
        )
    return _dlt(src[best_inliers], dst[best_inliers]), best_inliers


def estimate_homography(correspondences, ransac: RansacConfig | None = None) -> Homography:
    """Normalized-DLT homography from point correspondences.

    Uses all pairs directly, or robustly via :func:`ransac_homography` when a
    RANSAC configuration is supplied. Requires at least 4 pairs; raises
    :class:`DegenerateInputError` when the geometry admits no unique answer.
    """
    src, dst = _as_point_arrays(correspondences)
    if src.shape[0] < 4:
        raise ValueError(f"need at least 4 correspondences, got {src.shape[0]}")
    if ransac is not None:
        h, _ = ransac_homography(correspondences, ransac)
        return h
    return _dlt(src, dst)


def apply_homography(h: Homography, point) -> tuple[float, float]:
    """Map one (row, col) point; raises if it lands at infinity."""
    vec = h.h @ np.array([point[0], point[1], 1.0], dtype=np.float64)
    if vec[2] == 0.0:
        raise PointAtInfinityError(f"point {tuple(point)!r} maps to infinity")
    return (float(vec[0] / vec[2]), float(vec[1] / vec[2]))


def composite_fixations(
    records, homographies, strict: bool = False
) -> list[tuple[float, float]]:
    """Map each record's gaze point into the common reference frame.

    ``homographies`` maps observation_id to :class:`Homography`. Observations
    without an entry pass through unchanged (the head-stabilized default)
    unless ``strict`` is set, in which case they raise
    :class:`ValidationError`. Output order matches input order.
    """
    out: list[tuple[float, float]] = []
    for rec in records:
        h = homographies.get(rec.observation_id)
        if h is None:
            if strict:
                raise ValidationError(
                    f"no homography for observation {rec.observation_id!r}"
                )
            out.append(rec.gaze_px)
        else:
            out.append(apply_homography(h, rec.gaze_px))
    return out


def save_homographies(path, mapping: dict[str, Homography]) -> None:
    """One line per observation: id followed by 9 row-major matrix entries."""
    with open(path, "w", encoding="ascii") as fh:
        for obs_id in mapping:
            nums = " ".join(f"{x:.17g}" for x in mapping[obs_id].h.ravel())
            fh.write(f"{obs_id} {nums}\n")


def load_homographies(path) -> dict[str, Homography]:
    mapping: dict[str, Homography] = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 10:
                raise ParseError(
                    f"expected observation_id + 9 numbers, got {len(parts)} fields",
                    lineno,
                )
            try:
                h = np.array([float(p) for p in parts[1:]], dtype=np.float64).reshape(3, 3)
            except ValueError:
                raise ParseError(f"non-numeric matrix entry in {line!r}", lineno) from None
            if h[2, 2] == 0.0:
                raise ParseError("h[2][2] must be nonzero", lineno)
            mapping[parts[0]] = Homography(h / h[2, 2])
    return mapping


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int = 0,
    tol: float = 1e-4,
    max_iter: int = 100,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Seeded k-means++ with Lloyd iterations.

    Assignment breaks ties toward the lowest cluster index; clusters that
    empty out are re-seeded from the point currently farthest from its
    centroid. Iteration stops when no centroid moves more than ``tol`` or
    after ``max_iter`` rounds. Returns (centroids, labels, objective_history)
    where labels are the argmin assignment against the returned centroids and
    the history (sum of squared distances) is non-increasing.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError("points must be a non-empty (M, D) array")
    m = pts.shape[0]
    if not 1 <= k <= m:
        raise ValueError(f"k must be in [1, {m}], got {k}")
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, pts.shape[1]), dtype=np.float64)
    centroids[0] = pts[rng.integers(m)]
    d2 = ((pts - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            pick = rng.choice(m, p=d2 / total)
        else:
            pick = rng.integers(m)
        centroids[j] = pts[pick]
        d2 = np.minimum(d2, ((pts - centroids[j]) ** 2).sum(axis=1))

    def assign(cents: np.ndarray) -> np.ndarray:
        dist2 = ((pts[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
        return dist2.argmin(axis=1)

    def objective(cents: np.ndarray, labels: np.ndarray) -> float:
        return float(((pts - cents[labels]) ** 2).sum())

    labels = assign(centroids)
    history = [objective(centroids, labels)]
    for _ in range(max_iter):
        new_centroids = centroids.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new_centroids[j] = pts[members].mean(axis=0)
        empty = [j for j in range(k) if not (labels == j).any()]
        if empty:
            dist_own = ((pts - new_centroids[labels]) ** 2).sum(axis=1)
            taken: set[int] = set()
            for j in empty:
                order = np.argsort(-dist_own, kind="stable")
                far = next(int(i) for i in order if int(i) not in taken)
                taken.add(far)
                new_centroids[j] = pts[far]
                dist_own[far] = 0.0
        new_labels = assign(new_centroids)
        history.append(objective(new_centroids, new_labels))
        movement = np.hypot(*(new_centroids - centroids).T).max()
        centroids, labels = new_centroids, new_labels
        if movement < tol:
            break
    return centroids, labels, history


def cluster_count(num_points: int, k_fraction: float = DEFAULT_K_FRACTION) -> int:
    """Number of clusters: the fixation fraction, rounded half-up, floor 1."""
    if num_points < 1:
        raise ValueError("need at least one fixation")
    if not (0.0 < k_fraction <= 1.0):
        raise ValueError(f"k_fraction must lie in (0, 1], got {k_fraction!r}")
    return max(1, int(np.floor(k_fraction * num_points + 0.5)))


@dataclass
class FixationCluster:
    """One attended region: its member fixations, centroid, and hull."""

    member_indices: np.ndarray  # (m,) int64 indices into the input points
    centroid_px: tuple[float, float]
    hull_px: np.ndarray  # (h, 2) counter-clockwise hull vertices

    @property
    def size(self) -> int:
        return int(self.member_indices.size)


def cluster_fixations(
    points,
    k_fraction: float = DEFAULT_K_FRACTION,
    seed: int = 0,
) -> list[FixationCluster]:
    """Cluster composited fixation points into attended regions.

    K follows :func:`cluster_count`. Each returned cluster's centroid is the
    arithmetic mean of its members and its hull their convex hull. Clusters
    that end up empty (possible only with heavily duplicated points) are
    dropped.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
        raise ValueError("points must be a non-empty (M, 2) array")
    k = cluster_count(pts.shape[0], k_fraction)
    _, labels, _ = kmeans(pts, k, seed=seed)
    clusters: list[FixationCluster] = []
    for j in range(k):
        members = np.nonzero(labels == j)[0]
        if members.size == 0:
            continue
        mean = pts[members].mean(axis=0)
        clusters.append(
            FixationCluster(
                members.astype(np.int64),
                (float(mean[0]), float(mean[1])),
                convex_hull(pts[members]),
            )
        )
    return clusters


def convex_hull(points) -> np.ndarray:
    """Convex hull by Andrew's monotone chain, counter-clockwise.

    Collinear boundary points are excluded. Degenerate inputs return what
    exists: a single point, a pair, or the two extremes of a collinear set.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
        raise ValueError("points must be a non-empty (M, 2) array")
    uniq = np.unique(pts, axis=0)  # lexicographic sort
    if uniq.shape[0] <= 2:
        return uniq

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[np.ndarray] = []
    for p in uniq:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in uniq[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:  # all collinear
        return np.vstack([uniq[0], uniq[-1]])
    return np.vstack(hull)


@dataclass(frozen=True)
class CropRect:
    """A square crop window plus a coverage warning.

    ``hull_warning`` is True when the source cluster's hull does not fit in
    the circle inscribed in the window, i.e. fixations spill past the
    retina's field of view.
    """

    row_start: int
    col_start: int
    size: int
    hull_warning: bool = False

    @property
    def center_px(self) -> tuple[float, float]:
        half = self.size // 2
        return (float(self.row_start + half), float(self.col_start + half))


def place_retina(
    cluster: FixationCluster,
    image_dims: tuple[int, int],
    crop_size: int = DEFAULT_CROP_SIZE,
    allow_padding: bool = False,
) -> CropRect:
    """Center a crop window on the cluster centroid, clamped into the image.

    The retina later samples the crop at its center, so clamping shifts the
    effective fixation with the window. The hull warning fires when any hull
    vertex falls outside the circle inscribed in the placed window.
    """
    rows_n, cols_n = int(image_dims[0]), int(image_dims[1])
    if crop_size < 1:
        raise ValueError(f"crop_size must be positive, got {crop_size!r}")
    if crop_size > min(rows_n, cols_n) and not allow_padding:
        raise ValueError(
            f"crop_size {crop_size} exceeds image dims {image_dims!r} "
            "and padding is disabled"
        )
    half = crop_size // 2
    r0 = int(round(cluster.centroid_px[0])) - half
    c0 = int(round(cluster.centroid_px[1])) - half
    r0 = min(max(r0, min(0, rows_n - crop_size)), max(0, rows_n - crop_size))
    c0 = min(max(c0, min(0, cols_n - crop_size)), max(0, cols_n - crop_size))

    center = (r0 + half, c0 + half)
    radius = crop_size / 2.0
    hull = cluster.hull_px
    dists = np.hypot(hull[:, 0] - center[0], hull[:, 1] - center[1])
    return CropRect(r0, c0, int(crop_size), bool((dists > radius).any()))


def extract_crop(image: np.ndarray, rect: CropRect, pad: bool = False) -> np.ndarray:
    """Copy the crop window out of the image.

    Without padding the window must lie inside the image. With padding,
    out-of-range pixels replicate the nearest edge pixel.
    """
    arr = np.asarray(image)
    h, w = arr.shape[0], arr.shape[1]
    r0, c0, s = rect.row_start, rect.col_start, rect.size
    inside = 0 <= r0 and 0 <= c0 and r0 + s <= h and c0 + s <= w
    if inside:
        return arr[r0 : r0 + s, c0 : c0 + s].copy()
    if not pad:
        raise ValueError(
            f"crop rows [{r0}, {r0 + s}) cols [{c0}, {c0 + s}) falls outside "
            f"a {h}x{w} image and padding is disabled"
        )
    rr = np.clip(np.arange(r0, r0 + s), 0, h - 1)
    cc = np.clip(np.arange(c0, c0 + s), 0, w - 1)
    return arr[np.ix_(rr, cc)].copy()


@dataclass
class DatasetManifest:
    """Labeled artifact paths with their split assignment."""

    classes: list[str] = field(default_factory=lambda: list(DEFAULT_CLASS_LABELS))
    entries: list[tuple[str, str, str]] = field(default_factory=list)  # (path, label, split)
    split_fractions: tuple[float, float, float] = DEFAULT_SPLIT_FRACTIONS
    seed: int = 0

    def paths(self, split: str) -> list[tuple[str, str]]:
        return [(p, c) for p, c, s in self.entries if s == split]


def largest_remainder_counts(n: int, fractions) -> list[int]:
    """Apportion ``n`` items to fractions: floors first, then the remaining
    items to the largest fractional parts (earlier fraction wins ties)."""
    ideal = [f * n for f in fractions]
    base = [int(np.floor(v)) for v in ideal]
    leftover = n - sum(base)
    order = sorted(range(len(fractions)), key=lambda i: (-(ideal[i] - base[i]), i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def split_dataset(
    entries,
    fractions=DEFAULT_SPLIT_FRACTIONS,
    seed: int = 0,
    classes=None,
) -> DatasetManifest:
    """Stratified split of (path, class_label) entries into train/val/test.

    Each class is shuffled with the seeded generator and apportioned by
    largest-remainder rounding, so per-class counts are as close to the
    fractions as integers allow and the whole assignment is reproducible.
    """
    entries = list(entries)
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValueError("fractions must be 3 non-negative numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)!r}")

    by_class: dict[str, list[tuple[str, str]]] = {}
    for path, label in entries:
        by_class.setdefault(label, []).append((path, label))
    if classes is None:
        class_list = sorted(by_class)
    else:
        class_list = list(classes)
        unknown = set(by_class) - set(class_list)
        if unknown:
            raise ValidationError(f"entries reference unknown classes {sorted(unknown)}")
        missing = [c for c in class_list if c not in by_class]
        if missing:
            raise ValueError(f"classes with no entries: {missing}")
    if not class_list:
        raise ValueError("no entries to split")

    rng = np.random.default_rng(seed)
    manifest_entries: list[tuple[str, str, str]] = []
    for label in class_list:
        group = list(by_class[label])
        perm = rng.permutation(len(group))
        group = [group[i] for i in perm]
        counts = largest_remainder_counts(len(group), fractions)
        cursor = 0
        for split_name, count in zip(SPLIT_NAMES, counts):
            for path, lab in group[cursor : cursor + count]:
                manifest_entries.append((path, lab, split_name))
            cursor += count
    return DatasetManifest(class_list, manifest_entries, fractions, seed)


def save_manifest(path, manifest: DatasetManifest) -> None:
    """Write the manifest CSV: header then ``path,class_label,split`` rows."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "class_label", "split"])
        for row in manifest.entries:
            writer.writerow(row)


def load_manifest(path) -> DatasetManifest:
    entries: list[tuple[str, str, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "path,class_label,split":
        raise ParseError("expected header 'path,class_label,split'", 1)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ParseError(f"expected 3 fields, got {len(parts)}", lineno)
        p, label, split = (s.strip() for s in parts)
        if split not in SPLIT_NAMES:
            raise ParseError(f"unknown split {split!r}", lineno)
        entries.append((p, label, split))
    classes = sorted({label for _, label, _ in entries})
    return DatasetManifest(classes, entries)
