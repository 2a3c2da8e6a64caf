"""2D keypoints, multi-channel binary skeleton maps, and heatmap decoding.

A skeleton map has one channel per limb of the kinematic tree; channel m
draws limb_order[m] as a fixed-width stroke (1 on the stroke, 0 elsewhere).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeMismatchError

# Stroke widths are specified at this reference resolution (the paper-native
# image scale) and shrink proportionally with the raster size.
REFERENCE_SCALE_PX = 256.0
DEFAULT_LINE_WIDTH_PX = 8.0
DEFAULT_MAP_SIZE = (64, 64)


@dataclass(frozen=True)
class KinematicTree:
    """Tree-structured body model.

    parent[root] == root; limb_order lists (child, parent) pairs and fixes
    the channel order of skeleton maps; rest_directions are unit bone
    offsets (child minus parent, normalized) in the template rest pose.
    """

    parent: np.ndarray  # (P,) int
    bone_lengths_mm: np.ndarray  # (P,) float, root entry unused
    limb_order: tuple  # ((child, parent), ...) length P-1
    rest_directions: np.ndarray  # (P, 3) unit vectors, root row unused
    joint_names: tuple = ()

    def __post_init__(self):
        parent = np.asarray(self.parent, dtype=np.int64)
        lengths = np.asarray(self.bone_lengths_mm, dtype=np.float64)
        rest = np.asarray(self.rest_directions, dtype=np.float64)
        p = parent.shape[0]
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "bone_lengths_mm", lengths)
        object.__setattr__(self, "rest_directions", rest)
        object.__setattr__(self, "limb_order", tuple(tuple(l) for l in self.limb_order))
        roots = np.nonzero(parent == np.arange(p))[0]
        if roots.size != 1:
            raise ValueError(f"tree must have exactly one root, found {roots.tolist()}")
        if lengths.shape != (p,) or rest.shape != (p, 3):
            raise ValueError("bone_lengths_mm / rest_directions shape mismatch with parent")
        non_root = set(range(p)) - {int(roots[0])}
        children = {c for c, _ in self.limb_order}
        if children != non_root or len(self.limb_order) != p - 1:
            raise ValueError("limb_order must cover every non-root joint exactly once")
        for child, par in self.limb_order:
            if parent[child] != par:
                raise ValueError(f"limb ({child}, {par}) disagrees with parent array")
        # Acyclicity: walking up from every joint must reach the root.
        for j in range(p):
            seen = set()
            while parent[j] != j:
                if j in seen:
                    raise ValueError("parent array contains a cycle")
                seen.add(j)
                j = int(parent[j])

    @property
    def root(self) -> int:
        return int(np.nonzero(self.parent == np.arange(self.parent.shape[0]))[0][0])

    @property
    def num_joints(self) -> int:
        return self.parent.shape[0]

    @property
    def num_limbs(self) -> int:
        return len(self.limb_order)


def default_human_tree() -> KinematicTree:
    """16-joint body: pelvis root, spine/neck/head chain, two arms, two legs."""
    names = (
        "pelvis", "spine", "neck", "head",
        "lhip", "lknee", "lankle",
        "rhip", "rknee", "rankle",
        "lshoulder", "lelbow", "lwrist",
        "rshoulder", "relbow", "rwrist",
    )
    parent = np.array([0, 0, 1, 2, 0, 4, 5, 0, 7, 8, 2, 10, 11, 2, 13, 14])
    lengths = np.array(
        [0.0, 250.0, 250.0, 180.0,
         130.0, 440.0, 430.0,
         130.0, 440.0, 430.0,
         180.0, 280.0, 250.0,
         180.0, 280.0, 250.0]
    )
    up = [0.0, 0.0, 1.0]
    down = [0.0, 0.0, -1.0]
    rest = np.array(
        [
            [0, 0, 0],          # pelvis (unused)
            up,                 # spine
            up,                 # neck
            up,                 # head
            [0.97, 0, -0.26],   # lhip: lateral and slightly down
            down,               # lknee
            down,               # lankle
            [-0.97, 0, -0.26],  # rhip
            down,               # rknee
            down,               # rankle
            [0.99, 0, -0.12],   # lshoulder
            down,               # lelbow
            down,               # lwrist
            [-0.99, 0, -0.12],  # rshoulder
            down,               # relbow
            down,               # rwrist
        ],
        dtype=np.float64,
    )
    norms = np.linalg.norm(rest, axis=1, keepdims=True)
    norms[0] = 1.0
    rest = rest / norms
    limb_order = tuple((c, int(parent[c])) for c in range(1, 16))
    return KinematicTree(parent, lengths, limb_order, rest, names)


@dataclass
class Keypoints2D:
    """Pixel-space joint locations with per-joint visibility."""

    points: np.ndarray  # (K, 2), (x, y) pixels
    visibility: np.ndarray = None  # (K,) bool

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError(f"points must be (K, 2), got {self.points.shape}")
        if self.visibility is None:
            self.visibility = np.ones(self.points.shape[0], dtype=bool)
        else:
            self.visibility = np.asarray(self.visibility, dtype=bool)
        if self.visibility.shape != (self.points.shape[0],):
            raise ValueError("visibility length must match point count")
        if not np.all(np.isfinite(self.points[self.visibility])):
            raise ValueError("visible keypoints must be finite")


@dataclass
class Heatmaps:
    """Per-joint non-negative score maps, (K, H, W)."""

    maps: np.ndarray

    def __post_init__(self):
        self.maps = np.asarray(self.maps, dtype=np.float64)
        if self.maps.ndim != 3:
            raise ValueError(f"maps must be (K, H, W), got {self.maps.shape}")
        if np.any(self.maps < 0):
            raise ValueError("heatmaps must be non-negative")


@dataclass
class SkeletonMap:
    """(K-1, H, W) limb raster; binary ground truth or (0,1) decoder output."""

    channels: np.ndarray
    binary: bool = True

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float32)
        if self.channels.ndim != 3:
            raise ValueError(f"channels must be (C, H, W), got {self.channels.shape}")
        if self.binary:
            vals = np.unique(self.channels)
            if not np.all(np.isin(vals, [0.0, 1.0])):
                raise ValueError("binary skeleton map must be exactly {0,1}-valued")
        elif np.any(self.channels < 0) or np.any(self.channels > 1):
            raise ValueError("skeleton map entries must lie in [0, 1]")

    @property
    def shape(self) -> tuple:
        return self.channels.shape


def rasterize_skeleton(
    kp: Keypoints2D,
    tree: KinematicTree,
    out_size: tuple = DEFAULT_MAP_SIZE,
    line_width_px: float = DEFAULT_LINE_WIDTH_PX,
    image_size: tuple = None,
) -> SkeletonMap:
    """Draw each limb as a fixed-width stroke into its own channel.

    Pixels at integer coordinates (x, y) within distance width/2 of the limb
    segment are set to 1 (distance-to-segment thresholding, so zero-length
    limbs render a disc). ``line_width_px`` is given at the 256 px reference
    scale and shrinks proportionally with ``out_size``. ``image_size`` is the
    source frame extent of the keypoints; when given, points are rescaled by
    out_size / image_size, otherwise used as-is.

    Limbs with an invisible endpoint render empty.
    """
    if line_width_px <= 0:
        raise ConfigError("raster.line_width_px", f"must be > 0, got {line_width_px}")
    out_w, out_h = int(out_size[0]), int(out_size[1])
    if out_w < 8 or out_h < 8:
        raise ConfigError("raster.out_size", f"must be >= 8x8, got {out_size}")

    pts = kp.points
    if image_size is not None:
        scale = np.array([out_w / float(image_size[0]), out_h / float(image_size[1])])
        pts = pts * scale
    radius = 0.5 * line_width_px * out_w / REFERENCE_SCALE_PX

    xs = np.arange(out_w, dtype=np.float64)
    ys = np.arange(out_h, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)  # (H, W)

    channels = np.zeros((tree.num_limbs, out_h, out_w), dtype=np.float32)
    for m, (child, par) in enumerate(tree.limb_order):
        if not (kp.visibility[child] and kp.visibility[par]):
            continue
        a = pts[par]
        b = pts[child]
        ab = b - a
        denom = float(ab @ ab)
        dx = gx - a[0]
        dy = gy - a[1]
        if denom < 1e-18:
            dist2 = dx * dx + dy * dy
        else:
            t = np.clip((dx * ab[0] + dy * ab[1]) / denom, 0.0, 1.0)
            dist2 = (dx - t * ab[0]) ** 2 + (dy - t * ab[1]) ** 2
        channels[m] = (dist2 <= radius * radius).astype(np.float32)
    return SkeletonMap(channels, binary=True)


def decode_heatmaps(h: Heatmaps) -> Keypoints2D:
    """Per-channel argmax with a quarter-pixel shift toward the stronger
    neighbor along each axis (argmax ties break at the lowest row-major
    index). All-zero channels mark the joint invisible.
    """
    k, height, width = h.maps.shape
    points = np.zeros((k, 2), dtype=np.float64)
    visibility = np.ones(k, dtype=bool)
    for c in range(k):
        hm = h.maps[c]
        peak = hm.max()
        if peak <= 0:
            visibility[c] = False
            continue
        idx = int(np.argmax(hm))
        y, x = divmod(idx, width)
        fx, fy = float(x), float(y)
        if 0 < x < width - 1:
            if hm[y, x + 1] > hm[y, x - 1]:
                fx += 0.25
            elif hm[y, x + 1] < hm[y, x - 1]:
                fx -= 0.25
        if 0 < y < height - 1:
            if hm[y + 1, x] > hm[y - 1, x]:
                fy += 0.25
            elif hm[y + 1, x] < hm[y - 1, x]:
                fy -= 0.25
        points[c] = (fx, fy)
    return Keypoints2D(points, visibility)


def gaussian_heatmaps(
    kp: Keypoints2D, map_size: tuple, sigma_px: float = 2.0
) -> Heatmaps:
    """Synthesize unit-peak Gaussian heatmaps at the keypoint locations.

    Invisible joints get all-zero channels. Test/integration helper standing
    in for a real 2D pose estimator's output.
    """
    w, h = int(map_size[0]), int(map_size[1])
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    maps = np.zeros((kp.points.shape[0], h, w), dtype=np.float64)
    for c, (x, y) in enumerate(kp.points):
        if not kp.visibility[c]:
            continue
        maps[c] = np.exp(-((gx - x) ** 2 + (gy - y) ** 2) / (2.0 * sigma_px**2))
    return Heatmaps(maps)


def skeleton_iou(a: SkeletonMap, b: SkeletonMap, threshold: float = 0.5) -> float:
    """IoU of the binarized strokes, channels OR-merged into one silhouette
    per map first; empty vs empty is 1.
    """
    if a.shape != b.shape:
        raise ShapeMismatchError(f"skeleton map shapes differ: {a.shape} vs {b.shape}")
    am = np.any(a.channels >= threshold, axis=0)
    bm = np.any(b.channels >= threshold, axis=0)
    inter = float(np.logical_and(am, bm).sum())
    union = float(np.logical_or(am, bm).sum())
    if union == 0:
        return 1.0
    return inter / union
