"""Synthetic multi-view corpus: random articulated poses via forward
kinematics, a calibrated camera rig, view-pair assembly with optional
virtual-camera augmentation, and the on-disk dataset format.

Dataset directory layout:
    manifest.json
    pairs/<id>_src.gart   uint8 (C, H, W) binary skeleton map, source view
    pairs/<id>_tgt.gart   uint8 (C, H, W) binary skeleton map, target view
    pairs/<id>_rot.gart   float64 (3, 3) relative rotation source -> target
    poses/<id>.gart       float64 (P, 3) world pose, real pairs only
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import gart
from .errors import (
    ConfigError,
    DatasetIOError,
    DegenerateGeometryError,
    GeomrepError,
    SampleRejectedError,
)
from .geometry import (
    Camera,
    Pose3D,
    Rotation3,
    TorusSampler,
    camera_at,
    euler_zyx,
    project,
    rotation_between,
    sample_virtual_camera,
    triangulate,
)
from .skeleton import (
    DEFAULT_LINE_WIDTH_PX,
    DEFAULT_MAP_SIZE,
    Keypoints2D,
    KinematicTree,
    SkeletonMap,
    default_human_tree,
    rasterize_skeleton,
)

MANIFEST_NAME = "manifest.json"
DATASET_FORMAT = "geomrep-dataset"
DATASET_VERSION = 1

# Per-family scale applied to the base joint-angle limit template.
POSE_FAMILIES = {"upright": 0.5, "active": 1.0, "dynamic": 1.4}


def base_angle_limits(tree: KinematicTree) -> np.ndarray:
    """(P, 3, 2) per-joint per-axis [min, max] Euler limits in radians."""
    half = {
        "spine": (0.25, 0.25, 0.30),
        "neck": (0.30, 0.30, 0.30),
        "head": (0.30, 0.30, 0.30),
        "lhip": (0.80, 0.40, 0.30),
        "rhip": (0.80, 0.40, 0.30),
        "lknee": (0.90, 0.25, 0.20),
        "rknee": (0.90, 0.25, 0.20),
        "lankle": (0.50, 0.25, 0.20),
        "rankle": (0.50, 0.25, 0.20),
        "lshoulder": (0.90, 0.90, 0.50),
        "rshoulder": (0.90, 0.90, 0.50),
        "lelbow": (1.10, 1.10, 0.40),
        "relbow": (1.10, 1.10, 0.40),
        "lwrist": (0.80, 0.80, 0.30),
        "rwrist": (0.80, 0.80, 0.30),
    }
    limits = np.zeros((tree.num_joints, 3, 2))
    names = tree.joint_names or tuple(str(i) for i in range(tree.num_joints))
    for j, name in enumerate(names):
        h = half.get(name, (0.5, 0.5, 0.3))
        limits[j, :, 0] = [-v for v in h]
        limits[j, :, 1] = h
    limits[tree.root] = 0.0
    return limits


@dataclass
class PoseSampler:
    """Draws world-frame poses by forward kinematics within joint limits."""

    tree: KinematicTree
    joint_angle_limits: np.ndarray  # (P, 3, 2) radians
    root_height_range_mm: tuple = (820.0, 980.0)
    root_xy_jitter_mm: float = 100.0
    root_yaw_range: tuple = (-np.pi, np.pi)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def __post_init__(self):
        lim = np.asarray(self.joint_angle_limits, dtype=np.float64)
        if lim.shape != (self.tree.num_joints, 3, 2):
            raise ValueError(f"joint_angle_limits must be (P, 3, 2), got {lim.shape}")
        if not np.all(np.isfinite(lim)) or np.any(lim[..., 0] > lim[..., 1]):
            raise ValueError("joint_angle_limits need finite min <= max")
        self.joint_angle_limits = lim


def forward_kinematics(
    tree: KinematicTree,
    angles: np.ndarray,
    root_position: np.ndarray,
    root_yaw: float = 0.0,
) -> Pose3D:
    """Place each child at parent + bone_length * R_euler(angles) @ rest_dir.

    Local rotations are independent per joint (not chained down the tree);
    root_yaw spins the whole body about the vertical axis through the root.
    """
    p = tree.num_joints
    joints = np.zeros((p, 3))
    joints[tree.root] = root_position
    yaw = euler_zyx(0.0, 0.0, root_yaw)
    # limb_order is a valid topological order (parents precede children when
    # walking the tree from the root), but be explicit and iterate until done.
    placed = {tree.root}
    pending = list(tree.limb_order)
    while pending:
        remaining = []
        for child, par in pending:
            if par not in placed:
                remaining.append((child, par))
                continue
            rot = euler_zyx(*angles[child])
            offset = tree.bone_lengths_mm[child] * (rot.matrix @ tree.rest_directions[child])
            joints[child] = joints[par] + yaw.matrix @ offset
            placed.add(child)
        if len(remaining) == len(pending):
            raise ValueError("limb_order does not reach all joints from the root")
        pending = remaining
    return Pose3D(joints, frame="world")


def sample_pose(sampler: PoseSampler) -> Pose3D:
    """Draw joint angles uniformly within limits and run forward kinematics."""
    lim = sampler.joint_angle_limits
    u = sampler.rng.uniform(size=lim.shape[:2])
    angles = lim[..., 0] + u * (lim[..., 1] - lim[..., 0])
    h0, h1 = sampler.root_height_range_mm
    height = sampler.rng.uniform(h0, h1) if h1 > h0 else h0
    jitter = sampler.root_xy_jitter_mm
    xy = sampler.rng.uniform(-jitter, jitter, size=2) if jitter > 0 else np.zeros(2)
    y0, y1 = sampler.root_yaw_range
    yaw = sampler.rng.uniform(y0, y1) if y1 > y0 else y0
    root = np.array([xy[0], xy[1], height])
    return forward_kinematics(sampler.tree, angles, root, yaw)


def rest_pose(tree: KinematicTree, root_position=(0.0, 0.0, 900.0)) -> Pose3D:
    return forward_kinematics(tree, np.zeros((tree.num_joints, 3)), np.asarray(root_position))


@dataclass
class RasterParams:
    out_size: tuple = DEFAULT_MAP_SIZE
    line_width_px: float = DEFAULT_LINE_WIDTH_PX


@dataclass
class ViewPair:
    """(source map, target map, relative rotation) training triple."""

    source: SkeletonMap
    target: SkeletonMap
    rot_ij: Rotation3
    rot_ji: Rotation3
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        comp = self.rot_ij.matrix @ self.rot_ji.matrix
        if np.linalg.norm(comp - np.eye(3)) > 1e-9:
            raise ValueError("rot_ij and rot_ji are not inverse rotations")


def keypoints_in_view(pose: Pose3D, cam: Camera, margin_px: float = 0.0) -> Keypoints2D:
    """Project and require every joint inside the image (with margin)."""
    try:
        pts = project(pose, cam)
    except GeomrepError as e:
        raise SampleRejectedError(f"projection failed: {e}") from e
    w, h = cam.image_size
    lo = -margin_px
    bad = np.nonzero(
        (pts[:, 0] < lo)
        | (pts[:, 0] > w - 1 + margin_px)
        | (pts[:, 1] < lo)
        | (pts[:, 1] > h - 1 + margin_px)
    )[0]
    if bad.size:
        raise SampleRejectedError(f"joints outside image bounds: {bad.tolist()}")
    return Keypoints2D(pts)


def make_view_pair(
    pose: Pose3D,
    cam_i: Camera,
    cam_j: Camera,
    tree: KinematicTree,
    raster: RasterParams = None,
    meta: dict = None,
) -> ViewPair:
    """Rasterize both views of a pose and attach the exact relative rotation."""
    raster = raster or RasterParams()
    kp_i = keypoints_in_view(pose, cam_i)
    kp_j = keypoints_in_view(pose, cam_j)
    src = rasterize_skeleton(
        kp_i, tree, raster.out_size, raster.line_width_px, image_size=cam_i.image_size
    )
    tgt = rasterize_skeleton(
        kp_j, tree, raster.out_size, raster.line_width_px, image_size=cam_j.image_size
    )
    rot_ij = rotation_between(cam_i, cam_j)
    return ViewPair(src, tgt, rot_ij, rot_ij.inverse(), meta or {})


def augment_virtual_pairs(
    kp_views: list,
    sampler: TorusSampler,
    count: int,
    tree: KinematicTree,
    look_at,
    raster: RasterParams = None,
    max_retries: int = 20,
) -> list:
    """Triangulate a skeleton from >= 2 calibrated 2D views, then render
    ``count`` pairs from freshly sampled virtual cameras.

    Only 2D observations and calibration are consumed; no 3D labels.
    Raises DegenerateGeometryError when triangulation is impossible.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return []
    pose, residual = triangulate(kp_views)
    raster = raster or RasterParams()
    out = []
    attempts = 0
    while len(out) < count:
        cam_a = sample_virtual_camera(sampler, look_at)
        cam_b = sample_virtual_camera(sampler, look_at)
        try:
            pair = make_view_pair(
                pose,
                cam_a,
                cam_b,
                tree,
                raster,
                meta={
                    "cam_i": "virtual",
                    "cam_j": "virtual",
                    "virtual_cam_i": cam_a.to_dict(),
                    "virtual_cam_j": cam_b.to_dict(),
                    "triangulation_residual_px": residual,
                },
            )
        except SampleRejectedError:
            attempts += 1
            if attempts > max_retries * count:
                raise SampleRejectedError(
                    "virtual-camera sampling kept placing the subject out of view"
                )
            continue
        out.append(pair)
    return out


def make_rig(
    num_cameras: int = 4,
    radius_mm: float = 5000.0,
    elevation_deg: float = 12.0,
    look_at=(0.0, 0.0, 900.0),
    focal=(500.0, 500.0),
    principal_point=(128.0, 128.0),
    image_size=(256.0, 256.0),
    azimuth_offset_deg: float = 45.0,
) -> list:
    """Cameras spread evenly in azimuth (defaults mimic four corners of a
    rectangle around the subject), all aimed at ``look_at``."""
    cams = []
    for v in range(num_cameras):
        az = np.deg2rad(azimuth_offset_deg + 360.0 * v / num_cameras)
        cams.append(
            camera_at(
                np.asarray(look_at, np.float64),
                radius_mm,
                az,
                np.deg2rad(elevation_deg),
                focal=focal,
                principal_point=principal_point,
                image_size=image_size,
            )
        )
    return cams


@dataclass
class DataConfig:
    """Everything that determines a generated corpus, seed included."""

    seed: int = 0
    num_pairs: int = 20000
    num_virtual_pairs: int = 0
    num_subjects: int = 5
    subject_scale_range: tuple = (0.9, 1.1)
    train_subjects: tuple = (0, 1, 2)
    test_subjects: tuple = (3, 4)
    p3_test_view: int = 3
    num_views: int = 4
    rig_radius_mm: float = 5000.0
    rig_elevation_deg: float = 12.0
    look_at: tuple = (0.0, 0.0, 900.0)
    focal: tuple = (500.0, 500.0)
    principal_point: tuple = (128.0, 128.0)
    image_size: tuple = (256.0, 256.0)
    map_size: tuple = DEFAULT_MAP_SIZE
    line_width_px: float = DEFAULT_LINE_WIDTH_PX
    torus_radius_mm: float = 5000.0
    torus_azimuth_range: tuple = (0.0, 2.0 * np.pi)
    torus_elevation_range_deg: tuple = (-15.0, 15.0)
    aug_from_views: tuple = None  # None = all views feed triangulation
    families: tuple = tuple(POSE_FAMILIES)
    root_height_range_mm: tuple = (820.0, 980.0)
    root_xy_jitter_mm: float = 100.0
    max_pose_retries: int = 50

    def validate(self):
        if self.num_pairs <= 0:
            raise ConfigError("data.num_pairs", "must be > 0")
        if self.num_virtual_pairs < 0:
            raise ConfigError("data.num_virtual_pairs", "must be >= 0")
        if self.num_views < 2:
            raise ConfigError("data.num_views", "need >= 2 views")
        if set(self.train_subjects) & set(self.test_subjects):
            raise ConfigError("data.train_subjects", "train/test subjects overlap")
        subjects = set(self.train_subjects) | set(self.test_subjects)
        if subjects - set(range(self.num_subjects)):
            raise ConfigError("data.num_subjects", "split references unknown subject ids")
        if not (0 <= self.p3_test_view < self.num_views):
            raise ConfigError("data.p3_test_view", "not a valid view id")
        lo, hi = self.torus_elevation_range_deg
        if not (-90.0 < lo <= hi < 90.0):
            raise ConfigError("data.torus_elevation_range_deg", f"bad range {lo, hi}")
        a0, a1 = self.torus_azimuth_range
        if not (0.0 <= a0 <= a1 < 2.0 * np.pi + 1e-12):
            raise ConfigError("data.torus_azimuth_range", f"bad range {a0, a1}")
        for fam in self.families:
            if fam not in POSE_FAMILIES:
                raise ConfigError("data.families", f"unknown family {fam!r}")
        return self


def _sample_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    """Per-sample generator; independent of generation order or parallelism."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(stream, index)))


def _scaled_tree(tree: KinematicTree, scale: float) -> KinematicTree:
    return KinematicTree(
        tree.parent,
        tree.bone_lengths_mm * scale,
        tree.limb_order,
        tree.rest_directions,
        tree.joint_names,
    )


def _tree_to_dict(tree: KinematicTree) -> dict:
    return {
        "names": list(tree.joint_names),
        "parent": tree.parent.tolist(),
        "bone_lengths_mm": tree.bone_lengths_mm.tolist(),
        "rest_directions": tree.rest_directions.tolist(),
        "limb_order": [list(l) for l in tree.limb_order],
    }


def _tree_from_dict(d: dict) -> KinematicTree:
    return KinematicTree(
        np.array(d["parent"]),
        np.array(d["bone_lengths_mm"]),
        tuple(tuple(l) for l in d["limb_order"]),
        np.array(d["rest_directions"]),
        tuple(d.get("names", ())),
    )


class DatasetWriter:
    """Incremental single-writer for the dataset directory layout."""

    def __init__(self, out_dir):
        self.root = Path(out_dir)
        (self.root / "pairs").mkdir(parents=True, exist_ok=True)
        (self.root / "poses").mkdir(parents=True, exist_ok=True)
        self.records = []

    def add_pair(self, pair_id: str, pair: ViewPair, pose: Pose3D = None, **meta):
        gart.write_tensor(
            self.root / "pairs" / f"{pair_id}_src.gart",
            pair.source.channels.astype(np.uint8),
        )
        gart.write_tensor(
            self.root / "pairs" / f"{pair_id}_tgt.gart",
            pair.target.channels.astype(np.uint8),
        )
        gart.write_tensor(self.root / "pairs" / f"{pair_id}_rot.gart", pair.rot_ij.matrix)
        record = {"id": pair_id, **pair.meta, **meta}
        record["has_pose"] = pose is not None
        if pose is not None:
            gart.write_tensor(self.root / "poses" / f"{pair_id}.gart", pose.joints)
        self.records.append(record)

    def finalize(self, manifest: dict) -> Path:
        manifest = dict(manifest)
        manifest["pairs"] = self.records
        manifest["num_pairs"] = len(self.records)
        path = self.root / MANIFEST_NAME
        path.write_text(json.dumps(manifest, sort_keys=True, separators=(",", ":")))
        return self.root


def generate_dataset(config: DataConfig, out_dir) -> dict:
    """Write a corpus determined entirely by (config, config.seed).

    Returns the manifest dict. Two runs with the same config produce
    byte-identical directories.
    """
    config.validate()
    tree = default_human_tree()
    rig = make_rig(
        config.num_views,
        config.rig_radius_mm,
        config.rig_elevation_deg,
        config.look_at,
        config.focal,
        config.principal_point,
        config.image_size,
    )
    raster = RasterParams(tuple(config.map_size), config.line_width_px)
    scales = np.linspace(*config.subject_scale_range, config.num_subjects)
    base_lim = base_angle_limits(tree)
    writer = DatasetWriter(out_dir)

    def draw_sample(rng, subject: int, family: str):
        sampler = PoseSampler(
            _scaled_tree(tree, float(scales[subject])),
            base_lim * POSE_FAMILIES[family],
            root_height_range_mm=config.root_height_range_mm,
            root_xy_jitter_mm=config.root_xy_jitter_mm,
            rng=rng,
        )
        for _ in range(config.max_pose_retries):
            pose = sample_pose(sampler)
            try:
                for cam in rig:
                    keypoints_in_view(pose, cam)
            except SampleRejectedError:
                continue
            return pose
        raise SampleRejectedError(
            f"no visible pose found in {config.max_pose_retries} tries for subject {subject}"
        )

    families = list(config.families)
    for t in range(config.num_pairs):
        rng = _sample_rng(config.seed, 0, t)
        subject = t % config.num_subjects
        family = families[int(rng.integers(len(families)))]
        pose = draw_sample(rng, subject, family)
        i, j = rng.choice(config.num_views, size=2, replace=False)
        pair = make_view_pair(
            pose,
            rig[int(i)],
            rig[int(j)],
            tree,
            raster,
            meta={"cam_i": int(i), "cam_j": int(j)},
        )
        writer.add_pair(
            f"{t:07d}", pair, pose=pose, kind="real", subject=subject, family=family, t=t
        )

    aug_views = (
        list(range(config.num_views))
        if config.aug_from_views is None
        else list(config.aug_from_views)
    )
    skipped = 0
    for n in range(config.num_virtual_pairs):
        rng = _sample_rng(config.seed, 1, n)
        t = int(rng.integers(config.num_pairs))
        src_rng = _sample_rng(config.seed, 0, t)
        subject = t % config.num_subjects
        family = families[int(src_rng.integers(len(families)))]
        pose = draw_sample(src_rng, subject, family)
        kp_views = [(keypoints_in_view(pose, rig[v]).points, rig[v]) for v in aug_views]
        torus = TorusSampler(
            radius_mm=config.torus_radius_mm,
            azimuth_range=tuple(config.torus_azimuth_range),
            elevation_range=tuple(np.deg2rad(config.torus_elevation_range_deg)),
            focal=config.focal,
            principal_point=config.principal_point,
            image_size=config.image_size,
            rng=rng,
        )
        try:
            pairs = augment_virtual_pairs(
                kp_views, torus, 1, tree, np.asarray(config.look_at), raster
            )
        except (DegenerateGeometryError, SampleRejectedError):
            skipped += 1
            continue
        writer.add_pair(
            f"v{n:06d}",
            pairs[0],
            pose=None,
            kind="virtual",
            subject=subject,
            family=family,
            t=t,
            src_views=aug_views,
        )

    manifest = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "seed": config.seed,
        "num_views": config.num_views,
        "map_size": list(config.map_size),
        "line_width_px": config.line_width_px,
        "joints": _tree_to_dict(tree),
        "cameras": [c.to_dict() for c in rig],
        "subjects": {
            "count": config.num_subjects,
            "scales": scales.tolist(),
            "train": list(config.train_subjects),
            "test": list(config.test_subjects),
        },
        "p3_test_view": config.p3_test_view,
        "families": families,
        "virtual_skipped": skipped,
        "shapes": {
            "map": [tree.num_limbs, int(config.map_size[1]), int(config.map_size[0])],
            "rot": [3, 3],
            "pose": [tree.num_joints, 3],
        },
        "config": asdict(config),
    }
    writer.finalize(manifest)
    return json.loads((Path(out_dir) / MANIFEST_NAME).read_text())


def _validate_manifest(manifest: dict, root: Path):
    for key in ("format", "version", "shapes", "pairs", "map_size"):
        if key not in manifest:
            raise DatasetIOError(f"{root / MANIFEST_NAME}: missing key {key!r}")
    if manifest["format"] != DATASET_FORMAT:
        raise DatasetIOError(f"{root}: not a {DATASET_FORMAT} directory")
    if manifest["version"] != DATASET_VERSION:
        raise DatasetIOError(f"{root}: unsupported dataset version {manifest['version']}")


class DatasetReader:
    """Lazy reader over one or more dataset directories.

    Every file access is logged in ``opened_files`` so training stages can be
    audited for label use (stage 1 must never open ``poses/``).
    """

    def __init__(self, dirs):
        if isinstance(dirs, (str, Path)):
            dirs = [dirs]
        self.roots = [Path(d) for d in dirs]
        self.manifests = []
        self.pairs = []  # (root_idx, record)
        self.opened_files = []
        for idx, root in enumerate(self.roots):
            mpath = root / MANIFEST_NAME
            if not mpath.exists():
                raise DatasetIOError(f"{root}: missing {MANIFEST_NAME}")
            manifest = json.loads(mpath.read_text())
            _validate_manifest(manifest, root)
            if self.manifests and manifest["shapes"] != self.manifests[0]["shapes"]:
                raise DatasetIOError(f"{root}: tensor shapes disagree with first dataset")
            self.manifests.append(manifest)
            for rec in manifest["pairs"]:
                self.pairs.append((idx, rec))

    def __len__(self):
        return len(self.pairs)

    @property
    def manifest(self) -> dict:
        return self.manifests[0]

    @property
    def tree(self) -> KinematicTree:
        return _tree_from_dict(self.manifest["joints"])

    def camera(self, root_idx: int, view) -> Camera:
        return Camera.from_dict(self.manifests[root_idx]["cameras"][int(view)])

    def _read(self, root_idx: int, rel: str, key: str) -> np.ndarray:
        path = self.roots[root_idx] / rel
        self.opened_files.append(path)
        arr = gart.read_tensor(path)
        want = tuple(self.manifests[root_idx]["shapes"][key])
        if arr.shape != want:
            raise DatasetIOError(f"{path}: shape {arr.shape} does not match manifest {want}")
        return arr

    def load_maps(self, index: int) -> tuple:
        """(src, tgt) float32 maps in {0,1}."""
        root_idx, rec = self.pairs[index]
        src = self._read(root_idx, f"pairs/{rec['id']}_src.gart", "map")
        tgt = self._read(root_idx, f"pairs/{rec['id']}_tgt.gart", "map")
        return src.astype(np.float32), tgt.astype(np.float32)

    def load_rotation(self, index: int) -> np.ndarray:
        root_idx, rec = self.pairs[index]
        return self._read(root_idx, f"pairs/{rec['id']}_rot.gart", "rot")

    def load_pose(self, index: int) -> Pose3D:
        """World-frame pose label; applies the manifest joint remap if any."""
        root_idx, rec = self.pairs[index]
        if not rec.get("has_pose"):
            raise DatasetIOError(f"pair {rec['id']} has no stored pose")
        arr = self._read(root_idx, f"poses/{rec['id']}.gart", "pose")
        remap = self.manifests[root_idx].get("joint_remap")
        if remap is not None:
            arr = arr[np.asarray(remap, dtype=np.int64)]
        return Pose3D(arr, frame="world")

    def source_camera(self, index: int) -> Camera:
        root_idx, rec = self.pairs[index]
        if rec["cam_i"] == "virtual":
            return Camera.from_dict(rec["virtual_cam_i"])
        return self.camera(root_idx, rec["cam_i"])

    def target_camera(self, index: int) -> Camera:
        root_idx, rec = self.pairs[index]
        if rec["cam_j"] == "virtual":
            return Camera.from_dict(rec["virtual_cam_j"])
        return self.camera(root_idx, rec["cam_j"])

    def record(self, index: int) -> dict:
        return self.pairs[index][1]

    def select(self, subjects=None, views=None, kinds=("real", "virtual")) -> list:
        """Indices filtered by subject split, allowed camera views, and kind.

        A view filter keeps real pairs whose cameras are both allowed, and
        virtual pairs whose triangulation source views are all allowed.
        """
        subjects = None if subjects is None else set(int(s) for s in subjects)
        views = None if views is None else set(int(v) for v in views)
        out = []
        for i, (_, rec) in enumerate(self.pairs):
            if rec.get("kind", "real") not in kinds:
                continue
            if subjects is not None and rec.get("subject") not in subjects:
                continue
            if views is not None:
                if rec.get("kind") == "virtual":
                    if not set(rec.get("src_views", ())) <= views:
                        continue
                elif not {rec["cam_i"], rec["cam_j"]} <= views:
                    continue
            out.append(i)
        return out


def write_dataset(pairs: list, manifest: dict, out_dir, poses: list = None) -> Path:
    """Write already-assembled ViewPairs (tests and small corpora)."""
    writer = DatasetWriter(out_dir)
    poses = poses or [None] * len(pairs)
    for t, (pair, pose) in enumerate(zip(pairs, poses)):
        meta = {k: v for k, v in (("kind", pair.meta.get("kind", "real")),)}
        writer.add_pair(f"{t:07d}", pair, pose=pose, **meta)
    return writer.finalize(manifest)


def read_dataset(dataset_dir) -> tuple:
    """Eagerly load every pair; validates the manifest and all file shapes."""
    reader = DatasetReader(dataset_dir)
    pairs = []
    for i in range(len(reader)):
        src, tgt = reader.load_maps(i)
        rot = Rotation3(reader.load_rotation(i))
        rec = reader.record(i)
        pairs.append(
            ViewPair(
                SkeletonMap(src, binary=True),
                SkeletonMap(tgt, binary=True),
                rot,
                rot.inverse(),
                meta=dict(rec),
            )
        )
    return pairs, reader.manifest
