"""Encoder-decoder generators with a rotatable 3D-point latent code, the
latent-to-pose regressor, and the prior-injection adapter.

The latent is an (M, 3) point set; conditioning on a relative camera
rotation means literally rotating those points before decoding.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import gart
from .errors import DatasetIOError, DegenerateLatentError, ShapeMismatchError
from .geometry import Pose3D, Rotation3
from .skeleton import SkeletonMap

LATENT_EPS = 1e-12


@dataclass
class LatentCode:
    """M discrete 3D points (dimensionless latent units)."""

    points: np.ndarray  # (M, 3)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"latent points must be (M, 3), got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("latent points must be finite")

    @property
    def num_points(self) -> int:
        return self.points.shape[0]


def rotate_points(points: torch.Tensor, rot: torch.Tensor) -> torch.Tensor:
    """Rotate (..., M, 3) point sets by (..., 3, 3) rotation matrices."""
    return points @ rot.transpose(-1, -2)


def normalize_points(points: torch.Tensor) -> torch.Tensor:
    """Zero the centroid and scale to unit RMS point norm."""
    centered = points - points.mean(dim=-2, keepdim=True)
    rms = centered.pow(2).sum(dim=-1).mean(dim=-1, keepdim=True).sqrt()
    if bool((rms < LATENT_EPS).any()):
        raise DegenerateLatentError("cannot normalize an all-zero latent code")
    return centered / rms.unsqueeze(-1)


def rotate_latent(g: LatentCode, r: Rotation3) -> LatentCode:
    return LatentCode(g.points @ r.matrix.T)


def normalize_latent(g: LatentCode) -> LatentCode:
    pts = torch.from_numpy(g.points)
    return LatentCode(normalize_points(pts).numpy())


@dataclass
class GeneratorConfig:
    """Architecture of one encoder-decoder generator.

    ``output_bias_init`` presets the decoder's output layer bias so the
    initial synthesis matches the sparse stroke density (sigmoid(-4) is
    about 2% on); starting at the background solution keeps the decoder's
    latent coupling alive instead of being crushed by early background
    gradients.
    """

    map_channels: int = 15
    map_size: int = 64
    base_channels: int = 32
    latent_points: int = 128  # M
    output_bias_init: float = -4.0

    def __post_init__(self):
        if self.map_size < 8 or self.map_size & (self.map_size - 1):
            raise ValueError(f"map_size must be a power of two >= 8, got {self.map_size}")
        if self.base_channels % 8:
            raise ValueError("base_channels must be a multiple of 8 (group norm)")

    @property
    def num_blocks(self) -> int:
        # Stride-2 blocks down to a 4x4 bottleneck.
        return int(math.log2(self.map_size // 4))

    @property
    def channel_widths(self) -> list:
        return [self.base_channels * 2**k for k in range(self.num_blocks)]


# GELU keeps the whole generator smooth, so analytic gradients match central
# finite differences at step 1e-3 (a ReLU stack cannot).
def _down_block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 4, stride=2, padding=1),
        nn.GroupNorm(8, cout),
        nn.GELU(),
    )


def _up_block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1),
        nn.GroupNorm(8, cout),
        nn.GELU(),
    )


class Encoder(nn.Module):
    """Skipless convolutional downsampling to an (M, 3) point latent."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        widths = cfg.channel_widths
        blocks = [_down_block(cfg.map_channels, widths[0])]
        blocks += [_down_block(widths[k], widths[k + 1]) for k in range(len(widths) - 1)]
        self.blocks = nn.Sequential(*blocks)
        self.to_latent = nn.Linear(widths[-1] * 16, 3 * cfg.latent_points)

    def forward(self, maps: torch.Tensor) -> torch.Tensor:
        if maps.shape[-3:] != (self.cfg.map_channels, self.cfg.map_size, self.cfg.map_size):
            raise ShapeMismatchError(
                f"encoder expects (*, {self.cfg.map_channels}, {self.cfg.map_size}, "
                f"{self.cfg.map_size}), got {tuple(maps.shape)}"
            )
        h = self.blocks(maps).flatten(1)
        return self.to_latent(h).view(-1, self.cfg.latent_points, 3)


class Decoder(nn.Module):
    """Mirror of the encoder; sigmoid keeps outputs strictly inside (0, 1)."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        widths = cfg.channel_widths
        self.from_latent = nn.Linear(3 * cfg.latent_points, widths[-1] * 16)
        blocks = [_up_block(widths[k], widths[k - 1]) for k in range(len(widths) - 1, 0, -1)]
        self.blocks = nn.Sequential(*blocks)
        self.to_maps = nn.ConvTranspose2d(widths[0], cfg.map_channels, 4, stride=2, padding=1)
        with torch.no_grad():
            self.to_maps.bias.fill_(cfg.output_bias_init)

    def forward(self, latent: torch.Tensor) -> torch.Tensor:
        if latent.shape[-2:] != (self.cfg.latent_points, 3):
            raise ShapeMismatchError(
                f"decoder expects (*, {self.cfg.latent_points}, 3), got {tuple(latent.shape)}"
            )
        h = self.from_latent(latent.flatten(1))
        h = h.view(-1, self.cfg.channel_widths[-1], 4, 4)
        return torch.sigmoid(self.to_maps(self.blocks(h)))


class Generator(nn.Module):
    """One direction of view synthesis: encode, rotate latent, decode."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)

    def forward(self, maps: torch.Tensor, rot: torch.Tensor) -> tuple:
        """Returns (synthesized target maps, latent, rotated latent)."""
        g = self.encoder(maps)
        g_rot = rotate_points(g, rot)
        return self.decoder(g_rot), g, g_rot


class BidirectionalModel(nn.Module):
    """Two generators with identical architecture and independent parameters.

    ``forward_gen`` maps source -> target under R_ij; ``backward_gen`` maps
    target -> source under R_ji.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        self.forward_gen = Generator(cfg)
        self.backward_gen = Generator(cfg)


class PoseRegressor(nn.Module):
    """Two fully-connected layers, widths 1024 and 48 (= 16 joints x 3).

    Predicts in units of ``output_scale_mm`` so weights stay O(1); with all
    parameters zero the output pose is exactly zero.
    """

    def __init__(self, latent_points: int = 128, hidden: int = 1024,
                 num_joints: int = 16, output_scale_mm: float = 1000.0):
        super().__init__()
        self.latent_points = latent_points
        self.num_joints = num_joints
        self.output_scale_mm = output_scale_mm
        self.fc1 = nn.Linear(3 * latent_points, hidden)
        self.fc2 = nn.Linear(hidden, 3 * num_joints)

    def forward(self, latent: torch.Tensor) -> torch.Tensor:
        if latent.shape[-2:] != (self.latent_points, 3):
            raise ShapeMismatchError(
                f"regressor expects (*, {self.latent_points}, 3), got {tuple(latent.shape)}"
            )
        h = torch.relu(self.fc1(latent.flatten(1)))
        out = self.fc2(h) * self.output_scale_mm
        return out.view(-1, self.num_joints, 3)


class BaselineRegressor(nn.Module):
    """Capacity-matched 2D-keypoint regressor, optionally with the latent
    injected into its hidden features by element-wise sum."""

    def __init__(self, num_joints: int = 16, hidden: int = 1024,
                 latent_points: int = None, output_scale_mm: float = 1000.0):
        super().__init__()
        self.num_joints = num_joints
        self.output_scale_mm = output_scale_mm
        self.fc1 = nn.Linear(2 * num_joints, hidden)
        self.fc2 = nn.Linear(hidden, 3 * num_joints)
        self.adapter = None
        if latent_points is not None:
            self.adapter = nn.Linear(3 * latent_points, hidden)

    def forward(self, keypoints: torch.Tensor, latent: torch.Tensor = None) -> torch.Tensor:
        h = self.fc1(keypoints.flatten(1))
        if self.adapter is not None:
            if latent is None:
                raise ValueError("this baseline was built with prior injection; pass a latent")
            h = inject_prior(self.adapter, latent, h)
        out = self.fc2(torch.relu(h)) * self.output_scale_mm
        return out.view(-1, self.num_joints, 3)


def inject_prior(adapter: nn.Linear, latent: torch.Tensor, baseline_features: torch.Tensor):
    """Element-wise sum of the affine-projected latent with baseline features."""
    proj = adapter(latent.flatten(1))
    if proj.shape != baseline_features.shape:
        raise ShapeMismatchError(
            f"adapter output {tuple(proj.shape)} does not match baseline features "
            f"{tuple(baseline_features.shape)}"
        )
    return proj + baseline_features


def build_model(cfg: GeneratorConfig, seed: int = 0) -> BidirectionalModel:
    """Construct with fan-in-scaled uniform init (torch default), seeded."""
    torch.manual_seed(seed)
    return BidirectionalModel(cfg)


def build_regressor(latent_points: int, seed: int = 0, num_joints: int = 16) -> PoseRegressor:
    torch.manual_seed(seed)
    return PoseRegressor(latent_points=latent_points, num_joints=num_joints)


def build_baseline(seed: int = 0, num_joints: int = 16, latent_points: int = None):
    torch.manual_seed(seed)
    return BaselineRegressor(num_joints=num_joints, latent_points=latent_points)


# -- numpy-facing wrappers -------------------------------------------------

def encode(generator: Generator, s: SkeletonMap) -> LatentCode:
    """Encode one skeleton map to its latent point set."""
    with torch.no_grad():
        maps = torch.from_numpy(np.asarray(s.channels, np.float32))[None]
        g = generator.encoder(maps)[0]
    return LatentCode(g.double().numpy())


def decode(generator: Generator, g: LatentCode) -> SkeletonMap:
    """Decode a latent point set to a soft skeleton map in (0, 1)."""
    with torch.no_grad():
        pts = torch.from_numpy(g.points).float()[None]
        maps = generator.decoder(pts)[0]
    return SkeletonMap(maps.numpy(), binary=False)


def regress_pose(regressor: PoseRegressor, g: LatentCode) -> Pose3D:
    """Map a latent to a root-relative pose in millimeters."""
    with torch.no_grad():
        pts = torch.from_numpy(g.points).float()[None]
        out = regressor(pts)[0]
    return Pose3D(out.double().numpy(), frame="root_relative")


# -- checkpoints -----------------------------------------------------------

CHECKPOINT_MANIFEST = "manifest.json"


def save_checkpoint(
    out_dir,
    modules: dict,
    kind: str,
    arch: dict,
    seed: int,
    step: int,
    extra: dict = None,
) -> Path:
    """Write named modules' state dicts as GART tensors plus a manifest."""
    out_dir = Path(out_dir)
    tdir = out_dir / "tensors"
    tdir.mkdir(parents=True, exist_ok=True)
    index = {}
    for prefix, module in modules.items():
        for key, value in module.state_dict().items():
            name = f"{prefix}.{key}"
            arr = value.detach().cpu().numpy()
            gart.write_tensor(tdir / f"{name}.gart", arr)
            index[name] = {"shape": list(arr.shape), "dtype": arr.dtype.str}
    manifest = {
        "kind": kind,
        "arch": arch,
        "seed": seed,
        "step": step,
        "tensors": index,
        "extra": extra or {},
    }
    (out_dir / CHECKPOINT_MANIFEST).write_text(
        json.dumps(manifest, sort_keys=True, separators=(",", ":"))
    )
    return out_dir


def load_checkpoint_manifest(ckpt_dir) -> dict:
    path = Path(ckpt_dir) / CHECKPOINT_MANIFEST
    if not path.exists():
        raise DatasetIOError(f"{ckpt_dir}: missing checkpoint manifest")
    return json.loads(path.read_text())


def _load_state(ckpt_dir, manifest: dict, prefix: str) -> dict:
    tdir = Path(ckpt_dir) / "tensors"
    state = {}
    for name, info in manifest["tensors"].items():
        if not name.startswith(prefix + "."):
            continue
        arr = gart.read_tensor(tdir / f"{name}.gart")
        if list(arr.shape) != info["shape"]:
            raise DatasetIOError(f"{name}: shape {arr.shape} != manifest {info['shape']}")
        state[name[len(prefix) + 1 :]] = torch.from_numpy(arr)
    if not state:
        raise DatasetIOError(f"{ckpt_dir}: no tensors with prefix {prefix!r}")
    return state


def load_model(ckpt_dir) -> tuple:
    """Rebuild a BidirectionalModel from a representation checkpoint."""
    manifest = load_checkpoint_manifest(ckpt_dir)
    cfg = GeneratorConfig(**manifest["arch"])
    model = BidirectionalModel(cfg)
    model.forward_gen.load_state_dict(_load_state(ckpt_dir, manifest, "forward_gen"))
    model.backward_gen.load_state_dict(_load_state(ckpt_dir, manifest, "backward_gen"))
    model.eval()
    return model, manifest


def load_regressor(ckpt_dir) -> tuple:
    manifest = load_checkpoint_manifest(ckpt_dir)
    arch = manifest["arch"]
    reg = PoseRegressor(
        latent_points=arch["latent_points"],
        hidden=arch.get("hidden", 1024),
        num_joints=arch.get("num_joints", 16),
        output_scale_mm=arch.get("output_scale_mm", 1000.0),
    )
    reg.load_state_dict(_load_state(ckpt_dir, manifest, "regressor"))
    reg.eval()
    return reg, manifest


def load_baseline(ckpt_dir) -> tuple:
    manifest = load_checkpoint_manifest(ckpt_dir)
    arch = manifest["arch"]
    model = BaselineRegressor(
        num_joints=arch.get("num_joints", 16),
        hidden=arch.get("hidden", 1024),
        latent_points=arch.get("latent_points"),
        output_scale_mm=arch.get("output_scale_mm", 1000.0),
    )
    model.load_state_dict(_load_state(ckpt_dir, manifest, "baseline"))
    model.eval()
    return model, manifest


def generator_config_dict(cfg: GeneratorConfig) -> dict:
    return asdict(cfg)
