"""Two-stage optimization: (1) representation learning on unlabeled view
pairs, (2) frozen-encoder pose regression on a small labeled subset, plus
the capacity-matched baselines used for paired comparisons.

Stage 1 never opens a label file; the dataset reader's open-file audit log
is checked after every run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .errors import GeomrepError, MissingInputError
from .geometry import Camera, Pose3D
from .losses import LossWeights, total_loss
from .model import (
    BidirectionalModel,
    GeneratorConfig,
    build_baseline,
    build_model,
    build_regressor,
    generator_config_dict,
    load_model,
    save_checkpoint,
)
from .skeleton import SkeletonMap, skeleton_iou
from .synthdata import DatasetReader

LOSS_LOG_NAME = "loss_log.jsonl"


class TrainingDivergedError(GeomrepError, RuntimeError):
    """Loss became non-finite; message carries step, term, and batch ids."""


@dataclass
class TrainConfig:
    """Optimization settings for either stage; JSON-serializable."""

    batch_size: int = 32
    steps: int = 2000
    learning_rate: float = 1e-3
    lr_decay_factor: float = 0.1
    lr_decay_at_fraction: float = 2.0 / 3.0
    optimizer: str = "adam"
    adam_betas: tuple = (0.9, 0.999)
    seed: int = 0
    checkpoint_every: int = 0  # 0 = only final
    weights: LossWeights = field(default_factory=LossWeights)
    # The consistency term only turns on once reconstruction has formed
    # input-dependent codes; switching it on at step 0 collapses both
    # encoders into a shared input-independent code.
    consistency_warmup_steps: int = 0
    # When > 0, the consistency term gets its own encoder-only Adam at this
    # learning rate instead of joining the summed loss. Adam normalizes
    # per-parameter update magnitudes, so under a single optimizer a
    # dominant consistency gradient erases recon features at any loss
    # weight; a separate small-lr step bounds its influence instead.
    consistency_lr: float = 0.0
    label_budget: int = 0  # stage 2: number of labeled samples, 0 = all
    finetune_encoder: bool = False
    deterministic: bool = True
    preload: bool = True
    early_stop_recon: float = None
    early_stop_iou: float = None
    early_stop_check_every: int = 250
    early_stop_min_steps: int = 0

    def __post_init__(self):
        if self.batch_size <= 0:
            raise ValueError("batch_size must be > 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d


def _make_optimizer(params, config: TrainConfig):
    if config.optimizer == "adam":
        return torch.optim.Adam(params, lr=config.learning_rate, betas=tuple(config.adam_betas))
    return torch.optim.SGD(params, lr=config.learning_rate)


def _lr_at(config: TrainConfig, step: int) -> float:
    decay_step = int(config.steps * config.lr_decay_at_fraction)
    if config.steps > 0 and step >= decay_step > 0:
        return config.learning_rate * config.lr_decay_factor
    return config.learning_rate


class PairBatcher:
    """Deterministic shuffled-epoch batching over dataset pair indices."""

    def __init__(self, reader: DatasetReader, indices, config: TrainConfig):
        if not indices:
            raise MissingInputError("no training pairs match the requested split")
        self.reader = reader
        self.indices = list(indices)
        self.batch_size = config.batch_size
        self.rng = np.random.default_rng(config.seed)
        self._order = []
        self._cache = {}
        if config.preload:
            for i in self.indices:
                src, tgt = reader.load_maps(i)
                rot = reader.load_rotation(i).astype(np.float32)
                self._cache[i] = (
                    src.astype(np.uint8),
                    tgt.astype(np.uint8),
                    rot,
                )

    def _load(self, i: int):
        if i in self._cache:
            src, tgt, rot = self._cache[i]
            return src.astype(np.float32), tgt.astype(np.float32), rot
        src, tgt = self.reader.load_maps(i)
        return src, tgt, self.reader.load_rotation(i).astype(np.float32)

    def next_batch(self) -> dict:
        while len(self._order) < self.batch_size:
            epoch = self.rng.permutation(len(self.indices)).tolist()
            self._order.extend(epoch)
        take, self._order = self._order[: self.batch_size], self._order[self.batch_size :]
        ids = [self.indices[k] for k in take]
        src, tgt, rot = zip(*(self._load(i) for i in ids))
        rot_ij = torch.from_numpy(np.stack(rot))
        return {
            "src": torch.from_numpy(np.stack(src)),
            "tgt": torch.from_numpy(np.stack(tgt)),
            "rot_ij": rot_ij,
            "rot_ji": rot_ij.transpose(1, 2).contiguous(),
            "ids": ids,
        }


def _check_finite(terms: dict, step: int, batch: dict):
    if not math.isfinite(terms["total"]):
        bad = [k for k in ("recon_fwd", "recon_bwd", "consistency")
               if not math.isfinite(terms[k])]
        raise TrainingDivergedError(
            f"non-finite loss at step {step}: terms={bad}, batch ids={batch['ids']}"
        )


def _two_phase_step(model, batch, w, opt_recon, opt_cons) -> dict:
    """Reconstruction step on all parameters, then a bounded consistency
    step on the encoders only (fresh forward pass after the first update)."""
    from .losses import consistency_loss, reconstruction_loss

    pred_tgt, _, _ = model.forward_gen(batch["src"], batch["rot_ij"])
    pred_src, _, _ = model.backward_gen(batch["tgt"], batch["rot_ji"])
    recon_f = reconstruction_loss(pred_tgt, batch["tgt"])
    recon_b = reconstruction_loss(pred_src, batch["src"])
    recon_total = w.w_recon_fwd * recon_f + w.w_recon_bwd * recon_b
    opt_recon.zero_grad()
    opt_cons.zero_grad()
    recon_total.backward()
    opt_recon.step()

    from .model import rotate_points

    if w.w_consistency > 0:
        g_ij = rotate_points(model.forward_gen.encoder(batch["src"]), batch["rot_ij"])
        g_j = model.backward_gen.encoder(batch["tgt"])
        cons = consistency_loss(g_ij, g_j)
        opt_recon.zero_grad()
        opt_cons.zero_grad()
        (w.w_consistency * cons).backward()
        opt_cons.step()
        cons_value = float(cons.detach())
    else:
        with torch.no_grad():
            g_ij = rotate_points(
                model.forward_gen.encoder(batch["src"]), batch["rot_ij"]
            )
            g_j = model.backward_gen.encoder(batch["tgt"])
            cons_value = float(consistency_loss(g_ij, g_j))

    return {
        "recon_fwd": float(recon_f.detach()),
        "recon_bwd": float(recon_b.detach()),
        "consistency": cons_value,
        "total": float(recon_total.detach()) + w.w_consistency * cons_value,
    }


def _train_set_quality(model: BidirectionalModel, batcher: PairBatcher, max_pairs: int = 64):
    """(mean recon fwd, mean recon bwd, mean IoU) over a train-set sample."""
    model.eval()
    ids = batcher.indices[:max_pairs]
    rf, rb, ious = [], [], []
    with torch.no_grad():
        for i in ids:
            src, tgt, rot = batcher._load(i)
            s = torch.from_numpy(src)[None]
            t = torch.from_numpy(tgt)[None]
            r = torch.from_numpy(rot)[None]
            pred_t, _, _ = model.forward_gen(s, r)
            pred_s, _, _ = model.backward_gen(t, r.transpose(1, 2).contiguous())
            rf.append(float((pred_t - t).pow(2).mean()))
            rb.append(float((pred_s - s).pow(2).mean()))
            ious.append(
                skeleton_iou(
                    SkeletonMap(pred_t[0].numpy(), binary=False),
                    SkeletonMap(tgt, binary=True),
                )
            )
    model.train()
    return float(np.mean(rf)), float(np.mean(rb)), float(np.mean(ious))


def train_representation(
    dataset,
    config: TrainConfig,
    out_dir,
    arch: GeneratorConfig = None,
    indices=None,
    resume: bool = False,
) -> tuple:
    """Stage 1: fit both generators on view pairs; no 3D labels consumed.

    Writes a resumable checkpoint plus a JSONL per-step loss log under
    ``out_dir`` and returns (model, history). ``indices`` restricts training
    to a subset of dataset pairs (split filtering).
    """
    reader = dataset if isinstance(dataset, DatasetReader) else DatasetReader(dataset)
    arch = arch or GeneratorConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if config.deterministic:
        torch.set_num_threads(max(1, torch.get_num_threads()))

    start_step = 0
    if resume and (out_dir / "manifest.json").exists():
        model, manifest = load_model(out_dir)
        start_step = manifest["step"]
        arch = GeneratorConfig(**manifest["arch"])
    else:
        model = build_model(arch, seed=config.seed)
    model.train()

    if indices is None:
        indices = reader.select(kinds=("real", "virtual"))
    audit_start = len(reader.opened_files)
    batcher = PairBatcher(reader, indices, config)
    opt = _make_optimizer(model.parameters(), config)
    opt_cons = None
    if config.consistency_lr > 0:
        enc_params = list(model.forward_gen.encoder.parameters()) + list(
            model.backward_gen.encoder.parameters()
        )
        opt_cons = torch.optim.Adam(
            enc_params, config.consistency_lr, betas=tuple(config.adam_betas)
        )
    torch.manual_seed(config.seed + 1)

    log_path = out_dir / LOSS_LOG_NAME
    log_f = open(log_path, "a" if resume else "w")
    history = []
    w = config.weights

    def checkpoint(step):
        save_checkpoint(
            out_dir,
            {"forward_gen": model.forward_gen, "backward_gen": model.backward_gen},
            kind="representation",
            arch=generator_config_dict(arch),
            seed=config.seed,
            step=step,
            extra={"train_config": config.to_dict(), "train_pair_ids": list(indices)},
        )

    try:
        step = start_step
        checkpoint(step)
        while step < start_step + config.steps:
            lr = _lr_at(config, step - start_step)
            for group in opt.param_groups:
                group["lr"] = lr
            w_now = w
            if step < config.consistency_warmup_steps:
                w_now = LossWeights(w.w_recon_fwd, w.w_recon_bwd, 0.0)
            batch = batcher.next_batch()
            if opt_cons is None:
                total, terms = total_loss(batch, model, w_now)
                _check_finite(terms, step, batch)
                opt.zero_grad()
                total.backward()
                opt.step()
            else:
                terms = _two_phase_step(model, batch, w_now, opt, opt_cons)
                _check_finite(terms, step, batch)
            step += 1
            contrib = {
                "contrib_recon_fwd": w_now.w_recon_fwd * terms["recon_fwd"],
                "contrib_recon_bwd": w_now.w_recon_bwd * terms["recon_bwd"],
                "contrib_consistency": w_now.w_consistency * terms["consistency"],
            }
            record = {
                "step": step,
                "lr": lr,
                "recon_fwd": terms["recon_fwd"],
                "recon_bwd": terms["recon_bwd"],
                "consistency": terms["consistency"],
                **contrib,
                "total": sum(contrib.values()),
            }
            history.append(record)
            log_f.write(json.dumps(record) + "\n")
            if config.checkpoint_every and step % config.checkpoint_every == 0:
                checkpoint(step)
            if (
                config.early_stop_recon is not None
                and step >= config.early_stop_min_steps
                and step % config.early_stop_check_every == 0
            ):
                rf, rb, iou = _train_set_quality(model, batcher)
                if rf <= config.early_stop_recon and rb <= config.early_stop_recon and (
                    config.early_stop_iou is None or iou >= config.early_stop_iou
                ):
                    break
        checkpoint(step)
    finally:
        log_f.close()

    opened = [p for p in reader.opened_files[audit_start:] if "poses" in p.parts]
    if opened:
        raise AssertionError(f"stage 1 must not read labels, but opened {opened[:3]}")
    model.eval()
    return model, history


# -- stage 2 feature/target assembly ----------------------------------------

def pose_in_camera_frame(pose: Pose3D, cam: Camera, root: int = 0) -> np.ndarray:
    """Root-relative camera-frame joint positions (P, 3), millimeters."""
    joints_cam = cam.world_to_camera(pose.joints)
    return joints_cam - joints_cam[root]


def normalized_keypoints(points: np.ndarray, cam: Camera) -> np.ndarray:
    """Pixel keypoints to dimensionless tangent coordinates."""
    return (points - cam.principal_point) / cam.focal


def encode_sources(model: BidirectionalModel, reader: DatasetReader, indices,
                   batch_size: int = 256) -> torch.Tensor:
    """Frozen-encoder latents of the source maps, (N, M, 3) float32."""
    model.eval()
    out = []
    with torch.no_grad():
        for lo in range(0, len(indices), batch_size):
            chunk = indices[lo : lo + batch_size]
            maps = np.stack([reader.load_maps(i)[0] for i in chunk])
            out.append(model.forward_gen.encoder(torch.from_numpy(maps)))
    return torch.cat(out)


def keypoint_inputs(reader: DatasetReader, indices) -> torch.Tensor:
    """Exact source-view 2D keypoints (projected labels), normalized."""
    from .geometry import project  # local import keeps module load light

    feats = []
    for i in indices:
        cam = reader.source_camera(i)
        pts = project(reader.load_pose(i), cam)
        feats.append(normalized_keypoints(pts, cam).astype(np.float32))
    return torch.from_numpy(np.stack(feats))


def pose_targets(reader: DatasetReader, indices) -> torch.Tensor:
    """Root-relative source-camera-frame pose labels, (N, P, 3) float32 mm."""
    targets = [
        pose_in_camera_frame(reader.load_pose(i), reader.source_camera(i)) for i in indices
    ]
    return torch.from_numpy(np.stack(targets).astype(np.float32))


def _pick_label_subset(indices, budget: int, seed: int):
    if budget < 0:
        raise ValueError("label budget must be >= 0")
    if budget == 0:
        raise ValueError("label budget 0: stage 2 needs labeled samples")
    if budget > len(indices):
        raise ValueError(f"label budget {budget} exceeds available labels ({len(indices)})")
    rng = np.random.default_rng(seed)
    return [indices[k] for k in rng.choice(len(indices), size=budget, replace=False)]


def _train_mlp(net, inputs, targets, config: TrainConfig, extra_inputs=None):
    """Minibatch MSE training in output_scale units."""
    opt = _make_optimizer([p for p in net.parameters() if p.requires_grad], config)
    rng = np.random.default_rng(config.seed + 7)
    n = inputs[0].shape[0] if isinstance(inputs, tuple) else inputs.shape[0]
    scale = net.output_scale_mm
    net.train()
    order = []
    for step in range(config.steps):
        lr = _lr_at(config, step)
        for group in opt.param_groups:
            group["lr"] = lr
        while len(order) < config.batch_size:
            order.extend(rng.permutation(n).tolist())
        take, order = order[: config.batch_size], order[config.batch_size :]
        idx = torch.tensor(take, dtype=torch.long)
        if isinstance(inputs, tuple):
            pred = net(inputs[0][idx], inputs[1][idx])
        else:
            pred = net(inputs[idx])
        loss = ((pred - targets[idx]) / scale).pow(2).mean()
        if not math.isfinite(float(loss.detach())):
            raise TrainingDivergedError(f"non-finite regression loss at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
    net.eval()
    return net


def train_regressor(
    dataset,
    encoder_checkpoint,
    config: TrainConfig,
    out_dir,
    indices=None,
) -> Path:
    """Stage 2: latent-to-pose regression with the encoder frozen.

    ``indices`` is the labeled candidate pool (defaults to real train-subject
    pairs); ``config.label_budget`` picks the subset actually used.
    """
    reader = dataset if isinstance(dataset, DatasetReader) else DatasetReader(dataset)
    model, model_manifest = load_model(encoder_checkpoint)
    for p in model.parameters():
        p.requires_grad_(False)

    if indices is None:
        subjects = reader.manifest["subjects"]["train"]
        indices = reader.select(subjects=subjects, kinds=("real",))
    budget = config.label_budget or len(indices)
    chosen = _pick_label_subset(list(indices), budget, config.seed)

    latents = encode_sources(model, reader, chosen)
    targets = pose_targets(reader, chosen)
    num_joints = targets.shape[1]

    reg = build_regressor(
        model.cfg.latent_points, seed=config.seed, num_joints=num_joints
    )
    if config.finetune_encoder:
        for p in model.forward_gen.encoder.parameters():
            p.requires_grad_(True)
    _train_mlp(reg, latents, targets, config)

    out_dir = Path(out_dir)
    save_checkpoint(
        out_dir,
        {"regressor": reg},
        kind="pose_regressor",
        arch={
            "latent_points": model.cfg.latent_points,
            "hidden": 1024,
            "num_joints": num_joints,
            "output_scale_mm": reg.output_scale_mm,
        },
        seed=config.seed,
        step=config.steps,
        extra={
            "encoder_checkpoint": str(encoder_checkpoint),
            "encoder_step": model_manifest["step"],
            "train_config": config.to_dict(),
            "train_sample_ids": [reader.record(i)["id"] for i in chosen],
            "input_kind": "latent",
        },
    )
    return out_dir


def train_baseline_regressor(
    dataset,
    config: TrainConfig,
    out_dir,
    input_kind: str = "keypoints2d",
    encoder_checkpoint=None,
    indices=None,
) -> Path:
    """Capacity-matched baseline: regress pose from exact 2D keypoints,
    optionally with the latent prior summed into its hidden features."""
    if input_kind not in ("keypoints2d", "latent+injection"):
        raise ValueError(f"unknown input_kind {input_kind!r}")
    reader = dataset if isinstance(dataset, DatasetReader) else DatasetReader(dataset)
    if indices is None:
        subjects = reader.manifest["subjects"]["train"]
        indices = reader.select(subjects=subjects, kinds=("real",))
    budget = config.label_budget or len(indices)
    chosen = _pick_label_subset(list(indices), budget, config.seed)

    kps = keypoint_inputs(reader, chosen)
    targets = pose_targets(reader, chosen)
    num_joints = targets.shape[1]

    latent_points = None
    extra = {"input_kind": input_kind, "train_config": config.to_dict(),
             "train_sample_ids": [reader.record(i)["id"] for i in chosen]}
    if input_kind == "latent+injection":
        if encoder_checkpoint is None:
            raise MissingInputError("latent+injection baseline needs an encoder checkpoint")
        model, _ = load_model(encoder_checkpoint)
        for p in model.parameters():
            p.requires_grad_(False)
        latents = encode_sources(model, reader, chosen)
        latent_points = model.cfg.latent_points
        extra["encoder_checkpoint"] = str(encoder_checkpoint)
        net = build_baseline(seed=config.seed, num_joints=num_joints,
                             latent_points=latent_points)
        _train_mlp(net, (kps, latents), targets, config)
    else:
        net = build_baseline(seed=config.seed, num_joints=num_joints)
        _train_mlp(net, kps, targets, config)

    out_dir = Path(out_dir)
    save_checkpoint(
        out_dir,
        {"baseline": net},
        kind="baseline_regressor",
        arch={
            "num_joints": num_joints,
            "hidden": 1024,
            "latent_points": latent_points,
            "output_scale_mm": net.output_scale_mm,
        },
        seed=config.seed,
        step=config.steps,
        extra=extra,
    )
    return out_dir
