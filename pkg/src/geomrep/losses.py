"""Training objectives: bidirectional L2 view-synthesis reconstruction and
the latent representation-consistency penalty, plus their weighted total.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ShapeMismatchError
from .model import BidirectionalModel, normalize_points


@dataclass
class LossWeights:
    w_recon_fwd: float = 1.0
    w_recon_bwd: float = 1.0
    w_consistency: float = 1.0

    def __post_init__(self):
        for name in ("w_recon_fwd", "w_recon_bwd", "w_consistency"):
            v = float(getattr(self, name))
            if not (v >= 0.0 and v == v):
                raise ValueError(f"{name} must be a finite non-negative real, got {v}")
            setattr(self, name, v)


def reconstruction_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean over batch, channels, and pixels of the squared difference.

    Per-pixel averaging keeps the value resolution-independent; the batch
    mean supplies the 1/N averaging over training pairs.
    """
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target).pow(2).mean()


def consistency_loss(g_ij: torch.Tensor, g_j: torch.Tensor) -> torch.Tensor:
    """Squared distance between normalized latent point sets, summed over
    points (and averaged over a leading batch dimension if present).

    ``g_ij`` is the rotated source-branch latent, ``g_j`` the target-branch
    encoding; both are centroid/scale-normalized internally, so the value is
    invariant to positive rescaling of either argument.
    """
    if g_ij.shape != g_j.shape:
        raise ShapeMismatchError(f"shape mismatch: {tuple(g_ij.shape)} vs {tuple(g_j.shape)}")
    diff = normalize_points(g_ij) - normalize_points(g_j)
    per_sample = diff.pow(2).sum(dim=(-1, -2))
    return per_sample.mean()


def total_loss(
    batch: dict,
    model: BidirectionalModel,
    weights: LossWeights = None,
) -> tuple:
    """Weighted sum of both reconstruction directions and the consistency
    term; returns (total, per-term breakdown floats for logging).

    ``batch`` needs float tensors src, tgt (B, C, H, W) and rotations
    rot_ij, rot_ji (B, 3, 3); the forward branch synthesizes tgt from src
    under rot_ij, the backward branch src from tgt under rot_ji.
    """
    weights = weights or LossWeights()
    pred_tgt, _, g_ij = model.forward_gen(batch["src"], batch["rot_ij"])
    pred_src, g_j, _ = model.backward_gen(batch["tgt"], batch["rot_ji"])
    recon_fwd = reconstruction_loss(pred_tgt, batch["tgt"])
    recon_bwd = reconstruction_loss(pred_src, batch["src"])
    consistency = consistency_loss(g_ij, g_j)
    total = (
        weights.w_recon_fwd * recon_fwd
        + weights.w_recon_bwd * recon_bwd
        + weights.w_consistency * consistency
    )
    breakdown = {
        "recon_fwd": float(recon_fwd.detach()),
        "recon_bwd": float(recon_bwd.detach()),
        "consistency": float(consistency.detach()),
        "total": float(total.detach()),
    }
    return total, breakdown
