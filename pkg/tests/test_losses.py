import numpy as np
import pytest
import torch
from scipy.spatial.transform import Rotation as ScipyRotation

from geomrep.errors import DegenerateLatentError, ShapeMismatchError
from geomrep.losses import LossWeights, consistency_loss, reconstruction_loss, total_loss
from geomrep.model import GeneratorConfig, build_model

REDUCED = GeneratorConfig(map_channels=15, map_size=16, base_channels=8, latent_points=4)


def reduced_batch(batch_size=3, seed=0, dtype=torch.float64):
    rng = np.random.default_rng(seed)
    src = torch.from_numpy(rng.uniform(0, 1, size=(batch_size, 15, 16, 16))).to(dtype)
    tgt = torch.from_numpy(
        (rng.uniform(0, 1, size=(batch_size, 15, 16, 16)) > 0.9).astype(np.float64)
    ).to(dtype)
    rots = torch.from_numpy(
        np.stack([ScipyRotation.random(random_state=100 + k).as_matrix() for k in range(batch_size)])
    ).to(dtype)
    return {
        "src": src,
        "tgt": tgt,
        "rot_ij": rots,
        "rot_ji": rots.transpose(1, 2).contiguous(),
    }


def finite_difference_check(loss_fn, model, h=1e-3, per_tensor=3, seed=1):
    """Max relative error between autograd and central differences over a
    random sample of parameters."""
    loss = loss_fn()
    model.zero_grad()
    loss.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _, p in model.named_parameters():
        if p.grad is None:
            continue
        for flat in rng.choice(p.numel(), size=min(per_tensor, p.numel()), replace=False):
            with torch.no_grad():
                old = p.view(-1)[flat].item()
                p.view(-1)[flat] = old + h
                up = float(loss_fn())
                p.view(-1)[flat] = old - h
                down = float(loss_fn())
                p.view(-1)[flat] = old
            numeric = (up - down) / (2 * h)
            analytic = float(p.grad.view(-1)[flat])
            rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-6)
            worst = max(worst, rel)
    return worst


class TestReconstructionLoss:
    def test_zero_when_equal(self):
        x = torch.rand(2, 15, 16, 16)
        assert float(reconstruction_loss(x, x)) == 0.0

    def test_constant_half_vs_binary_is_quarter(self):
        rng = np.random.default_rng(0)
        target = torch.from_numpy(
            (rng.uniform(size=(4, 15, 16, 16)) > 0.7).astype(np.float32)
        )
        pred = torch.full_like(target, 0.5)
        assert float(reconstruction_loss(pred, target)) == pytest.approx(0.25, abs=0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            reconstruction_loss(torch.zeros(1, 2, 3), torch.zeros(1, 3, 2))

    def test_gradient_matches_finite_differences(self):
        model = build_model(REDUCED, seed=0).double()
        batch = reduced_batch()

        def loss_fn():
            pred, _, _ = model.forward_gen(batch["src"], batch["rot_ij"])
            return reconstruction_loss(pred, batch["tgt"])

        assert finite_difference_check(loss_fn, model) <= 1e-4


class TestConsistencyLoss:
    def test_zero_when_equal(self):
        g = torch.randn(2, 8, 3, dtype=torch.float64)
        assert float(consistency_loss(g, g)) == pytest.approx(0.0, abs=1e-24)

    def test_scale_invariance_both_arguments(self):
        g1 = torch.randn(2, 8, 3, dtype=torch.float64)
        g2 = torch.randn(2, 8, 3, dtype=torch.float64)
        base = float(consistency_loss(g1, g2))
        for s in (0.2, 5.0):
            assert float(consistency_loss(s * g1, g2)) == pytest.approx(base, rel=1e-12)
            assert float(consistency_loss(g1, s * g2)) == pytest.approx(base, rel=1e-12)

    def test_symmetry(self):
        g1 = torch.randn(1, 8, 3, dtype=torch.float64)
        g2 = torch.randn(1, 8, 3, dtype=torch.float64)
        assert float(consistency_loss(g1, g2)) == pytest.approx(
            float(consistency_loss(g2, g1)), rel=1e-12
        )

    def test_degenerate_latent_rejected(self):
        with pytest.raises(DegenerateLatentError):
            consistency_loss(torch.zeros(1, 8, 3), torch.randn(1, 8, 3))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            consistency_loss(torch.randn(1, 8, 3), torch.randn(1, 4, 3))

    def test_gradient_matches_finite_differences(self):
        model = build_model(REDUCED, seed=0).double()
        batch = reduced_batch()

        def loss_fn():
            _, _, g_ij = model.forward_gen(batch["src"], batch["rot_ij"])
            _, g_j, _ = model.backward_gen(batch["tgt"], batch["rot_ji"])
            return consistency_loss(g_ij, g_j)

        assert finite_difference_check(loss_fn, model) <= 1e-4


class TestTotalLoss:
    def test_zero_weights_give_zero(self):
        model = build_model(REDUCED, seed=0).double()
        batch = reduced_batch()
        total, _ = total_loss(batch, model, LossWeights(0.0, 0.0, 0.0))
        assert float(total.detach()) == 0.0

    def test_unit_weights_additive(self):
        model = build_model(REDUCED, seed=1).double()
        batch = reduced_batch(seed=2)
        total, terms = total_loss(batch, model, LossWeights(1.0, 1.0, 1.0))
        assert float(total.detach()) == pytest.approx(
            terms["recon_fwd"] + terms["recon_bwd"] + terms["consistency"], rel=1e-12
        )

    def test_linear_in_weights(self):
        model = build_model(REDUCED, seed=1).double()
        batch = reduced_batch(seed=3)
        _, terms = total_loss(batch, model)
        w = LossWeights(0.5, 2.0, 0.25)
        total_w, _ = total_loss(batch, model, w)
        expected = (
            0.5 * terms["recon_fwd"] + 2.0 * terms["recon_bwd"] + 0.25 * terms["consistency"]
        )
        assert float(total_w.detach()) == pytest.approx(expected, rel=1e-10)

    def test_untrained_model_finite_positive(self):
        model = build_model(GeneratorConfig(base_channels=8, latent_points=16), seed=5)
        rng = np.random.default_rng(4)
        src = torch.from_numpy(
            (rng.uniform(size=(4, 15, 64, 64)) > 0.95).astype(np.float32)
        )
        tgt = torch.from_numpy(
            (rng.uniform(size=(4, 15, 64, 64)) > 0.95).astype(np.float32)
        )
        rots = torch.from_numpy(
            np.stack([ScipyRotation.random(random_state=k).as_matrix() for k in range(4)])
        ).float()
        batch = {"src": src, "tgt": tgt, "rot_ij": rots,
                 "rot_ji": rots.transpose(1, 2).contiguous()}
        total, terms = total_loss(batch, model)
        assert np.isfinite(terms["total"]) and terms["total"] > 0

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(-1.0, 1.0, 1.0)

    def test_gradient_matches_finite_differences(self):
        model = build_model(REDUCED, seed=0).double()
        batch = reduced_batch(seed=5)

        def loss_fn():
            return total_loss(batch, model)[0]

        assert finite_difference_check(loss_fn, model) <= 1e-4
