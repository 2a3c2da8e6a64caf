import json
from pathlib import Path

import numpy as np
import pytest
import torch

import geomrep.training as training_mod
from geomrep.model import GeneratorConfig, build_model, load_model, load_regressor
from geomrep.synthdata import DatasetReader
from geomrep.training import (
    LOSS_LOG_NAME,
    TrainConfig,
    TrainingDivergedError,
    train_baseline_regressor,
    train_regressor,
    train_representation,
)

SMALL_ARCH = GeneratorConfig(map_channels=15, map_size=64, base_channels=8, latent_points=16)


def small_config(**kw):
    base = dict(batch_size=8, steps=6, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def state_bytes(module) -> bytes:
    return b"".join(
        v.detach().numpy().tobytes() for _, v in sorted(module.state_dict().items())
    )


class TestTrainRepresentation:
    def test_zero_steps_checkpoint_equals_initialization(self, small_reader, tmp_path):
        cfg = small_config(steps=0)
        model, history = train_representation(
            small_reader, cfg, tmp_path / "ck", arch=SMALL_ARCH
        )
        assert history == []
        reference = build_model(SMALL_ARCH, seed=cfg.seed)
        loaded, manifest = load_model(tmp_path / "ck")
        assert manifest["step"] == 0
        assert state_bytes(loaded) == state_bytes(reference)

    def test_determinism_replay(self, small_reader, tmp_path):
        cfg = small_config(steps=8)
        m1, h1 = train_representation(small_reader, cfg, tmp_path / "a", arch=SMALL_ARCH)
        m2, h2 = train_representation(small_reader, cfg, tmp_path / "b", arch=SMALL_ARCH)
        assert state_bytes(m1) == state_bytes(m2)
        assert h1 == h2

    def test_loss_log_contrib_sums_to_total(self, small_reader, tmp_path):
        cfg = small_config(steps=5, weights={"w_recon_fwd": 1.0, "w_recon_bwd": 0.5,
                                             "w_consistency": 2.0})
        _, history = train_representation(small_reader, cfg, tmp_path / "ck", arch=SMALL_ARCH)
        log_lines = (tmp_path / "ck" / LOSS_LOG_NAME).read_text().splitlines()
        assert len(log_lines) == 5
        for line in log_lines:
            rec = json.loads(line)
            contrib = (
                rec["contrib_recon_fwd"]
                + rec["contrib_recon_bwd"]
                + rec["contrib_consistency"]
            )
            assert abs(contrib - rec["total"]) <= 1e-6

    def test_no_label_files_opened(self, small_dataset, tmp_path):
        reader = DatasetReader(small_dataset)
        train_representation(reader, small_config(), tmp_path / "ck", arch=SMALL_ARCH)
        assert not any("poses" in p.parts for p in reader.opened_files)

    def test_virtual_pairs_participate(self, small_reader, tmp_path):
        cfg = small_config(steps=2)
        indices = small_reader.select(kinds=("real", "virtual"))
        assert any(
            small_reader.record(i).get("kind") == "virtual" for i in indices
        )
        train_representation(
            small_reader, cfg, tmp_path / "ck", arch=SMALL_ARCH, indices=indices
        )

    def test_resume_monotone_step_counter(self, small_reader, tmp_path):
        out = tmp_path / "ck"
        train_representation(small_reader, small_config(steps=4), out, arch=SMALL_ARCH)
        _, manifest = load_model(out)
        assert manifest["step"] == 4
        train_representation(
            small_reader, small_config(steps=3), out, arch=SMALL_ARCH, resume=True
        )
        _, manifest = load_model(out)
        assert manifest["step"] == 7

    def test_nonfinite_loss_aborts_with_diagnostics(self, small_reader, tmp_path, monkeypatch):
        def poisoned(batch, model, weights=None):
            bad = torch.tensor(float("nan"), requires_grad=True)
            return bad, {"recon_fwd": float("nan"), "recon_bwd": 1.0,
                         "consistency": 1.0, "total": float("nan")}

        monkeypatch.setattr(training_mod, "total_loss", poisoned)
        with pytest.raises(TrainingDivergedError, match="recon_fwd"):
            train_representation(
                small_reader, small_config(steps=3), tmp_path / "ck", arch=SMALL_ARCH
            )

    def test_empty_split_rejected(self, small_reader, tmp_path):
        with pytest.raises(Exception, match="no training pairs"):
            train_representation(
                small_reader, small_config(), tmp_path / "ck", arch=SMALL_ARCH, indices=[]
            )


class TestTrainRegressor:
    @pytest.fixture()
    def encoder_ckpt(self, small_reader, tmp_path):
        out = tmp_path / "repr"
        train_representation(small_reader, small_config(steps=3), out, arch=SMALL_ARCH)
        return out

    def test_encoder_frozen_bit_exact(self, small_reader, encoder_ckpt, tmp_path):
        before = {
            p.name: p.read_bytes() for p in (Path(encoder_ckpt) / "tensors").glob("*.gart")
        }
        cfg = small_config(steps=10, label_budget=8)
        train_regressor(small_reader, encoder_ckpt, cfg, tmp_path / "pose")
        after = {
            p.name: p.read_bytes() for p in (Path(encoder_ckpt) / "tensors").glob("*.gart")
        }
        assert before == after

    def test_label_budget_zero_rejected(self, small_reader, encoder_ckpt, tmp_path):
        cfg = small_config(steps=2)
        with pytest.raises(ValueError, match="budget 0"):
            training_mod._pick_label_subset([1, 2, 3], 0, seed=0)
        # label_budget=0 on the config means "use all", so drive the error
        # through an explicitly empty candidate pool instead
        with pytest.raises(ValueError, match="budget"):
            train_regressor(small_reader, encoder_ckpt, cfg, tmp_path / "p", indices=[])

    def test_budget_exceeding_labels_rejected(self, small_reader, encoder_ckpt, tmp_path):
        cfg = small_config(steps=2, label_budget=10_000)
        with pytest.raises(ValueError, match="exceeds"):
            train_regressor(small_reader, encoder_ckpt, cfg, tmp_path / "p")

    def test_checkpoint_records_sample_ids(self, small_reader, encoder_ckpt, tmp_path):
        cfg = small_config(steps=4, label_budget=8)
        out = train_regressor(small_reader, encoder_ckpt, cfg, tmp_path / "pose")
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["extra"]["train_sample_ids"]) == 8
        assert manifest["extra"]["input_kind"] == "latent"
        reg, _ = load_regressor(out)
        assert reg.fc1.out_features == 1024


class TestBaselines:
    def test_keypoint_baseline_deterministic(self, small_reader, tmp_path):
        cfg = small_config(steps=6, label_budget=8)
        a = train_baseline_regressor(small_reader, cfg, tmp_path / "a")
        b = train_baseline_regressor(small_reader, cfg, tmp_path / "b")
        ta = sorted((a / "tensors").glob("*.gart"))
        tb = sorted((b / "tensors").glob("*.gart"))
        assert [p.read_bytes() for p in ta] == [p.read_bytes() for p in tb]

    def test_injection_baseline_needs_encoder(self, small_reader, tmp_path):
        cfg = small_config(steps=2, label_budget=8)
        with pytest.raises(Exception, match="encoder"):
            train_baseline_regressor(
                small_reader, cfg, tmp_path / "x", input_kind="latent+injection"
            )

    def test_unknown_input_kind(self, small_reader, tmp_path):
        with pytest.raises(ValueError, match="input_kind"):
            train_baseline_regressor(
                small_reader, small_config(), tmp_path / "x", input_kind="images"
            )


class TestTrainConfig:
    def test_serializable(self):
        cfg = TrainConfig()
        js = json.dumps(cfg.to_dict())
        back = TrainConfig(**json.loads(js))
        assert back.to_dict() == cfg.to_dict()

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(steps=-1)
        with pytest.raises(ValueError):
            TrainConfig(optimizer="lbfgs")
