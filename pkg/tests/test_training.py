import math
from dataclasses import replace

import numpy as np
import pytest
import torch

import hicfuse.training as training_module
from hicfuse.encoders import init_parameters
from hicfuse.errors import NumericError, ValidationError
from hicfuse.synthetic import SyntheticSpec, build_split
from hicfuse.training import (
    Checkpoint,
    PretrainModel,
    TaskModel,
    TrainConfig,
    WindowDataset,
    build_model,
    config_digest,
    finetune,
    load_checkpoint,
    load_pretrained_weights,
    predict,
    pretrain,
    save_checkpoint,
)


def loop_dataset(n=32, seed=0, window=8, track=400):
    rng = np.random.default_rng(seed)
    contacts = torch.from_numpy(rng.random((n, window, window))).float()
    tracks = torch.from_numpy(rng.random((n, track, 2))).float()
    labels = torch.from_numpy(rng.integers(0, 2, n).astype(np.float64)).float()
    return WindowDataset(contacts, tracks, "loop", labels)


def pair_dataset(n=32, seed=0, window=8, track=400):
    rng = np.random.default_rng(seed)
    contacts = torch.from_numpy(rng.random((n, window, window))).float()
    tracks = torch.from_numpy(rng.random((n, track, 2))).float()
    return WindowDataset(contacts, tracks)


class TestTrainConfig:
    def test_pretrain_with_task_rejected(self):
        with pytest.raises(ValidationError):
            TrainConfig(phase="pretrain", task="loop")

    def test_finetune_without_task_rejected(self):
        with pytest.raises(ValidationError):
            TrainConfig(phase="finetune")

    def test_contact_bimodal_leakage_guard(self):
        with pytest.raises(ValidationError, match="leak"):
            TrainConfig(phase="finetune", task="contact", input_mode="bimodal")

    def test_contact_infer_mode_allowed(self):
        config = TrainConfig(phase="finetune", task="contact", input_mode="infer_missing_hic")
        assert config.task == "contact"

    def test_reference_presets(self):
        pre = TrainConfig.reference_pretrain()
        assert (pre.learning_rate, pre.batch_size, pre.max_epochs) == (1e-5, 256, 500)
        fin = TrainConfig.reference_finetune("loop")
        assert (fin.batch_size, fin.max_epochs, fin.early_stop_patience) == (64, 200, 20)
        assert TrainConfig.reference_finetune("cage").learning_rate == 1e-4
        assert TrainConfig.reference_finetune("contact").input_mode == "infer_missing_hic"


class TestOptimizerStep:
    def test_adamw_matches_hand_formula(self):
        lr, beta1, beta2, wd, eps = 1e-2, 0.9, 0.999, 0.01, 1e-8
        theta0, target = 1.0, 3.0
        param = torch.nn.Parameter(torch.tensor([theta0]))
        optimizer = torch.optim.AdamW(
            [param], lr=lr, betas=(beta1, beta2), weight_decay=wd, eps=eps
        )
        loss = 0.5 * (param - target) ** 2
        loss.sum().backward()
        optimizer.step()

        grad = theta0 - target
        m_hat = grad  # m1 / (1 - beta1)
        v_hat = grad * grad  # v1 / (1 - beta2)
        expected = theta0 - lr * wd * theta0 - lr * m_hat / (math.sqrt(v_hat) + eps)
        assert float(param) == pytest.approx(expected, rel=1e-6)


class TestPretrain:
    def test_metrics_line_count(self, tiny_config, tmp_path):
        dataset = pair_dataset(64)
        config = TrainConfig(phase="pretrain", batch_size=32, max_epochs=2, seed=0)
        result = pretrain(dataset, config, tiny_config, out_dir=tmp_path)
        lines = (tmp_path / "pretrain_metrics.tsv").read_text().strip().splitlines()
        assert len(lines) == 2 * math.ceil(64 / 32)
        fields = lines[0].split("\t")
        assert len(fields) == 5  # step, l_con, l_orth, l_mapping, l_pretrain
        assert float(fields[4]) == pytest.approx(
            float(fields[1]) + float(fields[2]) + float(fields[3]), abs=1e-6
        )
        assert (tmp_path / "final.pt").exists() and (tmp_path / "best.pt").exists()

    def test_seed_reproducibility(self, tiny_config):
        dataset = pair_dataset(32)
        config = TrainConfig(phase="pretrain", batch_size=16, max_epochs=2, seed=5, learning_rate=1e-3)
        a = pretrain(dataset, config, tiny_config)
        b = pretrain(dataset, config, tiny_config)
        assert abs(a.final_loss - b.final_loss) <= 1e-6

    def test_empty_dataset_rejected(self, tiny_config):
        with pytest.raises(ValidationError):
            pretrain(
                WindowDataset(torch.zeros(0, 8, 8), torch.zeros(0, 400, 2)),
                TrainConfig(phase="pretrain"),
                tiny_config,
            )

    def test_nan_activation_aborts(self, tiny_config):
        contacts = torch.full((8, 8, 8), float("nan"))
        tracks = torch.rand(8, 400, 2)
        dataset = WindowDataset(contacts, tracks)
        config = TrainConfig(phase="pretrain", batch_size=8, max_epochs=1, seed=0)
        with pytest.raises(NumericError, match="stage"):
            pretrain(dataset, config, tiny_config)

    def test_nan_loss_aborts_with_step_index(self, tiny_config):
        # finite activations, non-finite target: the loop-level guard fires
        dataset = loop_dataset(16)
        dataset.targets[0] = float("nan")
        config = TrainConfig(
            phase="finetune", task="loop", batch_size=16, max_epochs=1, seed=0
        )
        with pytest.raises(NumericError, match="step 1"):
            finetune(dataset, dataset, config, tiny_config)

    def test_planted_correlation_loss_decreases(self, tiny_config):
        # paired structure: track windows derived from contact windows
        rng = np.random.default_rng(2)
        n = 48
        contacts = rng.random((n, 8, 8))
        tracks = np.repeat(contacts.reshape(n, 64, 1), 2, axis=2)
        tracks = np.tile(tracks, (1, 7, 1))[:, :400, :]
        dataset = WindowDataset(
            torch.from_numpy(contacts).float(), torch.from_numpy(tracks).float()
        )
        config = TrainConfig(
            phase="pretrain", batch_size=16, max_epochs=20, seed=1, learning_rate=1e-3
        )
        wins = 0
        for seed in range(5):
            result = pretrain(dataset, replace(config, seed=seed), tiny_config, out_dir=None)
            # compare first-epoch mean against final-epoch mean via fresh runs
            first = pretrain(
                dataset, replace(config, seed=seed, max_epochs=1), tiny_config
            ).final_loss
            if result.final_loss < first:
                wins += 1
        assert wins >= 4


class TestFinetune:
    def small_loop_run(self, tiny_config, tmp_path, **overrides):
        dataset = loop_dataset(32)
        val = loop_dataset(16, seed=9)
        config = TrainConfig(
            phase="finetune",
            task="loop",
            batch_size=16,
            max_epochs=3,
            early_stop_patience=5,
            learning_rate=1e-3,
            seed=0,
        )
        config = replace(config, **overrides)
        return finetune(dataset, val, config, tiny_config, out_dir=tmp_path)

    def test_epoch_summary_format(self, tiny_config, tmp_path):
        result = self.small_loop_run(tiny_config, tmp_path)
        lines = (tmp_path / "epoch_summary.tsv").read_text().strip().splitlines()
        assert len(lines) == result.epochs_run
        epoch, train_loss, val_loss = lines[0].split("\t")
        assert int(epoch) == 1 and float(train_loss) > 0 and float(val_loss) > 0

    def test_early_stopping_patience_semantics(self, tiny_config, monkeypatch):
        # strictly increasing validation loss from epoch 1 stops at epoch 3
        losses = iter([1.0, 2.0, 3.0, 4.0, 5.0])
        monkeypatch.setattr(training_module, "evaluate_loss", lambda *a, **k: next(losses))
        dataset = loop_dataset(16)
        config = TrainConfig(
            phase="finetune",
            task="loop",
            batch_size=16,
            max_epochs=50,
            early_stop_patience=2,
            seed=0,
        )
        result = finetune(dataset, dataset, config, tiny_config)
        assert result.epochs_run == 3
        assert result.best_checkpoint.best_metric == 1.0
        assert result.best_checkpoint.epoch == 1

    def test_best_checkpoint_not_worse_than_observed(self, tiny_config, tmp_path):
        result = self.small_loop_run(tiny_config, tmp_path, max_epochs=5)
        observed = [
            float(line.split("\t")[2])
            for line in (tmp_path / "epoch_summary.tsv").read_text().strip().splitlines()
        ]
        assert result.best_checkpoint.best_metric == pytest.approx(min(observed), abs=1e-8)

    def test_task_mismatch_rejected(self, tiny_config):
        dataset = loop_dataset(16)
        config = TrainConfig(phase="finetune", task="cage", seed=0)
        with pytest.raises(ValidationError, match="cage"):
            finetune(dataset, dataset, config, tiny_config)

    def test_linearly_separable_loop_set_learned(self, tiny_config):
        # positives carry a strong center block; negatives are flat noise
        rng = np.random.default_rng(4)
        n = 32
        contacts = rng.random((n, 8, 8)) * 0.1
        labels = np.zeros(n)
        labels[: n // 2] = 1.0
        contacts[: n // 2, 3:5, 3:5] += 3.0
        tracks = rng.random((n, 400, 2)) * 0.1
        tracks[: n // 2, 150:250, :] += 2.0
        dataset = WindowDataset(
            torch.from_numpy(contacts).float(),
            torch.from_numpy(tracks).float(),
            "loop",
            torch.from_numpy(labels).float(),
        )
        config = TrainConfig(
            phase="finetune",
            task="loop",
            batch_size=16,
            max_epochs=50,
            early_stop_patience=50,
            learning_rate=3e-3,
            seed=1,
        )
        result = finetune(dataset, dataset, config, tiny_config)
        assert result.best_checkpoint.best_metric < 0.1
        assert result.epochs_run <= 50


class TestCheckpointRoundTrip:
    def test_pretrain_resume_bitwise(self, tiny_config, tmp_path):
        dataset = pair_dataset(32, seed=3)
        base = TrainConfig(phase="pretrain", batch_size=16, max_epochs=3, seed=7, learning_rate=1e-3)

        straight = pretrain(dataset, base, tiny_config)

        two = pretrain(dataset, replace(base, max_epochs=2), tiny_config)
        path = tmp_path / "ckpt.pt"
        save_checkpoint(two.checkpoint, path)
        loaded = load_checkpoint(path)
        resumed = pretrain(dataset, base, tiny_config, resume_from=loaded)

        for key, tensor in straight.checkpoint.model_state.items():
            assert torch.equal(tensor, resumed.checkpoint.model_state[key]), key

    def test_finetune_resume_bitwise(self, tiny_config, tmp_path):
        train = loop_dataset(32, seed=5)
        val = loop_dataset(16, seed=6)
        base = TrainConfig(
            phase="finetune",
            task="loop",
            batch_size=16,
            max_epochs=3,
            early_stop_patience=10,
            seed=2,
            learning_rate=1e-3,
        )
        straight = finetune(train, val, base, tiny_config)
        two = finetune(train, val, replace(base, max_epochs=2), tiny_config)
        path = tmp_path / "ckpt.pt"
        save_checkpoint(two.checkpoint, path)
        resumed = finetune(train, val, base, tiny_config, resume_from=load_checkpoint(path))
        for key, tensor in straight.checkpoint.model_state.items():
            assert torch.equal(tensor, resumed.checkpoint.model_state[key]), key

    def test_checkpoint_fields_survive(self, tiny_config, tmp_path):
        dataset = pair_dataset(16)
        config = TrainConfig(phase="pretrain", batch_size=16, max_epochs=1, seed=0)
        result = pretrain(dataset, config, tiny_config, data_meta={"resolution_bp": 5000})
        path = tmp_path / "c.pt"
        save_checkpoint(result.checkpoint, path)
        loaded = load_checkpoint(path)
        assert loaded.kind == "pretrain"
        assert loaded.train_config == config
        assert loaded.encoder_config == tiny_config
        assert loaded.data_meta["resolution_bp"] == 5000
        assert loaded.digest == config_digest(config, tiny_config)


class TestPredict:
    def trained_loop_checkpoint(self, tiny_config):
        dataset = loop_dataset(16)
        config = TrainConfig(
            phase="finetune", task="loop", batch_size=16, max_epochs=1, seed=0
        )
        return finetune(dataset, dataset, config, tiny_config).best_checkpoint

    def test_batch_order_and_count(self, tiny_config):
        checkpoint = self.trained_loop_checkpoint(tiny_config)
        dataset = loop_dataset(3, seed=8)
        outputs = predict(checkpoint, dataset)
        assert outputs.shape == (3,)
        singles = [
            predict(checkpoint, loop_dataset(3, seed=8), batch_size=1)[k] for k in range(3)
        ]
        assert np.allclose(outputs, singles)

    def test_train_eval_forward_identical(self, tiny_config):
        # dropout is zero, so train and eval modes agree exactly
        model = TaskModel(tiny_config, TrainConfig(phase="finetune", task="loop", seed=0))
        init_parameters(model, 0)
        contact, track = torch.rand(2, 8, 8), torch.rand(2, 400, 2)
        model.train()
        with torch.no_grad():
            out_train = model(contact, track)
        model.eval()
        with torch.no_grad():
            out_eval = model(contact, track)
        assert torch.equal(out_train, out_eval)

    def test_infer_mode_with_zeroed_mapping_is_finite(self, tiny_config):
        checkpoint = self.trained_loop_checkpoint(tiny_config)
        model = build_model(checkpoint)
        with torch.no_grad():
            for param in model.mapping.parameters():
                param.zero_()
        with torch.no_grad():
            out = model(None, torch.rand(4, 400, 2), input_mode="infer_missing_hic")
        assert torch.isfinite(out).all()

    def test_pretrain_checkpoint_rejected(self, tiny_config):
        dataset = pair_dataset(16)
        config = TrainConfig(phase="pretrain", batch_size=16, max_epochs=1, seed=0)
        checkpoint = pretrain(dataset, config, tiny_config).checkpoint
        with pytest.raises(ValidationError):
            predict(checkpoint, loop_dataset(4))

    def test_bimodal_forward_requires_contact(self, tiny_config):
        model = TaskModel(tiny_config, TrainConfig(phase="finetune", task="loop", seed=0))
        with pytest.raises(ValidationError, match="contact-map input"):
            model(None, torch.rand(1, 400, 2))

    def test_track_only_model_cannot_infer(self, tiny_config):
        config = TrainConfig(
            phase="finetune", task="loop", input_mode="track_only", seed=0
        )
        model = TaskModel(tiny_config, config)
        with pytest.raises(ValidationError, match="mapping"):
            model(None, torch.rand(1, 400, 2), input_mode="infer_missing_hic")


class TestPretrainedTransfer:
    def test_overlapping_tensors_copied(self, tiny_config):
        dataset = pair_dataset(16)
        pre = pretrain(
            dataset,
            TrainConfig(phase="pretrain", batch_size=16, max_epochs=1, seed=0),
            tiny_config,
        ).checkpoint
        model = TaskModel(tiny_config, TrainConfig(phase="finetune", task="loop", seed=1))
        init_parameters(model, 1)
        copied = load_pretrained_weights(model, pre)
        assert copied > 0
        own = model.state_dict()
        for name, tensor in pre.model_state.items():
            if name in own:
                assert torch.equal(own[name], tensor)
        # the head is not part of the pretraining state
        assert not any(name.startswith("head.") for name in pre.model_state)
