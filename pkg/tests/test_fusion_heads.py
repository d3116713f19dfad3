import math

import pytest
import torch
import torch.nn.functional as F

from gradcheck_util import check_gradients
from hicfuse.encoders import EncoderConfig, init_parameters
from hicfuse.errors import ValidationError
from hicfuse.fusion_heads import (
    CageHead,
    ContactHead,
    DecoderStage,
    FusionBlock,
    FusionStack,
    LoopHead,
    UnetDecoder,
    bce_loss,
    mse_loss,
)


def zero_module(module: torch.nn.Module) -> torch.nn.Module:
    with torch.no_grad():
        for param in module.parameters():
            param.zero_()
    return module


class TestFusion:
    def test_zero_value_projection_ignores_contact_stream(self, tiny_config):
        torch.manual_seed(0)
        stack = init_parameters(FusionStack(tiny_config), seed=0)
        with torch.no_grad():
            for block in stack.blocks:
                block.cross_attn.v_proj.weight.zero_()
                block.cross_attn.v_proj.bias.zero_()
        dim = tiny_config.bottleneck_dim
        track = torch.rand(2, 3, dim)
        out_a = stack(track, torch.rand(2, 5, dim))
        out_b = stack(track, torch.rand(2, 5, dim))
        assert torch.allclose(out_a, out_b, atol=1e-6)

    def test_contact_permutation_invariance_without_reencoding(self, tiny_config):
        # softmax attention sums over key/value positions, so a joint
        # permutation of the contact stream cannot change the output;
        # position information enters upstream via the encoder embeddings
        stack = init_parameters(FusionStack(tiny_config), seed=1)
        dim = tiny_config.bottleneck_dim
        track = torch.rand(1, 3, dim)
        contact = torch.rand(1, 5, dim)
        out = stack(track, contact)
        out_permuted = stack(track, contact[:, torch.tensor([4, 3, 2, 1, 0])])
        assert torch.allclose(out, out_permuted, atol=1e-5)

    def test_contact_content_changes_output(self, tiny_config):
        stack = init_parameters(FusionStack(tiny_config), seed=1)
        dim = tiny_config.bottleneck_dim
        track = torch.rand(1, 3, dim)
        out_a = stack(track, torch.rand(1, 5, dim))
        out_b = stack(track, torch.rand(1, 5, dim))
        assert not torch.allclose(out_a, out_b)

    def test_default_config_shapes(self):
        config = EncoderConfig()
        stack = FusionStack(config)
        fused = stack(torch.rand(1, 13, 1024), torch.rand(1, 16, 1024))
        assert fused.shape == (1, 13, 1024)
        decoder = UnetDecoder(config)
        skips = (torch.rand(1, 25, 512), torch.rand(1, 50, 256), torch.rand(1, 100, 128))
        decoded = decoder(fused, skips)
        assert decoded.shape == (1, 100, 256)

    def test_feature_dim_mismatch_rejected(self, tiny_config):
        stack = FusionStack(tiny_config)
        with pytest.raises(ValidationError):
            stack(torch.rand(1, 3, tiny_config.bottleneck_dim), torch.rand(1, 5, 8))


class TestLoopHead:
    def test_zero_weights_probability_half(self, tiny_config):
        head = zero_module(LoopHead(tiny_config))
        prob = head(torch.rand(3, 2, tiny_config.bottleneck_dim))
        assert torch.allclose(prob, torch.full((3,), 0.5))

    def test_large_logit_saturates(self, tiny_config):
        head = zero_module(LoopHead(tiny_config))
        with torch.no_grad():
            head.fc2.bias.fill_(20.0)
        prob = head(torch.rand(2, 2, tiny_config.bottleneck_dim))
        assert torch.all(prob >= 1.0 - 1e-8)

    def test_open_interval_for_finite_logits(self, tiny_config):
        head = init_parameters(LoopHead(tiny_config), seed=0)
        prob = head(torch.rand(8, 2, tiny_config.bottleneck_dim))
        assert torch.all(prob > 0.0) and torch.all(prob < 1.0)


class TestDecoderStage:
    def test_upsample_crop_rule(self):
        config = EncoderConfig(
            window_side=8,
            patch_size=2,
            base_dim=2,
            blocks_per_layer=1,
            track_length=400,
            track_stage0_length=8,
            attention_heads=1,
        )
        stage = zero_module(DecoderStage(in_dim=4, skip_dim=2, out_dim=2, config=config))
        with torch.no_grad():
            stage.up_proj.weight.copy_(torch.tensor([[1.0, 0, 0, 0], [0, 1.0, 0, 0]]))
            stage.merge.weight.copy_(torch.tensor([[1.0, 0, 0, 0], [0, 1.0, 0, 0]]))
        x = torch.arange(13, dtype=torch.float32).reshape(1, 13, 1).expand(1, 13, 4).clone()
        skip = torch.zeros(1, 25, 2)
        out = stage(x, skip)
        assert out.shape == (1, 25, 2)
        # nearest-neighbour x2 then crop: position k comes from input k // 2
        for k in (0, 1, 7, 24):
            assert torch.allclose(out[0, k], torch.full((2,), float(k // 2)))

    def test_pad_when_upsample_short(self):
        config = EncoderConfig(
            window_side=8,
            patch_size=2,
            base_dim=2,
            blocks_per_layer=1,
            track_length=400,
            track_stage0_length=8,
            attention_heads=1,
        )
        stage = DecoderStage(in_dim=4, skip_dim=2, out_dim=2, config=config)
        out = stage(torch.rand(1, 3, 4), torch.rand(1, 8, 2))  # 3 -> 6 -> pad to 8
        assert out.shape == (1, 8, 2)

    def test_skip_length_mismatch_rejected(self, tiny_config):
        decoder = UnetDecoder(tiny_config)
        betas = tiny_config.track_lengths
        fused = torch.rand(1, betas[3], tiny_config.bottleneck_dim)
        bad_skips = (
            torch.rand(1, betas[2] + 1, tiny_config.stage_dims[2]),
            torch.rand(1, betas[1], tiny_config.stage_dims[1]),
            torch.rand(1, betas[0], tiny_config.stage_dims[0]),
        )
        with pytest.raises(ValidationError):
            decoder(fused, bad_skips)

    def test_stage_lengths_tiny_config(self, tiny_config):
        decoder = init_parameters(UnetDecoder(tiny_config), seed=0)
        betas = tiny_config.track_lengths  # (8, 4, 2, 1)
        dims = tiny_config.stage_dims
        fused = torch.rand(2, betas[3], dims[3])
        skips = (
            torch.rand(2, betas[2], dims[2]),
            torch.rand(2, betas[1], dims[1]),
            torch.rand(2, betas[0], dims[0]),
        )
        out = decoder(fused, skips)
        assert out.shape == (2, betas[0], 2 * dims[0])


class TestCageHead:
    def test_zero_weights_zero_output(self, tiny_config):
        head = zero_module(CageHead(tiny_config))
        out = head(torch.rand(2, 8, 2 * tiny_config.base_dim))
        assert torch.all(out == 0.0)

    def test_output_length_matches_positions(self, tiny_config):
        head = init_parameters(CageHead(tiny_config), seed=1)
        out = head(torch.rand(3, 8, 2 * tiny_config.base_dim))
        assert out.shape == (3, 8)

    def test_position_locality(self, tiny_config):
        head = init_parameters(CageHead(tiny_config), seed=2)
        decoded = torch.rand(1, 8, 2 * tiny_config.base_dim)
        base = head(decoded)
        bumped = decoded.clone()
        bumped[0, 3] += 1.0
        out = head(bumped)
        changed = (out != base).squeeze(0)
        assert changed[3]
        assert not changed[torch.arange(8) != 3].any()


class TestContactHead:
    def build_probe_head(self, config) -> ContactHead:
        head = zero_module(ContactHead(config))
        with torch.no_grad():
            head.fc1.weight[0, 0] = 1.0  # read channel 0 of the pairwise grid
            head.fc2.weight[0, 0] = 1.0
        return head

    def test_zero_input_bias_map(self, tiny_config):
        head = init_parameters(ContactHead(tiny_config), seed=3)
        out = head(torch.zeros(1, 16, 2 * tiny_config.base_dim))
        assert out.shape == (1, 8, 8)
        assert torch.allclose(out, out[0, 0, 0] * torch.ones_like(out))

    def test_add_plus_multiply_combination(self, tiny_config):
        head = self.build_probe_head(tiny_config)
        decoded = torch.zeros(1, 16, 2 * tiny_config.base_dim)
        decoded[0, 2, 0] = 1.0  # x-half position 2
        decoded[0, 8 + 5, 0] = 1.0  # y-half position 5
        with torch.no_grad():
            out = head(decoded)
        gelu = F.gelu
        # matched cell: (1 + 1) + (1 * 1) = 3 before the head
        assert out[0, 2, 5] == pytest.approx(float(gelu(torch.tensor(3.0))), abs=1e-6)
        # half-matched cells: 1 + 0 = 1
        assert out[0, 2, 0] == pytest.approx(float(gelu(torch.tensor(1.0))), abs=1e-6)
        assert out[0, 0, 5] == pytest.approx(float(gelu(torch.tensor(1.0))), abs=1e-6)
        assert out[0, 0, 0] == pytest.approx(0.0, abs=1e-7)

    def test_default_shape_is_window(self):
        config = EncoderConfig()
        head = ContactHead(config)
        out = head(torch.rand(1, 100, 256))
        assert out.shape == (1, 50, 50)

    def test_symmetrize_flag(self, tiny_config):
        head = init_parameters(ContactHead(tiny_config, symmetrize_output=True), seed=4)
        out = head(torch.rand(2, 16, 2 * tiny_config.base_dim))
        assert torch.equal(out, out.transpose(-2, -1))

    def test_concat_combination_mode(self, tiny_config):
        head = init_parameters(ContactHead(tiny_config, pairwise_combine="concat"), seed=5)
        out = head(torch.rand(1, 16, 2 * tiny_config.base_dim))
        assert out.shape == (1, 8, 8)

    def test_odd_length_rejected(self, tiny_config):
        head = ContactHead(tiny_config)
        with pytest.raises(ValidationError):
            head(torch.rand(1, 15, 2 * tiny_config.base_dim))


class TestLosses:
    def test_mse_zero_for_exact(self):
        pred = torch.rand(3, 4)
        assert float(mse_loss(pred, pred.clone())) == 0.0

    def test_bce_half_is_log_two(self):
        prob = torch.full((4,), 0.5)
        label = torch.tensor([0.0, 1.0, 0.0, 1.0])
        assert float(bce_loss(prob, label)) == pytest.approx(math.log(2.0), abs=1e-6)

    def test_bce_point_nine(self):
        prob = torch.tensor([0.9], dtype=torch.float64)
        label = torch.tensor([1.0], dtype=torch.float64)
        assert float(bce_loss(prob, label)) == pytest.approx(-math.log(0.9), rel=1e-9)

    def test_bce_clamped_finite_at_bounds(self):
        prob = torch.tensor([0.0, 1.0])
        label = torch.tensor([1.0, 0.0])
        assert math.isfinite(float(bce_loss(prob, label)))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            mse_loss(torch.rand(2, 3), torch.rand(3, 2))


class TestHeadGradients:
    def test_loop_head_through_fusion(self, tiny_config):
        torch.manual_seed(0)
        stack = init_parameters(FusionStack(tiny_config), seed=0).double()
        head = init_parameters(LoopHead(tiny_config), seed=1).double()
        dim = tiny_config.bottleneck_dim
        track = torch.randn(3, 2, dim, dtype=torch.float64)
        contact = torch.randn(3, 4, dim, dtype=torch.float64)
        labels = torch.tensor([1.0, 0.0, 1.0], dtype=torch.float64)

        def fn():
            return bce_loss(head(stack(track, contact)), labels)

        check_gradients(fn, [track, contact])

    def test_cage_head_through_decoder(self, tiny_config):
        torch.manual_seed(1)
        decoder = init_parameters(UnetDecoder(tiny_config), seed=2).double()
        head = init_parameters(CageHead(tiny_config), seed=3).double()
        betas = tiny_config.track_lengths
        dims = tiny_config.stage_dims
        fused = torch.randn(1, betas[3], dims[3], dtype=torch.float64)
        skips = [
            torch.randn(1, betas[2], dims[2], dtype=torch.float64),
            torch.randn(1, betas[1], dims[1], dtype=torch.float64),
            torch.randn(1, betas[0], dims[0], dtype=torch.float64),
        ]
        target = torch.randn(1, betas[0], dtype=torch.float64)

        def fn():
            return mse_loss(head(decoder(fused, tuple(skips))), target)

        check_gradients(fn, [fused] + skips)
