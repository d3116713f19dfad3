import math

import numpy as np
import pytest
import torch

from gradcheck_util import check_gradients
from hicfuse.crossmodal import (
    InteractionBlock,
    MappingBlock,
    adaptive_pool_sequence,
    contrastive_loss,
    contrastive_pair_loss,
    mapping_loss,
    orthogonal_loss,
    pretrain_loss,
)
from hicfuse.errors import ValidationError


def unit_rows(matrix: torch.Tensor) -> torch.Tensor:
    return matrix / matrix.norm(dim=-1, keepdim=True)


class TestInteractionBlock:
    def test_zero_weights_zero_projections(self, tiny_config):
        block = InteractionBlock(tiny_config)
        with torch.no_grad():
            for param in block.parameters():
                param.zero_()
        c3 = tiny_config.bottleneck_dim
        out = block(torch.rand(2, 1, c3), torch.rand(2, 1, c3))
        assert torch.all(out.contact_invariant == 0.0)
        assert torch.all(out.pooled_track_specific == 0.0)

    def test_identity_first_half_selection(self, tiny_config):
        block = InteractionBlock(tiny_config)
        c3 = tiny_config.bottleneck_dim
        c2 = c3 // 2
        with torch.no_grad():
            block.contact_to_invariant.weight.copy_(
                torch.cat([torch.eye(c2), torch.zeros(c2, c2)], dim=1)
            )
            block.contact_to_invariant.bias.zero_()
        bottleneck = torch.rand(1, 3, c3)
        out = block(bottleneck, torch.rand(1, 2, c3))
        assert torch.allclose(out.contact_invariant, bottleneck[..., :c2])

    def test_concat_layout(self, tiny_config):
        block = InteractionBlock(tiny_config)
        c2 = tiny_config.bottleneck_dim // 2
        out = block(
            torch.rand(2, 3, tiny_config.bottleneck_dim),
            torch.rand(2, 4, tiny_config.bottleneck_dim),
        )
        assert torch.equal(out.contact_concat[..., :c2], out.contact_invariant)
        assert torch.equal(out.contact_concat[..., c2:], out.contact_specific)
        assert torch.equal(out.track_concat[..., :c2], out.track_invariant)
        assert torch.equal(out.track_concat[..., c2:], out.track_specific)

    def test_pooled_vectors_are_sequence_means(self, tiny_config):
        block = InteractionBlock(tiny_config)
        out = block(
            torch.rand(2, 3, tiny_config.bottleneck_dim),
            torch.rand(2, 4, tiny_config.bottleneck_dim),
        )
        assert torch.allclose(out.pooled_contact_invariant, out.contact_invariant.mean(dim=1))
        assert torch.allclose(out.pooled_track_specific, out.track_specific.mean(dim=1))


class TestContrastivePairLoss:
    def test_identical_rows_log_j(self):
        for j in (2, 4, 8):
            batch = torch.ones(j, 6)
            loss = contrastive_pair_loss(batch, batch)
            assert float(loss) == pytest.approx(math.log(j), abs=1e-6)

    def test_orthonormal_closed_form(self):
        a = torch.eye(2, dtype=torch.float64)
        loss = contrastive_pair_loss(a, a, temperature=0.07)
        expected = math.log1p(math.exp(-1.0 / 0.07))  # about 6.2e-7
        assert float(loss) == pytest.approx(expected, rel=1e-6)

    def test_common_permutation_invariance(self):
        rng = torch.Generator().manual_seed(0)
        a = torch.rand(6, 5, generator=rng)
        b = torch.rand(6, 5, generator=rng)
        perm = torch.randperm(6, generator=rng)
        base = contrastive_pair_loss(a, b)
        permuted = contrastive_pair_loss(a[perm], b[perm])
        assert float(base) == pytest.approx(float(permuted), abs=1e-12)

    def test_small_batch_rejected(self):
        with pytest.raises(ValidationError):
            contrastive_pair_loss(torch.ones(1, 4), torch.ones(1, 4))

    def test_zero_norm_row_rejected(self):
        a = torch.ones(3, 4)
        a[1] = 0.0
        with pytest.raises(ValidationError):
            contrastive_pair_loss(a, torch.ones(3, 4))

    def test_nonnegative_on_random_batches(self):
        rng = torch.Generator().manual_seed(1)
        for _ in range(20):
            a = torch.randn(5, 7, generator=rng)
            b = torch.randn(5, 7, generator=rng)
            assert float(contrastive_pair_loss(a, b)) >= 0.0

    def test_log_j_iff_uniform_logits(self):
        rng = torch.Generator().manual_seed(2)
        a = torch.randn(4, 6, generator=rng)
        b = torch.randn(4, 6, generator=rng)
        loss = contrastive_pair_loss(a, b)
        assert abs(float(loss) - math.log(4)) > 1e-6  # generic batch differs


class TestContrastiveLoss:
    def test_swap_symmetry_exact(self):
        rng = torch.Generator().manual_seed(3)
        e = torch.randn(5, 8, generator=rng)
        m = torch.randn(5, 8, generator=rng)
        assert float(contrastive_loss(e, m)) == pytest.approx(
            float(contrastive_loss(m, e)), abs=1e-12
        )

    def test_identical_aligned_batches(self):
        batch = unit_rows(torch.randn(4, 8, generator=torch.Generator().manual_seed(4)))
        assert float(contrastive_loss(batch, batch.clone())) <= math.log(4) + 1e-9

    def test_cross_matched_batch_is_worse(self):
        # sample 1's track strongly matches sample 2's contact embedding
        aligned = torch.eye(2)
        crossed = torch.tensor([[0.0, 1.0], [1.0, 0.0]])
        base = contrastive_loss(aligned, aligned.clone())
        worse = contrastive_loss(aligned, crossed)
        assert float(worse) > float(base)


class TestOrthogonalLoss:
    def test_orthogonal_pairs_zero(self):
        ms = torch.tensor([[1.0, 0.0]])
        mi = torch.tensor([[0.0, 1.0]])
        assert float(orthogonal_loss(ms, mi, ms, mi)) == pytest.approx(0.0, abs=1e-12)

    def test_identical_unit_vectors_one(self):
        v = torch.tensor([[0.6, 0.8]])
        assert float(orthogonal_loss(v, v, v, v)) == pytest.approx(1.0, abs=1e-7)

    def test_half_cosine(self):
        a = torch.tensor([[1.0, 0.0]])
        b = torch.tensor([[0.5, math.sqrt(3) / 2]])  # cosine 0.5
        assert float(orthogonal_loss(a, b, a, b)) == pytest.approx(0.25, abs=1e-7)

    def test_bounded_unit_interval(self):
        rng = torch.Generator().manual_seed(5)
        for _ in range(20):
            vectors = [torch.randn(6, 4, generator=rng) for _ in range(4)]
            value = float(orthogonal_loss(*vectors))
            assert 0.0 <= value <= 1.0

    def test_raw_variant_can_be_negative(self):
        a = torch.tensor([[1.0, 0.0]])
        b = torch.tensor([[-1.0, 0.0]])
        assert float(orthogonal_loss(a, b, a, b, squared=False)) == pytest.approx(-1.0)

    def test_batch_permutation_invariance(self):
        rng = torch.Generator().manual_seed(6)
        vectors = [torch.randn(5, 4, generator=rng) for _ in range(4)]
        perm = torch.randperm(5, generator=rng)
        base = float(orthogonal_loss(*vectors))
        permuted = float(orthogonal_loss(*[v[perm] for v in vectors]))
        assert base == pytest.approx(permuted, abs=1e-12)


class TestAdaptivePooling:
    def test_equal_lengths_identity(self):
        x = torch.rand(1, 5, 3)
        assert torch.equal(adaptive_pool_sequence(x, 5), x)

    def test_pair_means(self):
        x = torch.tensor([[[1.0], [2.0], [3.0], [4.0]]])
        out = adaptive_pool_sequence(x, 2)
        assert out.squeeze().tolist() == [1.5, 3.5]

    def test_index_rule_16_to_13(self):
        x = torch.rand(2, 16, 4, dtype=torch.float64)
        out = adaptive_pool_sequence(x, 13)
        n, m = 16, 13
        for k in range(m):
            lo = math.floor(k * n / m)
            hi = math.ceil((k + 1) * n / m)
            assert torch.allclose(out[:, k], x[:, lo:hi].mean(dim=1))
        # position 0 averages exactly input rows [0, 2)
        assert torch.allclose(out[:, 0], x[:, 0:2].mean(dim=1))


class TestMappingBlock:
    def test_lengths_and_dims(self, tiny_config):
        block = MappingBlock(tiny_config)
        alpha3 = tiny_config.contact_lengths[-1]
        beta3 = tiny_config.track_lengths[-1]
        c3 = tiny_config.bottleneck_dim
        m2e, e2m = block(torch.rand(2, alpha3, c3), torch.rand(2, beta3, c3))
        assert m2e.shape == (2, beta3, c3)
        assert e2m.shape == (2, alpha3, c3)


class TestMappingLoss:
    def test_exact_mapping_zero(self):
        x = torch.rand(2, 3, 4)
        y = torch.rand(2, 5, 4)
        assert float(mapping_loss(y, y, x, x)) == 0.0

    def test_unit_offset(self):
        zeros = torch.zeros(2, 3, 4)
        ones = torch.ones(2, 3, 4)
        assert float(mapping_loss(ones, zeros, ones, zeros)) == pytest.approx(1.0)

    def test_epsilon_shift(self):
        eps = 1e-3
        target_a = torch.rand(2, 3, 4, dtype=torch.float64)
        target_b = torch.rand(2, 5, 4, dtype=torch.float64)
        loss = mapping_loss(target_b + eps, target_b, target_a + eps, target_a)
        assert float(loss) == pytest.approx(eps**2, rel=1e-9)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            mapping_loss(torch.rand(1, 2, 3), torch.rand(1, 3, 3), torch.rand(1, 2, 3), torch.rand(1, 2, 3))


class TestPretrainLoss:
    def build_embeddings(self, tiny_config, seed=0, batch=8):
        torch.manual_seed(seed)
        block = InteractionBlock(tiny_config)
        c3 = tiny_config.bottleneck_dim
        alpha3 = tiny_config.contact_lengths[-1]
        beta3 = tiny_config.track_lengths[-1]
        emb = block(torch.rand(batch, alpha3, c3), torch.rand(batch, beta3, c3))
        mapping = MappingBlock(tiny_config)
        m2e, e2m = mapping(emb.contact_concat, emb.track_concat)
        return emb, m2e, e2m

    def test_total_is_sum_of_components(self, tiny_config):
        emb, m2e, e2m = self.build_embeddings(tiny_config)
        total, report = pretrain_loss(emb, m2e, e2m)
        assert report.total == pytest.approx(
            report.contrastive + report.orthogonal + report.mapping, abs=1e-6
        )
        assert float(total.detach()) == pytest.approx(report.total, abs=1e-6)

    def test_zero_embeddings_surface_normalization_error(self, tiny_config):
        block = InteractionBlock(tiny_config)
        with torch.no_grad():
            for param in block.parameters():
                param.zero_()
        c3 = tiny_config.bottleneck_dim
        emb = block(torch.rand(4, 1, c3), torch.rand(4, 1, c3))
        with pytest.raises(ValidationError, match="zero-norm"):
            pretrain_loss(emb, emb.track_concat, emb.contact_concat)

    def test_recomputation_oracle_random_batch(self, tiny_config):
        emb, m2e, e2m = self.build_embeddings(tiny_config, seed=1)
        _, report = pretrain_loss(emb, m2e, e2m, temperature=0.07)

        def np_pair(a, b, tau=0.07):
            a = a / np.linalg.norm(a, axis=1, keepdims=True)
            b = b / np.linalg.norm(b, axis=1, keepdims=True)
            logits = a @ b.T / tau
            log_soft = np.diag(logits) - np.log(np.exp(logits).sum(axis=1))
            return -log_soft.mean()

        e = emb.pooled_track_invariant.detach().numpy().astype(np.float64)
        m = emb.pooled_contact_invariant.detach().numpy().astype(np.float64)
        expected_con = 0.5 * (np_pair(e, m) + np_pair(m, e))
        assert report.contrastive == pytest.approx(expected_con, rel=1e-5)

        def np_cos(u, v):
            u = u / np.linalg.norm(u, axis=1, keepdims=True)
            v = v / np.linalg.norm(v, axis=1, keepdims=True)
            return (u * v).sum(axis=1)

        ms = emb.pooled_contact_specific.detach().numpy().astype(np.float64)
        mi = emb.pooled_contact_invariant.detach().numpy().astype(np.float64)
        es = emb.pooled_track_specific.detach().numpy().astype(np.float64)
        ei = emb.pooled_track_invariant.detach().numpy().astype(np.float64)
        expected_orth = 0.5 * ((np_cos(ms, mi) ** 2).mean() + (np_cos(es, ei) ** 2).mean())
        assert report.orthogonal == pytest.approx(expected_orth, rel=1e-5)

        expected_map = 0.5 * (
            ((m2e.detach().numpy() - emb.track_concat.detach().numpy()) ** 2).mean()
            + ((e2m.detach().numpy() - emb.contact_concat.detach().numpy()) ** 2).mean()
        )
        assert report.mapping == pytest.approx(expected_map, rel=1e-5)


class TestGradients:
    def test_pair_loss_gradient(self):
        torch.manual_seed(0)
        a = torch.randn(4, 6, dtype=torch.float64)
        b = torch.randn(4, 6, dtype=torch.float64)
        check_gradients(lambda: contrastive_pair_loss(a, b), [a, b])

    def test_orthogonal_loss_gradient(self):
        torch.manual_seed(1)
        vectors = [torch.randn(3, 5, dtype=torch.float64) for _ in range(4)]
        check_gradients(lambda: orthogonal_loss(*vectors), vectors)

    def test_mapping_loss_gradient(self):
        torch.manual_seed(2)
        m2e = torch.randn(2, 3, 4, dtype=torch.float64)
        e_t = torch.randn(2, 3, 4, dtype=torch.float64)
        e2m = torch.randn(2, 5, 4, dtype=torch.float64)
        m_t = torch.randn(2, 5, 4, dtype=torch.float64)
        check_gradients(lambda: mapping_loss(m2e, e_t, e2m, m_t), [m2e, e_t, e2m, m_t])
