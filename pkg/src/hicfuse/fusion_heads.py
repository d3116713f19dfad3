"""Modality fusion block, task decoders and the fine-tuning losses.

The fusion block treats the track stream as queries and the contact-map
stream (real or inferred) as keys/values. The loop head classifies the
pooled fusion output; the regression tasks share a 1-D U-Net style
decoder over the track encoder's skip connections, followed by either a
position-wise value head or a pairwise outer combination head that
reconstructs the full contact window.
"""

from __future__ import annotations

import torch
from torch import nn

from .encoders import Attention, EncoderConfig, FeedForward, TransformerBlock
from .errors import ValidationError

BCE_PROB_EPS = 1e-7


class FusionBlock(nn.Module):
    """Self-attention, contact-grounded cross-attention, feed-forward."""

    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.norm_self = nn.LayerNorm(dim)
        self.self_attn = Attention(dim, heads, dropout)
        self.norm_query = nn.LayerNorm(dim)
        self.norm_kv = nn.LayerNorm(dim)
        self.cross_attn = Attention(dim, heads, dropout)
        self.norm_ff = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, dropout)

    def forward(self, track_stream: torch.Tensor, contact_stream: torch.Tensor) -> torch.Tensor:
        x = track_stream + self.self_attn(self.norm_self(track_stream))
        x = x + self.cross_attn(self.norm_query(x), self.norm_kv(contact_stream))
        return x + self.ff(self.norm_ff(x))


class FusionStack(nn.Module):
    """T stacked fusion blocks producing the fused track-length sequence."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        dim = config.bottleneck_dim
        self.blocks = nn.ModuleList(
            FusionBlock(dim, config.attention_heads, config.dropout)
            for _ in range(config.blocks_per_layer)
        )

    def forward(self, track_concat: torch.Tensor, contact_like: torch.Tensor) -> torch.Tensor:
        if track_concat.shape[-1] != contact_like.shape[-1]:
            raise ValidationError(
                f"fusion inputs disagree on feature dim: "
                f"{track_concat.shape[-1]} vs {contact_like.shape[-1]}"
            )
        x = track_concat
        for block in self.blocks:
            x = block(x, contact_like)
        return x


class LoopHead(nn.Module):
    """Mean-pool over the sequence then a two-layer classifier to [0, 1]."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        dim = config.bottleneck_dim
        self.fc1 = nn.Linear(dim, dim // 2)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(dim // 2, 1)

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        pooled = fused.mean(dim=-2)
        logit = self.fc2(self.act(self.fc1(pooled))).squeeze(-1)
        return torch.sigmoid(logit)


class DecoderStage(nn.Module):
    """Transformer blocks, 2x nearest upsampling, skip concat and merge."""

    def __init__(self, in_dim: int, skip_dim: int, out_dim: int, config: EncoderConfig):
        super().__init__()
        self.blocks = nn.ModuleList(
            TransformerBlock(in_dim, config.attention_heads, config.dropout)
            for _ in range(config.blocks_per_layer)
        )
        self.up_proj = nn.Linear(in_dim, in_dim // 2)
        self.merge = nn.Linear(in_dim // 2 + skip_dim, out_dim)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        x = torch.repeat_interleave(x, 2, dim=1)
        x = self.up_proj(x)
        target_len = skip.shape[1]
        if x.shape[1] > target_len:
            x = x[:, :target_len, :]
        elif x.shape[1] < target_len:
            pad = x[:, -1:, :].expand(-1, target_len - x.shape[1], -1)
            x = torch.cat([x, pad], dim=1)
        return self.merge(torch.cat([x, skip], dim=-1))


class UnetDecoder(nn.Module):
    """Three-stage upsampling decoder with track-encoder skip connections.

    Consumes the fused bottleneck sequence and the track stages
    (x2, x1, x0); emits a length-L2 sequence at dimension 2C.
    """

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        dims = config.stage_dims  # (C, 2C, 4C, 8C)
        self.stages = nn.ModuleList(
            (
                DecoderStage(dims[3], dims[2], dims[2], config),
                DecoderStage(dims[2], dims[1], dims[1], config),
                DecoderStage(dims[1], dims[0], 2 * dims[0], config),
            )
        )

    def forward(
        self, fused: torch.Tensor, skips: tuple[torch.Tensor, torch.Tensor, torch.Tensor]
    ) -> torch.Tensor:
        expected_lengths = self.config.track_lengths[:3][::-1]  # (beta2, beta1, L2)
        x = fused
        for stage, skip, expected in zip(self.stages, skips, expected_lengths):
            if skip.shape[1] != expected:
                raise ValidationError(
                    f"skip length {skip.shape[1]} does not match encoder stage length {expected}"
                )
            x = stage(x, skip)
        return x


class CageHead(nn.Module):
    """Two position-wise feed-forward layers emitting one value per position."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        dim = 2 * config.base_dim
        self.fc1 = nn.Linear(dim, dim // 2)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(dim // 2, 1)

    def forward(self, decoded: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(decoded))).squeeze(-1)


class ContactHead(nn.Module):
    """Pairwise reconstruction of the contact window from split halves.

    The decoded sequence is split into x/y halves; each (i, j) cell mixes
    the two position vectors by element-wise addition and multiplication.
    ``pairwise_combine`` selects whether the two maps are summed (keeps the
    2C feature size) or concatenated (4C); ``symmetrize_output`` averages
    the prediction with its transpose.
    """

    def __init__(
        self,
        config: EncoderConfig,
        pairwise_combine: str = "sum",
        symmetrize_output: bool = False,
    ):
        super().__init__()
        if pairwise_combine not in ("sum", "concat"):
            raise ValidationError(f"unknown pairwise_combine mode {pairwise_combine!r}")
        self.pairwise_combine = pairwise_combine
        self.symmetrize_output = symmetrize_output
        dim = 2 * config.base_dim
        in_dim = dim if pairwise_combine == "sum" else 2 * dim
        self.fc1 = nn.Linear(in_dim, config.base_dim)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(config.base_dim, 1)

    def forward(self, decoded: torch.Tensor) -> torch.Tensor:
        length = decoded.shape[1]
        if length % 2 != 0:
            raise ValidationError(f"decoded sequence length {length} must be even")
        half = length // 2
        x_axis = decoded[:, :half, :].unsqueeze(2)  # (B, H, 1, 2C)
        y_axis = decoded[:, half:, :].unsqueeze(1)  # (B, 1, H, 2C)
        added = x_axis + y_axis
        multiplied = x_axis * y_axis
        if self.pairwise_combine == "sum":
            grid = added + multiplied
        else:
            grid = torch.cat([added, multiplied], dim=-1)
        out = self.fc2(self.act(self.fc1(grid))).squeeze(-1)
        if self.symmetrize_output:
            out = 0.5 * (out + out.transpose(-2, -1))
        return out


def mse_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error over every element and the batch."""
    if pred.shape != target.shape:
        raise ValidationError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return ((pred - target) ** 2).mean()


def bce_loss(prob: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
    """Binary cross entropy on probabilities, clamped away from {0, 1}."""
    if prob.shape != label.shape:
        raise ValidationError(f"shape mismatch: {tuple(prob.shape)} vs {tuple(label.shape)}")
    prob = prob.clamp(BCE_PROB_EPS, 1.0 - BCE_PROB_EPS)
    return -(label * prob.log() + (1.0 - label) * (1.0 - prob).log()).mean()
