"""Hierarchical transformer encoders for contact maps and signal tracks.

The contact-map encoder patchifies the 2-D window ViT-style and refines it
through three transformer layers, each followed by 2x2 patch merging that
doubles the feature dimension. The track encoder condenses the long 1-D
input with a convolution/max-pool frontend, then applies the same
transformer hierarchy with pairwise 1-D merging. Odd stage lengths are
handled by edge-replication padding, so every merge halves the side with
ceiling rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import NumericError, ValidationError

NUM_ENCODER_LAYERS = 3
FEEDFORWARD_EXPANSION = 4
POS_EMBED_STD = 0.02


def _ceil_half(n: int) -> int:
    return (n + 1) // 2


@dataclass(frozen=True)
class EncoderConfig:
    """Shared hyper-parameters of both encoders and the downstream blocks."""

    window_side: int = 50  # contact window side H (= W)
    patch_size: int = 2
    base_dim: int = 128
    blocks_per_layer: int = 2
    track_length: int = 5000  # L1
    track_channels: int = 2  # O
    track_stage0_length: int = 100  # L2
    attention_heads: int = 4
    dropout: float = 0.0
    conv_kernel: int = 9
    conv_pool_factors: tuple[int, ...] = (5, 5, 2, 1)

    def __post_init__(self):
        if self.window_side < self.patch_size or self.window_side % self.patch_size != 0:
            raise ValidationError(
                f"window side {self.window_side} must be divisible by patch size {self.patch_size}"
            )
        if self.base_dim % self.attention_heads != 0:
            raise ValidationError(
                f"base dim {self.base_dim} must be divisible by {self.attention_heads} heads"
            )
        if self.track_length % self.track_stage0_length != 0:
            raise ValidationError("track length must be divisible by its stage-0 length")
        pool_total = math.prod(self.conv_pool_factors)
        if len(self.conv_pool_factors) != 4 or pool_total * self.track_stage0_length != self.track_length:
            raise ValidationError(
                f"conv pool factors {self.conv_pool_factors} must be 4 factors reducing "
                f"{self.track_length} to {self.track_stage0_length}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.conv_kernel % 2 != 1:
            raise ValidationError("conv kernel width must be odd (same padding)")

    @property
    def n_patches(self) -> int:
        side = self.window_side // self.patch_size
        return side * side

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size

    @property
    def grid_sides(self) -> tuple[int, ...]:
        """Patch-grid side per stage: (g0, g1, g2, g3)."""
        sides = [self.window_side // self.patch_size]
        for _ in range(NUM_ENCODER_LAYERS):
            sides.append(_ceil_half(sides[-1]))
        return tuple(sides)

    @property
    def contact_lengths(self) -> tuple[int, ...]:
        """Contact sequence length per stage: (N, alpha_1, alpha_2, alpha_3)."""
        return tuple(side * side for side in self.grid_sides)

    @property
    def track_lengths(self) -> tuple[int, ...]:
        """Track sequence length per stage: (L2, beta_1, beta_2, beta_3)."""
        lengths = [self.track_stage0_length]
        for _ in range(NUM_ENCODER_LAYERS):
            lengths.append(_ceil_half(lengths[-1]))
        return tuple(lengths)

    @property
    def stage_dims(self) -> tuple[int, ...]:
        """Feature dimension per stage: (C, 2C, 4C, 8C)."""
        return tuple(self.base_dim * (2**i) for i in range(NUM_ENCODER_LAYERS + 1))

    @property
    def bottleneck_dim(self) -> int:
        return self.stage_dims[-1]


@dataclass
class ModalStages:
    """Per-stage embeddings of one encoder (batch-first tensors)."""

    x0: torch.Tensor
    x1: torch.Tensor
    x2: torch.Tensor
    x3: torch.Tensor
    bottleneck: torch.Tensor

    def stages(self) -> tuple[torch.Tensor, ...]:
        return (self.x0, self.x1, self.x2, self.x3, self.bottleneck)


@dataclass
class StageEmbeddings:
    """Outputs of one dual-encoder forward pass."""

    contact: ModalStages
    track: ModalStages


def patchify(values: torch.Tensor, patch_size: int) -> torch.Tensor:
    """Split square windows into flattened patches.

    Accepts (H, W) or (B, H, W); returns (B, N, P*P) with patches ordered
    row-major over the patch grid and each patch flattened row-major.
    """
    if values.dim() == 2:
        values = values.unsqueeze(0)
    batch, height, width = values.shape
    if height != width:
        raise ValidationError(f"window must be square, got {height}x{width}")
    if height % patch_size != 0:
        raise ValidationError(f"side {height} not divisible by patch size {patch_size}")
    side = height // patch_size
    patches = values.reshape(batch, side, patch_size, side, patch_size)
    patches = patches.permute(0, 1, 3, 2, 4)
    return patches.reshape(batch, side * side, patch_size * patch_size)


class Attention(nn.Module):
    """Multi-head scaled dot-product attention with separate q/k/v maps."""

    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        if dim % heads != 0:
            raise ValidationError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, query_src: torch.Tensor, kv_src: torch.Tensor | None = None) -> torch.Tensor:
        if kv_src is None:
            kv_src = query_src
        batch, q_len, dim = query_src.shape
        kv_len = kv_src.shape[1]

        def split(x: torch.Tensor, length: int) -> torch.Tensor:
            return x.reshape(batch, length, self.heads, self.head_dim).transpose(1, 2)

        q = split(self.q_proj(query_src), q_len)
        k = split(self.k_proj(kv_src), kv_len)
        v = split(self.v_proj(kv_src), kv_len)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        weights = self.drop(torch.softmax(scores, dim=-1))
        out = (weights @ v).transpose(1, 2).reshape(batch, q_len, dim)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, dropout: float = 0.0):
        super().__init__()
        hidden = FEEDFORWARD_EXPANSION * dim
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)
        self.act = nn.GELU()
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.drop(self.act(self.fc1(x))))


class TransformerBlock(nn.Module):
    """Pre-layer-norm self-attention block with residual connections."""

    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.norm_attn = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads, dropout)
        self.norm_ff = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm_attn(x))
        return x + self.ff(self.norm_ff(x))


class PatchMerge2d(nn.Module):
    """2x2 neighbour concatenation + linear projection to the doubled dim.

    Odd grid sides are edge-replicated to the next even side first, so the
    output side is ceil(side / 2).
    """

    def __init__(self, dim: int):
        super().__init__()
        self.proj = nn.Linear(4 * dim, 2 * dim)

    def forward(self, x: torch.Tensor, side: int) -> torch.Tensor:
        batch, length, dim = x.shape
        if length != side * side:
            raise ValidationError(f"sequence length {length} does not match grid side {side}")
        grid = x.reshape(batch, side, side, dim)
        if side % 2 == 1:
            grid = torch.cat([grid, grid[:, -1:, :, :]], dim=1)
            grid = torch.cat([grid, grid[:, :, -1:, :]], dim=2)
            side += 1
        out_side = side // 2
        grid = grid.reshape(batch, out_side, 2, out_side, 2, dim)
        grid = grid.permute(0, 1, 3, 2, 4, 5).reshape(batch, out_side * out_side, 4 * dim)
        return self.proj(grid)


class PairMerge1d(nn.Module):
    """Adjacent-pair concatenation + linear projection to the doubled dim."""

    def __init__(self, dim: int):
        super().__init__()
        self.proj = nn.Linear(2 * dim, 2 * dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        batch, length, dim = x.shape
        if length % 2 == 1:
            x = torch.cat([x, x[:, -1:, :]], dim=1)
            length += 1
        x = x.reshape(batch, length // 2, 2 * dim)
        return self.proj(x)


def _check_finite(x: torch.Tensor, where: str) -> None:
    if not torch.isfinite(x).all():
        raise NumericError(f"non-finite activation at {where}")


class ContactEncoder(nn.Module):
    """Patch-based hierarchical encoder for contact-map windows."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        dims = config.stage_dims
        self.patch_proj = nn.Linear(config.patch_dim, config.base_dim)
        self.pos_embedding = nn.Parameter(torch.zeros(config.n_patches, config.base_dim))
        self.layers = nn.ModuleList()
        self.merges = nn.ModuleList()
        for i in range(NUM_ENCODER_LAYERS):
            self.layers.append(
                nn.ModuleList(
                    TransformerBlock(dims[i], config.attention_heads, config.dropout)
                    for _ in range(config.blocks_per_layer)
                )
            )
            self.merges.append(PatchMerge2d(dims[i]))
        self.bottleneck = nn.ModuleList(
            TransformerBlock(dims[-1], config.attention_heads, config.dropout)
            for _ in range(config.blocks_per_layer)
        )

    def forward(self, values: torch.Tensor) -> ModalStages:
        if values.dim() == 2:
            values = values.unsqueeze(0)
        if values.shape[-2:] != (self.config.window_side, self.config.window_side):
            raise ValidationError(
                f"expected {self.config.window_side}x{self.config.window_side} windows, "
                f"got {tuple(values.shape[-2:])}"
            )
        x = self.patch_proj(patchify(values, self.config.patch_size)) + self.pos_embedding
        stages = [x]
        sides = self.config.grid_sides
        for i, (blocks, merge) in enumerate(zip(self.layers, self.merges)):
            for block in blocks:
                x = block(x)
            x = merge(x, sides[i])
            _check_finite(x, f"contact encoder stage {i + 1}")
            stages.append(x)
        for block in self.bottleneck:
            x = block(x)
        _check_finite(x, "contact encoder bottleneck")
        return ModalStages(stages[0], stages[1], stages[2], stages[3], x)


class TrackEncoder(nn.Module):
    """Convolutional frontend + hierarchical transformer for signal tracks."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        dims = config.stage_dims
        pad = config.conv_kernel // 2
        convs = []
        in_channels = config.track_channels
        for factor in config.conv_pool_factors:
            convs.append(nn.Conv1d(in_channels, config.base_dim, config.conv_kernel, padding=pad))
            convs.append(nn.GELU())
            if factor > 1:
                convs.append(nn.MaxPool1d(factor))
            in_channels = config.base_dim
        self.frontend = nn.Sequential(*convs)
        self.pos_embedding = nn.Parameter(torch.zeros(config.track_stage0_length, config.base_dim))
        self.layers = nn.ModuleList()
        self.merges = nn.ModuleList()
        for i in range(NUM_ENCODER_LAYERS):
            self.layers.append(
                nn.ModuleList(
                    TransformerBlock(dims[i], config.attention_heads, config.dropout)
                    for _ in range(config.blocks_per_layer)
                )
            )
            self.merges.append(PairMerge1d(dims[i]))
        self.bottleneck = nn.ModuleList(
            TransformerBlock(dims[-1], config.attention_heads, config.dropout)
            for _ in range(config.blocks_per_layer)
        )

    def forward(self, values: torch.Tensor) -> ModalStages:
        if values.dim() == 2:
            values = values.unsqueeze(0)
        expected = (self.config.track_length, self.config.track_channels)
        if values.shape[-2:] != expected:
            raise ValidationError(
                f"expected {expected[0]}x{expected[1]} track windows, got {tuple(values.shape[-2:])}"
            )
        x = self.frontend(values.transpose(1, 2)).transpose(1, 2)
        x = x + self.pos_embedding
        stages = [x]
        for i, (blocks, merge) in enumerate(zip(self.layers, self.merges)):
            for block in blocks:
                x = block(x)
            x = merge(x)
            _check_finite(x, f"track encoder stage {i + 1}")
            stages.append(x)
        for block in self.bottleneck:
            x = block(x)
        _check_finite(x, "track encoder bottleneck")
        return ModalStages(stages[0], stages[1], stages[2], stages[3], x)


class DualEncoder(nn.Module):
    """Both modality encoders bundled for one forward pass."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.contact_encoder = ContactEncoder(config)
        self.track_encoder = TrackEncoder(config)

    def forward(self, contact: torch.Tensor, track: torch.Tensor) -> StageEmbeddings:
        return StageEmbeddings(
            contact=self.contact_encoder(contact), track=self.track_encoder(track)
        )


def init_parameters(module: nn.Module, seed: int) -> nn.Module:
    """Seeded in-place initialization.

    Linear/convolution weights and biases use scaled-uniform fan-in bounds,
    layer norms reset to identity, and positional embeddings draw from
    normal(0, 0.02). Deterministic per seed (fixed module traversal order).
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for sub in module.modules():
            if isinstance(sub, nn.Linear):
                bound = 1.0 / math.sqrt(sub.weight.shape[1])
                sub.weight.uniform_(-bound, bound, generator=gen)
                if sub.bias is not None:
                    sub.bias.uniform_(-bound, bound, generator=gen)
            elif isinstance(sub, nn.Conv1d):
                bound = 1.0 / math.sqrt(sub.in_channels * sub.kernel_size[0])
                sub.weight.uniform_(-bound, bound, generator=gen)
                if sub.bias is not None:
                    sub.bias.uniform_(-bound, bound, generator=gen)
            elif isinstance(sub, nn.LayerNorm):
                sub.weight.fill_(1.0)
                sub.bias.fill_(0.0)
        for name, param in module.named_parameters():
            if name.endswith("pos_embedding"):
                param.normal_(0.0, POS_EMBED_STD, generator=gen)
    return module


def build_dual_encoder(config: EncoderConfig, seed: int) -> DualEncoder:
    """Construct and deterministically initialize a dual encoder."""
    return init_parameters(DualEncoder(config), seed)
