"""Cross-modal interaction and mapping blocks plus the pretraining losses.

The interaction block projects each modality's bottleneck into an
invariant and a specific half; the invariant halves are pulled together
by a symmetric temperature-scaled contrastive loss while the orthogonal
loss drives each modality's specific/invariant cosine toward zero. The
mapping block converts one modality's concatenated representation into
the other's via adaptive sequence pooling and a position-wise dense map,
regularized by a symmetric reconstruction loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .encoders import EncoderConfig
from .errors import ValidationError

DEFAULT_TEMPERATURE = 0.07


@dataclass
class CrossModalEmbeddings:
    """Projections, pooled vectors and concatenations for one batch."""

    contact_invariant: torch.Tensor  # (B, alpha3, C2)
    contact_specific: torch.Tensor
    track_invariant: torch.Tensor  # (B, beta3, C2)
    track_specific: torch.Tensor
    pooled_contact_invariant: torch.Tensor  # (B, C2)
    pooled_contact_specific: torch.Tensor
    pooled_track_invariant: torch.Tensor
    pooled_track_specific: torch.Tensor
    contact_concat: torch.Tensor  # (B, alpha3, C3)
    track_concat: torch.Tensor  # (B, beta3, C3)


@dataclass
class PretrainLossReport:
    """Component and total losses of one pretraining step."""

    contrastive: float
    orthogonal: float
    mapping: float
    total: float
    batch_size: int
    temperature: float


class InteractionBlock(nn.Module):
    """Four independent dense maps producing invariant/specific halves."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        full = config.bottleneck_dim
        half = full // 2
        self.contact_to_invariant = nn.Linear(full, half)
        self.contact_to_specific = nn.Linear(full, half)
        self.track_to_invariant = nn.Linear(full, half)
        self.track_to_specific = nn.Linear(full, half)

    def forward(
        self, contact_bottleneck: torch.Tensor, track_bottleneck: torch.Tensor
    ) -> CrossModalEmbeddings:
        if contact_bottleneck.shape[-1] != self.contact_to_invariant.in_features:
            raise ValidationError(
                f"bottleneck dim {contact_bottleneck.shape[-1]} does not match "
                f"interaction block dim {self.contact_to_invariant.in_features}"
            )
        c_inv = self.contact_to_invariant(contact_bottleneck)
        c_spec = self.contact_to_specific(contact_bottleneck)
        t_inv = self.track_to_invariant(track_bottleneck)
        t_spec = self.track_to_specific(track_bottleneck)
        return CrossModalEmbeddings(
            contact_invariant=c_inv,
            contact_specific=c_spec,
            track_invariant=t_inv,
            track_specific=t_spec,
            pooled_contact_invariant=c_inv.mean(dim=-2),
            pooled_contact_specific=c_spec.mean(dim=-2),
            pooled_track_invariant=t_inv.mean(dim=-2),
            pooled_track_specific=t_spec.mean(dim=-2),
            contact_concat=torch.cat([c_inv, c_spec], dim=-1),
            track_concat=torch.cat([t_inv, t_spec], dim=-1),
        )


def _normalize_rows(x: torch.Tensor, what: str) -> torch.Tensor:
    norms = x.norm(dim=-1, keepdim=True)
    if bool((norms == 0).any()):
        raise ValidationError(f"zero-norm vector in {what}; cosine similarity undefined")
    return x / norms


def contrastive_pair_loss(
    a: torch.Tensor,
    b: torch.Tensor,
    temperature: float = DEFAULT_TEMPERATURE,
    normalize: bool = True,
) -> torch.Tensor:
    """Directed batch contrastive loss between aligned embedding batches.

    Rows are L2-normalized by default, so similarities are cosines scaled
    by the temperature; the log-softmax over each row uses max-subtracted
    log-sum-exp for numeric stability.
    """
    if a.dim() != 2 or b.dim() != 2 or a.shape != b.shape:
        raise ValidationError(f"expected matching (J, C) batches, got {a.shape} vs {b.shape}")
    if a.shape[0] < 2:
        raise ValidationError(f"batch size must be >= 2, got {a.shape[0]}")
    if normalize:
        a = _normalize_rows(a, "contrastive batch A")
        b = _normalize_rows(b, "contrastive batch B")
    logits = (a @ b.transpose(0, 1)) / temperature
    log_softmax = logits.diagonal() - torch.logsumexp(logits, dim=1)
    return -log_softmax.mean()


def contrastive_loss(
    track_invariant: torch.Tensor,
    contact_invariant: torch.Tensor,
    temperature: float = DEFAULT_TEMPERATURE,
    normalize: bool = True,
) -> torch.Tensor:
    """Symmetrized contrastive loss over the two pooled invariant batches."""
    return 0.5 * (
        contrastive_pair_loss(track_invariant, contact_invariant, temperature, normalize)
        + contrastive_pair_loss(contact_invariant, track_invariant, temperature, normalize)
    )


def orthogonal_loss(
    contact_specific: torch.Tensor,
    contact_invariant: torch.Tensor,
    track_specific: torch.Tensor,
    track_invariant: torch.Tensor,
    squared: bool = True,
    normalize: bool = True,
) -> torch.Tensor:
    """Penalty on the specific/invariant inner products, batch-averaged.

    With ``squared`` (the default) each cosine enters as its square, which
    is bounded and drives the inner product toward zero; the raw-product
    variant is kept for fidelity experiments.
    """
    if normalize:
        contact_specific = _normalize_rows(contact_specific, "contact specific")
        contact_invariant = _normalize_rows(contact_invariant, "contact invariant")
        track_specific = _normalize_rows(track_specific, "track specific")
        track_invariant = _normalize_rows(track_invariant, "track invariant")
    contact_dot = (contact_specific * contact_invariant).sum(dim=-1)
    track_dot = (track_specific * track_invariant).sum(dim=-1)
    if squared:
        contact_dot = contact_dot**2
        track_dot = track_dot**2
    return 0.5 * (contact_dot.mean() + track_dot.mean())


def adaptive_pool_sequence(x: torch.Tensor, out_length: int) -> torch.Tensor:
    """Adaptive average pooling along the sequence axis of (B, L, C) input.

    Output position k averages input positions [floor(k*n/m), ceil((k+1)*n/m)).
    """
    if x.dim() != 3:
        raise ValidationError(f"expected (B, L, C) input, got shape {tuple(x.shape)}")
    if x.shape[1] == out_length:
        return x
    return F.adaptive_avg_pool1d(x.transpose(1, 2), out_length).transpose(1, 2)


class MappingBlock(nn.Module):
    """Length-aligning pooling plus dense maps between the two modalities."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        dim = config.bottleneck_dim
        self.contact_length = config.contact_lengths[-1]
        self.track_length = config.track_lengths[-1]
        self.contact_to_track = nn.Linear(dim, dim)
        self.track_to_contact = nn.Linear(dim, dim)

    def map_contact_to_track(self, contact_concat: torch.Tensor) -> torch.Tensor:
        pooled = adaptive_pool_sequence(contact_concat, self.track_length)
        return self.contact_to_track(pooled)

    def map_track_to_contact(self, track_concat: torch.Tensor) -> torch.Tensor:
        pooled = adaptive_pool_sequence(track_concat, self.contact_length)
        return self.track_to_contact(pooled)

    def forward(
        self, contact_concat: torch.Tensor, track_concat: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        return self.map_contact_to_track(contact_concat), self.map_track_to_contact(track_concat)


def mapping_loss(
    contact_to_track: torch.Tensor,
    track_concat: torch.Tensor,
    track_to_contact: torch.Tensor,
    contact_concat: torch.Tensor,
) -> torch.Tensor:
    """Symmetric mean-squared reconstruction loss of the mapped embeddings.

    Gradients flow into both the mapped and the target branches.
    """
    if contact_to_track.shape != track_concat.shape:
        raise ValidationError(
            f"mapped contact {tuple(contact_to_track.shape)} does not match "
            f"track target {tuple(track_concat.shape)}"
        )
    if track_to_contact.shape != contact_concat.shape:
        raise ValidationError(
            f"mapped track {tuple(track_to_contact.shape)} does not match "
            f"contact target {tuple(contact_concat.shape)}"
        )
    return 0.5 * (
        ((contact_to_track - track_concat) ** 2).mean()
        + ((track_to_contact - contact_concat) ** 2).mean()
    )


def pretrain_loss(
    embeddings: CrossModalEmbeddings,
    contact_to_track: torch.Tensor,
    track_to_contact: torch.Tensor,
    temperature: float = DEFAULT_TEMPERATURE,
    squared_orthogonal: bool = True,
    normalize: bool = True,
) -> tuple[torch.Tensor, PretrainLossReport]:
    """Total self-supervised objective: contrastive + orthogonal + mapping."""
    l_con = contrastive_loss(
        embeddings.pooled_track_invariant,
        embeddings.pooled_contact_invariant,
        temperature,
        normalize,
    )
    l_orth = orthogonal_loss(
        embeddings.pooled_contact_specific,
        embeddings.pooled_contact_invariant,
        embeddings.pooled_track_specific,
        embeddings.pooled_track_invariant,
        squared_orthogonal,
        normalize,
    )
    l_map = mapping_loss(
        contact_to_track,
        embeddings.track_concat,
        track_to_contact,
        embeddings.contact_concat,
    )
    total = l_con + l_orth + l_map
    report = PretrainLossReport(
        contrastive=float(l_con.detach()),
        orthogonal=float(l_orth.detach()),
        mapping=float(l_map.detach()),
        total=float(total.detach()),
        batch_size=embeddings.pooled_contact_invariant.shape[0],
        temperature=temperature,
    )
    return total, report
