"""Whole-chromosome loop calling.

Pipeline: per-diagonal Poisson filtering of the balanced matrix, model
scoring of centered windows around every passing pixel, density-peaks
clustering of the scored candidates (Chebyshev neighbourhoods, score
weighted density), and a target-decoy acceptance walk that keeps the
running decoy fraction under the FDR target. Model-rejected pixels act
as the decoys.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import ValidationError
from .genomic_io import DatasetManifest, GenomicInterval, LoopCall, parse_contact_matrix, parse_track, write_bedpe
from .preprocessing import bin_track_raw, kr_balance, records_to_dense
from .training import Checkpoint, TaskModel, build_model

DEFAULT_P_THRESHOLD = 0.01
DEFAULT_SCORE_THRESHOLD = 0.5
DEFAULT_NEIGHBORHOOD_RADIUS = 2
DEFAULT_FDR_TARGET = 0.05


@dataclass
class LoopCandidate:
    """A Poisson-passing pixel with its model score and clustering state."""

    bin_i: int
    bin_j: int
    observed: float
    expected: float
    p_value: float
    model_score: float
    is_decoy: bool = False
    rho: float = 0.0
    delta: float = math.inf
    cluster_id: int = -1

    def __post_init__(self):
        if self.bin_i >= self.bin_j:
            raise ValidationError(
                f"candidate must lie strictly above the diagonal, got ({self.bin_i}, {self.bin_j})"
            )


def expected_by_distance(matrix: np.ndarray) -> np.ndarray:
    """Mean entry per diagonal offset (zeros included), offsets 0..n-1."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValidationError(f"matrix must be square, got shape {matrix.shape}")
    n = matrix.shape[0]
    return np.array([np.diagonal(matrix, offset=d).mean() for d in range(n)])


def poisson_upper_pvalue(observed: float, lam: float) -> float:
    """P(X >= ceil(observed)) for X ~ Poisson(lam), by stable tail summation."""
    if not math.isfinite(lam) or lam <= 0:
        raise ValidationError(f"lambda must be positive and finite, got {lam}")
    if not math.isfinite(observed) or observed < 0:
        raise ValidationError(f"observed must be non-negative and finite, got {observed}")
    k0 = math.ceil(observed)
    if k0 <= 0:
        return 1.0
    log_first = k0 * math.log(lam) - lam - math.lgamma(k0 + 1)
    if log_first < -745.0:
        # first term underflows; the whole tail is below double precision
        return 0.0
    term = math.exp(log_first)
    total = term
    k = k0
    while True:
        k += 1
        term *= lam / k
        total += term
        if k > lam and term <= total * 1e-17:
            break
    return min(total, 1.0)


def scan_candidates(
    matrix: np.ndarray,
    checkpoint: Checkpoint,
    track_channels: list[list],
    max_distance_bins: int,
    p_threshold: float = DEFAULT_P_THRESHOLD,
    score_threshold: float = DEFAULT_SCORE_THRESHOLD,
    batch_size: int = 128,
) -> tuple[list[LoopCandidate], list[LoopCandidate]]:
    """Score every Poisson-passing pixel within the distance cap.

    Returns (candidates, decoys): pixels the model accepts (score above
    the threshold) and pixels it rejects, both having passed the Poisson
    filter. Windows are centered on the pixel and clamped inside the
    chromosome.
    """
    if max_distance_bins < 1:
        raise ValidationError("max_distance_bins must be >= 1")
    matrix = np.asarray(matrix, dtype=np.float64)
    n = matrix.shape[0]
    config = checkpoint.encoder_config
    window = config.window_side
    if n < window:
        raise ValidationError(
            f"chromosome of {n} bins is shorter than one {window}-bin window"
        )
    meta = checkpoint.data_meta
    resolution = int(meta.get("resolution_bp", 5000))
    bin_bp = int(meta.get("bin_track_bp", 100))
    bins_per_res = resolution // bin_bp
    extent = GenomicInterval("scan", 0, n * resolution)
    profiles = [
        bin_track_raw(channel, extent, bin_bp) for channel in track_channels
    ]

    expected = expected_by_distance(matrix)
    rows, cols = np.nonzero(np.triu(matrix, k=1))
    passing: list[tuple[int, int, float, float, float]] = []
    for i, j in zip(rows, cols):
        d = j - i
        if d > max_distance_bins:
            continue
        lam = expected[d]
        if lam <= 0:
            continue
        obs = matrix[i, j]
        p = poisson_upper_pvalue(obs, lam)
        if p < p_threshold:
            passing.append((int(i), int(j), float(obs), float(lam), p))

    model = build_model(checkpoint)
    if not isinstance(model, TaskModel) or model.task != "loop":
        raise ValidationError("scan requires a loop-task checkpoint")
    model.eval()

    candidates: list[LoopCandidate] = []
    decoys: list[LoopCandidate] = []
    log_matrix = np.log1p(matrix)
    seg = window * bins_per_res
    with torch.no_grad():
        for start in range(0, len(passing), batch_size):
            chunk = passing[start : start + batch_size]
            contact_batch = np.empty((len(chunk), window, window), dtype=np.float64)
            track_batch = np.empty((len(chunk), 2 * seg, len(profiles)), dtype=np.float64)
            for b, (i, j, _obs, _lam, _p) in enumerate(chunk):
                ox = int(np.clip(i - window // 2, 0, n - window))
                oy = int(np.clip(j - window // 2, 0, n - window))
                contact_batch[b] = log_matrix[ox : ox + window, oy : oy + window]
                for c, profile in enumerate(profiles):
                    track_batch[b, :seg, c] = np.log1p(
                        profile[ox * bins_per_res : ox * bins_per_res + seg]
                    )
                    track_batch[b, seg:, c] = np.log1p(
                        profile[oy * bins_per_res : oy * bins_per_res + seg]
                    )
            scores = model(
                torch.from_numpy(contact_batch).float(),
                torch.from_numpy(track_batch).float(),
            ).numpy()
            for (i, j, obs, lam, p), score in zip(chunk, scores):
                candidate = LoopCandidate(i, j, obs, lam, p, float(score))
                if score > score_threshold:
                    candidates.append(candidate)
                else:
                    candidate.is_decoy = True
                    decoys.append(candidate)
    return candidates, decoys


def _canonical_order(points: list[LoopCandidate], rho: np.ndarray, scores: np.ndarray):
    return sorted(
        range(len(points)),
        key=lambda k: (-rho[k], -scores[k], points[k].bin_i, points[k].bin_j),
    )


def density_cluster(
    candidates: list[LoopCandidate],
    decoys: list[LoopCandidate],
    neighborhood_radius_bins: int = DEFAULT_NEIGHBORHOOD_RADIUS,
    fdr_target: float = DEFAULT_FDR_TARGET,
    resolution_bp: int = 5000,
) -> list[LoopCall]:
    """Cluster scored pixels by density peaks and gate centers by FDR.

    Local density is the score sum over the Chebyshev neighbourhood of
    candidates and decoys together; points whose distance to a higher
    density point is within the radius merge into that point's cluster.
    Cluster centers are walked in decreasing density and accepted while
    the running decoy fraction stays below the target; each accepted
    target cluster emits its highest-density candidate.
    """
    points = sorted(candidates + decoys, key=lambda c: (c.bin_i, c.bin_j))
    if not points:
        return []
    coords = np.array([(p.bin_i, p.bin_j) for p in points], dtype=np.int64)
    scores = np.array([p.model_score for p in points], dtype=np.float64)
    cheb = np.max(np.abs(coords[:, None, :] - coords[None, :, :]), axis=2)
    rho = ((cheb <= neighborhood_radius_bins) * scores[None, :]).sum(axis=1)

    n = len(points)
    delta = np.full(n, np.inf)
    nearest_higher = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        higher = np.nonzero(rho > rho[k])[0]
        if higher.size:
            dists = cheb[k, higher]
            best = int(higher[np.argmin(dists)])
            delta[k] = float(dists.min())
            nearest_higher[k] = best

    order = _canonical_order(points, rho, scores)
    cluster = np.full(n, -1, dtype=np.int64)
    for k in order:
        if nearest_higher[k] == -1 or delta[k] > neighborhood_radius_bins:
            cluster[k] = k
        else:
            cluster[k] = cluster[nearest_higher[k]]

    for k, point in enumerate(points):
        point.rho = float(rho[k])
        point.delta = float(delta[k])
        point.cluster_id = int(cluster[k])

    centers = sorted(set(cluster.tolist()))
    members_of = {c: np.nonzero(cluster == c)[0] for c in centers}

    def representative(center: int) -> int:
        member_ids = members_of[center]
        targets = [m for m in member_ids if not points[m].is_decoy]
        pool = targets if targets else list(member_ids)
        return min(pool, key=lambda m: (-rho[m], -scores[m], points[m].bin_i, points[m].bin_j))

    ordered_centers = sorted(
        centers, key=lambda c: (-rho[c], -scores[c], points[c].bin_i, points[c].bin_j)
    )
    calls: list[LoopCall] = []
    accepted = 0
    accepted_decoys = 0
    for center in ordered_centers:
        rep = representative(center)
        rep_is_decoy = points[rep].is_decoy
        if (accepted_decoys + rep_is_decoy) / (accepted + 1) >= fdr_target:
            break
        accepted += 1
        accepted_decoys += int(rep_is_decoy)
        if rep_is_decoy:
            continue
        rep_point = points[rep]
        calls.append(
            LoopCall(
                anchor1=GenomicInterval(
                    "chromosome",
                    rep_point.bin_i * resolution_bp,
                    (rep_point.bin_i + 1) * resolution_bp,
                ),
                anchor2=GenomicInterval(
                    "chromosome",
                    rep_point.bin_j * resolution_bp,
                    (rep_point.bin_j + 1) * resolution_bp,
                ),
                probability=rep_point.model_score,
                density=rep_point.rho,
                members=int(members_of[center].size),
            )
        )
    calls.sort(key=lambda call: (call.anchor1.start, call.anchor2.start))
    return calls


def annotate_chromosome(
    manifest: DatasetManifest,
    checkpoint: Checkpoint,
    chromosome: str,
    max_distance_bins: int,
    out_path: str | Path | None = None,
    p_threshold: float = DEFAULT_P_THRESHOLD,
    score_threshold: float = DEFAULT_SCORE_THRESHOLD,
    neighborhood_radius_bins: int = DEFAULT_NEIGHBORHOOD_RADIUS,
    fdr_target: float = DEFAULT_FDR_TARGET,
    balance_tolerance: float = 1e-6,
) -> list[LoopCall]:
    """Full annotation of one manifest chromosome; optionally writes BEDPE."""
    if chromosome not in manifest.chromosomes:
        raise ValidationError(f"manifest has no chromosome {chromosome!r}")
    files = manifest.chromosomes[chromosome]
    records = parse_contact_matrix(files.contacts, chromosome)
    n_bins = files.n_bins or (max(r.bin_j for r in records) + 1 if records else 0)
    dense = records_to_dense(records, n_bins)
    balanced, _ = kr_balance(dense, tolerance=balance_tolerance)
    tracks = [parse_track(path) for path in files.tracks]
    candidates, decoys = scan_candidates(
        balanced,
        checkpoint,
        tracks,
        max_distance_bins=max_distance_bins,
        p_threshold=p_threshold,
        score_threshold=score_threshold,
    )
    calls = density_cluster(
        candidates,
        decoys,
        neighborhood_radius_bins=neighborhood_radius_bins,
        fdr_target=fdr_target,
        resolution_bp=manifest.resolution_bp,
    )
    calls = [
        LoopCall(
            anchor1=GenomicInterval(chromosome, c.anchor1.start, c.anchor1.end),
            anchor2=GenomicInterval(chromosome, c.anchor2.start, c.anchor2.end),
            probability=c.probability,
            density=c.density,
            members=c.members,
        )
        for c in calls
    ]
    if out_path is not None:
        write_bedpe(calls, out_path)
    return calls
