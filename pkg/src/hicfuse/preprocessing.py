"""Raw records to model-ready windows.

Covers symmetric matrix balancing, window extraction with log(x+1)
transform, the non-zero quality filter, overlap-weighted track binning,
pair assembly and distance-matched negative loop sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, SamplingError, ValidationError
from .genomic_io import (
    DEFAULT_BIN_TRACK_BP,
    DatasetManifest,
    GenomicInterval,
    LoopAnnotation,
    SparseContactRecord,
    TrackRecord,
)

KR_DEFAULT_TOLERANCE = 1e-8
KR_DEFAULT_MAX_ITERATIONS = 3000
QUALITY_MIN_NONZERO_FRACTION = 0.10
NEGATIVE_SAMPLER_MAX_RETRIES = 10000


@dataclass(frozen=True)
class ContactMapWindow:
    """A dense, balanced, log-transformed contact sub-matrix."""

    values: np.ndarray  # H x W, float64
    origin_x: GenomicInterval
    origin_y: GenomicInterval
    resolution_bp: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValidationError(f"contact window must be square, got shape {values.shape}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValidationError("contact window values must be finite and >= 0")


@dataclass(frozen=True)
class TrackWindow:
    """Binned, log-transformed signal over the window's two axis segments.

    Rows [0, L1/2) cover the x-axis segment, rows [L1/2, L1) the y-axis
    segment; columns are the ordered signal channels.
    """

    values: np.ndarray  # L1 x O, float64
    origin_x: GenomicInterval
    origin_y: GenomicInterval
    bin_bp: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 2:
            raise ValidationError(f"track window must be 2-D, got shape {values.shape}")
        if values.shape[0] % 2 != 0:
            raise ValidationError("track window length must be even (two segments)")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValidationError("track window values must be finite and >= 0")


@dataclass(frozen=True)
class SamplePair:
    """Aligned (contact window, track window, target) training unit.

    At most one of the task targets is set; pretraining pairs carry none.
    """

    contact: ContactMapWindow
    track: TrackWindow
    loop_label: int | None = None
    cage: np.ndarray | None = None
    contact_target: np.ndarray | None = None

    def __post_init__(self):
        set_targets = sum(
            x is not None for x in (self.loop_label, self.cage, self.contact_target)
        )
        if set_targets > 1:
            raise ValidationError("a sample may carry at most one task target")
        if (
            self.contact.origin_x != self.track.origin_x
            or self.contact.origin_y != self.track.origin_y
        ):
            raise ValidationError("contact and track windows must cover identical coordinates")

    @property
    def target_kind(self) -> str:
        if self.loop_label is not None:
            return "loop"
        if self.cage is not None:
            return "cage"
        if self.contact_target is not None:
            return "contact"
        return "none"


def records_to_dense(records: list[SparseContactRecord], n_bins: int) -> np.ndarray:
    """Materialize upper-triangular records as a dense symmetric matrix."""
    matrix = np.zeros((n_bins, n_bins), dtype=np.float64)
    for rec in records:
        if rec.bin_j >= n_bins:
            raise ValidationError(
                f"record ({rec.bin_i}, {rec.bin_j}) outside matrix of {n_bins} bins"
            )
        matrix[rec.bin_i, rec.bin_j] = rec.count
        matrix[rec.bin_j, rec.bin_i] = rec.count
    return matrix


def dense_to_records(matrix: np.ndarray) -> list[SparseContactRecord]:
    """Extract non-zero upper-triangular entries of a symmetric matrix."""
    rows, cols = np.nonzero(np.triu(matrix))
    return [SparseContactRecord(int(i), int(j), float(matrix[i, j])) for i, j in zip(rows, cols)]


def kr_balance(
    matrix: np.ndarray,
    tolerance: float = KR_DEFAULT_TOLERANCE,
    max_iterations: int = KR_DEFAULT_MAX_ITERATIONS,
) -> tuple[np.ndarray, np.ndarray]:
    """Balance a symmetric non-negative matrix by iterative diagonal scaling.

    Returns ``(balanced, s)`` with ``balanced = diag(s) @ matrix @ diag(s)``
    such that every unmasked row sum lies within ``tolerance`` (relative
    dispersion) of the mean row sum. All-zero rows are masked out during
    iteration and restored as zero rows/columns with ``s = 0``.

    Raises ConvergenceError (carrying the final residual) if the dispersion
    target is not met within ``max_iterations``.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValidationError(f"matrix must be square, got shape {matrix.shape}")
    if not np.allclose(matrix, matrix.T, rtol=0.0, atol=0.0):
        raise ValidationError("matrix must be symmetric")
    if np.any(matrix < 0) or not np.all(np.isfinite(matrix)):
        raise ValidationError("matrix entries must be finite and >= 0")

    active = matrix.sum(axis=1) > 0
    sub = matrix[np.ix_(active, active)]
    n_active = int(active.sum())
    scale = np.zeros(matrix.shape[0], dtype=np.float64)
    if n_active == 0:
        return np.zeros_like(matrix), scale

    s = np.ones(n_active, dtype=np.float64)
    residual = np.inf
    for _ in range(max_iterations):
        row_sums = s * (sub @ s)
        mean = row_sums.mean()
        residual = (row_sums.max() - row_sums.min()) / mean
        if residual <= tolerance:
            break
        s = s / np.sqrt(row_sums / mean)
    else:
        raise ConvergenceError(
            f"matrix balancing did not reach dispersion {tolerance:g} "
            f"after {max_iterations} iterations (residual {residual:g})",
            residual=float(residual),
        )

    scale[active] = s
    balanced = matrix * np.outer(scale, scale)
    balanced = (balanced + balanced.T) / 2.0  # enforce exact symmetry
    return balanced, scale


def extract_window(
    records: list[SparseContactRecord],
    origin_bin_x: int,
    origin_bin_y: int,
    size: int,
    n_bins: int | None = None,
) -> np.ndarray:
    """Densify a size x size window at the given origin and apply log(x+1).

    Records are upper-triangular; both (i, j) and its mirror (j, i) are
    placed when they fall inside the window.
    """
    if size < 1:
        raise ValidationError(f"window size must be >= 1, got {size}")
    if origin_bin_x < 0 or origin_bin_y < 0:
        raise ValidationError("window origin must be >= 0")
    if n_bins is not None and (origin_bin_x + size > n_bins or origin_bin_y + size > n_bins):
        raise ValidationError(
            f"window at ({origin_bin_x}, {origin_bin_y}) of side {size} "
            f"extends past chromosome end ({n_bins} bins)"
        )
    window = np.zeros((size, size), dtype=np.float64)
    for rec in records:
        for i, j in ((rec.bin_i, rec.bin_j), (rec.bin_j, rec.bin_i)):
            if origin_bin_x <= i < origin_bin_x + size and origin_bin_y <= j < origin_bin_y + size:
                window[i - origin_bin_x, j - origin_bin_y] = rec.count
    return np.log1p(window)


def window_from_dense(
    matrix: np.ndarray, origin_bin_x: int, origin_bin_y: int, size: int
) -> np.ndarray:
    """Slice a dense balanced matrix into a log(x+1) window."""
    n_bins = matrix.shape[0]
    if origin_bin_x < 0 or origin_bin_y < 0:
        raise ValidationError("window origin must be >= 0")
    if origin_bin_x + size > n_bins or origin_bin_y + size > n_bins:
        raise ValidationError(
            f"window at ({origin_bin_x}, {origin_bin_y}) of side {size} "
            f"extends past chromosome end ({n_bins} bins)"
        )
    return np.log1p(matrix[origin_bin_x : origin_bin_x + size, origin_bin_y : origin_bin_y + size])


def passes_quality_filter(
    values: np.ndarray, min_nonzero_fraction: float = QUALITY_MIN_NONZERO_FRACTION
) -> bool:
    """True iff the fraction of non-zero entries is >= the threshold."""
    values = np.asarray(values)
    return float(np.count_nonzero(values)) / values.size >= min_nonzero_fraction


def bin_track_raw(
    records: list[TrackRecord], region: GenomicInterval, bin_bp: int = DEFAULT_BIN_TRACK_BP
) -> np.ndarray:
    """Per-bin overlap-weighted mean signal over the region, before the log.

    Gaps contribute zero: each bin's accumulator is the sum of
    value * overlap_length divided by the full bin width.
    """
    if region.length % bin_bp != 0:
        raise ValidationError(
            f"region length {region.length} not divisible by bin width {bin_bp}"
        )
    n_bins = region.length // bin_bp
    acc = np.zeros(n_bins, dtype=np.float64)
    for rec in records:
        iv = rec.interval
        if iv.chromosome != region.chromosome or iv.end <= region.start or iv.start >= region.end:
            continue
        lo = max(iv.start, region.start)
        hi = min(iv.end, region.end)
        first = (lo - region.start) // bin_bp
        last = (hi - 1 - region.start) // bin_bp
        for b in range(first, last + 1):
            bin_start = region.start + b * bin_bp
            overlap = min(hi, bin_start + bin_bp) - max(lo, bin_start)
            acc[b] += rec.value * overlap
    return acc / bin_bp


def bin_track(
    records: list[TrackRecord], region: GenomicInterval, bin_bp: int = DEFAULT_BIN_TRACK_BP
) -> np.ndarray:
    """Binned signal transformed by natural log(x+1)."""
    return np.log1p(bin_track_raw(records, region, bin_bp))


def assemble_pair(
    contact_records: list[SparseContactRecord],
    track_channels: list[list[TrackRecord]],
    interval_x: GenomicInterval,
    interval_y: GenomicInterval,
    manifest: DatasetManifest,
    n_bins: int | None = None,
) -> SamplePair | None:
    """Build one aligned SamplePair, or None if it fails the quality filter."""
    res = manifest.resolution_bp
    size = manifest.window_bins
    if interval_x.length != manifest.window_bp or interval_y.length != manifest.window_bp:
        raise ValidationError("window intervals must span exactly window_bp")
    if interval_x.start % res != 0 or interval_y.start % res != 0:
        raise ValidationError("window intervals must be aligned to the bin grid")
    values = extract_window(
        contact_records, interval_x.start // res, interval_y.start // res, size, n_bins=n_bins
    )
    if not passes_quality_filter(values):
        return None
    contact = ContactMapWindow(values, interval_x, interval_y, res)
    segments = []
    for channel in track_channels:
        seg_x = bin_track(channel, interval_x, manifest.bin_track_bp)
        seg_y = bin_track(channel, interval_y, manifest.bin_track_bp)
        segments.append(np.concatenate([seg_x, seg_y]))
    track = TrackWindow(np.stack(segments, axis=1), interval_x, interval_y, manifest.bin_track_bp)
    return SamplePair(contact, track)


def _anchor_pair(start1: int, start2: int, chromosome: str, resolution_bp: int):
    a1 = GenomicInterval(chromosome, start1, start1 + resolution_bp)
    a2 = GenomicInterval(chromosome, start2, start2 + resolution_bp)
    return a1, a2


def sample_negative_loops(
    positives: list[LoopAnnotation],
    count: int,
    rng_seed: int,
    chromosome_extent_bp: int,
    resolution_bp: int = 5000,
    max_distance_bp: int | None = None,
) -> list[LoopAnnotation]:
    """Draw negative anchor pairs following the two-criteria scheme.

    Half the negatives match the positives' empirical anchor-distance
    distribution (one histogram bin per resolution step); the other half
    use distances strictly greater than the maximum positive distance,
    bounded by ``max_distance_bp`` (chromosome extent when omitted).
    Negatives never overlap a positive's anchor pair. Deterministic per
    seed; raises SamplingError after the bounded retry budget.
    """
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    if not positives:
        raise ValidationError("positives must be non-empty")
    rng = np.random.default_rng(rng_seed)
    chromosome = positives[0].anchor1.chromosome
    distances = np.array(
        [p.anchor2.start - p.anchor1.start for p in positives], dtype=np.int64
    )
    max_distance = int(distances.max())
    max_start = chromosome_extent_bp - resolution_bp
    positive_pixels = {(p.anchor1.start, p.anchor2.start) for p in positives}

    n_matched = count // 2
    n_far = count - n_matched

    def overlaps_positive(start1: int, start2: int) -> bool:
        for p1, p2 in positive_pixels:
            if abs(start1 - p1) < resolution_bp and abs(start2 - p2) < resolution_bp:
                return True
        return False

    negatives: list[LoopAnnotation] = []

    def draw(distance_sampler, n_wanted: int):
        drawn = 0
        for _ in range(NEGATIVE_SAMPLER_MAX_RETRIES):
            if drawn == n_wanted:
                return
            distance = distance_sampler()
            if distance <= 0 or distance > max_start:
                continue
            start1 = int(rng.integers(0, (max_start - distance) // resolution_bp + 1))
            start1 *= resolution_bp
            start2 = start1 + distance
            if overlaps_positive(start1, start2):
                continue
            a1, a2 = _anchor_pair(start1, start2, chromosome, resolution_bp)
            negatives.append(LoopAnnotation(a1, a2, label="negative"))
            drawn += 1
        raise SamplingError(
            f"could not place {n_wanted} negatives on a chromosome of "
            f"{chromosome_extent_bp} bp within {NEGATIVE_SAMPLER_MAX_RETRIES} retries"
        )

    # criterion 1: distances resampled from the positives' empirical distribution
    draw(lambda: int(rng.choice(distances)), n_matched)
    # criterion 2: distances strictly beyond the positive maximum
    far_lo = max_distance // resolution_bp + 1
    far_hi = (max_distance_bp if max_distance_bp is not None else max_start) // resolution_bp
    far_hi = min(far_hi, max_start // resolution_bp)
    if far_hi < far_lo:
        raise SamplingError(
            f"chromosome of {chromosome_extent_bp} bp cannot host distances beyond "
            f"the positive maximum {max_distance} bp"
        )
    draw(lambda: int(rng.integers(far_lo, far_hi + 1)) * resolution_bp, n_far)
    return negatives
