"""Seeded synthetic chromosomes with controllable planted structure.

Contacts follow a Poisson model with power-law distance decay; planted
loop pixels are multiplied by an enrichment factor. Tracks carry Gaussian
peaks at loop anchors whose amplitude scales with the anchor-coupling
knob, and per-bin expression values are a linear readout of local track
signal and contact row mass. Everything is deterministic per seed and is
emitted in the package's standard file formats.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from .errors import SamplingError, ValidationError
from .genomic_io import (
    GenomicInterval,
    LoopAnnotation,
    SparseContactRecord,
    TrackRecord,
    write_contact_matrix,
    write_loops,
    write_track,
)
from .preprocessing import (
    ContactMapWindow,
    SamplePair,
    TrackWindow,
    kr_balance,
    passes_quality_filter,
    sample_negative_loops,
    window_from_dense,
)

TRACK_CHANNEL_SCALES = (1.0, 0.7)  # accessibility-like, nuclease-like
PEAK_WIDTH_TRACK_BINS = 3.0
LOOP_MIN_SEPARATION_BINS = 3
PLACEMENT_MAX_RETRIES = 200000


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs of the synthetic chromosome generator."""

    n_bins: int
    loop_count: int = 20
    enrichment: float = 8.0
    anchor_coupling: float = 0.8  # track-peak strength at loop anchors
    decay_exponent: float = 1.0
    background_rate: float = 2.0
    track_baseline: float = 0.3
    track_noise: float = 0.1
    cage_track_weight: float = 1.0
    cage_contact_weight: float = 0.5
    cage_noise: float = 0.1
    min_loop_distance_bins: int = 5
    max_loop_distance_bins: int | None = None
    resolution_bp: int = 5000
    bin_track_bp: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.n_bins < 2:
            raise ValidationError(f"n_bins must be >= 2, got {self.n_bins}")
        if self.enrichment <= 1.0:
            raise ValidationError(f"enrichment must be > 1, got {self.enrichment}")
        if not 0.0 <= self.anchor_coupling <= 1.0:
            raise ValidationError(f"anchor coupling must be in [0, 1], got {self.anchor_coupling}")
        if self.loop_count < 0:
            raise ValidationError(f"loop count must be >= 0, got {self.loop_count}")
        if self.resolution_bp % self.bin_track_bp != 0:
            raise ValidationError("resolution_bp must be divisible by bin_track_bp")

    @property
    def extent_bp(self) -> int:
        return self.n_bins * self.resolution_bp

    @property
    def loop_distance_cap(self) -> int:
        return self.max_loop_distance_bins or max(self.min_loop_distance_bins + 1, self.n_bins // 4)


@dataclass
class ChromosomeData:
    """Everything the generator knows about one synthetic chromosome."""

    name: str
    spec: SyntheticSpec
    matrix: np.ndarray  # raw symmetric counts
    contacts: list[SparseContactRecord]
    track_arrays: list[np.ndarray]  # raw per-channel signal at track-bin grid
    track_records: list[list[TrackRecord]]
    loops: list[LoopAnnotation]
    cage: np.ndarray  # one value per resolution bin

    @property
    def n_bins(self) -> int:
        return self.spec.n_bins


def expected_contact_rate(spec: SyntheticSpec, distance: int, planted: bool = False) -> float:
    """Mean Poisson rate of a pixel at the given diagonal distance."""
    rate = spec.background_rate * (1.0 + distance) ** (-spec.decay_exponent)
    return rate * spec.enrichment if planted else rate


def _plant_loops(spec: SyntheticSpec, rng: np.random.Generator) -> list[tuple[int, int]]:
    lo, hi = spec.min_loop_distance_bins, spec.loop_distance_cap
    if hi >= spec.n_bins:
        hi = spec.n_bins - 1
    if spec.loop_count == 0:
        return []
    if hi < lo:
        raise ValidationError(
            f"chromosome of {spec.n_bins} bins cannot host loops at distances "
            f"[{lo}, {hi}] bins"
        )
    pixels: list[tuple[int, int]] = []
    for _ in range(PLACEMENT_MAX_RETRIES):
        if len(pixels) == spec.loop_count:
            break
        distance = int(rng.integers(lo, hi + 1))
        i = int(rng.integers(0, spec.n_bins - distance))
        j = i + distance
        if all(
            max(abs(i - pi), abs(j - pj)) >= LOOP_MIN_SEPARATION_BINS for pi, pj in pixels
        ):
            pixels.append((i, j))
    else:
        raise ValidationError(
            f"chromosome of {spec.n_bins} bins too small to host {spec.loop_count} "
            f"planted loops at separation {LOOP_MIN_SEPARATION_BINS}"
        )
    pixels.sort()
    return pixels


def generate_chromosome(spec: SyntheticSpec, name: str = "synthetic") -> ChromosomeData:
    """Generate one seeded chromosome: contacts, tracks, loops, expression."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_bins

    loop_pixels = _plant_loops(spec, rng)
    distance = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    rates = spec.background_rate * (1.0 + distance) ** (-spec.decay_exponent)
    for i, j in loop_pixels:
        rates[i, j] *= spec.enrichment
        rates[j, i] *= spec.enrichment

    upper_i, upper_j = np.triu_indices(n)
    counts = np.zeros((n, n), dtype=np.float64)
    counts[upper_i, upper_j] = rng.poisson(rates[upper_i, upper_j]).astype(np.float64)
    counts = counts + np.triu(counts, 1).T

    nz_i, nz_j = np.nonzero(np.triu(counts))
    contacts = [
        SparseContactRecord(int(i), int(j), float(counts[i, j])) for i, j in zip(nz_i, nz_j)
    ]

    bins_per_res = spec.resolution_bp // spec.bin_track_bp
    n_track_bins = n * bins_per_res
    anchor_bins = sorted({i for pixel in loop_pixels for i in pixel})
    peak_amplitude = spec.anchor_coupling * spec.enrichment
    positions = np.arange(n_track_bins, dtype=np.float64)
    peaks = np.zeros(n_track_bins, dtype=np.float64)
    for anchor in anchor_bins:
        center = (anchor + 0.5) * bins_per_res
        peaks += np.exp(-0.5 * ((positions - center) / PEAK_WIDTH_TRACK_BINS) ** 2)
    track_arrays = []
    track_records: list[list[TrackRecord]] = []
    for scale in TRACK_CHANNEL_SCALES:
        noise = rng.normal(0.0, spec.track_noise, n_track_bins)
        values = np.clip(spec.track_baseline + scale * peak_amplitude * peaks + noise, 0.0, None)
        track_arrays.append(values)
        track_records.append(
            [
                TrackRecord(
                    GenomicInterval(
                        name, k * spec.bin_track_bp, (k + 1) * spec.bin_track_bp
                    ),
                    float(v),
                )
                for k, v in enumerate(values)
            ]
        )

    per_bin_track = track_arrays[0].reshape(n, bins_per_res).mean(axis=1)
    row_mass = np.log1p(counts.sum(axis=1))
    cage = np.clip(
        spec.cage_track_weight * per_bin_track
        + spec.cage_contact_weight * row_mass
        + rng.normal(0.0, spec.cage_noise, n),
        0.0,
        None,
    )

    loops = [
        LoopAnnotation(
            GenomicInterval(name, i * spec.resolution_bp, (i + 1) * spec.resolution_bp),
            GenomicInterval(name, j * spec.resolution_bp, (j + 1) * spec.resolution_bp),
            label="positive",
        )
        for i, j in loop_pixels
    ]

    return ChromosomeData(
        name=name,
        spec=spec,
        matrix=counts,
        contacts=contacts,
        track_arrays=track_arrays,
        track_records=track_records,
        loops=loops,
        cage=cage,
    )


def _window_pair(
    chrom: ChromosomeData,
    balanced: np.ndarray,
    origin_x: int,
    origin_y: int,
    window_bins: int,
    loop_label: int | None = None,
    cage: np.ndarray | None = None,
    contact_target: bool = False,
) -> SamplePair | None:
    """Assemble one window from precomputed dense arrays; None if filtered."""
    spec = chrom.spec
    values = window_from_dense(balanced, origin_x, origin_y, window_bins)
    if not passes_quality_filter(values):
        return None
    res = spec.resolution_bp
    interval_x = GenomicInterval(chrom.name, origin_x * res, (origin_x + window_bins) * res)
    interval_y = GenomicInterval(chrom.name, origin_y * res, (origin_y + window_bins) * res)
    bins_per_res = res // spec.bin_track_bp
    seg = window_bins * bins_per_res
    channels = []
    for array in chrom.track_arrays:
        x_slice = array[origin_x * bins_per_res : origin_x * bins_per_res + seg]
        y_slice = array[origin_y * bins_per_res : origin_y * bins_per_res + seg]
        channels.append(np.log1p(np.concatenate([x_slice, y_slice])))
    track = TrackWindow(np.stack(channels, axis=1), interval_x, interval_y, spec.bin_track_bp)
    contact = ContactMapWindow(values, interval_x, interval_y, res)
    target = values.copy() if contact_target else None
    cage_target = None
    if cage is not None:
        cage_target = np.concatenate(
            [cage[origin_x : origin_x + window_bins], cage[origin_y : origin_y + window_bins]]
        )
    return SamplePair(
        contact, track, loop_label=loop_label, cage=cage_target, contact_target=target
    )


def _centered_origin(bin_index: int, window_bins: int, n_bins: int) -> int:
    return int(np.clip(bin_index - window_bins // 2, 0, n_bins - window_bins))


def _loop_window(
    chrom: ChromosomeData,
    balanced: np.ndarray,
    annotation: LoopAnnotation,
    window_bins: int,
    label: int,
) -> SamplePair | None:
    res = chrom.spec.resolution_bp
    bin_i = annotation.anchor1.start // res
    bin_j = annotation.anchor2.start // res
    origin_x = _centered_origin(bin_i, window_bins, chrom.n_bins)
    origin_y = _centered_origin(bin_j, window_bins, chrom.n_bins)
    return _window_pair(chrom, balanced, origin_x, origin_y, window_bins, loop_label=label)


@dataclass
class SplitResult:
    """Assembled samples for one split, plus per-sample loop annotations."""

    chromosome: ChromosomeData
    balanced: np.ndarray
    samples: list[SamplePair]
    annotations: list[LoopAnnotation] | None


def build_split(
    spec: SyntheticSpec,
    n_windows: int,
    task: str,
    window_bins: int,
    name: str,
) -> SplitResult:
    """Generate one chromosome and assemble its windows for the given task."""
    chrom = generate_chromosome(spec, name=name)
    balanced, _ = kr_balance(chrom.matrix, tolerance=1e-8)
    rng = np.random.default_rng(spec.seed + 7919)
    samples: list[SamplePair] = []
    annotations: list[LoopAnnotation] | None = None
    n = chrom.n_bins

    if task == "loop":
        n_pos = n_windows // 2
        n_neg = n_windows - n_pos
        if len(chrom.loops) < n_pos:
            raise ValidationError(
                f"split {name!r} needs {n_pos} positive loops but only "
                f"{len(chrom.loops)} were planted; raise loop_count"
            )
        annotations = []
        for annotation in chrom.loops[:n_pos]:
            sample = _loop_window(chrom, balanced, annotation, window_bins, label=1)
            if sample is None:
                raise SamplingError(f"positive loop window failed the quality filter in {name!r}")
            samples.append(sample)
            annotations.append(annotation)
        max_positive_distance = max(
            a.anchor2.start - a.anchor1.start for a in chrom.loops
        )
        far_cap = min(spec.extent_bp - spec.resolution_bp, 3 * max_positive_distance)
        collected = 0
        for round_idx in range(20):
            if collected >= n_neg:
                break
            negatives = sample_negative_loops(
                chrom.loops,
                max(8, int(1.5 * (n_neg - collected))),
                rng_seed=spec.seed + 104729 + round_idx,
                chromosome_extent_bp=spec.extent_bp,
                resolution_bp=spec.resolution_bp,
                max_distance_bp=far_cap,
            )
            for annotation in negatives:
                if collected >= n_neg:
                    break
                sample = _loop_window(chrom, balanced, annotation, window_bins, label=0)
                if sample is not None:
                    samples.append(sample)
                    annotations.append(annotation)
                    collected += 1
        if collected < n_neg:
            raise SamplingError(
                f"could not assemble {n_neg} negative windows passing the quality filter"
            )
        return SplitResult(chrom, balanced, samples, annotations)

    attempts = 0
    while len(samples) < n_windows:
        attempts += 1
        if attempts > 200 * n_windows:
            raise SamplingError(
                f"could not assemble {n_windows} windows passing the quality filter in {name!r}"
            )
        origin_x = int(rng.integers(0, n - window_bins + 1))
        offset = int(rng.integers(0, window_bins))
        origin_y = min(origin_x + offset, n - window_bins)
        sample = _window_pair(
            chrom,
            balanced,
            origin_x,
            origin_y,
            window_bins,
            cage=chrom.cage if task == "cage" else None,
            contact_target=(task == "contact"),
        )
        if sample is not None:
            samples.append(sample)
    return SplitResult(chrom, balanced, samples, annotations)


def generate_dataset(
    spec: SyntheticSpec,
    windows_per_split: dict[str, int],
    task: str,
    window_bins: int,
) -> dict[str, SplitResult]:
    """Build disjoint per-split chromosomes and their window archives."""
    if task not in ("none", "loop", "cage", "contact"):
        raise ValidationError(f"unknown task {task!r}")
    results: dict[str, SplitResult] = {}
    for index, (split, n_windows) in enumerate(sorted(windows_per_split.items())):
        split_spec = replace(spec, seed=spec.seed + 65537 * (index + 1))
        results[split] = build_split(
            split_spec, n_windows, task, window_bins, name=f"syn_{split}"
        )
    return results


def write_chromosome_files(chrom: ChromosomeData, out_dir: str | Path) -> dict:
    """Write one chromosome's contact/track/loop files; returns manifest entry."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    contacts_path = out_dir / f"{chrom.name}.contacts.tsv"
    write_contact_matrix(chrom.contacts, contacts_path)
    track_paths = []
    for channel, records in enumerate(chrom.track_records):
        track_path = out_dir / f"{chrom.name}.track{channel}.tsv"
        write_track(records, track_path)
        track_paths.append(track_path.name)
    entry = {
        "contacts": contacts_path.name,
        "tracks": track_paths,
        "n_bins": chrom.n_bins,
    }
    if chrom.loops:
        loops_path = out_dir / f"{chrom.name}.loops.tsv"
        write_loops(chrom.loops, loops_path)
        entry["loops"] = loops_path.name
    return entry


def write_dataset_files(results: dict[str, SplitResult], out_dir: str | Path) -> Path:
    """Write all split chromosomes plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    chromosomes = {}
    splits = {}
    resolution = None
    window_bins = None
    for split, result in results.items():
        entry = write_chromosome_files(result.chromosome, out_dir)
        chromosomes[result.chromosome.name] = entry
        splits[split] = [result.chromosome.name]
        resolution = result.chromosome.spec.resolution_bp
        bin_bp = result.chromosome.spec.bin_track_bp
        window_bins = result.samples[0].contact.values.shape[0] if result.samples else None
    manifest = {
        "resolution_bp": resolution,
        "window_bp": (window_bins or 0) * (resolution or 0),
        "bin_track_bp": bin_bp,
        "chromosomes": chromosomes,
        "splits": splits,
    }
    manifest_path = out_dir / "manifest.yaml"
    with open(manifest_path, "w") as handle:
        yaml.safe_dump(manifest, handle, sort_keys=True)
    return manifest_path
