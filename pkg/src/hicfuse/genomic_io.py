"""Simplified genomic file formats and the dataset manifest.

All carriers are plain tab-separated text so that every stage of the
pipeline round-trips exactly:

* contact matrix TSV: ``bin_i <TAB> bin_j <TAB> count``
* track TSV:          ``chrom <TAB> start <TAB> end <TAB> value``
* loop TSV (BEDPE-like): six interval columns plus optional score/label
* manifest: YAML key/value document

Lines starting with ``#`` are ignored in every TSV format.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError, ParseError, ValidationError

DEFAULT_RESOLUTION_BP = 5000
DEFAULT_WINDOW_BP = 250000
DEFAULT_BIN_TRACK_BP = 100

SCORE_DECIMALS = 6


@dataclass(frozen=True)
class GenomicInterval:
    """Half-open genomic interval [start, end) with 0-based coordinates."""

    chromosome: str
    start: int
    end: int

    def __post_init__(self):
        if not self.chromosome:
            raise ValidationError("interval chromosome must be non-empty")
        if not (0 <= self.start < self.end):
            raise ValidationError(
                f"interval requires 0 <= start < end, got [{self.start}, {self.end})"
            )

    @property
    def length(self) -> int:
        return self.end - self.start

    def overlaps(self, other: "GenomicInterval") -> bool:
        return (
            self.chromosome == other.chromosome
            and self.start < other.end
            and other.start < self.end
        )


@dataclass(frozen=True)
class SparseContactRecord:
    """One upper-triangular contact matrix entry (symmetry implied)."""

    bin_i: int
    bin_j: int
    count: float

    def __post_init__(self):
        if self.bin_i > self.bin_j:
            raise ValidationError(
                f"contact record must be upper-triangular, got ({self.bin_i}, {self.bin_j})"
            )
        if not math.isfinite(self.count) or self.count < 0:
            raise ValidationError(f"contact count must be finite and >= 0, got {self.count}")


@dataclass(frozen=True)
class TrackRecord:
    """One epigenomic signal interval."""

    interval: GenomicInterval
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value) or self.value < 0:
            raise ValidationError(f"track value must be finite and >= 0, got {self.value}")


@dataclass(frozen=True)
class LoopAnnotation:
    """A labelled (or unlabelled) chromatin loop between two anchors."""

    anchor1: GenomicInterval
    anchor2: GenomicInterval
    score: float | None = None
    label: str = "unlabeled"

    def __post_init__(self):
        if self.anchor1.chromosome != self.anchor2.chromosome:
            raise ValidationError("loop anchors must be on the same chromosome")
        if self.anchor1.start > self.anchor2.start:
            raise ValidationError("loop anchors must be ordered by start coordinate")
        if self.label not in ("positive", "negative", "unlabeled"):
            raise ValidationError(f"unknown loop label {self.label!r}")
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise ValidationError(f"loop score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class LoopCall:
    """A predicted loop emitted by the whole-chromosome annotator."""

    anchor1: GenomicInterval
    anchor2: GenomicInterval
    probability: float
    density: float
    members: int = 1


@dataclass(frozen=True)
class ChromosomeFiles:
    """File locations for one chromosome in the manifest."""

    contacts: Path
    tracks: tuple[Path, ...]
    loops: Path | None = None
    n_bins: int | None = None


@dataclass(frozen=True)
class DatasetManifest:
    """Dataset layout: file paths per chromosome plus binning parameters."""

    chromosomes: dict[str, ChromosomeFiles]
    splits: dict[str, tuple[str, ...]]
    resolution_bp: int = DEFAULT_RESOLUTION_BP
    window_bp: int = DEFAULT_WINDOW_BP
    bin_track_bp: int = DEFAULT_BIN_TRACK_BP
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self):
        if self.window_bp % self.resolution_bp != 0:
            raise ValidationError(
                f"window_bp {self.window_bp} not divisible by resolution_bp {self.resolution_bp}"
            )
        if self.window_bp % self.bin_track_bp != 0:
            raise ValidationError(
                f"window_bp {self.window_bp} not divisible by bin_track_bp {self.bin_track_bp}"
            )
        seen: dict[str, str] = {}
        for split, chroms in self.splits.items():
            for chrom in chroms:
                if chrom in seen:
                    raise ValidationError(
                        f"chromosome {chrom!r} assigned to both {seen[chrom]!r} and {split!r} splits"
                    )
                if chrom not in self.chromosomes:
                    raise ValidationError(f"split {split!r} references unknown chromosome {chrom!r}")
                seen[chrom] = split

    @property
    def window_bins(self) -> int:
        """Side length of one contact-map window, in bins."""
        return self.window_bp // self.resolution_bp

    @property
    def track_length(self) -> int:
        """Length of the concatenated two-segment track window."""
        return 2 * self.window_bp // self.bin_track_bp


def _data_lines(path: str | Path):
    """Yield (line_number, stripped_line) skipping blanks and # comments."""
    with open(path) as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line


def parse_contact_matrix(path: str | Path, chromosome: str = "") -> list[SparseContactRecord]:
    """Parse a contact matrix TSV into sorted upper-triangular records.

    Lower-triangular entries are mirrored into the upper triangle; a
    duplicate pixel with a conflicting count is a validation error.
    """
    entries: dict[tuple[int, int], float] = {}
    for lineno, line in _data_lines(path):
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}")
        try:
            bin_i, bin_j, count = int(fields[0]), int(fields[1]), float(fields[2])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        if bin_i < 0 or bin_j < 0:
            raise ValidationError(f"{path}:{lineno}: negative bin index")
        if not math.isfinite(count) or count < 0:
            raise ValidationError(f"{path}:{lineno}: count must be finite and >= 0, got {count}")
        if bin_i > bin_j:
            bin_i, bin_j = bin_j, bin_i
        key = (bin_i, bin_j)
        if key in entries and entries[key] != count:
            raise ValidationError(
                f"{path}:{lineno}: conflicting counts for pixel {key}: "
                f"{entries[key]} vs {count}"
            )
        entries[key] = count
    return [SparseContactRecord(i, j, c) for (i, j), c in sorted(entries.items())]


def parse_track(path: str | Path) -> list[TrackRecord]:
    """Parse a track TSV into sorted, non-overlapping records."""
    records: list[TrackRecord] = []
    for lineno, line in _data_lines(path):
        fields = line.split("\t")
        if len(fields) != 4:
            raise ParseError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}")
        chrom = fields[0]
        try:
            start, end, value = int(fields[1]), int(fields[2]), float(fields[3])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        if start >= end:
            raise ValidationError(f"{path}:{lineno}: start {start} >= end {end}")
        records.append(TrackRecord(GenomicInterval(chrom, start, end), value))
    records.sort(key=lambda r: (r.interval.chromosome, r.interval.start, r.interval.end))
    for prev, cur in zip(records, records[1:]):
        if prev.interval.overlaps(cur.interval):
            raise ValidationError(
                f"{path}: overlapping track intervals "
                f"{prev.interval.chromosome}:[{prev.interval.start}, {prev.interval.end}) and "
                f"{cur.interval.chromosome}:[{cur.interval.start}, {cur.interval.end})"
            )
    return records


def parse_loops(path: str | Path) -> list[LoopAnnotation]:
    """Parse a BEDPE-like loop TSV (6 coordinate columns, optional score/label)."""
    loops: list[LoopAnnotation] = []
    for lineno, line in _data_lines(path):
        fields = line.split("\t")
        if len(fields) < 6:
            raise ParseError(f"{path}:{lineno}: expected >= 6 tab-separated fields, got {len(fields)}")
        try:
            a1 = GenomicInterval(fields[0], int(fields[1]), int(fields[2]))
            a2 = GenomicInterval(fields[3], int(fields[4]), int(fields[5]))
            score = float(fields[6]) if len(fields) > 6 and fields[6] != "." else None
        except (ValueError, ValidationError) as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        label = fields[7] if len(fields) > 7 else "unlabeled"
        loops.append(LoopAnnotation(a1, a2, score=score, label=label))
    return loops


def write_bedpe(loops: list[LoopCall], path: str | Path) -> None:
    """Write loop calls as BEDPE: six coordinates plus score and density.

    Score and density are serialized at 6 decimals; re-parsing the file
    reproduces them exactly at that precision.
    """
    with open(path, "w") as handle:
        for loop in loops:
            handle.write(
                "\t".join(
                    (
                        loop.anchor1.chromosome,
                        str(loop.anchor1.start),
                        str(loop.anchor1.end),
                        loop.anchor2.chromosome,
                        str(loop.anchor2.start),
                        str(loop.anchor2.end),
                        f"{loop.probability:.{SCORE_DECIMALS}f}",
                        f"{loop.density:.{SCORE_DECIMALS}f}",
                    )
                )
                + "\n"
            )


def parse_bedpe(path: str | Path) -> list[LoopCall]:
    """Re-parse a write_bedpe output file."""
    calls: list[LoopCall] = []
    for lineno, line in _data_lines(path):
        fields = line.split("\t")
        if len(fields) != 8:
            raise ParseError(f"{path}:{lineno}: expected 8 tab-separated fields, got {len(fields)}")
        try:
            calls.append(
                LoopCall(
                    anchor1=GenomicInterval(fields[0], int(fields[1]), int(fields[2])),
                    anchor2=GenomicInterval(fields[3], int(fields[4]), int(fields[5])),
                    probability=float(fields[6]),
                    density=float(fields[7]),
                )
            )
        except (ValueError, ValidationError) as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return calls


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise ConfigError(f"manifest is missing required key {key!r} in {context}")
    return mapping[key]


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and validate a YAML dataset manifest.

    Relative file paths are resolved against the manifest's directory.
    Missing binning keys fall back to the 5 kb / 250 kb / 100 bp defaults.
    """
    path = Path(path)
    with open(path) as handle:
        doc = yaml.safe_load(handle)
    if not isinstance(doc, dict):
        raise ConfigError(f"manifest {path} is not a key/value document")

    base = path.parent

    def resolve(p: str) -> Path:
        candidate = Path(p)
        return candidate if candidate.is_absolute() else base / candidate

    chrom_doc = _require(doc, "chromosomes", "manifest root")
    chromosomes: dict[str, ChromosomeFiles] = {}
    for name, entry in chrom_doc.items():
        if not isinstance(entry, dict):
            raise ConfigError(f"manifest chromosome {name!r} must be a mapping")
        contacts = resolve(_require(entry, "contacts", f"chromosome {name!r}"))
        tracks = tuple(resolve(p) for p in _require(entry, "tracks", f"chromosome {name!r}"))
        loops = resolve(entry["loops"]) if entry.get("loops") else None
        chromosomes[name] = ChromosomeFiles(
            contacts=contacts, tracks=tracks, loops=loops, n_bins=entry.get("n_bins")
        )

    splits_doc = _require(doc, "splits", "manifest root")
    splits = {split: tuple(chroms or ()) for split, chroms in splits_doc.items()}

    return DatasetManifest(
        chromosomes=chromosomes,
        splits=splits,
        resolution_bp=int(doc.get("resolution_bp", DEFAULT_RESOLUTION_BP)),
        window_bp=int(doc.get("window_bp", DEFAULT_WINDOW_BP)),
        bin_track_bp=int(doc.get("bin_track_bp", DEFAULT_BIN_TRACK_BP)),
        base_dir=base,
    )


def write_contact_matrix(records: list[SparseContactRecord], path: str | Path) -> None:
    """Write contact records as TSV (inverse of parse_contact_matrix)."""
    with open(path, "w") as handle:
        for rec in records:
            handle.write(f"{rec.bin_i}\t{rec.bin_j}\t{rec.count!r}\n")


def write_track(records: list[TrackRecord], path: str | Path) -> None:
    """Write track records as TSV (inverse of parse_track)."""
    with open(path, "w") as handle:
        for rec in records:
            iv = rec.interval
            handle.write(f"{iv.chromosome}\t{iv.start}\t{iv.end}\t{rec.value!r}\n")


def write_loops(loops: list[LoopAnnotation], path: str | Path) -> None:
    """Write loop annotations as BEDPE-like TSV (inverse of parse_loops)."""
    with open(path, "w") as handle:
        for loop in loops:
            score = "." if loop.score is None else f"{loop.score:.{SCORE_DECIMALS}f}"
            handle.write(
                "\t".join(
                    (
                        loop.anchor1.chromosome,
                        str(loop.anchor1.start),
                        str(loop.anchor1.end),
                        loop.anchor2.chromosome,
                        str(loop.anchor2.start),
                        str(loop.anchor2.end),
                        score,
                        loop.label,
                    )
                )
                + "\n"
            )
