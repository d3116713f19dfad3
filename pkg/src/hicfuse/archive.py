"""Length-prefixed binary archive of assembled sample pairs.

Layout (all integers little-endian):

* header: magic ``MXH1`` (4 bytes), u32 version, u32 H, u32 W, u32 L1,
  u32 O, u32 resolution_bp, u32 bin_track_bp, u32 record count
* per record: u32 payload length, then the payload:
  chromosome strings and window start coordinates for both axes,
  a u8 target tag (0 none, 1 loop, 2 cage, 3 contact) with its payload,
  the H*W contact matrix and the L1*O track array as float64 row-major.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import ARCHIVE_MAGIC
from .errors import ParseError, ValidationError
from .genomic_io import GenomicInterval
from .preprocessing import ContactMapWindow, SamplePair, TrackWindow

ARCHIVE_VERSION = 1

_TARGET_TAGS = {"none": 0, "loop": 1, "cage": 2, "contact": 3}
_TAG_TARGETS = {v: k for k, v in _TARGET_TAGS.items()}


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _unpack_str(buf: memoryview, offset: int) -> tuple[str, int]:
    (length,) = struct.unpack_from("<H", buf, offset)
    offset += 2
    return bytes(buf[offset : offset + length]).decode("utf-8"), offset + length


def write_archive(path: str | Path, samples: list[SamplePair], resolution_bp: int, bin_track_bp: int) -> None:
    """Serialize samples; byte-identical output for identical inputs."""
    if not samples:
        raise ValidationError("cannot write an empty archive")
    first = samples[0]
    height, width = first.contact.values.shape
    track_len, channels = first.track.values.shape
    with open(path, "wb") as handle:
        handle.write(ARCHIVE_MAGIC)
        handle.write(
            struct.pack(
                "<7I", ARCHIVE_VERSION, height, width, track_len, channels, resolution_bp, bin_track_bp
            )
        )
        handle.write(struct.pack("<I", len(samples)))
        for sample in samples:
            if sample.contact.values.shape != (height, width):
                raise ValidationError("all archive samples must share the contact shape")
            if sample.track.values.shape != (track_len, channels):
                raise ValidationError("all archive samples must share the track shape")
            payload = bytearray()
            payload += _pack_str(sample.contact.origin_x.chromosome)
            payload += struct.pack("<q", sample.contact.origin_x.start)
            payload += _pack_str(sample.contact.origin_y.chromosome)
            payload += struct.pack("<q", sample.contact.origin_y.start)
            kind = sample.target_kind
            payload += struct.pack("<B", _TARGET_TAGS[kind])
            if kind == "loop":
                payload += struct.pack("<B", int(sample.loop_label))
            elif kind == "cage":
                cage = np.ascontiguousarray(sample.cage, dtype=np.float64)
                payload += struct.pack("<I", cage.size) + cage.tobytes()
            elif kind == "contact":
                target = np.ascontiguousarray(sample.contact_target, dtype=np.float64)
                payload += target.tobytes()
            payload += np.ascontiguousarray(sample.contact.values, dtype=np.float64).tobytes()
            payload += np.ascontiguousarray(sample.track.values, dtype=np.float64).tobytes()
            handle.write(struct.pack("<I", len(payload)))
            handle.write(payload)


def read_archive(path: str | Path) -> tuple[list[SamplePair], dict]:
    """Read an archive back into sample pairs plus its header metadata."""
    data = Path(path).read_bytes()
    if data[:4] != ARCHIVE_MAGIC:
        raise ParseError(f"{path}: bad magic {data[:4]!r}, expected {ARCHIVE_MAGIC!r}")
    version, height, width, track_len, channels, resolution_bp, bin_track_bp = struct.unpack_from(
        "<7I", data, 4
    )
    if version != ARCHIVE_VERSION:
        raise ParseError(f"{path}: unsupported archive version {version}")
    (count,) = struct.unpack_from("<I", data, 32)
    offset = 36
    window_bp = height * resolution_bp
    buf = memoryview(data)
    samples: list[SamplePair] = []
    for _ in range(count):
        (payload_len,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        end = offset + payload_len
        chrom_x, pos = _unpack_str(buf, offset)
        (start_x,) = struct.unpack_from("<q", buf, pos)
        pos += 8
        chrom_y, pos = _unpack_str(buf, pos)
        (start_y,) = struct.unpack_from("<q", buf, pos)
        pos += 8
        (tag,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        kind = _TAG_TARGETS.get(tag)
        if kind is None:
            raise ParseError(f"{path}: unknown target tag {tag}")
        loop_label = cage = contact_target = None
        if kind == "loop":
            (label,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            loop_label = int(label)
        elif kind == "cage":
            (size,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            cage = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).copy()
            pos += 8 * size
        elif kind == "contact":
            contact_target = (
                np.frombuffer(buf, dtype="<f8", count=height * width, offset=pos)
                .reshape(height, width)
                .copy()
            )
            pos += 8 * height * width
        contact_values = (
            np.frombuffer(buf, dtype="<f8", count=height * width, offset=pos)
            .reshape(height, width)
            .copy()
        )
        pos += 8 * height * width
        track_values = (
            np.frombuffer(buf, dtype="<f8", count=track_len * channels, offset=pos)
            .reshape(track_len, channels)
            .copy()
        )
        pos += 8 * track_len * channels
        if pos != end:
            raise ParseError(f"{path}: record payload length mismatch")
        interval_x = GenomicInterval(chrom_x, start_x, start_x + window_bp)
        interval_y = GenomicInterval(chrom_y, start_y, start_y + window_bp)
        samples.append(
            SamplePair(
                contact=ContactMapWindow(contact_values, interval_x, interval_y, resolution_bp),
                track=TrackWindow(track_values, interval_x, interval_y, bin_track_bp),
                loop_label=loop_label,
                cage=cage,
                contact_target=contact_target,
            )
        )
        offset = end
    meta = {
        "version": version,
        "height": height,
        "width": width,
        "track_length": track_len,
        "track_channels": channels,
        "resolution_bp": resolution_bp,
        "bin_track_bp": bin_track_bp,
        "count": count,
    }
    return samples, meta
