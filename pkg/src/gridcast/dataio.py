"""Serialization: OGSQ1 sequence container, PGM image export, track CSV.

OGSQ1 layout (all integers little-endian):

    bytes 0..4    magic "OGSQ1"
    u16           version, always 1
    u16           height
    u16           width
    u32           frame count
    u16           frames per second
    then per frame: height*width measurement bytes followed by
    height*width truth bytes, each byte 0 or 1.

Checkpoint blobs share the same skeleton: a 5-byte magic, a u32 scalar
count, then count little-endian float64 values in a fixed parameter order
documented by each model.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boids import SceneObject
from .errors import DataFormatError
from .noise import NoiseConfig, corrupt_frame

OGSQ_MAGIC = b"OGSQ1"
_HEADER = struct.Struct("<5sHHHIH")


@dataclass
class SequenceRecord:
    """Aligned (measurement, truth) binary frame pairs over time."""

    height: int
    width: int
    frames: list = field(default_factory=list)
    fps: int = 30

    def validate(self) -> None:
        if self.height < 1 or self.width < 1:
            raise DataFormatError(f"invalid extent {self.height}x{self.width}")
        for t, (measurement, truth) in enumerate(self.frames):
            for name, frame in (("measurement", measurement), ("truth", truth)):
                if frame.shape != (self.height, self.width):
                    raise DataFormatError(
                        f"frame {t} {name} has shape {frame.shape}, "
                        f"expected {(self.height, self.width)}"
                    )
                if frame.dtype != np.uint8 or not np.isin(frame, (0, 1)).all():
                    raise DataFormatError(f"frame {t} {name} is not binary")

    def measurements(self) -> list:
        return [m for m, _ in self.frames]

    def truths(self) -> list:
        return [t for _, t in self.frames]


def write_ogsq(record: SequenceRecord, sink) -> None:
    """Serialize a record; ``sink`` is a path or a binary file object."""
    record.validate()
    header = _HEADER.pack(
        OGSQ_MAGIC, 1, record.height, record.width, len(record.frames), record.fps
    )
    if hasattr(sink, "write"):
        out = sink
        close = False
    else:
        out = open(sink, "wb")
        close = True
    try:
        out.write(header)
        for measurement, truth in record.frames:
            out.write(measurement.tobytes())
            out.write(truth.tobytes())
    finally:
        if close:
            out.close()


def read_ogsq(source) -> SequenceRecord:
    """Parse a record, rejecting malformed streams with the failing offset."""
    if hasattr(source, "read"):
        data = source.read()
        name = getattr(source, "name", None)
    else:
        data = Path(source).read_bytes()
        name = str(source)

    if len(data) < _HEADER.size:
        raise DataFormatError("truncated header", offset=len(data), source=name)
    magic, version, height, width, n_frames, fps = _HEADER.unpack_from(data, 0)
    if magic != OGSQ_MAGIC:
        raise DataFormatError(f"bad magic {magic!r}", offset=0, source=name)
    if version != 1:
        raise DataFormatError(f"unsupported version {version}", offset=5, source=name)
    if height < 1 or width < 1:
        raise DataFormatError(f"invalid extent {height}x{width}", offset=7, source=name)

    frame_bytes = height * width
    expected = _HEADER.size + 2 * frame_bytes * n_frames
    if len(data) < expected:
        raise DataFormatError(
            f"truncated payload, expected {expected} bytes", offset=len(data), source=name
        )
    if len(data) > expected:
        raise DataFormatError("trailing data after payload", offset=expected, source=name)

    payload = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size)
    if payload.size and payload.max() > 1:
        bad = int(np.argmax(payload > 1))
        raise DataFormatError(
            f"byte value {payload[bad]} outside {{0,1}}",
            offset=_HEADER.size + bad,
            source=name,
        )
    frames = []
    for t in range(n_frames):
        base = 2 * t * frame_bytes
        measurement = payload[base : base + frame_bytes].reshape(height, width).copy()
        truth = (
            payload[base + frame_bytes : base + 2 * frame_bytes]
            .reshape(height, width)
            .copy()
        )
        frames.append((measurement, truth))
    return SequenceRecord(height=height, width=width, frames=frames, fps=fps)


# --- parameter blobs -------------------------------------------------------


def write_param_blob(magic: bytes, arrays, sink) -> None:
    """Write ``magic``, a u32 scalar count, then the arrays' float64 values."""
    if len(magic) != 5:
        raise DataFormatError(f"magic must be 5 bytes, got {magic!r}")
    flat = [np.asarray(a, dtype="<f8").ravel() for a in arrays]
    count = sum(a.size for a in flat)
    if hasattr(sink, "write"):
        out, close = sink, False
    else:
        out, close = open(sink, "wb"), True
    try:
        out.write(magic)
        out.write(struct.pack("<I", count))
        for a in flat:
            out.write(a.tobytes())
    finally:
        if close:
            out.close()


def read_param_blob(magic: bytes, shapes, source) -> list:
    """Read back arrays with the given shapes; validates magic and count."""
    if hasattr(source, "read"):
        data = source.read()
        name = getattr(source, "name", None)
    else:
        data = Path(source).read_bytes()
        name = str(source)
    if len(data) < 9:
        raise DataFormatError("truncated header", offset=len(data), source=name)
    if data[:5] != magic:
        raise DataFormatError(
            f"bad magic {data[:5]!r}, expected {magic!r}", offset=0, source=name
        )
    (count,) = struct.unpack_from("<I", data, 5)
    expected = sum(int(np.prod(s)) for s in shapes)
    if count != expected:
        raise DataFormatError(
            f"scalar count {count} does not match expected {expected}",
            offset=5,
            source=name,
        )
    if len(data) != 9 + 8 * count:
        raise DataFormatError(
            f"payload length {len(data) - 9} does not hold {count} float64 values",
            offset=min(len(data), 9 + 8 * count),
            source=name,
        )
    values = np.frombuffer(data, dtype="<f8", offset=9)
    arrays = []
    start = 0
    for shape in shapes:
        n = int(np.prod(shape))
        arrays.append(values[start : start + n].reshape(shape).copy())
        start += n
    return arrays


def peek_magic(source) -> bytes:
    """First five bytes of a file, for checkpoint dispatch."""
    with open(source, "rb") as f:
        return f.read(5)


# --- PGM export ------------------------------------------------------------


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 2:
        raise DataFormatError(f"PGM image must be 2-d, got shape {image.shape}")
    height, width = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        f.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise DataFormatError("not a maxval-255 P5 graymap", source=str(path))
    width, height = (int(x) for x in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8)
    if pixels.size != height * width:
        raise DataFormatError(
            f"payload holds {pixels.size} bytes, expected {height * width}",
            source=str(path),
        )
    return pixels.reshape(height, width).copy()


def gray_byte(values: np.ndarray) -> np.ndarray:
    """Map [0,1] linearly onto 0..255, rounding halves up."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def export_frames(record: SequenceRecord, directory) -> list:
    """One PGM per frame per channel; binary frames map {0,1} to {0,255}."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for t, (measurement, truth) in enumerate(record.frames):
        for channel, frame in (("measurement", measurement), ("truth", truth)):
            path = directory / f"frame_{t:05d}_{channel}.pgm"
            write_pgm(path, frame * np.uint8(255))
            written.append(path)
    return written


def export_gray_frames(frames, directory, channel: str) -> list:
    """Export real-valued frames in [0,1] (probabilities, activations)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for t, frame in enumerate(frames):
        path = directory / f"frame_{t:05d}_{channel}.pgm"
        write_pgm(path, gray_byte(frame))
        written.append(path)
    return written


# --- object tracks ---------------------------------------------------------

TRACK_HEADER = ["frame", "object_id", "x", "y", "radius"]


@dataclass(frozen=True)
class TrackRow:
    frame_index: int
    object_id: int
    x: float
    y: float
    radius: float


def read_tracks_csv(source) -> list[TrackRow]:
    """Parse rows from a ``frame,object_id,x,y,radius`` CSV."""
    if hasattr(source, "read"):
        text, name = source.read(), getattr(source, "name", None)
    else:
        text, name = Path(source).read_text(encoding="utf-8"), str(source)
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataFormatError("empty track file", offset=1, source=name) from None
    if header != TRACK_HEADER:
        raise DataFormatError(
            f"bad header {header!r}, expected {TRACK_HEADER!r}", offset=1, source=name
        )
    rows = []
    for lineno, cells in enumerate(reader, start=2):
        if not cells:
            continue
        try:
            rows.append(
                TrackRow(
                    frame_index=int(cells[0]),
                    object_id=int(cells[1]),
                    x=float(cells[2]),
                    y=float(cells[3]),
                    radius=float(cells[4]),
                )
            )
        except (ValueError, IndexError):
            raise DataFormatError(
                f"unparseable row {cells!r}", offset=lineno, source=name
            ) from None
    return rows


def write_tracks_csv(rows: list[TrackRow], sink) -> None:
    if hasattr(sink, "write"):
        out, close = sink, False
    else:
        out, close = open(sink, "w", newline="", encoding="utf-8"), True
    try:
        writer = csv.writer(out)
        writer.writerow(TRACK_HEADER)
        for r in rows:
            writer.writerow([r.frame_index, r.object_id, r.x, r.y, r.radius])
    finally:
        if close:
            out.close()


def build_sequence(
    object_frames,
    height: int,
    width: int,
    noise: NoiseConfig,
    fps: int = 30,
) -> SequenceRecord:
    """Corrupt and rasterize per-frame object sets into a record."""
    frames = [
        corrupt_frame(objs, noise, t, height, width)
        for t, objs in enumerate(object_frames)
    ]
    return SequenceRecord(height=height, width=width, frames=frames, fps=fps)


def tracks_to_sequence(
    rows: list[TrackRow],
    height: int,
    width: int,
    noise: NoiseConfig,
    n_frames: int | None = None,
    fps: int = 30,
) -> SequenceRecord:
    """Group sorted track rows by frame and run them through the noise pipe.

    Frame indices with no rows produce empty frames; ``n_frames`` extends or
    truncates nothing, it only declares the sequence length for sparse data.
    """
    last = -1
    for number, row in enumerate(rows, start=1):
        if row.frame_index < last:
            raise DataFormatError(
                f"rows not sorted by frame: frame {row.frame_index} after {last}",
                offset=number,
            )
        last = row.frame_index
        if not (0 <= row.x < width and 0 <= row.y < height):
            raise DataFormatError(
                f"position ({row.x}, {row.y}) outside [0,{width})x[0,{height})",
                offset=number,
            )
        if row.radius <= 0:
            raise DataFormatError(f"radius {row.radius} must be positive", offset=number)

    if n_frames is None:
        n_frames = rows[-1].frame_index + 1 if rows else 0
    object_frames: list[list[SceneObject]] = [[] for _ in range(n_frames)]
    for row in rows:
        if row.frame_index < n_frames:
            object_frames[row.frame_index].append(
                SceneObject(x=row.x, y=row.y, radius=row.radius)
            )
    return build_sequence(object_frames, height, width, noise, fps=fps)
