"""Frame sequence ingest: PNM / FCRW readers, bilinear resize, splits, synthetic fixtures.

Frames are float64 arrays of shape (height, width, channels) with values in [0, 1].
A FrameSequence stacks them into (n_frames, height, width, channels).
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

RAW_MAGIC = b"FCRW"
RAW_HEADER = struct.Struct("<4sIII")
SPLITS = ("train", "validation", "test")
IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm", ".fcrw")

log = logging.getLogger(__name__)


class FrameFormatError(ValueError):
    """Raised for undecodable or inconsistent frame files."""


class ManifestError(ValueError):
    pass


def check_frame(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[2] not in (1, 3):
        raise FrameFormatError(f"frame must be (h, w, 1|3), got {frame.shape}")
    if frame.size == 0:
        raise FrameFormatError("frame has zero size")
    if not np.all(np.isfinite(frame)) or frame.min() < 0.0 or frame.max() > 1.0:
        raise FrameFormatError("frame pixels must lie in [0, 1]")
    return frame


@dataclass(frozen=True)
class FrameSequence:
    frames: np.ndarray
    source_id: str = ""
    label: str | None = None

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 4 or len(frames) == 0:
            raise FrameFormatError(
                f"sequence must be a non-empty (n, h, w, c) stack, got {frames.shape}"
            )
        check_frame(frames[0])
        if frames.min() < 0.0 or frames.max() > 1.0:
            raise FrameFormatError("frame pixels must lie in [0, 1]")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def dims(self) -> tuple[int, int, int]:
        """(width, height, channels)."""
        _, h, w, c = self.frames.shape
        return w, h, c


@dataclass(frozen=True)
class ManifestEntry:
    source_id: str
    split: str
    label: str = ""


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self):
        ids = [e.source_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate source_id(s) in manifest: {dupes}")
        for e in self.entries:
            if e.split not in SPLITS:
                raise ManifestError(f"{e.source_id}: unknown split {e.split!r}")

    def ids(self, split: str) -> list[str]:
        return [e.source_id for e in self.entries if e.split == split]


# --- readers ---------------------------------------------------------------


def _pnm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read `count` whitespace-separated header tokens, skipping # comments."""
    tokens: list[bytes] = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FrameFormatError("truncated PNM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pnm(path: str | Path) -> np.ndarray:
    """Decode a binary P5 (gray) or P6 (RGB) file with maxval 255 into uint8 (h, w, c)."""
    data = Path(path).read_bytes()
    try:
        (magic, w, h, maxval), offset = _pnm_tokens(data, 4)
        width, height, maxval = int(w), int(h), int(maxval)
    except (ValueError, FrameFormatError) as exc:
        raise FrameFormatError(f"{path}: bad PNM header") from exc
    if magic not in (b"P5", b"P6"):
        raise FrameFormatError(f"{path}: unsupported PNM type {magic!r}")
    if maxval != 255:
        raise FrameFormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    if width <= 0 or height <= 0:
        raise FrameFormatError(f"{path}: zero dimension")
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    raster = data[offset : offset + need]
    if len(raster) != need:
        raise FrameFormatError(f"{path}: raster has {len(raster)} bytes, expected {need}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)


def write_pnm(path: str | Path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim == 2:
        image = image[:, :, None]
    h, w, c = image.shape
    magic = {1: b"P5", 3: b"P6"}[c]
    Path(path).write_bytes(magic + b"\n%d %d\n255\n" % (w, h) + image.tobytes())


def read_raw(path: str | Path) -> np.ndarray:
    """Decode an FCRW file (16-byte header, then channel-planar uint8) into (h, w, c)."""
    data = Path(path).read_bytes()
    if len(data) < RAW_HEADER.size:
        raise FrameFormatError(f"{path}: truncated FCRW header")
    magic, w, h, c = RAW_HEADER.unpack_from(data)
    if magic != RAW_MAGIC:
        raise FrameFormatError(f"{path}: bad magic {magic!r}")
    if w == 0 or h == 0 or c not in (1, 3):
        raise FrameFormatError(f"{path}: bad dimensions {w}x{h}x{c}")
    body = data[RAW_HEADER.size :]
    if len(body) != w * h * c:
        raise FrameFormatError(f"{path}: payload has {len(body)} bytes, expected {w * h * c}")
    planes = np.frombuffer(body, dtype=np.uint8).reshape(c, h, w)
    return np.ascontiguousarray(planes.transpose(1, 2, 0))


def write_raw(path: str | Path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    h, w, c = image.shape
    planar = image.transpose(2, 0, 1).tobytes()
    Path(path).write_bytes(RAW_HEADER.pack(RAW_MAGIC, w, h, c) + planar)


def to_bytes(frame: np.ndarray) -> np.ndarray:
    """Quantize a [0, 1] frame to uint8, rounding half up."""
    return np.floor(np.asarray(frame) * 255.0 + 0.5).astype(np.uint8)


def read_image(path: str | Path) -> np.ndarray:
    if Path(path).suffix.lower() == ".fcrw":
        return read_raw(path)
    return read_pnm(path)


# --- resize ----------------------------------------------------------------


def _axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if n_out == 1 or n_in == 1:
        idx = np.zeros(n_out, dtype=np.int64)
        return idx, idx, np.zeros(n_out)
    # corner-aligned: output i samples input i*(n_in-1)/(n_out-1); integer
    # arithmetic keeps exact-integer coordinates exact
    num = np.arange(n_out, dtype=np.int64) * (n_in - 1)
    den = n_out - 1
    lo = num // den
    frac = (num - lo * den) / den
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, frac


def resize_bilinear(image: np.ndarray, width: int, height: int) -> np.ndarray:
    """Corner-aligned bilinear resize of an (h, w, c) float image."""
    if width <= 0 or height <= 0:
        raise ValueError("target dimensions must be positive")
    image = np.asarray(image, dtype=np.float64)
    h, w, _ = image.shape
    if (h, w) == (height, width):
        return image.copy()
    y0, y1, fy = _axis_weights(h, height)
    x0, x1, fx = _axis_weights(w, width)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = image[y0][:, x0] + fx * (image[y0][:, x1] - image[y0][:, x0])
    bot = image[y1][:, x0] + fx * (image[y1][:, x1] - image[y1][:, x0])
    # a + f*(b - a) keeps constant regions bit-exact
    return np.clip(top + fy * (bot - top), 0.0, 1.0)


# --- public ops --------------------------------------------------------------


def load_sequence(
    path: str | Path,
    target: tuple[int, int] | None = None,
    label: str | None = None,
) -> FrameSequence:
    """Load every PNM/FCRW file in `path`, in lexicographic filename order.

    Frames are normalized by 1/255 and, when `target=(width, height)` is given,
    bilinearly resized.
    """
    path = Path(path)
    if not path.is_dir():
        raise FrameFormatError(f"{path}: not a directory")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise FrameFormatError(f"{path}: no frame files found")
    frames = []
    shape = None
    for f in files:
        img = read_image(f)
        if shape is not None and img.shape[2] != shape[2]:
            raise FrameFormatError(f"{f}: channel count {img.shape[2]} differs from {shape[2]}")
        if shape is not None and img.shape != shape and (
            target is None or f.suffix.lower() == ".fcrw"
        ):
            raise FrameFormatError(f"{f}: dimensions {img.shape} differ from {shape}")
        shape = shape or img.shape
        frame = img.astype(np.float64) / 255.0
        if target is not None:
            frame = resize_bilinear(frame, *target)
        frames.append(frame)
    return FrameSequence(np.stack(frames), source_id=path.name, label=label)


def save_sequence(seq: FrameSequence, path: str | Path) -> None:
    """Write a sequence as numbered FCRW files (the resize cache format)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        write_raw(path / f"{i:05d}.fcrw", to_bytes(frame))


def read_manifest(path: str | Path) -> DatasetManifest:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"source_id", "split"}:
            raise ManifestError(f"{path}: header must be source_id,split,label")
        entries = tuple(
            ManifestEntry(row["source_id"], row["split"], row.get("label") or "")
            for row in reader
        )
    return DatasetManifest(entries)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["source_id", "split", "label"])
        for e in manifest.entries:
            writer.writerow([e.source_id, e.split, e.label])


def split_dataset(
    manifest: DatasetManifest,
    sequences: Iterable[FrameSequence],
    training: bool = False,
) -> tuple[list[FrameSequence], list[FrameSequence], list[FrameSequence]]:
    """Partition `sequences` into (train, validation, test) per the manifest.

    Sequences absent from the manifest are logged and excluded. With
    `training=True` every split must be non-empty.
    """
    by_id = {s.source_id: s for s in sequences}
    missing = [e.source_id for e in manifest.entries if e.source_id not in by_id]
    if missing:
        raise ManifestError(f"manifest source_id(s) with no loaded sequence: {missing}")
    listed = {e.source_id for e in manifest.entries}
    extra = sorted(set(by_id) - listed)
    if extra:
        log.warning("sequences not in manifest, excluded: %s", extra)
    parts = {s: [by_id[i] for i in manifest.ids(s)] for s in SPLITS}
    if training:
        empty = [s for s in SPLITS if not parts[s]]
        if empty:
            raise ManifestError(f"empty split(s) in training mode: {empty}")
    return parts["train"], parts["validation"], parts["test"]


def load_dataset(manifest_path: str | Path, root: str | Path | None = None) -> tuple[DatasetManifest, list[FrameSequence]]:
    """Read a manifest and load `<root>/<source_id>/` for every entry."""
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    root = Path(root) if root is not None else manifest_path.parent / "frames"
    seqs = [load_sequence(root / e.source_id, label=e.label or None) for e in manifest.entries]
    return manifest, seqs


def synth_sequence(
    kind: str,
    n_frames: int,
    dims: tuple[int, int, int],
    seed: int,
) -> FrameSequence:
    """Deterministic synthetic fixtures.

    moving_square: a white square (side min(w, h) // 4) on black, starting at a
    seeded offset and moving +1 pixel in x and y per frame with wraparound. constant: one random frame repeated.
    noise: i.i.d. uniform pixels.
    """
    w, h, c = dims
    if min(w, h, c) <= 0:
        raise ValueError(f"zero dimension in {dims}")
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == "constant":
        frame = rng.random((h, w, c))
        frames = np.repeat(frame[None], n_frames, axis=0)
    elif kind == "noise":
        frames = rng.random((n_frames, h, w, c))
    elif kind == "moving_square":
        side = max(1, min(w, h) // 4)
        x0, y0 = (int(v) for v in rng.integers(0, (w, h)))
        base = np.zeros((h, w, c))
        base[:side, :side] = 1.0
        base = np.roll(base, (y0, x0), axis=(0, 1))
        frames = np.stack([np.roll(base, (i, i), axis=(0, 1)) for i in range(n_frames)])
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    return FrameSequence(frames, source_id=f"{kind}-{seed}", label=kind)


def synth_dataset(
    kind: str,
    counts: Sequence[int],
    n_frames: int,
    dims: tuple[int, int, int],
    seed: int = 0,
) -> tuple[list[FrameSequence], list[FrameSequence], list[FrameSequence]]:
    """(train, validation, test) lists of synthetic sequences with distinct seeds."""
    out = []
    s = seed
    for count in counts:
        part = []
        for _ in range(count):
            part.append(synth_sequence(kind, n_frames, dims, s))
            s += 1
        out.append(part)
    return out[0], out[1], out[2]
