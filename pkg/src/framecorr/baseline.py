"""All-or-nothing monolithic video codec with a quality ladder.

8x8 block DCT intra frames and closed-loop co-located delta frames, scalar
quantization (round half away from zero for I-frames, a 2q/3 dead zone for
P-frames so requantization noise is never re-coded), zig-zag + (zero-run, value)
packing, CRC-32 trailer. The closed-loop reference is kept in float64. The point is
the failure model: any truncation or corruption makes the whole stream
undecodable. Quantizer step q=1 switches to a lossless spatial-residual path.

Bitstream layout (little-endian):

    header   "FCMV" u8 version, u16 width, u16 height, u8 channels,
             u32 frame count, u16 q, u16 gop, u32 total length
    records  per frame: u8 type (b"I" / b"P"), u32 payload length, payload
    trailer  u32 CRC-32 (IEEE) of every preceding byte
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .frame_io import FrameSequence, to_bytes

MAGIC = b"FCMV"
VERSION = 1
HEADER = struct.Struct("<4sBHHBIHHI")
RECORD = struct.Struct("<cI")
BLOCK = 8
END_OF_BLOCK = 0x40

# max column L1 norm of the orthonormal 8-point DCT, squared: worst-case pixel
# error of an 8x8 block per unit of coefficient error
DCT_L1_SQUARED = 6.979350221646017
INTRA_ERROR_PER_STEP = 0.5 * DCT_L1_SQUARED
INTER_ERROR_PER_STEP = 2.0 / 3.0 * DCT_L1_SQUARED
DEAD_ZONE_OFFSET = 1.0 / 3.0


class BitstreamError(ValueError):
    pass


class TruncatedBitstream(BitstreamError):
    pass


class ChecksumMismatch(BitstreamError):
    pass


def _dct_matrix() -> np.ndarray:
    c = np.zeros((BLOCK, BLOCK))
    for u in range(BLOCK):
        a = math.sqrt((1 if u == 0 else 2) / BLOCK)
        for x in range(BLOCK):
            c[u, x] = a * math.cos((2 * x + 1) * u * math.pi / (2 * BLOCK))
    return c


DCT = _dct_matrix()


def _zigzag_order() -> np.ndarray:
    cells = sorted(
        ((u, v) for u in range(BLOCK) for v in range(BLOCK)),
        key=lambda p: (p[0] + p[1], p[0] if (p[0] + p[1]) % 2 else p[1]),
    )
    return np.array([u * BLOCK + v for u, v in cells])


ZIGZAG = _zigzag_order()
UNZIGZAG = np.argsort(ZIGZAG)


def quantization_error_bound(q: int) -> float:
    """Max per-pixel |original - decoded| in [0, 1] units for quantizer step q.

    Coefficient quantization contributes at most q * INTER_ERROR_PER_STEP (the
    dead-zone P path is the looser one) and the input's 8-bit quantization 0.5.
    """
    if q == 1:
        return 0.5 / 255.0
    return (q * INTER_ERROR_PER_STEP + 0.5) / 255.0


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(coefs: np.ndarray, q: int, intra: bool) -> np.ndarray:
    if intra:
        return round_half_away(coefs / q)
    return np.sign(coefs) * np.floor(np.abs(coefs) / q + DEAD_ZONE_OFFSET)


def _blocks(plane: np.ndarray) -> np.ndarray:
    """(H, W) with H, W multiples of 8 -> (nby, nbx, 8, 8)."""
    h, w = plane.shape
    return plane.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).transpose(0, 2, 1, 3)


def _unblocks(blocks: np.ndarray) -> np.ndarray:
    nby, nbx = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(nby * BLOCK, nbx * BLOCK)


def _write_varint(out: bytearray, value: int) -> None:
    v = 2 * value if value >= 0 else -2 * value - 1  # fold sign into the low bit
    while True:
        byte = v & 0x7F
        v >>= 7
        if v:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def _read_varint(data: bytes, pos: int) -> tuple[int, int]:
    shift = v = 0
    while True:
        if pos >= len(data):
            raise BitstreamError("varint runs past end of payload")
        byte = data[pos]
        pos += 1
        v |= (byte & 0x7F) << shift
        shift += 7
        if not byte & 0x80:
            break
    value = (v >> 1) ^ -(v & 1)
    return value, pos


def _pack_blocks(coefs: np.ndarray, out: bytearray) -> None:
    """(n, 64) integer coefficient rows (natural order) -> run/value pairs per block."""
    scanned = coefs[:, ZIGZAG]
    for row in scanned:
        run = 0
        for value in row.tolist():
            if value == 0:
                run += 1
                continue
            out.append(run)
            _write_varint(out, int(value))
            run = 0
        out.append(END_OF_BLOCK)


def _unpack_blocks(data: bytes, pos: int, n: int) -> tuple[np.ndarray, int]:
    out = np.zeros((n, 64), dtype=np.int64)
    for b in range(n):
        k = 0
        while True:
            if pos >= len(data):
                raise BitstreamError("block data runs past end of payload")
            run = data[pos]
            pos += 1
            if run == END_OF_BLOCK:
                break
            k += run
            if run > 63 or k >= 64:
                raise BitstreamError("coefficient index out of range")
            out[b, k], pos = _read_varint(data, pos)
            k += 1
    return out[:, UNZIGZAG], pos


class _Planes:
    """Shared reconstruction path for encoder and decoder."""

    def __init__(self, q: int):
        self.q = q

    def forward(self, residual: np.ndarray, intra: bool) -> np.ndarray:
        """(nby, nbx, 8, 8) residual -> integer levels (n, 64)."""
        if self.q == 1:
            levels = residual
        else:
            levels = quantize(DCT @ residual @ DCT.T, self.q, intra)
        return levels.reshape(-1, 64).astype(np.int64)

    def inverse(self, levels: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
        # contiguous float64 so encoder and decoder hit the same matmul kernel
        blocks = np.ascontiguousarray(levels, dtype=np.float64).reshape(shape[0], shape[1], BLOCK, BLOCK)
        if self.q == 1:
            return blocks
        return DCT.T @ (blocks * self.q) @ DCT


@dataclass(frozen=True)
class MonolithicBitstream:
    data: bytes
    width: int
    height: int
    channels: int
    n_frames: int
    q: int
    gop: int
    frame_types: tuple[str, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.data)

    @property
    def bits(self) -> int:
        return 8 * len(self.data)


def _padded(frame: np.ndarray, ph: int, pw: int) -> np.ndarray:
    h, w = frame.shape[:2]
    return np.pad(frame, ((0, ph - h), (0, pw - w), (0, 0)), mode="edge")


def _output(recon: np.ndarray, h: int, w: int) -> np.ndarray:
    return np.clip(recon[:h, :w], 0.0, 255.0) / 255.0


def _encode(seq: FrameSequence, q: int, gop: int) -> tuple[MonolithicBitstream, np.ndarray]:
    if q < 1 or gop < 1:
        raise ValueError("q and gop must be >= 1")
    if q > 0xFFFF or gop > 0xFFFF:
        raise ValueError("q and gop must fit in 16 bits")
    w, h, c = seq.dims
    ph, pw = -(-h // BLOCK) * BLOCK, -(-w // BLOCK) * BLOCK
    grid = (ph // BLOCK, pw // BLOCK)
    planes = _Planes(q)
    body = bytearray()
    recon_out = np.zeros((len(seq), h, w, c))
    prev = None
    types = []
    for i, frame in enumerate(seq.frames):
        pixels = _padded(to_bytes(frame), ph, pw).astype(np.float64)
        intra = i % gop == 0
        ref = np.full_like(pixels, 128.0) if intra else prev
        payload = bytearray()
        recon = np.empty_like(pixels)
        for ch in range(c):
            residual = _blocks(pixels[:, :, ch] - ref[:, :, ch])
            levels = planes.forward(residual, intra)
            _pack_blocks(levels, payload)
            recon[:, :, ch] = ref[:, :, ch] + _unblocks(planes.inverse(levels, grid))
        prev = recon
        recon_out[i] = _output(recon, h, w)
        ftype = b"I" if intra else b"P"
        types.append(ftype.decode())
        body += RECORD.pack(ftype, len(payload)) + payload
    total = HEADER.size + len(body) + 4
    header = HEADER.pack(MAGIC, VERSION, w, h, c, len(seq), q, gop, total)
    data = header + bytes(body)
    data += struct.pack("<I", zlib.crc32(data) & 0xFFFFFFFF)
    stream = MonolithicBitstream(data, w, h, c, len(seq), q, gop, tuple(types))
    return stream, recon_out


def encode_monolithic(seq: FrameSequence, q: int = 8, gop: int = 12) -> MonolithicBitstream:
    return _encode(seq, q, gop)[0]


def encoder_reconstruction(seq: FrameSequence, q: int = 8, gop: int = 12) -> np.ndarray:
    """The encoder's own reconstructed frames, as the decoder will output them."""
    return _encode(seq, q, gop)[1]


def decode_monolithic(data: bytes) -> FrameSequence:
    """Decode a complete bitstream; any truncation or corruption raises."""
    data = bytes(data)
    if len(data) < HEADER.size:
        raise TruncatedBitstream(f"{len(data)} bytes is shorter than the header")
    magic, version, w, h, c, n_frames, q, gop, total = HEADER.unpack_from(data)
    if len(data) < total:
        raise TruncatedBitstream(f"have {len(data)} of {total} bytes")
    if len(data) > total:
        raise BitstreamError(f"{len(data) - total} trailing bytes after bitstream")
    (crc,) = struct.unpack_from("<I", data, total - 4)
    if zlib.crc32(data[: total - 4]) & 0xFFFFFFFF != crc:
        raise ChecksumMismatch("CRC-32 does not match")
    if magic != MAGIC or version != VERSION:
        raise BitstreamError("not an FCMV v1 bitstream")
    if not (w and h and c in (1, 3) and n_frames and q and gop):
        raise BitstreamError("invalid header fields")
    ph, pw = -(-h // BLOCK) * BLOCK, -(-w // BLOCK) * BLOCK
    grid = (ph // BLOCK, pw // BLOCK)
    n_blocks = grid[0] * grid[1]
    planes = _Planes(q)
    frames = np.zeros((n_frames, h, w, c))
    pos = HEADER.size
    prev = None
    for i in range(n_frames):
        if pos + RECORD.size > total - 4:
            raise BitstreamError("frame record runs into the checksum")
        ftype, length = RECORD.unpack_from(data, pos)
        pos += RECORD.size
        payload = data[pos : pos + length]
        if len(payload) != length or pos + length > total - 4:
            raise BitstreamError("frame payload runs into the checksum")
        pos += length
        if i == 0 and ftype != b"I":
            raise BitstreamError("first frame must be an I-frame")
        if ftype not in (b"I", b"P"):
            raise BitstreamError(f"unknown frame type {ftype!r}")
        ref = np.full((ph, pw, c), 128.0) if ftype == b"I" else prev
        recon = np.empty((ph, pw, c))
        p = 0
        for ch in range(c):
            levels, p = _unpack_blocks(payload, p, n_blocks)
            recon[:, :, ch] = ref[:, :, ch] + _unblocks(planes.inverse(levels, grid))
        if p != len(payload):
            raise BitstreamError("unused bytes in frame payload")
        prev = recon
        frames[i] = _output(recon, h, w)
    if pos != total - 4:
        raise BitstreamError("frame records do not fill the bitstream")
    return FrameSequence(frames)


# --- quality ladder ------------------------------------------------------------


@dataclass(frozen=True)
class QualityLevel:
    level_id: str
    q: int
    bitrate: float  # bits per second


@dataclass(frozen=True)
class QualityLadder:
    """Levels ordered by increasing q (decreasing bitrate).

    `ties` lists adjacent level pairs whose measured bitrates are not strictly
    decreasing; such a ladder is still returned so callers can see why.
    """

    levels: tuple[QualityLevel, ...]
    ties: tuple[tuple[str, str], ...] = ()

    @property
    def strict(self) -> bool:
        return not self.ties

    def level(self, level_id: str) -> QualityLevel:
        for lv in self.levels:
            if lv.level_id == level_id:
                return lv
        raise KeyError(level_id)


DEFAULT_LADDER = {"18": 4, "23": 8, "30": 16}


def build_ladder(
    seq: FrameSequence,
    steps: list[int] | dict[str, int] = DEFAULT_LADDER,
    gop: int = 12,
    fps: float = 30.0,
) -> QualityLadder:
    """Encode at each quantizer step and measure bitrate = bits * fps / frames.

    `steps` is a list of q values (ids become "q<step>") or a {level_id: q} map.
    """
    items = steps.items() if isinstance(steps, dict) else ((f"q{q}", q) for q in steps)
    items = sorted(items, key=lambda kv: kv[1])
    if len(items) < 2:
        raise ValueError("a ladder needs at least two levels")
    if len({q for _, q in items}) != len(items):
        raise ValueError("duplicate quantizer steps")
    levels = tuple(
        QualityLevel(lid, q, encode_monolithic(seq, q, gop).bits * fps / len(seq)) for lid, q in items
    )
    ties = tuple(
        (a.level_id, b.level_id) for a, b in zip(levels, levels[1:]) if not b.bitrate < a.bitrate
    )
    return QualityLadder(levels, ties)


def select_quality(ladder: QualityLadder, throughput: float, safety: float = 0.8) -> str:
    """Highest-bitrate level within safety * throughput, else the lowest-bitrate level."""
    if not 0 < safety <= 1:
        raise ValueError("safety must be in (0, 1]")
    budget = safety * throughput
    fitting = [lv for lv in ladder.levels if lv.bitrate <= budget]
    if fitting:
        return max(fitting, key=lambda lv: lv.bitrate).level_id
    return min(ladder.levels, key=lambda lv: lv.bitrate).level_id
