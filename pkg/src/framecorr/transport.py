"""Wire framing, sender/receiver state machines and deadline-driven transmission.

Wire message: b"FCM" | u32 big-endian payload length | u8 kind | payload.
Every payload the transport itself produces ends in a CRC-32 over the kind byte
and the preceding payload bytes ("sealed"), so the receive path can reject damaged messages and
resynchronize on the next delimiter. ACKs on the reverse path are the raw
bytes b"ACK".

In emulated mode one driver interleaves sender and receiver on the virtual
clock of a `Link`. The sender is stop-and-wait: with per-feature ACKs it waits
for each segment's ACK, with per-frame ACKs only for the ACK of the final
segment. Once a frame's deadline passes it abandons the frame's remaining
segments and starts the next frame; a segment already submitted still
completes.
"""

from __future__ import annotations

import logging
import math
import struct
import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .baseline import MonolithicBitstream, QualityLadder, decode_monolithic, select_quality
from .channel import Link, US_PER_MS, US_PER_S
from .frame_io import FrameSequence
from .predictor import PredictorModel, reconstruct_latents
from .progressive import AutoencoderModel, ReceivedPrefix, decode, encode

log = logging.getLogger(__name__)

DELIMITER = b"FCM"
ACK = b"ACK"
HEADER = struct.Struct(">3sIB")
FRAME_HEADER, FEATURE_SEGMENT, VIDEO_BLOB, END_OF_VIDEO = 1, 2, 3, 4
KINDS = {FRAME_HEADER, FEATURE_SEGMENT, VIDEO_BLOB, END_OF_VIDEO}
MAX_PAYLOAD = 1 << 20
BLOB_CHUNK = 1024

STREAM_INFO = struct.Struct("<IHHHHB")  # n_frames, B, S, width, height, channels
SEGMENT_ID = struct.Struct("<IH")  # frame index, segment index
CRC = struct.Struct("<I")


class FramingError(ValueError):
    pass


def frame_message(kind: int, payload: bytes) -> bytes:
    if kind not in KINDS:
        raise FramingError(f"unknown message kind {kind}")
    if len(payload) >= 1 << 32:
        raise FramingError("payload too large for a 32-bit length")
    return HEADER.pack(DELIMITER, len(payload), kind) + bytes(payload)


def _crc(kind: int, body: bytes) -> int:
    # the kind byte is covered too, so a flipped kind cannot pass as another message type
    return zlib.crc32(bytes(body), zlib.crc32(bytes([kind]))) & 0xFFFFFFFF


def seal(kind: int, body: bytes) -> bytes:
    return bytes(body) + CRC.pack(_crc(kind, body))


def unseal(kind: int, payload: bytes) -> bytes | None:
    """Strip and verify the CRC trailer; None if it does not match."""
    if len(payload) < CRC.size:
        return None
    body, (crc,) = payload[: -CRC.size], CRC.unpack(payload[-CRC.size :])
    return body if _crc(kind, body) == crc else None


def sealed_ok(kind: int, payload: bytes) -> bool:
    return unseal(kind, payload) is not None


def sealed_message(kind: int, body: bytes) -> bytes:
    return frame_message(kind, seal(kind, body))


class StreamParser:
    """Incremental message extraction from a byte stream.

    Bytes that do not start a valid header (delimiter, known kind, length within
    `max_payload`) are skipped one at a time until the next delimiter. When a
    `validate(kind, payload)` callback rejects a complete message, only its
    first delimiter byte is skipped, so messages swallowed by a corrupted length
    are still found.
    """

    def __init__(
        self,
        validate: Callable[[int, bytes], bool] | None = None,
        max_payload: int = MAX_PAYLOAD,
    ):
        self.validate = validate
        self.max_payload = max_payload
        self.buffer = bytearray()
        self.skipped_bytes = 0
        self.rejected = 0

    def _skip(self, n: int) -> None:
        del self.buffer[:n]
        self.skipped_bytes += n

    def feed(self, chunk: bytes) -> list[tuple[int, bytes]]:
        self.buffer += chunk
        return self._scan(final=False)

    def finish(self) -> list[tuple[int, bytes]]:
        """End of stream: salvage messages hidden behind a pending, never-completed header."""
        return self._scan(final=True)

    def _scan(self, final: bool) -> list[tuple[int, bytes]]:
        out = []
        buf = self.buffer
        while buf:
            at = buf.find(DELIMITER)
            if at < 0:
                # keep a possible delimiter prefix at the tail
                keep = 0 if final else next(
                    (k for k in (2, 1) if buf[-k:] == DELIMITER[:k]), 0
                )
                self._skip(len(buf) - keep)
                break
            if at:
                self._skip(at)
            if len(buf) < HEADER.size:
                if final:
                    self._skip(len(buf))
                break
            _, length, kind = HEADER.unpack_from(buf)
            if kind not in KINDS or length > self.max_payload:
                self._skip(1)
                continue
            end = HEADER.size + length
            if len(buf) < end:
                if final:
                    self._skip(1)
                    continue
                break
            payload = bytes(buf[HEADER.size : end])
            if self.validate is not None and not self.validate(kind, payload):
                self.rejected += 1
                self._skip(1)
                continue
            del buf[:end]
            out.append((kind, payload))
        return out


def parse_stream(buffer: bytes, validate=None) -> tuple[list[tuple[int, bytes]], bytes]:
    """All complete messages in `buffer` plus the unparsed remainder."""
    parser = StreamParser(validate)
    messages = parser.feed(buffer)
    return messages, bytes(parser.buffer)


# --- payloads ----------------------------------------------------------------


def to_wire(features: np.ndarray) -> np.ndarray:
    """Round latent values through the 32-bit wire representation."""
    return np.asarray(features, dtype="<f4").astype(np.float64)


def segment_message(frame: int, index: int, values: np.ndarray) -> bytes:
    body = SEGMENT_ID.pack(frame, index) + np.asarray(values, dtype="<f4").tobytes()
    return sealed_message(FEATURE_SEGMENT, body)


def segment_message_size(segment_width: int) -> int:
    return HEADER.size + SEGMENT_ID.size + 4 * segment_width + CRC.size


# --- logs ----------------------------------------------------------------------


@dataclass
class FrameLog:
    index: int
    segments_sent: int = 0
    segments_delivered: int = 0
    bytes_sent: int = 0
    bytes_delivered: int = 0
    send_start: int = 0  # us
    send_end: int = 0  # us
    deadline_hit: bool = False


@dataclass
class TransmissionLog:
    frames: list[FrameLog] = field(default_factory=list)
    total_elapsed_us: int = 0
    total_bytes: int = 0
    acks_observed: int = 0
    complete: bool = True  # monolithic: fully delivered within the budget

    @property
    def total_elapsed_s(self) -> float:
        return self.total_elapsed_us / US_PER_S

    def drops_histogram(self, n_segments: int) -> list[int]:
        hist = [0] * (n_segments + 1)
        for f in self.frames:
            hist[n_segments - f.segments_delivered] += 1
        return hist


@dataclass(frozen=True)
class DeadlinePolicy:
    mode: str = "per_frame"  # or "per_video"
    budget_ms: float = math.inf

    def __post_init__(self):
        if self.mode not in ("per_frame", "per_video"):
            raise ValueError(f"unknown deadline mode {self.mode!r}")
        if not self.budget_ms > 0:
            raise ValueError("deadline budget must be positive")

    @property
    def budget_us(self) -> float:
        """Budget on the integer-microsecond clock (floored; sub-microsecond budgets send nothing)."""
        if self.budget_ms == math.inf:
            return math.inf
        return math.floor(self.budget_ms * US_PER_MS + 1e-9)


def estimate_throughput(log: TransmissionLog, window: int = 10) -> float:
    """Delivered bits per second over the last `window` frames."""
    if not log.frames:
        raise ValueError("empty transmission log")
    recent = log.frames[-window:]
    bits = 8 * sum(f.bytes_delivered for f in recent)
    elapsed = recent[-1].send_end - recent[0].send_start
    if bits == 0:
        return 0.0
    if elapsed <= 0:
        return math.inf
    return bits * US_PER_S / elapsed


# --- receiver ------------------------------------------------------------------


class ProgressiveReceiver:
    """Collects segment prefixes per frame, emits ACKs, and reconstructs at the end."""

    def __init__(self, ack_per: str = "feature"):
        if ack_per not in ("feature", "frame"):
            raise ValueError(f"ack_per must be 'feature' or 'frame', got {ack_per!r}")
        self.ack_per = ack_per
        self.parser = StreamParser(sealed_ok)
        self.info: tuple[int, int, int, int, int, int] | None = None
        self.segments: dict[int, list[np.ndarray]] = {}
        self.bytes_received: dict[int, int] = {}
        self.finished = False

    def on_bytes(self, data: bytes) -> bytes:
        """Consume stream bytes; return the ACK bytes to send back."""
        acks = bytearray()
        for kind, payload in self.parser.feed(data):
            body = unseal(kind, payload)
            if kind == FRAME_HEADER:
                self.info = STREAM_INFO.unpack(body)
            elif kind == FEATURE_SEGMENT:
                frame, index = SEGMENT_ID.unpack_from(body)
                values = np.frombuffer(body, "<f4", offset=SEGMENT_ID.size).astype(np.float64)
                got = self.segments.setdefault(frame, [])
                if index != len(got):
                    raise FramingError(f"frame {frame}: segment {index} arrived out of order")
                got.append(values)
                self.bytes_received[frame] = self.bytes_received.get(frame, 0) + HEADER.size + len(payload)
                n_segments = self.info[1]
                if self.ack_per == "feature" or index == n_segments - 1:
                    acks += ACK
            elif kind == END_OF_VIDEO:
                self.finished = True
                acks += ACK
        return bytes(acks)

    def prefixes(self) -> list[ReceivedPrefix]:
        n_frames, _, width = self.info[0], self.info[1], self.info[2]
        out = []
        for i in range(n_frames):
            segs = self.segments.get(i, [])
            out.append(ReceivedPrefix(np.array(segs).reshape(len(segs), width)))
        return out

    def reconstruct(self, model: AutoencoderModel, predictor: PredictorModel | None = None) -> FrameSequence:
        latents = reconstruct_latents(self.prefixes(), model.n_segments, model.segment_width, predictor)
        return FrameSequence(decode(model, latents))


# --- emulated drivers ------------------------------------------------------------


def _deliver(link: Link, receiver: ProgressiveReceiver, until: int) -> int | None:
    """Hand data delivered by `until` to the receiver; returns the arrival time of
    the last ACK this triggered, if any."""
    last_ack = None
    for msg, at in link.data.poll_delivered(until):
        acks = receiver.on_bytes(msg)
        for _ in range(len(acks) // len(ACK)):
            done = link.reverse.submit(ACK, at)
            last_ack = done + link.config.latency_us
    return last_ack


def send_progressive(
    video: FrameSequence,
    model: AutoencoderModel,
    link: Link,
    deadline: DeadlinePolicy = DeadlinePolicy(),
    reconstructor: str = "zero_fill",
    predictor: PredictorModel | None = None,
    ack_per: str = "feature",
) -> tuple[FrameSequence, TransmissionLog]:
    """Stream every frame's segments in importance order under a per-frame deadline."""
    if deadline.mode != "per_frame":
        raise ValueError("progressive transmission uses a per-frame deadline")
    if reconstructor not in ("zero_fill", "framecorr"):
        raise ValueError(f"unknown reconstructor {reconstructor!r}")
    if reconstructor == "framecorr" and predictor is None:
        raise ValueError("framecorr reconstruction needs a predictor")
    n_seg, width = model.n_segments, model.segment_width
    w, h, c = video.dims
    receiver = ProgressiveReceiver(ack_per)
    log_ = TransmissionLog()
    features = encode(model, video.frames)

    t = 0
    header = sealed_message(FRAME_HEADER, STREAM_INFO.pack(len(video), n_seg, width, w, h, c))
    t = link.data.submit(header, t)
    log_.total_bytes += len(header)

    for i, feats in enumerate(features):
        fl = FrameLog(i, send_start=t)
        end = t + deadline.budget_us
        for j in range(n_seg):
            if t >= end:
                break
            msg = segment_message(i, j, feats[j])
            done = link.data.submit(msg, t)
            fl.segments_sent += 1
            fl.bytes_sent += len(msg)
            ack_at = _deliver(link, receiver, done + link.config.latency_us)
            waits = ack_per == "feature" or j == n_seg - 1
            if not waits:
                t = done
            elif ack_at is not None and ack_at <= end:
                t = ack_at
            else:
                # deadline expires before the ACK returns: move on
                t = max(end, done)
                break
        fl.send_end = int(t)
        fl.deadline_hit = fl.segments_sent < n_seg
        fl.segments_delivered = len(receiver.segments.get(i, []))
        fl.bytes_delivered = receiver.bytes_received.get(i, 0)
        log_.total_bytes += fl.bytes_sent
        log_.frames.append(fl)
        t = int(t)

    eov = sealed_message(END_OF_VIDEO, struct.pack("<I", len(video)))
    done = link.data.submit(eov, t)
    log_.total_bytes += len(eov)
    ack_at = _deliver(link, receiver, done + link.config.latency_us)
    log_.total_elapsed_us = ack_at
    # the last reverse message is the end-of-video ACK
    log_.acks_observed = len(link.reverse.poll_delivered(ack_at)) - 1
    if not receiver.finished:
        raise AssertionError("receiver never saw end-of-video")
    recon = receiver.reconstruct(model, predictor if reconstructor == "framecorr" else None)
    return recon, log_


class BlobReceiver:
    def __init__(self):
        self.parser = StreamParser(sealed_ok)
        self.chunks: list[bytes] = []
        self.finished = False

    def on_bytes(self, data: bytes) -> bytes:
        acks = bytearray()
        for kind, payload in self.parser.feed(data):
            body = unseal(kind, payload)
            if kind == VIDEO_BLOB:
                self.chunks.append(body)
            elif kind == END_OF_VIDEO:
                self.finished = True
                acks += ACK
        return bytes(acks)


def send_monolithic(
    bitstream: MonolithicBitstream,
    link: Link,
    deadline: DeadlinePolicy = DeadlinePolicy("per_video"),
    chunk_size: int = BLOB_CHUNK,
) -> tuple[FrameSequence | None, TransmissionLog]:
    """Stream a whole bitstream; it counts only if every chunk arrives within the budget.

    Past the deadline the sender aborts, and the partial blob is useless to the
    decoder, so the result is all (decoded frames) or nothing (None).
    """
    if deadline.mode != "per_video":
        raise ValueError("monolithic transmission uses a whole-video deadline")
    data = bitstream.data
    receiver = BlobReceiver()
    log_ = TransmissionLog(complete=False)
    end = deadline.budget_us
    t = 0
    last_arrival = 0
    sent = 0
    for pos in range(0, len(data), chunk_size):
        if t >= end:
            break
        msg = sealed_message(VIDEO_BLOB, data[pos : pos + chunk_size])
        t = link.data.submit(msg, t)
        last_arrival = t + link.config.latency_us
        log_.total_bytes += len(msg)
        sent = pos + chunk_size
    fl = FrameLog(0, send_start=0)
    if sent >= len(data) and last_arrival <= end:
        eov = sealed_message(END_OF_VIDEO, struct.pack("<I", bitstream.n_frames))
        done = link.data.submit(eov, t)
        log_.total_bytes += len(eov)
        for msg, at in link.data.poll_delivered(done + link.config.latency_us):
            for _ in range(len(receiver.on_bytes(msg)) // len(ACK)):
                ack_at = link.reverse.submit(ACK, at) + link.config.latency_us
        log_.acks_observed = len(link.reverse.poll_delivered(ack_at))
        # the video is usable once its last chunk has arrived
        log_.total_elapsed_us = last_arrival
        log_.complete = True
        blob = b"".join(receiver.chunks)
        frames = decode_monolithic(blob)
        fl.bytes_delivered = len(blob)
    else:
        # aborted at the deadline; whatever arrived cannot be decoded
        log_.total_elapsed_us = int(end) if end != math.inf else last_arrival
        frames = None
    fl.send_end = log_.total_elapsed_us
    fl.bytes_sent = log_.total_bytes
    fl.segments_sent = fl.segments_delivered = int(log_.complete)
    log_.frames.append(fl)
    return frames, log_


def send_abr(
    streams: dict[str, MonolithicBitstream],
    ladder: QualityLadder,
    link: Link,
    throughput: float,
    deadline: DeadlinePolicy = DeadlinePolicy("per_video"),
    safety: float = 0.8,
) -> tuple[str, FrameSequence | None, TransmissionLog]:
    """Pick a ladder level for the estimated throughput and send that encoding."""
    level = select_quality(ladder, throughput, safety)
    frames, log_ = send_monolithic(streams[level], link, deadline)
    return level, frames, log_


def stream_header_size() -> int:
    return HEADER.size + STREAM_INFO.size + CRC.size


def progressive_capacity(
    config, budget_us: int, message_bytes: int, n_segments: int, ack_per: str, lead_bytes: int = 0
) -> int:
    """Closed-form segment count for the first frame on a fresh link (full buckets).

    `lead_bytes` were sent back-to-back from t=0 just before the frame (the
    stream header), so the frame starts at t0 = completion of those bytes.

    Per-frame ACKs: the sender stays backlogged, so segment j (1-based) starts
    when the cumulative L + (j-1)*n bits have cleared the bucket,
    max(0, ceil((L + (j-1)*n - burst) * 1e6 / rate)), and counts if that start
    precedes t0 + budget. Per-feature ACKs with everything fitting in the burst:
    each round trip costs exactly 2 * latency, so ceil(budget / RTT) segments
    start in time.
    """
    n, lead = 8 * message_bytes, 8 * lead_bytes
    if config.rate == math.inf:
        clear = lambda bits: 0
    else:
        rate = int(config.rate)
        clear = lambda bits: max(0, -(-(bits - config.burst) * US_PER_S // rate))
    t0 = clear(lead)
    if ack_per == "frame":
        count = 0
        for j in range(1, n_segments + 1):
            if clear(lead + (j - 1) * n) >= t0 + budget_us:
                break
            count += 1
        return count
    if lead + n * n_segments > config.burst and config.rate != math.inf:
        raise ValueError("per-feature closed form assumes the whole frame fits in the burst")
    if budget_us <= 0:
        return 0
    rtt = 2 * config.latency_us
    if rtt == 0:
        return n_segments
    return min(n_segments, math.ceil(budget_us / rtt))
