"""Real-socket mode: the same wire bytes over a TCP stream, with wall-clock deadlines.

The receiver runs in a background thread on a listening socket; the sender
connects, streams segment messages and blocks on ACKs just like the emulated
driver. Only the ordering guarantees of a reliable byte stream are assumed, so
the receiver feeds whatever chunks `recv` returns straight into its parser.
"""

from __future__ import annotations

import socket
import struct
import threading
import time

from .frame_io import FrameSequence
from .predictor import PredictorModel
from .progressive import AutoencoderModel, encode
from .transport import (
    ACK,
    END_OF_VIDEO,
    FRAME_HEADER,
    STREAM_INFO,
    DeadlinePolicy,
    FrameLog,
    ProgressiveReceiver,
    TransmissionLog,
    segment_message,
    sealed_message,
)

RECV_SIZE = 4096


class _ReceiverThread(threading.Thread):
    def __init__(self, server: socket.socket, ack_per: str):
        super().__init__(daemon=True)
        self.server = server
        self.receiver = ProgressiveReceiver(ack_per)
        self.error: BaseException | None = None

    def run(self):
        try:
            conn, _ = self.server.accept()
            with conn:
                while not self.receiver.finished:
                    chunk = conn.recv(RECV_SIZE)
                    if not chunk:
                        break
                    acks = self.receiver.on_bytes(chunk)
                    if acks:
                        conn.sendall(acks)
        except BaseException as exc:  # surfaced to the caller after join
            self.error = exc


def _await_ack(sock: socket.socket, pending: bytearray, timeout_s: float | None) -> bool:
    """Block until one ACK is buffered or the timeout passes."""
    sock.settimeout(timeout_s)
    try:
        while len(pending) < len(ACK):
            chunk = sock.recv(RECV_SIZE)
            if not chunk:
                return False
            pending += chunk
    except socket.timeout:
        return False
    if pending[: len(ACK)] != ACK:
        raise ConnectionError(f"unexpected reverse-path bytes {bytes(pending[:3])!r}")
    del pending[: len(ACK)]
    return True


def send_progressive_socket(
    video: FrameSequence,
    model: AutoencoderModel,
    deadline: DeadlinePolicy = DeadlinePolicy(),
    reconstructor: str = "zero_fill",
    predictor: PredictorModel | None = None,
    ack_per: str = "feature",
    host: str = "127.0.0.1",
    port: int = 0,
) -> tuple[FrameSequence, TransmissionLog]:
    """Loopback counterpart of `transport.send_progressive`; timestamps are wall-clock us."""
    if reconstructor == "framecorr" and predictor is None:
        raise ValueError("framecorr reconstruction needs a predictor")
    n_seg, width = model.n_segments, model.segment_width
    w, h, c = video.dims
    budget_s = deadline.budget_us / 1e6
    server = socket.create_server((host, port))
    rx = _ReceiverThread(server, ack_per)
    rx.start()
    log = TransmissionLog()
    t_zero = time.monotonic()
    now_us = lambda: int((time.monotonic() - t_zero) * 1e6)
    pending = bytearray()
    try:
        with socket.create_connection(server.getsockname()[:2]) as sock:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            header = sealed_message(FRAME_HEADER, STREAM_INFO.pack(len(video), n_seg, width, w, h, c))
            sock.sendall(header)
            log.total_bytes += len(header)
            for i, feats in enumerate(encode(model, video.frames)):
                fl = FrameLog(i, send_start=now_us())
                end = time.monotonic() + budget_s
                for j in range(n_seg):
                    if time.monotonic() >= end:
                        break
                    msg = segment_message(i, j, feats[j])
                    sock.sendall(msg)
                    fl.segments_sent += 1
                    fl.bytes_sent += len(msg)
                    if ack_per == "feature" or j == n_seg - 1:
                        left = None if budget_s == float("inf") else max(0.0, end - time.monotonic())
                        if not _await_ack(sock, pending, left):
                            break
                        log.acks_observed += 1
                fl.send_end = now_us()
                fl.deadline_hit = fl.segments_sent < n_seg
                log.total_bytes += fl.bytes_sent
                log.frames.append(fl)
            eov = sealed_message(END_OF_VIDEO, struct.pack("<I", len(video)))
            sock.sendall(eov)
            log.total_bytes += len(eov)
            rx.join(timeout=30.0)
            log.total_elapsed_us = now_us()
    finally:
        rx.join(timeout=10.0)
        server.close()
    if rx.error is not None:
        raise rx.error
    receiver = rx.receiver
    for fl in log.frames:
        fl.segments_delivered = len(receiver.segments.get(fl.index, []))
        fl.bytes_delivered = receiver.bytes_received.get(fl.index, 0)
    recon = receiver.reconstruct(model, predictor if reconstructor == "framecorr" else None)
    return recon, log
