"""Deterministic token-bucket link emulator on an integer-microsecond virtual clock.

Tokens are counted in bit-microseconds (bits * 1e6) so a rate of r bit/s adds
exactly r units per microsecond and every quantity stays an integer. A message
of n bits starts when the link is free; it completes immediately if the bucket
holds n bits of tokens, otherwise as soon as the deficit has accrued (rounded up
to the next microsecond, with the surplus carried forward). It is delivered one
fixed latency after completion. The link is lossless and FIFO.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

US_PER_S = 1_000_000
US_PER_MS = 1_000


@dataclass(frozen=True)
class ChannelConfig:
    rate: float  # bits per second; math.inf for an unshaped link
    burst: int  # bits
    latency_ms: float = 0.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        if self.rate != math.inf and self.rate != int(self.rate):
            raise ValueError("rate must be a whole number of bits per second")
        if self.burst < 0:
            raise ValueError("burst must be non-negative")
        if self.latency_ms < 0:
            raise ValueError("latency must be non-negative")

    @property
    def latency_us(self) -> int:
        return int(round(self.latency_ms * US_PER_MS))

    def serialization_us(self, n_bytes: int) -> int:
        """Time to drain n_bytes from an empty bucket."""
        if self.rate == math.inf:
            return 0
        return -(-8 * n_bytes * US_PER_S // int(self.rate))


PRESETS = {
    "high": ChannelConfig(rate=1_000_000, burst=32_000, latency_ms=400),
    "medium": ChannelConfig(rate=10_000_000, burst=64_000, latency_ms=200),
    "low": ChannelConfig(rate=50_000_000, burst=128_000, latency_ms=50),
}
# best to worst
CONGESTION_ORDER = ("low", "medium", "high")
UNSHAPED = ChannelConfig(rate=math.inf, burst=0, latency_ms=0)


def preset(name: str) -> ChannelConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


class Channel:
    """One direction of a link. Single owner; callers advance time monotonically."""

    def __init__(self, config: ChannelConfig):
        self.config = config
        self._rate = None if config.rate == math.inf else int(config.rate)
        self._cap = config.burst * US_PER_S
        self._tokens = self._cap
        self._updated = 0
        self._busy_until = 0
        self._last_submit = 0
        self._queue: deque[tuple[int, bytes]] = deque()
        self.bits_submitted = 0

    def submit(self, message: bytes, t: int) -> int:
        """Queue `message` at time t (us); returns its transmission completion time."""
        if t < self._last_submit:
            raise ValueError(f"submission at {t} us precedes previous submission at {self._last_submit} us")
        self._last_submit = t
        start = max(t, self._busy_until)
        bits = 8 * len(message)
        if self._rate is None:
            done = start
        else:
            self._tokens = min(self._cap, self._tokens + self._rate * (start - self._updated))
            self._updated = start
            need = bits * US_PER_S
            if self._tokens >= need:
                done = start
                self._tokens -= need
            else:
                wait = -(-(need - self._tokens) // self._rate)
                done = start + wait
                self._tokens += self._rate * wait - need
                self._updated = done
        self._busy_until = done
        self.bits_submitted += bits
        self._queue.append((done + self.config.latency_us, bytes(message)))
        return done

    def next_delivery(self) -> int | None:
        return self._queue[0][0] if self._queue else None

    def poll_delivered(self, t: int) -> list[tuple[bytes, int]]:
        """Pop every message delivered at or before t, in submission order."""
        out = []
        while self._queue and self._queue[0][0] <= t:
            at, msg = self._queue.popleft()
            out.append((msg, at))
        return out

    def drain(self) -> list[tuple[bytes, int]]:
        out = list(self._queue)
        self._queue.clear()
        return [(m, at) for at, m in out]


class Link:
    """A bidirectional link: independent data and reverse (ACK) channels sharing one config."""

    def __init__(self, config: ChannelConfig):
        self.config = config
        self.data = Channel(config)
        self.reverse = Channel(config)


def saturate(config: ChannelConfig, message_bytes: int, duration_us: int) -> tuple[int, int]:
    """Offer back-to-back messages from t=0 and count bits whose transmission completes
    within duration_us, and bits delivered by latency + duration_us."""
    ch = Channel(config)
    t = 0
    completed = 0
    while True:
        done = ch.submit(b"\0" * message_bytes, t)
        if done > duration_us:
            break
        completed += 8 * message_bytes
        t = done
    delivered = sum(8 * len(m) for m, _ in ch.poll_delivered(config.latency_us + duration_us))
    return completed, delivered
