"""Simulated unlinkable collection channel.

Clients seal sanitized page loads into opaque envelopes, hold them for a
randomized delay, and release them out of order. Stateless proxies see
sender identity and envelope bytes but cannot open envelopes; the
collector opens envelopes but its log cannot even express a sender
identity. Routing partitions the message space across proxies by
envelope hash, so no proxy picks its own view.

The sealing here is a keyed keystream with a nonce: a stand-in with the
right interface shape, not production cryptography. The simulation is a
single-threaded discrete-event loop with seeded randomness: adversary
experiments must be replayable bit for bit.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field

from .sanitize import SanitizedPageLoad

NONCE_BYTES = 16


@dataclass(frozen=True)
class SealedMessage:
    """An opaque envelope queued for transport."""

    envelope: bytes
    send_time: int
    proxy_index: int = -1  # assigned by route()


class Sealer:
    """Client-side sealing: payload -> nonce-randomized envelope.

    Distinct calls produce distinct envelopes even for equal payloads.
    Only a party holding the key (the collector) can open envelopes;
    proxies are never handed one.
    """

    def __init__(self, key: bytes, rng: random.Random):
        self._key = key
        self._rng = rng

    def seal(self, payload: SanitizedPageLoad) -> bytes:
        body = json.dumps(payload.to_dict(), sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
        nonce = self._rng.getrandbits(NONCE_BYTES * 8).to_bytes(NONCE_BYTES, "big")
        return nonce + _keystream_xor(self._key, nonce, body)


class Collector:
    """Terminal endpoint: opens envelopes, logs payloads and nothing else."""

    def __init__(self, key: bytes):
        self._key = key
        self.log: list[CollectorLogEntry] = []

    def unseal(self, envelope: bytes) -> SanitizedPageLoad:
        nonce, body = envelope[:NONCE_BYTES], envelope[NONCE_BYTES:]
        plain = _keystream_xor(self._key, nonce, body)
        return SanitizedPageLoad.from_dict(json.loads(plain.decode("utf-8")))

    def receive(self, envelope: bytes, arrival_time: int) -> None:
        self.log.append(CollectorLogEntry(payload=self.unseal(envelope),
                                          arrival_time=arrival_time))


def _keystream_xor(key: bytes, nonce: bytes, data: bytes) -> bytes:
    out = bytearray()
    counter = 0
    while len(out) < len(data):
        block = hashlib.md5(key + nonce + counter.to_bytes(8, "big")).digest()
        out.extend(block)
        counter += 1
    return bytes(a ^ b for a, b in zip(data, out))


@dataclass(frozen=True)
class ProxyLogEntry:
    """What a proxy can record: who sent how many bytes, and when."""

    source_id: str
    envelope_size: int
    time: int


@dataclass(frozen=True)
class CollectorLogEntry:
    """What the collector can record. There is no sender field to fill."""

    payload: SanitizedPageLoad
    arrival_time: int


class Proxy:
    """Identity-stripping relay. Holds no key; cannot open envelopes."""

    def __init__(self, index: int):
        self.index = index
        self.log: list[ProxyLogEntry] = []

    def relay(self, source_id: str, envelope: bytes, now: int,
              collector: Collector) -> None:
        self.log.append(ProxyLogEntry(source_id=source_id,
                                      envelope_size=len(envelope), time=now))
        collector.receive(envelope, now)


def seal(payload: SanitizedPageLoad, sealer: Sealer,
         send_time: int = 0) -> SealedMessage:
    return SealedMessage(envelope=sealer.seal(payload), send_time=send_time)


def route(msg: SealedMessage, proxy_count: int) -> int:
    """Deterministic uniform proxy assignment from envelope bytes.

    Hashing the envelope (not the payload) means the partition looks
    random to every party, including the proxies themselves.
    """
    if proxy_count < 1:
        raise ValueError("proxy_count must be >= 1")
    digest = hashlib.md5(msg.envelope).digest()
    return int.from_bytes(digest[:8], "big") % proxy_count


class ClientChannel:
    """Per-client delay-and-reorder queue.

    Each enqueued message is held for a delay sampled uniformly from
    [delay_min, delay_max]; release order follows sampled dispatch time,
    not enqueue order, which is what breaks timing correlation.
    """

    def __init__(self, client_id: str, delay_min: int = 0,
                 delay_max: int = 30_000, rng_seed: int = 0):
        if delay_max < delay_min:
            raise ValueError("delay_max must be >= delay_min")
        self.client_id = client_id
        self.delay_min = delay_min
        self.delay_max = delay_max
        self.rng = random.Random(rng_seed)
        self._seq = 0
        self._pending: list[tuple[int, int, SealedMessage]] = []

    def enqueue(self, msg: SealedMessage) -> int:
        """Queue a message; returns its sampled dispatch time."""
        delay = self.rng.uniform(self.delay_min, self.delay_max)
        dispatch_time = msg.send_time + int(delay)
        heapq.heappush(self._pending, (dispatch_time, self._seq, msg))
        self._seq += 1
        return dispatch_time

    def dispatch(self, now: int) -> list[SealedMessage]:
        """Release all messages whose dispatch time has passed."""
        released = []
        while self._pending and self._pending[0][0] <= now:
            released.append(heapq.heappop(self._pending)[2])
        return released

    def pending_count(self) -> int:
        return len(self._pending)

    def next_dispatch_time(self) -> int | None:
        return self._pending[0][0] if self._pending else None


@dataclass
class TransportResult:
    proxy_logs: list[list[ProxyLogEntry]]
    collector_log: list[CollectorLogEntry]
    dispatch_times: dict[str, list[int]] = field(default_factory=dict)


def run_simulation(clients: list[ClientChannel], proxies: int,
                   messages: list[tuple[int, SanitizedPageLoad, int]],
                   key: bytes = b"collector-key",
                   seal_seed: int = 0) -> TransportResult:
    """Drive the full channel: seal, delay, route, relay, collect.

    ``messages`` holds (client_index, payload, send_time_ms) triples.
    Exactly-once per message within a run: every sealed envelope appears
    in exactly one proxy log and contributes exactly one collector entry.
    Identical seeds (channel seeds plus ``seal_seed``) reproduce
    identical logs.
    """
    collector = Collector(key)
    proxy_nodes = [Proxy(i) for i in range(proxies)]
    sealer = Sealer(key, random.Random(seal_seed))

    per_client: dict[str, list[int]] = {c.client_id: [] for c in clients}
    for client_index, payload, send_time in messages:
        channel = clients[client_index]
        msg = seal(payload, sealer, send_time)
        per_client[channel.client_id].append(channel.enqueue(msg))

    # All sends are known up front, so the event loop is a k-way merge
    # of the channels' release schedules, ordered by dispatch time.
    queue: list[tuple[int, str, int, SealedMessage]] = []
    seq = 0
    for channel in clients:
        while (t := channel.next_dispatch_time()) is not None:
            for msg in channel.dispatch(t):
                heapq.heappush(queue, (t, channel.client_id, seq, msg))
                seq += 1
    while queue:
        dispatch_time, client_id, _, msg = heapq.heappop(queue)
        index = route(msg, proxies)
        proxy_nodes[index].relay(client_id, msg.envelope, dispatch_time,
                                 collector)

    return TransportResult(
        proxy_logs=[p.log for p in proxy_nodes],
        collector_log=collector.log,
        dispatch_times=per_client,
    )
