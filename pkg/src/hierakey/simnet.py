"""Deterministic discrete-event simulator for the overlay and communication
planes.

Links are reliable and in-order (per-link FIFO); the only losses are
adversarial. The simulator treats frames as opaque bytes except for the
cleartext message-type octet that adversary match rules may key on -- it
never opens a ciphertext, which is what keeps eavesdropping honest.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace

from .crypto import DeterministicRng
from .errors import BadScript, QueueEmpty

DELIVERED = "Delivered"
DROPPED = "Dropped"
TAMPERED = "Tampered"
INJECTED = "Injected"

_MSG_TYPE_OFFSET = 5  # magic(4) + version(1)


@dataclass
class Counters:
    """Per-entity work metrics. Counters only increase."""

    aead_seal_count: int = 0
    aead_open_count: int = 0
    aead_open_fail_count: int = 0
    kdf_count: int = 0
    msgs_sent: int = 0
    msgs_received: int = 0
    bytes_sent: int = 0

    @property
    def aead_total(self) -> int:
        return self.aead_seal_count + self.aead_open_count + self.aead_open_fail_count


@dataclass(frozen=True)
class TranscriptRecord:
    time: int
    disposition: str
    frm: str
    to: str
    data: bytes


@dataclass
class Match:
    """Predicate over deliveries. `nth` selects the nth future match (1-based)
    for one-shot rules; counting is per rule."""

    frm: str | None = None
    to: str | None = None
    msg_type: int | None = None
    nth: int = 1
    _seen: int = 0

    def matches(self, frm: str, to: str, data: bytes) -> bool:
        if self.frm is not None and frm != self.frm:
            return False
        if self.to is not None and to != self.to:
            return False
        if self.msg_type is not None:
            if len(data) <= _MSG_TYPE_OFFSET or data[_MSG_TYPE_OFFSET] != self.msg_type:
                return False
        return True

    def hits(self, frm: str, to: str, data: bytes) -> bool:
        if not self.matches(frm, to, data):
            return False
        self._seen += 1
        return self._seen == self.nth


@dataclass
class Drop:
    match: Match


@dataclass
class Tamper:
    match: Match
    bit: int | None = None  # frame bit position, MSB-first; None = last bit


@dataclass
class Eavesdrop:
    """Persistent capture rule: records every matching frame as carried."""

    match: Match


@dataclass
class Inject:
    from_claim: str
    to: str
    data: bytes
    at: int


@dataclass
class Replay:
    """Re-deliver a previously transcribed frame at a new time."""

    index: int
    at: int


class Simulator:
    def __init__(self, rng_seed: int = 0, latency_per_link: int = 1):
        self.rng = DeterministicRng(rng_seed.to_bytes(8, "big"))
        self.latency = latency_per_link
        self.now = 0
        self._queue: list = []
        self._seqno = 0
        self.entities: dict[str, object] = {}
        self.counters: dict[str, Counters] = {}
        self.transcript: list[TranscriptRecord] = []
        self._oneshot_rules: list = []
        self._eavesdrops: list[Eavesdrop] = []
        self.captured: list[TranscriptRecord] = []

    # --- wiring ------------------------------------------------------------

    def register(self, runtime) -> None:
        self.entities[runtime.id] = runtime
        self.counters[runtime.id] = runtime.counters

    def _push(self, at: int, kind: str, payload: tuple) -> None:
        heapq.heappush(self._queue, (at, self._seqno, kind, payload))
        self._seqno += 1

    def send(self, frm: str, to: str, data: bytes) -> None:
        c = self.counters.setdefault(frm, Counters())
        c.msgs_sent += 1
        c.bytes_sent += len(data)
        self._push(self.now + self.latency, "deliver", (frm, to, data, DELIVERED))

    def send_all(self, frm: str, outs) -> None:
        for to, data in outs:
            self.send(frm, to, data)

    def schedule_timer(self, entity: str, token: str, at: int) -> None:
        self._push(at, "timer", (entity, token))

    def attach_adversary(self, actions) -> None:
        for action in actions:
            if isinstance(action, (Drop, Tamper)):
                self._oneshot_rules.append(action)
            elif isinstance(action, Eavesdrop):
                self._eavesdrops.append(action)
            elif isinstance(action, Inject):
                self._push(action.at, "inject", (action.from_claim, action.to, action.data))
            elif isinstance(action, Replay):
                self._push(action.at, "replay", (action.index,))
            else:
                raise BadScript(f"unknown adversary action {action!r}")

    # --- event loop ----------------------------------------------------------

    def step(self) -> None:
        if not self._queue:
            raise QueueEmpty("no pending events")
        at, _, kind, payload = heapq.heappop(self._queue)
        self.now = max(self.now, at)
        if kind == "deliver":
            self._process_delivery(*payload)
        elif kind == "inject":
            frm, to, data = payload
            self._process_delivery(frm, to, data, INJECTED)
        elif kind == "replay":
            (index,) = payload
            if not 0 <= index < len(self.transcript):
                raise BadScript(f"replay references transcript entry {index}")
            rec = self.transcript[index]
            self._process_delivery(rec.frm, rec.to, rec.data, INJECTED)
        elif kind == "timer":
            entity, token = payload
            runtime = self.entities.get(entity)
            if runtime is not None:
                runtime.now = self.now
                self.send_all(entity, runtime.on_timer(token))

    def _process_delivery(self, frm: str, to: str, data: bytes, disposition: str) -> None:
        if disposition == DELIVERED:  # adversary acts on honest frames only
            for rule in self._oneshot_rules:
                if isinstance(rule, Drop) and rule.match.hits(frm, to, data):
                    self._oneshot_rules.remove(rule)
                    self.transcript.append(TranscriptRecord(self.now, DROPPED, frm, to, data))
                    return
                if isinstance(rule, Tamper) and rule.match.hits(frm, to, data):
                    self._oneshot_rules.remove(rule)
                    data = _flip_bit(data, rule.bit)
                    disposition = TAMPERED
                    break
        record = TranscriptRecord(self.now, disposition, frm, to, data)
        self.transcript.append(record)
        for rule in self._eavesdrops:
            if rule.match.matches(frm, to, data):
                self.captured.append(record)
        runtime = self.entities.get(to)
        if runtime is None:
            return
        self.counters[to].msgs_received += 1
        runtime.now = self.now
        self.send_all(to, runtime.on_message(frm, data))

    def run_until_idle(self) -> int:
        while self._queue:
            self.step()
        return self.now

    # --- views ---------------------------------------------------------------

    def snapshot_metrics(self) -> dict[str, Counters]:
        return {name: replace(c) for name, c in self.counters.items()}

    def export_transcript(self) -> str:
        lines = [
            f"{r.time}\t{r.disposition}\t{r.frm}\t{r.to}\t{r.data.hex()}"
            for r in self.transcript
        ]
        return "\n".join(lines) + ("\n" if lines else "")


def _flip_bit(data: bytes, bit: int | None) -> bytes:
    if not data:
        return data
    if bit is None:
        bit = len(data) * 8 - 1
    if not 0 <= bit < len(data) * 8:
        raise BadScript(f"tamper bit {bit} out of range")
    buf = bytearray(data)
    buf[bit // 8] ^= 1 << (7 - bit % 8)
    return bytes(buf)
