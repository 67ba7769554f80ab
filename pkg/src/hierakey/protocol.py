"""Role state machines: link-key agreement, mediated end-to-end key
establishment, direct confirmation, replay defense, and session channels.

Every entity is an EntityRuntime processing one incoming frame at a time.
Link keys between adjacent overlay entities come from a 3-message
challenge-response handshake over the shared registration (or binding)
secret. End-to-end keys are negotiated through the mediation path: each
mediator opens the relayed payload on the inbound hop key and re-seals the
identical bytes on the outbound hop key, so every hop is mutually
authenticated while the endpoints stay cheap: a completed exchange costs an
endpoint exactly three AEAD operations and one key derivation no matter how
long the path is.

Mediators necessarily see the exchanged seeds; that is inherent to mediated
symmetric schemes and is the stated trust assumption, with freshness (not
mediator-proof secrecy) provided by per-exchange seeds.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

from . import hierarchy, wire
from .errors import (
    ERR_AUTH_FAILURE,
    ERR_PATH_VIOLATION,
    ERR_REPLAY_DETECTED,
    ERR_REVOKED_ENTITY,
    ERR_UNKNOWN_ENTITY,
    AuthError,
    HierakeyError,
    LinkUnavailable,
    NoCommonMediator,
    NoSession,
    ParseError,
    PathViolation,
    RevokedEntity,
    SelfPath,
    StaleSequence,
    UnknownEntity,
)
from .hierarchy import Role, TrustPath
from .simnet import Counters

# Nonce schedule directions. The handshake initiator (child side) and the
# exchange initiator both send under direction 0.
DIR_INITIATOR = 0
DIR_RESPONDER = 1

AWAITING_RESPONSE = "awaiting_response"
AWAITING_CONFIRM = "awaiting_confirm"
MEDIATING = "mediating"
COMPLETE = "complete"
FAILED = "failed"

REPLAY_CACHE_CAPACITY = 4096

Outs = list  # list[tuple[str, bytes]]


def link_nonce(direction: int, seq: int) -> bytes:
    """12-byte deterministic AEAD nonce: direction u32 | seq u64, both
    big-endian. Unique per (key, direction, seq); handshakes use seq 0,
    established channels count from 1."""
    return direction.to_bytes(4, "big") + seq.to_bytes(8, "big")


@dataclass
class LinkSession:
    """Live pairwise channel with an adjacent overlay entity."""

    peer: str
    key: bytes
    send_dir: int
    send_seq: int = 1
    recv_seq: int = 0  # high-water mark of accepted incoming seq
    established_at: int = 0


@dataclass
class PeerSession:
    """End-to-end channel; usable once the key confirmation verified."""

    peer: str
    key: bytes
    send_dir: int
    send_seq: int = 1
    recv_seq: int = 0
    established_at: int = 0
    confirmed: bool = False


@dataclass
class ExchangeState:
    exchange_id: bytes
    role: str  # "initiator" | "responder" | "mediator"
    initiator: str
    responder: str
    status: str
    path: TrustPath | None = None
    nonce_i: bytes | None = None
    nonce_r: bytes | None = None
    seed_i: bytes | None = None
    seed_r: bytes | None = None
    fail_code: int | None = None
    fail_reason: str | None = None


class ReplayCache:
    """Capacity-bounded FIFO of (peer, exchange_id) pairs already answered."""

    def __init__(self, capacity: int = REPLAY_CACHE_CAPACITY):
        self.capacity = capacity
        self._seen: OrderedDict = OrderedDict()

    def __contains__(self, key) -> bool:
        return key in self._seen

    def add(self, key) -> None:
        self._seen[key] = None
        while len(self._seen) > self.capacity:
            self._seen.popitem(last=False)


@dataclass
class _Handshake:
    peer: str
    secret: bytes
    initiator_side: bool
    nonce_c: bytes
    nonce_p: bytes | None = None
    seed_p: bytes | None = None


class EntityRuntime:
    """Single-owner protocol actor for one overlay entity.

    Methods never perform I/O; they return a list of (recipient, frame)
    pairs for the caller (normally the simulator) to deliver.
    """

    def __init__(self, entity_id: str, role: Role, topo: hierarchy.Topology, rng):
        self.id = entity_id
        self.role = role
        self.topo = topo
        self.rng = rng
        self.provider = topo.provider
        self.label = topo.params.deployment_label
        self.counters = Counters()
        self.now = 0
        self.own_master_key: bytes | None = None
        self.child_keys: dict[str, bytes] = {}
        self.binding_keys: dict[str, bytes] = {}
        self.links: dict[str, LinkSession] = {}
        self.sessions: dict[str, PeerSession] = {}
        self.exchanges: dict[bytes, ExchangeState] = {}
        self.replay = ReplayCache()
        self.inbox: list[tuple[str, bytes]] = []
        self._pending_hs: dict[str, _Handshake] = {}
        self._pending_frames: dict[str, list[tuple[int, bytes]]] = {}

    # --- key plumbing -------------------------------------------------------

    def install_master_key(self, key: bytes) -> None:
        self.own_master_key = key

    def install_child_key(self, child: str, key: bytes) -> None:
        self.child_keys[child] = key

    def install_binding_key(self, node: str, key: bytes) -> None:
        self.binding_keys[node] = key

    def _kdf(self, ikm: bytes, label: str, context) -> bytes:
        self.counters.kdf_count += 1
        return self.provider.kdf(ikm, label, context)

    def _seal(self, key: bytes, nonce: bytes, aad: bytes, pt: bytes) -> bytes:
        self.counters.aead_seal_count += 1
        return self.provider.aead_seal(key, nonce, aad, pt)

    def _open(self, key: bytes, nonce: bytes, aad: bytes, ct: bytes) -> bytes:
        try:
            pt = self.provider.aead_open(key, nonce, aad, ct)
        except AuthError:
            self.counters.aead_open_fail_count += 1
            raise
        self.counters.aead_open_count += 1
        return pt

    def pair_secret(self, peer: str) -> bytes:
        """Long-term secret shared with an adjacent overlay entity: the
        registration master key for parent/child pairs, the binding key for
        node/cluster-head pairs (derived locally on the node side)."""
        entry = self.topo.entries.get(self.id)
        peer_entry = self.topo.entries.get(peer)
        if entry is None or peer_entry is None:
            raise LinkUnavailable(f"{self.id}<->{peer}: unknown entity")
        if peer_entry.status is hierarchy.Status.REVOKED:
            raise LinkUnavailable(f"{peer} is revoked")
        if peer == entry.registrar and self.own_master_key is not None:
            return self.own_master_key
        if peer in self.child_keys:
            return self.child_keys[peer]
        if peer in self.binding_keys:
            return self.binding_keys[peer]
        if (
            self.role is Role.NODE
            and peer in entry.associated_chs
            and self.own_master_key is not None
        ):
            key = self._kdf(
                self.own_master_key,
                "bind-v1",
                [self.id.encode(), peer.encode(), self.label],
            )
            self.binding_keys[peer] = key
            return key
        raise LinkUnavailable(f"no shared secret between {self.id} and {peer}")

    # --- channels -------------------------------------------------------------

    def channel_for(self, peer: str):
        link = self.links.get(peer)
        if link is not None:
            return link
        session = self.sessions.get(peer)
        if session is not None and session.confirmed:
            return session
        return None

    def _seal_frame(self, channel, msg_type: int, plaintext: bytes) -> tuple[str, bytes]:
        header = wire.WireHeader(msg_type, self.id, channel.peer, channel.send_seq)
        nonce = link_nonce(channel.send_dir, channel.send_seq)
        ct = self._seal(channel.key, nonce, wire.aad_of(header), plaintext)
        channel.send_seq += 1
        return channel.peer, wire.encode(wire.WireMessage(header, ct))

    def _open_frame(self, channel, header: wire.WireHeader, ct: bytes) -> bytes:
        if header.seq <= channel.recv_seq:
            raise StaleSequence(f"seq {header.seq} <= {channel.recv_seq}")
        nonce = link_nonce(1 - channel.send_dir, header.seq)
        pt = self._open(channel.key, nonce, wire.aad_of(header), ct)
        channel.recv_seq = header.seq
        return pt

    def send_secure(self, peer: str, msg_type: int, plaintext: bytes) -> Outs:
        """Seal over the channel to `peer`, or queue the frame and open a
        link handshake on demand when no channel exists yet."""
        channel = self.channel_for(peer)
        if channel is not None:
            return [self._seal_frame(channel, msg_type, plaintext)]
        self._pending_frames.setdefault(peer, []).append((msg_type, plaintext))
        return self.start_link(peer)

    def _flush_pending(self, peer: str) -> Outs:
        outs: Outs = []
        channel = self.channel_for(peer)
        for msg_type, plaintext in self._pending_frames.pop(peer, []):
            outs.append(self._seal_frame(channel, msg_type, plaintext))
        return outs

    def _error_out(self, to: str, code: int, exchange_id: bytes | None = None,
                   entity: str | None = None) -> tuple[str, bytes]:
        # Failure signalling must work before any key exists, so ERROR
        # frames are plaintext; they carry no secrets.
        detail = exchange_id.hex() if exchange_id else ""
        if entity:
            detail += "," + entity
        header = wire.WireHeader(wire.ERROR, self.id, to, 0)
        return to, wire.encode(wire.WireMessage(header, (code, detail)))

    # --- link handshake --------------------------------------------------------

    def start_link(self, peer: str) -> Outs:
        """Open the 3-message challenge-response handshake toward `peer`.
        No-op when a handshake is already in flight."""
        if peer in self._pending_hs:
            return []
        secret = self.pair_secret(peer)
        nonce_c = self.rng.nonce()
        self._pending_hs[peer] = _Handshake(peer, secret, True, nonce_c)
        header = wire.WireHeader(wire.HELLO, self.id, peer, 0)
        return [(peer, wire.encode(wire.WireMessage(header, nonce_c)))]

    def _on_hello(self, header: wire.WireHeader, nonce_c: bytes) -> Outs:
        peer = header.sender
        try:
            secret = self.pair_secret(peer)
        except LinkUnavailable:
            return [self._error_out(peer, ERR_AUTH_FAILURE)]
        nonce_p = self.rng.nonce()
        seed_p = self.rng.seed16()
        self._pending_hs[peer] = _Handshake(peer, secret, False, nonce_c, nonce_p, seed_p)
        reply = wire.WireHeader(wire.LINK_CHALLENGE, self.id, peer, 0)
        ct = self._seal(secret, link_nonce(DIR_RESPONDER, 0), wire.aad_of(reply),
                        nonce_c + nonce_p + seed_p)
        return [(peer, wire.encode(wire.WireMessage(reply, ct)))]

    def _on_challenge(self, header: wire.WireHeader, ct: bytes) -> Outs:
        peer = header.sender
        hs = self._pending_hs.get(peer)
        if hs is None or not hs.initiator_side:
            return []
        try:
            pt = self._open(hs.secret, link_nonce(DIR_RESPONDER, 0), wire.aad_of(header), ct)
        except AuthError:
            del self._pending_hs[peer]
            return [self._error_out(peer, ERR_AUTH_FAILURE)]
        if len(pt) != 40 or pt[:12] != hs.nonce_c:
            # Peer proved key knowledge but echoed a stale challenge: replay.
            del self._pending_hs[peer]
            return [self._error_out(peer, ERR_AUTH_FAILURE)]
        nonce_p, seed_p = pt[12:24], pt[24:40]
        seed_c = self.rng.seed16()
        key = self._kdf(hs.secret, "link-v1",
                        [self.id.encode(), peer.encode(),
                         hs.nonce_c, nonce_p, seed_c, seed_p, self.label])
        self.links[peer] = LinkSession(peer, key, DIR_INITIATOR, established_at=self.now)
        del self._pending_hs[peer]
        reply = wire.WireHeader(wire.LINK_FINISH, self.id, peer, 0)
        fin = self._seal(hs.secret, link_nonce(DIR_INITIATOR, 0), wire.aad_of(reply),
                         nonce_p + seed_c)
        outs = [(peer, wire.encode(wire.WireMessage(reply, fin)))]
        outs += self._flush_pending(peer)
        return outs

    def _on_finish(self, header: wire.WireHeader, ct: bytes) -> Outs:
        peer = header.sender
        hs = self._pending_hs.get(peer)
        if hs is None or hs.initiator_side:
            return []
        try:
            pt = self._open(hs.secret, link_nonce(DIR_INITIATOR, 0), wire.aad_of(header), ct)
        except AuthError:
            del self._pending_hs[peer]
            return [self._error_out(peer, ERR_AUTH_FAILURE)]
        if len(pt) != 28 or pt[:12] != hs.nonce_p:
            del self._pending_hs[peer]
            return [self._error_out(peer, ERR_AUTH_FAILURE)]
        seed_c = pt[12:28]
        key = self._kdf(hs.secret, "link-v1",
                        [peer.encode(), self.id.encode(),
                         hs.nonce_c, hs.nonce_p, seed_c, hs.seed_p, self.label])
        self.links[peer] = LinkSession(peer, key, DIR_RESPONDER, established_at=self.now)
        del self._pending_hs[peer]
        return self._flush_pending(peer)

    # --- end-to-end establishment ----------------------------------------------

    def e2e_initiate(self, responder: str) -> tuple[bytes, Outs]:
        """Begin key establishment toward `responder`. Returns the fresh
        exchange id and the first outbound frame(s). The head-to-head
        channel, when required, must exist before initiating."""
        path = hierarchy.resolve_path(self.topo, self.id, responder)
        if path.requires_head_link:
            raise LinkUnavailable("head-to-head channel not established yet")
        exchange_id = self.rng.draw(16)
        nonce_i = self.rng.nonce()
        seed_i = self.rng.seed16()
        self.exchanges[exchange_id] = ExchangeState(
            exchange_id, "initiator", self.id, responder, AWAITING_RESPONSE,
            path=path, nonce_i=nonce_i, seed_i=seed_i)
        payload = wire.encode_e2e_payload(wire.E2ePayload(
            wire.REQUEST, exchange_id, self.id, responder, nonce_i, None, seed_i))
        return exchange_id, self.send_secure(path.hops[1], wire.RELAY, payload)

    def _session_key(self, seed_i: bytes, seed_r: bytes, initiator: str, responder: str,
                     exchange_id: bytes, nonce_i: bytes, nonce_r: bytes) -> bytes:
        return self._kdf(
            seed_i + seed_r, "e2e-v1",
            [initiator.encode(), responder.encode(), exchange_id,
             nonce_i, nonce_r, self.label])

    def _on_relay(self, header: wire.WireHeader, ct: bytes) -> Outs:
        via = header.sender
        channel = self.channel_for(via)
        if channel is None:
            return [self._error_out(via, ERR_AUTH_FAILURE)]
        try:
            pt = self._open_frame(channel, header, ct)
        except StaleSequence:
            return [self._error_out(via, ERR_REPLAY_DETECTED)]
        except AuthError:
            return [self._error_out(via, ERR_AUTH_FAILURE)]
        try:
            payload = wire.decode_e2e_payload(pt)
        except ParseError:
            return []
        if payload.kind == wire.REQUEST and payload.responder == self.id:
            return self._respond(payload, via)
        if payload.kind == wire.RESPONSE and payload.initiator == self.id:
            return self._finalize(payload)
        return self._mediate(payload, pt, via)

    def _respond(self, payload: wire.E2ePayload, via: str) -> Outs:
        key = (payload.initiator, payload.exchange_id)
        if key in self.replay:
            return [self._error_out(via, ERR_REPLAY_DETECTED, payload.exchange_id)]
        self.replay.add(key)
        nonce_r = self.rng.nonce()
        seed_r = self.rng.seed16()
        sk = self._session_key(payload.seed, seed_r, payload.initiator, self.id,
                               payload.exchange_id, payload.nonce_i, nonce_r)
        self.sessions[payload.initiator] = PeerSession(
            payload.initiator, sk, DIR_RESPONDER, established_at=self.now)
        self.exchanges[payload.exchange_id] = ExchangeState(
            payload.exchange_id, "responder", payload.initiator, self.id,
            AWAITING_CONFIRM, nonce_i=payload.nonce_i, nonce_r=nonce_r,
            seed_i=payload.seed, seed_r=seed_r)
        response = wire.encode_e2e_payload(wire.E2ePayload(
            wire.RESPONSE, payload.exchange_id, payload.initiator, self.id,
            payload.nonce_i, nonce_r, seed_r))
        return self.send_secure(via, wire.RELAY, response)

    def _finalize(self, payload: wire.E2ePayload) -> Outs:
        ex = self.exchanges.get(payload.exchange_id)
        if ex is None or ex.role != "initiator" or ex.status != AWAITING_RESPONSE:
            return []
        if payload.responder != ex.responder or payload.nonce_i != ex.nonce_i:
            ex.status = FAILED
            ex.fail_reason = "nonce mismatch"
            return []
        sk = self._session_key(ex.seed_i, payload.seed, self.id, ex.responder,
                               ex.exchange_id, ex.nonce_i, payload.nonce_r)
        self.sessions[ex.responder] = PeerSession(
            ex.responder, sk, DIR_INITIATOR, established_at=self.now, confirmed=True)
        ex.nonce_r = payload.nonce_r
        ex.seed_r = payload.seed
        # Key confirmation travels directly over the communication plane.
        header = wire.WireHeader(wire.E2E_CONFIRM, self.id, ex.responder, 0)
        ct = self._seal(sk, link_nonce(DIR_INITIATOR, 0), wire.aad_of(header),
                        ex.exchange_id + payload.nonce_r)
        ex.status = COMPLETE
        return [(ex.responder, wire.encode(wire.WireMessage(header, ct)))]

    def _on_confirm(self, header: wire.WireHeader, ct: bytes) -> Outs:
        peer = header.sender
        session = self.sessions.get(peer)
        if session is None or session.confirmed:
            return []
        candidates = [e for e in self.exchanges.values()
                      if e.role == "responder" and e.initiator == peer
                      and e.status == AWAITING_CONFIRM]
        if not candidates:
            return []
        ex = candidates[-1]
        try:
            pt = self._open(session.key, link_nonce(DIR_INITIATOR, 0), wire.aad_of(header), ct)
        except AuthError:
            return []
        if pt != ex.exchange_id + ex.nonce_r:
            return []
        session.confirmed = True
        ex.status = COMPLETE
        return []

    def _mediate(self, payload: wire.E2ePayload, pt: bytes, via: str) -> Outs:
        if self.role is Role.NODE:
            return [self._error_out(via, ERR_PATH_VIOLATION, payload.exchange_id)]
        try:
            path = hierarchy.resolve_path(self.topo, payload.initiator, payload.responder)
        except (RevokedEntity, LinkUnavailable) as exc:
            return [self._error_out(via, ERR_REVOKED_ENTITY, payload.exchange_id,
                                    entity=_revoked_of(exc, payload))]
        except UnknownEntity:
            return [self._error_out(via, ERR_UNKNOWN_ENTITY, payload.exchange_id)]
        except (NoCommonMediator, SelfPath, PathViolation):
            return [self._error_out(via, ERR_PATH_VIOLATION, payload.exchange_id)]
        hops = list(path.hops)
        if self.id not in hops[1:-1]:
            return [self._error_out(via, ERR_PATH_VIOLATION, payload.exchange_id)]
        i = hops.index(self.id)
        if payload.kind == wire.REQUEST:
            prev_hop, next_hop = hops[i - 1], hops[i + 1]
        else:
            prev_hop, next_hop = hops[i + 1], hops[i - 1]
        if via != prev_hop:
            return [self._error_out(via, ERR_PATH_VIOLATION, payload.exchange_id)]
        self.exchanges[payload.exchange_id] = ExchangeState(
            payload.exchange_id, "mediator", payload.initiator, payload.responder,
            MEDIATING, path=path)
        # Forward the identical payload bytes, re-sealed on the outbound hop.
        return self.send_secure(next_hop, wire.RELAY, pt)

    # --- session traffic ---------------------------------------------------------

    def session_send(self, peer: str, payload: bytes) -> tuple[str, bytes]:
        session = self.sessions.get(peer)
        if session is None or not session.confirmed:
            raise NoSession(f"no confirmed session with {peer}")
        return self._seal_frame(session, wire.TRAFFIC, payload)

    def session_recv(self, frm: str, data: bytes) -> bytes:
        msg = wire.decode(data)
        if msg.header.msg_type != wire.TRAFFIC or msg.header.receiver != self.id:
            raise AuthError("not a traffic frame for this entity")
        session = self.sessions.get(frm)
        if session is None or not session.confirmed:
            raise NoSession(f"no confirmed session with {frm}")
        return self._open_frame(session, msg.header, msg.body)

    def _on_traffic(self, header: wire.WireHeader, data: bytes) -> Outs:
        try:
            pt = self.session_recv(header.sender, data)
        except (NoSession, AuthError, StaleSequence):
            return []
        self.inbox.append((header.sender, pt))
        return []

    # --- error routing --------------------------------------------------------------

    def _on_error(self, header: wire.WireHeader, body: tuple[int, str]) -> Outs:
        code, detail = body
        exchange_hex, _, entity = detail.partition(",")
        if code == ERR_REVOKED_ENTITY and entity:
            self.links.pop(entity, None)
            self.sessions.pop(entity, None)
            self.binding_keys.pop(entity, None)
        try:
            exchange_id = bytes.fromhex(exchange_hex)
        except ValueError:
            exchange_id = b""
        ex = self.exchanges.get(exchange_id)
        if ex is None:
            # Failure notice without a usable exchange reference: fail any
            # in-flight exchange whose first hop is the reporting entity.
            for candidate in self.exchanges.values():
                if (candidate.role == "initiator"
                        and candidate.status == AWAITING_RESPONSE
                        and candidate.path is not None
                        and candidate.path.hops[1] == header.sender):
                    candidate.status = FAILED
                    candidate.fail_code = code
            return []
        if ex.role == "mediator" and ex.status == MEDIATING and ex.path is not None:
            ex.status = FAILED
            ex.fail_code = code
            hops = list(ex.path.hops)
            i = hops.index(self.id)
            if i > 0 and header.sender != hops[i - 1]:
                # Relay failure notices backward toward the initiator.
                to = hops[i - 1]
                reply = wire.WireHeader(wire.ERROR, self.id, to, 0)
                return [(to, wire.encode(wire.WireMessage(reply, (code, detail))))]
            return []
        if ex.status not in (COMPLETE, FAILED):
            ex.status = FAILED
            ex.fail_code = code
        return []

    # --- dispatch -------------------------------------------------------------------

    def on_message(self, frm: str, data: bytes) -> Outs:
        """Run-to-completion handler; never raises on arbitrary input."""
        del frm  # trust only the authenticated header contents
        try:
            msg = wire.decode(data)
        except ParseError:
            return []
        header = msg.header
        if header.receiver != self.id:
            return []
        try:
            if header.msg_type == wire.HELLO:
                return self._on_hello(header, msg.body)
            if header.msg_type == wire.LINK_CHALLENGE:
                return self._on_challenge(header, msg.body)
            if header.msg_type == wire.LINK_FINISH:
                return self._on_finish(header, msg.body)
            if header.msg_type == wire.RELAY:
                return self._on_relay(header, msg.body)
            if header.msg_type == wire.E2E_CONFIRM:
                return self._on_confirm(header, msg.body)
            if header.msg_type == wire.TRAFFIC:
                return self._on_traffic(header, data)
            if header.msg_type == wire.ERROR:
                return self._on_error(header, msg.body)
        except HierakeyError:
            return []
        return []

    def on_timer(self, token: str) -> Outs:
        """Exchange watchdog: fail anything still in flight under this id."""
        try:
            exchange_id = bytes.fromhex(token)
        except ValueError:
            return []
        ex = self.exchanges.get(exchange_id)
        if ex is not None and ex.status in (AWAITING_RESPONSE, AWAITING_CONFIRM, MEDIATING):
            ex.status = FAILED
            ex.fail_reason = "timeout"
        return []


def _revoked_of(exc: Exception, payload: wire.E2ePayload) -> str:
    text = str(exc)
    for candidate in (payload.responder, payload.initiator):
        if candidate in text:
            return candidate
    return text.split()[0] if text else ""
