"""Deployment driver: wires the registry, runtimes and simulator together
and orchestrates complete flows (installation, link warming, head-link
bootstrap, end-to-end establishment, session traffic).

Link handshakes are driven as an explicit warm phase before each exchange,
so the per-exchange metric deltas isolate exchange work from link setup;
the message counters likewise report handshake and exchange frames
separately.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import hierarchy, protocol, wire
from .crypto import rng_for
from .errors import (
    ERR_REVOKED_ENTITY,
    ERR_UNKNOWN_ENTITY,
    HierakeyError,
    LinkUnavailable,
    NoCommonMediator,
    NoSession,
    RevokedEntity,
    UnknownEntity,
)
from .hierarchy import Role
from .simnet import DELIVERED, Counters, Simulator

EXCHANGE_TYPES = frozenset({wire.RELAY, wire.E2E_CONFIRM})
HANDSHAKE_TYPES = frozenset({wire.HELLO, wire.LINK_CHALLENGE, wire.LINK_FINISH})


@dataclass
class ExchangeReport:
    initiator: str
    responder: str
    ok: bool = False
    fail: str | None = None
    fail_code: int | None = None
    exchange_msgs: int = 0
    handshake_msgs: int = 0
    hops: tuple[str, ...] = ()
    exchange_id: bytes | None = None
    # aead-op delta per entity over the exchange slice (warm phase excluded)
    aead_deltas: dict[str, int] = field(default_factory=dict)
    kdf_deltas: dict[str, int] = field(default_factory=dict)
    open_fail_deltas: dict[str, int] = field(default_factory=dict)


def _fail_of(exc: HierakeyError) -> tuple[str, int | None]:
    if isinstance(exc, RevokedEntity):
        return f"0x{ERR_REVOKED_ENTITY:04x}", ERR_REVOKED_ENTITY
    if isinstance(exc, UnknownEntity):
        return f"0x{ERR_UNKNOWN_ENTITY:04x}", ERR_UNKNOWN_ENTITY
    return type(exc).__name__, None


class Network:
    """One deployment: a topology, one runtime per entity, one simulator."""

    def __init__(self, master_seed: int = 1, suite_id: str = "default",
                 deployment_label: bytes = b"district-1", latency: int = 1):
        self.master_seed = master_seed
        self.params = hierarchy.ta_setup(None, suite_id, deployment_label)
        self.topo = hierarchy.new_topology(self.params)
        self.sim = Simulator(master_seed, latency)
        self.runtimes: dict[str, protocol.EntityRuntime] = {}
        self._registry_rng = rng_for(master_seed, "registry")
        self.adversary_rng = rng_for(master_seed, "adversary")
        self.exchange_reports: list[ExchangeReport] = []

    # --- installation -------------------------------------------------------

    def _spawn(self, entity_id: str, role: Role) -> protocol.EntityRuntime:
        rt = protocol.EntityRuntime(
            entity_id, role, self.topo, rng_for(self.master_seed, f"entity:{entity_id}"))
        self.runtimes[entity_id] = rt
        self.sim.register(rt)
        return rt

    def add_entity(self, entity_id: str, role: Role, parent: str | None = None) -> None:
        if parent is None:
            receipt = hierarchy.add_root(self.topo, entity_id, role, self._registry_rng)
        else:
            receipt = hierarchy.register(self.topo, parent, entity_id, role, self._registry_rng)
        rt = self._spawn(entity_id, role)
        rt.install_master_key(receipt.master_key)
        if parent is not None:
            self.runtimes[parent].install_child_key(entity_id, receipt.master_key)

    def associate(self, node: str, ch: str) -> None:
        head = hierarchy._entry(self.topo, node).registrar
        receipt = hierarchy.associate(self.topo, head, node, ch)
        self.runtimes[ch].install_binding_key(node, receipt.key)

    def seal_installation(self) -> None:
        hierarchy.seal_installation(self.topo)

    def revoke(self, entity_id: str) -> None:
        registrar = hierarchy._entry(self.topo, entity_id).registrar
        hierarchy.revoke(self.topo, registrar, entity_id)

    # --- link management ------------------------------------------------------

    def _link_child(self, x: str, y: str) -> str:
        ex = self.topo.entries[x]
        ey = self.topo.entries[y]
        if ex.registrar == y:
            return x
        if ey.registrar == x:
            return y
        if ex.role is Role.NODE and y in ex.associated_chs:
            return x
        if ey.role is Role.NODE and x in ey.associated_chs:
            return y
        raise LinkUnavailable(f"no shared secret between {x} and {y}")

    def warm_link(self, x: str, y: str) -> None:
        child = self._link_child(x, y)
        other = y if child == x else x
        rt = self.runtimes[child]
        if rt.channel_for(other) is not None:
            return
        self.sim.send_all(child, rt.start_link(other))
        self.sim.run_until_idle()

    def _warm_path(self, hops: tuple[str, ...]) -> None:
        for x, y in zip(hops, hops[1:]):
            if (self.topo.entries[x].role is Role.HEAD
                    and self.topo.entries[y].role is Role.HEAD):
                continue  # head-to-head hop rides the established peer channel
            self.warm_link(x, y)

    def ensure_head_link(self, h_a: str, h_b: str) -> ExchangeReport | None:
        """Run head<->head establishment through the district mediator and
        record the resulting key so cross-house paths can treat the pair as
        one secure channel. No-op when the channel already exists."""
        if hierarchy._pair(h_a, h_b) in self.topo.peer_keys:
            return None
        report = self.establish(h_a, h_b)
        if report.ok:
            key = self.runtimes[h_a].sessions[h_b].key
            hierarchy.record_peer_key(self.topo, h_a, h_b, key)
        return report

    # --- flows ---------------------------------------------------------------

    def _count_slice(self, start: int) -> tuple[int, int]:
        exchange = handshake = 0
        for rec in self.sim.transcript[start:]:
            if rec.disposition != DELIVERED or len(rec.data) < 6:
                continue
            t = rec.data[5]
            if t in EXCHANGE_TYPES:
                exchange += 1
            elif t in HANDSHAKE_TYPES:
                handshake += 1
        return exchange, handshake

    def establish(self, a: str, b: str) -> ExchangeReport:
        report = ExchangeReport(a, b)
        nested_msgs = 0
        try:
            path = hierarchy.resolve_path(self.topo, a, b)
            if path.requires_head_link:
                heads = [h for h in path.hops
                         if self.topo.entries[h].role is Role.HEAD]
                sub = self.ensure_head_link(heads[0], heads[1])
                if sub is not None:
                    report.handshake_msgs += sub.handshake_msgs
                    nested_msgs += sub.exchange_msgs
                    if not sub.ok:
                        report.fail, report.fail_code = sub.fail, sub.fail_code
                        report.exchange_msgs = nested_msgs
                        self.exchange_reports.append(report)
                        return report
                path = hierarchy.resolve_path(self.topo, a, b)
            report.hops = path.hops
            t_warm = len(self.sim.transcript)
            self._warm_path(path.hops)
            _, warm_handshakes = self._count_slice(t_warm)
            report.handshake_msgs += warm_handshakes
            before = self.sim.snapshot_metrics()
            t0 = len(self.sim.transcript)
            exchange_id, outs = self.runtimes[a].e2e_initiate(b)
        except HierakeyError as exc:
            report.fail, report.fail_code = _fail_of(exc)
            report.exchange_msgs = nested_msgs
            self.exchange_reports.append(report)
            return report
        report.exchange_id = exchange_id
        self.sim.send_all(a, outs)
        self.sim.run_until_idle()
        ex = self.runtimes[a].exchanges[exchange_id]
        if ex.status == protocol.COMPLETE:
            report.ok = True
        elif ex.status == protocol.FAILED:
            if ex.fail_code is not None:
                report.fail = f"0x{ex.fail_code:04x}"
                report.fail_code = ex.fail_code
            else:
                report.fail = ex.fail_reason or "failed"
        else:
            ex.status = protocol.FAILED
            ex.fail_reason = "timeout"
            report.fail = "timeout"
        slice_msgs, slice_handshakes = self._count_slice(t0)
        report.exchange_msgs = nested_msgs + slice_msgs
        report.handshake_msgs += slice_handshakes
        after = self.sim.snapshot_metrics()
        for name, now in after.items():
            then = before.get(name, Counters())
            report.aead_deltas[name] = now.aead_total - then.aead_total
            report.kdf_deltas[name] = now.kdf_count - then.kdf_count
            report.open_fail_deltas[name] = (
                now.aead_open_fail_count - then.aead_open_fail_count)
        self.exchange_reports.append(report)
        return report

    def traffic(self, a: str, b: str, payload: bytes) -> bool:
        try:
            out = self.runtimes[a].session_send(b, payload)
        except (NoSession, KeyError):
            return False
        received_before = len(self.runtimes[b].inbox)
        to, data = out
        self.sim.send(a, to, data)
        self.sim.run_until_idle()
        inbox = self.runtimes[b].inbox
        return len(inbox) > received_before and inbox[-1] == (a, payload)

    # --- adversary helpers ------------------------------------------------------

    def forge_relay(self, from_claim: str, to: str) -> bytes:
        """Syntactically valid RELAY frame with garbage ciphertext, as a
        keyless network adversary could craft."""
        header = wire.WireHeader(wire.RELAY, from_claim, to, 1)
        junk = self.adversary_rng.key() + self.adversary_rng.seed16()
        return wire.encode(wire.WireMessage(header, junk))

    def errors_seen(self) -> list[int]:
        codes = []
        for rec in self.sim.transcript:
            if len(rec.data) > 5 and rec.data[5] == wire.ERROR:
                try:
                    msg = wire.decode(rec.data)
                except HierakeyError:
                    continue
                codes.append(msg.body[0])
        return codes

    def has_confirmed_session(self, holder: str, peer: str) -> bool:
        rt = self.runtimes.get(holder)
        if rt is None:
            return False
        session = rt.sessions.get(peer)
        return session is not None and session.confirmed
