"""Trust overlay: registry of entities, parent bindings, revocation, binding
keys, mediation-path resolution, and keystore persistence.

The overlay is a forest. District mediators (at most one per deployment) sit
at the root and register heads; heads register cluster heads and nodes; nodes
are additionally associated with one or more cluster heads under the same
head via derived binding keys. Application traffic never follows this tree --
it exists purely to authenticate peers and hand them session keys.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

from . import crypto
from .errors import (
    CrossHeadAssociation,
    DuplicateRegistration,
    FormatError,
    InstallationSealed,
    NoCommonMediator,
    NotFound,
    NotRegistrar,
    RegistrarRevoked,
    RevokedEntity,
    RoleViolation,
    SelfPath,
    UnknownEntity,
)

_ID_RE = re.compile(r"^[A-Za-z0-9_.-]{1,64}$")

KEYSTORE_MAGIC = b"HKKS"
KEYSTORE_VERSION = 1


class Role(enum.Enum):
    NODE = 0
    CLUSTER_HEAD = 1
    HEAD = 2
    DISTRICT_MEDIATOR = 3


ROLE_SHORT = {
    Role.NODE: "node",
    Role.CLUSTER_HEAD: "ch",
    Role.HEAD: "head",
    Role.DISTRICT_MEDIATOR: "dm",
}
ROLE_FROM_SHORT = {v: k for k, v in ROLE_SHORT.items()}


class Status(enum.Enum):
    ACTIVE = 0
    REVOKED = 1


def check_entity_id(entity_id: str) -> str:
    if not _ID_RE.match(entity_id):
        raise ValueError(f"invalid entity id {entity_id!r}")
    return entity_id


@dataclass
class NetworkParams:
    """Published once by the trusted authority; identical at every entity.
    deployment_label is mixed into every KDF context."""

    suite_id: str
    deployment_label: bytes
    protocol_version: int = 1


@dataclass
class RegistryEntry:
    id: str
    role: Role
    registrar: str  # the head/mediator that registered it; roots register themselves
    master_key: bytes | None
    status: Status = Status.ACTIVE
    associated_chs: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class RegistrationReceipt:
    """Models the out-of-band secure delivery of the master key at install
    time (e.g. scanning a code the head displays)."""

    id: str
    master_key: bytes


@dataclass(frozen=True)
class BindingReceipt:
    node: str
    ch: str
    key: bytes


@dataclass(frozen=True)
class TrustPath:
    """Mediation route between two endpoints. When requires_head_link is set
    the head-to-head hop has no key yet and must be established first."""

    hops: tuple[str, ...]
    requires_head_link: bool = False


@dataclass
class Topology:
    params: NetworkParams
    entries: dict[str, RegistryEntry] = field(default_factory=dict)
    peer_keys: dict[tuple[str, str], bytes] = field(default_factory=dict)
    sealed: bool = False

    @property
    def provider(self):
        return crypto.provider_for(self.params.suite_id)


def ta_setup(rng, suite_id: str, deployment_label: bytes) -> NetworkParams:
    """Create the published network parameters. Deterministic: identical
    inputs yield equal params. `rng` is accepted for interface symmetry with
    the other setup operations but contributes nothing."""
    del rng
    crypto.provider_for(suite_id)  # fail fast on unknown suites
    return NetworkParams(suite_id=suite_id, deployment_label=bytes(deployment_label))


def new_topology(params: NetworkParams) -> Topology:
    return Topology(params=params)


def _entry(topo: Topology, entity_id: str) -> RegistryEntry:
    try:
        return topo.entries[entity_id]
    except KeyError:
        raise UnknownEntity(entity_id) from None


def _active(topo: Topology, entity_id: str) -> RegistryEntry:
    e = _entry(topo, entity_id)
    if e.status is Status.REVOKED:
        raise RevokedEntity(entity_id)
    return e


def add_root(topo: Topology, entity_id: str, role: Role, rng) -> RegistrationReceipt:
    """Seed a root of the overlay forest: the district mediator, or a head in
    a pure in-home deployment (no mediator)."""
    check_entity_id(entity_id)
    if entity_id in topo.entries:
        raise DuplicateRegistration(entity_id)
    if topo.sealed:
        raise InstallationSealed(entity_id)
    if role is Role.DISTRICT_MEDIATOR:
        if any(e.role is Role.DISTRICT_MEDIATOR for e in topo.entries.values()):
            raise RoleViolation("a deployment has at most one district mediator")
    elif role is Role.HEAD:
        if any(e.role is Role.DISTRICT_MEDIATOR for e in topo.entries.values()):
            raise RoleViolation("heads must register with the district mediator")
    else:
        raise RoleViolation(f"{ROLE_SHORT[role]} cannot be a root")
    key = rng.key()
    topo.entries[entity_id] = RegistryEntry(entity_id, role, entity_id, key)
    return RegistrationReceipt(entity_id, key)


_LEGAL_CHILDREN = {
    Role.HEAD: {Role.CLUSTER_HEAD, Role.NODE},
    Role.DISTRICT_MEDIATOR: {Role.HEAD},
}


def register(topo: Topology, registrar: str, child: str, role: Role, rng) -> RegistrationReceipt:
    """Install `child` under `registrar`, minting a fresh master key.

    Ids are never reusable: once present (Active or Revoked), registering the
    same id again raises DuplicateRegistration, which enforces the lockout of
    already-installed devices from re-fetching private parameters.
    """
    check_entity_id(child)
    reg = _entry(topo, registrar)
    if reg.status is Status.REVOKED:
        raise RegistrarRevoked(registrar)
    if role not in _LEGAL_CHILDREN.get(reg.role, set()):
        raise RoleViolation(f"{ROLE_SHORT[reg.role]} may not register a {ROLE_SHORT[role]}")
    if child in topo.entries:
        raise DuplicateRegistration(child)
    if topo.sealed:
        raise InstallationSealed(child)
    key = rng.key()
    topo.entries[child] = RegistryEntry(child, role, registrar, key)
    return RegistrationReceipt(child, key)


def seal_installation(topo: Topology) -> None:
    topo.sealed = True


def binding_key(topo: Topology, node_master_key: bytes, node: str, ch: str) -> bytes:
    """Key binding a node to one of its cluster heads. Derivable by the node
    from its own master key, so no extra secret ever travels to the node."""
    return topo.provider.kdf(
        node_master_key,
        "bind-v1",
        [node.encode(), ch.encode(), topo.params.deployment_label],
    )


def associate(topo: Topology, head: str, node: str, ch: str) -> BindingReceipt:
    """Bind `node` to cluster head `ch`; both must be active under `head`.
    The receipt carries the binding key for delivery to the cluster head's
    keystore. Idempotent: repeating the association derives the same key."""
    h = _active(topo, head)
    n = _active(topo, node)
    c = _active(topo, ch)
    if h.role is not Role.HEAD or n.role is not Role.NODE or c.role is not Role.CLUSTER_HEAD:
        raise RoleViolation("associate needs (head, node, cluster head)")
    if n.registrar != head:
        raise CrossHeadAssociation(f"{node} is not registered under {head}")
    if c.registrar != head:
        raise CrossHeadAssociation(f"{ch} is not registered under {head}")
    key = binding_key(topo, n.master_key, node, ch)
    if ch not in n.associated_chs:
        n.associated_chs.append(ch)
    return BindingReceipt(node, ch, key)


def revoke(topo: Topology, registrar: str, entity_id: str) -> None:
    """Delete the registration key: the entity can no longer establish
    anything. Tombstones persist so the id can never be re-registered."""
    e = _entry(topo, entity_id)
    if e.status is Status.REVOKED:
        raise RevokedEntity(f"{entity_id} already revoked")
    if e.registrar != registrar or e.registrar == entity_id:
        raise NotRegistrar(f"{registrar} did not register {entity_id}")
    e.status = Status.REVOKED
    e.master_key = None
    e.associated_chs = []
    for pair in [p for p in topo.peer_keys if entity_id in p]:
        del topo.peer_keys[pair]
    for other in topo.entries.values():
        if entity_id in other.associated_chs:
            other.associated_chs.remove(entity_id)


def _pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a < b else (b, a)


def record_peer_key(topo: Topology, a: str, b: str, key: bytes) -> None:
    _active(topo, a)
    _active(topo, b)
    topo.peer_keys[_pair(a, b)] = key


def lookup_peer_key(topo: Topology, a: str, b: str) -> bytes:
    _active(topo, a)
    _active(topo, b)
    try:
        return topo.peer_keys[_pair(a, b)]
    except KeyError:
        raise NotFound(f"no peer key for ({a}, {b})") from None


def district_mediator(topo: Topology) -> RegistryEntry | None:
    for e in topo.entries.values():
        if e.role is Role.DISTRICT_MEDIATOR:
            return e
    return None


def _ladder(topo: Topology, entity_id: str) -> list[str]:
    """Upward chain entity -> [cluster head] -> head -> [mediator]. Each
    adjacent pair on the chain shares a registration or binding key."""
    e = _active(topo, entity_id)
    chain = [entity_id]
    if e.role is Role.NODE:
        chs = sorted(
            ch for ch in e.associated_chs
            if topo.entries[ch].status is Status.ACTIVE
        )
        if not chs:
            raise NoCommonMediator(f"{entity_id} has no active cluster head")
        chain.append(chs[0])
        e = _active(topo, e.registrar)  # the node's head
        chain.append(e.id)
    elif e.role is Role.CLUSTER_HEAD:
        e = _active(topo, e.registrar)
        chain.append(e.id)
    if e.role is Role.HEAD and e.registrar != e.id:
        dm = _active(topo, e.registrar)
        chain.append(dm.id)
    return chain


def resolve_path(topo: Topology, a: str, b: str) -> TrustPath:
    """Minimal mediation path between two endpoints.

    Same cluster: through the (lexicographically first) shared cluster head.
    Same house: up to the head and back down. Different houses: through the
    head-to-head secure channel, flagged when that channel does not exist
    yet. Two heads meet at the district mediator.
    """
    if a == b:
        raise SelfPath(a)
    ea = _active(topo, a)
    eb = _active(topo, b)

    if ea.role is Role.NODE and eb.role is Role.NODE:
        shared = sorted(
            ch for ch in set(ea.associated_chs) & set(eb.associated_chs)
            if topo.entries[ch].status is Status.ACTIVE
        )
        if shared:
            return TrustPath((a, shared[0], b))

    if ea.role is Role.HEAD and eb.role is Role.HEAD:
        dm = district_mediator(topo)
        if dm is None:
            raise NoCommonMediator(f"no mediator between {a} and {b}")
        if dm.status is Status.REVOKED:
            raise RevokedEntity(dm.id)
        return TrustPath((a, dm.id, b))

    la = _ladder(topo, a)
    lb = _ladder(topo, b)
    if b in la:
        return TrustPath(tuple(la[: la.index(b) + 1]))
    if a in lb:
        return TrustPath(tuple(reversed(lb[: lb.index(a) + 1])))

    roles = {e.id: e.role for e in map(lambda x: topo.entries[x], la + lb)}
    heads_a = [x for x in la if roles[x] is Role.HEAD]
    heads_b = [x for x in lb if roles[x] is Role.HEAD]
    if heads_a and heads_b:
        ha, hb = heads_a[0], heads_b[0]
        if ha == hb:
            return TrustPath(tuple(la[: la.index(ha) + 1]) + tuple(reversed(lb[: lb.index(hb)])))
        # Different houses: ride the head-to-head channel, never the mediator.
        hops = tuple(la[: la.index(ha) + 1]) + tuple(reversed(lb[: lb.index(hb) + 1]))
        if _pair(ha, hb) in topo.peer_keys:
            return TrustPath(hops)
        dm = district_mediator(topo)
        if dm is None:
            raise NoCommonMediator(f"no mediator between {a} and {b}")
        if dm.status is Status.REVOKED:
            raise RevokedEntity(dm.id)
        return TrustPath(hops, requires_head_link=True)

    raise NoCommonMediator(f"no mediator between {a} and {b}")


def path_key_available(topo: Topology, x: str, y: str) -> bool:
    """True when adjacent hops x, y share a usable key: registration
    (parent-child either way), node-CH binding, or a recorded peer key."""
    ex, ey = topo.entries.get(x), topo.entries.get(y)
    if ex is None or ey is None:
        return False
    if ex.registrar == y or ey.registrar == x:
        return True
    if ex.role is Role.NODE and y in ex.associated_chs:
        return True
    if ey.role is Role.NODE and x in ey.associated_chs:
        return True
    return _pair(x, y) in topo.peer_keys


# --- keystore persistence ---------------------------------------------------

def _w_id(entity_id: str) -> bytes:
    raw = entity_id.encode("utf-8")
    return len(raw).to_bytes(2, "big") + raw


def _w_bytes(data: bytes) -> bytes:
    return len(data).to_bytes(2, "big") + data


def _keystore_digest(topo_provider, body: bytes) -> bytes:
    # Integrity only, keyed with a fixed public value; chunked so each
    # context part stays within the KDF's u16 length prefix.
    chunks = [body[i:i + 0xFFFF] for i in range(0, len(body), 0xFFFF)] or [b""]
    return topo_provider.kdf(bytes(32), "hh-v1", chunks)


def keystore_save(topo: Topology, path: str) -> None:
    """Write the registry to disk. Entries are sorted by id so equal
    topologies serialize to identical bytes. Keys are stored unwrapped; the
    trailer is an integrity digest, not a confidentiality measure."""
    body = bytearray()
    body += KEYSTORE_MAGIC
    body.append(KEYSTORE_VERSION)
    body.append(topo.params.protocol_version)
    body += _w_id(topo.params.suite_id)
    body += _w_bytes(topo.params.deployment_label)
    entries = sorted(topo.entries.values(), key=lambda e: e.id)
    body += len(entries).to_bytes(4, "big")
    for e in entries:
        body += _w_id(e.id)
        body.append(e.role.value)
        body += _w_id(e.registrar)
        body.append(e.status.value)
        if e.master_key is None:
            body.append(0)
        else:
            body.append(1)
            body += e.master_key
        body.append(len(e.associated_chs))
        for ch in sorted(e.associated_chs):
            body += _w_id(ch)
    pairs = sorted(topo.peer_keys.items())
    body += len(pairs).to_bytes(4, "big")
    for (x, y), key in pairs:
        body += _w_id(x) + _w_id(y) + key
    body += _keystore_digest(topo.provider, bytes(body))
    with open(path, "wb") as fh:
        fh.write(body)


class _StoreReader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("truncated keystore")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return int.from_bytes(self.take(2), "big")

    def u32(self) -> int:
        return int.from_bytes(self.take(4), "big")

    def short_bytes(self) -> bytes:
        return self.take(self.u16())

    def short_str(self) -> str:
        try:
            return self.short_bytes().decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("invalid UTF-8 in keystore") from None


def keystore_load(path: str) -> Topology:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 + 1 + 32:
        raise FormatError("truncated keystore")
    body, digest = data[:-32], data[-32:]
    r = _StoreReader(body)
    if r.take(4) != KEYSTORE_MAGIC:
        raise FormatError("bad keystore magic")
    version = r.u8()
    if version != KEYSTORE_VERSION:
        raise FormatError(f"UnsupportedVersion: {version}")
    protocol_version = r.u8()
    suite_id = r.short_str()
    label = r.short_bytes()
    params = NetworkParams(suite_id=suite_id, deployment_label=label,
                           protocol_version=protocol_version)
    provider = crypto.provider_for(suite_id)
    if _keystore_digest(provider, body) != digest:
        raise FormatError("keystore integrity digest mismatch")
    topo = Topology(params=params)
    for _ in range(r.u32()):
        entity_id = r.short_str()
        role = Role(r.u8())
        registrar = r.short_str()
        status = Status(r.u8())
        key = r.take(32) if r.u8() else None
        assoc = [r.short_str() for _ in range(r.u8())]
        topo.entries[entity_id] = RegistryEntry(
            entity_id, role, registrar, key, status, assoc)
    for _ in range(r.u32()):
        x = r.short_str()
        y = r.short_str()
        topo.peer_keys[(x, y)] = r.take(32)
    if r.pos != len(body):
        raise FormatError("trailing bytes in keystore")
    return topo
