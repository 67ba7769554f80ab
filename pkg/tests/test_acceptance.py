"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines.
"""

import time
from pathlib import Path

import pytest

from hierakey import cli, hierarchy, scenario, wire
from hierakey.crypto import DeterministicRng, provider_for, rng_for
from hierakey.engine import Network
from hierakey.errors import (
    ERR_AUTH_FAILURE,
    ERR_REPLAY_DETECTED,
    ERR_REVOKED_ENTITY,
    DuplicateRegistration,
)
from hierakey.hierarchy import Role
from hierakey.protocol import COMPLETE
from hierakey.simnet import DROPPED
from tests.conftest import build_district, build_house


def check(criterion: int, description: str, ok: bool) -> None:
    print(f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {description}")
    assert ok, f"criterion {criterion}: {description}"


def complete_exchanges(net: Network) -> int:
    return sum(
        1
        for rt in net.runtimes.values()
        for ex in rt.exchanges.values()
        if ex.role == "initiator" and ex.status == COMPLETE
    )


def test_criterion_1_ch_to_ch_flow():
    started = time.perf_counter()
    net = Network(master_seed=41)
    net.add_entity("H1", Role.HEAD)
    net.add_entity("CH1", Role.CLUSTER_HEAD, "H1")
    net.add_entity("CH2", Role.CLUSTER_HEAD, "H1")
    net.warm_link("CH1", "H1")
    net.warm_link("CH2", "H1")
    t0 = len(net.sim.transcript)
    report = net.establish("CH1", "CH2")
    frames = [r for r in net.sim.transcript[t0:]]
    relays = [r for r in frames if r.data[5] == wire.RELAY]
    confirms = [r for r in frames if r.data[5] == wire.E2E_CONFIRM]
    elapsed = time.perf_counter() - started
    ok = (
        report.ok
        and report.exchange_msgs == 5
        and len(relays) == 4
        and len(confirms) == 1
        and (confirms[0].frm, confirms[0].to) == ("CH1", "CH2")
        and "H1" not in (confirms[0].frm, confirms[0].to)
        and frames[-1].data[5] == wire.E2E_CONFIRM
        and report.aead_deltas["H1"] == 4
        and elapsed < 1.0
    )
    check(1, "CH<->CH via head: 4 mediated + 1 direct confirm, head uninvolved "
             f"in the final message ({elapsed * 1000:.0f} ms)", ok)


def test_criterion_2_cross_house_flow():
    started = time.perf_counter()
    net = build_district(seed=42)
    cold = net.establish("N1", "N2")
    head_links = [s for s in net.exchange_reports
                  if {s.initiator, s.responder} == {"H1", "H2"}]
    t0 = len(net.sim.transcript)
    warm = net.establish("N1", "N2")
    relay_edges = [
        frozenset({r.frm, r.to})
        for r in net.sim.transcript[t0:]
        if r.data[5] == wire.RELAY
    ]
    expected_edges = {
        frozenset({"N1", "CH1"}), frozenset({"CH1", "H1"}), frozenset({"H1", "H2"}),
        frozenset({"H2", "CH2"}), frozenset({"CH2", "N2"}),
    }
    elapsed = time.perf_counter() - started
    ok = (
        cold.ok and warm.ok
        and cold.exchange_msgs == 16
        and warm.exchange_msgs == 11
        and len(head_links) == 1
        and head_links[0].exchange_msgs == 5
        and head_links[0].hops == ("H1", "DM1", "H2")
        and set(relay_edges) == expected_edges
        and len(relay_edges) == 10  # five channels, request + response each
        and elapsed < 1.0
    )
    check(2, "cross-house flow: 11 messages over 5 channels warm, cold start adds "
             f"one 5-message head link via the mediator ({elapsed * 1000:.0f} ms)", ok)


def _fuzz_topology(seed: int) -> tuple[Network, dict]:
    """Randomized district with guaranteed pairs at L = 2, 4 and 5."""
    rng = DeterministicRng(seed.to_bytes(8, "big"))
    tag = rng.draw(3).hex()
    net = Network(master_seed=seed)
    dm, h1, h2 = f"DM.{tag}", f"Ha.{tag}", f"Hb.{tag}"
    c1, c2, c3 = f"Ca.{tag}", f"Cb.{tag}", f"Cc.{tag}"
    n1, n2, n3, n4 = f"na.{tag}", f"nb.{tag}", f"nc.{tag}", f"nd.{tag}"
    net.add_entity(dm, Role.DISTRICT_MEDIATOR)
    net.add_entity(h1, Role.HEAD, dm)
    net.add_entity(h2, Role.HEAD, dm)
    net.add_entity(c1, Role.CLUSTER_HEAD, h1)
    net.add_entity(c2, Role.CLUSTER_HEAD, h1)
    net.add_entity(c3, Role.CLUSTER_HEAD, h2)
    for node, ch in ((n1, c1), (n2, c1), (n3, c2), (n4, c3)):
        net.add_entity(node, Role.NODE, h1 if ch in (c1, c2) else h2)
        net.associate(node, ch)
    # random extras that must not disturb the paths under test
    for i in range(rng.draw(1)[0] % 3):
        extra = f"nx{i}.{tag}"
        net.add_entity(extra, Role.NODE, h1)
        net.associate(extra, c1 if rng.draw(1)[0] % 2 else c2)
    pairs = {2: (n1, n2), 4: (n1, n3), 5: (n1, n4)}
    return net, pairs


def test_criterion_3_message_count_law_fuzzed():
    failures = []
    for seed in range(50):
        net, pairs = _fuzz_topology(seed)
        for length, (a, b) in sorted(pairs.items()):
            net.establish(a, b)  # warm the links and the head channel
            warm = net.establish(a, b)
            if not warm.ok or warm.exchange_msgs != 2 * length + 1:
                failures.append((seed, length, warm.exchange_msgs, warm.fail))
    check(3, "message-count law 2L+1 exact for L in {2,4,5} over 50 fuzzed "
             "topologies", not failures)


def test_criterion_4_load_distribution():
    net = build_district(seed=44)
    net.add_entity("CH1b", Role.CLUSTER_HEAD, "H1")
    net.add_entity("N1b", Role.NODE, "H1")
    net.add_entity("N1c", Role.NODE, "H1")
    net.associate("N1b", "CH1")
    net.associate("N1c", "CH1b")
    cases = {
        2: ("N1", "N1b"),    # shared cluster head
        3: ("N1", "CH1b"),   # node to a foreign cluster head
        4: ("N1", "N1c"),    # clusters bridged by the head
        5: ("N1", "N2"),     # houses bridged by the head link
    }
    ok = True
    for length, (a, b) in sorted(cases.items()):
        net.establish(a, b)
        warm = net.establish(a, b)
        endpoints = {warm.aead_deltas[a], warm.aead_deltas[b]}
        mediators = sum(warm.aead_deltas[h] for h in warm.hops[1:-1])
        ok &= warm.ok
        ok &= endpoints == {3}
        ok &= mediators == 2 * (2 * length - 2)
        ok &= warm.kdf_deltas[a] == 1 and warm.kdf_deltas[b] == 1
    check(4, "end-node cost constant (3 AEAD ops, 1 KDF) while mediator total "
             "is exactly 2(2L-2) for L in {2,3,4,5}", ok)


def test_criterion_5_agreement_and_freshness():
    net = build_house(seed=45)
    keys = []
    ids = set()
    ok = True
    for _ in range(100):
        report = net.establish("N1", "N2")
        ok &= report.ok
        k_i = net.runtimes["N1"].sessions["N2"].key
        k_r = net.runtimes["N2"].sessions["N1"].key
        ok &= k_i == k_r
        keys.append(k_i)
        ids.add(report.exchange_id)
    ok &= len(set(keys)) == 100
    ok &= len(ids) == 100
    check(5, "100 establishments: endpoints agree within each exchange, all "
             "100 keys and exchange ids pairwise distinct", ok)


def test_criterion_6_security_suite():
    ok = True

    # replayed request -> ReplayDetected, no extra completed exchange
    net = build_house(seed=61)
    net.establish("N1", "N2")
    done_before = complete_exchanges(net)
    request = next(r for r in net.sim.transcript if r.data[5] == wire.RELAY)
    from hierakey.simnet import Replay
    net.sim.attach_adversary([Replay(net.sim.transcript.index(request), net.sim.now + 1)])
    net.sim.run_until_idle()
    ok &= ERR_REPLAY_DETECTED in net.errors_seen()
    ok &= complete_exchanges(net) == done_before

    # tampered relay -> dropped at next hop (no forward), open failure counted
    net = build_house(seed=62)
    from hierakey.simnet import Match, Tamper
    net.sim.attach_adversary([Tamper(Match("N1", "CH1", wire.RELAY))])
    report = net.establish("N1", "N2")
    forwarded = [r for r in net.sim.transcript
                 if r.data[5] == wire.RELAY and r.frm == "CH1"]
    ok &= not report.ok
    ok &= net.runtimes["CH1"].counters.aead_open_fail_count == 1
    ok &= not forwarded
    ok &= complete_exchanges(net) == 0

    # injected frame from an unregistered id -> AuthFailure at first hop
    net = build_house(seed=63)
    net.establish("N1", "N2")
    from hierakey.simnet import Inject
    net.sim.attach_adversary([Inject("EVIL", "CH1", net.forge_relay("EVIL", "CH1"),
                                     net.sim.now + 1)])
    net.sim.run_until_idle()
    auth_errors = [r for r in net.sim.transcript
                   if r.data[5] == wire.ERROR and r.frm == "CH1" and r.to == "EVIL"]
    ok &= len(auth_errors) == 1
    ok &= wire.decode(auth_errors[0].data).body[0] == ERR_AUTH_FAILURE

    # establishment to and through a revoked entity -> RevokedEntity
    net = build_house(seed=64)
    net.revoke("N2")
    to_revoked = net.establish("N1", "N2")
    ok &= to_revoked.fail_code == ERR_REVOKED_ENTITY
    net = build_district(seed=65)
    net.establish("N1", "N2")  # head link and links now warm
    done_before = complete_exchanges(net)
    exid, outs = net.runtimes["N1"].e2e_initiate("N2")
    net.sim.send_all("N1", outs)
    net.sim.step()  # request passes the first mediator
    net.sim.step()
    net.revoke("H2")  # the far bridge head disappears mid-exchange
    net.sim.run_until_idle()
    ok &= ERR_REVOKED_ENTITY in net.errors_seen()
    ok &= net.runtimes["N1"].exchanges[exid].fail_code == ERR_REVOKED_ENTITY
    ok &= complete_exchanges(net) == done_before

    # duplicate registration after sealing
    net = build_house(seed=66)
    net.seal_installation()
    try:
        net.add_entity("N1", Role.NODE, "H1")
        ok = False
    except DuplicateRegistration:
        pass

    check(6, "security suite: replay->0x0003, tamper dropped at next hop, "
             "inject->0x0001, revoked->0x0002, re-registration refused", ok)


def test_criterion_7_demo_determinism(tmp_path):
    import contextlib
    import io

    outs = []
    for tag in ("a", "b"):
        out_dir = tmp_path / tag
        with contextlib.redirect_stdout(io.StringIO()):
            rc = cli.main(["demo", "--seed", "9", "--out", str(out_dir)])
        assert rc == 0
        outs.append(out_dir)
    files_a = sorted(p.name for p in outs[0].glob("*.transcript"))
    files_b = sorted(p.name for p in outs[1].glob("*.transcript"))
    ok = files_a == files_b and len(files_a) >= 10
    for name in files_a:
        ok &= (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    check(7, "demo run twice with one seed: transcript files byte-identical", ok)


def test_criterion_8_roundtrip_suites(tmp_path):
    ok = True

    # wire codec: 10^4 generated frames, decode(encode) and encode(decode)
    rng = DeterministicRng(b"accwire8")
    alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_.-"

    def rand_id():
        n = 1 + rng.draw(1)[0] % 16
        return "".join(alphabet[b % len(alphabet)] for b in rng.draw(n))

    types = sorted(wire.MSG_TYPES)
    for i in range(10_000):
        msg_type = types[i % len(types)]
        seq = 0 if msg_type in (wire.HELLO, wire.E2E_CONFIRM) else \
            int.from_bytes(rng.draw(4), "big")
        header = wire.WireHeader(msg_type, rand_id(), rand_id(), seq)
        if msg_type == wire.HELLO:
            body = rng.draw(12)
        elif msg_type == wire.ERROR:
            body = (int.from_bytes(rng.draw(2), "big"), rand_id())
        else:
            body = rng.draw(1 + rng.draw(1)[0] % 32)
        msg = wire.WireMessage(header, body)
        frame = wire.encode(msg)
        ok &= wire.decode(frame) == msg
        ok &= wire.encode(wire.decode(frame)) == frame

    # AEAD roundtrip plus sampled bit-flip rejection
    suite = provider_for("default")
    from hierakey.errors import AuthError
    for i in range(200):
        key, nonce = rng.draw(32), rng.draw(12)
        aad, pt = rng.draw(16), rng.draw(1 + i % 32)
        box = suite.aead_seal(key, nonce, aad, pt)
        ok &= suite.aead_open(key, nonce, aad, box) == pt
        bit = int.from_bytes(rng.draw(2), "big") % (len(box) * 8)
        crooked = bytearray(box)
        crooked[bit // 8] ^= 1 << (bit % 8)
        try:
            suite.aead_open(key, nonce, aad, bytes(crooked))
            ok = False
        except AuthError:
            pass

    # keystore on a 10-entity topology
    reg = rng_for(8, "acc")
    topo = hierarchy.new_topology(hierarchy.ta_setup(None, "default", b"acc"))
    hierarchy.add_root(topo, "DM", Role.DISTRICT_MEDIATOR, reg)
    hierarchy.register(topo, "DM", "H1", Role.HEAD, reg)
    hierarchy.register(topo, "DM", "H2", Role.HEAD, reg)
    for i, head in enumerate(["H1", "H1", "H2"]):
        hierarchy.register(topo, head, f"C{i}", Role.CLUSTER_HEAD, reg)
    for i, (head, ch) in enumerate([("H1", "C0"), ("H1", "C1"), ("H2", "C2"), ("H2", "C2")]):
        hierarchy.register(topo, head, f"n{i}", Role.NODE, reg)
        hierarchy.associate(topo, head, f"n{i}", ch)
    hierarchy.record_peer_key(topo, "H1", "H2", reg.key())
    hierarchy.revoke(topo, "H2", "n3")
    assert len(topo.entries) == 10
    store = tmp_path / "acc.hkks"
    hierarchy.keystore_save(topo, str(store))
    loaded = hierarchy.keystore_load(str(store))
    ok &= loaded == topo or (
        loaded.params == topo.params
        and loaded.entries == topo.entries
        and loaded.peer_keys == topo.peer_keys
    )

    check(8, "roundtrips: 10^4 wire frames both ways, AEAD seal/open with "
             "bit-flip rejection, keystore save/load equality", ok)


def test_criterion_9_demo_duration(tmp_path):
    import contextlib
    import io

    started = time.perf_counter()
    with contextlib.redirect_stdout(io.StringIO()):
        rc = cli.main(["demo", "--seed", "1", "--out", str(tmp_path / "out")])
    elapsed = time.perf_counter() - started
    check(9, f"full demo (attacks included) in {elapsed:.2f} s < 10 s",
          rc == 0 and elapsed < 10.0)
