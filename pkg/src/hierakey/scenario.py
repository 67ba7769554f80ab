"""Declarative scenario files: parse, execute, report.

Grammar (one directive per line, `#` starts a comment):

    entity <id> role=<node|ch|head|dm> [parent=<id>] [expect=fail:<name>]
    associate <node> <ch> [expect=fail:<name>]
    seal-installation
    establish <a> <b> [expect_msgs=K] [expect=fail:<errcode-or-name>]
    traffic <a> <b> <hex payload>
    revoke <id> [expect=fail:<name>]
    attack drop from=<id> to=<id> [type=<name>] [nth=<k>]
    attack tamper from=<id> to=<id> [type=<name>] [nth=<k>] [bit=<n>]
    attack replay from=<id> to=<id> [type=<name>] [nth=<k>] [delay=<ticks>]
    attack inject from=<id> to=<id> [kind=relay|hex] [hex=<bytes>]
    attack eavesdrop from=<id> to=<id> [type=<name>]
    expect metric <entity> [aead=<n>] [kdf=<n>] [open_fail=<n>]
    expect error <hexcode>
    expect session <holder> <peer>
    expect no-session <holder> <peer>
    expect captures <n>

`expect metric` checks the op-count delta of the most recent establish;
`expect error` checks that an ERROR frame with the given code appeared on
the wire at any point so far. Entities must be declared before use; attack
directives are exempt because an adversary may claim any identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import simnet, wire
from .engine import Network
from .errors import (
    ForwardReference,
    HierakeyError,
    SyntaxErrorLine,
    UnknownDirective,
)
from .hierarchy import ROLE_FROM_SHORT, ROLE_SHORT

_TYPE_CODES = {name: code for code, name in wire.TYPE_NAMES.items()}


@dataclass
class Directive:
    line_no: int
    text: str
    kind: str
    args: dict = field(default_factory=dict)


@dataclass
class ScenarioFile:
    name: str
    directives: list[Directive]


@dataclass
class OutcomeRecord:
    line_no: int
    text: str
    ok: bool
    detail: str = ""


@dataclass
class RunReport:
    scenario: str
    seed: int
    records: list[OutcomeRecord]
    metrics: dict
    exchange_summaries: list[dict]
    end_node_constant_load: bool
    transcript_text: str

    @property
    def passed(self) -> bool:
        return all(r.ok for r in self.records)


def _kv(tokens: list[str], line_no: int) -> dict[str, str]:
    opts = {}
    for tok in tokens:
        if "=" not in tok:
            raise SyntaxErrorLine(line_no, f"expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        opts[k] = v
    return opts


def _int_opt(opts: dict, key: str, line_no: int, default=None):
    if key not in opts:
        return default
    value = opts.pop(key)
    try:
        return int(value, 0)
    except ValueError:
        raise SyntaxErrorLine(line_no, f"bad integer for {key}: {value!r}") from None


def _msg_type_opt(opts: dict, line_no: int):
    if "type" not in opts:
        return None
    name = opts.pop("type")
    if name in _TYPE_CODES:
        return _TYPE_CODES[name]
    try:
        return int(name, 0)
    except ValueError:
        raise SyntaxErrorLine(line_no, f"unknown message type {name!r}") from None


def parse_scenario(text: str, name: str = "scenario") -> ScenarioFile:
    directives: list[Directive] = []
    declared: set[str] = set()

    def need_declared(ids, line_no):
        for entity_id in ids:
            if entity_id not in declared:
                raise ForwardReference(line_no, f"undeclared entity {entity_id!r}")

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        kind, rest = tokens[0], tokens[1:]
        if kind == "entity":
            if len(rest) < 2:
                raise SyntaxErrorLine(line_no, "entity needs <id> role=<role>")
            entity_id = rest[0]
            opts = _kv(rest[1:], line_no)
            role = opts.pop("role", None)
            if role not in ROLE_FROM_SHORT:
                raise SyntaxErrorLine(line_no, f"bad role {role!r}")
            args = {"id": entity_id, "role": ROLE_FROM_SHORT[role],
                    "parent": opts.pop("parent", None),
                    "expect_fail": _expect_fail(opts, line_no)}
            _no_extra(opts, line_no)
            declared.add(entity_id)
            directives.append(Directive(line_no, line, "entity", args))
        elif kind == "associate":
            if len(rest) < 2:
                raise SyntaxErrorLine(line_no, "associate needs <node> <ch>")
            opts = _kv(rest[2:], line_no)
            need_declared(rest[:2], line_no)
            directives.append(Directive(line_no, line, "associate", {
                "node": rest[0], "ch": rest[1],
                "expect_fail": _expect_fail(opts, line_no)}))
            _no_extra(opts, line_no)
        elif kind == "seal-installation":
            directives.append(Directive(line_no, line, "seal"))
        elif kind == "establish":
            if len(rest) < 2:
                raise SyntaxErrorLine(line_no, "establish needs <a> <b>")
            opts = _kv(rest[2:], line_no)
            need_declared(rest[:2], line_no)
            directives.append(Directive(line_no, line, "establish", {
                "a": rest[0], "b": rest[1],
                "expect_msgs": _int_opt(opts, "expect_msgs", line_no),
                "expect_fail": _expect_fail(opts, line_no)}))
            _no_extra(opts, line_no)
        elif kind == "traffic":
            if len(rest) != 3:
                raise SyntaxErrorLine(line_no, "traffic needs <a> <b> <hex>")
            need_declared(rest[:2], line_no)
            try:
                payload = bytes.fromhex(rest[2])
            except ValueError:
                raise SyntaxErrorLine(line_no, f"bad hex payload {rest[2]!r}") from None
            directives.append(Directive(line_no, line, "traffic", {
                "a": rest[0], "b": rest[1], "payload": payload}))
        elif kind == "revoke":
            if not rest:
                raise SyntaxErrorLine(line_no, "revoke needs <id>")
            opts = _kv(rest[1:], line_no)
            need_declared(rest[:1], line_no)
            directives.append(Directive(line_no, line, "revoke", {
                "id": rest[0], "expect_fail": _expect_fail(opts, line_no)}))
            _no_extra(opts, line_no)
        elif kind == "attack":
            if not rest or rest[0] not in ("drop", "tamper", "replay", "inject", "eavesdrop"):
                raise SyntaxErrorLine(line_no, "attack needs drop|tamper|replay|inject|eavesdrop")
            opts = _kv(rest[1:], line_no)
            args = {"mode": rest[0],
                    "frm": opts.pop("from", None), "to": opts.pop("to", None),
                    "msg_type": _msg_type_opt(opts, line_no),
                    "nth": _int_opt(opts, "nth", line_no, 1),
                    "bit": _int_opt(opts, "bit", line_no),
                    "delay": _int_opt(opts, "delay", line_no, 1),
                    "inject_kind": opts.pop("kind", "relay"),
                    "hex": opts.pop("hex", None)}
            _no_extra(opts, line_no)
            if args["frm"] is None or args["to"] is None:
                raise SyntaxErrorLine(line_no, "attack needs from=<id> to=<id>")
            directives.append(Directive(line_no, line, "attack", args))
        elif kind == "expect":
            if not rest:
                raise SyntaxErrorLine(line_no, "empty expect")
            sub = rest[0]
            if sub == "metric":
                if len(rest) < 3:
                    raise SyntaxErrorLine(line_no, "expect metric <entity> k=v...")
                need_declared(rest[1:2], line_no)
                opts = _kv(rest[2:], line_no)
                checks = {}
                for key in ("aead", "kdf", "open_fail"):
                    if key in opts:
                        checks[key] = _int_opt(opts, key, line_no)
                _no_extra(opts, line_no)
                if not checks:
                    raise SyntaxErrorLine(line_no, "expect metric needs at least one check")
                directives.append(Directive(line_no, line, "expect_metric", {
                    "entity": rest[1], "checks": checks}))
            elif sub == "error":
                if len(rest) != 2:
                    raise SyntaxErrorLine(line_no, "expect error <hexcode>")
                try:
                    code = int(rest[1], 0)
                except ValueError:
                    raise SyntaxErrorLine(line_no, f"bad error code {rest[1]!r}") from None
                directives.append(Directive(line_no, line, "expect_error", {"code": code}))
            elif sub in ("session", "no-session"):
                if len(rest) != 3:
                    raise SyntaxErrorLine(line_no, f"expect {sub} <holder> <peer>")
                need_declared(rest[1:], line_no)
                directives.append(Directive(line_no, line, "expect_session", {
                    "holder": rest[1], "peer": rest[2], "present": sub == "session"}))
            elif sub == "captures":
                if len(rest) != 2:
                    raise SyntaxErrorLine(line_no, "expect captures <n>")
                directives.append(Directive(line_no, line, "expect_captures", {
                    "n": int(rest[1])}))
            else:
                raise UnknownDirective(line_no, f"unknown expect form {sub!r}")
        else:
            raise UnknownDirective(line_no, f"unknown directive {kind!r}")
    return ScenarioFile(name, directives)


def _expect_fail(opts: dict, line_no: int):
    token = opts.pop("expect", None)
    if token is None:
        return None
    if not token.startswith("fail:"):
        raise SyntaxErrorLine(line_no, f"expect option must be fail:<value>, got {token!r}")
    return token[len("fail:"):]


def _no_extra(opts: dict, line_no: int):
    if opts:
        raise SyntaxErrorLine(line_no, f"unknown options {sorted(opts)}")


def _fail_matches(expected: str, fail: str | None, fail_code: int | None) -> bool:
    if fail is None:
        return False
    if expected.lower().startswith("0x") and fail_code is not None:
        try:
            return int(expected, 16) == fail_code
        except ValueError:
            return False
    return expected == fail


class _Runner:
    def __init__(self, scenario: ScenarioFile, seed: int):
        self.scenario = scenario
        self.net = Network(master_seed=seed)
        self.records: list[OutcomeRecord] = []
        self.last_establish = None

    def _record(self, d: Directive, ok: bool, detail: str = ""):
        self.records.append(OutcomeRecord(d.line_no, d.text, ok, detail))

    def _run_expected_failure(self, d: Directive, fn, expect_fail: str | None):
        try:
            fn()
        except HierakeyError as exc:
            name = type(exc).__name__
            if expect_fail is not None and expect_fail == name:
                self._record(d, True, f"failed as expected: {name}")
            else:
                self._record(d, False, f"{name}: {exc}")
            return
        if expect_fail is not None:
            self._record(d, False, f"expected failure {expect_fail}, but succeeded")
        else:
            self._record(d, True)

    def run(self) -> None:
        for d in self.scenario.directives:
            handler = getattr(self, f"_do_{d.kind}")
            handler(d)

    def _do_entity(self, d: Directive):
        args = d.args
        self._run_expected_failure(
            d, lambda: self.net.add_entity(args["id"], args["role"], args["parent"]),
            args["expect_fail"])

    def _do_associate(self, d: Directive):
        args = d.args
        self._run_expected_failure(
            d, lambda: self.net.associate(args["node"], args["ch"]), args["expect_fail"])

    def _do_seal(self, d: Directive):
        self.net.seal_installation()
        self._record(d, True)

    def _do_revoke(self, d: Directive):
        args = d.args
        self._run_expected_failure(
            d, lambda: self.net.revoke(args["id"]), args["expect_fail"])

    def _do_establish(self, d: Directive):
        args = d.args
        report = self.net.establish(args["a"], args["b"])
        self.last_establish = report
        expect_fail = args["expect_fail"]
        if expect_fail is not None:
            if not report.ok and _fail_matches(expect_fail, report.fail, report.fail_code):
                self._record(d, True, f"failed as expected: {report.fail}")
            else:
                self._record(d, False,
                             f"expected failure {expect_fail}, got "
                             f"{'success' if report.ok else report.fail}")
            return
        if not report.ok:
            self._record(d, False, f"establishment failed: {report.fail}")
            return
        if args["expect_msgs"] is not None and report.exchange_msgs != args["expect_msgs"]:
            self._record(d, False,
                         f"expected {args['expect_msgs']} messages, "
                         f"saw {report.exchange_msgs}")
            return
        self._record(d, True,
                     f"{report.exchange_msgs} exchange msgs, "
                     f"{report.handshake_msgs} handshake msgs")

    def _do_traffic(self, d: Directive):
        args = d.args
        ok = self.net.traffic(args["a"], args["b"], args["payload"])
        self._record(d, ok, "" if ok else "payload not delivered over session")

    def _do_attack(self, d: Directive):
        args = d.args
        sim = self.net.sim
        match = simnet.Match(args["frm"], args["to"], args["msg_type"], args["nth"])
        mode = args["mode"]
        if mode == "drop":
            sim.attach_adversary([simnet.Drop(match)])
            self._record(d, True)
        elif mode == "tamper":
            sim.attach_adversary([simnet.Tamper(match, args["bit"])])
            self._record(d, True)
        elif mode == "eavesdrop":
            sim.attach_adversary([simnet.Eavesdrop(match)])
            self._record(d, True)
        elif mode == "replay":
            index = self._find_transcript_index(args)
            if index is None:
                self._record(d, False, "no matching frame to replay")
                return
            sim.attach_adversary([simnet.Replay(index, sim.now + args["delay"])])
            sim.run_until_idle()
            self._record(d, True, f"replayed transcript entry {index}")
        elif mode == "inject":
            if args["hex"] is not None:
                data = bytes.fromhex(args["hex"])
            else:
                data = self.net.forge_relay(args["frm"], args["to"])
            sim.attach_adversary([simnet.Inject(args["frm"], args["to"], data,
                                                sim.now + args["delay"])])
            sim.run_until_idle()
            self._record(d, True)

    def _find_transcript_index(self, args) -> int | None:
        match = simnet.Match(args["frm"], args["to"], args["msg_type"], args["nth"])
        for index, rec in enumerate(self.net.sim.transcript):
            if rec.disposition == simnet.DELIVERED and match.hits(rec.frm, rec.to, rec.data):
                return index
        return None

    def _do_expect_metric(self, d: Directive):
        args = d.args
        report = self.last_establish
        if report is None:
            self._record(d, False, "no establish to check metrics against")
            return
        entity = args["entity"]
        actual = {
            "aead": report.aead_deltas.get(entity, 0),
            "kdf": report.kdf_deltas.get(entity, 0),
            "open_fail": report.open_fail_deltas.get(entity, 0),
        }
        bad = [f"{k}={actual[k]} (wanted {v})"
               for k, v in args["checks"].items() if actual[k] != v]
        self._record(d, not bad, "; ".join(bad))

    def _do_expect_error(self, d: Directive):
        code = d.args["code"]
        ok = code in self.net.errors_seen()
        self._record(d, ok, "" if ok else f"no ERROR 0x{code:04x} on the wire")

    def _do_expect_session(self, d: Directive):
        args = d.args
        present = self.net.has_confirmed_session(args["holder"], args["peer"])
        ok = present == args["present"]
        self._record(d, ok, "" if ok else
                     f"session {'missing' if args['present'] else 'unexpectedly present'}")

    def _do_expect_captures(self, d: Directive):
        n = len(self.net.sim.captured)
        ok = n == d.args["n"]
        self._record(d, ok, "" if ok else f"captured {n} frames")


def run_scenario(scenario: ScenarioFile, seed: int = 1) -> tuple[RunReport, Network]:
    runner = _Runner(scenario, seed)
    runner.run()
    net = runner.net
    metrics = {
        name: {
            "role": ROLE_SHORT[net.runtimes[name].role],
            "aead": c.aead_total,
            "aead_seal": c.aead_seal_count,
            "aead_open": c.aead_open_count,
            "aead_open_fail": c.aead_open_fail_count,
            "kdf": c.kdf_count,
            "msgs_sent": c.msgs_sent,
            "msgs_received": c.msgs_received,
            "bytes_sent": c.bytes_sent,
        }
        for name, c in sorted(net.sim.counters.items())
        if name in net.runtimes
    }
    summaries = []
    endpoint_loads = set()
    for r in net.exchange_reports:
        summaries.append({
            "initiator": r.initiator,
            "responder": r.responder,
            "ok": r.ok,
            "fail": r.fail,
            "exchange_msgs": r.exchange_msgs,
            "handshake_msgs": r.handshake_msgs,
            "hops": list(r.hops),
        })
        if r.ok:
            endpoint_loads.add(r.aead_deltas.get(r.initiator, 0))
            endpoint_loads.add(r.aead_deltas.get(r.responder, 0))
    report = RunReport(
        scenario=scenario.name,
        seed=seed,
        records=runner.records,
        metrics=metrics,
        exchange_summaries=summaries,
        end_node_constant_load=len(endpoint_loads) <= 1,
        transcript_text=net.sim.export_transcript(),
    )
    return report, net


def format_metrics_table(report: RunReport) -> str:
    header = f"{'entity':<12}{'role':<6}{'aead':>6}{'kdf':>6}{'sent':>6}{'recv':>6}{'bytes':>8}"
    lines = [header, "-" * len(header)]
    for name, m in report.metrics.items():
        lines.append(
            f"{name:<12}{m['role']:<6}{m['aead']:>6}{m['kdf']:>6}"
            f"{m['msgs_sent']:>6}{m['msgs_received']:>6}{m['bytes_sent']:>8}")
    lines.append(f"end_node_constant_load={str(report.end_node_constant_load).lower()}")
    return "\n".join(lines)


def report_to_json(report: RunReport) -> str:
    return json.dumps({
        "scenario": report.scenario,
        "seed": report.seed,
        "passed": report.passed,
        "checks": [
            {"line": r.line_no, "directive": r.text, "ok": r.ok, "detail": r.detail}
            for r in report.records
        ],
        "metrics": report.metrics,
        "exchanges": report.exchange_summaries,
        "end_node_constant_load": report.end_node_constant_load,
    }, indent=2)
