"""Command-line harness.

    hierakey run <file> [--seed N] [--out DIR]
    hierakey demo [--seed N] [--out DIR]
    hierakey keystore show <file>

Exit codes: 0 all expectations pass, 1 expectation failure, 2 scenario
parse error, 3 I/O error. HIERAKEY_SEED overrides --seed.
"""

from __future__ import annotations

import argparse
import os
import sys
from importlib import resources
from pathlib import Path

from . import hierarchy, scenario
from .errors import FormatError, ScenarioError
from .hierarchy import ROLE_SHORT, Status

DEFAULT_SEED = 1


def _seed_from(args) -> int:
    env = os.environ.get("HIERAKEY_SEED")
    if env is not None:
        return int(env, 0)
    return args.seed


def bundled_scenarios() -> list[tuple[str, str]]:
    base = resources.files("hierakey").joinpath("scenarios")
    out = []
    for entry in sorted(base.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".scn"):
            out.append((entry.name[:-len(".scn")], entry.read_text(encoding="utf-8")))
    return out


def _write_outputs(out_dir: Path, name: str, report, net) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{name}.transcript").write_text(report.transcript_text, encoding="utf-8")
    (out_dir / f"{name}.report.json").write_text(
        scenario.report_to_json(report) + "\n", encoding="utf-8")
    hierarchy.keystore_save(net.topo, str(out_dir / f"{name}.keystore"))


def _run_one(name: str, text: str, seed: int, out_dir: Path) -> bool:
    parsed = scenario.parse_scenario(text, name=name)
    report, net = scenario.run_scenario(parsed, seed=seed)
    _write_outputs(out_dir, name, report, net)
    status = "PASS" if report.passed else "FAIL"
    print(f"[{status}] {name} (seed={seed})")
    for record in report.records:
        mark = "ok " if record.ok else "FAIL"
        detail = f"  -- {record.detail}" if record.detail else ""
        print(f"  {mark} line {record.line_no}: {record.text}{detail}")
    print(scenario.format_metrics_table(report))
    print(f"  transcript: {out_dir / (name + '.transcript')}")
    return report.passed


def cmd_run(args) -> int:
    seed = _seed_from(args)
    out_dir = Path(args.out)
    try:
        text = Path(args.file).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"cannot read scenario: {exc}", file=sys.stderr)
        return 3
    try:
        passed = _run_one(Path(args.file).stem, text, seed, out_dir)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    return 0 if passed else 1


def cmd_demo(args) -> int:
    seed = _seed_from(args)
    out_dir = Path(args.out)
    all_passed = True
    try:
        for name, text in bundled_scenarios():
            all_passed &= _run_one(name, text, seed, out_dir)
            print()
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    print("demo: all scenarios passed" if all_passed else "demo: FAILURES above")
    return 0 if all_passed else 1


def cmd_keystore_show(args) -> int:
    try:
        topo = hierarchy.keystore_load(args.file)
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except FormatError as exc:
        print(f"keystore rejected: {exc}", file=sys.stderr)
        return 1
    print(f"suite: {topo.params.suite_id}")
    print(f"deployment label: {topo.params.deployment_label.decode('utf-8', 'replace')}")
    print(f"{'entity':<14}{'role':<6}{'registrar':<14}{'status':<9}{'key':<5}associations")
    for entry in sorted(topo.entries.values(), key=lambda e: e.id):
        status = "active" if entry.status is Status.ACTIVE else "revoked"
        has_key = "yes" if entry.master_key is not None else "no"
        assoc = ",".join(sorted(entry.associated_chs)) or "-"
        print(f"{entry.id:<14}{ROLE_SHORT[entry.role]:<6}{entry.registrar:<14}"
              f"{status:<9}{has_key:<5}{assoc}")
    print(f"peer keys: {len(topo.peer_keys)}")
    for (a, b) in sorted(topo.peer_keys):
        print(f"  {a} <-> {b}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hierakey",
        description="Hierarchical mediated key establishment: scenario harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario file")
    p_run.add_argument("file")
    p_run.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p_run.add_argument("--out", default="hierakey-out")
    p_run.set_defaults(fn=cmd_run)

    p_demo = sub.add_parser("demo", help="run every bundled scenario")
    p_demo.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p_demo.add_argument("--out", default="hierakey-out")
    p_demo.set_defaults(fn=cmd_demo)

    p_ks = sub.add_parser("keystore", help="keystore tools")
    ks_sub = p_ks.add_subparsers(dest="ks_command", required=True)
    p_show = ks_sub.add_parser("show", help="print a keystore file")
    p_show.add_argument("file")
    p_show.set_defaults(fn=cmd_keystore_show)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
