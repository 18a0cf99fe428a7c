"""Command-line surface: run a federation, verify it, render FactSheets.

Exit codes: 0 = all checks pass, 1 = predicate or integrity failure,
2 = usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import factsheet as fsmod
from . import ledger as lg
from . import protocol as proto
from . import verifier as vf
from .flcore import ConfigError

FACTSHEET_FORMATS = {"json": "factsheet.json", "md": "factsheet.md", "html": "factsheet.html"}


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(f"cannot read config: {exc}")
    try:
        spec, party_data, holdout, faults = proto.build_run_inputs(config)
        run = proto.run_federation(spec, party_data, holdout, faults)
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        return _fail(f"invalid configuration: {exc}")
    proto.save_run(run, args.out)
    print(f"run complete: {run.stop_reason} after {run.rounds_executed} round(s), "
          f"{len(run.ledger)} claims -> {args.out}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    try:
        book, store, summary = proto.load_run(args.run)
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    report = vf.evaluate_all(book, store, expected_head=summary.get("ledger_head"))
    Path(args.report).write_bytes(lg.canonical_encode(report.to_doc()) + b"\n")

    if not report.integrity.ok:
        bad = [c.seq for c in report.integrity.entries if not c.ok]
        if report.integrity.head_ok is False:
            print("integrity: FAIL (ledger head does not match the recorded head)")
        if bad:
            print(f"integrity: FAIL at entr{'y' if len(bad) == 1 else 'ies'} "
                  f"{', '.join(str(s) for s in bad)}")
        print("predicate evaluation withheld: ledger is tampered")
        return 1
    print("integrity: ok")
    for result in report.results:
        print(f"{result.predicate_id}: {result.status} - {result.detail}")
    print(f"overall: {'ok' if report.overall_ok else 'FAIL'}")
    return 0 if report.overall_ok else 1


def cmd_factsheet(args: argparse.Namespace) -> int:
    try:
        book, store, _summary = proto.load_run(args.run)
        report_doc = json.loads(Path(args.report).read_text(encoding="utf-8"))
        report = vf.VerificationReport.from_doc(report_doc)
    except (OSError, ValueError, KeyError) as exc:
        return _fail(str(exc))
    try:
        sheet = fsmod.build_factsheet(book, store, report)
    except fsmod.ReportMismatchError as exc:
        return _fail(str(exc))
    formats = [args.format] if args.format else list(FACTSHEET_FORMATS)
    for fmt in formats:
        out_path = Path(args.run) / FACTSHEET_FORMATS[fmt]
        out_path.write_bytes(fsmod.render(sheet, fmt))
        print(f"wrote {out_path}")
    return 0


def cmd_tamper(args: argparse.Namespace) -> int:
    ledger_path = Path(args.run) / proto.LEDGER_FILE
    if not ledger_path.exists():
        return _fail(f"no ledger at {ledger_path}")
    try:
        proto.tamper_ledger_file(ledger_path, args.entry, args.mode)
    except ValueError as exc:
        return _fail(str(exc))
    print(f"tampered entry {args.entry} of {ledger_path} ({args.mode})")
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    try:
        book, store, _summary = proto.load_run(args.run)
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    report = proto.replay_fusion(book, store)
    for entry in report.rounds:
        suffix = f" ({entry.detail})" if entry.detail else ""
        print(f"round {entry.round}: {entry.status}{suffix}")
    print(f"replay: {'ok' if report.ok else 'FAIL'}"
          + (f" - {report.detail}" if report.detail else ""))
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flaudit",
        description="Accountable federated learning: run, audit, and document federations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a federation from a config file")
    p_run.add_argument("--config", required=True, help="path to the run configuration (JSON)")
    p_run.add_argument("--out", required=True, help="output run directory")
    p_run.set_defaults(func=cmd_run)

    p_verify = sub.add_parser("verify", help="verify ledger integrity and audit predicates")
    p_verify.add_argument("--run", required=True, help="run directory")
    p_verify.add_argument("--report", required=True, help="where to write the report (JSON)")
    p_verify.set_defaults(func=cmd_verify)

    p_sheet = sub.add_parser("factsheet", help="render the FactSheet for a verified run")
    p_sheet.add_argument("--run", required=True, help="run directory")
    p_sheet.add_argument("--report", required=True, help="verification report path")
    p_sheet.add_argument("--format", choices=sorted(FACTSHEET_FORMATS),
                         help="render only this format (default: all three)")
    p_sheet.set_defaults(func=cmd_factsheet)

    p_tamper = sub.add_parser("tamper", help="corrupt a ledger entry (attack simulator)")
    p_tamper.add_argument("--run", required=True, help="run directory")
    p_tamper.add_argument("--entry", required=True, type=int, help="entry sequence number")
    p_tamper.add_argument("--mode", required=True,
                          choices=["flip-byte", "drop-entry", "reorder"])
    p_tamper.set_defaults(func=cmd_tamper)

    p_replay = sub.add_parser("replay", help="recompute all recorded fusions and compare")
    p_replay.add_argument("--run", required=True, help="run directory")
    p_replay.set_defaults(func=cmd_replay)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except (lg.LedgerError, ConfigError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
