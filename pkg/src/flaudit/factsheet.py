"""FactSheet: the rendered audit document for one federation run.

Overview, checked-properties table, per-round performance evolution, and a
lineage summary, derived deterministically from the ledger and a
verification report. Renders to canonical JSON, Markdown, or a static HTML
page with evidence links into a ledger appendix.
"""

from __future__ import annotations

import html as _html
from dataclasses import dataclass

from . import ledger as lg
from . import protocol as proto
from . import verifier as vf

GLYPHS = {vf.PASS: "✓", vf.FAIL: "✗", vf.INAPPLICABLE: "–"}  # ✓ ✗ –

# Performance table columns: display header paired with the metrics-doc key.
PERFORMANCE_COLUMNS: tuple[tuple[str, str], ...] = (
    ("round", "round"),
    ("loss", "loss"),
    ("acc", "acc"),
    ("f1 micro", "f1_micro"),
    ("precision micro", "precision_micro"),
    ("recall micro", "recall_micro"),
    ("f1 macro", "f1_macro"),
    ("precision macro", "precision_macro"),
    ("recall macro", "recall_macro"),
    ("f1 weighted", "f1_weighted"),
    ("precision weighted", "precision_weighted"),
    ("recall weighted", "recall_weighted"),
)


class ReportMismatchError(ValueError):
    """The verification report was produced from a different ledger."""


@dataclass(frozen=True)
class FactSheet:
    overview: dict
    checked_properties: list
    performance: list
    lineage: dict

    def to_doc(self) -> dict:
        return {
            "checked_properties": self.checked_properties,
            "lineage": self.lineage,
            "overview": self.overview,
            "performance": self.performance,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "FactSheet":
        return cls(
            overview=doc["overview"],
            checked_properties=doc["checked_properties"],
            performance=doc["performance"],
            lineage=doc["lineage"],
        )


def _derive_stop_reason(book: lg.Ledger, spec_doc: dict | None) -> str:
    if book.claims_by(kind=proto.NO_QUORUM_CLAIM):
        return "no_quorum"
    if spec_doc is not None:
        threshold = spec_doc["global_hyperparams"].get("termination_accuracy")
        if threshold is not None:
            for env in book.claims_by(kind=proto.METRICS_CLAIM):
                if env.payload["metrics"].get("acc", 0.0) >= threshold:
                    return "early_stop"
    return "completed_K"


def _final_model_digest(book: lg.Ledger) -> str | None:
    post = book.claims_by(kind=proto.POSTPROCESS_CLAIM)
    if post:
        return post[-1].payload["output_digest"]
    fused = book.claims_by(kind=proto.FUSION_CLAIM)
    if fused:
        return fused[-1].payload["output_model_digest"]
    return None


def build_factsheet(
    book: lg.Ledger, store: lg.ArtifactStore, report: vf.VerificationReport
) -> FactSheet:
    """Assemble the audit document from a ledger and its verification report.

    The report must have been produced from this exact ledger; a head-digest
    mismatch is a consistency error, not a rendering choice.
    """
    if report.ledger_head != book.head_hash():
        raise ReportMismatchError(
            "verification report was produced from a different ledger "
            f"(head {report.ledger_head[:16]}… != {book.head_hash()[:16]}…)"
        )

    found = proto.owner_spec(book)
    spec_doc = found[1] if found else None

    metrics_rows = []
    for env in book.claims_by(kind=proto.METRICS_CLAIM):
        row = {"round": env.payload["round"]}
        row.update(env.payload["metrics"])
        metrics_rows.append(row)
    metrics_rows.sort(key=lambda r: r["round"])

    results_by_id = {r.predicate_id: r for r in report.results}
    withheld = not report.results
    checked = []
    for predicate in vf.CATALOGUE:
        result = results_by_id.get(predicate.id)
        if result is None:
            status, evidence = GLYPHS[vf.INAPPLICABLE], []
            detail = ("withheld: ledger integrity verification failed"
                      if withheld else "not evaluated")
        else:
            status, evidence, detail = GLYPHS[result.status], list(result.evidence), result.detail
        checked.append({
            "description": predicate.description,
            "detail": detail,
            "evidence": evidence,
            "predicate_id": predicate.id,
            "status": status,
        })

    overview: dict = {
        "actors": sorted(book.registry),
        "final_model_digest": _final_model_digest(book),
        "rounds_executed": len(metrics_rows),
        "stop_reason": _derive_stop_reason(book, spec_doc),
        "verdict": "pass" if report.overall_ok else "fail",
    }
    if spec_doc is not None:
        overview["spec"] = {
            "epochs": spec_doc["local_hyperparams"]["epochs"],
            "fusion_algorithm": spec_doc["fusion_routine"]["algorithm"],
            "learning_rate": spec_doc["local_hyperparams"]["learning_rate"],
            "local_routine": spec_doc["local_routine"],
            "num_parties": spec_doc["num_parties"],
            "quorum": spec_doc["global_hyperparams"]["quorum"],
            "rounds": spec_doc["rounds"],
            "spec_digest": lg.doc_digest(spec_doc),
            "termination_accuracy": spec_doc["global_hyperparams"].get("termination_accuracy"),
        }

    counts: dict[str, dict[str, int]] = {}
    claims_index = []
    for env in book:
        counts.setdefault(env.actor.name, {})
        counts[env.actor.name][env.kind] = counts[env.actor.name].get(env.kind, 0) + 1
        entry = {"actor": env.actor.name, "kind": env.kind, "seq": env.seq}
        if "round" in env.payload:
            entry["round"] = env.payload["round"]
        claims_index.append(entry)
    lineage = {
        "claim_counts": {a: dict(sorted(c.items())) for a, c in sorted(counts.items())},
        "claims": claims_index,
        "ledger_head": book.head_hash(),
        "total_claims": len(book),
    }

    return FactSheet(
        overview=overview,
        checked_properties=checked,
        performance=metrics_rows,
        lineage=lineage,
    )


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.5f}"
    if value is None:
        return "-"
    return str(value)


def _render_markdown(fs: FactSheet) -> str:
    lines = ["# FL FactSheet", "", "## Overview", "", "| Field | Value |", "| --- | --- |"]
    ov = fs.overview
    lines.append(f"| verdict | {ov['verdict']} |")
    lines.append(f"| stop reason | {ov['stop_reason']} |")
    lines.append(f"| rounds executed | {ov['rounds_executed']} |")
    lines.append(f"| actors | {', '.join(ov['actors'])} |")
    lines.append(f"| final model | {_fmt(ov['final_model_digest'])} |")
    for key, value in sorted(ov.get("spec", {}).items()):
        lines.append(f"| {key.replace('_', ' ')} | {_fmt(value)} |")

    lines += ["", "## Checked Properties", "",
              "| Status | Property | Description | Evidence |",
              "| --- | --- | --- | --- |"]
    for row in fs.checked_properties:
        evidence = ", ".join(str(s) for s in row["evidence"]) or "-"
        lines.append(
            f"| {row['status']} | {row['predicate_id']} | {row['description']} | {evidence} |"
        )

    lines += ["", "## Performance Evolution", ""]
    header = " | ".join(name for name, _ in PERFORMANCE_COLUMNS)
    lines.append(f"| {header} |")
    lines.append("|" + " --- |" * len(PERFORMANCE_COLUMNS))
    for row in fs.performance:
        cells = " | ".join(_fmt(row.get(key)) for _, key in PERFORMANCE_COLUMNS)
        lines.append(f"| {cells} |")

    lines += ["", "## Lineage", "",
              f"- total claims: {fs.lineage['total_claims']}",
              f"- ledger head: `{fs.lineage['ledger_head']}`", "",
              "| Actor | Claim kind | Count |", "| --- | --- | --- |"]
    for actor, kinds in fs.lineage["claim_counts"].items():
        for kind, count in kinds.items():
            lines.append(f"| {actor} | {kind} | {count} |")
    lines.append("")
    return "\n".join(lines)


def _render_html(fs: FactSheet) -> str:
    esc = _html.escape
    parts = [
        "<!DOCTYPE html>",
        "<html><head><meta charset=\"utf-8\"><title>FL FactSheet</title>",
        "<style>body{font-family:sans-serif;margin:2em}table{border-collapse:collapse}"
        "td,th{border:1px solid #999;padding:4px 8px;text-align:left}"
        "code{font-size:0.85em}</style></head><body>",
        "<h1>FL FactSheet</h1>",
        "<h2>Overview</h2><table>",
    ]
    ov = fs.overview
    rows = [
        ("verdict", ov["verdict"]),
        ("stop reason", ov["stop_reason"]),
        ("rounds executed", ov["rounds_executed"]),
        ("actors", ", ".join(ov["actors"])),
        ("final model", _fmt(ov["final_model_digest"])),
    ] + [(k.replace("_", " "), _fmt(v)) for k, v in sorted(ov.get("spec", {}).items())]
    for key, value in rows:
        parts.append(f"<tr><th>{esc(str(key))}</th><td>{esc(str(value))}</td></tr>")
    parts.append("</table>")

    parts.append("<h2>Checked Properties</h2><table>")
    parts.append("<tr><th>Status</th><th>Property</th><th>Description</th>"
                 "<th>Evidence</th></tr>")
    for row in fs.checked_properties:
        links = ", ".join(
            f"<a href=\"#claim-{seq}\">{seq}</a>" for seq in row["evidence"]
        ) or "-"
        parts.append(
            f"<tr><td>{esc(row['status'])}</td><td>{esc(row['predicate_id'])}</td>"
            f"<td>{esc(row['description'])}</td><td>{links}</td></tr>"
        )
    parts.append("</table>")

    parts.append("<h2>Performance Evolution</h2><table><tr>")
    parts.extend(f"<th>{esc(name)}</th>" for name, _ in PERFORMANCE_COLUMNS)
    parts.append("</tr>")
    for row in fs.performance:
        parts.append("<tr>")
        parts.extend(f"<td>{esc(_fmt(row.get(key)))}</td>" for _, key in PERFORMANCE_COLUMNS)
        parts.append("</tr>")
    parts.append("</table>")

    parts.append("<h2>Lineage</h2>")
    parts.append(f"<p>total claims: {fs.lineage['total_claims']}<br>"
                 f"ledger head: <code>{esc(fs.lineage['ledger_head'])}</code></p>")
    parts.append("<table><tr><th>Actor</th><th>Claim kind</th><th>Count</th></tr>")
    for actor, kinds in fs.lineage["claim_counts"].items():
        for kind, count in kinds.items():
            parts.append(f"<tr><td>{esc(actor)}</td><td>{esc(kind)}</td>"
                         f"<td>{count}</td></tr>")
    parts.append("</table>")

    parts.append("<h2>Ledger Appendix</h2><table>")
    parts.append("<tr><th>Seq</th><th>Actor</th><th>Claim kind</th><th>Round</th></tr>")
    for entry in fs.lineage["claims"]:
        parts.append(
            f"<tr id=\"claim-{entry['seq']}\"><td>{entry['seq']}</td>"
            f"<td>{esc(entry['actor'])}</td><td>{esc(entry['kind'])}</td>"
            f"<td>{esc(str(entry.get('round', '-')))}</td></tr>"
        )
    parts.append("</table></body></html>")
    return "\n".join(parts) + "\n"


def render(fs: FactSheet, format: str) -> bytes:
    """Render a FactSheet to bytes: canonical JSON, Markdown, or HTML."""
    if format == "json":
        return lg.canonical_encode(fs.to_doc())
    if format in ("markdown", "md"):
        return _render_markdown(fs).encode("utf-8")
    if format == "html":
        return _render_html(fs).encode("utf-8")
    raise ValueError(f"unknown factsheet format {format!r}")
