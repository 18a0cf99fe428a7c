"""Claim verifier: extract facts from the ledger and evaluate audit predicates.

Claims become a relational fact base queried with simple conjunctive
patterns; the fixed predicate catalogue below covers specification
consistency, provenance, preprocessing, query/reply matching, fair
inclusion, hyperparameter compliance, fusion replay, and termination.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from . import ledger as lg
from . import protocol as proto

PASS = "pass"
FAIL = "fail"
INAPPLICABLE = "inapplicable"


class _Any:
    """Wildcard for query patterns."""

    def __repr__(self) -> str:  # pragma: no cover - repr cosmetics
        return "ANY"


ANY = _Any()


class TamperedLedgerError(RuntimeError):
    """Refusal: facts extracted from a tampered ledger would be meaningless."""


class UnknownPredicateError(KeyError):
    pass


# ---------------------------------------------------------------------------
# Facts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Fact:
    attestor: str
    relation: str
    args: tuple
    source_seq: int


class FactBase:
    """Multiset of facts indexed by relation name."""

    def __init__(self) -> None:
        self._by_relation: dict[str, list[Fact]] = {}

    def add(self, fact: Fact) -> None:
        self._by_relation.setdefault(fact.relation, []).append(fact)

    def relations(self) -> list[str]:
        return sorted(self._by_relation)

    def __len__(self) -> int:
        return sum(len(v) for v in self._by_relation.values())

    def query(
        self, relation: str, pattern: list | None = None, attestor: str | None = None
    ) -> list[Fact]:
        """Facts whose relation, attestor, and constant positions all match.

        Pattern entries equal to ANY match anything; a missing pattern
        matches every fact of the relation.
        """
        out = []
        for fact in self._by_relation.get(relation, []):
            if attestor is not None and fact.attestor != attestor:
                continue
            if pattern is not None:
                if len(pattern) != len(fact.args):
                    continue
                if any(
                    not isinstance(want, _Any) and want != got
                    for want, got in zip(pattern, fact.args)
                ):
                    continue
            out.append(fact)
        return out


_FUSION_HANDLERS = {"fedavg": "FedAvgFusionHandler", "krum": "KrumFusionHandler"}


def fusion_handler_name(algorithm: str) -> str:
    return _FUSION_HANDLERS.get(algorithm, algorithm)


def extract_facts(book: lg.Ledger, assume_verified: bool = False) -> FactBase:
    """Mechanically translate every claim into relational facts.

    Refuses tampered ledgers outright; partial extraction from corrupt logs
    is worse than none.
    """
    if not assume_verified and not book.verify_integrity().ok:
        raise TamperedLedgerError("ledger failed integrity verification")

    fb = FactBase()

    def add(attestor: str, seq: int, relation: str, *args) -> None:
        fb.add(Fact(attestor=attestor, relation=relation, args=tuple(args), source_seq=seq))

    for env in book:
        who, seq, pl = env.actor.name, env.seq, env.payload
        if env.kind == proto.SPEC_CLAIM:
            spec = pl["spec"]
            add(who, seq, "spec_digest", pl["spec_digest"])
            add(who, seq, "fusion_algorithm",
                fusion_handler_name(spec["fusion_routine"]["algorithm"]))
            add(who, seq, "model_name", spec["local_routine"])
            add(who, seq, "max_timeout", spec["global_hyperparams"].get("max_timeout_s"))
            add(who, seq, "parties", spec["num_parties"])
            add(who, seq, "rounds", spec["rounds"])
            add(who, seq, "termination_accuracy",
                spec["global_hyperparams"].get("termination_accuracy"))
            add(who, seq, "learning_rate", spec["local_hyperparams"]["learning_rate"])
            add(who, seq, "epochs", spec["local_hyperparams"]["epochs"])
        elif env.kind == proto.PROVENANCE_CLAIM:
            add(who, seq, "training_data_size", pl["provenance"]["size"])
            add(who, seq, "data_digest", pl["data_digest"])
        elif env.kind == proto.PREPROCESS_CLAIM:
            ids = [step.get("id", "") for step in pl["routines"]]
            add(who, seq, "data_handler", "+".join(ids) if ids else "identity")
            add(who, seq, "preprocess_routines", pl["routines"])
            add(who, seq, "preprocess_output", pl["output_digest"])
            if who == proto.AGGREGATOR:
                add(who, seq, "test_data_size", pl.get("size"))
        elif env.kind == proto.QUERY_SENT_CLAIM:
            add(who, seq, "sent_query", pl["round"], pl["party"], pl["query_digest"])
        elif env.kind == proto.QUERY_RECEIVED_CLAIM:
            add(who, seq, "received_query", pl["round"], pl["party"], pl["query_digest"])
        elif env.kind == proto.TRAINING_CLAIM:
            add(who, seq, "sent_update", pl["round"], pl["party"], pl["reply_digest"])
            add(who, seq, "used_hyperparams", pl["round"], pl["party"], pl["hyperparams"])
            add(who, seq, "used_training_data", pl["round"], pl["party"], pl["data_digest"])
        elif env.kind == proto.FUSION_CLAIM:
            for party, d in zip(pl["responders"], pl["reply_digests"]):
                add(who, seq, "used_update", pl["round"], party, d)
            add(who, seq, "sent_global_model", pl["round"], pl["output_model_digest"])
            if "selected_index" in pl:
                add(who, seq, "selected_model_update", pl["round"], pl["selected_index"])
        elif env.kind == proto.NO_QUORUM_CLAIM:
            add(who, seq, "no_quorum", pl["round"])
        elif env.kind == proto.METRICS_CLAIM:
            add(who, seq, "evaluation_results", pl["round"], pl["metrics"])
        elif env.kind == proto.POSTPROCESS_CLAIM:
            add(who, seq, "postprocess", pl["routine_id"], pl.get("params", {}))
    return fb


# ---------------------------------------------------------------------------
# Predicate catalogue
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Predicate:
    id: str
    description: str
    scope: int  # lifecycle stage 1-4


CATALOGUE: tuple[Predicate, ...] = (
    Predicate("P-SPEC",
              "the owner, the aggregator, and every party committed to the same "
              "project specification", 1),
    Predicate("P-PROV",
              "every party recorded its data provenance before its first training step", 2),
    Predicate("P-PREPROC",
              "every party and the aggregator applied exactly the prescribed "
              "pre-processing routines", 2),
    Predicate("P-QMATCH",
              "every query the aggregator claims to have sent matches the query "
              "the party claims to have received", 3),
    Predicate("P-INCL-SENT",
              "each model update that the aggregator claims to have received is "
              "claimed to have been sent by some party", 3),
    Predicate("P-INCL-USED",
              "every model update sent by a party in a fused round was included "
              "in that round's fusion", 3),
    Predicate("P-FAIR",
              "all parties were included in the same number of fusion rounds", 3),
    Predicate("P-HYP",
              "every party trained with the hyperparameters prescribed by the "
              "specification", 3),
    Predicate("P-DATA",
              "every training step used the dataset produced by the party's "
              "claimed pre-processing", 3),
    Predicate("P-FUSE",
              "re-running the fusion algorithm on the claimed inputs reproduces "
              "every claimed global model", 3),
    Predicate("P-TERM",
              "the run terminated by completing all rounds, by early stopping, "
              "or by a recorded quorum failure", 3),
    Predicate("P-POST",
              "the recorded post-processing routine matches the one prescribed "
              "by the specification", 4),
)

PREDICATE_IDS = tuple(p.id for p in CATALOGUE)
_BY_ID = {p.id: p for p in CATALOGUE}


@dataclass(frozen=True)
class VerificationResult:
    predicate_id: str
    status: str  # pass | fail | inapplicable
    evidence: tuple[int, ...]
    detail: str

    def to_doc(self) -> dict:
        return {
            "detail": self.detail,
            "evidence": list(self.evidence),
            "predicate_id": self.predicate_id,
            "status": self.status,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "VerificationResult":
        return cls(
            predicate_id=doc["predicate_id"],
            status=doc["status"],
            evidence=tuple(doc["evidence"]),
            detail=doc["detail"],
        )


@dataclass(frozen=True)
class VerificationReport:
    results: tuple[VerificationResult, ...]
    integrity: lg.IntegrityReport
    overall_ok: bool
    ledger_head: str

    def result(self, predicate_id: str) -> VerificationResult | None:
        for r in self.results:
            if r.predicate_id == predicate_id:
                return r
        return None

    def failing_ids(self) -> list[str]:
        return [r.predicate_id for r in self.results if r.status == FAIL]

    def to_doc(self) -> dict:
        return {
            "integrity": self.integrity.to_doc(),
            "ledger_head": self.ledger_head,
            "overall_ok": self.overall_ok,
            "results": [r.to_doc() for r in self.results],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "VerificationReport":
        return cls(
            results=tuple(VerificationResult.from_doc(r) for r in doc["results"]),
            integrity=lg.IntegrityReport.from_doc(doc["integrity"]),
            overall_ok=doc["overall_ok"],
            ledger_head=doc["ledger_head"],
        )


# -- shared helpers ----------------------------------------------------------

def _canon(value) -> bytes:
    return lg.canonical_encode(value)


def _party_names(n: int) -> list[str]:
    return [proto.party_name(i) for i in range(n)]


def _result(pid: str, status: str, evidence: list[int], detail: str) -> VerificationResult:
    if status == FAIL and not evidence:
        evidence = [0]
    return VerificationResult(pid, status, tuple(sorted(set(evidence))), detail)


def _eval_spec(fb: FactBase, ctx: dict) -> VerificationResult:
    facts = fb.query("spec_digest")
    if not facts:
        return _result("P-SPEC", FAIL, [], "no specification claims recorded")
    owner_facts = [f for f in facts if f.attestor == proto.OWNER]
    if not owner_facts:
        return _result("P-SPEC", FAIL, [f.source_seq for f in facts],
                       "the owner never claimed a specification")
    reference = owner_facts[0].args[0]
    mismatched = [f for f in facts if f.args[0] != reference]
    if mismatched:
        return _result(
            "P-SPEC", FAIL,
            [owner_facts[0].source_seq] + [f.source_seq for f in mismatched],
            f"{len(mismatched)} actor(s) claimed a different specification digest")
    return _result("P-SPEC", PASS, [f.source_seq for f in facts],
                   f"{len(facts)} actors claimed spec digest {reference[:16]}…")


def _eval_prov(fb: FactBase, ctx: dict) -> VerificationResult:
    evidence, bad = [], []
    for pname in _party_names(ctx["n"]):
        trained = fb.query("sent_update", attestor=pname)
        if not trained:
            continue
        first_training = min(f.source_seq for f in trained)
        prov = [f for f in fb.query("data_digest", attestor=pname)
                if f.source_seq < first_training]
        if prov:
            evidence.extend(f.source_seq for f in prov)
        else:
            bad.append(pname)
            evidence.append(first_training)
    if bad:
        return _result("P-PROV", FAIL, evidence,
                       f"no provenance before training for: {', '.join(bad)}")
    return _result("P-PROV", PASS, evidence, "every trained party recorded provenance first")


def _eval_preproc(fb: FactBase, ctx: dict) -> VerificationResult:
    expected = _canon(ctx["spec"]["preprocess_routines"])
    evidence, offenders = [], []
    for actor in [proto.AGGREGATOR] + _party_names(ctx["n"]):
        facts = fb.query("preprocess_routines", attestor=actor)
        if not facts:
            offenders.append(actor)
            evidence.append(ctx["owner_seq"])
            continue
        for f in facts:
            evidence.append(f.source_seq)
            if _canon(f.args[0]) != expected:
                offenders.append(actor)
    if offenders:
        return _result("P-PREPROC", FAIL, evidence,
                       f"pre-processing deviates from the specification for: "
                       f"{', '.join(sorted(set(offenders)))}")
    return _result("P-PREPROC", PASS, evidence,
                   "all parties and the aggregator applied the prescribed routines")


def _eval_qmatch(fb: FactBase, ctx: dict) -> VerificationResult:
    sent: dict[tuple, Counter] = {}
    recv: dict[tuple, Counter] = {}
    seqs: dict[tuple, list[int]] = {}
    for f in fb.query("sent_query"):
        sent.setdefault((f.args[0], f.args[1]), Counter())[f.args[2]] += 1
        seqs.setdefault((f.args[0], f.args[1]), []).append(f.source_seq)
    for f in fb.query("received_query"):
        recv.setdefault((f.args[0], f.args[1]), Counter())[f.args[2]] += 1
        seqs.setdefault((f.args[0], f.args[1]), []).append(f.source_seq)
    bad_keys = [k for k in set(sent) | set(recv)
                if sent.get(k, Counter()) != recv.get(k, Counter())]
    if bad_keys:
        evidence = [s for k in bad_keys for s in seqs.get(k, [])]
        pairs = ", ".join(f"round {t} party {p}" for t, p in sorted(bad_keys))
        return _result("P-QMATCH", FAIL, evidence, f"query digests disagree for: {pairs}")
    evidence = [s for v in seqs.values() for s in v]
    return _result("P-QMATCH", PASS, evidence,
                   "all sent and received query digests agree")


def _eval_incl_sent(fb: FactBase, ctx: dict) -> VerificationResult:
    sent_by_round: dict[int, set] = {}
    training_seqs: dict[int, list[int]] = {}
    for f in fb.query("sent_update"):
        sent_by_round.setdefault(f.args[0], set()).add(f.args[2])
        training_seqs.setdefault(f.args[0], []).append(f.source_seq)
    bad, evidence = [], []
    for f in fb.query("used_update"):
        t = f.args[0]
        if f.args[2] not in sent_by_round.get(t, set()):
            bad.append((t, f.args[1]))
            evidence.append(f.source_seq)
            evidence.extend(training_seqs.get(t, []))
    if bad:
        pairs = ", ".join(f"round {t} party {p}" for t, p in sorted(set(bad)))
        return _result("P-INCL-SENT", FAIL, evidence,
                       f"fused updates never sent by any party: {pairs}")
    evidence = [f.source_seq for f in fb.query("used_update")]
    return _result("P-INCL-SENT", PASS, evidence,
                   "All model updates received by the aggregator were also sent by a party.")


def _eval_incl_used(fb: FactBase, ctx: dict) -> VerificationResult:
    # Participation check: every party that sent an update in a fused round
    # had an update of theirs enter the fusion. Whether those were the right
    # bytes is P-INCL-SENT's job; splitting the two keeps a forged reply from
    # also reading as an exclusion.
    fused_rounds = {f.args[0]: f.source_seq for f in fb.query("sent_global_model")}
    used_parties: dict[int, set] = {}
    for f in fb.query("used_update"):
        used_parties.setdefault(f.args[0], set()).add(f.args[1])
    bad, evidence = [], []
    for f in fb.query("sent_update"):
        t = f.args[0]
        if t in fused_rounds and f.args[1] not in used_parties.get(t, set()):
            bad.append((t, f.args[1]))
            evidence.extend([f.source_seq, fused_rounds[t]])
    if bad:
        pairs = ", ".join(f"round {t} party {p}" for t, p in sorted(set(bad)))
        return _result("P-INCL-USED", FAIL, evidence, f"sent updates left out of fusion: {pairs}")
    evidence = sorted(fused_rounds.values())
    return _result("P-INCL-USED", PASS, evidence,
                   "every sent update of a fused round entered that round's fusion")


def _eval_fair(fb: FactBase, ctx: dict) -> VerificationResult:
    slack = ctx.get("fairness_slack", 0)
    fused_rounds = {f.args[0]: f.source_seq for f in fb.query("sent_global_model")}
    counts = {i: 0 for i in range(ctx["n"])}
    for f in fb.query("used_update"):
        if f.args[0] in fused_rounds and f.args[1] in counts:
            counts[f.args[1]] += 1
    evidence = sorted(fused_rounds.values())
    if counts and fused_rounds:
        spread = max(counts.values()) - min(counts.values())
        if spread > slack:
            detail = ", ".join(f"party {i}: {c}" for i, c in sorted(counts.items()))
            return _result("P-FAIR", FAIL, evidence,
                           f"unequal inclusion counts (spread {spread}): {detail}")
    return _result("P-FAIR", PASS, evidence,
                   f"all parties included in {min(counts.values()) if counts else 0} "
                   f"fusion round(s) each")


def _eval_hyp(fb: FactBase, ctx: dict) -> VerificationResult:
    expected = _canon(ctx["spec"]["local_hyperparams"])
    bad = [f for f in fb.query("used_hyperparams") if _canon(f.args[2]) != expected]
    if bad:
        pairs = ", ".join(f"round {f.args[0]} party {f.args[1]}" for f in bad)
        return _result("P-HYP", FAIL, [f.source_seq for f in bad],
                       f"training deviated from prescribed hyperparameters: {pairs}")
    evidence = [f.source_seq for f in fb.query("used_hyperparams")]
    return _result("P-HYP", PASS, evidence, "all training claims echo the prescribed "
                                            "hyperparameters")


def _eval_data(fb: FactBase, ctx: dict) -> VerificationResult:
    bad, evidence = [], []
    for pname in _party_names(ctx["n"]):
        used = fb.query("used_training_data", attestor=pname)
        if not used:
            continue
        outputs = fb.query("preprocess_output", attestor=pname)
        if not outputs:
            bad.append(pname)
            evidence.extend(f.source_seq for f in used)
            continue
        expected = outputs[-1].args[0]
        evidence.append(outputs[-1].source_seq)
        for f in used:
            if f.args[2] != expected:
                bad.append(pname)
                evidence.append(f.source_seq)
    if bad:
        return _result("P-DATA", FAIL, evidence,
                       f"training data digest does not match pre-processing output for: "
                       f"{', '.join(sorted(set(bad)))}")
    return _result("P-DATA", PASS, evidence,
                   "every training claim references the claimed pre-processing output")


def _eval_fuse(fb: FactBase, ctx: dict) -> VerificationResult:
    report = proto.replay_fusion(ctx["ledger"], ctx["artifacts"])
    fusion_seqs = sorted(f.source_seq for f in fb.query("sent_global_model"))
    if not report.rounds:
        return _result("P-FUSE", PASS, fusion_seqs, "no fusion rounds recorded")
    if report.ok:
        return _result("P-FUSE", PASS, fusion_seqs,
                       f"all {len(report.rounds)} fusion round(s) replay bit-exactly")
    bad = [r for r in report.rounds if r.status != "match"]
    detail = "; ".join(f"round {r.round}: {r.status} ({r.detail})" for r in bad)
    return _result("P-FUSE", FAIL, fusion_seqs, detail)


def _eval_term(fb: FactBase, ctx: dict) -> VerificationResult:
    k = ctx["spec"]["rounds"]
    fused = {f.args[0]: f.source_seq for f in fb.query("sent_global_model")}
    if len(fused) == k:
        return _result("P-TERM", PASS, sorted(fused.values()), f"all {k} rounds completed")
    threshold = ctx["spec"]["global_hyperparams"].get("termination_accuracy")
    if threshold is not None:
        for f in fb.query("evaluation_results"):
            if f.args[1].get("acc", 0.0) >= threshold:
                return _result("P-TERM", PASS, [f.source_seq],
                               f"early stop: round {f.args[0]} accuracy "
                               f"{f.args[1]['acc']:.4f} >= {threshold}")
    quorum_failures = fb.query("no_quorum")
    if quorum_failures:
        return _result("P-TERM", PASS, [f.source_seq for f in quorum_failures],
                       f"run halted by quorum failure at round {quorum_failures[0].args[0]}")
    return _result("P-TERM", FAIL, sorted(fused.values()),
                   f"only {len(fused)} of {k} rounds recorded with no early stop "
                   f"and no quorum failure")


def _eval_post(fb: FactBase, ctx: dict) -> VerificationResult:
    facts = fb.query("postprocess")
    if not facts:
        return _result("P-POST", INAPPLICABLE, [], "no post-processing was recorded")
    expected = ctx["spec"]["postprocess_routine"]
    bad = [
        f for f in facts
        if f.args[0] != expected.get("id")
        or _canon(f.args[1]) != _canon(expected.get("params", {}))
    ]
    if bad:
        return _result("P-POST", FAIL, [f.source_seq for f in bad],
                       f"recorded post-processing {bad[0].args[0]!r} differs from "
                       f"prescribed {expected.get('id')!r}")
    return _result("P-POST", PASS, [f.source_seq for f in facts],
                   "post-processing matches the specification")


_EVALUATORS = {
    "P-SPEC": _eval_spec,
    "P-PROV": _eval_prov,
    "P-PREPROC": _eval_preproc,
    "P-QMATCH": _eval_qmatch,
    "P-INCL-SENT": _eval_incl_sent,
    "P-INCL-USED": _eval_incl_used,
    "P-FAIR": _eval_fair,
    "P-HYP": _eval_hyp,
    "P-DATA": _eval_data,
    "P-FUSE": _eval_fuse,
    "P-TERM": _eval_term,
    "P-POST": _eval_post,
}


def _build_context(
    fb: FactBase, book: lg.Ledger, store: lg.ArtifactStore, fairness_slack: int
) -> dict:
    found = proto.owner_spec(book)
    if found is None:
        raise TamperedLedgerError("ledger has no owner specification claim")
    owner_seq, spec_doc = found
    return {
        "fb": fb,
        "ledger": book,
        "artifacts": store,
        "spec": spec_doc,
        "owner_seq": owner_seq,
        "n": spec_doc["num_parties"],
        "fairness_slack": fairness_slack,
    }


def evaluate_predicate(
    fb: FactBase,
    book: lg.Ledger,
    store: lg.ArtifactStore,
    predicate_id: str,
    fairness_slack: int = 0,
) -> VerificationResult:
    """Evaluate one catalogue predicate against the fact base."""
    if predicate_id not in _EVALUATORS:
        raise UnknownPredicateError(predicate_id)
    ctx = _build_context(fb, book, store, fairness_slack)
    return _EVALUATORS[predicate_id](fb, ctx)


def evaluate_all(
    book: lg.Ledger,
    store: lg.ArtifactStore,
    expected_head: str | None = None,
    fairness_slack: int = 0,
) -> VerificationReport:
    """Integrity check, then the whole predicate catalogue.

    A ledger that fails integrity verification short-circuits: predicate
    results are withheld and the report is an overall failure.
    """
    integrity = book.verify_integrity(expected_head=expected_head)
    if not integrity.ok:
        return VerificationReport(
            results=(), integrity=integrity, overall_ok=False, ledger_head=integrity.head
        )
    fb = extract_facts(book, assume_verified=True)
    ctx = _build_context(fb, book, store, fairness_slack)
    results = tuple(_EVALUATORS[p.id](fb, ctx) for p in CATALOGUE)
    overall_ok = all(r.status != FAIL for r in results)
    return VerificationReport(
        results=results, integrity=integrity, overall_ok=overall_ok, ledger_head=integrity.head
    )
