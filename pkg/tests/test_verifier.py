"""Claim verifier: fact extraction, conjunctive queries, predicate outcomes."""

from __future__ import annotations

import pytest

from flaudit import evaluate_all, evaluate_predicate, extract_facts, run_federation
from flaudit.protocol import FaultSpec, party_name, tamper_ledger_file, save_run, load_run
from flaudit.verifier import (
    ANY,
    CATALOGUE,
    FAIL,
    INAPPLICABLE,
    PASS,
    PREDICATE_IDS,
    FactBase,
    TamperedLedgerError,
    UnknownPredicateError,
)
from helpers import make_inputs, make_spec

# Which catalogue predicates each fault mode must flip, and nothing else.
FAULT_TARGETS = {
    "drop_reply": {"P-INCL-USED", "P-FAIR"},
    "forge_reply": {"P-INCL-SENT"},
    "wrong_spec": {"P-SPEC"},
    "skew_hyperparams": {"P-HYP"},
    "skip_preprocess": {"P-PREPROC"},
    "unfair_exclusion": {"P-FAIR"},
}


def _matrix_run(algorithm: str, seed: int, faults=None):
    # n=6 with quorum=5 keeps krum viable (m >= 2f+3) even when one reply
    # goes missing
    spec = make_spec(n=6, rounds=3, quorum=5, algorithm=algorithm, byzantine_f=1,
                     num_classes=4, master_seed=seed)
    party_data, holdout = make_inputs(spec, per_class=8, holdout_per_class=6)
    return run_federation(spec, party_data, holdout, faults or [])


# -- fact extraction ---------------------------------------------------------

def test_extract_facts_spec_relations(honest_run):
    fb = extract_facts(honest_run.ledger)
    assert {f.args[0] for f in fb.query("fusion_algorithm")} == {"FedAvgFusionHandler"}
    assert {f.args[0] for f in fb.query("parties")} == {5}
    assert {f.args[0] for f in fb.query("rounds")} == {10}
    assert {f.args[0] for f in fb.query("learning_rate")} == {0.1}
    assert {f.args[0] for f in fb.query("epochs")} == {1}
    assert {f.args[0] for f in fb.query("max_timeout")} == {600}
    # spec claimed by owner, aggregator, and each of the 5 parties
    assert len(fb.query("parties", [5])) == 7
    assert {f.attestor for f in fb.query("spec_digest")} == (
        {"owner", "aggregator"} | {party_name(i) for i in range(5)})


def test_extract_facts_krum_handler_and_selection(krum_run):
    fb = extract_facts(krum_run.ledger)
    assert {f.args[0] for f in fb.query("fusion_algorithm")} == {"KrumFusionHandler"}
    selections = fb.query("selected_model_update")
    assert len(selections) == 3  # one per fused round
    for fact in selections:
        assert fact.attestor == "aggregator"
        round_index, chosen = fact.args
        assert 1 <= round_index <= 3
        assert 0 <= chosen < 6


def test_extract_facts_round_relations(honest_run):
    fb = extract_facts(honest_run.ledger)
    assert len(fb.query("sent_update", [3, ANY, ANY])) == 5
    assert len(fb.query("received_query", [ANY, 2, ANY])) == 10
    assert len(fb.query("used_update")) == 50
    assert len(fb.query("sent_global_model")) == 10
    assert len(fb.query("evaluation_results")) == 10
    sizes = {f.attestor: f.args[0] for f in fb.query("training_data_size")}
    assert sizes == {party_name(i): 200 for i in range(5)}  # 8 classes x 25
    assert [f.args[0] for f in fb.query("test_data_size")] == [80]  # 8 classes x 10


def test_extract_facts_metrics_payload(honest_run):
    fb = extract_facts(honest_run.ledger)
    fact = fb.query("evaluation_results", [2, ANY])[0]
    assert fact.attestor == "aggregator"
    assert set(fact.args[1]) >= {"acc", "loss", "f1_micro"}


def test_extract_facts_refuses_tampered_ledger(tmp_path, honest_run):
    out = tmp_path / "run"
    save_run(honest_run, out)
    tamper_ledger_file(out / "ledger.jsonl", 10, "flip-byte")
    book, _, _ = load_run(out)
    with pytest.raises(TamperedLedgerError):
        extract_facts(book)


def test_query_patterns_and_empty_base():
    fb = FactBase()
    assert fb.query("anything") == []
    assert fb.query("anything", [1, 2]) == []


def test_source_seq_points_at_origin_claim(honest_run):
    fb = extract_facts(honest_run.ledger)
    for fact in fb.query("sent_update"):
        env = honest_run.ledger.entries[fact.source_seq]
        assert env.kind == "training_claim"
        assert env.payload["round"] == fact.args[0]
        assert env.payload["party"] == fact.args[1]


# -- predicates on honest runs -----------------------------------------------

def test_honest_run_all_predicates_pass(honest_report):
    assert honest_report.overall_ok
    assert len(honest_report.results) == len(CATALOGUE) == 12
    assert {r.predicate_id for r in honest_report.results} == set(PREDICATE_IDS)
    for result in honest_report.results:
        assert result.status == PASS, result.predicate_id


def test_honest_krum_run_all_predicates_pass(krum_run):
    report = evaluate_all(krum_run.ledger, krum_run.artifacts)
    assert report.overall_ok
    assert all(r.status == PASS for r in report.results)


def test_soundness_across_seeds_and_algorithms():
    for algorithm in ("fedavg", "krum"):
        for seed in (1, 2):
            run = _matrix_run(algorithm, seed)
            report = evaluate_all(run.ledger, run.artifacts)
            assert report.overall_ok, (algorithm, seed, report.failing_ids())


def test_single_predicate_evaluation(honest_run):
    fb = extract_facts(honest_run.ledger)
    result = evaluate_predicate(fb, honest_run.ledger, honest_run.artifacts, "P-SPEC")
    assert result.status == PASS
    with pytest.raises(UnknownPredicateError):
        evaluate_predicate(fb, honest_run.ledger, honest_run.artifacts, "P-NOPE")


def test_no_quorum_run_verifies_clean():
    spec = make_spec(n=3, rounds=2, quorum=3)
    party_data, holdout = make_inputs(spec, per_class=8, holdout_per_class=5)
    run = run_federation(spec, party_data, holdout,
                         [FaultSpec(mode="drop_reply", party=0, round=1)])
    assert run.stop_reason == "no_quorum"
    report = evaluate_all(run.ledger, run.artifacts)
    # the aggregator behaved correctly by recording the quorum failure
    assert report.overall_ok
    post = report.result("P-POST")
    assert post is not None and post.status == INAPPLICABLE
    term = report.result("P-TERM")
    assert term is not None and term.status == PASS


# -- fault isolation ---------------------------------------------------------

def _fault_for(mode: str) -> FaultSpec:
    return {
        "drop_reply": FaultSpec(mode="drop_reply", party=2, round=2),
        "forge_reply": FaultSpec(mode="forge_reply", party=1, round=2),
        "wrong_spec": FaultSpec(mode="wrong_spec", party=1),
        "skew_hyperparams": FaultSpec(mode="skew_hyperparams", party=3, round=1),
        "skip_preprocess": FaultSpec(mode="skip_preprocess", party=0),
        "unfair_exclusion": FaultSpec(mode="unfair_exclusion", party=4, round=3),
    }[mode]


@pytest.mark.parametrize("algorithm", ["fedavg", "krum"])
@pytest.mark.parametrize("mode", sorted(FAULT_TARGETS))
def test_fault_flips_exactly_its_targets(mode, algorithm):
    run = _matrix_run(algorithm, seed=7, faults=[_fault_for(mode)])
    report = evaluate_all(run.ledger, run.artifacts)
    assert set(report.failing_ids()) == FAULT_TARGETS[mode], (mode, algorithm)
    assert not report.overall_ok


def test_fail_results_always_carry_evidence():
    for mode in FAULT_TARGETS:
        run = _matrix_run("fedavg", seed=3, faults=[_fault_for(mode)])
        report = evaluate_all(run.ledger, run.artifacts)
        for result in report.results:
            if result.status == FAIL:
                assert result.evidence, (mode, result.predicate_id)


def test_wrong_spec_evidence_cites_the_partys_claim():
    run = _matrix_run("fedavg", seed=5, faults=[FaultSpec(mode="wrong_spec", party=1)])
    report = evaluate_all(run.ledger, run.artifacts)
    result = report.result("P-SPEC")
    assert result.status == FAIL
    cited = {run.ledger.entries[seq].actor.name for seq in result.evidence}
    assert party_name(1) in cited


def test_forge_evidence_includes_fusion_and_training_claims():
    run = _matrix_run("fedavg", seed=5, faults=[FaultSpec(mode="forge_reply", party=1, round=2)])
    report = evaluate_all(run.ledger, run.artifacts)
    result = report.result("P-INCL-SENT")
    assert result.status == FAIL
    kinds = {run.ledger.entries[seq].kind for seq in result.evidence}
    assert kinds >= {"fusion_claim", "training_claim"}


def test_skew_fault_breaks_party_replay():
    from flaudit import party_replay_local, preprocess

    fault = FaultSpec(mode="skew_hyperparams", party=3, round=1)
    run = _matrix_run("fedavg", seed=7, faults=[fault])
    party_data, _ = make_inputs(run.spec, per_class=8, holdout_per_class=6)
    prepared = preprocess(party_data[3], [dict(r) for r in run.spec.preprocess_routines])
    replay = party_replay_local(run.ledger, run.artifacts, 3, prepared)
    assert not replay.ok
    assert any(r.status == "mismatch" and r.round == 1 for r in replay.rounds)


# -- tampered ledgers --------------------------------------------------------

def test_evaluate_all_withholds_results_on_tamper(tmp_path, honest_run):
    out = tmp_path / "run"
    save_run(honest_run, out)
    tamper_ledger_file(out / "ledger.jsonl", 42, "flip-byte")
    book, store, summary = load_run(out)
    report = evaluate_all(book, store, expected_head=summary["ledger_head"])
    assert not report.overall_ok
    assert report.results == ()
    assert not report.integrity.ok
    flagged = [c.seq for c in report.integrity.entries if not c.ok]
    assert 42 in flagged


def test_report_round_trips_through_doc(honest_report):
    from flaudit.verifier import VerificationReport

    doc = honest_report.to_doc()
    back = VerificationReport.from_doc(doc)
    assert back == honest_report
