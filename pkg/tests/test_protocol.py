"""Orchestrator: claim counts and ordering, faults, quorum, replay, persistence."""

from __future__ import annotations

import numpy as np
import pytest

from flaudit import (
    check_quorum,
    dataset_digest,
    party_replay_local,
    preprocess,
    replay_fusion,
    run_federation,
)
from flaudit.flcore import ConfigError
from flaudit.protocol import (
    AGGREGATOR,
    FUSION_CLAIM,
    METRICS_CLAIM,
    NO_QUORUM_CLAIM,
    OWNER,
    POSTPROCESS_CLAIM,
    PREPROCESS_CLAIM,
    PROVENANCE_CLAIM,
    QUERY_RECEIVED_CLAIM,
    QUERY_SENT_CLAIM,
    SPEC_CLAIM,
    TRAINING_CLAIM,
    FaultSpec,
    build_run_inputs,
    load_run,
    party_name,
    save_run,
    tamper_ledger_file,
)
from helpers import make_config_doc, make_inputs, make_spec


def _claim_formula(n: int, k: int) -> int:
    return 3 * n + k * (3 * n + 2) + 4


def _small_run(faults=None, **spec_kwargs):
    defaults = dict(n=3, rounds=2)
    defaults.update(spec_kwargs)
    spec = make_spec(**defaults)
    party_data, holdout = make_inputs(spec, per_class=10, holdout_per_class=5)
    return run_federation(spec, party_data, holdout, faults or [])


# -- honest runs -------------------------------------------------------------

def test_honest_run_claim_count(honest_run):
    assert len(honest_run.ledger) == _claim_formula(5, 10) == 189
    assert honest_run.stop_reason == "completed_K"
    assert honest_run.rounds_executed == 10
    assert honest_run.final_model is not None


def test_claim_formula_other_sizes():
    run = _small_run()
    assert len(run.ledger) == _claim_formula(3, 2)


def test_claim_kind_counts(honest_run):
    book = honest_run.ledger
    assert len(book.claims_by(kind=SPEC_CLAIM)) == 7  # owner + aggregator + 5 parties
    assert len(book.claims_by(kind=PROVENANCE_CLAIM)) == 5
    assert len(book.claims_by(kind=PREPROCESS_CLAIM)) == 6  # 5 parties + hold-out
    assert len(book.claims_by(kind=QUERY_SENT_CLAIM)) == 50
    assert len(book.claims_by(kind=QUERY_RECEIVED_CLAIM)) == 50
    assert len(book.claims_by(kind=TRAINING_CLAIM)) == 50
    assert len(book.claims_by(kind=FUSION_CLAIM)) == 10
    assert len(book.claims_by(kind=METRICS_CLAIM)) == 10
    assert len(book.claims_by(kind=POSTPROCESS_CLAIM)) == 1
    assert len(book.claims_by(actor=party_name(3), kind=TRAINING_CLAIM)) == 10


def test_round_claim_ordering(honest_run):
    for t in range(1, 11):
        kinds = [env.kind for env in honest_run.ledger.claims_by(round=t)]
        expected = ([QUERY_SENT_CLAIM] * 5 + [QUERY_RECEIVED_CLAIM] * 5
                    + [TRAINING_CLAIM] * 5 + [FUSION_CLAIM, METRICS_CLAIM])
        assert kinds == expected


def test_ledger_verifies_and_artifacts_resolve(honest_run):
    assert honest_run.ledger.verify_integrity().ok
    for env in honest_run.ledger:
        for key in ("query_digest", "model_digest", "reply_digest",
                    "output_model_digest", "input_model_digest"):
            if key in env.payload:
                assert env.payload[key] in honest_run.artifacts
        for d in env.payload.get("reply_digests", []):
            assert d in honest_run.artifacts


def test_run_is_reproducible_bit_for_bit():
    a = _small_run()
    b = _small_run()
    assert len(a.ledger) == len(b.ledger)
    for i in range(len(a.ledger)):
        assert a.ledger.raw_bytes(i) == b.ledger.raw_bytes(i)
    assert a.artifacts.digests() == b.artifacts.digests()
    assert a.final_model_digest() == b.final_model_digest()


def test_input_validation_rejects_wrong_party_count():
    spec = make_spec(n=3, rounds=1)
    party_data, holdout = make_inputs(spec)
    with pytest.raises(ConfigError):
        run_federation(spec, party_data[:2], holdout)


def test_invalid_spec_rejected_before_any_claim():
    spec = make_spec(n=3, rounds=1, quorum=4)  # quorum > n
    party_data, holdout = make_inputs(make_spec(n=3, rounds=1))
    with pytest.raises(ConfigError):
        run_federation(spec, party_data, holdout)


# -- quorum and termination --------------------------------------------------

def test_check_quorum_thresholds():
    assert not check_quorum({0, 1, 2, 3}, make_spec(n=5, quorum=5))
    assert check_quorum({0, 1, 2, 3}, make_spec(n=5, quorum=4))
    assert check_quorum({0}, make_spec(n=5, quorum=1))


def test_drop_reply_with_full_quorum_halts_run():
    run = _small_run(faults=[FaultSpec(mode="drop_reply", party=1, round=1)],
                     quorum=3)
    assert run.stop_reason == "no_quorum"
    assert run.rounds_executed == 0
    assert run.final_model is None
    no_quorum = run.ledger.claims_by(kind=NO_QUORUM_CLAIM)
    assert len(no_quorum) == 1
    assert no_quorum[0].payload == {"round": 1, "responders": [0, 2]}
    assert not run.ledger.claims_by(kind=POSTPROCESS_CLAIM)


def test_early_stop_on_separable_data():
    spec = make_spec(num_classes=3, termination_accuracy=0.9)
    party_data, holdout = make_inputs(spec, class_sep=50.0)
    run = run_federation(spec, party_data, holdout)
    assert run.stop_reason == "early_stop"
    assert run.rounds_executed < 10
    last = run.ledger.claims_by(kind=METRICS_CLAIM)[-1]
    assert last.payload["metrics"]["acc"] >= 0.9
    assert run.ledger.claims_by(kind=POSTPROCESS_CLAIM)  # normal wind-down still runs


def test_stop_reason_consistency_over_fault_runs():
    cases = [
        ([], "completed_K"),
        ([FaultSpec(mode="drop_reply", party=0, round=2)], "no_quorum"),
    ]
    for faults, expected in cases:
        run = _small_run(faults=faults, quorum=3)
        assert run.stop_reason == expected
        if expected == "no_quorum":
            assert run.ledger.claims_by(kind=NO_QUORUM_CLAIM)


# -- fault behavior ----------------------------------------------------------

def test_drop_reply_excludes_party_from_fusion():
    run = _small_run(faults=[FaultSpec(mode="drop_reply", party=2, round=2)],
                     n=4, quorum=3, rounds=3)
    fusion = run.ledger.claims_by(kind=FUSION_CLAIM, round=2)[0]
    assert fusion.payload["responders"] == [0, 1, 3]
    # the dropped party still trained and said so
    assert run.ledger.claims_by(actor=party_name(2), kind=TRAINING_CLAIM, round=2)
    # other rounds are unaffected
    assert run.ledger.claims_by(kind=FUSION_CLAIM, round=1)[0].payload["responders"] == [0, 1, 2, 3]


def test_forge_reply_diverges_from_training_claim():
    run = _small_run(faults=[FaultSpec(mode="forge_reply", party=1, round=1)])
    fusion = run.ledger.claims_by(kind=FUSION_CLAIM, round=1)[0]
    training = run.ledger.claims_by(actor=party_name(1), kind=TRAINING_CLAIM, round=1)[0]
    used = dict(zip(fusion.payload["responders"], fusion.payload["reply_digests"]))
    assert used[1] != training.payload["reply_digest"]
    assert used[1] in run.artifacts  # forged bytes are stored too


def test_wrong_spec_only_alters_that_partys_claim():
    run = _small_run(faults=[FaultSpec(mode="wrong_spec", party=0)])
    specs = run.ledger.claims_by(kind=SPEC_CLAIM)
    digests = {env.actor.name: env.payload["spec_digest"] for env in specs}
    assert digests[party_name(0)] != digests[OWNER]
    assert digests[party_name(1)] == digests[OWNER] == digests[AGGREGATOR]


def test_skew_hyperparams_recorded_honestly():
    run = _small_run(faults=[FaultSpec(mode="skew_hyperparams", party=1, round=2)])
    claims = run.ledger.claims_by(actor=party_name(1), kind=TRAINING_CLAIM)
    assert claims[0].payload["hyperparams"]["learning_rate"] == 0.1
    assert claims[1].payload["hyperparams"]["learning_rate"] == pytest.approx(1.0)


def test_skip_preprocess_claims_empty_routines():
    run = _small_run(faults=[FaultSpec(mode="skip_preprocess", party=2)])
    claim = run.ledger.claims_by(actor=party_name(2), kind=PREPROCESS_CLAIM)[0]
    assert claim.payload["routines"] == []
    assert claim.payload["input_digest"] == claim.payload["output_digest"]


def test_unfair_exclusion_skips_the_query():
    run = _small_run(faults=[FaultSpec(mode="unfair_exclusion", party=0, round=2)],
                     quorum=2)
    queried = [env.payload["party"]
               for env in run.ledger.claims_by(kind=QUERY_SENT_CLAIM, round=2)]
    assert queried == [1, 2]
    assert not run.ledger.claims_by(actor=party_name(0), kind=TRAINING_CLAIM, round=2)
    fusion = run.ledger.claims_by(kind=FUSION_CLAIM, round=2)[0]
    assert 0 not in fusion.payload["responders"]


def test_fault_validation():
    spec = make_spec(n=3, rounds=2)
    with pytest.raises(ConfigError):
        FaultSpec(mode="explode").validate(spec)
    with pytest.raises(ConfigError):
        FaultSpec(mode="drop_reply", party=5).validate(spec)
    with pytest.raises(ConfigError):
        FaultSpec(mode="drop_reply", round=9).validate(spec)
    with pytest.raises(ConfigError):
        FaultSpec(mode="wrong_spec", party=0, round=1).validate(spec)


# -- replay ------------------------------------------------------------------

def test_replay_fusion_honest_run_matches(honest_run):
    report = replay_fusion(honest_run.ledger, honest_run.artifacts)
    assert report.ok
    assert len(report.rounds) == 10
    assert all(r.status == "match" for r in report.rounds)


def test_replay_fusion_krum_run_matches(krum_run):
    report = replay_fusion(krum_run.ledger, krum_run.artifacts)
    assert report.ok


def test_replay_fusion_detects_swapped_artifact():
    run = _small_run()
    fusion = run.ledger.claims_by(kind=FUSION_CLAIM, round=1)[0]
    target = fusion.payload["reply_digests"][0]
    # overwrite the stored blob behind its digest key
    run.artifacts._blobs[target] = run.artifacts._blobs[target] + b" "
    report = replay_fusion(run.ledger, run.artifacts)
    assert not report.ok
    assert report.rounds[0].status in ("mismatch", "unverifiable")


def test_replay_fusion_vacuous_when_no_fusions():
    run = _small_run(faults=[FaultSpec(mode="drop_reply", party=0, round=1)], quorum=3)
    report = replay_fusion(run.ledger, run.artifacts)
    assert report.ok
    assert report.rounds == ()


def test_party_replay_local_honest():
    run = _small_run()
    spec = run.spec
    party_data, _ = make_inputs(spec, per_class=10, holdout_per_class=5)
    prepared = preprocess(party_data[1], [dict(r) for r in spec.preprocess_routines])
    report = party_replay_local(run.ledger, run.artifacts, 1, prepared)
    assert report.ok
    assert all(r.status == "match" for r in report.rounds)


def test_party_replay_local_detects_perturbed_data():
    run = _small_run()
    spec = run.spec
    party_data, _ = make_inputs(spec, per_class=10, holdout_per_class=5)
    prepared = preprocess(party_data[1], [dict(r) for r in spec.preprocess_routines])
    prepared.features[0, 0] += 1e-9
    report = party_replay_local(run.ledger, run.artifacts, 1, prepared)
    assert not report.ok
    assert report.rounds == ()  # stops before any training
    assert "digest" in report.detail


def test_party_replay_local_flags_skewed_training():
    run = _small_run(faults=[FaultSpec(mode="skew_hyperparams", party=0, round=2)])
    spec = run.spec
    party_data, _ = make_inputs(spec, per_class=10, holdout_per_class=5)
    prepared = preprocess(party_data[0], [dict(r) for r in spec.preprocess_routines])
    report = party_replay_local(run.ledger, run.artifacts, 0, prepared)
    assert not report.ok
    statuses = {r.round: r.status for r in report.rounds}
    assert statuses[1] == "match"
    assert statuses[2] == "mismatch"


# -- persistence -------------------------------------------------------------

def test_run_dir_round_trip(tmp_path, honest_run):
    out = tmp_path / "run"
    save_run(honest_run, out)
    book, store, summary = load_run(out)
    assert book.verify_integrity(expected_head=summary["ledger_head"]).ok
    assert len(book) == 189
    assert summary["stop_reason"] == "completed_K"
    assert summary["rounds_executed"] == 10
    assert summary["num_claims"] == 189
    assert summary["final_model_digest"] == honest_run.final_model_digest()
    assert set(store.digests()) == set(honest_run.artifacts.digests())


def test_saved_ledger_loads_identically(tmp_path):
    run = _small_run()
    out = tmp_path / "run"
    save_run(run, out)
    book, _, _ = load_run(out)
    for i in range(len(book)):
        assert book.raw_bytes(i) == run.ledger.raw_bytes(i)


def test_load_run_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_run(tmp_path / "nope")


def test_tamper_file_modes_all_detected(tmp_path):
    run = _small_run()
    out = tmp_path / "run"
    save_run(run, out)
    _, _, summary = load_run(out)
    for mode in ("flip-byte", "drop-entry", "reorder"):
        for entry in (0, 5, len(run.ledger) - 1):
            fresh = tmp_path / f"copy-{mode}-{entry}"
            save_run(run, fresh)
            tamper_ledger_file(fresh / "ledger.jsonl", entry, mode)
            book, _, _ = load_run(fresh)
            report = book.verify_integrity(expected_head=summary["ledger_head"])
            assert not report.ok, (mode, entry)


# -- configuration -----------------------------------------------------------

def test_build_run_inputs_synthetic():
    spec = make_spec(n=3, rounds=2)
    config = make_config_doc(spec, per_class=10, holdout_per_class=5)
    built_spec, party_data, holdout, faults = build_run_inputs(config)
    assert built_spec == spec
    assert len(party_data) == 3
    assert holdout.num_rows == 5 * 8
    assert faults == []
    # matches the helper generation exactly
    expected_party, expected_holdout = make_inputs(spec, per_class=10, holdout_per_class=5)
    for got, want in zip(party_data, expected_party):
        assert dataset_digest(got) == dataset_digest(want)
    assert dataset_digest(holdout) == dataset_digest(expected_holdout)


def test_build_run_inputs_rejects_bad_quorum():
    spec_doc = make_spec(n=3, rounds=2).to_doc()
    spec_doc["global_hyperparams"]["quorum"] = 4
    with pytest.raises(ConfigError):
        build_run_inputs({"spec": spec_doc, "data": {"source": "synthetic"}})


def test_build_run_inputs_rejects_krum_quorum_below_floor():
    spec_doc = make_spec(n=4, quorum=4, algorithm="krum", byzantine_f=1).to_doc()
    with pytest.raises(ConfigError):
        build_run_inputs({"spec": spec_doc, "data": {"source": "synthetic"}})


def test_build_run_inputs_rejects_unknown_fault():
    config = make_config_doc(make_spec(n=3, rounds=2), faults=[{"mode": "gremlins"}])
    with pytest.raises(ConfigError):
        build_run_inputs(config)


def test_build_run_inputs_rejects_unknown_source():
    with pytest.raises(ConfigError):
        build_run_inputs({"spec": make_spec().to_doc(), "data": {"source": "carrier-pigeon"}})


def test_build_run_inputs_csv(tmp_path):
    spec = make_spec(n=2, rounds=1, num_features=2, num_classes=2, quorum=2)
    paths = []
    for i in range(2):
        p = tmp_path / f"party{i}.csv"
        p.write_text("f0,f1,label\n0.1,0.2,0\n0.9,0.8,1\n", encoding="utf-8")
        paths.append(str(p))
    hold = tmp_path / "holdout.csv"
    hold.write_text("f0,f1,label\n0.2,0.3,0\n0.8,0.7,1\n", encoding="utf-8")
    config = {
        "spec": spec.to_doc(),
        "data": {"source": "csv", "csv": {"parties": paths, "holdout": str(hold)}},
    }
    built_spec, party_data, holdout, _ = build_run_inputs(config)
    run = run_federation(built_spec, party_data, holdout)
    assert run.stop_reason == "completed_K"
