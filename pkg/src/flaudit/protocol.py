"""Federation orchestrator: run the instrumented protocol end to end.

One call executes setup, preprocessing, the round loop with quorum handling,
and post-processing, emitting a signed claim at every prescribed point.
Fault injection perturbs exactly the targeted behavior while honest actors
keep logging their honest view; replay helpers re-derive recorded steps from
the artifact store and compare digests.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import ledger as lg
from .flcore import (
    ConfigError,
    Dataset,
    FusionConfig,
    ModelWeights,
    ProjectSpec,
    Query,
    Reply,
    apply_postprocess,
    check_early_stop,
    dataset_digest,
    evaluate,
    fedavg,
    generate_synthetic_dataset,
    krum_select,
    load_dataset_csv,
    local_train,
    preprocess,
)
from .rng import MASK64, SplitMix64, splitmix64

# Claim kinds, in the vocabulary the verifier understands.
SPEC_CLAIM = "spec_claim"
PROVENANCE_CLAIM = "provenance_claim"
PREPROCESS_CLAIM = "preprocess_claim"
QUERY_SENT_CLAIM = "query_sent_claim"
QUERY_RECEIVED_CLAIM = "query_received_claim"
TRAINING_CLAIM = "training_claim"
FUSION_CLAIM = "fusion_claim"
NO_QUORUM_CLAIM = "no_quorum_claim"
METRICS_CLAIM = "metrics_claim"
POSTPROCESS_CLAIM = "postprocess_claim"

CLAIM_KINDS = (
    SPEC_CLAIM,
    PROVENANCE_CLAIM,
    PREPROCESS_CLAIM,
    QUERY_SENT_CLAIM,
    QUERY_RECEIVED_CLAIM,
    TRAINING_CLAIM,
    FUSION_CLAIM,
    NO_QUORUM_CLAIM,
    METRICS_CLAIM,
    POSTPROCESS_CLAIM,
)

OWNER = "owner"
AGGREGATOR = "aggregator"

FAULT_MODES = (
    "drop_reply",
    "forge_reply",
    "wrong_spec",
    "skew_hyperparams",
    "skip_preprocess",
    "unfair_exclusion",
)

_KEY_STREAM_TAG = 0x6B657973  # ascii "keys"
_MEANS_TAG = 0x6D65616E  # ascii "mean"

LEDGER_FILE = "ledger.jsonl"
ARTIFACT_DIR = "artifacts"
REGISTRY_FILE = "registry.json"
SUMMARY_FILE = "run_summary.json"


def party_name(index: int) -> str:
    return f"party-{index}"


# ---------------------------------------------------------------------------
# Fault specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FaultSpec:
    """One injected misbehavior; party/round of None means every party/round."""

    mode: str
    party: int | None = None
    round: int | None = None
    params: dict | None = None

    def to_doc(self) -> dict:
        doc: dict = {"mode": self.mode}
        if self.party is not None:
            doc["party"] = self.party
        if self.round is not None:
            doc["round"] = self.round
        if self.params is not None:
            doc["params"] = self.params
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "FaultSpec":
        return cls(
            mode=doc.get("mode", ""),
            party=doc.get("party"),
            round=doc.get("round"),
            params=doc.get("params"),
        )

    def validate(self, spec: ProjectSpec) -> None:
        if self.mode not in FAULT_MODES:
            raise ConfigError(f"unknown fault mode {self.mode!r}")
        if self.party is not None and not 0 <= self.party < spec.num_parties:
            raise ConfigError(f"fault party {self.party} out of range")
        if self.round is not None and not 1 <= self.round <= spec.rounds:
            raise ConfigError(f"fault round {self.round} out of range")
        if self.mode in ("wrong_spec", "skip_preprocess") and self.round is not None:
            raise ConfigError(f"{self.mode} is a setup-phase fault and takes no round")


def _find_fault(
    faults: list[FaultSpec], mode: str, party: int | None = None, round: int | None = None
) -> FaultSpec | None:
    for f in faults:
        if f.mode != mode:
            continue
        if f.party is not None and party is not None and f.party != party:
            continue
        if f.round is not None and round is not None and f.round != round:
            continue
        return f
    return None


def _wrong_spec_doc(spec_doc: dict, params: dict | None) -> dict:
    doc = copy.deepcopy(spec_doc)
    overrides = params or {"learning_rate": doc["local_hyperparams"]["learning_rate"] * 2}
    doc["local_hyperparams"].update(overrides)
    return doc


def _skewed_hyperparams(hyperparams: dict, params: dict | None) -> dict:
    skewed = dict(hyperparams)
    skewed.update(params or {"learning_rate": hyperparams["learning_rate"] * 10})
    return skewed


def _forged_reply(reply: Reply, params: dict | None) -> Reply:
    delta = float((params or {}).get("delta", 1.0))
    w = reply.model.w.copy()
    w[0, 0] += delta
    return Reply(
        round=reply.round, party=reply.party, model=ModelWeights(w),
        sample_count=reply.sample_count,
    )


# ---------------------------------------------------------------------------
# Artifact encodings
# ---------------------------------------------------------------------------

def model_bytes(model: ModelWeights) -> bytes:
    return lg.canonical_encode(model.to_doc())


def query_bytes(query: Query) -> bytes:
    return lg.canonical_encode(query.to_doc())


def reply_bytes(reply: Reply) -> bytes:
    return lg.canonical_encode(reply.to_doc())


# ---------------------------------------------------------------------------
# The federation run
# ---------------------------------------------------------------------------

@dataclass
class FederationRun:
    spec: ProjectSpec
    ledger: lg.Ledger
    artifacts: lg.ArtifactStore
    final_model: ModelWeights | None
    stop_reason: str  # completed_K | early_stop | no_quorum
    rounds_executed: int
    keys: dict = field(default_factory=dict, repr=False)  # actor name -> KeyPair

    def final_model_digest(self) -> str | None:
        if self.final_model is None:
            return None
        return lg.digest(model_bytes(self.final_model))


def check_quorum(responders: set[int], spec: ProjectSpec) -> bool:
    """True when enough parties replied for the round to fuse."""
    if not all(0 <= p < spec.num_parties for p in responders):
        raise ValueError("responder index out of range")
    return len(responders) >= spec.quorum


def _validate_run_inputs(
    spec: ProjectSpec, party_data: list[Dataset], holdout: Dataset, faults: list[FaultSpec]
) -> None:
    spec.validate()
    if len(party_data) != spec.num_parties:
        raise ConfigError(
            f"expected {spec.num_parties} party datasets, got {len(party_data)}"
        )
    for i, data in enumerate(party_data):
        if data.num_features != spec.num_features:
            raise ConfigError(f"party {i} data has {data.num_features} features, "
                              f"spec says {spec.num_features}")
        if data.num_rows and int(data.labels.max()) >= spec.num_classes:
            raise ConfigError(f"party {i} labels exceed the declared class count")
    if holdout.num_features != spec.num_features:
        raise ConfigError("hold-out data feature count does not match the spec")
    for f in faults:
        f.validate(spec)


def run_federation(
    spec: ProjectSpec,
    party_data: list[Dataset],
    holdout: Dataset,
    faults: list[FaultSpec] | None = None,
) -> FederationRun:
    """Execute the full instrumented protocol and return the recorded run.

    Configuration problems raise before anything is written; injected faults
    never abort the run (detection is the verifier's job, not the runner's).
    """
    faults = [f if isinstance(f, FaultSpec) else FaultSpec.from_doc(f) for f in (faults or [])]
    _validate_run_inputs(spec, party_data, holdout, faults)
    n = spec.num_parties

    # Deterministic identities: one key stream derived from the master seed.
    key_rng = SplitMix64(splitmix64(spec.master_seed ^ _KEY_STREAM_TAG))
    names = [OWNER, AGGREGATOR] + [party_name(i) for i in range(n)]
    keys = {name: lg.generate_keypair(key_rng.next_u64()) for name in names}

    book = lg.Ledger()
    actors = {name: book.register(name, kp.public_bytes) for name, kp in keys.items()}
    store = lg.ArtifactStore()

    def claim(name: str, kind: str, payload: dict) -> lg.ClaimEnvelope:
        return book.append_claim(actors[name], keys[name], kind, payload)

    spec_doc = spec.to_doc()
    spec_digest = lg.doc_digest(spec_doc)

    # Setup: owner and aggregator commit to the specification.
    claim(OWNER, SPEC_CLAIM, {"role": "owner", "spec": spec_doc, "spec_digest": spec_digest})
    claim(AGGREGATOR, SPEC_CLAIM,
          {"role": "aggregator", "spec": spec_doc, "spec_digest": spec_digest})

    # Per party: spec consent, provenance, preprocessing.
    datasets: dict[int, Dataset] = {}
    data_digests: dict[int, str] = {}
    for i in range(n):
        pname = party_name(i)
        claimed_doc, claimed_digest = spec_doc, spec_digest
        fault = _find_fault(faults, "wrong_spec", party=i)
        if fault is not None:
            claimed_doc = _wrong_spec_doc(spec_doc, fault.params)
            claimed_digest = lg.doc_digest(claimed_doc)
        claim(pname, SPEC_CLAIM,
              {"role": "party", "party": i, "spec": claimed_doc, "spec_digest": claimed_digest})

        raw = party_data[i]
        raw_digest = dataset_digest(raw)
        claim(pname, PROVENANCE_CLAIM,
              {"party": i, "data_digest": raw_digest, "provenance": dict(raw.provenance)})

        routines = [dict(r) for r in spec.preprocess_routines]
        if _find_fault(faults, "skip_preprocess", party=i) is not None:
            routines = []
        prepared = preprocess(raw, routines)
        datasets[i] = prepared
        data_digests[i] = dataset_digest(prepared)
        claim(pname, PREPROCESS_CLAIM, {
            "actor": pname,
            "routines": routines,
            "input_digest": raw_digest,
            "output_digest": data_digests[i],
            "size": prepared.num_rows,
        })

    # The aggregator prepares its hold-out set the same way.
    holdout_routines = [dict(r) for r in spec.preprocess_routines]
    holdout_prepared = preprocess(holdout, holdout_routines)
    claim(AGGREGATOR, PREPROCESS_CLAIM, {
        "actor": AGGREGATOR,
        "routines": holdout_routines,
        "input_digest": dataset_digest(holdout),
        "output_digest": dataset_digest(holdout_prepared),
        "size": holdout_prepared.num_rows,
    })

    model = ModelWeights.zeros(spec.num_classes, spec.num_features)
    store.put(model_bytes(model))
    stop_reason = "completed_K"
    rounds_executed = 0

    for t in range(1, spec.rounds + 1):
        model_digest = store.put(model_bytes(model))
        targets = [
            i for i in range(n)
            if _find_fault(faults, "unfair_exclusion", party=i, round=t) is None
        ]

        query = Query(round=t, model=model, hyperparams=dict(spec.local_hyperparams))
        qbytes = query_bytes(query)
        qdigest = store.put(qbytes)
        for i in targets:
            claim(AGGREGATOR, QUERY_SENT_CLAIM, {
                "round": t, "party": i, "query_digest": qdigest, "model_digest": model_digest,
            })
        for i in targets:
            claim(party_name(i), QUERY_RECEIVED_CLAIM,
                  {"round": t, "party": i, "query_digest": qdigest})

        delivered: dict[int, tuple[Reply, str]] = {}
        for i in targets:
            hyperparams = dict(spec.local_hyperparams)
            skew = _find_fault(faults, "skew_hyperparams", party=i, round=t)
            if skew is not None:
                hyperparams = _skewed_hyperparams(hyperparams, skew.params)
            reply = local_train(
                Query(round=t, model=model, hyperparams=hyperparams), datasets[i], party=i
            )
            rdigest = store.put(reply_bytes(reply))
            claim(party_name(i), TRAINING_CLAIM, {
                "round": t,
                "party": i,
                "routine_id": spec.local_routine,
                "hyperparams": hyperparams,
                "data_digest": data_digests[i],
                "reply_digest": rdigest,
                "sample_count": reply.sample_count,
            })
            if _find_fault(faults, "drop_reply", party=i, round=t) is None:
                delivered[i] = (reply, rdigest)

        # A forged reply replaces what actually arrived; its bytes are stored
        # so the fusion claim stays internally consistent.
        for i in list(delivered):
            forge = _find_fault(faults, "forge_reply", party=i, round=t)
            if forge is not None:
                forged = _forged_reply(delivered[i][0], forge.params)
                delivered[i] = (forged, store.put(reply_bytes(forged)))

        responders = sorted(delivered)
        if not check_quorum(set(responders), spec):
            claim(AGGREGATOR, NO_QUORUM_CLAIM, {"round": t, "responders": responders})
            stop_reason = "no_quorum"
            break

        replies = [delivered[i][0] for i in responders]
        selected: int | None = None
        if spec.fusion.algorithm == "krum":
            selected, fused = krum_select(replies, spec.fusion.byzantine_f)
        else:
            fused = fedavg(replies)
        fused_digest = store.put(model_bytes(fused))
        fusion_payload = {
            "round": t,
            "input_model_digest": model_digest,
            "responders": responders,
            "reply_digests": [delivered[i][1] for i in responders],
            "output_model_digest": fused_digest,
        }
        if selected is not None:
            fusion_payload["selected_index"] = selected
        claim(AGGREGATOR, FUSION_CLAIM, fusion_payload)

        model = fused
        rounds_executed = t
        metrics = evaluate(model, holdout_prepared, round_index=t)
        claim(AGGREGATOR, METRICS_CLAIM, {"round": t, "metrics": metrics.to_doc()})
        if check_early_stop(metrics, spec):
            stop_reason = "early_stop"
            break

    final_model: ModelWeights | None = None
    if stop_reason != "no_quorum":
        routine = dict(spec.postprocess_routine)
        processed = apply_postprocess(model, routine)
        out_digest = store.put(model_bytes(processed))
        claim(AGGREGATOR, POSTPROCESS_CLAIM, {
            "routine_id": routine["id"],
            "params": routine.get("params", {}),
            "input_digest": lg.digest(model_bytes(model)),
            "output_digest": out_digest,
        })
        final_model = processed

    return FederationRun(
        spec=spec,
        ledger=book,
        artifacts=store,
        final_model=final_model,
        stop_reason=stop_reason,
        rounds_executed=rounds_executed,
        keys=keys,
    )


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RoundReplay:
    round: int
    status: str  # match | mismatch | unverifiable
    detail: str = ""

    def to_doc(self) -> dict:
        return {"detail": self.detail, "round": self.round, "status": self.status}


@dataclass(frozen=True)
class ReplayReport:
    kind: str  # "fusion" | "local"
    rounds: tuple[RoundReplay, ...]
    ok: bool
    detail: str = ""

    def to_doc(self) -> dict:
        return {
            "detail": self.detail,
            "kind": self.kind,
            "ok": self.ok,
            "rounds": [r.to_doc() for r in self.rounds],
        }


def owner_spec(book: lg.Ledger) -> tuple[int, dict] | None:
    """Locate the owner's recorded specification: (claim seq, spec document)."""
    for env in book.claims_by(kind=SPEC_CLAIM):
        if env.payload.get("role") == "owner":
            return env.seq, env.payload["spec"]
    return None


def replay_fusion(book: lg.Ledger, store: lg.ArtifactStore) -> ReplayReport:
    """Recompute every recorded fusion from the claimed replies.

    For each fusion claim, the claimed reply artifacts are fetched by digest,
    the configured fusion algorithm is rerun, and the output digest is
    compared with the claimed one. Missing or corrupt artifacts make the
    round unverifiable rather than crashing the audit.
    """
    found = owner_spec(book)
    if found is None:
        return ReplayReport(kind="fusion", rounds=(), ok=False,
                            detail="no owner specification recorded")
    _, spec_doc = found
    fusion = FusionConfig.from_doc(spec_doc["fusion_routine"])

    rounds: list[RoundReplay] = []
    for env in book.claims_by(kind=FUSION_CLAIM):
        t = env.payload["round"]
        try:
            replies = [
                Reply.from_doc(lg.canonical_decode(store.get(d)))
                for d in env.payload["reply_digests"]
            ]
        except lg.LedgerError as exc:
            rounds.append(RoundReplay(t, "unverifiable", str(exc)))
            continue
        try:
            if fusion.algorithm == "krum":
                selected, fused = krum_select(replies, fusion.byzantine_f)
                if selected != env.payload.get("selected_index"):
                    rounds.append(RoundReplay(
                        t, "mismatch",
                        f"recomputed selection {selected} != claimed "
                        f"{env.payload.get('selected_index')}"))
                    continue
            else:
                fused = fedavg(replies)
        except ValueError as exc:
            rounds.append(RoundReplay(t, "unverifiable", str(exc)))
            continue
        recomputed = lg.digest(model_bytes(fused))
        if recomputed == env.payload["output_model_digest"]:
            rounds.append(RoundReplay(t, "match"))
        else:
            rounds.append(RoundReplay(t, "mismatch", "recomputed output digest differs"))

    ok = all(r.status == "match" for r in rounds)
    return ReplayReport(kind="fusion", rounds=tuple(rounds), ok=ok)


def party_replay_local(
    book: lg.Ledger, store: lg.ArtifactStore, party: int, data: Dataset
) -> ReplayReport:
    """Replay one party's local training from its recorded queries.

    Only the data holder can do this: the supplied dataset must hash to the
    digest the party claimed for its training data, otherwise the report
    records the mismatch and stops before any training.
    """
    pname = party_name(party)
    training = book.claims_by(actor=pname, kind=TRAINING_CLAIM)
    if not training:
        return ReplayReport(kind="local", rounds=(), ok=True,
                            detail=f"{pname} recorded no training claims")
    claimed = training[0].payload["data_digest"]
    actual = dataset_digest(data)
    if actual != claimed:
        return ReplayReport(
            kind="local", rounds=(), ok=False,
            detail=f"dataset digest {actual[:16]}… does not match claimed {claimed[:16]}…")

    received = {
        env.payload["round"]: env.payload["query_digest"]
        for env in book.claims_by(actor=pname, kind=QUERY_RECEIVED_CLAIM)
    }
    rounds: list[RoundReplay] = []
    for env in training:
        t = env.payload["round"]
        qdigest = received.get(t)
        if qdigest is None:
            rounds.append(RoundReplay(t, "unverifiable", "no received-query claim"))
            continue
        try:
            query = Query.from_doc(lg.canonical_decode(store.get(qdigest)))
        except lg.LedgerError as exc:
            rounds.append(RoundReplay(t, "unverifiable", str(exc)))
            continue
        reply = local_train(query, data, party=party)
        recomputed = lg.digest(reply_bytes(reply))
        if recomputed == env.payload["reply_digest"]:
            rounds.append(RoundReplay(t, "match"))
        else:
            rounds.append(RoundReplay(t, "mismatch", "recomputed reply digest differs"))
    ok = all(r.status == "match" for r in rounds)
    return ReplayReport(kind="local", rounds=tuple(rounds), ok=ok)


# ---------------------------------------------------------------------------
# Run directory persistence
# ---------------------------------------------------------------------------

def save_run(run: FederationRun, out_dir: str | Path) -> None:
    """Write ledger, artifacts, registry, and summary under one directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lg.save_ledger(run.ledger, out / LEDGER_FILE)
    run.artifacts.save_dir(out / ARTIFACT_DIR)
    lg.save_registry(run.ledger.registry, out / REGISTRY_FILE)
    summary = {
        "final_model_digest": run.final_model_digest(),
        "ledger_head": run.ledger.head_hash(),
        "num_claims": len(run.ledger),
        "rounds_executed": run.rounds_executed,
        "stop_reason": run.stop_reason,
    }
    (out / SUMMARY_FILE).write_bytes(lg.canonical_encode(summary) + b"\n")


def load_run(run_dir: str | Path) -> tuple[lg.Ledger, lg.ArtifactStore, dict]:
    """Load a persisted run directory: (ledger, artifacts, summary)."""
    root = Path(run_dir)
    for required in (LEDGER_FILE, REGISTRY_FILE, SUMMARY_FILE):
        if not (root / required).exists():
            raise FileNotFoundError(f"run directory is missing {required}")
    if not (root / ARTIFACT_DIR).is_dir():
        raise FileNotFoundError(f"run directory is missing {ARTIFACT_DIR}/")
    registry = lg.load_registry(root / REGISTRY_FILE)
    book = lg.load_ledger(root / LEDGER_FILE, registry)
    store = lg.ArtifactStore.load_dir(root / ARTIFACT_DIR)
    summary = lg.canonical_decode((root / SUMMARY_FILE).read_bytes())
    return book, store, summary


# ---------------------------------------------------------------------------
# Run configuration (the CLI's input format)
# ---------------------------------------------------------------------------

def build_run_inputs(config: dict) -> tuple[ProjectSpec, list[Dataset], Dataset, list[FaultSpec]]:
    """Turn a configuration document into validated run inputs.

    The document has a "spec" section (the full project specification), a
    "data" section (synthetic parameters or CSV paths), and an optional
    "faults" list.
    """
    if "spec" not in config:
        raise ConfigError("configuration needs a 'spec' section")
    spec = ProjectSpec.from_doc(config["spec"])
    spec.validate()

    data_cfg = config.get("data", {})
    source = data_cfg.get("source")
    if source == "synthetic":
        syn = data_cfg.get("synthetic", {})
        per_class = syn.get("per_class", 25)
        class_sep = syn.get("class_sep", 3.0)
        holdout_per_class = syn.get("holdout_per_class", per_class)
        d, c = spec.num_features, spec.num_classes
        # One shared stream for the class means: all parties and the hold-out
        # set describe the same task, differing only in their sample noise.
        means_seed = splitmix64((spec.master_seed ^ _MEANS_TAG) & MASK64)
        party_data = [
            generate_synthetic_dataset(
                splitmix64((spec.master_seed ^ i) & MASK64), d, c, per_class, class_sep,
                means_seed=means_seed,
            )
            for i in range(spec.num_parties)
        ]
        # The hold-out set uses the seed slot one past the last party.
        holdout = generate_synthetic_dataset(
            splitmix64((spec.master_seed ^ spec.num_parties) & MASK64),
            d, c, holdout_per_class, class_sep, means_seed=means_seed,
        )
    elif source == "csv":
        csv_cfg = data_cfg.get("csv", {})
        paths = csv_cfg.get("parties", [])
        if len(paths) != spec.num_parties:
            raise ConfigError(
                f"need {spec.num_parties} party CSV paths, got {len(paths)}"
            )
        if "holdout" not in csv_cfg:
            raise ConfigError("csv data needs a 'holdout' path")
        party_data = [load_dataset_csv(p) for p in paths]
        holdout = load_dataset_csv(csv_cfg["holdout"])
    else:
        raise ConfigError(f"unknown data source {source!r} (use 'synthetic' or 'csv')")

    faults = [FaultSpec.from_doc(doc) for doc in config.get("faults", [])]
    for f in faults:
        f.validate(spec)
    return spec, party_data, holdout, faults


# ---------------------------------------------------------------------------
# Ledger-file tampering (attack simulation for the tamper-evidence tests)
# ---------------------------------------------------------------------------

def _mutate_first_leaf(value):
    """Return a copy with the first scalar leaf (canonical order) altered."""
    if isinstance(value, str):
        return (chr(ord(value[0]) ^ 1) + value[1:]) if value else "x", True
    if isinstance(value, bool):
        return not value, True
    if isinstance(value, int):
        return value + 1, True
    if isinstance(value, float):
        return value + 1.0, True
    if isinstance(value, list):
        items = list(value)
        for i, item in enumerate(items):
            mutated, done = _mutate_first_leaf(item)
            if done:
                items[i] = mutated
                return items, True
        return items, False
    if isinstance(value, dict):
        out = dict(value)
        for key in sorted(out):
            mutated, done = _mutate_first_leaf(out[key])
            if done:
                out[key] = mutated
                return out, True
        return out, False
    return value, False


def tamper_ledger_file(path: str | Path, entry: int, mode: str) -> None:
    """Corrupt a persisted ledger in place: the attack half of the test bench.

    flip-byte rewrites the entry with one payload leaf minimally changed,
    drop-entry removes the line, reorder swaps it with its neighbor.
    """
    path = Path(path)
    lines = path.read_bytes().split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    if not 0 <= entry < len(lines):
        raise ValueError(f"entry {entry} out of range (ledger has {len(lines)} entries)")

    if mode == "flip-byte":
        doc = json.loads(lines[entry].decode("utf-8"))
        mutated, done = _mutate_first_leaf(doc.get("payload", {}))
        if not done:
            mutated = {"tampered": True}
        doc["payload"] = mutated
        lines[entry] = lg.canonical_encode(doc)
    elif mode == "drop-entry":
        del lines[entry]
    elif mode == "reorder":
        if len(lines) < 2:
            raise ValueError("cannot reorder a single-entry ledger")
        other = entry + 1 if entry + 1 < len(lines) else entry - 1
        lines[entry], lines[other] = lines[other], lines[entry]
    else:
        raise ValueError(f"unknown tamper mode {mode!r}")

    path.write_bytes(b"\n".join(lines) + b"\n" if lines else b"")
