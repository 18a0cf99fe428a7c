"""Accountable federated learning: instrumented simulation, tamper-evident
claim ledger, audit predicates, and FactSheet generation."""

from .flcore import (
    Dataset,
    FusionConfig,
    ModelWeights,
    ProjectSpec,
    Query,
    Reply,
    RoundMetrics,
    check_early_stop,
    dataset_digest,
    evaluate,
    fedavg,
    generate_synthetic_dataset,
    krum_select,
    local_train,
    preprocess,
)
from .factsheet import FactSheet, build_factsheet, render
from .ledger import (
    ActorId,
    ArtifactStore,
    ClaimEnvelope,
    KeyPair,
    Ledger,
    canonical_decode,
    canonical_encode,
    digest,
    generate_keypair,
)
from .protocol import (
    FaultSpec,
    FederationRun,
    check_quorum,
    party_replay_local,
    replay_fusion,
    run_federation,
)
from .verifier import (
    Fact,
    FactBase,
    VerificationReport,
    VerificationResult,
    evaluate_all,
    evaluate_predicate,
    extract_facts,
)

__version__ = "0.1.0"

__all__ = [
    "ActorId",
    "ArtifactStore",
    "ClaimEnvelope",
    "Dataset",
    "Fact",
    "FactBase",
    "FactSheet",
    "FaultSpec",
    "FederationRun",
    "FusionConfig",
    "KeyPair",
    "Ledger",
    "ModelWeights",
    "ProjectSpec",
    "Query",
    "Reply",
    "RoundMetrics",
    "VerificationReport",
    "VerificationResult",
    "build_factsheet",
    "canonical_decode",
    "canonical_encode",
    "check_early_stop",
    "check_quorum",
    "dataset_digest",
    "digest",
    "evaluate",
    "evaluate_all",
    "evaluate_predicate",
    "extract_facts",
    "fedavg",
    "generate_keypair",
    "generate_synthetic_dataset",
    "krum_select",
    "local_train",
    "party_replay_local",
    "preprocess",
    "render",
    "replay_fusion",
    "run_federation",
]
