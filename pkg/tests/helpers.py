"""Shared builders for test federations."""

from __future__ import annotations

from flaudit import (
    Dataset,
    FusionConfig,
    ProjectSpec,
    generate_synthetic_dataset,
)
from flaudit.rng import MASK64, splitmix64


def make_spec(
    n: int = 5,
    rounds: int = 10,
    quorum: int | None = None,
    algorithm: str = "fedavg",
    byzantine_f: int = 1,
    learning_rate: float = 0.1,
    epochs: int = 1,
    termination_accuracy: float | None = None,
    num_features: int = 4,
    num_classes: int = 8,
    master_seed: int = 42,
    preprocess_routines: tuple | None = None,
    postprocess_routine: dict | None = None,
) -> ProjectSpec:
    if preprocess_routines is None:
        preprocess_routines = ({"id": "minmax_v1", "params": {}},)
    if postprocess_routine is None:
        postprocess_routine = {"id": "identity_v1", "params": {}}
    return ProjectSpec(
        preprocess_routines=preprocess_routines,
        local_routine="softmax_gd_v1",
        fusion=FusionConfig(algorithm=algorithm, byzantine_f=byzantine_f),
        rounds=rounds,
        num_parties=n,
        local_hyperparams={"learning_rate": learning_rate, "epochs": epochs},
        global_hyperparams={
            "max_timeout_s": 600,
            "quorum": n if quorum is None else quorum,
            "termination_accuracy": termination_accuracy,
        },
        model_shape={"num_features": num_features, "num_classes": num_classes},
        postprocess_routine=postprocess_routine,
        master_seed=master_seed,
    )


def make_inputs(
    spec: ProjectSpec, per_class: int = 25, class_sep: float = 3.0, holdout_per_class: int = 10
) -> tuple[list[Dataset], Dataset]:
    """Synthetic party datasets plus hold-out, using the run-config seed rule."""
    from flaudit.protocol import _MEANS_TAG

    d, c = spec.num_features, spec.num_classes
    means_seed = splitmix64((spec.master_seed ^ _MEANS_TAG) & MASK64)
    party_data = [
        generate_synthetic_dataset(
            splitmix64((spec.master_seed ^ i) & MASK64), d, c, per_class, class_sep,
            means_seed=means_seed,
        )
        for i in range(spec.num_parties)
    ]
    holdout = generate_synthetic_dataset(
        splitmix64((spec.master_seed ^ spec.num_parties) & MASK64),
        d, c, holdout_per_class, class_sep, means_seed=means_seed,
    )
    return party_data, holdout


def make_config_doc(
    spec: ProjectSpec,
    per_class: int = 25,
    class_sep: float = 3.0,
    holdout_per_class: int = 10,
    faults: list[dict] | None = None,
) -> dict:
    """The JSON run configuration matching make_inputs."""
    return {
        "spec": spec.to_doc(),
        "data": {
            "source": "synthetic",
            "synthetic": {
                "per_class": per_class,
                "class_sep": class_sep,
                "holdout_per_class": holdout_per_class,
            },
        },
        "faults": faults or [],
    }
