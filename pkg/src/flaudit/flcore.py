"""Numerical core of the federation: data, local training, fusion, metrics.

Every routine here is a pure function of its inputs and free of hidden
randomness, so replies, fused models, and evaluation rows can be replayed
bit-for-bit from recorded inputs.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import MASK64, SplitMix64

LOCAL_ROUTINE_ID = "softmax_gd_v1"

PREPROCESS_ROUTINES = ("minmax_v1", "reorder_v1")
POSTPROCESS_ROUTINES = ("identity_v1", "clip_weights_v1")
FUSION_ALGORITHMS = ("fedavg", "krum")


class ShapeError(ValueError):
    """Model and data dimensions do not line up."""


class UnknownRoutineError(ValueError):
    """Routine id not in the shipped catalogue."""


class InsufficientRepliesError(ValueError):
    """Too few replies for the requested byzantine tolerance."""


class ConfigError(ValueError):
    """Project specification or run configuration violates an invariant."""


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Feature matrix with integer class labels and self-attested provenance."""

    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ShapeError("features must be a 2-D matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeError("labels length must equal the number of feature rows")
        if self.features.size and not np.isfinite(self.features).all():
            raise ValueError("features contain non-finite values")

    @property
    def num_rows(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]


def generate_synthetic_dataset(
    seed: int,
    d: int,
    num_classes: int,
    per_class: int,
    class_sep: float,
    means_seed: int | None = None,
) -> Dataset:
    """Gaussian blobs: one unit-variance cluster per class.

    Class means are drawn uniformly from [-class_sep, class_sep]^d, then
    per_class samples per class, all via splitmix64 streams, so the dataset
    is a pure function of its seeds. When means_seed is given the means come
    from their own stream: datasets generated with different sample seeds but
    a shared means_seed describe the same classification task, which is what
    a federation of parties plus a hold-out set needs.
    """
    if d < 1 or num_classes < 2 or per_class < 1:
        raise ConfigError("need d >= 1, num_classes >= 2, per_class >= 1")
    rng = SplitMix64(seed)
    means_rng = rng if means_seed is None else SplitMix64(means_seed)
    means = [
        [(2.0 * means_rng.next_float() - 1.0) * class_sep for _ in range(d)]
        for _ in range(num_classes)
    ]
    n = num_classes * per_class
    features = np.empty((n, d), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64)
    row = 0
    for c in range(num_classes):
        for _ in range(per_class):
            for j in range(d):
                features[row, j] = means[c][j] + rng.next_gaussian()
            labels[row] = c
            row += 1
    source = (
        f"synthetic:seed={seed & MASK64}:d={d}:classes={num_classes}"
        f":per_class={per_class}:sep={class_sep}"
    )
    if means_seed is not None:
        source += f":means_seed={means_seed & MASK64}"
    return Dataset(features=features, labels=labels,
                   provenance={"source": source, "size": n})


def load_dataset_csv(path: str | Path) -> Dataset:
    """Read a dataset from CSV: header row, d feature columns, then `label`."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1] != "label":
            raise ConfigError(f"{path.name}: last CSV column must be named 'label'")
        feats: list[list[float]] = []
        labels: list[int] = []
        for line in reader:
            if not line:
                continue
            feats.append([float(v) for v in line[:-1]])
            labels.append(int(line[-1]))
    features = np.asarray(feats, dtype=np.float64).reshape(len(feats), len(header) - 1)
    return Dataset(
        features=features,
        labels=np.asarray(labels, dtype=np.int64),
        provenance={"source": f"csv:{path.name}", "size": len(labels)},
    )


def preprocess(data: Dataset, routines: list[dict]) -> Dataset:
    """Apply preprocessing steps in listed order; row count never changes.

    minmax_v1 rescales each column to [0, 1] using that dataset's own column
    min/max (constant columns map to 0); reorder_v1 permutes columns so that
    output column j is input column params["permutation"][j].
    """
    features = data.features.copy()
    for step in routines:
        rid = step.get("id")
        params = step.get("params", {})
        if rid == "minmax_v1":
            if features.size:
                lo = features.min(axis=0)
                hi = features.max(axis=0)
                span = hi - lo
                shifted = features - lo
                features = np.divide(
                    shifted, span, out=np.zeros_like(shifted), where=span > 0
                )
        elif rid == "reorder_v1":
            perm = list(params.get("permutation", []))
            if sorted(perm) != list(range(features.shape[1])):
                raise UnknownRoutineError(
                    f"reorder_v1 permutation {perm} is not a bijection on "
                    f"{features.shape[1]} columns"
                )
            features = features[:, perm]
        else:
            raise UnknownRoutineError(f"unknown preprocessing routine {rid!r}")
    return Dataset(features=features, labels=data.labels.copy(), provenance=dict(data.provenance))


def dataset_digest(data: Dataset) -> str:
    """SHA-512 over the canonical row-major text rendering of the dataset.

    Each row is the feature values followed by the label, comma-separated and
    rendered as shortest round-trip decimals; rows are newline-separated.
    """
    rows = []
    for i in range(data.num_rows):
        cells = [repr(float(v)) for v in data.features[i]]
        cells.append(str(int(data.labels[i])))
        rows.append(",".join(cells))
    return hashlib.sha512("\n".join(rows).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Project specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FusionConfig:
    algorithm: str
    byzantine_f: int = 1  # tolerated bad replies; used by krum only

    def to_doc(self) -> dict:
        return {"algorithm": self.algorithm, "byzantine_f": self.byzantine_f}

    @classmethod
    def from_doc(cls, doc: dict) -> "FusionConfig":
        return cls(algorithm=doc["algorithm"], byzantine_f=doc.get("byzantine_f", 1))


@dataclass(frozen=True)
class ProjectSpec:
    """Everything the owner prescribes for one federation run."""

    preprocess_routines: tuple
    local_routine: str
    fusion: FusionConfig
    rounds: int
    num_parties: int
    local_hyperparams: dict  # learning_rate, epochs
    global_hyperparams: dict  # max_timeout_s, quorum, termination_accuracy
    model_shape: dict  # num_features, num_classes
    postprocess_routine: dict  # id, params
    master_seed: int
    hash_routine: str = "sha512"

    @property
    def learning_rate(self) -> float:
        return self.local_hyperparams["learning_rate"]

    @property
    def epochs(self) -> int:
        return self.local_hyperparams["epochs"]

    @property
    def quorum(self) -> int:
        return self.global_hyperparams["quorum"]

    @property
    def termination_accuracy(self) -> float | None:
        return self.global_hyperparams.get("termination_accuracy")

    @property
    def num_features(self) -> int:
        return self.model_shape["num_features"]

    @property
    def num_classes(self) -> int:
        return self.model_shape["num_classes"]

    def to_doc(self) -> dict:
        return {
            "preprocess_routines": [dict(r) for r in self.preprocess_routines],
            "local_routine": self.local_routine,
            "fusion_routine": self.fusion.to_doc(),
            "hash_routine": self.hash_routine,
            "rounds": self.rounds,
            "num_parties": self.num_parties,
            "local_hyperparams": dict(self.local_hyperparams),
            "global_hyperparams": dict(self.global_hyperparams),
            "model_shape": dict(self.model_shape),
            "postprocess_routine": dict(self.postprocess_routine),
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ProjectSpec":
        return cls(
            preprocess_routines=tuple(doc.get("preprocess_routines", [])),
            local_routine=doc["local_routine"],
            fusion=FusionConfig.from_doc(doc["fusion_routine"]),
            rounds=doc["rounds"],
            num_parties=doc["num_parties"],
            local_hyperparams=dict(doc["local_hyperparams"]),
            global_hyperparams=dict(doc["global_hyperparams"]),
            model_shape=dict(doc["model_shape"]),
            postprocess_routine=dict(doc.get("postprocess_routine", {"id": "identity_v1", "params": {}})),
            master_seed=doc["master_seed"],
            hash_routine=doc.get("hash_routine", "sha512"),
        )

    def validate(self) -> None:
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.num_parties < 1:
            raise ConfigError("num_parties must be >= 1")
        if not 1 <= self.quorum <= self.num_parties:
            raise ConfigError(
                f"quorum must lie in [1, num_parties], got {self.quorum} with "
                f"{self.num_parties} parties"
            )
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        ta = self.termination_accuracy
        if ta is not None and not 0 < ta <= 1:
            raise ConfigError("termination_accuracy must lie in (0, 1] or be null to disable")
        if self.num_features < 1 or self.num_classes < 2:
            raise ConfigError("model_shape needs num_features >= 1 and num_classes >= 2")
        if self.hash_routine != "sha512":
            raise ConfigError(f"unsupported hash routine {self.hash_routine!r}")
        if self.local_routine != LOCAL_ROUTINE_ID:
            raise ConfigError(f"unknown local routine {self.local_routine!r}")
        if self.fusion.algorithm not in FUSION_ALGORITHMS:
            raise ConfigError(f"unknown fusion algorithm {self.fusion.algorithm!r}")
        if self.fusion.algorithm == "krum":
            if self.fusion.byzantine_f < 0:
                raise ConfigError("byzantine_f must be non-negative")
            need = 2 * self.fusion.byzantine_f + 3
            if self.quorum < need:
                raise ConfigError(
                    f"krum with byzantine_f={self.fusion.byzantine_f} needs quorum >= {need}"
                )
        for step in self.preprocess_routines:
            if step.get("id") not in PREPROCESS_ROUTINES:
                raise ConfigError(f"unknown preprocessing routine {step.get('id')!r}")
        if self.postprocess_routine.get("id") not in POSTPROCESS_ROUTINES:
            raise ConfigError(
                f"unknown post-processing routine {self.postprocess_routine.get('id')!r}"
            )


# ---------------------------------------------------------------------------
# Models, queries, replies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelWeights:
    """Softmax-regression weights: one row per class, last column is the bias."""

    w: np.ndarray  # (C, d+1) float64

    def __post_init__(self) -> None:
        object.__setattr__(self, "w", np.asarray(self.w, dtype=np.float64))
        if self.w.ndim != 2:
            raise ShapeError("weights must be a 2-D matrix")
        if not np.isfinite(self.w).all():
            raise ValueError("weights contain non-finite values")

    @property
    def num_classes(self) -> int:
        return self.w.shape[0]

    @property
    def num_features(self) -> int:
        return self.w.shape[1] - 1

    @classmethod
    def zeros(cls, num_classes: int, num_features: int) -> "ModelWeights":
        return cls(np.zeros((num_classes, num_features + 1), dtype=np.float64))

    def to_doc(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "num_features": self.num_features,
            "weights": [[float(v) for v in row] for row in self.w],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ModelWeights":
        w = np.asarray(doc["weights"], dtype=np.float64)
        if w.shape != (doc["num_classes"], doc["num_features"] + 1):
            raise ShapeError("weight matrix does not match the declared shape")
        return cls(w)


@dataclass(frozen=True)
class Query:
    round: int
    model: ModelWeights
    hyperparams: dict

    def to_doc(self) -> dict:
        return {
            "hyperparams": dict(self.hyperparams),
            "model": self.model.to_doc(),
            "round": self.round,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Query":
        return cls(
            round=doc["round"],
            model=ModelWeights.from_doc(doc["model"]),
            hyperparams=dict(doc["hyperparams"]),
        )


@dataclass(frozen=True)
class Reply:
    round: int
    party: int
    model: ModelWeights
    sample_count: int

    def to_doc(self) -> dict:
        return {
            "model": self.model.to_doc(),
            "party": self.party,
            "round": self.round,
            "sample_count": self.sample_count,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Reply":
        return cls(
            round=doc["round"],
            party=doc["party"],
            model=ModelWeights.from_doc(doc["model"]),
            sample_count=doc["sample_count"],
        )


# ---------------------------------------------------------------------------
# Local training
# ---------------------------------------------------------------------------

def _augment(features: np.ndarray) -> np.ndarray:
    return np.hstack([features, np.ones((features.shape[0], 1))])


def _check_shapes(model: ModelWeights, data: Dataset) -> None:
    if model.num_features != data.num_features:
        raise ShapeError(
            f"model expects {model.num_features} features, data has {data.num_features}"
        )
    if data.num_rows and int(data.labels.max()) >= model.num_classes:
        raise ShapeError("label index exceeds the model's class count")


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_loss(model: ModelWeights, data: Dataset) -> float:
    """Mean cross-entropy of the softmax model over the dataset."""
    _check_shapes(model, data)
    logits = _augment(data.features) @ model.w.T
    zmax = logits.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
    picked = logits[np.arange(data.num_rows), data.labels]
    return float(np.mean(lse - picked))


def gradient(model: ModelWeights, data: Dataset) -> np.ndarray:
    """Analytic gradient of the mean cross-entropy w.r.t. the weight matrix."""
    _check_shapes(model, data)
    x = _augment(data.features)
    probs = _softmax(x @ model.w.T)
    onehot = np.zeros_like(probs)
    onehot[np.arange(data.num_rows), data.labels] = 1.0
    return (probs - onehot).T @ x / data.num_rows


def local_train(query: Query, data: Dataset, party: int = 0) -> Reply:
    """Run full-batch gradient descent for the queried number of epochs.

    No sampling, no shuffling: with equal inputs the returned weights are
    bit-identical, which is what makes recorded replies replayable.
    """
    _check_shapes(query.model, data)
    lr = query.hyperparams["learning_rate"]
    epochs = query.hyperparams["epochs"]
    if data.num_rows == 0:
        raise ShapeError("cannot train on an empty dataset")
    w = query.model.w.copy()
    for _ in range(epochs):
        w -= lr * gradient(ModelWeights(w), data)
    return Reply(round=query.round, party=party, model=ModelWeights(w), sample_count=data.num_rows)


# ---------------------------------------------------------------------------
# Fusion
# ---------------------------------------------------------------------------

def _check_reply_shapes(replies: list[Reply]) -> None:
    shape = replies[0].model.w.shape
    for r in replies:
        if r.model.w.shape != shape:
            raise ShapeError("reply weight shapes differ")


def fedavg(replies: list[Reply]) -> ModelWeights:
    """Sample-count weighted mean of reply weights.

    Accumulation runs in ascending party-index order so a replay with the
    same replies reproduces the result bit-for-bit.
    """
    if not replies:
        raise ValueError("fedavg needs at least one reply")
    _check_reply_shapes(replies)
    ordered = sorted(replies, key=lambda r: r.party)
    total = sum(r.sample_count for r in ordered)
    acc = np.zeros_like(ordered[0].model.w)
    for r in ordered:
        acc += (r.sample_count / total) * r.model.w
    return ModelWeights(acc)


def krum_select(replies: list[Reply], byzantine_f: int) -> tuple[int, ModelWeights]:
    """Pick the reply whose squared distances to its nearest peers are smallest.

    Each reply is scored by the sum of squared L2 distances to its m-f-2
    closest other replies; the minimum-score reply wins, ties going to the
    lowest party index, and its weights are returned verbatim.
    """
    m = len(replies)
    if m < 2 * byzantine_f + 3:
        raise InsufficientRepliesError(
            f"krum with byzantine_f={byzantine_f} needs at least {2 * byzantine_f + 3} "
            f"replies, got {m}"
        )
    _check_reply_shapes(replies)
    ordered = sorted(replies, key=lambda r: r.party)
    flats = [r.model.w.ravel() for r in ordered]
    keep = m - byzantine_f - 2
    scores = np.empty(m, dtype=np.float64)
    for i in range(m):
        dists = np.sort(
            np.array([float(np.sum((flats[i] - flats[j]) ** 2)) for j in range(m) if j != i])
        )
        scores[i] = float(np.sum(dists[:keep]))
    best = int(np.argmin(scores))  # first minimum = lowest party index
    return ordered[best].party, ordered[best].model


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RoundMetrics:
    round: int
    loss: float
    acc: float
    f1_micro: float
    precision_micro: float
    recall_micro: float
    f1_macro: float
    precision_macro: float
    recall_macro: float
    f1_weighted: float
    precision_weighted: float
    recall_weighted: float

    def to_doc(self) -> dict:
        return {
            "loss": self.loss,
            "acc": self.acc,
            "f1_micro": self.f1_micro,
            "precision_micro": self.precision_micro,
            "recall_micro": self.recall_micro,
            "f1_macro": self.f1_macro,
            "precision_macro": self.precision_macro,
            "recall_macro": self.recall_macro,
            "f1_weighted": self.f1_weighted,
            "precision_weighted": self.precision_weighted,
            "recall_weighted": self.recall_weighted,
        }

    @classmethod
    def from_doc(cls, doc: dict, round: int = 0) -> "RoundMetrics":
        return cls(round=round, **{k: doc[k] for k in doc if k != "round"})


def classification_metrics(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> dict:
    """Accuracy plus per-class precision/recall/F1 averaged three ways.

    Classes absent from both labels and predictions contribute zero scores to
    the macro average (the denominator stays num_classes). Micro averages are
    computed from aggregate counts, which for single-label data makes
    f1_micro equal accuracy exactly.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    n = len(y_true)
    conf = np.bincount(y_true * num_classes + y_pred, minlength=num_classes * num_classes)
    conf = conf.reshape(num_classes, num_classes)
    tp = np.diag(conf).astype(np.int64)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    support = conf.sum(axis=1)

    def _safe(numer: np.ndarray, denom: np.ndarray) -> np.ndarray:
        return np.divide(
            numer.astype(np.float64),
            denom.astype(np.float64),
            out=np.zeros(num_classes, dtype=np.float64),
            where=denom > 0,
        )

    precision = _safe(tp, tp + fp)
    recall = _safe(tp, tp + fn)
    f1 = _safe(2 * tp, 2 * tp + fp + fn)

    tp_total = int(tp.sum())
    fp_total = int(fp.sum())
    fn_total = int(fn.sum())
    acc = tp_total / n
    return {
        "acc": acc,
        "precision_micro": tp_total / (tp_total + fp_total),
        "recall_micro": tp_total / (tp_total + fn_total),
        "f1_micro": (2 * tp_total) / (2 * tp_total + fp_total + fn_total),
        "precision_macro": float(precision.sum() / num_classes),
        "recall_macro": float(recall.sum() / num_classes),
        "f1_macro": float(f1.sum() / num_classes),
        "precision_weighted": float((support * precision).sum() / n),
        "recall_weighted": float((support * recall).sum() / n),
        "f1_weighted": float((support * f1).sum() / n),
    }


def evaluate(model: ModelWeights, data: Dataset, round_index: int = 0) -> RoundMetrics:
    """Score a model on a dataset: loss plus the full metric family.

    Predictions are the per-row argmax over class logits, ties resolving to
    the lowest class index.
    """
    _check_shapes(model, data)
    if data.num_rows == 0:
        raise ShapeError("cannot evaluate on an empty dataset")
    logits = _augment(data.features) @ model.w.T
    preds = np.argmax(logits, axis=1)
    stats = classification_metrics(data.labels, preds, model.num_classes)
    return RoundMetrics(round=round_index, loss=cross_entropy_loss(model, data), **stats)


def check_early_stop(metrics: RoundMetrics, spec: ProjectSpec) -> bool:
    """True when hold-out accuracy has reached the configured threshold."""
    threshold = spec.termination_accuracy
    if threshold is None:
        return False
    return metrics.acc >= threshold


# ---------------------------------------------------------------------------
# Post-processing
# ---------------------------------------------------------------------------

def apply_postprocess(model: ModelWeights, routine: dict) -> ModelWeights:
    rid = routine.get("id")
    params = routine.get("params", {})
    if rid == "identity_v1":
        return ModelWeights(model.w.copy())
    if rid == "clip_weights_v1":
        limit = float(params.get("limit", 1.0))
        return ModelWeights(np.clip(model.w, -limit, limit))
    raise UnknownRoutineError(f"unknown post-processing routine {rid!r}")
