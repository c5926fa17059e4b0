"""Local training, aggregation, and PA-side update verification.

Two trainers are provided. The synthetic trainer perturbs the global
model and reports scripted accuracies, which makes whole-protocol runs
fully reproducible. The tiny classifier is a logistic regression trained
by minibatch gradient descent on a generated two-class Gaussian dataset
partitioned across the training nodes.

Verified updates are split by measured accuracy into ALMG (usable for
aggregation) and ULMG (kept out of the aggregate and penalized); updates
whose digest does not match the on-chain commitment are rejected outright.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Protocol, Sequence

import numpy as np

from .pipeline import ModelParams, canonical_serialize, hash_digest
from .rng import generator_for

ALMG = "ALMG"
ULMG = "ULMG"

SYNTHETIC = "synthetic"
TINY_CLASSIFIER = "tiny-classifier"


class FlError(Exception):
    pass


class LayoutMismatchError(FlError):
    pass


class NoUpdatesError(FlError):
    pass


# ---------------------------------------------------------------------------
# Data generation and partitioning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, dim)
    labels: np.ndarray  # (n,) in {0, 1}

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass(frozen=True)
class DataConfig:
    dim: int = 4
    separation: float = 4.0  # distance between the two class means
    samples_per_node: int = 100
    pa_eval_size: int = 200
    test_size: int = 400
    partition: str = "iid"  # or "label-skew"
    skew: float = 0.8

    def __post_init__(self):
        if self.dim < 1 or self.samples_per_node < 1:
            raise ValueError("dim and samples_per_node must be positive")
        if self.partition not in ("iid", "label-skew"):
            raise ValueError(f"unknown partition scheme {self.partition!r}")
        if not 0.5 <= self.skew <= 1.0:
            raise ValueError("skew must be in [0.5, 1.0]")


@dataclass(frozen=True)
class FederatedData:
    partitions: Mapping[int, Dataset]
    pa_eval: Dataset  # held out for PA-side accuracy checks
    global_test: Dataset  # held out for global accuracy / contribution scores


def make_classification_data(n: int, cfg: DataConfig, rng: np.random.Generator) -> Dataset:
    """Two Gaussian blobs separated by cfg.separation along the diagonal."""
    labels = rng.integers(0, 2, size=n)
    offset = cfg.separation / (2.0 * math.sqrt(cfg.dim))
    signs = labels.astype(np.float64) * 2.0 - 1.0
    features = rng.normal(size=(n, cfg.dim)) + signs[:, None] * offset
    return Dataset(features=features, labels=labels.astype(np.int64))


def partition_iid(data: Dataset, nodes: Sequence[int], rng: np.random.Generator) -> dict[int, Dataset]:
    order = rng.permutation(len(data))
    shares = np.array_split(order, len(nodes))
    return {
        node: Dataset(data.features[idx], data.labels[idx])
        for node, idx in zip(sorted(nodes), shares)
    }


def partition_label_skew(
    data: Dataset, nodes: Sequence[int], skew: float, rng: np.random.Generator
) -> dict[int, Dataset]:
    """Each node draws a `skew` fraction of its samples from one majority class."""
    pools = [list(rng.permutation(np.flatnonzero(data.labels == c))) for c in (0, 1)]
    nodes = sorted(nodes)
    per_node = len(data) // len(nodes)
    out = {}
    for rank, node in enumerate(nodes):
        major = rank % 2
        want_major = int(round(skew * per_node))
        take = []
        for pool, want in ((pools[major], want_major), (pools[1 - major], per_node - want_major)):
            grab = min(want, len(pool))
            take.extend(pool[:grab])
            del pool[:grab]
        # top up from whatever is left if one class pool ran dry
        while len(take) < per_node and (pools[0] or pools[1]):
            pool = pools[0] if pools[0] else pools[1]
            take.append(pool.pop(0))
        idx = np.array(take, dtype=np.int64)
        out[node] = Dataset(data.features[idx], data.labels[idx])
    return out


def generate_federated_data(
    lt_nodes: Sequence[int], cfg: DataConfig, seed: int
) -> FederatedData:
    rng = generator_for(seed, "dataset")
    train_total = cfg.samples_per_node * len(lt_nodes)
    full = make_classification_data(
        train_total + cfg.pa_eval_size + cfg.test_size, cfg, rng
    )
    train = Dataset(full.features[:train_total], full.labels[:train_total])
    pa_eval = Dataset(
        full.features[train_total : train_total + cfg.pa_eval_size],
        full.labels[train_total : train_total + cfg.pa_eval_size],
    )
    global_test = Dataset(
        full.features[train_total + cfg.pa_eval_size :],
        full.labels[train_total + cfg.pa_eval_size :],
    )
    if cfg.partition == "iid":
        partitions = partition_iid(train, lt_nodes, rng)
    else:
        partitions = partition_label_skew(train, lt_nodes, cfg.skew, rng)
    return FederatedData(partitions=partitions, pa_eval=pa_eval, global_test=global_test)


# ---------------------------------------------------------------------------
# The tiny classifier: logistic regression on a flat parameter vector
# ---------------------------------------------------------------------------

def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _split_params(p: ModelParams, dim: int) -> tuple[np.ndarray, float]:
    if len(p) != dim + 1:
        raise LayoutMismatchError(
            f"classifier on {dim}-dim data needs {dim + 1} weights, got {len(p)}"
        )
    return p.values[:-1].copy(), float(p.values[-1])


def evaluate_accuracy(p: ModelParams, data: Dataset) -> float:
    if len(data) == 0:
        raise FlError("cannot evaluate on an empty dataset")
    w, b = _split_params(p, data.features.shape[1])
    predicted = (data.features @ w + b) > 0.0
    return float(np.mean(predicted == (data.labels == 1)))


def log_loss(p: ModelParams, data: Dataset) -> float:
    if len(data) == 0:
        raise FlError("cannot evaluate on an empty dataset")
    w, b = _split_params(p, data.features.shape[1])
    z = data.features @ w + b
    y = data.labels.astype(np.float64)
    # max(z,0) - z*y + log(1+exp(-|z|)) is the overflow-safe cross entropy
    return float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))


# ---------------------------------------------------------------------------
# Trainers
# ---------------------------------------------------------------------------

@dataclass
class TrainerSpec:
    kind: str = SYNTHETIC
    local_epochs: int = 5
    learning_rate: float = 0.01
    batch_size: int = 10
    data_partition: Optional[Mapping[int, Dataset]] = None
    perturbation_scale: float = 0.01  # synthetic trainer only

    def __post_init__(self):
        if self.kind not in (SYNTHETIC, TINY_CLASSIFIER):
            raise ValueError(f"unknown trainer kind {self.kind!r}")
        if self.local_epochs < 1 or self.batch_size < 1:
            raise ValueError("local_epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")


def local_train(
    global_params: ModelParams, spec: TrainerSpec, node: int, round: int, seed: int
) -> ModelParams:
    """One node's local update, deterministic per (node, round, seed)."""
    if spec.kind == SYNTHETIC:
        rng = generator_for(seed, "train", node, round)
        noise = rng.normal(0.0, 1.0, size=len(global_params)) * spec.perturbation_scale
        return ModelParams(global_params.values + noise, global_params.layout_id)

    if spec.data_partition is None or node not in spec.data_partition:
        raise FlError(f"no data partition for node {node}")
    data = spec.data_partition[node]
    dim = data.features.shape[1]
    w, b = _split_params(global_params, dim)
    y = data.labels.astype(np.float64)
    for epoch in range(spec.local_epochs):
        rng = generator_for(seed, "train", node, round, epoch)
        order = rng.permutation(len(data))
        for start in range(0, len(data), spec.batch_size):
            idx = order[start : start + spec.batch_size]
            xb, yb = data.features[idx], y[idx]
            g = _sigmoid(xb @ w + b) - yb
            w -= spec.learning_rate * (xb.T @ g) / len(idx)
            b -= spec.learning_rate * float(np.mean(g))
    return ModelParams(np.append(w, b), global_params.layout_id)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def fed_avg(updates: Sequence[ModelParams]) -> ModelParams:
    """Element-wise mean of the updates.

    Each coordinate is summed with math.fsum, so the result is exactly
    invariant under permutation of the inputs.
    """
    if not updates:
        raise NoUpdatesError("nothing to aggregate")
    layout = updates[0].layout_id
    length = len(updates[0])
    for u in updates[1:]:
        if u.layout_id != layout or len(u) != length:
            raise LayoutMismatchError("updates do not share one layout")
    n = len(updates)
    mean = np.fromiter(
        (math.fsum(col) / n for col in zip(*(u.values for u in updates))),
        dtype=np.float64,
        count=length,
    )
    return ModelParams(mean, layout)


# ---------------------------------------------------------------------------
# PA-side accuracy verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UpdateClassification:
    verdict: str  # ALMG or ULMG
    measured_accuracy: float
    reference_accuracy: float


class Evaluator(Protocol):
    """Measures an update's accuracy; scripted evaluators key on (sender, round)."""

    def measure(self, params: ModelParams, sender: int, round: int) -> float: ...

    def __len__(self) -> int: ...


@dataclass(frozen=True)
class DatasetEvaluator:
    data: Dataset

    def measure(self, params: ModelParams, sender: int, round: int) -> float:
        return evaluate_accuracy(params, self.data)

    def __len__(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class SyntheticAccuracyModel:
    """Scripted per-(node, round) accuracies for protocol-level experiments."""

    base: float = 0.95
    jitter: float = 0.01
    node_accuracy: Mapping[int, float] = field(default_factory=dict)
    seed: int = 0

    def accuracy(self, node: int, round: int) -> float:
        acc = self.node_accuracy.get(node, self.base)
        if self.jitter > 0:
            rng = generator_for(self.seed, "acc-jitter", node, round)
            acc += float(rng.uniform(-self.jitter, self.jitter))
        return min(1.0, max(0.0, acc))


@dataclass(frozen=True)
class ScriptedEvaluator:
    script: SyntheticAccuracyModel

    def measure(self, params: ModelParams, sender: int, round: int) -> float:
        return self.script.accuracy(sender, round)

    def __len__(self) -> int:
        return 1


def classify_update(
    candidate: ModelParams,
    prev_global_acc: float,
    t_acc: float,
    eval_set: Evaluator,
    sender: int = 0,
    round: int = 0,
) -> UpdateClassification:
    """ALMG iff measured accuracy >= previous global accuracy - t_acc."""
    if t_acc < 0:
        raise ValueError("accuracy tolerance must be non-negative")
    if len(eval_set) == 0:
        raise FlError("cannot classify against an empty evaluation set")
    measured = eval_set.measure(candidate, sender, round)
    verdict = ALMG if measured >= prev_global_acc - t_acc else ULMG
    return UpdateClassification(
        verdict=verdict,
        measured_accuracy=measured,
        reference_accuracy=prev_global_acc,
    )


# ---------------------------------------------------------------------------
# Credit-gated transmission
# ---------------------------------------------------------------------------

def may_transmit(node: int, round: int, cr: float, cfg) -> bool:
    """Whether a node may send this round given its credit score.

    cfg provides `threshold` and `kappa`. At or above the threshold a node
    always transmits; below it, it transmits only every kappa rounds
    (kappa = 0 disables gating entirely).
    """
    if cfg.kappa < 0:
        raise ValueError("kappa must be non-negative")
    if cr >= cfg.threshold or cfg.kappa == 0:
        return True
    return round % cfg.kappa == 0


# ---------------------------------------------------------------------------
# Digest check + classification over a whole round
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VerifiedUpdate:
    sender: int
    params: ModelParams
    classification: UpdateClassification


@dataclass(frozen=True)
class RejectedUpdate:
    sender: int
    reason: str


def verify_and_collect(
    updates: Iterable[tuple[int, ModelParams]],
    commitments,
    round: int,
    prev_global_acc: float,
    t_acc: float,
    eval_set: Evaluator,
) -> tuple[list[VerifiedUpdate], list[VerifiedUpdate], list[RejectedUpdate]]:
    """Partition received updates into (ALMG, ULMG, rejected).

    commitments is anything with lookup_commitment(sender, round); the
    runner passes the mempool, since commitments are packaged into a block
    only at the end of the round being verified.
    """
    almg: list[VerifiedUpdate] = []
    ulmg: list[VerifiedUpdate] = []
    rejected: list[RejectedUpdate] = []
    for sender, params in updates:
        committed = commitments.lookup_commitment(sender, round)
        if committed is None:
            rejected.append(RejectedUpdate(sender, "no-commitment"))
            continue
        if committed != hash_digest(canonical_serialize(params)):
            rejected.append(RejectedUpdate(sender, "digest-mismatch"))
            continue
        cls = classify_update(
            params, prev_global_acc, t_acc, eval_set, sender=sender, round=round
        )
        bucket = almg if cls.verdict == ALMG else ulmg
        bucket.append(VerifiedUpdate(sender, params, cls))
    return almg, ulmg, rejected
