"""Triplet losses over embedding batches, standard and prototypical.

Both losses mine one triplet per anchor(-positive) with the semi-hard rule
and return the mean hinge together with its analytic gradient with respect
to the batch embeddings. In the prototypical loss the positive and the
negative are class centroids computed from the batch itself, so the
gradient also flows back into every member of those classes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import DegenerateBatch, ShapeMismatch

SEMI_HARD = "semi_hard"
ALL_VALID = "all_valid"


@dataclass(frozen=True)
class TripletConfig:
    margin: float = 1.0
    mining: str = SEMI_HARD
    distance_epsilon: float = 1e-12

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError("margin must be positive")
        if self.mining not in (SEMI_HARD, ALL_VALID):
            raise ValueError(f"unknown mining strategy {self.mining!r}")


@dataclass(frozen=True)
class EmbeddingBatch:
    embeddings: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.embeddings, dtype=np.float64)
        labels = np.asarray(self.labels)
        if e.ndim != 2 or e.shape[0] < 2 or e.shape[1] < 1:
            raise ShapeMismatch(f"embeddings must be B x d with B >= 2, d >= 1; got {e.shape}")
        if labels.shape != (e.shape[0],):
            raise ShapeMismatch("one label per embedding row required")
        if not np.all(np.isfinite(e)):
            raise ValueError("embeddings must be finite")
        object.__setattr__(self, "embeddings", e)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.embeddings.shape[0]


@dataclass(frozen=True)
class PrototypeSet:
    class_ids: list
    prototypes: np.ndarray
    delta: np.ndarray
    assignment: np.ndarray  # class index of every batch row


@dataclass(frozen=True)
class TripletSet:
    """Mined triplets.

    ``kind`` is ``"samples"`` when positives/negatives index batch rows and
    ``"prototypes"`` when they index rows of a :class:`PrototypeSet`.
    """

    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    d_ap: np.ndarray
    d_an: np.ndarray
    kind: str

    def __len__(self):
        return self.anchors.shape[0]

    def as_tuples(self):
        return list(zip(self.anchors.tolist(), self.positives.tolist(), self.negatives.tolist()))


@dataclass(frozen=True)
class LossResult:
    loss: float
    grad: np.ndarray
    active_count: int
    triplets: TripletSet


def pairwise_distances(A, B) -> np.ndarray:
    """Exact Euclidean distances between the rows of ``A`` and ``B``."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise ShapeMismatch(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return _kernels.pairwise_distances(A, B)


def hinge_triplet(d_ap: float, d_an: float, margin: float) -> float:
    return max(0.0, d_ap + margin - d_an)


def encode_labels(labels: Sequence):
    """Class ids in first-appearance order and the class index of every row."""
    index = {}
    codes = np.empty(len(labels), dtype=np.int64)
    for j, lab in enumerate(np.asarray(labels).tolist()):
        codes[j] = index.setdefault(lab, len(index))
    return list(index), codes


def compute_prototypes(batch: EmbeddingBatch) -> PrototypeSet:
    class_ids, codes = encode_labels(batch.labels)
    B = len(batch)
    counts = np.bincount(codes, minlength=len(class_ids))
    delta = np.zeros((len(class_ids), B))
    delta[codes, np.arange(B)] = 1.0 / counts[codes]
    # sum-then-divide in row order; equals delta @ E up to rounding and keeps
    # distance ties reproducible against a plain per-class mean
    sums = np.zeros((len(class_ids), batch.embeddings.shape[1]))
    np.add.at(sums, codes, batch.embeddings)
    return PrototypeSet(class_ids, sums / counts[:, None], delta, codes)


def _triplets(anchors, d_ap, d_cand, valid, positives, cfg, kind):
    if cfg.mining == SEMI_HARD:
        neg = _kernels.select_semihard(d_ap, d_cand, valid, cfg.margin)
        rows = np.arange(len(anchors))
    else:
        rows, neg = np.nonzero(valid)
    return TripletSet(
        anchors=anchors[rows],
        positives=positives[rows],
        negatives=neg.astype(np.int64),
        d_ap=d_ap[rows],
        d_an=d_cand[rows, neg],
        kind=kind,
    )


def mine_semihard_standard(batch: EmbeddingBatch, cfg: TripletConfig = TripletConfig()) -> TripletSet:
    """One negative sample for every ordered anchor-positive pair of the batch."""
    class_ids, codes = encode_labels(batch.labels)
    if len(class_ids) < 2:
        raise DegenerateBatch("batch needs at least two classes")
    same = codes[:, None] == codes[None, :]
    np.fill_diagonal(same, False)
    anchors, positives = np.nonzero(same)
    if anchors.size == 0:
        raise DegenerateBatch("no class in the batch has two samples")
    D = pairwise_distances(batch.embeddings, batch.embeddings)
    d_cand = D[anchors]
    valid = codes[None, :] != codes[anchors][:, None]
    return _triplets(anchors, D[anchors, positives], d_cand, valid, positives, cfg, "samples")


def mine_semihard_prototypical(
    batch: EmbeddingBatch, protos: PrototypeSet, cfg: TripletConfig = TripletConfig()
) -> TripletSet:
    """One negative prototype for every anchor; the positive is the anchor's own prototype."""
    n_classes = len(protos.class_ids)
    if n_classes < 2:
        raise DegenerateBatch("batch needs at least two classes")
    codes = protos.assignment
    anchors = np.arange(len(batch), dtype=np.int64)
    D = pairwise_distances(batch.embeddings, protos.prototypes)
    valid = np.arange(n_classes)[None, :] != codes[:, None]
    return _triplets(anchors, D[anchors, codes], D, valid, codes, cfg, "prototypes")


def _hinge_mean(trip: TripletSet, margin: float) -> float:
    return float(np.maximum(0.0, trip.d_ap + margin - trip.d_an).mean())


def loss_standard(batch: EmbeddingBatch, cfg: TripletConfig = TripletConfig()) -> LossResult:
    trip = mine_semihard_standard(batch, cfg)
    E = batch.embeddings
    g_a, g_p, active = _kernels.triplet_grad(
        E, E, trip.anchors, trip.positives, trip.negatives,
        trip.d_ap, trip.d_an, cfg.margin, cfg.distance_epsilon,
    )
    grad = (g_a + g_p) / len(trip)
    return LossResult(_hinge_mean(trip, cfg.margin), grad, int(active), trip)


def loss_prototypical(batch: EmbeddingBatch, cfg: TripletConfig = TripletConfig()) -> LossResult:
    protos = compute_prototypes(batch)
    trip = mine_semihard_prototypical(batch, protos, cfg)
    g_a, g_proto, active = _kernels.triplet_grad(
        batch.embeddings, protos.prototypes, trip.anchors, trip.positives, trip.negatives,
        trip.d_ap, trip.d_an, cfg.margin, cfg.distance_epsilon,
    )
    # prototypes = delta @ E, so their gradient reaches E through delta^T
    grad = (g_a + protos.delta.T @ g_proto) / len(trip)
    return LossResult(_hinge_mean(trip, cfg.margin), grad, int(active), trip)


LOSSES = {"standard": loss_standard, "prototypical": loss_prototypical}
