"""Exact lookup over a reference embedding store, by samples or by work prototypes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import DuplicateTrack, MissingSelfReference, ShapeMismatch
from .metric import pairwise_distances

SAMPLES = "samples"
CLASSES = "classes"


def _readonly(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _id_ranks(ids: Sequence[str]) -> np.ndarray:
    order = sorted(range(len(ids)), key=ids.__getitem__)
    ranks = np.empty(len(ids), dtype=np.int64)
    ranks[order] = np.arange(len(ids))
    return ranks


@dataclass(frozen=True)
class EmbeddingStore:
    embeddings: np.ndarray
    track_ids: tuple
    work_ids: tuple
    work_index: tuple  # distinct work ids, first-appearance order
    work_prototypes: np.ndarray
    members: np.ndarray = field(repr=False)  # work index of every track
    track_rank: np.ndarray = field(repr=False)
    work_rank: np.ndarray = field(repr=False)
    row_of: Dict[str, int] = field(repr=False, compare=False)

    def __len__(self):
        return len(self.track_ids)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


def build_store(embeddings, track_ids: Sequence[str], work_ids: Sequence[str]) -> EmbeddingStore:
    E = np.asarray(embeddings, dtype=np.float64)
    track_ids, work_ids = tuple(map(str, track_ids)), tuple(map(str, work_ids))
    if E.ndim != 2 or E.shape[0] != len(track_ids) or len(track_ids) != len(work_ids):
        raise ShapeMismatch("embeddings, track_ids and work_ids must have matching lengths")
    row_of: Dict[str, int] = {}
    for i, t in enumerate(track_ids):
        if t in row_of:
            raise DuplicateTrack(t)
        row_of[t] = i
    index: Dict[str, int] = {}
    members = np.array([index.setdefault(w, len(index)) for w in work_ids], dtype=np.int64)
    protos = np.zeros((len(index), E.shape[1]))
    np.add.at(protos, members, E)
    protos /= np.bincount(members, minlength=len(index))[:, None]
    work_index = tuple(index)
    members.setflags(write=False)
    return EmbeddingStore(
        embeddings=_readonly(E),
        track_ids=track_ids,
        work_ids=work_ids,
        work_index=work_index,
        work_prototypes=_readonly(protos),
        members=members,
        track_rank=_id_ranks(track_ids),
        work_rank=_id_ranks(work_index),
        row_of=row_of,
    )


@dataclass(frozen=True)
class RankedList:
    ids: List[str]
    distances: np.ndarray

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(zip(self.ids, self.distances.tolist()))


def _rank(dist: np.ndarray, id_rank: np.ndarray, ids, k: Optional[int]) -> RankedList:
    order = np.lexsort((id_rank, dist))
    order = order[np.isfinite(dist[order])]
    if k is not None:
        order = order[:k]
    return RankedList([ids[i] for i in order], dist[order])


def _check_query(q, store):
    q = np.asarray(q, dtype=np.float64).reshape(1, -1)
    if q.shape[1] != store.dim:
        raise ShapeMismatch(f"query dim {q.shape[1]} vs store dim {store.dim}")
    return q


def lookup_by_samples(query, store: EmbeddingStore, exclude_track: Optional[str] = None,
                      k: Optional[int] = None) -> RankedList:
    dist = pairwise_distances(_check_query(query, store), store.embeddings)[0]
    if exclude_track is not None and exclude_track in store.row_of:
        dist[store.row_of[exclude_track]] = np.inf
    return _rank(dist, store.track_rank, store.track_ids, k)


def prototypes_without(store: EmbeddingStore, track_id: str) -> np.ndarray:
    """Work prototypes recomputed with ``track_id`` left out of its own work.

    A work left empty gets a row of NaN (it cannot be ranked).
    """
    protos = np.array(store.work_prototypes)
    row = store.row_of[track_id]
    w = store.members[row]
    others = np.nonzero((store.members == w) & (np.arange(len(store)) != row))[0]
    protos[w] = store.embeddings[others].mean(axis=0) if others.size else np.nan
    return protos


def lookup_by_classes(query, store: EmbeddingStore, k: Optional[int] = None,
                      exclude_track: Optional[str] = None) -> RankedList:
    """Rank works by distance to their prototypes.

    By default prototypes include every member, the query's own track too.
    Passing ``exclude_track`` recomputes that track's work prototype without it.
    """
    protos = store.work_prototypes
    if exclude_track is not None:
        if exclude_track not in store.row_of:
            raise MissingSelfReference(exclude_track)
        protos = prototypes_without(store, exclude_track)
    dist = pairwise_distances(_check_query(query, store), protos)[0]
    dist[np.isnan(dist)] = np.inf
    return _rank(dist, store.work_rank, store.work_index, k)


def distance_matrix(queries, store: EmbeddingStore, mode: str = SAMPLES, exclude_self: bool = False,
                    query_track_ids: Optional[Sequence[str]] = None) -> np.ndarray:
    """Dense query x reference distances; excluded self pairs hold +inf."""
    Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if Q.shape[1] != store.dim:
        raise ShapeMismatch(f"query dim {Q.shape[1]} vs store dim {store.dim}")
    if mode == CLASSES:
        return pairwise_distances(Q, store.work_prototypes)
    if mode != SAMPLES:
        raise ValueError(f"unknown mode {mode!r}")
    D = pairwise_distances(Q, store.embeddings)
    if exclude_self:
        if query_track_ids is None or len(query_track_ids) != Q.shape[0]:
            raise MissingSelfReference("exclude_self needs one track id per query")
        for i, t in enumerate(query_track_ids):
            if t not in store.row_of:
                raise MissingSelfReference(t)
            D[i, store.row_of[t]] = np.inf
    return D


def rank_row(dist_row: np.ndarray, store: EmbeddingStore, mode: str = SAMPLES,
             k: Optional[int] = None) -> RankedList:
    """Turn one distance_matrix row into a ranked list (same tie rule as the lookups)."""
    if mode == SAMPLES:
        return _rank(np.asarray(dist_row, dtype=np.float64), store.track_rank, store.track_ids, k)
    return _rank(np.asarray(dist_row, dtype=np.float64), store.work_rank, store.work_index, k)


def best_reference(queries, store: EmbeddingStore):
    """Nearest reference row for every query (ties to the smallest track id)."""
    D = pairwise_distances(queries, store.embeddings)
    idx = _kernels.best_per_row(D, store.track_rank)
    return idx, D
