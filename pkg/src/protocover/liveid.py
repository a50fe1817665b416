"""Live-concert song identification.

The concert is cut into long overlapping windows, each window is embedded
and matched to its single nearest reference track, and a reference is kept
as a candidate only if it wins several consecutive windows.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .encoder import EncoderParams, encoder_forward
from .errors import EmptyStore, TooShort
from .pitchrep import PreprocessConfig, SalienceMatrix, preprocess
from .retrieval import EmbeddingStore, best_reference


@dataclass(frozen=True)
class WindowingConfig:
    window_seconds: float = 180.0
    hop_seconds: float = 30.0
    min_consecutive: int = 3

    def __post_init__(self):
        if not (0 < self.hop_seconds <= self.window_seconds):
            raise ValueError("need 0 < hop_seconds <= window_seconds")
        if self.min_consecutive < 1:
            raise ValueError("min_consecutive must be >= 1")


@dataclass(frozen=True)
class FrameMatch:
    frame_index: int
    start_second: float
    best_ref_id: str
    best_distance: float


@dataclass(frozen=True)
class CandidateRun:
    ref_id: str
    first_frame: int
    run_length: int
    best_distance: float


@dataclass(frozen=True)
class Candidate:
    ref_id: str
    best_distance: float
    run_length: int


@dataclass
class LiveIdResult:
    candidates: List[Candidate]
    runs: List[CandidateRun]
    matches: List[FrameMatch]
    timeline: np.ndarray  # frames x store tracks
    start_seconds: np.ndarray

    @property
    def candidate_ids(self) -> List[str]:
        return [c.ref_id for c in self.candidates]


def window_count(duration: float, cfg: WindowingConfig) -> int:
    if duration + 1e-9 < cfg.window_seconds:
        raise TooShort(f"{duration:.3f} s concert is shorter than one {cfg.window_seconds} s window")
    return int(math.floor((duration - cfg.window_seconds) / cfg.hop_seconds + 1e-9)) + 1


def window_concert(concert: SalienceMatrix, cfg: WindowingConfig = WindowingConfig()) -> List[SalienceMatrix]:
    """Window i covers seconds ``[i * hop, i * hop + window)``."""
    n = window_count(concert.duration, cfg)
    fps = concert.frames_per_second
    width = int(round(cfg.window_seconds * fps))
    out = []
    for i in range(n):
        start = int(round(i * cfg.hop_seconds * fps))
        out.append(SalienceMatrix(concert.data[start:start + width], concert.bins_per_semitone, fps))
    return out


def _match(frame_embeddings, store, hop_seconds):
    if len(store) == 0:
        raise EmptyStore("reference store is empty")
    idx, D = best_reference(frame_embeddings, store)
    matches = [
        FrameMatch(i, i * hop_seconds, store.track_ids[j], float(D[i, j]))
        for i, j in enumerate(idx.tolist())
    ]
    return matches, D


def match_frames(frame_embeddings, store: EmbeddingStore, hop_seconds: float = 30.0) -> List[FrameMatch]:
    """Nearest reference track of every frame embedding (ties to the smallest id)."""
    return _match(frame_embeddings, store, hop_seconds)[0]


def filter_runs(matches: Sequence[FrameMatch], min_consecutive: int = 3) -> List[CandidateRun]:
    """Maximal runs of one best reference lasting at least ``min_consecutive`` frames."""
    runs = []
    i = 0
    while i < len(matches):
        j = i
        while j + 1 < len(matches) and matches[j + 1].best_ref_id == matches[i].best_ref_id:
            j += 1
        if j - i + 1 >= min_consecutive:
            best = min(m.best_distance for m in matches[i:j + 1])
            runs.append(CandidateRun(matches[i].best_ref_id, matches[i].frame_index, j - i + 1, best))
        i = j + 1
    return runs


def rank_candidates(runs: Sequence[CandidateRun]) -> List[Candidate]:
    """One candidate per reference: closest distance first, then longest run, then id."""
    merged = {}
    for r in runs:
        if r.ref_id in merged:
            d, n = merged[r.ref_id]
            merged[r.ref_id] = (min(d, r.best_distance), max(n, r.run_length))
        else:
            merged[r.ref_id] = (r.best_distance, r.run_length)
    order = sorted(merged.items(), key=lambda kv: (kv[1][0], -kv[1][1], kv[0]))
    return [Candidate(ref, d, n) for ref, (d, n) in order]


def embed_windows(windows: Sequence[SalienceMatrix], params: EncoderParams,
                  cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    feats = np.stack([preprocess(w, cfg).data.ravel() for w in windows])
    return encoder_forward(params, feats)


def identify_embeddings(frame_embeddings, store: EmbeddingStore,
                        cfg: WindowingConfig = WindowingConfig()) -> LiveIdResult:
    """Match, filter and rank already-embedded concert windows."""
    matches, D = _match(frame_embeddings, store, cfg.hop_seconds)
    runs = filter_runs(matches, cfg.min_consecutive)
    starts = np.arange(len(matches)) * cfg.hop_seconds
    return LiveIdResult(rank_candidates(runs), runs, matches, D, starts)


def identify(concert: SalienceMatrix, store: EmbeddingStore, params: EncoderParams,
             cfg: WindowingConfig = WindowingConfig(),
             preprocess_cfg: PreprocessConfig = PreprocessConfig()) -> LiveIdResult:
    windows = window_concert(concert, cfg)
    return identify_embeddings(embed_windows(windows, params, preprocess_cfg), store, cfg)


def timeline_rows(result: LiveIdResult, store: EmbeddingStore,
                  ground_truth: Optional[Sequence[str]] = None) -> List[str]:
    """Candidates in rank order, then ground-truth ids that were not found."""
    rows = result.candidate_ids
    seen = set(rows)
    for t in sorted(set(ground_truth or ())):
        if t not in seen and t in store.row_of:
            rows.append(t)
    return rows


def write_timeline(result: LiveIdResult, store: EmbeddingStore, path,
                   ground_truth: Optional[Sequence[str]] = None) -> None:
    rows = timeline_rows(result, store, ground_truth)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["ref_id"] + [repr(float(s)) for s in result.start_seconds])
        for ref in rows:
            col = store.row_of[ref]
            w.writerow([ref] + [repr(float(x)) for x in result.timeline[:, col]])


def write_candidates(result: LiveIdResult, path, ground_truth: Optional[Sequence[str]] = None) -> None:
    truth = set(ground_truth or ())
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["rank", "ref_id", "best_distance", "run_length", "correct"])
        for rank, c in enumerate(result.candidates, start=1):
            w.writerow([rank, c.ref_id, repr(c.best_distance), c.run_length, int(c.ref_id in truth)])
