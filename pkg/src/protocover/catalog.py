"""Track/work catalogs, cover-count filtering, query splits and synthetic data."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CatalogParseError, DuplicateTrack

HEADER = ["track_id", "work_id", "path"]


@dataclass(frozen=True)
class Track:
    track_id: str
    work_id: str
    path: str = ""


@dataclass(frozen=True)
class Catalog:
    tracks: Tuple[Track, ...]
    works: Dict[str, Tuple[str, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tracks = tuple(self.tracks)
        works: Dict[str, List[str]] = {}
        seen = set()
        for t in tracks:
            if t.track_id in seen:
                raise DuplicateTrack(t.track_id)
            seen.add(t.track_id)
            works.setdefault(t.work_id, []).append(t.track_id)
        object.__setattr__(self, "tracks", tracks)
        object.__setattr__(self, "works", {w: tuple(m) for w, m in works.items()})

    def __len__(self):
        return len(self.tracks)

    @property
    def track_ids(self) -> List[str]:
        return [t.track_id for t in self.tracks]

    @property
    def work_ids(self) -> List[str]:
        return [t.work_id for t in self.tracks]

    def covers_per_work(self) -> float:
        return len(self.tracks) / len(self.works) if self.works else 0.0


def filter_by_cover_count(c: Catalog, min_covers: int = 1, max_covers: Optional[int] = None) -> Catalog:
    """Keep the works whose member count lies in ``[min_covers, max_covers]``."""
    hi = math.inf if max_covers is None else max_covers
    if min_covers > hi:
        raise ValueError("min_covers exceeds max_covers")
    keep = {w for w, members in c.works.items() if min_covers <= len(members) <= hi}
    return Catalog(tuple(t for t in c.tracks if t.work_id in keep))


def query_reference_split(c: Catalog, rng: np.random.Generator) -> Tuple[List[str], Catalog]:
    """Draw one query track per work; the whole catalog stays the reference set."""
    queries = [members[rng.integers(len(members))] for members in c.works.values()]
    return queries, c


@dataclass(frozen=True)
class SyntheticSpec:
    n_works: int = 200
    cover_weights: Tuple[float, float, float] = (1.0, 1.0, 1.0)  # for 2, 3, 4 covers
    feature_dim: int = 32
    work_separation: float = 1.0
    cover_noise: float = 0.1
    transposition_max: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.n_works < 2:
            raise ValueError("n_works must be >= 2")
        if self.cover_noise < 0 or self.work_separation < 0:
            raise ValueError("noise and separation must be non-negative")
        if len(self.cover_weights) != 3 or min(self.cover_weights) < 0 or sum(self.cover_weights) <= 0:
            raise ValueError("cover_weights needs three non-negative weights")
        if self.transposition_max < 0 or self.feature_dim < 1:
            raise ValueError("invalid transposition_max or feature_dim")


FEATURE_FILE = "features.emb"


def generate_synthetic(spec: SyntheticSpec) -> Tuple[Catalog, np.ndarray]:
    """Seeded catalog of works with 2-4 noisy, circularly shifted covers each.

    Each work gets a Gaussian archetype with standard deviation
    ``work_separation``; a cover rolls it by a uniform shift in
    ``[-transposition_max, transposition_max]`` and adds Gaussian noise.
    Track paths point at rows of :data:`FEATURE_FILE`.
    """
    rng = np.random.default_rng(spec.seed)
    w = np.asarray(spec.cover_weights, dtype=np.float64)
    counts = rng.choice([2, 3, 4], size=spec.n_works, p=w / w.sum())
    tracks, rows = [], []
    wdig = len(str(spec.n_works - 1))
    tdig = len(str(int(counts.sum()) - 1))
    for i, n_covers in enumerate(counts):
        archetype = rng.normal(0.0, spec.work_separation, spec.feature_dim)
        for _ in range(n_covers):
            shift = int(rng.integers(-spec.transposition_max, spec.transposition_max + 1))
            noise = rng.normal(0.0, spec.cover_noise, spec.feature_dim)
            row = len(rows)
            rows.append(np.roll(archetype, shift) + noise)
            tracks.append(Track(f"t{row:0{tdig}d}", f"w{i:0{wdig}d}", f"{FEATURE_FILE}#{row}"))
    return Catalog(tuple(tracks)), np.array(rows)


def save_catalog(c: Catalog, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(HEADER)
        for t in c.tracks:
            writer.writerow([t.track_id, t.work_id, t.path])


def load_catalog(path) -> Catalog:
    path = Path(path)
    tracks: List[Track] = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != HEADER:
            raise CatalogParseError(path, 1, f"expected header {','.join(HEADER)}")
        for row in reader:
            line = reader.line_num
            if len(row) != 3:
                raise CatalogParseError(path, line, f"expected 3 fields, got {len(row)}")
            track_id, work_id, locator = row
            if not track_id or not work_id:
                raise CatalogParseError(path, line, "empty track_id or work_id")
            if track_id in seen:
                raise CatalogParseError(path, line, f"duplicate track id {track_id!r}")
            seen.add(track_id)
            tracks.append(Track(track_id, work_id, locator))
    return Catalog(tuple(tracks))


def catalog_from_ids(track_ids: Sequence[str], work_ids: Sequence[str]) -> Catalog:
    return Catalog(tuple(Track(t, w) for t, w in zip(track_ids, work_ids)))
