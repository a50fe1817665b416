"""Pitch-salience preprocessing into fixed-shape encoder inputs.

A salience matrix is time x pitch. Preprocessing trims the pitch axis to a
window of octaves centred on the salience-weighted mean pitch, averages
bins down to one per semitone, then crops and pools the time axis to a
fixed number of rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyInput, ShapeMismatch, ZeroSalience

# 180 s of audio maps to 5120 frames, i.e. 5 frames per encoder row at 1024 rows
DEFAULT_FPS = 5120.0 / 180.0


@dataclass(frozen=True)
class SalienceMatrix:
    data: np.ndarray
    bins_per_semitone: int = 5
    frames_per_second: float = DEFAULT_FPS

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ShapeMismatch(f"salience must be 2-D, got shape {data.shape}")
        if self.bins_per_semitone < 1:
            raise ValueError("bins_per_semitone must be positive")
        if not self.frames_per_second > 0:
            raise ValueError("frames_per_second must be positive")
        if data.shape[1] % self.bins_per_semitone:
            raise ShapeMismatch(
                f"{data.shape[1]} bins is not a multiple of {self.bins_per_semitone} bins/semitone"
            )
        if not np.all(np.isfinite(data)) or np.any(data < 0):
            raise ValueError("salience values must be finite and non-negative")
        object.__setattr__(self, "data", data)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def bins(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.frames / self.frames_per_second


@dataclass(frozen=True)
class PreprocessConfig:
    n_octaves: int = 5
    target_frames: int = 1024
    max_seconds: float = 180.0
    freq_pool_factor: Optional[int] = None  # None: pool down to one bin per semitone

    def __post_init__(self):
        if self.n_octaves < 1 or self.target_frames < 1 or not self.max_seconds > 0:
            raise ValueError(f"invalid preprocessing config {self}")
        if self.freq_pool_factor is not None and self.freq_pool_factor < 1:
            raise ValueError("freq_pool_factor must be positive")


@dataclass(frozen=True)
class InputFeature:
    data: np.ndarray

    @property
    def shape(self):
        return self.data.shape


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def weighted_mean_pitch(m: SalienceMatrix) -> float:
    """Salience-weighted mean bin index over the whole matrix."""
    col_mass = m.data.sum(axis=0)
    total = col_mass.sum()
    if not total > 0:
        raise ZeroSalience("salience matrix has no positive entry")
    return float(np.dot(np.arange(m.bins, dtype=np.float64), col_mass) / total)


def trim_octaves(m: SalienceMatrix, center_bin: float, n_octaves: int) -> SalienceMatrix:
    """Cut a window of ``n_octaves`` octaves around ``center_bin``.

    Output column j holds input column ``round(center_bin) - W/2 + j`` where
    W is the window width in bins; columns outside the input are zero.
    """
    if n_octaves < 1:
        raise ValueError("n_octaves must be >= 1")
    width = n_octaves * 12 * m.bins_per_semitone
    start = _round_half_up(center_bin) - width // 2
    out = np.zeros((m.frames, width))
    lo, hi = max(start, 0), min(start + width, m.bins)
    if hi > lo:
        out[:, lo - start:hi - start] = m.data[:, lo:hi]
    return replace(m, data=out)


def downscale_frequency(m: SalienceMatrix, factor: int) -> SalienceMatrix:
    if factor < 1:
        raise ValueError("factor must be positive")
    if m.bins % factor or m.bins_per_semitone % factor:
        raise ShapeMismatch(
            f"cannot pool {m.bins} bins at {m.bins_per_semitone} bins/semitone by {factor}"
        )
    pooled = m.data.reshape(m.frames, m.bins // factor, factor).mean(axis=2)
    return replace(m, data=pooled, bins_per_semitone=m.bins_per_semitone // factor)


def retained_frames(m: SalienceMatrix, max_seconds: float) -> int:
    # the epsilon absorbs float error in products like 180 * (5120 / 180)
    limit = int(math.floor(max_seconds * m.frames_per_second + 1e-9))
    return min(m.frames, limit)


def fit_time(m: SalienceMatrix, cfg: PreprocessConfig) -> SalienceMatrix:
    """Keep the leading ``max_seconds`` and bring the time axis to ``target_frames`` rows.

    Longer inputs are mean-pooled over windows of ``ceil(n / target_frames)``
    frames (a short last window averages only the frames it has); the result
    is zero-padded at the end.
    """
    if m.frames == 0:
        raise EmptyInput("salience matrix has no frames")
    n = retained_frames(m, cfg.max_seconds)
    if n == 0:
        raise EmptyInput("max_seconds keeps no frame")
    data = m.data[:n]
    window = -(-n // cfg.target_frames)
    if window > 1:
        full = n // window
        pooled = data[:full * window].reshape(full, window, m.bins).mean(axis=1)
        if n % window:
            pooled = np.vstack([pooled, data[full * window:].mean(axis=0, keepdims=True)])
        data = pooled
    out = np.zeros((cfg.target_frames, m.bins))
    out[:data.shape[0]] = data
    return replace(m, data=out, frames_per_second=m.frames_per_second / window)


def preprocess(m: SalienceMatrix, cfg: PreprocessConfig = PreprocessConfig()) -> InputFeature:
    center = weighted_mean_pitch(m)
    trimmed = trim_octaves(m, center, cfg.n_octaves)
    factor = cfg.freq_pool_factor or m.bins_per_semitone
    pooled = downscale_frequency(trimmed, factor)
    return InputFeature(fit_time(pooled, cfg).data)


def pitch_histogram(matrices: Sequence[SalienceMatrix]) -> np.ndarray:
    """Total salience per semitone, summed over all matrices and frames."""
    if not matrices:
        raise EmptyInput("no salience matrices given")
    bps, bins = matrices[0].bins_per_semitone, matrices[0].bins
    hist = np.zeros(bins // bps)
    for m in matrices:
        if m.bins_per_semitone != bps or m.bins != bins:
            raise ShapeMismatch("all matrices must share bins and bins_per_semitone")
        hist += m.data.sum(axis=0).reshape(-1, bps).sum(axis=1)
    return hist
