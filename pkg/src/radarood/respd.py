"""Sliding-window accumulation of consecutive range-doppler images (RESPD).

Breathing moves the chest a few millimetres, far below what a single frame's
doppler resolution can see.  Summing a window of consecutive RDIs (50 frames at a
50 ms frame period spans one breathing cycle's worth of micro-motion) accumulates
that energy into a stable blob, which is what the reconstruction network trains on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import RangeDopplerImage
from .errors import DataError, ShapeError


@dataclass(frozen=True)
class FrameWindowConfig:
    """Sliding-window geometry. ``recompute_interval`` bounds running-sum drift."""

    window_size: int = 50
    stride: int = 1
    recompute_interval: int = 4096

    def __post_init__(self) -> None:
        if self.window_size < 1:
            raise ValueError(f"window_size must be >= 1, got {self.window_size}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.recompute_interval < 1:
            raise ValueError("recompute_interval must be >= 1")


@dataclass
class RdiSequence:
    """Ordered stack of equally shaped RDIs: frames [n, H, W], frame_indices [n]."""

    frames: np.ndarray
    frame_indices: np.ndarray

    def __post_init__(self) -> None:
        if self.frames.ndim != 3:
            raise ShapeError(f"frames must be [n, H, W], got shape {self.frames.shape}")
        if len(self.frames) == 0:
            raise ValueError("RdiSequence must hold at least one frame")
        if len(self.frame_indices) != len(self.frames):
            raise ShapeError("frame_indices length must match frames")

    @classmethod
    def from_images(cls, images: list[RangeDopplerImage]) -> "RdiSequence":
        if not images:
            raise ValueError("RdiSequence must hold at least one frame")
        return cls(
            frames=np.stack([im.data for im in images]),
            frame_indices=np.asarray([im.frame_index for im in images], dtype=np.int64),
        )

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i: int) -> RangeDopplerImage:
        return RangeDopplerImage(data=self.frames[i], frame_index=int(self.frame_indices[i]))


def respd_transform(seq: RdiSequence, cfg: FrameWindowConfig) -> RdiSequence:
    """Windowed sum over consecutive frames, written onto each window's first frame.

    Output frame i is the elementwise sum of input frames [i, i + window_size), the
    window then slides by ``stride``.  Maintained as a running sum with a periodic
    full re-summation so float drift stays bounded; O(n_windows * pixels) overall.
    """
    w = cfg.window_size
    n = len(seq)
    if n < w:
        raise ValueError(
            f"sequence of {n} frames is shorter than window_size={w}; "
            f"need at least {w} frames"
        )
    starts = range(0, n - w + 1, cfg.stride)
    frames = seq.frames.astype(np.float64, copy=False)
    out = np.empty((len(starts), *frames.shape[1:]), dtype=np.float64)

    acc = frames[0:w].sum(axis=0)
    prev_start = 0
    for k, start in enumerate(starts):
        if k > 0 and k % cfg.recompute_interval == 0:
            acc = frames[start : start + w].sum(axis=0)
        elif start != prev_start:
            acc = acc + frames[prev_start + w : start + w].sum(axis=0)
            acc -= frames[prev_start:start].sum(axis=0)
        out[k] = acc
        prev_start = start

    return RdiSequence(
        frames=out,
        frame_indices=seq.frame_indices[list(starts)].copy(),
    )


class StreamingWindowSum:
    """Streaming counterpart of respd_transform for live frame-by-frame use.

    Push frames one at a time; once the window is full every push yields the sum
    of the last ``window_size`` frames (the window then slides by one).  Matches
    respd_transform output to within running-sum drift, which a periodic full
    re-summation keeps bounded.
    """

    def __init__(self, cfg: FrameWindowConfig):
        if cfg.stride != 1:
            raise ValueError("streaming window sums only support stride 1")
        self.cfg = cfg
        self._window: list[np.ndarray] = []
        self._acc: np.ndarray | None = None
        self._emitted = 0

    def push(self, frame: np.ndarray) -> np.ndarray | None:
        frame = frame.astype(np.float64, copy=False)
        self._window.append(frame)
        if self._acc is None:
            self._acc = np.zeros_like(frame)
        self._acc = self._acc + frame
        if len(self._window) < self.cfg.window_size:
            return None
        if len(self._window) > self.cfg.window_size:
            oldest = self._window.pop(0)
            self._acc = self._acc - oldest
        self._emitted += 1
        if self._emitted % self.cfg.recompute_interval == 0:
            self._acc = np.sum(self._window, axis=0)
        return self._acc.copy()

    def reset(self) -> None:
        self._window.clear()
        self._acc = None
        self._emitted = 0


def normalize_unit(img: RangeDopplerImage) -> RangeDopplerImage:
    """Scale a non-negative image into [0, 1] by its max; all-zero stays all-zero."""
    data = img.data
    if not np.isfinite(data).all():
        raise DataError(f"frame {img.frame_index} contains non-finite values")
    if (data < 0).any():
        raise DataError(f"frame {img.frame_index} contains negative magnitudes")
    peak = data.max()
    if peak > 0:
        data = data / peak
    else:
        data = np.zeros_like(data)
    return RangeDopplerImage(data=data, frame_index=img.frame_index)


def normalize_unit_frames(frames: np.ndarray) -> np.ndarray:
    """Per-image max normalization over a stack [n, H, W]."""
    if not np.isfinite(frames).all():
        raise DataError("frame stack contains non-finite values")
    if (frames < 0).any():
        raise DataError("frame stack contains negative magnitudes")
    peaks = frames.max(axis=(1, 2), keepdims=True)
    return np.divide(frames, peaks, out=np.zeros_like(frames, dtype=np.float64), where=peaks > 0)
