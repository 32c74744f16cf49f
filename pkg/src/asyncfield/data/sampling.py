"""Frame subsampling."""
from __future__ import annotations

import numpy as np


def sample_equidistant(video, n: int) -> np.ndarray:
    """``n`` frame indices evenly spaced over [first, last], snapped to existing frames.

    ``video`` is a ``VideoRecord`` or a sorted sequence of frame indices.
    Snapping picks the nearest frame (ties to the earlier one); duplicates
    are dropped keeping order, so short videos can yield fewer than ``n``.
    """
    frames = np.asarray(getattr(video, "frame_indices", video), dtype=np.int64)
    if frames.size == 0:
        raise ValueError("video has no frames")
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        targets = np.array([float(frames[0])])
    else:
        targets = np.linspace(frames[0], frames[-1], n)
    hi = np.clip(np.searchsorted(frames, targets, side="left"), 0, frames.size - 1)
    lo = np.clip(hi - 1, 0, frames.size - 1)
    pick = np.where(np.abs(frames[lo] - targets) <= np.abs(frames[hi] - targets), lo, hi)
    _, first = np.unique(pick, return_index=True)
    return frames[pick[np.sort(first)]]


def rows_of(video, frame_indices) -> np.ndarray:
    """Row positions of the given frame indices inside ``video``."""
    rows = np.searchsorted(video.frame_indices, frame_indices)
    if np.any(video.frame_indices[np.minimum(rows, video.n_frames - 1)] != frame_indices):
        raise ValueError("frame index not present in video")
    return rows
