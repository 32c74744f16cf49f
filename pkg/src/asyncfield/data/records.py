"""Video and dataset containers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..model import FrameAssignment, LabelSpace

UNLABELED = -1


@dataclass
class VideoRecord:
    """One video: per-frame features plus optional labels.

    ``labels`` holds support indices (``LabelSpace.index_of``) with
    ``UNLABELED`` for frames without ground truth.
    """

    video_id: str
    frame_indices: np.ndarray
    timestamps: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frame_indices = np.asarray(self.frame_indices, dtype=np.int64)
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        T = self.frame_indices.shape[0]
        if T == 0:
            raise ValueError(f"video {self.video_id!r} has no frames")
        if np.any(np.diff(self.frame_indices) <= 0):
            raise ValueError(f"video {self.video_id!r}: frame indices must be strictly increasing")
        if self.timestamps.shape != (T,) or self.labels.shape != (T,) or self.features.shape[0] != T:
            raise ValueError(f"video {self.video_id!r}: per-frame arrays disagree on length")
        if not np.all(np.isfinite(self.features)):
            raise ValueError(f"video {self.video_id!r}: non-finite features")

    @property
    def n_frames(self) -> int:
        return self.frame_indices.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def labeled_rows(self) -> np.ndarray:
        return np.flatnonzero(self.labels != UNLABELED)

    def assignments(self, space: LabelSpace) -> list[FrameAssignment | None]:
        return [None if k == UNLABELED else space.assignment(int(k)) for k in self.labels]

    def subset(self, rows) -> "VideoRecord":
        rows = np.asarray(rows, dtype=np.int64)
        return VideoRecord(self.video_id, self.frame_indices[rows], self.timestamps[rows],
                           self.features[rows], self.labels[rows], self.split, dict(self.meta))


@dataclass
class Dataset:
    space: LabelSpace
    videos: list
    feature_dim: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = set()
        for v in self.videos:
            if v.video_id in ids:
                raise ValueError(f"duplicate video id {v.video_id!r}")
            ids.add(v.video_id)
            if v.feature_dim != self.feature_dim:
                raise ValueError(f"video {v.video_id!r} has feature dim {v.feature_dim}, "
                                 f"dataset declares {self.feature_dim}")
            bad = (v.labels < UNLABELED) | (v.labels >= self.space.support_size)
            if np.any(bad):
                raise ValueError(f"video {v.video_id!r} has labels outside the support")

    def split(self, name: str) -> list:
        return [v for v in self.videos if v.split == name]

    @property
    def train(self) -> list:
        return self.split("train")

    @property
    def test(self) -> list:
        return self.split("test")
