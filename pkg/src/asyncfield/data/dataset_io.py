"""Canonical dataset file: JSON lines.

Line 1 is a header::

    {"format": "asyncfield-dataset", "version": 1, "label_space": {...},
     "fingerprint": "...", "feature_dim": F, "n_videos": N, "meta": {...}}

Each further line is one video::

    {"video_id": "...", "split": "train", "meta": {...},
     "frames": [[frame_index, timestamp, [f_1, ..., f_F], [c, o, a, p, s] | null], ...]}

Keys are sorted and floats use the shortest round-tripping repr, so
``dumps(loads(text)) == text`` for any file this module wrote.
"""
from __future__ import annotations

import json

import numpy as np

from ..model import LabelSpace
from .records import UNLABELED, Dataset, VideoRecord

FORMAT = "asyncfield-dataset"
VERSION = 1


class DatasetFormatError(ValueError):
    pass


def _line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def space_to_json(space: LabelSpace) -> dict:
    d = space.to_config()
    d["seen_config"] = [list(c) for c in d["seen_config"]]
    return d


def space_from_json(d: dict) -> LabelSpace:
    d = dict(d)
    d["seen_config"] = [tuple(c) for c in d["seen_config"]]
    return LabelSpace.from_config(d)


def dumps(ds: Dataset) -> str:
    space = ds.space
    out = [_line({"format": FORMAT, "version": VERSION, "label_space": space_to_json(space),
                  "fingerprint": space.fingerprint(), "feature_dim": ds.feature_dim,
                  "n_videos": len(ds.videos), "meta": ds.meta})]
    for v in ds.videos:
        frames = []
        for t in range(v.n_frames):
            k = int(v.labels[t])
            lab = None if k == UNLABELED else list(space.assignment(k))
            frames.append([int(v.frame_indices[t]), float(v.timestamps[t]),
                           [float(x) for x in v.features[t]], lab])
        out.append(_line({"video_id": v.video_id, "split": v.split, "meta": v.meta,
                          "frames": frames}))
    return "".join(out)


def loads(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError("empty dataset file")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"line 1: {exc}") from None
    if head.get("format") != FORMAT or head.get("version") != VERSION:
        raise DatasetFormatError("line 1: not an asyncfield dataset header (format/version)")
    space = space_from_json(head["label_space"])
    if space.fingerprint() != head["fingerprint"]:
        raise DatasetFormatError("line 1: label space fingerprint mismatch")
    videos = []
    for n, raw in enumerate(lines[1:], 2):
        try:
            rec = json.loads(raw)
            frames = rec["frames"]
            labels = [UNLABELED if f[3] is None else space.index_of(f[3]) for f in frames]
            videos.append(VideoRecord(
                rec["video_id"], [f[0] for f in frames], [f[1] for f in frames],
                np.array([f[2] for f in frames], dtype=float).reshape(len(frames), -1),
                labels, rec["split"], rec.get("meta", {})))
        except (json.JSONDecodeError, KeyError, IndexError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"line {n}: {exc}") from None
    if len(videos) != head["n_videos"]:
        raise DatasetFormatError(f"header declares {head['n_videos']} videos, found {len(videos)}")
    return Dataset(space, videos, head["feature_dim"], head.get("meta", {}))


def save(ds: Dataset, path) -> None:
    from ..learning.checkpoint import atomic_write

    atomic_write(path, dumps(ds))


def load(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
