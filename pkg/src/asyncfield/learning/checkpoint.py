"""Checkpoint files: one JSON document per model.

Layout (``format`` = ``asyncfield-checkpoint``, ``version`` = 1)::

    {"format", "version", "label_space": {...}, "fingerprint",
     "variant", "feature_dim", "weight_decay",
     "kernel": {"sigma", "kernel_weight"},
     "term_weights": {"op", "ap", "os", "coap"},
     "mu": [[...]],
     "heads": {name: {"W": [[...]], "b": [...], "frozen": bool}}}

Floats are written with ``repr`` precision so a load/save cycle is exact.
"""
from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from ..model import KernelConfig, LabelSpace, TermWeights
from .fieldmodel import FieldModel
from .provider import LinearProvider

FORMAT = "asyncfield-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def to_dict(model: FieldModel) -> dict:
    sp = model.space.to_config()
    sp["seen_config"] = [list(c) for c in sp["seen_config"]]
    return {
        "format": FORMAT,
        "version": VERSION,
        "label_space": sp,
        "fingerprint": model.space.fingerprint(),
        "variant": model.variant,
        "feature_dim": model.provider.feature_dim,
        "weight_decay": model.provider.weight_decay,
        "kernel": {"sigma": model.kernel_cfg.sigma, "kernel_weight": model.kernel_cfg.kernel_weight},
        "term_weights": {"op": model.term_weights.op, "ap": model.term_weights.ap,
                         "os": model.term_weights.os, "coap": model.term_weights.coap},
        "mu": model.mu.tolist(),
        "heads": {n: {"W": s["W"].tolist(), "b": s["b"].tolist(), "frozen": s["frozen"]}
                  for n, s in model.provider.state().items()},
    }


def from_dict(doc: dict) -> FieldModel:
    if doc.get("format") != FORMAT:
        raise CheckpointError("not an asyncfield checkpoint")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    sp = dict(doc["label_space"])
    sp["seen_config"] = [tuple(c) for c in sp["seen_config"]]
    space = LabelSpace.from_config(sp)
    if space.fingerprint() != doc["fingerprint"]:
        raise CheckpointError("label space fingerprint does not match its contents")
    prov = LinearProvider(space, doc["feature_dim"], variant=doc["variant"],
                          weight_decay=doc["weight_decay"])
    prov.load_state(doc["heads"])
    mu = np.asarray(doc["mu"], dtype=float)
    if mu.shape != (space.n_object, space.n_object):
        raise CheckpointError("mu has the wrong shape")
    return FieldModel(space, prov, mu, KernelConfig(**doc["kernel"]), TermWeights(**doc["term_weights"]))


def dumps(model: FieldModel) -> str:
    return json.dumps(to_dict(model), sort_keys=True) + "\n"


def loads(text: str) -> FieldModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from None
    return from_dict(doc)


def atomic_write(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(model: FieldModel, path) -> None:
    atomic_write(path, dumps(model))


def load(path) -> FieldModel:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
