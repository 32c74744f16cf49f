"""Synthetic videos sampled from a known field.

The generating field shares one set of prior tables across frames, couples
frames to the intent through object clusters and to each other through a
structured ``mu``.  Features are noisy concatenated one-hot encodings of the
sampled labels.  Without a per-video offset the exact posterior given
features is again a field of the same family; ``generating_model`` returns
it as a ``FieldModel``.  A nonzero ``video_offset`` adds one Gaussian shift
per video to all of its frames, which correlates frames within a video and
makes ``generating_model`` an approximation.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import kernels
from ..kernels import numpy_impl
from ..model import (DEFAULT_FPS, KernelConfig, LabelSpace, TermWeights, kernel_matrix,
                     semantic_scores)
from ..oracle import DEFAULT_MAX_STATES
from .records import Dataset, VideoRecord

FEATURE_DECIMALS = 6


@dataclass
class GeneratorConfig:
    n_train: int = 200
    n_test: int = 50
    n_frames: int = 25
    frame_stride: int = 1
    fps: float = DEFAULT_FPS
    sigma: float = 4.0              # generating kernel, frame-index units
    semantic_scale: float = 0.5
    intent_strength: float = 1.5    # phi_XI bonus for objects in the intent's cluster
    mu_diag: float = 0.3            # same object in both frames
    mu_order: float = 0.15          # earlier object precedes a later one of the same cluster
    mu_cross: float = -0.1          # objects from different clusters
    snr: float = 1.0                # amplitude of the label encoding
    noise: float = 1.0              # feature noise standard deviation
    video_offset: float = 0.0       # std of the per-video feature shift
    distractor_dims: int = 4
    burn_in: int = 500
    thin: int = 10
    max_states: int = DEFAULT_MAX_STATES

    def __post_init__(self):
        for name in ("n_frames", "frame_stride", "burn_in", "thin", "max_states"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_train < 0 or self.n_test < 0 or self.n_train + self.n_test == 0:
            raise ValueError("need at least one video")
        if not (self.sigma > 0 and self.noise > 0 and self.fps > 0):
            raise ValueError("sigma, noise and fps must be > 0")
        if self.video_offset < 0:
            raise ValueError("video_offset must be >= 0")
        if self.distractor_dims < 0:
            raise ValueError("distractor_dims must be >= 0")

    @classmethod
    def from_entries(cls, entries: dict) -> "GeneratorConfig":
        unknown = set(entries) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown generator keys: {sorted(unknown)}")
        return cls(**entries)

    def to_entries(self) -> dict:
        return asdict(self)


def object_cluster(space: LabelSpace) -> np.ndarray:
    """Contiguous split of objects into ``n_intent`` clusters."""
    return np.arange(space.n_object) * space.n_intent // space.n_object


def true_tables(space: LabelSpace, cfg: GeneratorConfig, rng: np.random.Generator) -> dict:
    O, A, S, M = space.n_object, space.n_action, space.n_scene, space.n_intent
    cl = object_cluster(space)
    fi = np.where(cl[:, None] == np.arange(M)[None, :], cfg.intent_strength, 0.0)
    same = cl[:, None] == cl[None, :]
    ahead = np.arange(O)[:, None] < np.arange(O)[None, :]
    mu = np.where(same, np.where(ahead, cfg.mu_order, 0.0), cfg.mu_cross)
    mu[np.diag_indices(O)] = cfg.mu_diag
    sc = cfg.semantic_scale
    return {"op": sc * rng.normal(size=(O, 3)), "ap": sc * rng.normal(size=(A, 3)),
            "os": sc * rng.normal(size=(O, S)), "coap": sc * rng.normal(size=space.n_configs),
            "xi": fi, "mu": mu}


def encoding_matrix(space: LabelSpace, distractor_dims: int = 0) -> np.ndarray:
    """``[K, F]`` concatenated one-hot code of each support element."""
    C, O, A, S = space.n_category, space.n_object, space.n_action, space.n_scene
    sup = space.support
    offs = np.cumsum([0, C, O, A, 3])
    enc = np.zeros((space.support_size, C + O + A + 3 + S + distractor_dims))
    rows = np.arange(space.support_size)
    for col, off in zip(range(5), offs):
        enc[rows, off + sup[:, col]] = 1.0
    return enc


def _sample_enumerated(theta, fi, mu, sup_obj, kmat, n, rng):
    s = numpy_impl._score_tensor(theta, fi, np.ascontiguousarray(
        np.broadcast_to(mu, (theta.shape[0],) + mu.shape)), sup_obj, kmat)
    p = np.exp(s - s.max()).ravel()
    cdf = np.cumsum(p)
    flat = np.minimum(np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right"), p.size - 1)
    idx = np.unravel_index(flat, s.shape)
    return np.stack(idx[:-1], axis=1).astype(np.int64), idx[-1].astype(np.int64)


def sample_labels(space: LabelSpace, tables: dict, cfg: GeneratorConfig, n: int,
                  rng: np.random.Generator, method: str = "auto"):
    """Draw ``n`` (label sequence, intent) pairs from the generating prior.

    ``method`` is ``enumerate``, ``gibbs`` or ``auto`` (enumerate when the
    state count fits ``cfg.max_states``).  Each Gibbs video is its own chain
    started at a uniform draw, recorded after ``burn_in`` sweeps.
    """
    T = cfg.n_frames
    K = space.support_size
    theta1 = semantic_scores(space, tables["op"][None], tables["ap"][None], tables["os"][None],
                             tables["coap"][None], TermWeights())[0]
    theta = np.ascontiguousarray(np.broadcast_to(theta1, (T, K)))
    fi = np.ascontiguousarray(np.broadcast_to(tables["xi"], (T,) + tables["xi"].shape))
    mu = np.ascontiguousarray(tables["mu"])
    kmat = kernel_matrix(np.arange(T) * cfg.frame_stride, KernelConfig(sigma=cfg.sigma))
    n_states = K ** T * space.n_intent
    if method == "auto":
        method = "enumerate" if n_states <= cfg.max_states else "gibbs"
    if method == "enumerate":
        if n_states > cfg.max_states:
            raise ValueError(f"enumeration needs {n_states} states, budget is {cfg.max_states}")
        return _sample_enumerated(theta, fi, mu, space.sup_obj, kmat, n, rng)
    if method != "gibbs":
        raise ValueError(f"unknown sampling method {method!r}")
    xs = np.empty((n, T), dtype=np.int64)
    intents = np.empty(n, dtype=np.int64)
    for v in range(n):
        x0 = rng.integers(0, K, size=T)
        i0 = int(rng.integers(0, space.n_intent))
        u = rng.random((cfg.burn_in + 1, T + 1))
        x, i = kernels.gibbs_chain(theta, fi, mu, space.sup_obj, kmat, x0, i0, u,
                                   cfg.burn_in, cfg.thin, 1)
        xs[v], intents[v] = x[0], i[0]
    return xs, intents


def generating_model(space: LabelSpace, tables: dict, cfg: GeneratorConfig):
    """The exact posterior field given features, as a trainable-model object."""
    from ..learning.fieldmodel import FieldModel

    enc = encoding_matrix(space, cfg.distractor_dims)
    F = enc.shape[1]
    model = FieldModel.init(space, F, "full", KernelConfig(sigma=cfg.sigma), weight_decay=0.0)
    coef = cfg.snr / cfg.noise ** 2
    C, O, A, S = space.n_category, space.n_object, space.n_action, space.n_scene
    heads = model.provider.heads
    for h in heads.values():
        h.W[:] = 0.0
        h.b[:] = 0.0
    cfgs = np.array(space.seen_configs)
    offs = np.cumsum([0, C, O, A, 3])
    rows = np.arange(space.n_configs)
    for col in range(4):
        heads["coap"].W[rows, offs[col] + cfgs[:, col]] = coef
    for o in range(O):
        heads["os"].W[o * S + np.arange(S), offs[4] + np.arange(S)] = coef
    heads["op"].b[:] = tables["op"].ravel()
    heads["ap"].b[:] = tables["ap"].ravel()
    heads["os"].b[:] = tables["os"].ravel()
    heads["coap"].b[:] = tables["coap"]
    heads["xi"].b[:] = tables["xi"].ravel()
    model.mu[:] = tables["mu"]
    return model


def generate_synthetic(space: LabelSpace, cfg: GeneratorConfig | None = None, seed: int = 0,
                       method: str = "auto"):
    """Returns ``(dataset, generating_model)``; deterministic in ``seed``."""
    cfg = cfg or GeneratorConfig()
    rng = np.random.default_rng(seed)
    tables = true_tables(space, cfg, rng)
    n = cfg.n_train + cfg.n_test
    xs, intents = sample_labels(space, tables, cfg, n, rng, method)
    enc = encoding_matrix(space, cfg.distractor_dims)
    T = cfg.n_frames
    frames = np.arange(T, dtype=np.int64) * cfg.frame_stride
    videos = []
    width = len(str(n - 1))
    for v in range(n):
        feats = cfg.snr * enc[xs[v]] + cfg.noise * rng.normal(size=(T, enc.shape[1]))
        if cfg.video_offset > 0:
            feats += cfg.video_offset * rng.normal(size=enc.shape[1])
        videos.append(VideoRecord(
            video_id=f"syn{v:0{width}d}", frame_indices=frames, timestamps=frames / cfg.fps,
            features=np.round(feats, FEATURE_DECIMALS), labels=xs[v],
            split="train" if v < cfg.n_train else "test", meta={"intent": int(intents[v])}))
    ds = Dataset(space, videos, enc.shape[1],
                 meta={"generator": cfg.to_entries(), "seed": int(seed)})
    return ds, generating_model(space, tables, cfg)
