"""Label space, potential tables and the joint score of the temporal field.

The field has per-frame variables X_t = (category, object, action,
progress, scene) and one video-level intent I.  Probabilities follow
P(X, I) proportional to exp(joint_score(X, I)).

Frame assignments are restricted to the support ``seen_configs x scenes``;
support index ``k = config_index * n_scene + scene``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from . import textconfig

# Default kernel width: 6.25 s at 24 fps.
DEFAULT_FPS = 24.0
DEFAULT_SIGMA_FRAMES = 6.25 * DEFAULT_FPS


class FrameAssignment(NamedTuple):
    category: int
    object: int
    action: int
    progress: int
    scene: int


@dataclass(frozen=True)
class LabelSpace:
    n_category: int
    n_object: int
    n_action: int
    n_progress: int
    n_scene: int
    n_intent: int
    seen_configs: tuple

    def __post_init__(self):
        counts = dict(n_category=self.n_category, n_object=self.n_object,
                      n_action=self.n_action, n_progress=self.n_progress,
                      n_scene=self.n_scene, n_intent=self.n_intent)
        for name, v in counts.items():
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.n_progress != 3:
            raise ValueError(f"n_progress must be 3 (before/middle/end), got {self.n_progress}")
        configs = tuple(tuple(int(v) for v in c) for c in self.seen_configs)
        if not configs:
            raise ValueError("seen_configs must be non-empty")
        limits = (self.n_category, self.n_object, self.n_action, self.n_progress)
        for c in configs:
            if len(c) != 4 or any(not 0 <= v < n for v, n in zip(c, limits)):
                raise ValueError(f"seen config {c} outside the label domains")
        if len(set(configs)) != len(configs):
            raise ValueError("seen_configs contains duplicates")
        object.__setattr__(self, "seen_configs", configs)

    @cached_property
    def config_index(self) -> dict:
        return {c: b for b, c in enumerate(self.seen_configs)}

    @property
    def n_configs(self) -> int:
        return len(self.seen_configs)

    @property
    def support_size(self) -> int:
        return self.n_configs * self.n_scene

    @cached_property
    def support(self) -> np.ndarray:
        """``[K, 6]`` int array of (category, object, action, progress, scene, config)."""
        rows = [(*c, s, b) for b, c in enumerate(self.seen_configs) for s in range(self.n_scene)]
        arr = np.array(rows, dtype=np.int64)
        arr.setflags(write=False)
        return arr

    @cached_property
    def sup_obj(self) -> np.ndarray:
        return np.ascontiguousarray(self.support[:, 1])

    def index_of(self, x) -> int:
        x = FrameAssignment(*x)
        b = self.config_index.get((x.category, x.object, x.action, x.progress))
        if b is None:
            raise ValueError(f"assignment {tuple(x)} is not a seen configuration")
        if not 0 <= x.scene < self.n_scene:
            raise ValueError(f"scene {x.scene} out of range")
        return b * self.n_scene + x.scene

    def assignment(self, k: int) -> FrameAssignment:
        return FrameAssignment(*(int(v) for v in self.support[k, :5]))

    def category_matrix(self) -> np.ndarray:
        """``[K, n_category]`` 0/1 incidence, used to marginalise Q onto categories."""
        m = np.zeros((self.support_size, self.n_category))
        m[np.arange(self.support_size), self.support[:, 0]] = 1.0
        return m

    def to_config(self) -> dict:
        return {
            "n_category": self.n_category,
            "n_object": self.n_object,
            "n_action": self.n_action,
            "n_progress": self.n_progress,
            "n_scene": self.n_scene,
            "n_intent": self.n_intent,
            "seen_config": list(self.seen_configs),
        }

    @classmethod
    def from_config(cls, entries: dict) -> "LabelSpace":
        try:
            return cls(
                n_category=entries["n_category"],
                n_object=entries["n_object"],
                n_action=entries["n_action"],
                n_progress=entries["n_progress"],
                n_scene=entries["n_scene"],
                n_intent=entries["n_intent"],
                seen_configs=tuple(entries["seen_config"]),
            )
        except KeyError as e:
            raise ValueError(f"label space config missing key {e.args[0]!r}") from None

    def dumps(self) -> str:
        return textconfig.dump(self.to_config(), header="asyncfield label space")

    @classmethod
    def loads(cls, text: str) -> "LabelSpace":
        return cls.from_config(textconfig.parse(text))

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_config(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def desk_space() -> LabelSpace:
    """Desk-scale preset: 6 categories x 3 progress = 18 seen configurations."""
    configs = [(c, c % 5, c % 4, p) for c in range(6) for p in range(3)]
    return LabelSpace(6, 5, 4, 3, 3, 3, tuple(configs))


def charades_space() -> LabelSpace:
    """Charades cardinalities (157/38/33/3/15, 30 intents).

    The real seen-configuration set comes from training annotations, which
    are not bundled; a deterministic one-(object, action)-per-category
    placeholder stands in for it.
    """
    configs = [(c, c % 38, c % 33, p) for c in range(157) for p in range(3)]
    return LabelSpace(157, 38, 33, 3, 15, 30, tuple(configs))


@dataclass(frozen=True)
class TermWeights:
    op: float = 1.0
    ap: float = 1.0
    os: float = 1.0
    coap: float = 1.0

    def as_array(self) -> np.ndarray:
        return np.array([self.op, self.ap, self.os, self.coap])


@dataclass
class SemanticPotentials:
    """Semantic tables of one frame: phi(O,P) + phi(A,P) + phi(O,S) + phi(C,O,A,P)."""

    space: LabelSpace
    phi_op: np.ndarray
    phi_ap: np.ndarray
    phi_os: np.ndarray
    phi_coap: np.ndarray
    term_weights: TermWeights = field(default_factory=TermWeights)

    def __post_init__(self):
        s = self.space
        shapes = dict(phi_op=(s.n_object, s.n_progress), phi_ap=(s.n_action, s.n_progress),
                      phi_os=(s.n_object, s.n_scene), phi_coap=(s.n_configs,))
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            setattr(self, name, arr)

    @classmethod
    def zeros(cls, space: LabelSpace, term_weights: TermWeights | None = None):
        return cls(space, np.zeros((space.n_object, 3)), np.zeros((space.n_action, 3)),
                   np.zeros((space.n_object, space.n_scene)), np.zeros(space.n_configs),
                   term_weights or TermWeights())

    def scores(self) -> np.ndarray:
        """Semantic potential of every support element, shape ``[K]``."""
        return semantic_scores(self.space, self.phi_op[None], self.phi_ap[None],
                               self.phi_os[None], self.phi_coap[None], self.term_weights)[0]


def semantic_scores(space, op, ap, os, coap, weights: TermWeights) -> np.ndarray:
    """Vectorised semantic potentials for stacked tables; returns ``[T, K]``."""
    sup = space.support
    c, o, a, p, s, b = (sup[:, n] for n in range(6))
    return (weights.op * op[:, o, p] + weights.ap * ap[:, a, p]
            + weights.os * os[:, o, s] + weights.coap * coap[:, b])


def semantic_potential(pots: SemanticPotentials, x) -> float:
    x = FrameAssignment(*x)
    b = pots.space.config_index.get((x.category, x.object, x.action, x.progress))
    if b is None:
        raise ValueError(f"assignment {tuple(x)} is not a seen configuration")
    if not 0 <= x.scene < pots.space.n_scene:
        raise ValueError(f"scene {x.scene} out of range")
    w = pots.term_weights
    return float(w.op * pots.phi_op[x.object, x.progress]
                 + w.ap * pots.phi_ap[x.action, x.progress]
                 + w.os * pots.phi_os[x.object, x.scene]
                 + w.coap * pots.phi_coap[b])


@dataclass(frozen=True)
class KernelConfig:
    sigma: float = DEFAULT_SIGMA_FRAMES
    kernel_weight: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


def kernel(i, j, cfg: KernelConfig) -> float:
    """Gaussian temporal kernel exp(-(j-i)^2 / (2 sigma^2)); frame-index units."""
    d = float(j) - float(i)
    return float(np.exp(-(d * d) / (2.0 * cfg.sigma * cfg.sigma)))


def kernel_matrix(positions, cfg: KernelConfig) -> np.ndarray:
    """``[T, T]`` matrix of ``kernel_weight * k(i, j)``."""
    pos = np.asarray(positions, dtype=float)
    d = pos[:, None] - pos[None, :]
    return cfg.kernel_weight * np.exp(-(d * d) / (2.0 * cfg.sigma * cfg.sigma))


def pairwise_potential(mu, x_i, x_j, i, j, cfg: KernelConfig) -> float:
    """mu[object(x_i), object(x_j)] * w * k(i, j).  No self-edges."""
    if i == j:
        raise ValueError("pairwise potential is undefined for i == j (no self-edges)")
    oi = FrameAssignment(*x_i).object
    oj = FrameAssignment(*x_j).object
    return float(mu[oi, oj] * cfg.kernel_weight * kernel(i, j, cfg))


def joint_score(pots: Sequence[SemanticPotentials], fi, mu, cfg: KernelConfig, xs, intent: int,
                positions=None) -> float:
    """Unnormalised log-probability of ``(xs, intent)``.

    Sum over frames of the semantic and frame-intent potentials plus, for
    every frame i and every other frame j, frame i's copy of the temporal
    potential.  mu is read with the earlier frame first, so each unordered
    pair contributes twice.
    """
    xs = [FrameAssignment(*x) for x in xs]
    T = len(xs)
    if T == 0:
        raise ValueError("xs must be non-empty")
    if len(pots) != T or len(fi) != T:
        raise ValueError(f"got {T} assignments but {len(pots)} semantic and {len(fi)} intent tables")
    pos = np.arange(T) if positions is None else np.asarray(positions)
    total = 0.0
    for i, x in enumerate(xs):
        total += semantic_potential(pots[i], x)
        total += float(np.asarray(fi[i])[x.object, intent])
    for i in range(T):
        for j in range(T):
            if i == j:
                continue
            a, b = (i, j) if pos[i] < pos[j] else (j, i)
            total += pairwise_potential(mu, xs[a], xs[b], pos[a], pos[b], cfg)
    return total


@dataclass
class FieldInstance:
    """All potentials of one video, stacked per frame.

    ``mu`` is either the shared ``[O, O]`` table or per-frame copies
    ``[T, O, O]`` (the latter only for gradient checks).
    """

    space: LabelSpace
    op: np.ndarray
    ap: np.ndarray
    os: np.ndarray
    coap: np.ndarray
    fi: np.ndarray
    mu: np.ndarray
    kernel_cfg: KernelConfig = field(default_factory=KernelConfig)
    positions: np.ndarray | None = None
    term_weights: TermWeights = field(default_factory=TermWeights)

    def __post_init__(self):
        T = self.op.shape[0]
        if self.positions is None:
            self.positions = np.arange(T, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        if np.any(np.diff(self.positions) <= 0):
            raise ValueError("frame positions must be strictly increasing")
        for name in ("ap", "os", "coap", "fi"):
            if getattr(self, name).shape[0] != T:
                raise ValueError(f"{name} has {getattr(self, name).shape[0]} frames, expected {T}")

    @property
    def n_frames(self) -> int:
        return self.op.shape[0]

    @classmethod
    def zeros(cls, space: LabelSpace, T: int, cfg: KernelConfig | None = None, positions=None):
        O, A, S, M = space.n_object, space.n_action, space.n_scene, space.n_intent
        return cls(space, np.zeros((T, O, 3)), np.zeros((T, A, 3)), np.zeros((T, O, S)),
                   np.zeros((T, space.n_configs)), np.zeros((T, O, M)), np.zeros((O, O)),
                   cfg or KernelConfig(), positions)

    @classmethod
    def random(cls, space: LabelSpace, T: int, rng: np.random.Generator, scale=1.0,
               cfg: KernelConfig | None = None, per_frame_mu=False):
        O, A, S, M = space.n_object, space.n_action, space.n_scene, space.n_intent
        mu_shape = (T, O, O) if per_frame_mu else (O, O)
        return cls(space, scale * rng.normal(size=(T, O, 3)), scale * rng.normal(size=(T, A, 3)),
                   scale * rng.normal(size=(T, O, S)), scale * rng.normal(size=(T, space.n_configs)),
                   scale * rng.normal(size=(T, O, M)), scale * rng.normal(size=mu_shape),
                   cfg or KernelConfig(sigma=2.0))

    def copy(self) -> "FieldInstance":
        return FieldInstance(self.space, self.op.copy(), self.ap.copy(), self.os.copy(),
                             self.coap.copy(), self.fi.copy(), self.mu.copy(), self.kernel_cfg,
                             self.positions.copy(), self.term_weights)

    def theta(self) -> np.ndarray:
        return np.ascontiguousarray(
            semantic_scores(self.space, self.op, self.ap, self.os, self.coap, self.term_weights))

    def kmat(self) -> np.ndarray:
        return kernel_matrix(self.positions, self.kernel_cfg)

    def mu_per_frame(self) -> np.ndarray:
        if self.mu.ndim == 3:
            return np.ascontiguousarray(self.mu)
        return np.ascontiguousarray(np.broadcast_to(self.mu, (self.n_frames,) + self.mu.shape))

    def shared_mu(self) -> np.ndarray:
        if self.mu.ndim == 3:
            raise ValueError("field carries per-frame mu copies; no single shared table")
        return self.mu

    def frame_potentials(self, t: int) -> SemanticPotentials:
        return SemanticPotentials(self.space, self.op[t], self.ap[t], self.os[t], self.coap[t],
                                  self.term_weights)

    def score(self, xs, intent: int) -> float:
        """joint_score for support indices ``xs``; handles per-frame mu copies."""
        xs = np.asarray(xs, dtype=np.int64)
        th = self.theta()
        obj = self.space.sup_obj[xs]
        T = self.n_frames
        s = float(th[np.arange(T), xs].sum() + self.fi[np.arange(T), obj, intent].sum())
        km = self.kmat()
        mu = self.mu_per_frame()
        for i in range(T):
            for j in range(i + 1, T):
                s += (mu[i, obj[i], obj[j]] + mu[j, obj[i], obj[j]]) * km[i, j]
        return s

