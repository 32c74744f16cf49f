"""Linear stand-in for the network that predicts per-frame potentials.

Each head maps a feature vector ``f`` to a flattened table via
``E @ (W f + b)``.  ``E`` is the identity except for the factorised
(``no_structure``) variant, where a fixed 0/1 matrix expands per-variable
unaries into the configuration table.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import LabelSpace

HEADS = ("op", "ap", "os", "coap", "xi")
DEFAULT_WEIGHT_DECAY = 4e-4
VARIANTS = ("full", "no_pairwise", "no_intent", "semantic_only", "no_structure")


def table_shapes(space: LabelSpace) -> dict:
    O, A, S, M = space.n_object, space.n_action, space.n_scene, space.n_intent
    return {"op": (O, 3), "ap": (A, 3), "os": (O, S), "coap": (space.n_configs,), "xi": (O, M)}


def variant_flags(variant: str) -> dict:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    return {
        "pairwise": variant in ("full", "no_intent", "no_structure"),
        "intent": variant in ("full", "no_pairwise", "no_structure"),
        "structure": variant != "no_structure",
    }


def unary_expansions(space: LabelSpace) -> dict:
    """Expansion matrices that make coap = u_c + u_o + u_a + u_p and os = u_s."""
    C, O, A, S = space.n_category, space.n_object, space.n_action, space.n_scene
    cfg = np.array(space.seen_configs)
    e_coap = np.zeros((space.n_configs, C + O + A + 3))
    rows = np.arange(space.n_configs)
    for col, off in zip(range(4), (0, C, C + O, C + O + A)):
        e_coap[rows, off + cfg[:, col]] = 1.0
    e_os = np.zeros((O * S, S))
    for o in range(O):
        e_os[o * S + np.arange(S), np.arange(S)] = 1.0
    return {"coap": e_coap, "os": e_os}


@dataclass
class Head:
    W: np.ndarray            # [R, F]
    b: np.ndarray            # [R]
    expand: np.ndarray | None = None  # [D, R]
    frozen: bool = False     # frozen heads output exactly zero

    @property
    def out_dim(self) -> int:
        return self.W.shape[0] if self.expand is None else self.expand.shape[0]

    def forward(self, feats: np.ndarray) -> np.ndarray:
        if self.frozen:
            return np.zeros((feats.shape[0], self.out_dim))
        raw = feats @ self.W.T + self.b
        return raw if self.expand is None else raw @ self.expand.T

    def raw_grad(self, g_table: np.ndarray) -> np.ndarray:
        return g_table if self.expand is None else g_table @ self.expand


class LinearProvider:
    def __init__(self, space: LabelSpace, feature_dim: int, variant: str = "full",
                 weight_decay: float = DEFAULT_WEIGHT_DECAY, init_scale: float = 0.01,
                 intent_init: float = 0.1, seed: int = 0):
        flags = variant_flags(variant)
        self.space = space
        self.feature_dim = int(feature_dim)
        self.variant = variant
        self.weight_decay = float(weight_decay)
        self.shapes = table_shapes(space)
        rng = np.random.default_rng(seed)
        expand = {} if flags["structure"] else unary_expansions(space)
        self.heads: dict[str, Head] = {}
        for name in HEADS:
            D = int(np.prod(self.shapes[name]))
            E = expand.get(name)
            R = D if E is None else E.shape[1]
            frozen = (name == "xi" and not flags["intent"]) or \
                     (name in ("op", "ap") and not flags["structure"])
            W = np.zeros((R, self.feature_dim)) if frozen else \
                init_scale * rng.normal(size=(R, self.feature_dim))
            b = np.zeros(R)
            if name == "xi" and not frozen:
                b = intent_init * rng.normal(size=R)
            self.heads[name] = Head(W, b, E, frozen)

    # forward ---------------------------------------------------------------
    def tables(self, features) -> dict:
        """Stacked tables ``{name: [N, *shape]}`` for features ``[N, F]``."""
        feats = np.atleast_2d(np.asarray(features, dtype=float))
        if feats.shape[1] != self.feature_dim:
            raise ValueError(f"features have dim {feats.shape[1]}, provider expects {self.feature_dim}")
        return {name: h.forward(feats).reshape((feats.shape[0],) + self.shapes[name])
                for name, h in self.heads.items()}

    # backward --------------------------------------------------------------
    def backprop(self, table_grads: dict, features) -> dict:
        """Weight gradients for a batch of frames (summed), including weight decay.

        ``table_grads[name]`` is ``[N, *shape]`` (or ``[*shape]`` for a single
        frame).  Returns ``{name: (dW, db)}``; the frame-intent head also gets
        ``-weight_decay * (W, b)`` once per frame.
        """
        feats = np.atleast_2d(np.asarray(features, dtype=float))
        N = feats.shape[0]
        if feats.shape[1] != self.feature_dim:
            raise ValueError(f"features have dim {feats.shape[1]}, provider expects {self.feature_dim}")
        out = {}
        for name, head in self.heads.items():
            g = np.asarray(table_grads[name], dtype=float).reshape(N, -1)
            if g.shape[1] != head.out_dim:
                raise ValueError(f"gradient for head {name!r} has {g.shape[1]} entries, "
                                 f"expected {head.out_dim}")
            if head.frozen:
                out[name] = (np.zeros_like(head.W), np.zeros_like(head.b))
                continue
            graw = head.raw_grad(g)
            dW = graw.T @ feats
            db = graw.sum(axis=0)
            if name == "xi" and self.weight_decay:
                dW = dW - N * self.weight_decay * head.W
                db = db - N * self.weight_decay * head.b
            out[name] = (dW, db)
        return out

    def apply(self, grads: dict, lr: float) -> None:
        """Gradient ascent step."""
        for name, (dW, db) in grads.items():
            head = self.heads[name]
            if head.frozen:
                continue
            head.W += lr * dW
            head.b += lr * db

    # persistence -----------------------------------------------------------
    def state(self) -> dict:
        return {name: {"W": h.W, "b": h.b, "frozen": h.frozen} for name, h in self.heads.items()}

    def load_state(self, state: dict) -> None:
        for name, h in self.heads.items():
            s = state[name]
            W, b = np.asarray(s["W"], dtype=float), np.asarray(s["b"], dtype=float)
            if W.shape != h.W.shape or b.shape != h.b.shape:
                raise ValueError(f"head {name!r} shape mismatch in saved state")
            h.W, h.b, h.frozen = W.copy(), b.copy(), bool(s["frozen"])

    def copy(self) -> "LinearProvider":
        new = object.__new__(LinearProvider)
        new.__dict__.update(self.__dict__)
        new.heads = {n: Head(h.W.copy(), h.b.copy(), h.expand, h.frozen) for n, h in self.heads.items()}
        return new
