"""Closed-form gradients of the frame log-likelihood.

All functions return d l / d table for gradient *ascent*.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..inference import IncomingMessages, _softmax, object_marginal
from ..model import LabelSpace, TermWeights


@dataclass
class GradientBundle:
    d_op: np.ndarray
    d_ap: np.ndarray
    d_os: np.ndarray
    d_coap: np.ndarray
    d_xi: np.ndarray
    d_mu: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        for name in ("d_op", "d_ap", "d_os", "d_coap", "d_xi", "d_mu"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise FloatingPointError(f"non-finite {name} at frame {self.frame_index}")

    @classmethod
    def zeros(cls, space: LabelSpace, frame_index: int = 0) -> "GradientBundle":
        O, A, S, M = space.n_object, space.n_action, space.n_scene, space.n_intent
        return cls(np.zeros((O, 3)), np.zeros((A, 3)), np.zeros((O, S)), np.zeros(space.n_configs),
                   np.zeros((O, M)), np.zeros((O, O)), frame_index)

    def table_grads(self) -> dict:
        return {"op": self.d_op, "ap": self.d_ap, "os": self.d_os, "coap": self.d_coap,
                "xi": self.d_xi}


def _truth_index(space: LabelSpace, truth) -> int:
    if isinstance(truth, (int, np.integer)):
        k = int(truth)
        if not 0 <= k < space.support_size:
            raise ValueError(f"support index {k} out of range")
        return k
    return space.index_of(truth)


def grad_joint(space: LabelSpace, q, truth) -> np.ndarray:
    """d l / d phi_X over the support: onehot(truth) - q."""
    g = -np.asarray(q, dtype=float)
    g[_truth_index(space, truth)] += 1.0
    return g


def project_support(space: LabelSpace, g, weights: TermWeights | None = None) -> dict:
    """Chain a support-indexed gradient into the four semantic sub-tables."""
    w = weights or TermWeights()
    sup = space.support
    b, o, a, p, s = sup[:, 5], sup[:, 1], sup[:, 2], sup[:, 3], sup[:, 4]
    O, A, S = space.n_object, space.n_action, space.n_scene
    op = np.bincount(o * 3 + p, weights=g, minlength=O * 3).reshape(O, 3)
    ap = np.bincount(a * 3 + p, weights=g, minlength=A * 3).reshape(A, 3)
    os_ = np.bincount(o * S + s, weights=g, minlength=O * S).reshape(O, S)
    coap = np.bincount(b, weights=g, minlength=space.n_configs)
    return {"op": w.op * op, "ap": w.ap * ap, "os": w.os * os_, "coap": w.coap * coap}


def grad_semantic(space: LabelSpace, q, truth, weights: TermWeights | None = None) -> dict:
    """Per-sub-table gradients; each entry is (truth reads it) - (Q mass reading it), times its weight."""
    return project_support(space, grad_joint(space, q, truth), weights)


def grad_frame_intent(space: LabelSpace, h_star_in, h_star_self, q, q_intent, truth) -> np.ndarray:
    """[O, M]: truth-conditioned intent posterior on the truth row minus Q_obj x Q_I."""
    o_star = space.support[_truth_index(space, truth), 1]
    p = _softmax(np.asarray(h_star_in, dtype=float) + np.asarray(h_star_self, dtype=float))
    g = -np.outer(object_marginal(space, np.asarray(q, dtype=float)), q_intent)
    g[o_star] += p
    return g


def grad_frame_intent_joint(space: LabelSpace, h_star_total, p_obj_intent, truth) -> np.ndarray:
    """Same gradient with an explicit object/intent joint replacing Q_obj x Q_I."""
    o_star = space.support[_truth_index(space, truth), 1]
    g = -np.array(p_obj_intent, dtype=float)
    g[o_star] += _softmax(h_star_total)
    return g


def grad_mu(space: LabelSpace, inc: IncomingMessages, q, truth) -> np.ndarray:
    """[O, O] gradient of one frame's copy of mu (accumulate into the shared table)."""
    O = space.n_object
    o_star = space.support[_truth_index(space, truth), 1]
    qo = object_marginal(space, np.asarray(q, dtype=float))
    e_after = np.outer(qo, inc.ka_in)
    e_before = np.outer(inc.kb_in, qo)
    return grad_mu_from_expectations(O, o_star, inc.ka_star_in, inc.kb_star_in, e_after, e_before)


def grad_mu_from_expectations(n_object: int, o_star: int, ka_star, kb_star, e_after, e_before
                              ) -> np.ndarray:
    g = -(np.asarray(e_after, dtype=float) + np.asarray(e_before, dtype=float))
    g[o_star, :] += ka_star
    g[:, o_star] += kb_star
    return g


def frame_gradients(space: LabelSpace, q, q_intent, inc: IncomingMessages, fi, truth,
                    weights: TermWeights | None = None, frame_index: int = 0) -> GradientBundle:
    """All three gradient families for one frame from its local marginals and incoming messages."""
    k = _truth_index(space, truth)
    sem = grad_semantic(space, q, k, weights)
    h_self = np.asarray(fi, dtype=float)[space.support[k, 1]]
    d_xi = grad_frame_intent(space, inc.h_star_in, h_self, q, q_intent, k)
    d_mu = grad_mu(space, inc, q, k)
    return GradientBundle(sem["op"], sem["ap"], sem["os"], sem["coap"], d_xi, d_mu, frame_index)
